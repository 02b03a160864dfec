"""Dice expressions: parsing, deterministic rolling, and transcript-style formatting.

Grammar (case- and whitespace-insensitive)::

    expr  := term (("+" | "-") term)*
    term  := dice | integer
    dice  := [count] "d" sides ["kh" [n] | "kl" [n]]

Only +/- chaining is supported; a "-" may only precede an integer term
(negative die groups are rejected). A bare "dM" rolls one die; a bare
"kh"/"kl" keeps one die. Formatted rolls look like the strings Avrae posts
to chat, e.g. ``2d20kh1 (15, 12) + 1 = 16`` -- every raw face is shown,
including dropped ones.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union


class DiceError(Exception):
    """Base class for dice failures."""


class DiceSyntaxError(DiceError):
    """Malformed dice expression; carries the character position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class ForcedSequenceExhausted(DiceError):
    """A forced-face die source ran out of queued faces."""


@dataclass(frozen=True)
class KeepRule:
    mode: str  # "highest" or "lowest"
    n: int

    def __post_init__(self):
        if self.mode not in ("highest", "lowest"):
            raise ValueError(f"bad keep mode {self.mode!r}")
        if self.n < 1:
            raise ValueError("keep count must be >= 1")

    @property
    def suffix(self) -> str:
        return ("kh" if self.mode == "highest" else "kl") + str(self.n)


@dataclass(frozen=True)
class DieGroup:
    count: int
    sides: int
    keep: KeepRule | None = None

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("die count must be >= 1")
        if self.sides < 2:
            raise ValueError("die sides must be >= 2")
        if self.keep is not None and self.keep.n > self.count:
            raise ValueError("cannot keep more dice than rolled")

    @property
    def kept_count(self) -> int:
        return self.keep.n if self.keep else self.count


@dataclass(frozen=True)
class Constant:
    value: int  # signed


Term = Union[DieGroup, Constant]


@dataclass(frozen=True)
class DiceExpr:
    terms: tuple[Term, ...]

    @property
    def groups(self) -> tuple[DieGroup, ...]:
        return tuple(t for t in self.terms if isinstance(t, DieGroup))

    @property
    def constant_total(self) -> int:
        return sum(t.value for t in self.terms if isinstance(t, Constant))

    def min_total(self) -> int:
        return sum(g.kept_count for g in self.groups) + self.constant_total

    def max_total(self) -> int:
        return sum(g.kept_count * g.sides for g in self.groups) + self.constant_total


@dataclass(frozen=True)
class RollResult:
    expr: DiceExpr
    raw: tuple[tuple[int, ...], ...]   # faces per die group, in roll order
    kept: tuple[tuple[int, ...], ...]  # kept subset per group, in roll order
    total: int


class DieSource:
    """A stream of die faces. Subclasses record every face they hand out so a
    session can be replayed from its log without any RNG."""

    def __init__(self):
        self.consumed: list[int] = []

    def draw(self, sides: int) -> int:
        face = self._next_face(sides)
        self.consumed.append(face)
        return face

    def _next_face(self, sides: int) -> int:
        raise NotImplementedError


_MASK64 = (1 << 64) - 1


class SeededSource(DieSource):
    """Seeded pseudorandom faces using SplitMix64.

    SplitMix64 is fully specified by integer arithmetic, so identical seeds
    produce identical faces on every platform and Python version. Faces are
    drawn by rejection sampling to avoid modulo bias.
    """

    def __init__(self, seed: int):
        super().__init__()
        self.seed = seed
        self._state = seed & _MASK64

    def _next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def _next_face(self, sides: int) -> int:
        limit = ((1 << 64) // sides) * sides
        while True:
            v = self._next_u64()
            if v < limit:
                return 1 + v % sides


class ForcedSource(DieSource):
    """Replays a fixed queue of faces; raises when the queue runs dry."""

    def __init__(self, faces):
        super().__init__()
        self._queue = list(faces)
        self._pos = 0

    def _next_face(self, sides: int) -> int:
        if self._pos >= len(self._queue):
            raise ForcedSequenceExhausted(
                f"forced face queue exhausted after {self._pos} draws"
            )
        face = self._queue[self._pos]
        self._pos += 1
        if not 1 <= face <= sides:
            raise DiceError(f"forced face {face} out of range for d{sides}")
        return face

    @property
    def remaining(self) -> int:
        return len(self._queue) - self._pos


_TOKEN = re.compile(
    r"""
    (?P<dice>(?P<count>\d+)?[dD](?P<sides>\d+)(?:(?P<keep>[kK][hHlL])(?P<keepn>\d+)?)?)
    | (?P<int>\d+)
    | (?P<sign>[+-])
    """,
    re.VERBOSE,
)


def parse_dice(text: str) -> DiceExpr:
    """Parse a dice expression like ``2d20kh1 + 1`` into its structured form."""
    if not text or not text.strip():
        raise DiceSyntaxError("empty dice expression", 0)
    terms: list[Term] = []
    pos = 0
    sign = 1
    expect_term = True
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if not m:
            raise DiceSyntaxError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup is None:
            raise DiceSyntaxError(f"unexpected character {text[pos]!r}", pos)
        if m.group("sign"):
            if expect_term:
                raise DiceSyntaxError("expected a die or number", pos)
            sign = 1 if m.group("sign") == "+" else -1
            expect_term = True
        elif m.group("dice"):
            if not expect_term:
                raise DiceSyntaxError("expected '+' or '-'", pos)
            if sign < 0:
                raise DiceSyntaxError("cannot subtract a die group", pos)
            keep = None
            if m.group("keep"):
                mode = "highest" if m.group("keep").lower() == "kh" else "lowest"
                keep_n = int(m.group("keepn")) if m.group("keepn") else 1
                keep = KeepRule(mode, keep_n)
            count = int(m.group("count")) if m.group("count") else 1
            sides = int(m.group("sides"))
            try:
                terms.append(DieGroup(count, sides, keep))
            except ValueError as exc:
                raise DiceSyntaxError(str(exc), pos) from exc
            sign = 1
            expect_term = False
        else:
            if not expect_term:
                raise DiceSyntaxError("expected '+' or '-'", pos)
            terms.append(Constant(sign * int(m.group("int"))))
            sign = 1
            expect_term = False
        pos = m.end()
    if expect_term:
        raise DiceSyntaxError("expression ends with a dangling operator", n)
    return DiceExpr(tuple(terms))


def format_expr(expr: DiceExpr) -> str:
    """Canonical text for an expression; ``parse_dice(format_expr(e)) == e``."""
    parts: list[str] = []
    for i, term in enumerate(expr.terms):
        if isinstance(term, DieGroup):
            body = f"{term.count}d{term.sides}" + (term.keep.suffix if term.keep else "")
            parts.append(body if i == 0 else f"+ {body}")
        else:
            if i == 0:
                parts.append(str(term.value))
            elif term.value < 0:
                parts.append(f"- {-term.value}")
            else:
                parts.append(f"+ {term.value}")
    return " ".join(parts)


def roll(expr: DiceExpr, src: DieSource) -> RollResult:
    """Roll an expression, drawing faces left to right from ``src``."""
    raw: list[tuple[int, ...]] = []
    kept: list[tuple[int, ...]] = []
    total = 0
    for term in expr.terms:
        if isinstance(term, Constant):
            total += term.value
            continue
        faces = tuple(src.draw(term.sides) for _ in range(term.count))
        raw.append(faces)
        kept_faces = _apply_keep(faces, term.keep)
        kept.append(kept_faces)
        total += sum(kept_faces)
    return RollResult(expr=expr, raw=tuple(raw), kept=tuple(kept), total=total)


def _apply_keep(faces: tuple[int, ...], keep: KeepRule | None) -> tuple[int, ...]:
    if keep is None:
        return faces
    order = sorted(range(len(faces)), key=lambda i: faces[i], reverse=keep.mode == "highest")
    chosen = sorted(order[: keep.n])
    return tuple(faces[i] for i in chosen)


def format_roll(result: RollResult) -> str:
    """Format a roll the way combat transcripts show it:
    ``2d20kh1 (15, 12) + 1 = 16`` -- all raw faces listed, constants after."""
    parts: list[str] = []
    group_idx = 0
    for i, term in enumerate(result.expr.terms):
        if isinstance(term, DieGroup):
            body = f"{term.count}d{term.sides}" + (term.keep.suffix if term.keep else "")
            faces = ", ".join(str(f) for f in result.raw[group_idx])
            group_idx += 1
            piece = f"{body} ({faces})"
            parts.append(piece if i == 0 else f"+ {piece}")
        else:
            if i == 0:
                parts.append(str(term.value))
            elif term.value < 0:
                parts.append(f"- {-term.value}")
            else:
                parts.append(f"+ {term.value}")
    return " ".join(parts) + f" = {result.total}"


def roll_text(text: str, src: DieSource) -> RollResult:
    """Convenience: parse then roll."""
    return roll(parse_dice(text), src)
