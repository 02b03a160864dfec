"""Distill session logs into aligned training triples.

A triple pairs a block of commands (with their state changes) with the chat
around it: utterances before the block motivate it ("preceding"), utterances
after narrate it ("following"). Distillation runs three passes:

1. align       -- attach each message to its chronologically nearest state
                  change and drop utterances under five words;
2. authorship  -- keep only utterances by the command's author or the DM,
                  drop triples whose commands span multiple actors;
3. ooc         -- drop out-of-character narration from the "following" set
                  and strip parenthesized asides.

Also in here: the command-category statistics table.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterable, Optional

from .eventlog import Event

MIN_WORDS = 5


class ClassifierUnavailable(Exception):
    pass


@dataclass
class UtteranceLabel:
    label: str  # "IC" or "OOC"
    confidence: float = 1.0


@dataclass
class Utterance:
    author_id: str
    content: str
    seq: int
    timestamp: str

    def to_dict(self) -> dict:
        return {
            "author_id": self.author_id,
            "content": self.content,
            "seq": self.seq,
            "timestamp": self.timestamp,
        }

    @staticmethod
    def from_dict(d: dict) -> "Utterance":
        return Utterance(d["author_id"], d["content"], d["seq"], d["timestamp"])


@dataclass
class CommandRef:
    seq: int
    text: str
    author_id: str
    caster_id: str
    update_seq: Optional[int] = None  # seq of the combat_state_update

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "text": self.text,
            "author_id": self.author_id,
            "caster_id": self.caster_id,
            "update_seq": self.update_seq,
        }

    @staticmethod
    def from_dict(d: dict) -> "CommandRef":
        return CommandRef(d["seq"], d["text"], d["author_id"], d["caster_id"], d.get("update_seq"))


@dataclass
class Triple:
    combat_id: str
    command_events: list[CommandRef]
    preceding: list[Utterance]
    following: list[Utterance]
    command_author: str
    dm: str

    def to_dict(self) -> dict:
        return {
            "combat_id": self.combat_id,
            "commands": [c.to_dict() for c in self.command_events],
            "preceding": [u.to_dict() for u in self.preceding],
            "following": [u.to_dict() for u in self.following],
            "command_author": self.command_author,
            "dm": self.dm,
        }

    @staticmethod
    def from_dict(d: dict) -> "Triple":
        return Triple(
            combat_id=d["combat_id"],
            command_events=[CommandRef.from_dict(c) for c in d["commands"]],
            preceding=[Utterance.from_dict(u) for u in d["preceding"]],
            following=[Utterance.from_dict(u) for u in d["following"]],
            command_author=d["command_author"],
            dm=d["dm"],
        )


def word_count(text: str) -> int:
    """Words are whitespace-delimited tokens; punctuation isn't split off."""
    return len(text.split())


# --- alignment ---------------------------------------------------------------


@dataclass
class _Change:
    """A command together with its state change."""

    command: Event
    update: Event

    @property
    def when(self):
        return self.update.timestamp

    @property
    def seq(self):
        return self.update.seq


def _collect_changes(events: list[Event]) -> list[_Change]:
    changes = []
    pending: Optional[Event] = None
    for event in events:
        if event.event_type == "command":
            pending = event
        elif event.event_type == "combat_state_update" and pending is not None:
            changes.append(_Change(pending, event))
            pending = None
    return changes


def nearest_change_assignment(events: list[Event]) -> dict[int, int]:
    """Map each message seq to the seq of its chronologically nearest state
    change. Equidistant messages go to the later change (the one they
    presumably motivate)."""
    changes = _collect_changes(events)
    if not changes:
        return {}
    assignment: dict[int, int] = {}
    for event in events:
        if event.event_type != "message":
            continue
        best = None
        best_distance = None
        for change in changes:
            distance = abs((event.timestamp - change.when).total_seconds())
            # <= so a tie replaces the earlier winner: changes are scanned in
            # chronological order, and equidistant messages go to the later one
            if best is None or distance <= best_distance:
                best, best_distance = change, distance
        assignment[event.seq] = best.seq
    return assignment


def align(events: list[Event]) -> list[Triple]:
    """First pass: group commands into blocks and attach nearby messages.

    Commands by the same author with no chat between them form one block
    (one triple); each message joins the block owning its nearest state
    change, as preceding or following depending on which side of that change
    it sits. Utterances under five words are discarded here.
    """
    events = list(events)
    changes = _collect_changes(events)
    if not changes:
        return []
    assignment = nearest_change_assignment(events)
    dm = _dm_of(events)

    # block formation: walk events; message events and author switches close
    # the open block
    blocks: list[list[_Change]] = []
    by_command_seq = {c.command.seq: c for c in changes}
    open_block: list[_Change] = []
    for event in events:
        if event.event_type == "message":
            if open_block:
                blocks.append(open_block)
                open_block = []
        elif event.event_type == "command" and event.seq in by_command_seq:
            change = by_command_seq[event.seq]
            if open_block and open_block[-1].command.payload["author_id"] != change.command.payload["author_id"]:
                blocks.append(open_block)
                open_block = []
            open_block.append(change)
    if open_block:
        blocks.append(open_block)

    block_of_change = {}
    for i, block in enumerate(blocks):
        for change in block:
            block_of_change[change.seq] = i

    triples = [
        Triple(
            combat_id=events[0].combat_id,
            command_events=[
                CommandRef(
                    seq=c.command.seq,
                    text=c.command.payload["text"],
                    author_id=c.command.payload["author_id"],
                    caster_id=c.command.payload["caster_id"],
                    update_seq=c.update.seq,
                )
                for c in block
            ],
            preceding=[],
            following=[],
            command_author=block[0].command.payload["author_id"],
            dm=dm,
        )
        for block in blocks
    ]

    changes_by_seq = {c.seq: c for c in changes}
    for event in events:
        if event.event_type != "message":
            continue
        if word_count(event.payload["content"]) < MIN_WORDS:
            continue
        change = changes_by_seq[assignment[event.seq]]
        triple = triples[block_of_change[change.seq]]
        utterance = Utterance(
            author_id=event.payload["author_id"],
            content=event.payload["content"],
            seq=event.seq,
            timestamp=event.timestamp.isoformat(),
        )
        if (event.timestamp, event.seq) < (change.when, change.seq):
            triple.preceding.append(utterance)
        else:
            triple.following.append(utterance)
    return triples


def _dm_of(events: list[Event]) -> str:
    for event in events:
        if event.event_type == "combat_start":
            return event.payload.get("dm", event.payload.get("author_id", "dm"))
    return "dm"


# --- filtering ---------------------------------------------------------------


def filter_authorship(triple: Triple) -> Optional[Triple]:
    """Second pass: keep utterances by the command author or the DM; drop the
    triple entirely when its commands come from multiple actors or no
    utterances survive."""
    actors = {c.caster_id for c in triple.command_events}
    if len(actors) > 1:
        return None
    keep = {triple.command_author, triple.dm}
    preceding = [u for u in triple.preceding if u.author_id in keep]
    following = [u for u in triple.following if u.author_id in keep]
    if not preceding and not following:
        return None
    return Triple(
        combat_id=triple.combat_id,
        command_events=triple.command_events,
        preceding=preceding,
        following=following,
        command_author=triple.command_author,
        dm=triple.dm,
    )


_PAREN = re.compile(r"\([^()]*\)")
_MULTISPACE = re.compile(r" {2,}")


def strip_parentheticals(text: str) -> str:
    """Remove parenthesized spans (repeatedly, to unwrap nesting) and tidy
    the leftover spacing."""
    while True:
        stripped = _PAREN.sub("", text)
        if stripped == text:
            break
        text = stripped
    text = _MULTISPACE.sub(" ", text)
    return "\n".join(line.strip() for line in text.split("\n")).strip()


class HeuristicClassifier:
    """Deterministic in-character/out-of-character baseline.

    Rules, in order: leading "!" is table talk; fully bracketed or
    parenthesized text is an aside; common shorthand (brb/afk/ooc:) is table
    talk; a second-person question ("how much health do you have left?")
    is a rules question. Everything else counts as in-character. A trained
    classifier can be swapped in through the same classify() interface.
    """

    _second_person_question = re.compile(r"\b(you|your|yours)\b[^?]*\?", re.IGNORECASE)
    _shorthand = re.compile(r"(^|\s)(brb|afk|ooc:|btw)(\s|$|,|\.)", re.IGNORECASE)

    def classify(self, text: str) -> UtteranceLabel:
        stripped = text.strip()
        if not stripped:
            return UtteranceLabel("OOC", 1.0)
        if stripped.startswith("!"):
            return UtteranceLabel("OOC", 1.0)
        if (stripped.startswith("(") and stripped.endswith(")")) or (
            stripped.startswith("[") and stripped.endswith("]")
        ):
            return UtteranceLabel("OOC", 0.9)
        if self._shorthand.search(stripped):
            return UtteranceLabel("OOC", 0.8)
        if self._second_person_question.search(stripped):
            return UtteranceLabel("OOC", 0.7)
        return UtteranceLabel("IC", 0.6)


def filter_ooc(triple: Triple, classifier) -> Triple:
    """Third pass: drop OOC utterances from the following set, then strip
    parenthesized asides from what's left. Preceding utterances are never
    touched. Stripping can leave an utterance under the word floor; those go
    too, keeping the word-count invariant true after every pass."""
    if classifier is None:
        raise ClassifierUnavailable("no IC/OOC classifier configured")
    following: list[Utterance] = []
    for utterance in triple.following:
        if classifier.classify(utterance.content).label != "IC":
            continue
        content = strip_parentheticals(utterance.content)
        if word_count(content) < MIN_WORDS:
            continue
        following.append(Utterance(utterance.author_id, content, utterance.seq, utterance.timestamp))
    return Triple(
        combat_id=triple.combat_id,
        command_events=triple.command_events,
        preceding=list(triple.preceding),
        following=following,
        command_author=triple.command_author,
        dm=triple.dm,
    )


def distill(events: list[Event], classifier=None) -> list[Triple]:
    """Full pipeline: align, then both filter passes. Triples left with no
    utterances at all are dropped."""
    classifier = classifier or HeuristicClassifier()
    triples = []
    for aligned in align(events):
        authored = filter_authorship(aligned)
        if authored is None:
            continue
        cleaned = filter_ooc(authored, classifier)
        if not cleaned.preceding and not cleaned.following:
            continue
        triples.append(cleaned)
    return triples


def write_triples(triples: Iterable[Triple], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for triple in triples:
            fh.write(json.dumps(triple.to_dict(), ensure_ascii=False) + "\n")
            n += 1
    return n


def read_triples(path) -> list[Triple]:
    triples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                triples.append(Triple.from_dict(json.loads(line)))
    return triples


# --- command categories ------------------------------------------------------

# Published command-name -> category table used for the statistics report.
COMMAND_CATEGORIES = {
    "init": "Combat",
    "i": "Combat",
    "attack": "Actions",
    "a": "Actions",
    "cast": "Actions",
    "action": "Actions",
    "map": "Custom",
    "game": "Character",
    "g": "Character",
    "check": "Checks",
    "save": "Checks",
    "roll": "Dice Rolls",
    "r": "Dice Rolls",
}

CATEGORY_ORDER = ("Combat", "Actions", "Custom", "Character", "Checks", "Dice Rolls", "Other")


def categorize_command(text: str) -> str:
    name = text.lstrip("!").split()[0].lower() if text.strip().lstrip("!") else ""
    return COMMAND_CATEGORIES.get(name, "Other")


def categorize_commands(events: Iterable) -> dict[str, int]:
    """Count command invocations by category. Accepts Events or raw strings."""
    counts = {category: 0 for category in CATEGORY_ORDER}
    for item in events:
        if isinstance(item, Event):
            if item.event_type != "command":
                continue
            text = item.payload["text"]
        else:
            text = item
        counts[categorize_command(text)] += 1
    return counts


def stats_report(counts: dict[str, int]) -> str:
    total = sum(counts.values())
    width = max(len(c) for c in CATEGORY_ORDER)
    lines = [f"{'Type'.ljust(width)}  Invocations"]
    for category in CATEGORY_ORDER:
        lines.append(f"{category.ljust(width)}  {counts.get(category, 0)}")
    lines.append(f"{'Total'.ljust(width)}  {total}")
    return "\n".join(lines)
