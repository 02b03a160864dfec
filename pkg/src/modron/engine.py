"""Tokenize, parse, and execute ``!`` commands against a combat state.

Commands look like what players type at a combat-tracking bot::

    !a greataxe -t dw1
    !i cast "Cause Fear" -dc 15 -t dd1 -t dd3 sadv -i -title "Pipes of Haunting!"
    !init next

Execution produces a typed report: the parsed command, a result tree for the
ability automation that ran, a field-level state delta, and the plain-text
mechanical lines used in prompts and chat output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from . import content as content_mod
from . import dice, state as state_mod
from .content import (
    AbilityDef,
    AttackNode,
    CheckNode,
    ContentError,
    ContentIndex,
    DamageNode,
    IEffectNode,
    Node,
    RemoveIEffectNode,
    SaveNode,
    TargetNode,
    TempHPNode,
    resolve_ability,
)
from .dice import DiceError, DiceExpr, DieGroup, KeepRule
from .state import ABILITY_NAMES, ActiveEffect, Combatant, CombatState


class EngineError(Exception):
    """Base class for command failures a player can cause."""


class UnterminatedQuote(EngineError):
    pass


class UnknownCommand(EngineError):
    pass


class MissingArgument(EngineError):
    pass


class BadFlagValue(EngineError):
    pass


class TargetNotFound(EngineError):
    def __init__(self, raw: str):
        super().__init__(f"no combatant matches {raw!r}")
        self.raw = raw


class AmbiguousTarget(EngineError):
    def __init__(self, raw: str, candidates: list[str]):
        super().__init__(f"{raw!r} is ambiguous: {', '.join(candidates)}")
        self.raw = raw
        self.candidates = candidates


class NoCombatants(EngineError):
    pass


class ExecutionError(EngineError):
    """Wraps any failure raised while executing a parsed command."""


# Flags that take a value; everything else starting with "-" is -t, -i, or
# recorded as a warning. adv/dis/sadv/sdis appear bare, without a dash.
VALUED_FLAGS = {"-dc", "-title", "-thumb", "-rr", "-phrase"}
INT_FLAGS = {"-dc", "-rr"}
BARE_WORDS = {"adv", "dis", "sadv", "sdis"}

COMMAND_ALIASES = {"a": "attack", "i": "init", "r": "roll", "g": "game"}
KNOWN_COMMANDS = {"attack", "init", "cast", "check", "save", "game", "roll", "help"}
INIT_SUBCOMMANDS = {"begin", "next", "join", "end", "cast", "action"}


@dataclass
class CommandAST:
    name: str
    subcommand: Optional[str] = None
    positional: list[str] = field(default_factory=list)
    targets: list[str] = field(default_factory=list)
    flags: dict[str, str] = field(default_factory=dict)
    bare_flags: set[str] = field(default_factory=set)
    warnings: list[str] = field(default_factory=list)
    # set when the command form implies the caster (e.g. "!i cast")
    caster_hint: Optional[str] = None

    def flag_int(self, name: str) -> Optional[int]:
        return int(self.flags[name]) if name in self.flags else None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "subcommand": self.subcommand,
            "positional": list(self.positional),
            "targets": list(self.targets),
            "flags": dict(self.flags),
            "bare_flags": sorted(self.bare_flags),
            "warnings": list(self.warnings),
            "caster_hint": self.caster_hint,
        }

    @staticmethod
    def from_dict(d: dict) -> "CommandAST":
        return CommandAST(
            name=d["name"],
            subcommand=d.get("subcommand"),
            positional=list(d.get("positional", [])),
            targets=list(d.get("targets", [])),
            flags=dict(d.get("flags", {})),
            bare_flags=set(d.get("bare_flags", [])),
            warnings=list(d.get("warnings", [])),
            caster_hint=d.get("caster_hint"),
        )


def tokenize(text: str) -> list[str]:
    """Split a command line shell-style: whitespace separates tokens and
    double-quoted spans stay together with the quotes stripped. The leading
    "!" is dropped from the command word."""
    if not text.startswith("!"):
        raise UnknownCommand("commands start with '!'")
    tokens: list[str] = []
    buf: list[str] = []
    in_quote = False
    started = False
    for ch in text[1:]:
        if in_quote:
            if ch == '"':
                in_quote = False
            else:
                buf.append(ch)
        elif ch == '"':
            in_quote = True
            started = True
        elif ch.isspace():
            if started:
                tokens.append("".join(buf))
                buf = []
                started = False
        else:
            buf.append(ch)
            started = True
    if in_quote:
        raise UnterminatedQuote("unterminated double quote")
    if started:
        tokens.append("".join(buf))
    return tokens


def parse_command(tokens: list[str]) -> CommandAST:
    """Build a CommandAST. Unknown flags become warnings, never errors."""
    if not tokens:
        raise MissingArgument("empty command")
    name = COMMAND_ALIASES.get(tokens[0].lower(), tokens[0].lower())
    rest = tokens[1:]
    if name not in KNOWN_COMMANDS:
        raise UnknownCommand(f"unknown command {tokens[0]!r}")

    ast = CommandAST(name=name)
    if name == "init":
        if not rest:
            raise MissingArgument("init requires a subcommand (begin/next/join/end/cast/action)")
        sub = rest[0].lower()
        if sub not in INIT_SUBCOMMANDS:
            raise UnknownCommand(f"unknown init subcommand {rest[0]!r}")
        rest = rest[1:]
        if sub in ("cast", "action"):
            # "!i cast X" is the current-turn combatant casting X
            ast = CommandAST(name=sub, caster_hint="current_turn")
        else:
            ast.subcommand = sub

    i = 0
    while i < len(rest):
        tok = rest[i]
        low = tok.lower()
        if low == "-t":
            if i + 1 >= len(rest):
                raise MissingArgument("-t requires a target")
            ast.targets.append(rest[i + 1])
            i += 2
        elif low in VALUED_FLAGS:
            if i + 1 >= len(rest):
                raise MissingArgument(f"{tok} requires a value")
            value = rest[i + 1]
            if low in INT_FLAGS:
                try:
                    int(value)
                except ValueError:
                    raise BadFlagValue(f"{tok} expects an integer, got {value!r}")
            ast.flags[low.lstrip("-")] = value
            i += 2
        elif low == "-i":
            ast.bare_flags.add("i")
            i += 1
        elif low in BARE_WORDS:
            ast.bare_flags.add(low)
            i += 1
        elif tok.startswith("-") and len(tok) > 1 and not tok[1].isdigit():
            ast.warnings.append(tok)
            i += 1
        else:
            ast.positional.append(tok)
            i += 1

    _check_arity(ast)
    return ast


def _check_arity(ast: CommandAST) -> None:
    needs_one = {"cast", "action", "check", "save", "roll", "game"}
    if ast.name in needs_one and not ast.positional:
        raise MissingArgument(f"{ast.name} requires an argument")
    if ast.name == "attack" and not ast.positional:
        raise MissingArgument("attack requires an attack name")
    if ast.name == "init" and ast.subcommand == "join" and not ast.positional:
        raise MissingArgument("init join requires a combatant name")
    if ast.name == "save" and ast.positional:
        if ast.positional[0].lower()[:3] not in state_mod.ABILITIES:
            raise BadFlagValue(f"unknown save ability {ast.positional[0]!r}")


def parse_text(text: str) -> CommandAST:
    return parse_command(tokenize(text))


def resolve_targets(ast: CommandAST, combat: CombatState) -> list[str]:
    """Map each raw -t argument to a combatant id. Exact id match first
    (case-insensitive), then unambiguous prefix; order and duplicates kept."""
    resolved = []
    for raw in ast.targets:
        resolved.append(_resolve_one(raw, combat))
    return resolved


def _resolve_one(raw: str, combat: CombatState) -> str:
    key = raw.lower()
    for c in combat.combatants:
        if c.id.lower() == key:
            return c.id
    matches = [c.id for c in combat.combatants if c.id.lower().startswith(key)]
    if len(matches) == 1:
        return matches[0]
    if not matches:
        raise TargetNotFound(raw)
    raise AmbiguousTarget(raw, matches)


# --- automation results -----------------------------------------------------


@dataclass
class AttackResult:
    did_hit: bool
    did_crit: bool
    roll: dice.RollResult
    children: list["AutomationResult"] = field(default_factory=list)
    kind = "attack"

    def to_dict(self) -> dict:
        return {
            "kind": "attack", "did_hit": self.did_hit, "did_crit": self.did_crit,
            "roll": dice.format_roll(self.roll),
            "children": [c.to_dict() for c in self.children],
        }


@dataclass
class SaveResult:
    dc: int
    ability: str
    did_save: bool
    roll: dice.RollResult
    children: list["AutomationResult"] = field(default_factory=list)
    kind = "save"

    def to_dict(self) -> dict:
        return {
            "kind": "save", "dc": self.dc, "ability": self.ability,
            "did_save": self.did_save, "roll": dice.format_roll(self.roll),
            "children": [c.to_dict() for c in self.children],
        }


@dataclass
class DamageResult:
    damage: int  # post-mitigation; negative means healing
    in_crit: bool
    children: list["AutomationResult"] = field(default_factory=list)
    kind = "damage"

    def to_dict(self) -> dict:
        return {"kind": "damage", "damage": self.damage, "in_crit": self.in_crit,
                "children": [c.to_dict() for c in self.children]}


@dataclass
class TempHPResult:
    amount: int
    children: list["AutomationResult"] = field(default_factory=list)
    kind = "temphp"

    def to_dict(self) -> dict:
        return {"kind": "temphp", "amount": self.amount,
                "children": [c.to_dict() for c in self.children]}


@dataclass
class IEffectResult:
    effect: str
    children: list["AutomationResult"] = field(default_factory=list)
    kind = "ieffect"

    def to_dict(self) -> dict:
        return {"kind": "ieffect", "effect": self.effect,
                "children": [c.to_dict() for c in self.children]}


@dataclass
class RemoveIEffectResult:
    effect: str
    children: list["AutomationResult"] = field(default_factory=list)
    kind = "remove_ieffect"

    def to_dict(self) -> dict:
        return {"kind": "remove_ieffect", "effect": self.effect,
                "children": [c.to_dict() for c in self.children]}


@dataclass
class CheckResult:
    skill_name: str
    dc: Optional[int]
    did_succeed: Optional[bool]
    contest_roll: Optional[int]
    contest_did_tie: Optional[bool]
    roll: dice.RollResult = None
    children: list["AutomationResult"] = field(default_factory=list)
    kind = "check"

    def to_dict(self) -> dict:
        return {
            "kind": "check", "skill_name": self.skill_name, "dc": self.dc,
            "did_succeed": self.did_succeed, "contest_roll": self.contest_roll,
            "contest_did_tie": self.contest_did_tie,
            "roll": dice.format_roll(self.roll) if self.roll else None,
            "children": [c.to_dict() for c in self.children],
        }


AutomationResult = Union[
    AttackResult, SaveResult, DamageResult, TempHPResult,
    IEffectResult, RemoveIEffectResult, CheckResult,
]


@dataclass
class TargetExecution:
    """One run of an ability's automation against one target."""

    target_id: Optional[str]
    results: list[AutomationResult] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"target_id": self.target_id, "results": [r.to_dict() for r in self.results]}


@dataclass
class ExecutionReport:
    ast: CommandAST
    caster: str
    automation: list[TargetExecution]
    state_delta: list[dict]
    mechanical_lines: list[str]
    command_text: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "ast": self.ast.to_dict(),
            "caster": self.caster,
            "automation": [t.to_dict() for t in self.automation],
            "state_delta": self.state_delta,
            "mechanical_lines": list(self.mechanical_lines),
            "command_text": self.command_text,
        }


def turn_banner(combat: CombatState) -> str:
    """E.g. ``Initiative 12 (round 1): Umbrage``."""
    if not combat.combatants:
        raise NoCombatants("combat has no combatants")
    current = combat.current()
    return f"Initiative {current.initiative} (round {combat.round}): {current.id}"


def execute(
    ast: CommandAST,
    combat: CombatState,
    caster_id: str,
    index: ContentIndex,
    command_text: Optional[str] = None,
) -> ExecutionReport:
    """Run a parsed command against the combat state.

    Any player-caused failure (bad target, unknown ability, bad dice, ...)
    is raised as ExecutionError; those count as pass-rate failures."""
    pre = combat.to_dict()
    try:
        if combat.ended:
            raise ExecutionError("combat has ended")
        caster = combat.find(caster_id)
        if caster is None:
            raise TargetNotFound(caster_id)
        runner = _Runner(combat, index)
        lines = runner.dispatch(ast, caster)
        automation = runner.executions
    except ExecutionError:
        raise
    except (EngineError, ContentError, DiceError, state_mod.UnknownDamageType) as exc:
        raise ExecutionError(str(exc)) from exc
    post = combat.to_dict()
    return ExecutionReport(
        ast=ast,
        caster=caster_id,
        automation=automation,
        state_delta=state_mod.diff_states(pre, post),
        mechanical_lines=lines,
        command_text=command_text,
    )


def execute_text(combat: CombatState, caster_id: str, text: str, index: ContentIndex) -> ExecutionReport:
    ast = parse_text(text)
    return execute(ast, combat, caster_id, index, command_text=text)


_D20 = DiceExpr((DieGroup(1, 20),))
_D20_ADV = DiceExpr((DieGroup(2, 20, KeepRule("highest", 1)),))
_D20_DIS = DiceExpr((DieGroup(2, 20, KeepRule("lowest", 1)),))


def _d20(adv: bool, dis: bool) -> DiceExpr:
    if adv and not dis:
        return _D20_ADV
    if dis and not adv:
        return _D20_DIS
    return _D20


class _Runner:
    """Executes one command; collects automation results and text lines."""

    def __init__(self, combat: CombatState, index: ContentIndex):
        self.combat = combat
        self.index = index
        self.executions: list[TargetExecution] = []

    # -- command dispatch --

    def dispatch(self, ast: CommandAST, caster: Combatant) -> list[str]:
        handler = getattr(self, f"_cmd_{ast.name}")
        return handler(ast, caster)

    def _cmd_roll(self, ast: CommandAST, caster: Combatant) -> list[str]:
        expr = dice.parse_dice(" ".join(ast.positional))
        result = dice.roll(expr, self.combat.rng)
        return [dice.format_roll(result)]

    def _cmd_help(self, ast: CommandAST, caster: Combatant) -> list[str]:
        return [
            "Commands: !attack(!a) <weapon> -t <target>, !cast <spell> -t <target>,",
            "!init(!i) begin|next|join|end|cast|action, !check <skill>, !save <ability>,",
            "!game hp [mod|set <n>], !roll <dice>, !help",
        ]

    def _cmd_game(self, ast: CommandAST, caster: Combatant) -> list[str]:
        sub = ast.positional[0].lower()
        if sub != "hp":
            raise UnknownCommand(f"unknown game subcommand {ast.positional[0]!r}")
        if len(ast.positional) >= 3 and ast.positional[1].lower() in ("mod", "set"):
            try:
                value = int(ast.positional[2])
            except ValueError:
                raise BadFlagValue(f"game hp expects an integer, got {ast.positional[2]!r}")
            if ast.positional[1].lower() == "mod":
                caster.hp = min(caster.max_hp, caster.hp + value)
            else:
                caster.hp = min(caster.max_hp, value)
        return [f"{caster.id}: {caster.hp}/{caster.max_hp} HP"]

    def _cmd_check(self, ast: CommandAST, caster: Combatant) -> list[str]:
        skill = " ".join(ast.positional)
        result = self._run_check(caster, skill, ast.flag_int("dc"), None, ast)
        self.executions.append(TargetExecution(caster.id, [result]))
        return _render_lines(ast, caster, self.executions, self.combat)

    def _cmd_save(self, ast: CommandAST, caster: Combatant) -> list[str]:
        ability = ast.positional[0].lower()[:3]
        dc = ast.flag_int("dc")
        roll_expr = _d20("adv" in ast.bare_flags, "dis" in ast.bare_flags)
        result = dice.roll(roll_expr, self.combat.rng)
        total = result.total + caster.statblock.save_mod(ability)
        save = SaveResult(
            dc=dc if dc is not None else 0,
            ability=ability,
            did_save=(total >= dc) if dc is not None else True,
            roll=_with_bonus(result, caster.statblock.save_mod(ability)),
        )
        self.executions.append(TargetExecution(caster.id, [save]))
        return _render_lines(ast, caster, self.executions, self.combat)

    def _cmd_attack(self, ast: CommandAST, caster: Combatant) -> list[str]:
        ability = resolve_ability(
            caster.statblock, ast.positional[0], self.index,
            kinds=("attack", "action"),
            ignore_requirements="i" in ast.bare_flags,
        )
        self._run_ability(ast, caster, ability)
        return _render_lines(ast, caster, self.executions, self.combat, ability)

    def _cmd_action(self, ast: CommandAST, caster: Combatant) -> list[str]:
        ability = resolve_ability(
            caster.statblock, ast.positional[0], self.index,
            kinds=("action",),
            ignore_requirements="i" in ast.bare_flags,
        )
        self._run_ability(ast, caster, ability)
        return _render_lines(ast, caster, self.executions, self.combat, ability)

    def _cmd_cast(self, ast: CommandAST, caster: Combatant) -> list[str]:
        ability = resolve_ability(
            caster.statblock, ast.positional[0], self.index,
            kinds=("spell",),
            ignore_requirements="i" in ast.bare_flags,
        )
        self._run_ability(ast, caster, ability)
        return _render_lines(ast, caster, self.executions, self.combat, ability)

    def _cmd_init(self, ast: CommandAST, caster: Combatant) -> list[str]:
        sub = ast.subcommand
        if sub == "begin":
            raise ExecutionError("combat is already active")
        if sub == "next":
            self._advance_turn()
            return [turn_banner(self.combat), state_mod.render_actor_line(self.combat.current())]
        if sub == "end":
            self.combat.ended = True
            return ["Combat has ended."]
        if sub == "join":
            return self._join(" ".join(ast.positional))
        raise UnknownCommand(f"unhandled init subcommand {sub!r}")

    def _advance_turn(self) -> None:
        combat = self.combat
        if not combat.combatants:
            raise NoCombatants("combat has no combatants")
        leaving = combat.current()
        _tick_effects(combat, leaving)
        combat.turn_index += 1
        if combat.turn_index >= len(combat.combatants):
            combat.turn_index = 0
            combat.round += 1

    def _join(self, name: str) -> list[str]:
        match = None
        for c in self.combat.reserve:
            if c.id.lower() == name.lower() or c.id.lower().startswith(name.lower()):
                match = c
                break
        if match is None:
            raise TargetNotFound(name)
        roll = dice.roll(_D20, self.combat.rng)
        match.initiative = roll.total + match.statblock.ability_mod("dex")
        self.combat.reserve.remove(match)
        self.combat.add_combatant(match)
        return [f"{match.id} joined the combat with initiative {match.initiative}."]

    # -- automation execution --

    def _run_ability(self, ast: CommandAST, caster: Combatant, ability: AbilityDef) -> None:
        root = ability.automation
        if not isinstance(root, TargetNode):
            root = TargetNode("each", [root])
        repeats = ast.flag_int("rr") or 1
        if repeats < 1:
            raise BadFlagValue("-rr expects a positive integer")
        ctx = _Context(ast=ast, caster=caster, ability=ability)
        if root.mode == "self":
            targets = [caster]
        else:
            targets = [self.combat.find(t) for t in resolve_targets(ast, self.combat)]
        for target in targets:
            for _ in range(repeats):
                execution = TargetExecution(target.id)
                for child in root.children:
                    execution.results.append(self._run_node(child, ctx, target))
                self.executions.append(execution)

    def _run_node(self, node: Node, ctx: "_Context", target: Combatant) -> AutomationResult:
        if isinstance(node, AttackNode):
            return self._run_attack(node, ctx, target)
        if isinstance(node, SaveNode):
            return self._run_save(node, ctx, target)
        if isinstance(node, DamageNode):
            return self._run_damage(node, ctx, target)
        if isinstance(node, TempHPNode):
            rolled = dice.roll(node.dice_expr, self.combat.rng)
            state_mod.grant_temp_hp(target, rolled.total)
            return TempHPResult(amount=rolled.total)
        if isinstance(node, IEffectNode):
            return self._run_ieffect(node, ctx, target)
        if isinstance(node, RemoveIEffectNode):
            removed = _remove_effect(self.combat, target, node.name)
            return RemoveIEffectResult(effect=removed or node.name)
        if isinstance(node, CheckNode):
            return self._run_check(target, node.skill_name, node.dc, node.contest_skill, ctx.ast, caster=ctx.caster)
        raise ExecutionError(f"unsupported automation node {type(node).__name__}")

    def _run_attack(self, node: AttackNode, ctx: "_Context", target: Combatant) -> AttackResult:
        if node.bonus == content_mod.WEAPON:
            ref = ctx.weapon_ref()
            bonus = ref.to_hit
        elif node.bonus == content_mod.SPELL:
            bonus = ctx.caster.statblock.spellbook.spell_bonus
        else:
            bonus = node.bonus
        expr = _d20("adv" in ctx.ast.bare_flags, "dis" in ctx.ast.bare_flags)
        rolled = dice.roll(expr, self.combat.rng)
        natural = rolled.kept[0][0]
        total = rolled.total + bonus
        crit = natural == 20
        hit = crit or (natural != 1 and total >= target.statblock.armor_class)
        result = AttackResult(did_hit=hit, did_crit=crit, roll=_with_bonus(rolled, bonus))
        branch = node.on_hit if hit else node.on_miss
        child_ctx = ctx.child(in_crit=crit)
        for child in branch:
            result.children.append(self._run_node(child, child_ctx, target))
        return result

    def _run_save(self, node: SaveNode, ctx: "_Context", target: Combatant) -> SaveResult:
        dc = ctx.ast.flag_int("dc")
        if dc is None:
            dc = node.dc if isinstance(node.dc, int) else ctx.caster.statblock.spellbook.dc
        expr = _d20("sadv" in ctx.ast.bare_flags, "sdis" in ctx.ast.bare_flags)
        rolled = dice.roll(expr, self.combat.rng)
        bonus = target.statblock.save_mod(node.ability)
        total = rolled.total + bonus
        did_save = total >= dc
        result = SaveResult(dc=dc, ability=node.ability, did_save=did_save, roll=_with_bonus(rolled, bonus))
        branch = node.on_save if did_save else node.on_fail
        child_ctx = ctx.child(did_save=did_save)
        for child in branch:
            result.children.append(self._run_node(child, child_ctx, target))
        return result

    def _run_damage(self, node: DamageNode, ctx: "_Context", target: Combatant) -> DamageResult:
        if node.dice_expr == content_mod.WEAPON:
            ref = ctx.weapon_ref()
            expr = ref.damage
            dtype = node.damage_type or ref.damage_type
        else:
            expr = node.dice_expr
            dtype = node.damage_type or "bludgeoning"
        if ctx.in_crit:
            expr = _double_dice(expr)
        rolled = dice.roll(expr, self.combat.rng)
        total = rolled.total
        if node.half_on_save and ctx.did_save:
            total //= 2
        total = max(total, 0)
        if dtype.lower() == "healing":
            healed = state_mod.apply_healing(target, total)
            return DamageResult(damage=-healed, in_crit=ctx.in_crit)
        _, applied = state_mod.apply_damage(target, total, dtype)
        return DamageResult(damage=applied, in_crit=ctx.in_crit)

    def _run_ieffect(self, node: IEffectNode, ctx: "_Context", target: Combatant) -> IEffectResult:
        parent = None
        if node.parent_link:
            owner = ctx.caster
            if not owner.has_effect(ctx.ability.name):
                owner.effects.append(ActiveEffect(ctx.ability.name))
            parent = (owner.id, ctx.ability.name)
        existing = target.get_effect(node.name)
        if existing is not None:
            target.effects.remove(existing)  # re-applying refreshes the effect
        target.effects.append(
            ActiveEffect(node.name, node.duration_rounds, parent, list(node.buttons))
        )
        return IEffectResult(effect=node.name)

    def _run_check(
        self,
        target: Combatant,
        skill: str,
        dc: Optional[int],
        contest_skill: Optional[str],
        ast: CommandAST,
        caster: Optional[Combatant] = None,
    ) -> CheckResult:
        skill_name = _canonical_skill(target.statblock, skill)
        expr = _d20("adv" in ast.bare_flags, "dis" in ast.bare_flags)
        rolled = dice.roll(expr, self.combat.rng)
        bonus = target.statblock.skill_mod(skill_name)
        total = rolled.total + bonus
        dc = ast.flag_int("dc") if ast.flag_int("dc") is not None else dc
        contest_roll = None
        contest_did_tie = None
        did_succeed = None
        if contest_skill and caster is not None:
            contest = dice.roll(_D20, self.combat.rng)
            contest_roll = contest.total + caster.statblock.skill_mod(contest_skill)
            contest_did_tie = contest_roll == total
        elif dc is not None:
            did_succeed = total >= dc
        return CheckResult(
            skill_name=skill_name,
            dc=dc,
            did_succeed=did_succeed,
            contest_roll=contest_roll,
            contest_did_tie=contest_did_tie,
            roll=_with_bonus(rolled, bonus),
        )


@dataclass
class _Context:
    ast: CommandAST
    caster: Combatant
    ability: AbilityDef
    in_crit: bool = False
    did_save: bool = False

    def child(self, **overrides) -> "_Context":
        values = {
            "ast": self.ast, "caster": self.caster, "ability": self.ability,
            "in_crit": self.in_crit, "did_save": self.did_save,
        }
        values.update(overrides)
        return _Context(**values)

    def weapon_ref(self) -> state_mod.AttackRef:
        ref = self.caster.statblock.find_attack(self.ability.name)
        if ref is None:
            # "-i" can invoke a weapon the caster doesn't carry; improvise one
            return state_mod.AttackRef(self.ability.name, 0, dice.parse_dice("1d4"), "bludgeoning")
        return ref


def _with_bonus(result: dice.RollResult, bonus: int) -> dice.RollResult:
    """Attach a flat bonus to a rolled d20 so the stored roll formats the way
    transcripts show it: ``2d20kh1 (15, 12) + 1 = 16``."""
    if bonus == 0:
        return result
    terms = result.expr.terms + (dice.Constant(bonus),)
    return dice.RollResult(
        expr=DiceExpr(terms), raw=result.raw, kept=result.kept, total=result.total + bonus
    )


def _double_dice(expr: DiceExpr) -> DiceExpr:
    """Critical hits double the dice rolled, not the flat bonus."""
    terms = []
    for term in expr.terms:
        if isinstance(term, DieGroup):
            keep = term.keep
            if keep is not None:
                keep = KeepRule(keep.mode, keep.n * 2)
            terms.append(DieGroup(term.count * 2, term.sides, keep))
        else:
            terms.append(term)
    return DiceExpr(tuple(terms))


def _tick_effects(combat: CombatState, owner: Combatant) -> None:
    """Decrement the leaving combatant's timed effects; remove expired ones
    (and anything parented to them, anywhere in the combat)."""
    expired: list[ActiveEffect] = []
    for effect in owner.effects:
        if effect.duration_rounds is None:
            continue
        effect.duration_rounds -= 1
        if effect.duration_rounds <= 0:
            expired.append(effect)
    for effect in expired:
        owner.effects.remove(effect)
        _cascade_remove(combat, owner.id, effect.name)


def _remove_effect(combat: CombatState, target: Combatant, name: str) -> Optional[str]:
    effect = target.get_effect(name)
    if effect is None:
        return None
    target.effects.remove(effect)
    _cascade_remove(combat, target.id, effect.name)
    return effect.name


def _cascade_remove(combat: CombatState, owner_id: str, effect_name: str) -> None:
    key = (owner_id.lower(), effect_name.lower())
    for c in combat.combatants:
        for child in [e for e in c.effects if e.parent and (e.parent[0].lower(), e.parent[1].lower()) == key]:
            c.effects.remove(child)
            _cascade_remove(combat, c.id, child.name)


# --- mechanical lines -------------------------------------------------------


def _render_lines(
    ast: CommandAST,
    caster: Combatant,
    executions: list[TargetExecution],
    combat: CombatState,
    ability: Optional[AbilityDef] = None,
) -> list[str]:
    lines: list[str] = []
    title = ast.flags.get("title")
    if title is None and ability is not None:
        name = caster.mechanics_name
        if ability.kind == "attack":
            title = f"{name} attacks with a {ability.name}!"
        elif ability.kind == "spell":
            title = f"{name} casts {ability.name}!"
        else:
            title = f"{name} uses {ability.name}!"
    if title:
        lines.append(title)
    for execution in executions:
        for result in execution.results:
            lines.extend(_result_lines(result, caster, execution.target_id))
    return lines


def _result_lines(result: AutomationResult, caster: Combatant, target_id: Optional[str]) -> list[str]:
    lines: list[str] = []
    name = caster.mechanics_name
    if isinstance(result, AttackResult):
        if result.did_hit:
            dealt = sum(
                c.damage for c in result.children if isinstance(c, DamageResult) and c.damage > 0
            )
            lines.append(f"{name} attacked {target_id} and hit for {dealt} damage.")
        else:
            lines.append(f"{name} attacked {target_id} but missed.")
        for child in result.children:
            if not isinstance(child, DamageResult) or child.damage < 0:
                lines.extend(_result_lines(child, caster, target_id))
    elif isinstance(result, SaveResult):
        ability_word = ABILITY_NAMES.get(result.ability, result.ability.upper())
        outcome = "and succeeded" if result.did_save else "but failed"
        lines.append(f"{target_id} rolled a {ability_word} save {outcome}.")
        for child in result.children:
            lines.extend(_result_lines(child, caster, target_id))
    elif isinstance(result, DamageResult):
        if result.damage < 0:
            lines.append(f"{target_id} regained {-result.damage} hit points.")
        else:
            lines.append(f"{target_id} took {result.damage} damage.")
    elif isinstance(result, TempHPResult):
        lines.append(f"{target_id} gained {result.amount} temporary hit points.")
    elif isinstance(result, IEffectResult):
        lines.append(f"{target_id} gained {result.effect}.")
    elif isinstance(result, RemoveIEffectResult):
        lines.append(f"{target_id} lost {result.effect}.")
    elif isinstance(result, CheckResult):
        if result.did_succeed is None:
            lines.append(f"{target_id} rolled a {result.skill_name} check.")
        else:
            outcome = "and succeeded" if result.did_succeed else "but failed"
            lines.append(f"{target_id} rolled a {result.skill_name} check {outcome}.")
    return lines


def _canonical_skill(sb: state_mod.StatBlock, skill: str) -> str:
    """Prefix-match a skill against the sheet, then the standard skill list."""
    key = skill.lower()
    names = list(sb.skills.keys()) + [s for s in state_mod.SKILL_ABILITIES if s not in sb.skills]
    exact = [n for n in names if n.lower() == key]
    if exact:
        return exact[0]
    matches = sorted({n for n in names if n.lower().startswith(key)})
    if len(matches) == 1:
        return matches[0]
    if not matches:
        return skill.title()
    raise AmbiguousTarget(skill, matches)
