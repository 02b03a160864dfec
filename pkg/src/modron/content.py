"""Data-driven ability definitions: attacks, spells, and actions as automation trees.

A content pack is a JSON document; each ability carries an automation tree
whose nodes use a ``type`` discriminator (attack, save, damage, temphp,
ieffect, remove_ieffect, check, target). Weapon attacks use the sentinel
``"weapon"`` for their bonus/dice so the numbers come from the caster's own
attack list at execution time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Union

from . import dice
from .dice import DiceExpr
from .state import ABILITIES, SchemaError, StatBlock

WEAPON = "weapon"  # sentinel: pull numbers from the caster's attack reference
SPELL = "spell"    # sentinel: pull numbers from the caster's spellbook


class ContentError(Exception):
    """Base class for content lookup/definition failures."""


class DuplicateName(ContentError):
    pass


class NotFound(ContentError):
    def __init__(self, name: str):
        super().__init__(f"no ability named {name!r} in the loaded content")
        self.name = name


class AmbiguousName(ContentError):
    def __init__(self, name: str, candidates: list[str]):
        super().__init__(f"{name!r} is ambiguous: {', '.join(sorted(candidates))}")
        self.name = name
        self.candidates = candidates


class NotKnown(ContentError):
    """The caster doesn't have this ability on their sheet."""

    def __init__(self, name: str, which: str, caster: str):
        super().__init__(f"{caster} has no {which} named {name!r}")
        self.name = name
        self.which = which


@dataclass
class AttackNode:
    bonus: Union[int, str] = WEAPON  # int | "weapon" | "spell"
    on_hit: list["Node"] = field(default_factory=list)
    on_miss: list["Node"] = field(default_factory=list)
    type = "attack"


@dataclass
class SaveNode:
    ability: str  # str/dex/con/int/wis/cha
    dc: Union[int, str] = SPELL  # int | "spell"
    on_fail: list["Node"] = field(default_factory=list)
    on_save: list["Node"] = field(default_factory=list)
    type = "save"


@dataclass
class DamageNode:
    dice_expr: Union[DiceExpr, str] = WEAPON  # parsed expression | "weapon"
    damage_type: Optional[str] = None  # None with "weapon" means use the weapon's type
    half_on_save: bool = False  # only meaningful under a save branch
    type = "damage"


@dataclass
class TempHPNode:
    dice_expr: DiceExpr = None
    type = "temphp"


@dataclass
class IEffectNode:
    name: str
    duration_rounds: Optional[int] = None
    parent_link: bool = False
    buttons: list[str] = field(default_factory=list)
    type = "ieffect"


@dataclass
class RemoveIEffectNode:
    name: str
    type = "remove_ieffect"


@dataclass
class CheckNode:
    skill_name: str
    dc: Optional[int] = None
    contest_skill: Optional[str] = None
    type = "check"


@dataclass
class TargetNode:
    mode: str = "each"  # "each" resolved target, or "self"
    children: list["Node"] = field(default_factory=list)
    type = "target"


Node = Union[
    AttackNode, SaveNode, DamageNode, TempHPNode, IEffectNode,
    RemoveIEffectNode, CheckNode, TargetNode,
]


@dataclass
class AbilityDef:
    name: str
    kind: str  # attack | spell | action
    automation: Node
    text: str = ""
    source: str = ""


def parse_node(doc: dict, path: str = "automation") -> Node:
    if not isinstance(doc, dict) or "type" not in doc:
        raise SchemaError([f"{path}: expected an object with a 'type' field"])
    ntype = doc["type"]
    children = lambda key: [
        parse_node(c, f"{path}.{key}[{i}]") for i, c in enumerate(doc.get(key, []))
    ]
    if ntype == "target":
        mode = doc.get("mode", "each")
        if mode not in ("each", "self"):
            raise SchemaError([f"{path}.mode: expected 'each' or 'self'"])
        return TargetNode(mode, children("children"))
    if ntype == "attack":
        bonus = doc.get("bonus", WEAPON)
        if not (isinstance(bonus, int) or bonus in (WEAPON, SPELL)):
            raise SchemaError([f"{path}.bonus: expected integer, 'weapon', or 'spell'"])
        return AttackNode(bonus, children("hit"), children("miss"))
    if ntype == "save":
        ability = doc.get("ability", "").lower()
        if ability not in ABILITIES:
            raise SchemaError([f"{path}.ability: expected one of {'/'.join(ABILITIES)}"])
        dc = doc.get("dc", SPELL)
        if not (isinstance(dc, int) or dc == SPELL):
            raise SchemaError([f"{path}.dc: expected integer or 'spell'"])
        return SaveNode(ability, dc, children("fail"), children("success"))
    if ntype == "damage":
        raw = doc.get("dice", WEAPON)
        if raw == WEAPON:
            expr = WEAPON
        else:
            try:
                expr = dice.parse_dice(raw)
            except (TypeError, dice.DiceSyntaxError) as exc:
                raise SchemaError([f"{path}.dice: {exc}"])
        return DamageNode(expr, doc.get("damage_type"), bool(doc.get("half_on_save", False)))
    if ntype == "temphp":
        try:
            expr = dice.parse_dice(doc.get("dice", ""))
        except dice.DiceSyntaxError as exc:
            raise SchemaError([f"{path}.dice: {exc}"])
        return TempHPNode(expr)
    if ntype == "ieffect":
        if not doc.get("name"):
            raise SchemaError([f"{path}.name: required"])
        duration = doc.get("duration_rounds")
        if duration is not None and (not isinstance(duration, int) or duration < 0):
            raise SchemaError([f"{path}.duration_rounds: expected integer >= 0"])
        return IEffectNode(
            doc["name"], duration, bool(doc.get("parent_link", False)),
            list(doc.get("buttons", [])),
        )
    if ntype == "remove_ieffect":
        if not doc.get("name"):
            raise SchemaError([f"{path}.name: required"])
        return RemoveIEffectNode(doc["name"])
    if ntype == "check":
        if not doc.get("skill"):
            raise SchemaError([f"{path}.skill: required"])
        return CheckNode(doc["skill"], doc.get("dc"), doc.get("contest_skill"))
    raise SchemaError([f"{path}.type: unknown node type {ntype!r}"])


def node_to_dict(node: Node) -> dict:
    if isinstance(node, TargetNode):
        return {"type": "target", "mode": node.mode, "children": [node_to_dict(c) for c in node.children]}
    if isinstance(node, AttackNode):
        return {
            "type": "attack", "bonus": node.bonus,
            "hit": [node_to_dict(c) for c in node.on_hit],
            "miss": [node_to_dict(c) for c in node.on_miss],
        }
    if isinstance(node, SaveNode):
        return {
            "type": "save", "ability": node.ability, "dc": node.dc,
            "fail": [node_to_dict(c) for c in node.on_fail],
            "success": [node_to_dict(c) for c in node.on_save],
        }
    if isinstance(node, DamageNode):
        d = WEAPON if node.dice_expr == WEAPON else dice.format_expr(node.dice_expr)
        return {"type": "damage", "dice": d, "damage_type": node.damage_type, "half_on_save": node.half_on_save}
    if isinstance(node, TempHPNode):
        return {"type": "temphp", "dice": dice.format_expr(node.dice_expr)}
    if isinstance(node, IEffectNode):
        return {
            "type": "ieffect", "name": node.name, "duration_rounds": node.duration_rounds,
            "parent_link": node.parent_link, "buttons": list(node.buttons),
        }
    if isinstance(node, RemoveIEffectNode):
        return {"type": "remove_ieffect", "name": node.name}
    if isinstance(node, CheckNode):
        return {"type": "check", "skill": node.skill_name, "dc": node.dc, "contest_skill": node.contest_skill}
    raise TypeError(f"unknown node {node!r}")


class ContentIndex:
    """Case-insensitive ability lookup with unambiguous-prefix matching."""

    def __init__(self, abilities: list[AbilityDef]):
        self._by_name: dict[str, AbilityDef] = {}
        for ability in abilities:
            key = ability.name.lower()
            if key in self._by_name:
                raise DuplicateName(ability.name)
            self._by_name[key] = ability

    def __len__(self):
        return len(self._by_name)

    def names(self) -> list[str]:
        return sorted(a.name for a in self._by_name.values())

    def lookup(self, name: str) -> AbilityDef:
        key = name.lower().strip()
        if key in self._by_name:
            return self._by_name[key]
        matches = [a for k, a in self._by_name.items() if k.startswith(key)]
        if len(matches) == 1:
            return matches[0]
        if not matches:
            raise NotFound(name)
        raise AmbiguousName(name, [a.name for a in matches])

    def to_dict(self) -> dict:
        return {
            "abilities": [
                {
                    "name": a.name, "kind": a.kind, "text": a.text, "source": a.source,
                    "automation": node_to_dict(a.automation),
                }
                for a in self._by_name.values()
            ]
        }


def load_content(pack: dict) -> ContentIndex:
    """Build a ContentIndex from a pack document; validates the whole pack."""
    if not isinstance(pack, dict) or not isinstance(pack.get("abilities"), list):
        raise SchemaError(["abilities: required list"])
    abilities: list[AbilityDef] = []
    problems: list[str] = []
    for i, entry in enumerate(pack["abilities"]):
        path = f"abilities[{i}]"
        if not isinstance(entry, dict):
            problems.append(f"{path}: expected object")
            continue
        name = entry.get("name")
        kind = entry.get("kind")
        if not isinstance(name, str) or not name:
            problems.append(f"{path}.name: required non-empty string")
            continue
        if kind not in ("attack", "spell", "action"):
            problems.append(f"{path}.kind: expected attack|spell|action")
            continue
        try:
            automation = parse_node(entry.get("automation", {}), f"{path}.automation")
        except SchemaError as exc:
            problems.extend(exc.problems)
            continue
        abilities.append(
            AbilityDef(name, kind, automation, entry.get("text", ""), entry.get("source", ""))
        )
    if problems:
        raise SchemaError(problems)
    return ContentIndex(abilities)


def load_content_file(path) -> ContentIndex:
    with open(path, encoding="utf-8") as fh:
        return load_content(json.load(fh))


def load_starter_pack() -> ContentIndex:
    """The bundled pack covering every ability the fixtures use."""
    data = resources.files("modron.data").joinpath("starter_pack.json").read_text("utf-8")
    return load_content(json.loads(data))


_KIND_LIST = {"attack": "attack", "spell": "spell", "action": "action"}


def resolve_ability(
    caster: StatBlock,
    name: str,
    index: ContentIndex,
    kinds: tuple[str, ...] = ("attack", "spell", "action"),
    ignore_requirements: bool = False,
) -> AbilityDef:
    """Look up an ability and check the caster actually has it.

    Spells must be in the caster's spellbook, attacks in their attack list,
    actions in their action list -- unless ``ignore_requirements`` (the ``-i``
    flag). ``kinds`` restricts what the invoking command accepts.
    """
    ability = index.lookup(name)
    if ability.kind not in kinds:
        raise NotKnown(ability.name, "/".join(kinds), caster.name)
    if ignore_requirements:
        return ability
    if ability.kind == "attack" and caster.find_attack(ability.name) is None:
        raise NotKnown(ability.name, "attack", caster.name)
    if ability.kind == "spell" and not caster.spellbook.knows(ability.name):
        raise NotKnown(ability.name, "spell", caster.name)
    if ability.kind == "action" and not caster.knows_action(ability.name):
        raise NotKnown(ability.name, "action", caster.name)
    return ability
