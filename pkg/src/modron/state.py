"""Actor sheets and live combat state.

Holds the full creature data model (stats, skills, saves, attacks, spellbook,
counters), the combatant/initiative structures, health descriptors, and the
canonical one-line actor rendering used in prompts, e.g.::

    - DW1 (Dire Wolf) <25/37 HP; Injured>
    - Filgo Bitterfoot (Mountain Dwarf; Fighter 5) <43/43 HP; Healthy>
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import dice
from .dice import DiceExpr, DieSource, SeededSource

ABILITIES = ("str", "dex", "con", "int", "wis", "cha")

ABILITY_NAMES = {
    "str": "Strength",
    "dex": "Dexterity",
    "con": "Constitution",
    "int": "Intelligence",
    "wis": "Wisdom",
    "cha": "Charisma",
}

DAMAGE_TYPES = frozenset(
    {
        "acid", "bludgeoning", "cold", "fire", "force", "lightning", "necrotic",
        "piercing", "poison", "psychic", "radiant", "slashing", "thunder",
    }
)

# Default ability behind each skill, for checks on sheets that don't list the
# skill explicitly.
SKILL_ABILITIES = {
    "Acrobatics": "dex",
    "Animal Handling": "wis",
    "Arcana": "int",
    "Athletics": "str",
    "Deception": "cha",
    "History": "int",
    "Insight": "wis",
    "Intimidation": "cha",
    "Investigation": "int",
    "Medicine": "wis",
    "Nature": "int",
    "Perception": "wis",
    "Performance": "cha",
    "Persuasion": "cha",
    "Religion": "int",
    "Sleight of Hand": "dex",
    "Stealth": "dex",
    "Survival": "wis",
}

# Health descriptor thresholds as fractions of max HP. The recorded transcripts
# pin Critical somewhere in (0.038, 0.282] and the Bloodied/Injured boundary in
# (0.282, 0.6); 0.15 and the usual "bloodied at half" convention sit inside
# both windows. Change these two constants to retune the bands.
CRITICAL_AT_OR_BELOW = 0.15
BLOODIED_AT_OR_BELOW = 0.5

HEALTH_ORDER = ("Dead", "Critical", "Bloodied", "Injured", "Healthy")


class SchemaError(Exception):
    """A structured document failed validation; lists offending field paths."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


class UnknownDamageType(Exception):
    pass


def derive_health(hp: int, max_hp: int) -> str:
    """Map (hp, max_hp) to one of Dead/Critical/Bloodied/Injured/Healthy."""
    if max_hp <= 0:
        raise ValueError("max_hp must be positive")
    if hp <= 0:
        return "Dead"
    if hp >= max_hp:
        return "Healthy"
    ratio = hp / max_hp
    if ratio <= CRITICAL_AT_OR_BELOW:
        return "Critical"
    if ratio <= BLOODIED_AT_OR_BELOW:
        return "Bloodied"
    return "Injured"


@dataclass
class Skill:
    modifier: int
    proficient: bool = False


@dataclass
class AttackRef:
    name: str
    to_hit: int
    damage: DiceExpr
    damage_type: str

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "to_hit": self.to_hit,
            "damage": dice.format_expr(self.damage),
            "damage_type": self.damage_type,
        }


@dataclass
class Spellbook:
    spell_bonus: int = 0
    dc: int = 10
    spells: list[str] = field(default_factory=list)

    def knows(self, name: str) -> bool:
        return name.lower() in (s.lower() for s in self.spells)

    def to_dict(self) -> dict:
        return {"spell_bonus": self.spell_bonus, "dc": self.dc, "spells": list(self.spells)}


@dataclass
class StatBlock:
    name: str
    class_levels: list[tuple[str, int]] = field(default_factory=list)
    race: Optional[str] = None
    stats: dict[str, int] = field(default_factory=lambda: {a: 10 for a in ABILITIES})
    proficiency: int = 0
    skills: dict[str, Skill] = field(default_factory=dict)
    saves: dict[str, int] = field(default_factory=dict)
    resistances: set[str] = field(default_factory=set)
    immunities: set[str] = field(default_factory=set)
    attacks: list[AttackRef] = field(default_factory=list)
    spellbook: Spellbook = field(default_factory=Spellbook)
    actions: list[str] = field(default_factory=list)
    custom_counters: dict[str, tuple[int, int]] = field(default_factory=dict)
    armor_class: int = 10
    creature_type: str = "humanoid"
    description: Optional[str] = None

    def ability_mod(self, ability: str) -> int:
        return (self.stats.get(ability, 10) - 10) // 2

    def save_mod(self, ability: str) -> int:
        """Explicit save bonus when listed, else the raw ability modifier."""
        if ability in self.saves:
            return self.saves[ability]
        return self.ability_mod(ability)

    def skill_mod(self, skill: str) -> int:
        for name, entry in self.skills.items():
            if name.lower() == skill.lower():
                return entry.modifier
        ability = SKILL_ABILITIES.get(skill.title(), None)
        return self.ability_mod(ability) if ability else 0

    def find_attack(self, name: str) -> Optional[AttackRef]:
        for ref in self.attacks:
            if ref.name.lower() == name.lower():
                return ref
        return None

    def knows_action(self, name: str) -> bool:
        return name.lower() in (a.lower() for a in self.actions)

    def class_string(self) -> str:
        return "/".join(f"{cls} {lvl}" for cls, lvl in self.class_levels)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "class_levels": [[c, l] for c, l in self.class_levels],
            "race": self.race,
            "stats": dict(self.stats),
            "proficiency": self.proficiency,
            "skills": {
                k: {"modifier": v.modifier, "proficient": v.proficient}
                for k, v in self.skills.items()
            },
            "saves": dict(self.saves),
            "resistances": sorted(self.resistances),
            "immunities": sorted(self.immunities),
            "attacks": [a.to_dict() for a in self.attacks],
            "spellbook": self.spellbook.to_dict(),
            "actions": list(self.actions),
            "custom_counters": {k: {"current": c, "max": m} for k, (c, m) in self.custom_counters.items()},
            "armor_class": self.armor_class,
            "creature_type": self.creature_type,
            "description": self.description,
        }


def load_statblock(document: dict) -> StatBlock:
    """Build a StatBlock from its JSON document, validating every invariant.

    Raises SchemaError listing the paths of all offending fields.
    """
    problems: list[str] = []

    def fail(path: str, why: str):
        problems.append(f"{path}: {why}")

    if not isinstance(document, dict):
        raise SchemaError(["<root>: expected an object"])

    name = document.get("name")
    if not isinstance(name, str) or not name:
        fail("name", "required non-empty string")
        name = "?"

    class_levels: list[tuple[str, int]] = []
    for i, pair in enumerate(document.get("class_levels", []) or []):
        if (
            not isinstance(pair, (list, tuple))
            or len(pair) != 2
            or not isinstance(pair[0], str)
            or not isinstance(pair[1], int)
            or pair[1] < 1
        ):
            fail(f"class_levels[{i}]", "expected [class_name, level>=1]")
        else:
            class_levels.append((pair[0], pair[1]))

    race = document.get("race")
    if race is not None and not isinstance(race, str):
        fail("race", "expected string")
        race = None

    stats = {a: 10 for a in ABILITIES}
    for key, value in (document.get("stats") or {}).items():
        if key not in ABILITIES:
            fail(f"stats.{key}", "unknown ability")
        elif not isinstance(value, int):
            fail(f"stats.{key}", "expected integer")
        else:
            stats[key] = value

    proficiency = document.get("proficiency", 0)
    if not isinstance(proficiency, int) or proficiency < 0:
        fail("proficiency", "expected integer >= 0")
        proficiency = 0

    skills: dict[str, Skill] = {}
    for key, value in (document.get("skills") or {}).items():
        if isinstance(value, int):
            skills[key] = Skill(value)
        elif isinstance(value, dict) and isinstance(value.get("modifier"), int):
            skills[key] = Skill(value["modifier"], bool(value.get("proficient", False)))
        else:
            fail(f"skills.{key}", "expected integer or {modifier, proficient}")

    saves: dict[str, int] = {}
    for key, value in (document.get("saves") or {}).items():
        if key not in ABILITIES:
            fail(f"saves.{key}", "unknown ability")
        elif not isinstance(value, int):
            fail(f"saves.{key}", "expected integer")
        else:
            saves[key] = value

    resistances = set()
    immunities = set()
    for fname, target in (("resistances", resistances), ("immunities", immunities)):
        for i, entry in enumerate(document.get(fname) or []):
            if not isinstance(entry, str):
                fail(f"{fname}[{i}]", "expected string")
            else:
                target.add(entry.lower())

    attacks: list[AttackRef] = []
    for i, entry in enumerate(document.get("attacks") or []):
        path = f"attacks[{i}]"
        if not isinstance(entry, dict):
            fail(path, "expected object")
            continue
        aname = entry.get("name")
        to_hit = entry.get("to_hit", 0)
        dmg = entry.get("damage")
        dtype = entry.get("damage_type", "bludgeoning")
        ok = True
        if not isinstance(aname, str) or not aname:
            fail(f"{path}.name", "required non-empty string")
            ok = False
        if not isinstance(to_hit, int):
            fail(f"{path}.to_hit", "expected integer")
            ok = False
        expr = None
        if not isinstance(dmg, str):
            fail(f"{path}.damage", "expected dice expression string")
            ok = False
        else:
            try:
                expr = dice.parse_dice(dmg)
            except dice.DiceSyntaxError as exc:
                fail(f"{path}.damage", str(exc))
                ok = False
        if ok:
            attacks.append(AttackRef(aname, to_hit, expr, str(dtype)))

    spellbook = Spellbook()
    sb = document.get("spellbook")
    if sb is not None:
        if not isinstance(sb, dict):
            fail("spellbook", "expected object")
        else:
            bonus = sb.get("spell_bonus", 0)
            dc = sb.get("dc", 10)
            spells = sb.get("spells", [])
            if not isinstance(bonus, int):
                fail("spellbook.spell_bonus", "expected integer")
                bonus = 0
            if not isinstance(dc, int):
                fail("spellbook.dc", "expected integer")
                dc = 10
            if not isinstance(spells, list) or not all(isinstance(s, str) for s in spells):
                fail("spellbook.spells", "expected list of strings")
                spells = []
            spellbook = Spellbook(bonus, dc, list(spells))

    actions = []
    for i, entry in enumerate(document.get("actions") or []):
        if not isinstance(entry, str):
            fail(f"actions[{i}]", "expected string")
        else:
            actions.append(entry)

    counters: dict[str, tuple[int, int]] = {}
    for key, value in (document.get("custom_counters") or {}).items():
        path = f"custom_counters.{key}"
        if not isinstance(value, dict) or not isinstance(value.get("current"), int) or not isinstance(value.get("max"), int):
            fail(path, "expected {current, max} integers")
            continue
        cur, mx = value["current"], value["max"]
        if not 0 <= cur <= mx:
            fail(path, f"requires 0 <= current <= max, got {cur}/{mx}")
        else:
            counters[key] = (cur, mx)

    armor_class = document.get("armor_class", 10)
    if not isinstance(armor_class, int):
        fail("armor_class", "expected integer")
        armor_class = 10

    creature_type = document.get("creature_type", "humanoid")
    if not isinstance(creature_type, str):
        fail("creature_type", "expected string")
        creature_type = "humanoid"

    description = document.get("description")
    if description is not None and not isinstance(description, str):
        fail("description", "expected string")
        description = None

    if problems:
        raise SchemaError(problems)

    return StatBlock(
        name=name,
        class_levels=class_levels,
        race=race,
        stats=stats,
        proficiency=proficiency,
        skills=skills,
        saves=saves,
        resistances=resistances,
        immunities=immunities,
        attacks=attacks,
        spellbook=spellbook,
        actions=actions,
        custom_counters=counters,
        armor_class=armor_class,
        creature_type=creature_type,
        description=description,
    )


@dataclass
class ActiveEffect:
    name: str
    duration_rounds: Optional[int] = None  # decremented at the owner's turn end
    parent: Optional[tuple[str, str]] = None  # (owner combatant id, effect name)
    buttons: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "duration_rounds": self.duration_rounds,
            "parent": list(self.parent) if self.parent else None,
            "buttons": list(self.buttons),
        }

    @staticmethod
    def from_dict(d: dict) -> "ActiveEffect":
        parent = tuple(d["parent"]) if d.get("parent") else None
        return ActiveEffect(d["name"], d.get("duration_rounds"), parent, list(d.get("buttons", [])))


@dataclass
class Combatant:
    id: str
    statblock: StatBlock
    hp: int
    max_hp: int
    temp_hp: int = 0
    effects: list[ActiveEffect] = field(default_factory=list)
    initiative: int = 0
    controller: str = "dm"
    # Name from the imported character sheet when it differs from the roster
    # entry; attack/cast narration uses this, the roster keeps the id.
    sheet_name: Optional[str] = None

    @property
    def name(self) -> str:
        return self.id

    @property
    def mechanics_name(self) -> str:
        return self.sheet_name or self.id

    @property
    def health(self) -> str:
        return derive_health(self.hp, self.max_hp)

    def has_effect(self, name: str) -> bool:
        return any(e.name.lower() == name.lower() for e in self.effects)

    def get_effect(self, name: str) -> Optional[ActiveEffect]:
        for e in self.effects:
            if e.name.lower() == name.lower():
                return e
        return None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "statblock": self.statblock.to_dict(),
            "hp": self.hp,
            "max_hp": self.max_hp,
            "temp_hp": self.temp_hp,
            "effects": [e.to_dict() for e in self.effects],
            "initiative": self.initiative,
            "controller": self.controller,
            "sheet_name": self.sheet_name,
        }


def render_actor_line(c: Combatant) -> str:
    """One roster line: ``- <Name> (<Race-or-Kind>[; <Classes>]) <hp/max HP; State>[ [effects]]``."""
    kind = c.statblock.race or c.statblock.name or c.statblock.creature_type
    classes = c.statblock.class_string()
    paren = f"{kind}; {classes}" if classes else kind
    line = f"- {c.id} ({paren}) <{c.hp}/{c.max_hp} HP; {c.health}>"
    if c.effects:
        line += " [" + ", ".join(e.name for e in c.effects) + "]"
    return line


def apply_damage(c: Combatant, amount: int, damage_type: str, strict_types: bool = False) -> tuple[Combatant, int]:
    """Deal typed damage: immunity zeroes it, resistance halves it (rounded
    down), temporary HP absorbs first, and HP may go negative. Returns the
    combatant and the post-mitigation amount actually dealt."""
    if amount < 0:
        raise ValueError("damage amount must be >= 0")
    dtype = damage_type.lower()
    if strict_types and dtype not in DAMAGE_TYPES:
        raise UnknownDamageType(damage_type)
    if dtype in c.statblock.immunities:
        return c, 0
    if dtype in c.statblock.resistances:
        amount = amount // 2
    absorbed = min(c.temp_hp, amount)
    c.temp_hp -= absorbed
    c.hp -= amount - absorbed
    return c, amount


def apply_healing(c: Combatant, amount: int) -> int:
    """Restore HP up to max; returns the amount actually restored."""
    if amount < 0:
        raise ValueError("healing amount must be >= 0")
    before = c.hp
    c.hp = min(c.max_hp, c.hp + amount)
    return c.hp - before


def grant_temp_hp(c: Combatant, amount: int) -> int:
    """Temporary HP doesn't stack; the higher value wins."""
    c.temp_hp = max(c.temp_hp, amount)
    return c.temp_hp


@dataclass
class CombatState:
    combatants: list[Combatant]
    rng: DieSource
    turn_index: int = 0
    round: int = 1
    reserve: list[Combatant] = field(default_factory=list)
    ended: bool = False

    def __post_init__(self):
        seen = set()
        for c in self.combatants + self.reserve:
            key = c.id.lower()
            if key in seen:
                raise ValueError(f"duplicate combatant id {c.id!r}")
            seen.add(key)

    def current(self) -> Combatant:
        if not self.combatants:
            raise IndexError("combat has no combatants")
        return self.combatants[self.turn_index]

    def find(self, combatant_id: str) -> Optional[Combatant]:
        for c in self.combatants:
            if c.id.lower() == combatant_id.lower():
                return c
        return None

    def add_combatant(self, c: Combatant) -> None:
        """Insert and re-sort by initiative (descending); the only operation
        that reorders the list. Keeps the current combatant current."""
        current = self.combatants[self.turn_index] if self.combatants else None
        if self.find(c.id) is not None:
            raise ValueError(f"duplicate combatant id {c.id!r}")
        order = {id(x): i for i, x in enumerate(self.combatants)}
        self.combatants.append(c)
        self.combatants.sort(key=lambda x: (-x.initiative, order.get(id(x), len(order))))
        if current is not None:
            self.turn_index = self.combatants.index(current)

    def actor_lines(self) -> list[str]:
        return [render_actor_line(c) for c in self.combatants]

    def to_dict(self) -> dict:
        # The die source is deliberately not part of a snapshot: replay feeds
        # recorded faces instead of re-seeding an RNG.
        return {
            "combatants": [c.to_dict() for c in self.combatants],
            "turn_index": self.turn_index,
            "round": self.round,
            "reserve": [c.to_dict() for c in self.reserve],
            "ended": self.ended,
        }

    @staticmethod
    def from_dict(d: dict, rng: Optional[DieSource] = None) -> "CombatState":
        return CombatState(
            combatants=[_combatant_from_dict(cd) for cd in d["combatants"]],
            rng=rng if rng is not None else SeededSource(0),
            turn_index=d.get("turn_index", 0),
            round=d.get("round", 1),
            reserve=[_combatant_from_dict(cd) for cd in d.get("reserve", [])],
            ended=d.get("ended", False),
        )

    def clone(self, rng: Optional[DieSource] = None) -> "CombatState":
        return CombatState.from_dict(self.to_dict(), rng=rng)


def _combatant_from_dict(d: dict) -> Combatant:
    return Combatant(
        id=d["id"],
        statblock=load_statblock(d["statblock"]),
        hp=d["hp"],
        max_hp=d["max_hp"],
        temp_hp=d.get("temp_hp", 0),
        effects=[ActiveEffect.from_dict(e) for e in d.get("effects", [])],
        initiative=d.get("initiative", 0),
        controller=d.get("controller", "dm"),
        sheet_name=d.get("sheet_name"),
    )


def load_statblocks_file(path) -> list[StatBlock]:
    """Load stat blocks from a file holding either one JSON document (object
    or array) or UTF-8 line-delimited JSON, one block per line."""
    import json

    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    stripped = text.lstrip()
    if stripped.startswith("["):
        docs = json.loads(text)
    else:
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if len(lines) > 1:
            docs = [json.loads(ln) for ln in lines]
        else:
            doc = json.loads(text)
            docs = doc if isinstance(doc, list) else [doc]
    return [load_statblock(d) for d in docs]


def load_party(document: dict, rng: DieSource) -> CombatState:
    """Build a CombatState from a party fixture document."""
    if not isinstance(document, dict) or "combatants" not in document:
        raise SchemaError(["combatants: required list"])
    combatants = []
    problems: list[str] = []
    for i, entry in enumerate(document["combatants"]):
        try:
            combatants.append(_party_member(entry))
        except SchemaError as exc:
            problems.extend(f"combatants[{i}].{p}" for p in exc.problems)
    reserve = []
    for i, entry in enumerate(document.get("reserve", [])):
        try:
            reserve.append(_party_member(entry))
        except SchemaError as exc:
            problems.extend(f"reserve[{i}].{p}" for p in exc.problems)
    if problems:
        raise SchemaError(problems)
    combatants.sort(key=lambda c: -c.initiative)
    return CombatState(
        combatants=combatants,
        rng=rng,
        turn_index=document.get("turn_index", 0),
        round=document.get("round", 1),
        reserve=reserve,
    )


def _party_member(entry: dict) -> Combatant:
    if not isinstance(entry, dict) or "statblock" not in entry:
        raise SchemaError(["statblock: required object"])
    sb = load_statblock(entry["statblock"])
    max_hp = entry.get("max_hp")
    if not isinstance(max_hp, int) or max_hp <= 0:
        raise SchemaError(["max_hp: required positive integer"])
    hp = entry.get("hp", max_hp)
    if not isinstance(hp, int) or hp > max_hp:
        raise SchemaError(["hp: must be an integer <= max_hp"])
    effects = [
        ActiveEffect(
            e["name"],
            e.get("duration_rounds"),
            tuple(e["parent"]) if e.get("parent") else None,
            list(e.get("buttons", [])),
        )
        for e in entry.get("effects", [])
    ]
    return Combatant(
        id=entry.get("id", sb.name),
        statblock=sb,
        hp=hp,
        max_hp=max_hp,
        temp_hp=entry.get("temp_hp", 0),
        effects=effects,
        initiative=entry.get("initiative", 0),
        controller=entry.get("controller", "dm"),
        sheet_name=entry.get("sheet_name"),
    )


# --- state deltas ---------------------------------------------------------

_COMBATANT_FIELDS = ("hp", "max_hp", "temp_hp", "effects", "initiative")
_COMBAT_FIELDS = ("turn_index", "round", "ended")


def diff_states(pre: dict, post: dict) -> list[dict]:
    """Field-level difference between two state snapshots, suitable for logs.

    Each entry is {"id": combatant_id_or_None, "field", "old", "new"};
    combat-level fields use id None. Added combatants appear as a single
    "added" entry carrying the full snapshot.
    """
    delta: list[dict] = []
    pre_by_id = {c["id"]: c for c in pre["combatants"]}
    post_by_id = {c["id"]: c for c in post["combatants"]}
    for cid, post_c in post_by_id.items():
        pre_c = pre_by_id.get(cid)
        if pre_c is None:
            delta.append({"id": cid, "field": "added", "old": None, "new": post_c})
            continue
        for f in _COMBATANT_FIELDS:
            if pre_c.get(f) != post_c.get(f):
                delta.append({"id": cid, "field": f, "old": pre_c.get(f), "new": post_c.get(f)})
    for cid in pre_by_id:
        if cid not in post_by_id:
            delta.append({"id": cid, "field": "removed", "old": pre_by_id[cid], "new": None})
    pre_order = [c["id"] for c in pre["combatants"]]
    post_order = [c["id"] for c in post["combatants"]]
    if pre_order != post_order:
        delta.append({"id": None, "field": "order", "old": pre_order, "new": post_order})
    for f in _COMBAT_FIELDS:
        if pre.get(f) != post.get(f):
            delta.append({"id": None, "field": f, "old": pre.get(f), "new": post.get(f)})
    pre_reserve = [c["id"] for c in pre.get("reserve", [])]
    post_reserve = [c["id"] for c in post.get("reserve", [])]
    if pre_reserve != post_reserve:
        delta.append({"id": None, "field": "reserve", "old": pre_reserve, "new": post_reserve})
    return delta


def apply_delta(pre: dict, delta: list[dict]) -> dict:
    """Apply a diff_states() delta to a pre-state snapshot; returns the
    post-state snapshot. Inverse check for delta soundness."""
    import copy

    post = copy.deepcopy(pre)
    by_id = {c["id"]: c for c in post["combatants"]}
    for entry in delta:
        cid, fname = entry["id"], entry["field"]
        if cid is None:
            if fname == "order":
                by_order = {c["id"]: c for c in post["combatants"]}
                post["combatants"] = [by_order[i] for i in entry["new"]]
            elif fname == "reserve":
                post["reserve"] = [c for c in post.get("reserve", []) if c["id"] in entry["new"]]
            else:
                post[fname] = entry["new"]
        elif fname == "added":
            post["combatants"].append(copy.deepcopy(entry["new"]))
            by_id[cid] = post["combatants"][-1]
        elif fname == "removed":
            post["combatants"] = [c for c in post["combatants"] if c["id"] != cid]
            by_id.pop(cid, None)
        else:
            by_id[cid][fname] = copy.deepcopy(entry["new"])
    return post
