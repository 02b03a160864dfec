"""Shared fixtures: bundled parties, scenes, and content."""

import json
from importlib import resources
from pathlib import Path

import pytest

from modron import dice, state
from modron.content import load_starter_pack

FIXTURES = Path(__file__).parent / "fixtures"
GOLDENS = Path(__file__).parent / "goldens"


def party_doc(name: str) -> dict:
    data = resources.files("modron.data").joinpath(f"parties/{name}.json").read_text("utf-8")
    return json.loads(data)


def load_combat(name: str, seed: int = 0, rng=None) -> state.CombatState:
    return state.load_party(party_doc(name), rng if rng is not None else dice.SeededSource(seed))


def scene(name: str) -> dict:
    return json.loads((FIXTURES / f"{name}_scene.json").read_text("utf-8"))


def golden(name: str) -> str:
    return (GOLDENS / f"{name}_prompt.txt").read_text("utf-8")


@pytest.fixture(scope="session")
def pack():
    return load_starter_pack()


@pytest.fixture(scope="module")
def live_server():
    """Real uvicorn server on an ephemeral port, for streaming tests."""
    import socket
    import threading
    import time

    import uvicorn

    from modron.service import AppConfig, create_app

    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()

    config = uvicorn.Config(create_app(AppConfig()), host="127.0.0.1", port=port, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("server did not start")
        time.sleep(0.01)
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=5)


# --- fuzz-session helpers (shared by the eventlog and acceptance suites) ----

FUZZ_PARTY = {
    "name": "fuzz-skirmish",
    "combatants": [
        {
            "id": "Ash",
            "statblock": {
                "name": "Ash",
                "race": "Human",
                "class_levels": [["Fighter", 5]],
                "stats": {"str": 16, "dex": 12, "con": 14, "int": 10, "wis": 12, "cha": 10},
                "proficiency": 3,
                "attacks": [
                    {"name": "Greataxe", "to_hit": 6, "damage": "1d12+3", "damage_type": "slashing"},
                    {"name": "Longbow", "to_hit": 4, "damage": "1d8+1", "damage_type": "piercing"},
                ],
                "actions": ["Second Wind"],
                "armor_class": 17,
            },
            "max_hp": 44,
            "initiative": 18,
            "controller": "player:ash",
        },
        {
            "id": "Brin",
            "statblock": {
                "name": "Brin",
                "race": "Gnome",
                "class_levels": [["Cleric", 5]],
                "stats": {"str": 10, "dex": 12, "con": 12, "int": 10, "wis": 16, "cha": 12},
                "proficiency": 3,
                "attacks": [{"name": "Mace", "to_hit": 3, "damage": "1d6", "damage_type": "bludgeoning"}],
                "spellbook": {"spell_bonus": 6, "dc": 14,
                              "spells": ["Fireball", "Healing Word", "Sacred Flame", "Cause Fear"]},
                "armor_class": 15,
            },
            "max_hp": 33,
            "initiative": 14,
            "controller": "player:brin",
        },
        {
            "id": "GN1",
            "statblock": {
                "name": "Gnoll",
                "stats": {"str": 14, "dex": 12, "con": 11, "int": 6, "wis": 10, "cha": 7},
                "proficiency": 2,
                "attacks": [{"name": "Bite", "to_hit": 4, "damage": "1d4+2", "damage_type": "piercing"}],
                "armor_class": 15,
                "creature_type": "humanoid",
            },
            "max_hp": 22,
            "initiative": 11,
            "controller": "dm",
        },
        {
            "id": "GN2",
            "statblock": {
                "name": "Gnoll",
                "stats": {"str": 14, "dex": 12, "con": 11, "int": 6, "wis": 10, "cha": 7},
                "proficiency": 2,
                "attacks": [{"name": "Bite", "to_hit": 4, "damage": "1d4+2", "damage_type": "piercing"}],
                "armor_class": 15,
                "creature_type": "humanoid",
            },
            "max_hp": 22,
            "initiative": 8,
            "controller": "dm",
        },
    ],
}


def run_fuzz_session(seed: int, n_commands: int, pack, data_dir=None):
    """Drive a seeded random session; returns (session, commands_run)."""
    import random

    from modron.session import CombatSession

    rng = random.Random(seed)
    session = CombatSession.create(
        FUZZ_PARTY, pack, seed=seed, combat_id=f"fuzz-{seed}", data_dir=data_dir, dm="dm"
    )
    monsters = ["GN1", "GN2"]
    ran = 0
    while ran < n_commands:
        roll = rng.random()
        if roll < 0.25:
            text, caster = "!i next", None
        elif roll < 0.45:
            target = rng.choice(monsters + ["Ash"])
            weapon = rng.choice(["greataxe", "longbow"])
            flag = rng.choice(["", " adv", " dis", " -rr 2"])
            text, caster = f"!a {weapon} -t {target}{flag}", "Ash"
        elif roll < 0.6:
            targets = " ".join(f"-t {t}" for t in rng.sample(monsters, rng.randint(1, 2)))
            flag = rng.choice(["", " sadv", " sdis", " -dc 13"])
            text, caster = f"!cast fireball {targets}{flag}", "Brin"
        elif roll < 0.7:
            text, caster = '!cast "healing word" -t ash', "Brin"
        elif roll < 0.78:
            text, caster = '!cast "cause fear" -t gn1 sadv', "Brin"
        elif roll < 0.86:
            text, caster = f"!roll {rng.randint(1, 4)}d{rng.choice([6, 8, 20])}+{rng.randint(0, 5)}", None
        elif roll < 0.92:
            text, caster = "!check perception -dc 12", "Ash"
        else:
            text, caster = "!save wis -dc 13", "Brin"
        author = "dm" if caster is None else f"player:{caster.lower()}"
        pre = session.state.to_dict()
        report, _ = session.command(text, author_id=author, as_id=caster)
        # delta soundness holds on every execution the fuzz drives
        assert state.apply_delta(pre, report.state_delta) == session.state.to_dict()
        ran += 1
        if rng.random() < 0.3:
            session.message(author, rng.choice([
                "The gnolls cackle and circle closer, hungry for a kill tonight.",
                "Ash plants his boots and raises the axe over his head.",
                "Brin mutters a prayer while fumbling for the holy symbol.",
                "ok brb",
                "Dust and blood hang in the torchlight as the fight grinds on.",
            ]))
    return session, ran
