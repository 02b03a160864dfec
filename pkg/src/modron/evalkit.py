"""Score predicted commands and narrations against a pluggable predictor.

Command predictions get three treatments: *pass rate* (does the command
execute at all), *unit scenarios* (does executing it produce the asserted
state change), and token metrics. Narrations get LCS-based rouge_l. The
predictor interface is a single ``predict(prompt) -> str`` method;
deterministic stubs cover offline use and a small HTTP gateway forwards to a
remote completion endpoint configured by MODEL_API_URL / MODEL_API_KEY.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Optional, Sequence

from . import dice, engine, state as state_mod
from .content import ContentError, ContentIndex
from .dice import DiceError, SeededSource
from .engine import EngineError, ExecutionReport
from .prompts import render_utt2cmd
from .state import CombatState, load_party


class PredictorUnavailable(Exception):
    pass


class ScenarioFixtureError(Exception):
    pass


# --- token metrics -----------------------------------------------------------


def tokenize_text(text: str) -> list[str]:
    """Whitespace split, case kept; command flags count as tokens."""
    return text.split()


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        row = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                row.append(prev[j - 1] + 1)
            else:
                row.append(max(prev[j], row[-1]))
        prev = row
    return prev[-1]


def rouge_l(reference: Sequence[str], hypothesis: Sequence[str]) -> float:
    """Longest-common-subsequence F1 over token sequences."""
    if not reference and not hypothesis:
        return 1.0
    if not reference or not hypothesis:
        return 0.0
    lcs = _lcs_length(reference, hypothesis)
    if lcs == 0:
        return 0.0
    precision = lcs / len(hypothesis)
    recall = lcs / len(reference)
    return 2 * precision * recall / (precision + recall)


def _ngram_counts(tokens: Sequence[str], max_n: int) -> Counter:
    counts: Counter = Counter()
    for n in range(1, max_n + 1):
        for i in range(len(tokens) - n + 1):
            counts[tuple(tokens[i : i + n])] += 1
    return counts


def sentence_gleu(reference: Sequence[str], hypothesis: Sequence[str], max_n: int = 4) -> float:
    """Sentence-level n-gram GLEU: pool 1..4-gram counts from both sides,
    then take min(precision, recall) of the clipped overlap."""
    if not reference and not hypothesis:
        return 1.0
    if not reference or not hypothesis:
        return 0.0
    ref_counts = _ngram_counts(reference, max_n)
    hyp_counts = _ngram_counts(hypothesis, max_n)
    overlap = sum(min(count, ref_counts[gram]) for gram, count in hyp_counts.items())
    precision = overlap / sum(hyp_counts.values())
    recall = overlap / sum(ref_counts.values())
    return min(precision, recall)


# --- predictors --------------------------------------------------------------


class GoldPredictor:
    """Returns the recorded gold command for a known prompt (exact match,
    falling back to the prompt's trailing utterance block)."""

    def __init__(self, gold_by_prompt: dict[str, str], gold_by_utterance: Optional[dict[str, str]] = None):
        self.gold_by_prompt = dict(gold_by_prompt)
        self.gold_by_utterance = dict(gold_by_utterance or {})

    @staticmethod
    def for_scenarios(scenarios: Iterable["UnitScenario"], index: ContentIndex) -> "GoldPredictor":
        by_prompt = {}
        by_utterance = {}
        for scenario in scenarios:
            by_prompt[scenario.prompt()] = scenario.gold
            by_utterance[scenario.utterance] = scenario.gold
        return GoldPredictor(by_prompt, by_utterance)

    def predict(self, prompt: str) -> str:
        if prompt in self.gold_by_prompt:
            return self.gold_by_prompt[prompt]
        tail = prompt.rsplit("\n\n", 1)[-1]
        for utterance, gold in self.gold_by_utterance.items():
            if utterance and utterance in tail:
                return gold
        raise PredictorUnavailable("no gold command recorded for this prompt")


class CorruptingPredictor:
    """Wraps a predictor; with probability p emits a command that cannot
    execute. Deterministic for a fixed seed."""

    def __init__(self, inner, p: float, seed: int = 0):
        self.inner = inner
        self.p = p
        self.rng = random.Random(seed)

    def predict(self, prompt: str) -> str:
        text = self.inner.predict(prompt)
        if self.rng.random() < self.p:
            junk = "".join(self.rng.choice("qxzvkj") for _ in range(8))
            return f"!{junk}"
        return text


class WrongTargetPredictor:
    """Returns the gold command but re-aims every target at one systematically
    wrong (but existing) combatant, so execution succeeds and the state
    assertions fail."""

    def __init__(self, scenarios: Iterable["UnitScenario"]):
        self.by_prompt = {s.prompt(): s for s in scenarios}

    def predict(self, prompt: str) -> str:
        scenario = self.by_prompt.get(prompt)
        if scenario is None:
            raise PredictorUnavailable("unknown scenario prompt")
        combat = scenario.build_state()
        gold_targets = {t.lower() for t in engine.parse_text(scenario.gold).targets}
        wrong = None
        for c in combat.combatants:
            if c.id.lower() in gold_targets or c.id == scenario.caster:
                continue
            wrong = c.id
            break
        if wrong is None:
            wrong = scenario.caster  # two-combatant fights: aim at yourself
        tokens = scenario.gold.split()
        out = []
        i = 0
        replaced = False
        while i < len(tokens):
            if tokens[i] == "-t" and i + 1 < len(tokens):
                if not replaced:
                    out.extend(["-t", f'"{wrong}"' if " " in wrong else wrong])
                    replaced = True
                i += 2
            else:
                out.append(tokens[i])
                i += 1
        if not replaced:
            out.extend(["-t", f'"{wrong}"' if " " in wrong else wrong])
        return " ".join(out)


class GatewayPredictor:
    """POSTs {"prompt": ...} to a completion endpoint and expects
    {"completion": ...} back."""

    def __init__(self, url: Optional[str] = None, api_key: Optional[str] = None, timeout: float = 30.0):
        self.url = url or os.environ.get("MODEL_API_URL")
        self.api_key = api_key or os.environ.get("MODEL_API_KEY")
        self.timeout = timeout
        if not self.url:
            raise PredictorUnavailable("MODEL_API_URL is not configured")

    def predict(self, prompt: str) -> str:
        import httpx

        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = httpx.post(self.url, json={"prompt": prompt}, headers=headers, timeout=self.timeout)
            response.raise_for_status()
            return response.json()["completion"]
        except Exception as exc:  # connection, HTTP status, or payload shape
            raise PredictorUnavailable(str(exc)) from exc


def make_predictor(kind: str, scenarios=None, index=None, **kwargs):
    if kind == "gold":
        return GoldPredictor.for_scenarios(scenarios or [], index)
    if kind == "wrong-target":
        return WrongTargetPredictor(scenarios or [])
    if kind == "corrupt":
        inner = GoldPredictor.for_scenarios(scenarios or [], index)
        return CorruptingPredictor(inner, kwargs.get("p", 0.3), kwargs.get("seed", 0))
    if kind == "external":
        return GatewayPredictor(timeout=kwargs.get("timeout", 30.0))
    raise ValueError(f"unknown predictor kind {kind!r}")


# --- pass rate ---------------------------------------------------------------


def _state_fingerprint(combat: CombatState) -> str:
    return hashlib.sha256(json.dumps(combat.to_dict(), sort_keys=True).encode()).hexdigest()


def try_execute(text: str, combat: CombatState, caster_id: str, index: ContentIndex):
    """Run one command on a sandboxed clone. Returns (ok, report_or_error,
    post_state). Player-caused failures are data, not exceptions."""
    fingerprint = _state_fingerprint(combat)
    sandbox = combat.clone(rng=combat.rng)
    try:
        report = engine.execute_text(sandbox, caster_id, text, index)
        ok, result = True, report
    except (EngineError, ContentError, DiceError, state_mod.SchemaError) as exc:
        ok, result = False, exc
    if _state_fingerprint(combat) != fingerprint:
        raise RuntimeError("scoring mutated the input fixture")
    return ok, result, sandbox


def pass_rate(
    items: Iterable[tuple[str, CombatState, str]],
    index: ContentIndex,
    seed: int = 0,
) -> tuple[float, list[dict]]:
    """Fraction of (command text, state, caster) items that execute without
    error. Each item runs on a fresh clone with its own seeded dice."""
    per_item = []
    passes = 0
    total = 0
    for i, (text, combat, caster_id) in enumerate(items):
        sandbox_src = combat.clone(rng=SeededSource(seed + i))
        ok, result, _ = try_execute(text, sandbox_src, caster_id, index)
        per_item.append({"text": text, "ok": ok, "error": None if ok else str(result)})
        passes += ok
        total += 1
    return (passes / total if total else 0.0), per_item


# --- unit scenarios ------------------------------------------------------------


PREDICATES = ("hp_decreased", "hp_equals", "has_effect", "effect_absent", "targets_exactly")


@dataclass
class UnitAssertion:
    predicate: str
    combatant: Optional[str] = None
    value: Optional[int] = None
    effect: Optional[str] = None
    ids: Optional[list[str]] = None

    @staticmethod
    def from_dict(d: dict) -> "UnitAssertion":
        if d.get("predicate") not in PREDICATES:
            raise ScenarioFixtureError(f"unknown predicate {d.get('predicate')!r}")
        return UnitAssertion(
            predicate=d["predicate"],
            combatant=d.get("combatant"),
            value=d.get("value"),
            effect=d.get("effect"),
            ids=d.get("ids"),
        )

    def to_dict(self) -> dict:
        out = {"predicate": self.predicate}
        if self.combatant is not None:
            out["combatant"] = self.combatant
        if self.value is not None:
            out["value"] = self.value
        if self.effect is not None:
            out["effect"] = self.effect
        if self.ids is not None:
            out["ids"] = self.ids
        return out

    def check(self, pre: CombatState, post: CombatState, report: ExecutionReport) -> bool:
        if self.predicate == "targets_exactly":
            # the command's own -t list, resolved; self-targeting automation
            # (e.g. Second Wind) doesn't count as aiming at anyone
            actual = {t.lower() for t in engine.resolve_targets(report.ast, post)}
            return actual == {i.lower() for i in self.ids or []}
        before = pre.find(self.combatant)
        after = post.find(self.combatant)
        if before is None or after is None:
            return False
        if self.predicate == "hp_decreased":
            return after.hp < before.hp
        if self.predicate == "hp_equals":
            return after.hp == self.value
        if self.predicate == "has_effect":
            return after.has_effect(self.effect)
        if self.predicate == "effect_absent":
            return not after.has_effect(self.effect)
        return False


@dataclass
class UnitScenario:
    id: str
    title: str
    party: dict
    caster: str
    utterance: str
    gold: str
    seed: int = 0
    assertions: list[UnitAssertion] = field(default_factory=list)
    must_fail: list[str] = field(default_factory=list)
    remove_spells: dict[str, list[str]] = field(default_factory=dict)

    @staticmethod
    def from_dict(doc: dict) -> "UnitScenario":
        try:
            scenario = UnitScenario(
                id=doc["id"],
                title=doc.get("title", doc["id"]),
                party=doc["party"],
                caster=doc["caster"],
                utterance=doc["utterance"],
                gold=doc["gold"],
                seed=doc.get("seed", 0),
                assertions=[UnitAssertion.from_dict(a) for a in doc.get("assertions", [])],
                must_fail=list(doc.get("must_fail", [])),
                remove_spells=dict(doc.get("remove_spells", {})),
            )
        except KeyError as exc:
            raise ScenarioFixtureError(f"scenario missing field {exc}") from exc
        scenario.validate()
        return scenario

    def validate(self) -> None:
        combat = self.build_state()
        if combat.find(self.caster) is None:
            raise ScenarioFixtureError(f"{self.id}: caster {self.caster!r} not in party")
        for assertion in self.assertions:
            named = [assertion.combatant] if assertion.combatant else []
            named += assertion.ids or []
            for cid in named:
                if combat.find(cid) is None:
                    raise ScenarioFixtureError(f"{self.id}: assertion references unknown combatant {cid!r}")

    def build_state(self) -> CombatState:
        combat = load_party(self.party, SeededSource(self.seed))
        for cid, spells in self.remove_spells.items():
            combatant = combat.find(cid)
            if combatant is None:
                raise ScenarioFixtureError(f"{self.id}: remove_spells references unknown combatant {cid!r}")
            gone = {s.lower() for s in spells}
            book = combatant.statblock.spellbook
            book.spells = [s for s in book.spells if s.lower() not in gone]
        return combat

    def prompt(self) -> str:
        combat = self.build_state()
        return render_utt2cmd(combat, combat.find(self.caster), [self.utterance])

    def run_command(self, text: str, index: ContentIndex):
        """Execute text on a fresh scenario state; returns (passed, detail)."""
        combat = self.build_state()
        pre = combat.clone(rng=SeededSource(self.seed))
        ok, result, post = try_execute(text, combat, self.caster, index)
        if not ok:
            return False, str(result)
        failed = [a.to_dict() for a in self.assertions if not a.check(pre, post, result)]
        return (not failed), (failed or "ok")


def load_scenario_file(path) -> UnitScenario:
    with open(path, encoding="utf-8") as fh:
        return UnitScenario.from_dict(json.load(fh))


def bundled_scenarios() -> list[UnitScenario]:
    root = resources.files("modron.data").joinpath("scenarios")
    scenarios = []
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".json"):
            doc = json.loads(entry.read_text("utf-8"))
            doc.setdefault("party", _party_ref(doc))
            scenarios.append(UnitScenario.from_dict(doc))
    return scenarios


def _party_ref(doc: dict) -> dict:
    ref = doc.get("party_ref")
    if not ref:
        raise ScenarioFixtureError(f"scenario {doc.get('id')}: needs party or party_ref")
    data = resources.files("modron.data").joinpath(f"parties/{ref}.json").read_text("utf-8")
    return json.loads(data)


def run_unit_tests(
    scenarios: Sequence[UnitScenario],
    predictor,
    index: ContentIndex,
    n: int = 10,
) -> tuple[float, list[dict]]:
    """Sample n commands per scenario, deduplicate, execute each unique
    command on a fresh clone, and assert on the post-state. The score is the
    fraction of *generations* whose command passed every assertion."""
    details = []
    passing = 0
    total = 0
    for scenario in scenarios:
        prompt = scenario.prompt()
        generations = [predictor.predict(prompt) for _ in range(n)]
        outcome_by_command: dict[str, tuple[bool, object]] = {}
        for text in dict.fromkeys(generations):  # unique, order kept
            outcome_by_command[text] = scenario.run_command(text, index)
        scenario_pass = sum(1 for g in generations if outcome_by_command[g][0])
        must_fail_ok = all(not scenario.run_command(t, index)[0] for t in scenario.must_fail)
        details.append(
            {
                "id": scenario.id,
                "passed": scenario_pass,
                "total": n,
                "unique_commands": list(outcome_by_command),
                "must_fail_ok": must_fail_ok,
                "outcomes": {t: outcome_by_command[t][1] for t in outcome_by_command},
            }
        )
        passing += scenario_pass
        total += n
    return (passing / total if total else 0.0), details


# --- aggregate report ----------------------------------------------------------


@dataclass
class EvalReport:
    pass_rate: Optional[float] = None
    unit_pass: Optional[float] = None
    sgleu: Optional[float] = None
    rouge_l: Optional[float] = None
    per_item: list[dict] = field(default_factory=list)
    # computed externally when at all; kept so reports can carry them through
    perplexity: Optional[float] = None
    bertscore: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "pass_rate": self.pass_rate,
            "unit_pass": self.unit_pass,
            "sgleu": self.sgleu,
            "rouge_l": self.rouge_l,
            "perplexity": self.perplexity,
            "bertscore": self.bertscore,
            "per_item": self.per_item,
        }

    def table(self) -> str:
        rows = [
            ("Pass Rate", self.pass_rate),
            ("Unit Tests", self.unit_pass),
            ("SGleu", self.sgleu),
            ("RougeL", self.rouge_l),
        ]
        lines = []
        for label, value in rows:
            shown = "-" if value is None else f"{value:.3f}"
            lines.append(f"{label:<10} {shown}")
        return "\n".join(lines)


def score_text_metrics(pairs: Iterable[tuple[str, str]]) -> EvalReport:
    """Mean sentence GLEU and rouge_l over (reference, hypothesis) pairs."""
    per_item = []
    for reference, hypothesis in pairs:
        ref_tokens = tokenize_text(reference)
        hyp_tokens = tokenize_text(hypothesis)
        per_item.append(
            {
                "reference": reference,
                "hypothesis": hypothesis,
                "sgleu": sentence_gleu(ref_tokens, hyp_tokens),
                "rouge_l": rouge_l(ref_tokens, hyp_tokens),
            }
        )
    if not per_item:
        return EvalReport(sgleu=0.0, rouge_l=0.0)
    return EvalReport(
        sgleu=sum(i["sgleu"] for i in per_item) / len(per_item),
        rouge_l=sum(i["rouge_l"] for i in per_item) / len(per_item),
        per_item=per_item,
    )
