"""Render task prompts from combat state, byte for byte.

Two prompt families:

* command prediction -- actor roster, the acting character's sheet, then the
  roleplay that motivates the command;
* narration -- recent chat history, roster, target list, the caster's
  description and sheet, then the plain-text mechanical lines of what the
  command did.

Rendering is pure: the same structured inputs always produce the same bytes.
Actor lines always come from state.render_actor_line, never re-derived here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

from .engine import ExecutionReport
from .state import Combatant, CombatState, render_actor_line

# Sheet sections in the order recorded prompts usually show them. Individual
# recordings vary (some put Actions before Spells); pass ``sheet_order`` to
# match a specific transcript.
DEFAULT_SHEET_ORDER = ("attacks", "spells", "actions", "effects")

VARIANTS = ("FULL", "SHORT", "COMMAND", "DIALOG")


@dataclass
class PromptRecord:
    task: str  # "utt2cmd" | "sta2nar"
    prompt: str
    completion: Optional[str] = None
    source: Optional[str] = None  # "<combat_id>#<command seq>"

    def to_dict(self) -> dict:
        return {"task": self.task, "prompt": self.prompt, "completion": self.completion, "source": self.source}

    @staticmethod
    def from_dict(d: dict) -> "PromptRecord":
        return PromptRecord(d["task"], d["prompt"], d.get("completion"), d.get("source"))


def _sheet_block(caster: Combatant, sheet_order: Sequence[str]) -> list[str]:
    sb = caster.statblock
    lines = [f"Name: {caster.id}"]
    classes = sb.class_string()
    if classes:
        lines.append(f"Class: {classes}")
    if sb.race:
        lines.append(f"Race: {sb.race}")
    sections = {
        "attacks": [a.name for a in sb.attacks],
        "spells": list(sb.spellbook.spells),
        "actions": list(sb.actions),
        "effects": [e.name for e in caster.effects],
    }
    labels = {"attacks": "Attacks", "spells": "Spells", "actions": "Actions", "effects": "Effects"}
    for key in sheet_order:
        names = sections.get(key, [])
        if names:
            lines.append(f"{labels[key]}: " + ", ".join(names))
    return lines


def render_utt2cmd(
    state: CombatState,
    caster: Combatant,
    utterances: Sequence[str],
    sheet_order: Sequence[str] = DEFAULT_SHEET_ORDER,
) -> str:
    """Command-prediction prompt: roster, the caster's sheet, the roleplay."""
    parts = ["Actors:"]
    parts.extend(render_actor_line(c) for c in state.combatants)
    parts.append("")
    parts.append("Current:")
    parts.extend(_sheet_block(caster, sheet_order))
    if utterances:
        parts.append("")
        parts.extend(utterances)
    return "\n".join(parts)


HistoryEntry = Union[dict, tuple]


def _history_lines(history: Iterable[HistoryEntry]) -> list[str]:
    lines = ["History:"]
    for entry in history:
        if isinstance(entry, dict):
            speaker, content = entry.get("speaker"), entry["content"]
        else:
            speaker, content = entry
        if speaker:
            lines.append(f"{speaker}: {content}")
        else:
            lines.append("")
            lines.append(content)
    return lines


def render_mechanical_lines(report: ExecutionReport) -> list[str]:
    """The templated result lines of an executed report (title, attack
    hit/miss, save outcomes, gained/lost effects)."""
    return list(report.mechanical_lines)


def render_sta2nar(
    history: Sequence[HistoryEntry],
    state: CombatState,
    targets: Sequence[str],
    caster: Combatant,
    results: Union[ExecutionReport, Sequence[str]],
    variant: str = "FULL",
    sheet_order: Sequence[str] = DEFAULT_SHEET_ORDER,
) -> str:
    """Narration prompt in one of four shapes.

    FULL carries everything: history, roster, targets, caster description and
    sheet, mechanical lines. SHORT is history plus the mechanical lines.
    DIALOG is history alone; COMMAND is the raw command text alone.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if isinstance(results, ExecutionReport):
        mech_lines = render_mechanical_lines(results)
        command_text = results.command_text or ""
    else:
        mech_lines = list(results)
        command_text = ""

    if variant == "COMMAND":
        return command_text
    parts = _history_lines(history)
    if variant == "DIALOG":
        return "\n".join(parts)
    if variant == "SHORT":
        parts.append("")
        parts.extend(mech_lines)
        return "\n".join(parts)

    parts.append("---")
    parts.append("")
    parts.append("Actors:")
    parts.extend(render_actor_line(c) for c in state.combatants)
    parts.append("")
    parts.append("Targets:")
    for target_id in targets:
        target = state.find(target_id)
        parts.append(render_actor_line(target))
    parts.append("")
    description = caster.statblock.description or ""
    separator = "" if description.startswith("\n") else " "
    parts.append(f"Description:{separator}{description}")
    parts.append("---")
    parts.extend(_sheet_block(caster, sheet_order))
    parts.append("")
    parts.extend(mech_lines)
    return "\n".join(parts)


# --- building records from session logs --------------------------------------


def build_prompt_records(events, triples, history_window: int = 5) -> list[PromptRecord]:
    """Turn a session log plus its distilled triples into prompt records.

    Command-prediction records use the state just before the first command of
    the triple and its preceding utterances; narration records use the state
    just after the last command, the last five chat messages before the
    block, and the recorded mechanical lines, with the first following
    utterance as the gold narration.
    """
    from .state import CombatState as CS

    events = list(events)
    by_seq = {e.seq: e for e in events}

    # state snapshot in effect *before* each event seq
    initial = None
    for event in events:
        if event.event_type == "combat_start":
            initial = event.payload["initial_state"]
            break
    if initial is None:
        return []
    state_before: dict[int, dict] = {}
    current = initial
    for event in events:
        state_before[event.seq] = current
        if event.event_type == "combat_state_update":
            current = event.payload["state"]
    final_state = current

    def state_after(seq: int) -> dict:
        following = [e for e in events if e.seq > seq]
        for e in following:
            if e.event_type == "combat_state_update":
                return e.payload["state"]
            if e.event_type == "command":
                break
        return state_before.get(seq, final_state)

    records: list[PromptRecord] = []
    for triple in triples:
        first = triple.command_events[0]
        last = triple.command_events[-1]
        caster_id = first.caster_id
        pre_state = CS.from_dict(state_before[first.seq])
        caster = pre_state.find(caster_id)
        if caster is None:
            continue
        source = f"{triple.combat_id}#{first.seq}"

        if triple.preceding:
            prompt = render_utt2cmd(pre_state, caster, [u.content for u in triple.preceding])
            records.append(PromptRecord("utt2cmd", prompt, completion=first.text, source=source))

        if triple.following:
            post_seq = last.update_seq or last.seq
            post_state = CS.from_dict(
                by_seq[post_seq].payload["state"]
                if post_seq in by_seq and by_seq[post_seq].event_type == "combat_state_update"
                else state_after(last.seq)
            )
            post_caster = post_state.find(caster_id) or caster
            history = [
                {"speaker": e.payload["author_id"], "content": e.payload["content"]}
                for e in events
                if e.event_type == "message" and e.seq < first.seq
            ][-history_window:]
            mech_lines: list[str] = []
            targets: list[str] = []
            run = _automation_run_after(events, first.seq)
            if run is not None:
                report = run.payload.get("report", {})
                mech_lines = list(report.get("mechanical_lines", []))
                seen = set()
                for execution in report.get("automation", []):
                    tid = execution.get("target_id")
                    if tid and tid not in seen:
                        seen.add(tid)
                        targets.append(tid)
            prompt = render_sta2nar(history, post_state, targets, post_caster, mech_lines, "FULL")
            records.append(
                PromptRecord("sta2nar", prompt, completion=triple.following[0].content, source=source)
            )
    return records


def _automation_run_after(events, seq):
    for event in events:
        if event.seq <= seq:
            continue
        if event.event_type == "automation_run":
            return event
        if event.event_type == "command":
            return None
    return None


def write_records(records: Iterable[PromptRecord], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")
            n += 1
    return n


def read_records(path) -> list[PromptRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(PromptRecord.from_dict(json.loads(line)))
    return records
