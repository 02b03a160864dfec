"""Append-only per-combat event logs and deterministic replay.

Nine event types flow through a session: message, command,
combat_state_update, automation_run, alias_resolution, snippet_resolution,
combat_start, combat_end, and button_press. Logs are UTF-8 JSON lines, one
event per line, written to ``<combat_id>.jsonl``.

Replay re-executes the recorded commands against the recorded initial state,
feeding each command the die faces stored in its automation_run payload, so
reconstruction never touches an RNG. Every recorded state snapshot and report
is compared against the re-execution; the first mismatch raises
ReplayDivergence naming the differing field.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional

from .content import ContentIndex
from .dice import ForcedSource
from .engine import EngineError, execute, parse_command, tokenize
from .state import CombatState

EVENT_TYPES = (
    "message",
    "command",
    "combat_state_update",
    "automation_run",
    "alias_resolution",
    "snippet_resolution",
    "combat_start",
    "combat_end",
    "button_press",
)


class EventLogError(Exception):
    pass


class SequenceGap(EventLogError):
    pass


class OrderingViolation(EventLogError):
    pass


class WriteFailure(EventLogError):
    pass


class ReplayDivergence(EventLogError):
    def __init__(self, seq: int, path: str, expected, actual):
        super().__init__(f"replay diverged at seq {seq}, field {path}: expected {expected!r}, got {actual!r}")
        self.seq = seq
        self.path = path
        self.expected = expected
        self.actual = actual


@dataclass
class Event:
    combat_id: str
    seq: int
    timestamp: datetime
    event_type: str
    payload: dict

    def __post_init__(self):
        if self.event_type not in EVENT_TYPES:
            raise ValueError(f"unknown event type {self.event_type!r}")

    def to_dict(self) -> dict:
        return {
            "combat_id": self.combat_id,
            "seq": self.seq,
            "timestamp": self.timestamp.isoformat(),
            "event_type": self.event_type,
            "payload": self.payload,
        }

    @staticmethod
    def from_dict(d: dict) -> "Event":
        return Event(
            combat_id=d["combat_id"],
            seq=d["seq"],
            timestamp=datetime.fromisoformat(d["timestamp"]),
            event_type=d["event_type"],
            payload=d.get("payload", {}),
        )


def now() -> datetime:
    return datetime.now(timezone.utc)


class EventLog:
    """Validating writer for one combat's event stream.

    Enforces: seq starts at 1 and increments by one, combat_start comes
    first, and at most one combat_end is written. Appends are flushed before
    returning.
    """

    def __init__(self, combat_id: str, directory: Optional[Path] = None):
        self.combat_id = combat_id
        self.events: list[Event] = []
        self._ended = False
        self._fh = None
        if directory is not None:
            directory = Path(directory)
            directory.mkdir(parents=True, exist_ok=True)
            self.path = directory / f"{combat_id}.jsonl"
            try:
                self._fh = open(self.path, "a", encoding="utf-8")
            except OSError as exc:
                raise WriteFailure(str(exc)) from exc
        else:
            self.path = None

    @property
    def last_seq(self) -> int:
        return self.events[-1].seq if self.events else 0

    def append(self, event: Event) -> Event:
        if event.combat_id != self.combat_id:
            raise OrderingViolation(f"event belongs to {event.combat_id!r}")
        if event.seq != self.last_seq + 1:
            raise SequenceGap(f"expected seq {self.last_seq + 1}, got {event.seq}")
        if not self.events and event.event_type != "combat_start":
            raise OrderingViolation("first event must be combat_start")
        if self.events and event.event_type == "combat_start":
            raise OrderingViolation("combat_start must come first")
        if event.event_type == "combat_end":
            if self._ended:
                raise OrderingViolation("combat_end already recorded")
            self._ended = True
        if self._fh is not None:
            try:
                self._fh.write(json.dumps(event.to_dict(), ensure_ascii=False) + "\n")
                self._fh.flush()
            except OSError as exc:
                raise WriteFailure(str(exc)) from exc
        self.events.append(event)
        return event

    def emit(self, event_type: str, payload: dict, timestamp: Optional[datetime] = None) -> Event:
        """Build the next event in sequence and append it."""
        event = Event(
            combat_id=self.combat_id,
            seq=self.last_seq + 1,
            timestamp=timestamp or now(),
            event_type=event_type,
            payload=payload,
        )
        return self.append(event)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def read_events(path) -> list[Event]:
    events = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                events.append(Event.from_dict(json.loads(line)))
    return events


def validate_order(events: Iterable[Event]) -> None:
    """Check the invariants a well-formed log satisfies."""
    last_seq = 0
    ended = False
    for i, event in enumerate(events):
        if event.seq != last_seq + 1:
            raise SequenceGap(f"expected seq {last_seq + 1}, got {event.seq}")
        last_seq = event.seq
        if i == 0 and event.event_type != "combat_start":
            raise OrderingViolation("first event must be combat_start")
        if i > 0 and event.event_type == "combat_start":
            raise OrderingViolation("combat_start must come first")
        if event.event_type == "combat_end":
            if ended:
                raise OrderingViolation("combat_end already recorded")
            ended = True


def _first_difference(expected, actual, path=""):
    """Depth-first search for the first differing field between two JSON trees."""
    if isinstance(expected, dict) and isinstance(actual, dict):
        for key in sorted(set(expected) | set(actual)):
            sub = f"{path}.{key}" if path else str(key)
            if key not in expected:
                return sub, "<absent>", actual[key]
            if key not in actual:
                return sub, expected[key], "<absent>"
            found = _first_difference(expected[key], actual[key], sub)
            if found:
                return found
        return None
    if isinstance(expected, list) and isinstance(actual, list):
        for i, (e, a) in enumerate(zip(expected, actual)):
            found = _first_difference(e, a, f"{path}[{i}]")
            if found:
                return found
        if len(expected) != len(actual):
            return f"{path}.length", len(expected), len(actual)
        return None
    if expected != actual:
        return path or "<root>", expected, actual
    return None


def replay(events: list[Event], index: ContentIndex) -> CombatState:
    """Rebuild the final combat state by re-executing the logged commands.

    Raises ReplayDivergence on the first recorded snapshot or report that
    doesn't match the re-execution.
    """
    validate_order(events)
    if not events or events[0].event_type != "combat_start":
        raise OrderingViolation("log must open with combat_start")
    state = CombatState.from_dict(events[0].payload["initial_state"])

    pending_command: Optional[Event] = None
    pending_report_seq: Optional[int] = None

    def run_pending(faces: list[int], recorded_report: Optional[dict], seq: int):
        nonlocal pending_command
        if pending_command is None:
            return
        payload = pending_command.payload
        try:
            ast = parse_command(tokenize(payload["text"]))
            state.rng = ForcedSource(faces)
            report = execute(ast, state, payload["caster_id"], index, command_text=payload.get("text"))
        except EngineError as exc:
            # the log says this command succeeded; failing now means the log
            # and the engine disagree
            raise ReplayDivergence(seq, "execution", "success", str(exc)) from exc
        if recorded_report is not None:
            found = _first_difference(recorded_report, report.to_dict())
            if found:
                path, exp, act = found
                raise ReplayDivergence(seq, f"report.{path}", exp, act)
        pending_command = None

    for event in events[1:]:
        if event.event_type == "command":
            # a command with no automation_run consumed no dice
            run_pending([], None, event.seq)
            pending_command = event
        elif event.event_type == "automation_run":
            run_pending(event.payload.get("faces", []), event.payload.get("report"), event.seq)
        elif event.event_type == "combat_state_update":
            run_pending([], None, event.seq)
            found = _first_difference(event.payload["state"], state.to_dict())
            if found:
                path, exp, act = found
                raise ReplayDivergence(event.seq, path, exp, act)
        # message/button/alias/snippet/combat_end events don't change engine state
    run_pending([], None, events[-1].seq)
    return state
