"""A live combat session: one combat state plus its event log.

Everything that happens in a session flows through here so the log is always
a faithful record: commands emit ``command`` -> ``automation_run`` (when dice
were rolled or automation ran) -> ``combat_state_update`` (when anything
changed), chat emits ``message`` events, and ``!init end`` closes the log
with ``combat_end``.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Optional

from . import engine, eventlog
from .content import ContentIndex
from .dice import SeededSource
from .engine import ExecutionReport
from .eventlog import Event, EventLog
from .state import CombatState, load_party


@dataclass
class CombatSession:
    combat_id: str
    state: CombatState
    log: EventLog
    index: ContentIndex
    created: datetime = field(default_factory=eventlog.now)
    updated: datetime = field(default_factory=eventlog.now)

    @staticmethod
    def create(
        party: dict,
        index: ContentIndex,
        seed: int = 0,
        combat_id: Optional[str] = None,
        data_dir: Optional[Path] = None,
        dm: str = "dm",
        timestamp: Optional[datetime] = None,
    ) -> "CombatSession":
        combat_id = combat_id or uuid.uuid4().hex[:12]
        state = load_party(party, SeededSource(seed))
        log = EventLog(combat_id, data_dir)
        log.emit(
            "combat_start",
            {
                "author_id": dm,
                "dm": dm,
                "seed": seed,
                "initial_state": state.to_dict(),
            },
            timestamp=timestamp,
        )
        return CombatSession(combat_id=combat_id, state=state, log=log, index=index)

    @property
    def ended(self) -> bool:
        return self.state.ended

    def current_caster_id(self) -> str:
        return self.state.current().id

    def message(self, author_id: str, content: str, timestamp: Optional[datetime] = None) -> Event:
        self.updated = eventlog.now()
        return self.log.emit(
            "message", {"author_id": author_id, "content": content}, timestamp=timestamp
        )

    def command(
        self,
        text: str,
        author_id: str = "player",
        as_id: Optional[str] = None,
        timestamp: Optional[datetime] = None,
    ) -> tuple[ExecutionReport, list[Event]]:
        """Parse and run a command; on success, append its event group.

        Failed commands raise and leave no trace in the log, mirroring a bot
        that only records successfully executed commands.
        """
        ast = engine.parse_command(engine.tokenize(text))
        caster_id = as_id or self.current_caster_id()
        if ast.caster_hint == "current_turn":
            caster_id = self.current_caster_id()
        mark = len(self.state.rng.consumed)
        report = engine.execute(ast, self.state, caster_id, self.index, command_text=text)
        faces = list(self.state.rng.consumed[mark:])
        events = [
            self.log.emit(
                "command",
                {
                    "author_id": author_id,
                    "caster_id": caster_id,
                    "text": text,
                    "ast": ast.to_dict(),
                },
                timestamp=timestamp,
            )
        ]
        if faces or report.automation:
            events.append(
                self.log.emit(
                    "automation_run",
                    {"report": report.to_dict(), "faces": faces},
                    timestamp=timestamp,
                )
            )
        if report.state_delta:
            events.append(
                self.log.emit(
                    "combat_state_update",
                    {"state": self.state.to_dict()},
                    timestamp=timestamp,
                )
            )
        if self.state.ended:
            events.append(
                self.log.emit("combat_end", {"author_id": author_id}, timestamp=timestamp)
            )
        self.updated = eventlog.now()
        return report, events

    def button_press(self, combatant_id: str, label: str, timestamp: Optional[datetime] = None) -> Event:
        return self.log.emit(
            "button_press", {"combatant_id": combatant_id, "label": label}, timestamp=timestamp
        )

    def close(self) -> None:
        self.log.close()
