"""Execution traces: one entry per shared-memory access or CS event.

Traces serialize as JSON lines with the fields ``step, ordinal, kind,
local_index, physical_index, before, after, pc``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable


class Kind(str, Enum):
    READ = "READ"
    WRITE = "WRITE"
    CS_ENTER = "CS_ENTER"
    CS_EXIT = "CS_EXIT"
    LOCAL = "LOCAL"


@dataclass(frozen=True)
class TraceEntry:
    step: int
    ordinal: int
    kind: Kind
    pc: str
    local_index: int | None = None
    physical_index: int | None = None
    # RegisterWord for READ/WRITE, dict of local variables for LOCAL
    before: Any = None
    after: Any = None

    @property
    def is_access(self) -> bool:
        return self.kind in (Kind.READ, Kind.WRITE)

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "ordinal": self.ordinal,
            "kind": self.kind.value,
            "local_index": self.local_index,
            "physical_index": self.physical_index,
            "before": _jsonable(self.before),
            "after": _jsonable(self.after),
            "pc": self.pc,
        }


def _jsonable(value: Any) -> Any:
    if value is None or isinstance(value, (bool, int, str, float)):
        return value
    if hasattr(value, "to_json"):
        return value.to_json()
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return str(value)


@dataclass
class Trace:
    """Totally ordered record of one execution."""

    n: int
    m: int
    ids: tuple  # ProcessId per ordinal, index 0 is ordinal 1
    variant: str = "v1"
    entries: list[TraceEntry] = field(default_factory=list)

    def append(self, ordinal: int, kind: Kind, pc: str, **kw: Any) -> TraceEntry:
        entry = TraceEntry(len(self.entries), ordinal, kind, pc, **kw)
        self.entries.append(entry)
        return entry

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def id_of(self, ordinal: int):
        return self.ids[ordinal - 1]

    def turns(self) -> list[int]:
        """Ordinal of the process scheduled at each turn.

        CS events share the turn of the access that produced them.
        """
        return [e.ordinal for e in self.entries if e.kind not in (Kind.CS_ENTER, Kind.CS_EXIT)]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_json(), sort_keys=False) + "\n" for e in self.entries)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def jsonl_turns(records: Iterable[dict]) -> list[int]:
    return [r["ordinal"] for r in records if r["kind"] not in ("CS_ENTER", "CS_EXIT")]
