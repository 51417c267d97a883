"""Desanonymization protocols driven one register access at a time.

``desa_step`` runs one turn of a process: the single-bit-free protocol
(variant v1), or the two-phase protocol that leaves one control bit per
register (variant v2). The mutex underneath uses ``instrumented_read`` /
``instrumented_write``, which piggyback the shared counter on every access.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Sequence

from desanon.anonmem import (
    BOTTOM,
    AnonymousMemory,
    ApplVal,
    Config,
    DesaVal,
    IndexedMutexVal,
    MutexVal,
    Permutation,
    ProcessId,
    ProtocolError,
    RegisterWord,
    Variant,
    body_index,
    body_value,
    invert,
)
from desanon.mutex import MutexProcState, Arbiter, Status, acquire_step, release_step
from desanon.trace import Kind

# Seeded protocol bugs, used to show that the checkers catch them.
MUTANTS = {
    "skip-desa-broadcast": "winner skips writing desa(x) to the registers",
    "skip-bottom-sweep": "release never writes BOTTOM over its own id",
    "double-increment": "critical section adds 2 to the counter",
    "unordered-identity": "competitor's write target depends on identity order",
    "bit-reset": "a process leaving the bit loop clears the bit it saw",
    "scan-updates-ct": "plain scans harvest counter stamps",
    "early-bits": "winner of phase 1 sets the bits right after desa(x)",
}


class MapError(ProtocolError):
    """Snapshot does not determine a permutation."""


class Pc(str, Enum):
    ACQUIRE1 = "acquire1"
    CS1 = "cs1"
    RELEASE1 = "release1"
    BROADCAST = "broadcast"
    SCAN = "scan"
    MAP = "map"
    ACQUIRE2 = "acquire2"
    CS2 = "cs2"
    RELEASE2 = "release2"
    BITS = "bits"
    BITSCAN = "bitscan"
    BITRESET = "bitreset"
    APPL_WRITE = "appl_write"
    APPL_READ = "appl_read"
    DONE = "done"


_V1_LINES = {
    Pc.ACQUIRE1: "DESA-01", Pc.CS1: "DESA-02", Pc.RELEASE1: "DESA-04",
    Pc.BROADCAST: "DESA-06", Pc.SCAN: "DESA-07", Pc.MAP: "DESA-08",
    Pc.APPL_WRITE: "APPL-W", Pc.APPL_READ: "APPL-R", Pc.DONE: "DESA-09",
}
_V2_LINES = {
    Pc.ACQUIRE1: "BITDESA-01", Pc.CS1: "BITDESA-02", Pc.RELEASE1: "BITDESA-04",
    Pc.BROADCAST: "BITDESA-06", Pc.SCAN: "BITDESA-07", Pc.MAP: "BITDESA-08",
    Pc.ACQUIRE2: "BITDESA-10", Pc.CS2: "BITDESA-11", Pc.RELEASE2: "BITDESA-13",
    Pc.BITS: "BITDESA-15", Pc.BITSCAN: "BITDESA-16", Pc.BITRESET: "BITDESA-16",
    Pc.DONE: "BITDESA-17",
}


def line_label(variant: Variant, pc: Pc) -> str:
    return (_V1_LINES if variant is Variant.V1 else _V2_LINES)[pc]


@dataclass(slots=True)
class DesaProcess:
    ident: ProcessId
    ordinal: int
    pc: Pc = Pc.ACQUIRE1
    ct: int = 0
    last1: bool = False
    last2: bool = False
    sm: tuple = ()  # indices carried by the entries read so far in this scan
    map: Permutation | None = None
    k: int = 0
    seen_bit: int = 0
    rank: int = 0
    appl_got: tuple = ()
    mx: MutexProcState = field(default_factory=MutexProcState)
    inv: Permutation | None = None  # cached inverse of map

    @property
    def done(self) -> bool:
        return self.pc is Pc.DONE

    def key(self) -> tuple:
        return (self.pc, self.ct, self.last1, self.last2, self.sm,
                None if self.map is None else self.map.table, self.k, self.seen_bit,
                self.rank, self.appl_got, self.mx.key())

    def copy(self) -> DesaProcess:
        return DesaProcess(self.ident, self.ordinal, self.pc, self.ct, self.last1, self.last2,
                           self.sm, self.map, self.k, self.seen_bit, self.rank, self.appl_got,
                           self.mx.copy(), self.inv)

    def set_map(self, p: Permutation) -> None:
        self.map = p
        self.inv = invert(p)


def instrumented_read(proc: DesaProcess, x: int, mem: AnonymousMemory, pc: str = "") -> Any:
    """Mutex-path read: harvest the counter stamp, return the value position."""
    word = mem.read(proc.ordinal, x, pc)
    if word.ct > proc.ct:
        proc.ct = word.ct
    return body_value(word.body)


def instrumented_write(proc: DesaProcess, x: int, v: Any, mem: AnonymousMemory,
                       indexed: bool = False, pc: str = "") -> None:
    """Mutex-path write of own id or BOTTOM, stamped with the local counter.

    With ``indexed`` and a known map, the common index of the cell rides along.
    """
    if not (v is BOTTOM or v == proc.ident):
        raise ProtocolError(f"process {proc.ordinal} writes foreign value {v!r} via the mutex")
    if indexed and proc.inv is not None:
        body = IndexedMutexVal(proc.inv(x), v)
    else:
        body = MutexVal(v)
    mem.write(proc.ordinal, x, body=body, ct=proc.ct, pc=pc)


def compute_map_from_snapshot(sm: Sequence[RegisterWord | int | None]) -> Permutation:
    """map(y) = x where entry x carries index y.

    Entries may be register words or the already-extracted indices.
    """
    m = len(sm)
    table = [0] * m
    for x, entry in enumerate(sm, 1):
        y = body_index(entry.body) if isinstance(entry, RegisterWord) else entry
        if y is None:
            raise MapError(f"entry {x} carries no index")
        if not 1 <= y <= m:
            raise MapError(f"entry {x} carries index {y} outside 1..{m}")
        if table[y - 1]:
            raise MapError(f"index {y} appears at entries {table[y - 1]} and {x}")
        table[y - 1] = x
    return Permutation(tuple(table))


def appl_write(proc: DesaProcess, y: int, payload: Any, mem: AnonymousMemory, pc: str = "APPL-W") -> None:
    if proc.map is None:
        raise ProtocolError("appl_write before the map is computed")
    mem.write(proc.ordinal, proc.map(y), body=ApplVal(y, payload), ct=proc.ct, pc=pc)


def appl_read(proc: DesaProcess, y: int, mem: AnonymousMemory, pc: str = "APPL-R") -> Any:
    """Payload stored under common name y, or None if no application value is there."""
    if proc.map is None:
        raise ProtocolError("appl_read before the map is computed")
    body = mem.read(proc.ordinal, proc.map(y), pc).body
    return body.payload if isinstance(body, ApplVal) else None


class _MutexPort:
    __slots__ = ("proc", "mem", "line", "indexed")

    def __init__(self, proc: DesaProcess, mem: AnonymousMemory, line: str, indexed: bool) -> None:
        self.proc = proc
        self.mem = mem
        self.line = line
        self.indexed = indexed

    def read(self, x: int, sub: str) -> Any:
        return instrumented_read(self.proc, x, self.mem, f"{self.line}/{sub}/MUTEX-RW-01")

    def write(self, x: int, v: Any, sub: str) -> None:
        instrumented_write(self.proc, x, v, self.mem, self.indexed, f"{self.line}/{sub}/MUTEX-RW-04")


def _local(mem: AnonymousMemory, proc: DesaProcess, pc: str, before: dict, after: dict) -> None:
    if mem.trace is not None:
        mem.trace.append(proc.ordinal, Kind.LOCAL, pc, before=before, after=after)


def _event(mem: AnonymousMemory, proc: DesaProcess, kind: Kind, pc: str) -> None:
    if mem.trace is not None:
        mem.trace.append(proc.ordinal, kind, pc)


def contender_target(proc: DesaProcess, cfg: Config, target: int) -> int:
    if "unordered-identity" in cfg.mutants:
        # deliberately asymmetric: peeks at the identity's ordering
        return 1 if proc.ident.token <= "p1" else cfg.m
    return target


def desa_step(proc: DesaProcess, mem: AnonymousMemory, arb: Arbiter, cfg: Config,
              targets: Sequence[int] = (1, 1)) -> bool:
    """One turn of ``proc``; returns True once the process is done.

    ``targets`` gives the competitor write index for the first and second
    acquire.
    """
    pc = proc.pc
    line = line_label(cfg.variant, pc)
    n, m = cfg.n, cfg.m
    mutants = cfg.mutants

    if pc in (Pc.ACQUIRE1, Pc.ACQUIRE2):
        port = _MutexPort(proc, mem, line, cfg.indexed)
        target = contender_target(proc, cfg, targets[0 if pc is Pc.ACQUIRE1 else 1])
        status = acquire_step(proc.ordinal, proc.ident, proc.mx, arb, port, m, target,
                              cfg.max_acquires)
        if status is Status.ENTERED:
            _event(mem, proc, Kind.CS_ENTER, line)
            proc.pc = Pc.CS1 if pc is Pc.ACQUIRE1 else Pc.CS2

    elif pc in (Pc.CS1, Pc.CS2):
        old = proc.ct
        proc.ct += 2 if "double-increment" in mutants else 1
        if pc is Pc.CS1:
            proc.last1 = proc.ct == n
            proc.rank = proc.ct
            _local(mem, proc, line, {"ct": old}, {"ct": proc.ct, "last1": proc.last1})
            proc.pc = Pc.RELEASE1
        else:
            proc.last2 = proc.ct == 2 * n
            _local(mem, proc, line, {"ct": old}, {"ct": proc.ct, "last2": proc.last2})
            proc.pc = Pc.RELEASE2

    elif pc in (Pc.RELEASE1, Pc.RELEASE2):
        port = _MutexPort(proc, mem, line, cfg.indexed)
        status = release_step(proc.ordinal, proc.ident, proc.mx, arb, port, m,
                              clear="skip-bottom-sweep" not in mutants)
        if status is Status.RELEASED:
            _event(mem, proc, Kind.CS_EXIT, line)
            if pc is Pc.RELEASE1:
                if proc.last1:
                    proc.pc, proc.k = Pc.BROADCAST, 1
                else:
                    proc.pc, proc.k, proc.sm = Pc.SCAN, 1, ()
            elif proc.last2:
                proc.pc, proc.k = Pc.BITS, 1
            else:
                proc.pc, proc.k, proc.seen_bit = Pc.BITSCAN, 1, 0

    elif pc is Pc.BROADCAST:
        if "skip-desa-broadcast" in mutants:
            proc.k = m + 1
            _local(mem, proc, line, {}, {"skipped": True})
        else:
            mem.write(proc.ordinal, proc.k, body=DesaVal(proc.k), ct=proc.ct, pc=line)
            proc.k += 1
        if proc.k > m:
            proc.set_map(Permutation.identity(m))
            if "early-bits" in mutants and cfg.variant is Variant.V2:
                proc.pc, proc.k = Pc.BITS, 1
            else:
                _after_map(proc, cfg)

    elif pc is Pc.SCAN:
        word = mem.read(proc.ordinal, proc.k, line)
        if "scan-updates-ct" in mutants and word.ct > proc.ct:
            proc.ct = word.ct
        proc.sm = proc.sm + (body_index(word.body),)
        proc.k += 1
        if proc.k > m:
            if all(y is not None for y in proc.sm):
                proc.pc = Pc.MAP
            else:
                proc.k, proc.sm = 1, ()

    elif pc is Pc.MAP:
        proc.set_map(compute_map_from_snapshot(proc.sm))
        proc.sm = ()
        _local(mem, proc, line, {"map": None}, {"map": list(proc.map.table)})
        _after_map(proc, cfg)

    elif pc is Pc.BITS:
        mem.write(proc.ordinal, proc.k, bit=1, pc=line)
        proc.k += 1
        if proc.k > m:
            if proc.last1 and not proc.last2 and proc.mx.acquires < 2:
                # early-bits mutant: back to the regular phase-2 path
                _after_map(proc, cfg)
            else:
                proc.pc = Pc.DONE

    elif pc is Pc.BITSCAN:
        word = mem.read(proc.ordinal, proc.k, line)
        if word.bit == 1 and not proc.seen_bit:
            proc.seen_bit = proc.k
        proc.k += 1
        if proc.k > m:
            if not proc.seen_bit:
                proc.k = 1
            elif "bit-reset" in mutants:
                proc.pc = Pc.BITRESET
            else:
                proc.pc = Pc.DONE

    elif pc is Pc.BITRESET:
        mem.write(proc.ordinal, proc.seen_bit, bit=0, pc=line, force=True)
        proc.pc = Pc.DONE

    elif pc is Pc.APPL_WRITE:
        appl_write(proc, proc.rank, proc.ident, mem)
        proc.pc, proc.k, proc.appl_got = Pc.APPL_READ, 1, ()

    elif pc is Pc.APPL_READ:
        proc.appl_got = proc.appl_got + (appl_read(proc, proc.k, mem),)
        proc.k += 1
        if proc.k > n:
            if all(v is not None for v in proc.appl_got):
                proc.pc = Pc.DONE
            else:
                proc.k, proc.appl_got = 1, ()

    else:
        raise ProtocolError(f"process {proc.ordinal} stepped after termination")

    return proc.pc is Pc.DONE


def _after_map(proc: DesaProcess, cfg: Config) -> None:
    if cfg.variant is Variant.V2:
        proc.pc = Pc.ACQUIRE2
    elif cfg.appl:
        proc.pc = Pc.APPL_WRITE
    else:
        proc.pc = Pc.DONE
