"""Reference one-shot mutex over anonymous registers.

Register behaviour follows the contract the desanonymization layer relies
on (writes only own id or BOTTOM, reads every register during acquire,
owns every register on entry, each competitor writes at most once, release
clears its own id). Who gets in next is decided by a hidden FIFO arbiter.

Each ``acquire_step`` / ``release_step`` call performs at most one register
access through ``port``, which supplies the counter-piggybacking read and
write used by the caller.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, Protocol

from desanon.anonmem import BOTTOM, ProtocolError


class MutexError(ProtocolError):
    pass


class Phase(str, Enum):
    IDLE = "idle"
    ACQUIRE_SCAN = "scan"
    CONTEND_WRITE = "contend"
    SPIN = "spin"
    ENTER_WRITE = "enter"
    IN_CS = "cs"
    RELEASE_SWEEP = "release"
    DONE = "done"


class Status(Enum):
    RUNNING = 0
    ENTERED = 1
    RELEASED = 2


class Port(Protocol):
    def read(self, x: int, sub: str) -> Any: ...
    def write(self, x: int, v: Any, sub: str) -> None: ...


@dataclass(slots=True)
class MutexProcState:
    phase: Phase = Phase.IDLE
    k: int = 0
    writes_this_epoch: int = 0
    acquires: int = 0
    clear_pending: bool = False  # release read saw own id at k
    scan_epoch: int = 0  # arbiter epoch when the current read pass started

    def key(self) -> tuple:
        return (self.phase, self.k, self.writes_this_epoch, self.acquires, self.clear_pending,
                self.scan_epoch)

    def copy(self) -> MutexProcState:
        return MutexProcState(self.phase, self.k, self.writes_this_epoch, self.acquires,
                              self.clear_pending, self.scan_epoch)


@dataclass(slots=True)
class Arbiter:
    queue: tuple[int, ...] = ()
    holder: int | None = None
    # holder is filling or clearing the registers; competitors hold their write
    holder_busy: bool = False
    epoch: int = 0  # completed releases

    def key(self) -> tuple:
        return (self.queue, self.holder, self.holder_busy, self.epoch)

    def copy(self) -> Arbiter:
        return Arbiter(self.queue, self.holder, self.holder_busy, self.epoch)

    def eligible(self, i: int) -> bool:
        return self.holder is None and bool(self.queue) and self.queue[0] == i

    def grant(self, i: int) -> None:
        assert self.eligible(i)
        self.queue = self.queue[1:]
        self.holder = i
        self.holder_busy = True


def acquire_step(i: int, me: Any, st: MutexProcState, arb: Arbiter, port: Port, m: int,
                 target: int, max_acquires: int = 1) -> Status:
    """Advance process i's acquire by one step.

    ``target`` is the local index a waiting competitor writes its id to.
    """
    if st.phase in (Phase.IDLE, Phase.DONE):
        if st.acquires >= max_acquires:
            raise MutexError(f"process {i} acquires more than {max_acquires} time(s)")
        st.acquires += 1
        st.writes_this_epoch = 0
        arb.queue = arb.queue + (i,)
        st.phase, st.k, st.scan_epoch = Phase.ACQUIRE_SCAN, 1, arb.epoch

    if st.phase is Phase.ACQUIRE_SCAN:
        port.read(st.k, "scan")
        st.k += 1
        if st.k > m:
            if arb.eligible(i):
                if st.scan_epoch == arb.epoch:
                    arb.grant(i)
                    st.phase, st.k = Phase.ENTER_WRITE, 1
                else:
                    _rescan(st, arb)
            elif st.writes_this_epoch:
                st.phase = Phase.SPIN
            else:
                st.phase = Phase.CONTEND_WRITE
        return Status.RUNNING

    if st.phase is Phase.CONTEND_WRITE:
        if arb.eligible(i):
            _rescan(st, arb)
            port.read(1, "scan")
            st.k = 2
            return Status.RUNNING
        if arb.holder_busy:
            port.read(1, "spin")
            return Status.RUNNING
        port.write(target, me, "contend")
        st.writes_this_epoch += 1
        st.phase = Phase.SPIN
        return Status.RUNNING

    if st.phase is Phase.SPIN:
        port.read(1, "spin")
        if arb.eligible(i):
            _rescan(st, arb)
        return Status.RUNNING

    if st.phase is Phase.ENTER_WRITE:
        return _enter_write(i, me, st, arb, port, m)

    raise MutexError(f"acquire_step called in phase {st.phase.value}")


def _rescan(st: MutexProcState, arb: Arbiter) -> None:
    # a release finished since the last read pass began: read everything
    # again so the entrant sees the released registers
    st.phase, st.k, st.scan_epoch = Phase.ACQUIRE_SCAN, 1, arb.epoch


def _enter_write(i: int, me: Any, st: MutexProcState, arb: Arbiter, port: Port, m: int) -> Status:
    port.write(st.k, me, "enter")
    st.k += 1
    if st.k > m:
        st.phase, st.k = Phase.IN_CS, 0
        arb.holder_busy = False
        return Status.ENTERED
    return Status.RUNNING


def release_step(i: int, me: Any, st: MutexProcState, arb: Arbiter, port: Port, m: int,
                 clear: bool = True) -> Status:
    """Advance process i's release sweep by one step.

    ``clear=False`` reads without ever writing BOTTOM back (a seeded bug).
    """
    if st.phase is Phase.IN_CS:
        if arb.holder != i:
            raise MutexError(f"process {i} releases without holding the CS")
        arb.holder_busy = True
        st.phase, st.k, st.clear_pending = Phase.RELEASE_SWEEP, 1, False
    elif st.phase is not Phase.RELEASE_SWEEP:
        raise MutexError(f"process {i} releases without holding the CS")

    if st.clear_pending:
        port.write(st.k, BOTTOM, "release")
        st.clear_pending = False
        st.k += 1
    else:
        if port.read(st.k, "release") == me and clear:
            st.clear_pending = True
        else:
            st.k += 1
    if st.k > m:
        st.phase, st.k = Phase.DONE, 0
        arb.holder = None
        arb.holder_busy = False
        arb.epoch += 1
        return Status.RELEASED
    return Status.RUNNING
