"""Schedulers, direct runs, exhaustive exploration and replay."""

from __future__ import annotations

import json
import random
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Sequence

from desanon.anonmem import (
    AnonymousMemory,
    Config,
    ConfigError,
    ContenderPolicy,
    Permutation,
    ProcessId,
    ProtocolError,
    new_memory,
)
from desanon.desa import DesaProcess, desa_step
from desanon.mutex import Arbiter, Phase
from desanon.trace import Trace


class ReplayError(RuntimeError):
    pass


def default_ids(n: int) -> tuple[ProcessId, ...]:
    return tuple(ProcessId(f"p{i}") for i in range(1, n + 1))


def contender_targets(cfg: Config) -> tuple[tuple[int, int], ...]:
    """Local index each process writes to while waiting, per acquire."""
    if cfg.contender_policy is ContenderPolicy.FIXED:
        return tuple((1, 1) for _ in range(cfg.n))
    rng = random.Random(f"targets:{cfg.seed}")
    return tuple((rng.randint(1, cfg.m), rng.randint(1, cfg.m)) for _ in range(cfg.n))


@dataclass
class World:
    """Everything fixed for one execution: config, adversary, identities."""

    cfg: Config
    perms: tuple[Permutation, ...]
    ids: tuple[ProcessId, ...]
    targets: tuple[tuple[int, int], ...]

    @classmethod
    def build(cls, cfg: Config, perms: Sequence[Permutation] | int | None = None,
              ids: Sequence[ProcessId] | None = None) -> World:
        mem = new_memory(cfg, perms)
        ids = tuple(ids) if ids is not None else default_ids(cfg.n)
        if len(ids) != cfg.n or len(set(ids)) != cfg.n:
            raise ConfigError("need n pairwise distinct process identities")
        return cls(cfg, mem.perms, ids, contender_targets(cfg))

    def initial_state(self, record: bool = False) -> SystemState:
        trace = Trace(self.cfg.n, self.cfg.m, self.ids, variant=self.cfg.variant.value) if record else None
        mem = new_memory(self.cfg, self.perms, trace)
        procs = [DesaProcess(ident, i) for i, ident in enumerate(self.ids, 1)]
        return SystemState(mem, procs, Arbiter())


class SystemState:
    __slots__ = ("mem", "procs", "arb")

    def __init__(self, mem: AnonymousMemory, procs: list[DesaProcess], arb: Arbiter) -> None:
        self.mem = mem
        self.procs = procs
        self.arb = arb

    def clone(self) -> SystemState:
        return SystemState(self.mem.clone(), [p.copy() for p in self.procs], self.arb.copy())

    def key(self) -> tuple:
        return (tuple(self.mem.cells), tuple(p.key() for p in self.procs), self.arb.key())

    def __eq__(self, other: object) -> bool:
        return isinstance(other, SystemState) and self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())

    @property
    def all_done(self) -> bool:
        return all(p.done for p in self.procs)

    def enabled(self) -> list[int]:
        return [p.ordinal for p in self.procs if not p.done]

    def step(self, world: World, ordinal: int) -> bool:
        proc = self.procs[ordinal - 1]
        return desa_step(proc, self.mem, self.arb, world.cfg, world.targets[ordinal - 1])

    def in_cs(self) -> list[int]:
        return [p.ordinal for p in self.procs if p.mx.phase is Phase.IN_CS]


class RoundRobin:
    name = "rr"

    def reset(self, n: int, m: int) -> None:
        self._n = n
        self._next = 1

    def choose(self, enabled: Sequence[int], turn: int) -> int:
        for _ in range(self._n):
            cand = self._next
            self._next = cand % self._n + 1
            if cand in enabled:
                return cand
        raise RuntimeError("no enabled process")


class RandomScheduler:
    """Uniform choice among enabled processes, with a starvation bound.

    A process left unscheduled for ``window`` consecutive selections
    (default 8*n*m) is forced next.
    """

    name = "random"

    def __init__(self, seed: int, window: int | None = None) -> None:
        self.seed = seed
        self.window = window
        self.max_wait = 0

    def reset(self, n: int, m: int) -> None:
        self.rng = random.Random(self.seed)
        self._window = self.window or 8 * n * m
        self._last = {i: -1 for i in range(1, n + 1)}
        self.max_wait = 0

    def choose(self, enabled: Sequence[int], turn: int) -> int:
        starving = [i for i in enabled if turn - self._last[i] - 1 >= self._window]
        if starving:
            pick = min(starving, key=lambda i: self._last[i])
        else:
            pick = enabled[self.rng.randrange(len(enabled))]
        for i in enabled:
            if i != pick:
                self.max_wait = max(self.max_wait, turn - self._last[i])
        self._last[pick] = turn
        return pick


class Scripted:
    """Replays a fixed sequence of turns."""

    name = "scripted"

    def __init__(self, turns: Sequence[int]) -> None:
        self.turns = list(turns)

    def reset(self, n: int, m: int) -> None:
        self._pos = 0

    def choose(self, enabled: Sequence[int], turn: int) -> int:
        if self._pos >= len(self.turns):
            raise ReplayError("script exhausted before the run finished")
        pick = self.turns[self._pos]
        self._pos += 1
        if pick not in enabled:
            raise ReplayError(f"turn {turn}: process {pick} is not enabled")
        return pick


def make_scheduler(choice: Any) -> Any:
    if choice in (None, "rr", "round-robin"):
        return RoundRobin()
    if isinstance(choice, int) and not isinstance(choice, bool):
        return RandomScheduler(choice)
    if isinstance(choice, str) and choice.startswith("random"):
        _, _, seed = choice.partition(":")
        return RandomScheduler(int(seed or 0))
    return choice


@dataclass
class RunResult:
    world: World
    trace: Trace
    state: SystemState
    terminated: bool
    turns: int
    error: str | None = None

    @property
    def cfg(self) -> Config:
        return self.world.cfg

    @property
    def budget_exceeded(self) -> bool:
        return not self.terminated and self.error is None

    def summary(self) -> dict:
        return {
            "n": self.cfg.n,
            "m": self.cfg.m,
            "variant": self.cfg.variant.value,
            "terminated": self.terminated,
            "turns": self.turns,
            "trace_entries": len(self.trace),
            "error": self.error,
        }


def run(cfg: Config, scheduler: Any = None, perms: Sequence[Permutation] | int | None = None,
        ids: Sequence[ProcessId] | None = None, world: World | None = None) -> RunResult:
    """Drive all processes until done or the step budget runs out.

    ``scheduler`` is "rr", an int seed (random), or a scheduler object.
    Budget exhaustion is reported in the result, not raised.
    """
    world = world or World.build(cfg, perms, ids)
    sched = make_scheduler(scheduler)
    sched.reset(cfg.n, cfg.m)
    state = world.initial_state(record=True)
    budget = cfg.budget
    turn = 0
    error = None
    enabled = state.enabled()
    while enabled and turn < budget:
        pick = sched.choose(enabled, turn)
        try:
            if state.step(world, pick):
                enabled = state.enabled()
        except ProtocolError as exc:
            error = f"turn {turn}, process {pick}: {exc}"
            turn += 1
            break
        turn += 1
    return RunResult(world, state.mem.trace, state, state.all_done and error is None, turn, error)


def replay(cfg: Config, trace: Trace | Iterable[dict] | None = None, scheduler: Any = None,
           perms: Sequence[Permutation] | int | None = None,
           ids: Sequence[ProcessId] | None = None) -> Trace:
    """Re-run an execution and return its trace.

    Given a recorded trace (object or JSON records), its turn order drives
    the run and the result must match it exactly; otherwise ``scheduler``
    reproduces the run from config and seed.
    """
    if trace is None:
        return run(cfg, scheduler, perms, ids).trace
    if isinstance(trace, Trace):
        turns, expected = trace.turns(), trace.to_jsonl()
    else:
        records = list(trace)
        turns = [r["ordinal"] for r in records if r["kind"] not in ("CS_ENTER", "CS_EXIT")]
        expected = "".join(json.dumps(r) + "\n" for r in records)
    if any(not 1 <= t <= cfg.n for t in turns):
        raise ReplayError("trace mentions processes outside 1..n")
    cfg = replace(cfg, step_budget=len(turns))
    try:
        result = run(cfg, Scripted(turns), perms, ids)
    except (ReplayError, IndexError, ProtocolError) as exc:
        raise ReplayError(f"config mismatch: {exc}") from exc
    got = result.trace.to_jsonl()
    if got != expected:
        a, b = got.splitlines(), expected.splitlines()
        first = next((i for i, (x, y) in enumerate(zip(a, b)) if x != y), min(len(a), len(b)))
        raise ReplayError(f"config mismatch: replay diverges at trace entry {first}")
    return result.trace


@dataclass
class Violation:
    kind: str
    detail: str
    path: list[int]
    trace: Trace | None = None

    def to_json(self) -> dict:
        return {"kind": self.kind, "detail": self.detail, "path_len": len(self.path),
                "path": self.path}


@dataclass
class ExplorationReport:
    states_visited: int = 0
    transitions: int = 0
    terminals: int = 0
    deadlocks: int = 0
    livelocks: int = 0
    truncated: bool = False
    violations: list[Violation] = field(default_factory=list)
    terminal_keys: set = field(default_factory=set, repr=False)

    @property
    def ok(self) -> bool:
        return not self.violations and not self.truncated

    def to_json(self) -> dict:
        return {
            "states_visited": self.states_visited,
            "transitions": self.transitions,
            "terminals": self.terminals,
            "deadlocks": self.deadlocks,
            "livelocks": self.livelocks,
            "truncated": self.truncated,
            "violations": [v.to_json() for v in self.violations],
        }


def state_invariants(state: SystemState, world: World) -> list[str]:
    """Per-state safety conditions checked on every explored state."""
    cfg = world.cfg
    problems = []
    holders = [p.ordinal for p in state.procs
               if p.mx.phase in (Phase.ENTER_WRITE, Phase.IN_CS, Phase.RELEASE_SWEEP)]
    if len(holders) > 1:
        problems.append(f"mutual exclusion: processes {holders} hold the CS")
    cap = cfg.n if cfg.variant.value == "v1" else 2 * cfg.n
    for p in state.procs:
        if p.ct > cap:
            problems.append(f"counter of process {p.ordinal} is {p.ct} > {cap}")
    if sum(p.last1 for p in state.procs) > 1:
        problems.append("more than one process has last1")
    if sum(p.last2 for p in state.procs) > 1:
        problems.append("more than one process has last2")
    for i in state.in_cs():
        me = world.ids[i - 1]
        owned = sum(1 for w in state.mem.cells if getattr(w.body, "val", None) == me)
        waiting = sum(1 for p in state.procs if p.ordinal != i
                      and p.mx.phase in (Phase.ACQUIRE_SCAN, Phase.CONTEND_WRITE, Phase.SPIN))
        if owned < cfg.m - waiting:
            problems.append(f"process {i} in CS owns {owned} registers with {waiting} competitors")
    return problems


def replay_path(world: World, path: Sequence[int]) -> tuple[SystemState, Trace]:
    state = world.initial_state(record=True)
    for ordinal in path:
        state.step(world, ordinal)
    return state, state.mem.trace


def explore(cfg: Config, perms: Sequence[Permutation] | int | None = None,
            max_states: int = 2_000_000, check_terminals: bool = True,
            max_violations: int = 5, ids: Sequence[ProcessId] | None = None) -> ExplorationReport:
    """Visit every interleaving reachable from the initial state.

    States are deduplicated by their full content. Every state is checked
    against ``state_invariants``; every terminal state is re-reached with
    tracing on and run through the terminal checks. Once the state graph is
    complete, states from which no terminal state is reachable are reported
    as livelocks.
    """
    from desanon.verify import terminal_checks

    world = World.build(cfg, perms, ids)
    report = ExplorationReport()
    init = world.initial_state()
    index: dict[tuple, int] = {init.key(): 0}
    parent: list[tuple[int, int]] = [(-1, 0)]
    succ: list[tuple[tuple[int, int], ...]] = [()]  # (ordinal, child) per state
    terminal_ids: list[int] = []
    bad: set[int] = set()
    stack: list[tuple[int, SystemState]] = [(0, init)]

    def path_to(idx: int) -> list[int]:
        path = []
        while idx > 0:
            idx, ordinal = parent[idx]
            path.append(ordinal)
        return path[::-1]

    def violate(kind: str, detail: str, idx: int, tail: Sequence[int] = ()) -> None:
        bad.add(idx)
        if len(report.violations) < max_violations:
            path = path_to(idx) + list(tail)
            _, trace = replay_path(world, path)
            report.violations.append(Violation(kind, detail, path, trace))

    while stack and not report.truncated:
        sid, state = stack.pop()
        children = []
        for ordinal in state.enabled():
            nxt = state.clone()
            err = None
            try:
                nxt.step(world, ordinal)
            except ProtocolError as exc:
                err = str(exc)
            key = nxt.key()
            report.transitions += 1
            cid = index.get(key)
            children.append((ordinal, cid if cid is not None else len(parent)))
            if cid is not None:
                continue
            cid = len(parent)
            index[key] = cid
            parent.append((sid, ordinal))
            succ.append(())
            if len(parent) > max_states:
                report.truncated = True
                break
            if err:
                violate("protocol-error", err, cid)
                continue
            problems = state_invariants(nxt, world)
            if problems:
                violate("invariant", "; ".join(problems), cid)
                continue
            if nxt.all_done:
                terminal_ids.append(cid)
                report.terminal_keys.add(key)
                if check_terminals:
                    final, trace = replay_path(world, path_to(cid))
                    failed = [r for r in terminal_checks(trace, final, world) if not r.passed]
                    if failed:
                        violate("terminal-check",
                                "; ".join(f"{r.name}: {r.detail}" for r in failed), cid)
            else:
                stack.append((cid, nxt))
        succ[sid] = tuple(children)
        if not children and not state.all_done:
            report.deadlocks += 1
            violate("deadlock", "no process can move", sid)

    report.states_visited = len(parent)
    report.terminals = len(terminal_ids)
    if not report.truncated and not bad:
        preds: list[list[int]] = [[] for _ in parent]
        for s, cs in enumerate(succ):
            for _, c in cs:
                preds[c].append(s)
        alive = set(terminal_ids)
        queue = deque(terminal_ids)
        while queue:
            c = queue.popleft()
            for s in preds[c]:
                if s not in alive:
                    alive.add(s)
                    queue.append(s)
        report.livelocks = len(parent) - len(alive)
        if report.livelocks:
            # report the stuck state closest to the initial state
            seen, queue = {0}, deque([0])
            while queue:
                s = queue.popleft()
                if s not in alive:
                    stem = len(path_to(s))
                    tail, loop = _lasso(s, succ)
                    violate("livelock",
                            f"{report.livelocks} reachable states can never reach termination; "
                            f"counterexample repeats a cycle of {loop} turns after "
                            f"{stem + len(tail) - loop} turns", s, tail)
                    break
                for _, c in succ[s]:
                    if c not in seen:
                        seen.add(c)
                        queue.append(c)
    return report


def _lasso(start: int, succ: list[tuple[tuple[int, int], ...]]) -> tuple[list[int], int]:
    """Turns from ``start`` until a state repeats, and the cycle length.

    Every successor of a state that cannot terminate also cannot terminate,
    so following any successor stays inside the stuck region.
    """
    tail: list[int] = []
    pos = {start: 0}
    s = start
    while True:
        ordinal, c = succ[s][0]
        tail.append(ordinal)
        if c in pos:
            return tail, len(tail) - pos[c]
        pos[c] = len(tail)
        s = c
