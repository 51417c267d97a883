"""Checkers over traces and terminal states.

Every checker is a pure function returning a ``CheckResult``. Trace-based
checkers rebuild the physical memory by folding the WRITE entries of the
trace, so they only rely on what the trace recorded.
"""

from __future__ import annotations

import random
from collections import Counter, defaultdict
from dataclasses import dataclass, replace
from typing import Any, Iterable, Iterator, Sequence

from desanon.anonmem import (
    BOTTOM,
    INITIAL_WORD,
    ApplVal,
    Config,
    IndexedMutexVal,
    MutexVal,
    Permutation,
    ProcessId,
    RegisterWord,
    body_value,
    compose,
    draw_permutations,
)
from desanon.trace import Kind, Trace, TraceEntry


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str | None = None

    def __post_init__(self) -> None:
        if self.passed and self.detail is not None:
            object.__setattr__(self, "detail", None)
        if not self.passed and not self.detail:
            object.__setattr__(self, "detail", "failed")

    def __bool__(self) -> bool:
        return self.passed

    def to_json(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


def _ok(name: str) -> CheckResult:
    return CheckResult(name, True)


def _fail(name: str, detail: str) -> CheckResult:
    return CheckResult(name, False, detail)


ACQUIRE_LINES = {"DESA-01": 1, "BITDESA-01": 1, "BITDESA-10": 2}
RELEASE_LINES = {"DESA-04": 1, "BITDESA-04": 1, "BITDESA-13": 2}
INCREMENT_LINES = {"DESA-02": 1, "BITDESA-02": 1, "BITDESA-11": 2}


def line_of(pc: str) -> str:
    return pc.split("/", 1)[0]


def sub_of(pc: str) -> str:
    parts = pc.split("/")
    return parts[1] if len(parts) > 2 else ""


def is_mutex_write(e: TraceEntry) -> bool:
    return e.kind is Kind.WRITE and e.pc.endswith("MUTEX-RW-04")


def shadow_memory(trace: Trace) -> Iterator[tuple[TraceEntry, list[RegisterWord]]]:
    """Yield each entry with the physical memory as it stands after it."""
    cells = [INITIAL_WORD] * trace.m
    for e in trace.entries:
        if e.kind is Kind.WRITE:
            cells[e.physical_index - 1] = e.after
        yield e, cells


@dataclass
class CSInterval:
    ordinal: int
    phase: int
    order: int  # 1-based rank among CS entries of the same phase
    enter: int  # trace position of CS_ENTER
    exit: int | None  # trace position of CS_EXIT


def cs_intervals(trace: Trace) -> list[CSInterval]:
    out: list[CSInterval] = []
    open_: dict[int, CSInterval] = {}
    count: Counter = Counter()
    for pos, e in enumerate(trace.entries):
        if e.kind is Kind.CS_ENTER:
            phase = ACQUIRE_LINES.get(e.pc, 1)
            count[phase] += 1
            iv = CSInterval(e.ordinal, phase, count[phase], pos, None)
            out.append(iv)
            open_[e.ordinal] = iv
        elif e.kind is Kind.CS_EXIT and e.ordinal in open_:
            open_.pop(e.ordinal).exit = pos
    return out


# -- desanonymization properties -------------------------------------------

def check_safety(maps: Sequence[Permutation | None], perms: Sequence[Permutation]) -> CheckResult:
    """Common name y must land on the same physical cell for every process."""
    name = "safety"
    m = perms[0].m
    for i, mp in enumerate(maps, 1):
        if mp is None:
            return _fail(name, f"process {i} has no map")
        if sorted(mp.table) != list(range(1, m + 1)):
            return _fail(name, f"map of process {i} is not a permutation: {list(mp.table)}")
    for y in range(1, m + 1):
        cells = {perms[i](mp(y)) for i, mp in enumerate(maps)}
        if len(cells) != 1:
            return _fail(name, f"common name {y} reaches physical cells {sorted(cells)}")
    return _ok(name)


def check_liveness(result: Any) -> CheckResult:
    name = "liveness"
    if result.error:
        return _fail(name, f"protocol error: {result.error}")
    if not result.terminated:
        pending = [p.ordinal for p in result.state.procs if not p.done]
        return _fail(name, f"budget of {result.cfg.budget} turns exhausted; "
                           f"processes {pending} not done")
    return _ok(name)


def lemma1_counts(trace: Trace) -> list[tuple[int, int, int, int]]:
    """(ordinal, phase, order, cells stamped) for every completed CS.

    Counts distinct physical cells the holder's release sweep wrote BOTTOM
    into with counter stamp equal to the CS order (offset by n in phase 2).
    """
    out = []
    entries = trace.entries
    for iv in cs_intervals(trace):
        if iv.exit is None:
            continue
        want = iv.order + (iv.phase - 1) * trace.n
        cells = set()
        for e in entries[iv.enter:iv.exit + 1]:
            if (e.ordinal == iv.ordinal and e.kind is Kind.WRITE and sub_of(e.pc) == "release"
                    and e.after.ct == want and body_value(e.after.body) is BOTTOM):
                cells.add(e.physical_index)
        out.append((iv.ordinal, iv.phase, iv.order, len(cells)))
    return out


def check_lemma1(trace: Trace, phases: Iterable[int] = (1, 2)) -> CheckResult:
    """The k-th CS holder's release stamps k into at least m-(n-1) registers."""
    name = "lemma1"
    bound = trace.m - (trace.n - 1)
    phases = set(phases)
    for iv in cs_intervals(trace):
        if iv.phase in phases and iv.exit is None:
            return _fail(name, f"process {iv.ordinal} never completed its phase-{iv.phase} release")
    for ordinal, phase, order, count in lemma1_counts(trace):
        if phase in phases and count < bound:
            want = order + (phase - 1) * trace.n
            return _fail(name, f"phase-{phase} CS #{order} (process {ordinal}) stamped ct={want} "
                               f"into {count} < {bound} registers")
    return _ok(name)


def counter_increments(trace: Trace) -> dict[int, list[int]]:
    """Counter values produced at the CS increments, per phase, in trace order."""
    out: dict[int, list[int]] = {1: [], 2: []}
    for e in trace.entries:
        if e.kind is Kind.LOCAL and e.pc in INCREMENT_LINES:
            out[INCREMENT_LINES[e.pc]].append(e.after["ct"])
    return out


def check_counter_sequence(trace: Trace, state: Any = None) -> CheckResult:
    """CS-ordered increments are exactly 1..n (and n+1..2n in phase 2)."""
    name = "counter_sequence"
    n = trace.n
    inc = counter_increments(trace)
    if inc[1] != list(range(1, n + 1)):
        return _fail(name, f"phase-1 increments {inc[1]} != {list(range(1, n + 1))}")
    if trace.variant == "v2" and inc[2] != list(range(n + 1, 2 * n + 1)):
        return _fail(name, f"phase-2 increments {inc[2]} != {list(range(n + 1, 2 * n + 1))}")
    last: dict[int, int] = defaultdict(int)
    for e in trace.entries:
        if e.kind is Kind.LOCAL and e.pc in INCREMENT_LINES:
            seen = e.after["ct"]
        elif e.kind is Kind.WRITE and line_of(e.pc) not in ("BITDESA-15", "BITDESA-16"):
            seen = e.after.ct
        else:
            continue
        if seen < last[e.ordinal]:
            return _fail(name, f"counter of process {e.ordinal} decreased {last[e.ordinal]} -> "
                               f"{seen} at trace entry {e.step}")
        last[e.ordinal] = seen
    if state is not None and trace.variant == "v1":
        finals = sorted(p.ct for p in state.procs)
        if finals != list(range(1, n + 1)):
            return _fail(name, f"final counters {finals} are not {{1..{n}}}")
    return _ok(name)


def check_winner(trace: Trace, state: Any) -> CheckResult:
    name = "winner"
    procs = state.procs
    w1 = [p for p in procs if p.last1]
    if len(w1) != 1:
        return _fail(name, f"{len(w1)} processes have last1")
    if w1[0].map is None or not w1[0].map.is_identity():
        return _fail(name, f"winner {w1[0].ordinal} map is not the identity")
    if trace.variant != "v2":
        return _ok(name)
    w2 = [p for p in procs if p.last2]
    if len(w2) != 1:
        return _fail(name, f"{len(w2)} processes have last2")
    zeros = [x for x, w in enumerate(state.mem.cells, 1) if w.bit != 1]
    if zeros:
        return _fail(name, f"physical cells {zeros} still have bit 0 at termination")
    # bits are set only by the phase-2 winner, after its phase-2 release
    winner = w2[0].ordinal
    released = None
    for pos, e in enumerate(trace.entries):
        if e.kind is Kind.CS_EXIT and e.ordinal == winner and RELEASE_LINES.get(e.pc) == 2:
            released = pos
        elif e.kind is Kind.WRITE and line_of(e.pc) == "BITDESA-15":
            if e.ordinal != winner or released is None:
                return _fail(name, f"process {e.ordinal} set a bit at entry {e.step} before the "
                                   f"phase-2 winner {winner} released")
    return check_bit_phase(trace)


def check_bit_phase(trace: Trace) -> CheckResult:
    """No process leaves the bit-waiting loop before the first bit is set."""
    name = "bit_phase"
    first_set = None
    last_wait: dict[int, int] = {}
    for pos, e in enumerate(trace.entries):
        line = line_of(e.pc)
        if e.kind is Kind.WRITE and line == "BITDESA-15" and first_set is None:
            first_set = pos
        elif e.kind is Kind.READ and line == "BITDESA-16":
            last_wait[e.ordinal] = pos
    for ordinal, pos in sorted(last_wait.items()):
        if first_set is None or pos < first_set:
            return _fail(name, f"process {ordinal} left the bit loop at entry {pos} before the "
                               f"first BITDESA-15 bit write ({first_set})")
    return _ok(name)


def check_bit_monotonicity(trace: Trace) -> CheckResult:
    name = "bit_monotonicity"
    for e in trace.entries:
        if e.kind is Kind.WRITE and e.before.bit > e.after.bit:
            return _fail(name, f"bit of physical cell {e.physical_index} reset at entry {e.step}")
    return _ok(name)


def check_appl(state: Any) -> CheckResult:
    """Each process read back, under every common name, what its writer put there."""
    name = "appl"
    writer = {p.rank: p.ident for p in state.procs}
    for p in state.procs:
        if len(p.appl_got) != len(state.procs):
            return _fail(name, f"process {p.ordinal} read {len(p.appl_got)} values")
        for y, got in enumerate(p.appl_got, 1):
            if got != writer.get(y):
                return _fail(name, f"process {p.ordinal} read {got!r} under name {y}, "
                                   f"expected {writer.get(y)!r}")
    return _ok(name)


# -- mutex contract monitors ------------------------------------------------

def mutual_exclusion(trace: Trace) -> CheckResult:
    name = "mutual_exclusion"
    inside: set[int] = set()
    for e in trace.entries:
        if e.kind is Kind.CS_ENTER:
            if inside:
                return _fail(name, f"process {e.ordinal} enters at entry {e.step} while "
                                   f"{sorted(inside)} inside")
            inside.add(e.ordinal)
        elif e.kind is Kind.CS_EXIT:
            inside.discard(e.ordinal)
    return _ok(name)


def deadlock_freedom(trace: Trace) -> CheckResult:
    """Every process that started an acquire got into the CS."""
    name = "deadlock_freedom"
    started = {(e.ordinal, ACQUIRE_LINES[line_of(e.pc)]) for e in trace.entries
               if e.kind is Kind.READ and line_of(e.pc) in ACQUIRE_LINES}
    entered = {(iv.ordinal, iv.phase) for iv in cs_intervals(trace)}
    missing = sorted(started - entered)
    if missing:
        return _fail(name, f"(process, phase) pairs never entered: {missing}")
    return _ok(name)


def mutex1_writes_id_or_bottom(trace: Trace) -> CheckResult:
    name = "mutex1"
    for e in trace.entries:
        if is_mutex_write(e):
            v = body_value(e.after.body)
            if not (v is BOTTOM or v == trace.id_of(e.ordinal)):
                return _fail(name, f"process {e.ordinal} wrote {v!r} at entry {e.step}")
    return _ok(name)


def mutex2_reads_all_before_cs(trace: Trace) -> CheckResult:
    name = "mutex2"
    m = trace.m
    reads: dict[tuple[int, int], set[int]] = defaultdict(set)
    for e in trace.entries:
        line = line_of(e.pc)
        if e.kind is Kind.READ and line in ACQUIRE_LINES:
            reads[(e.ordinal, ACQUIRE_LINES[line])].add(e.local_index)
        elif e.kind is Kind.CS_ENTER:
            got = reads[(e.ordinal, ACQUIRE_LINES.get(e.pc, 1))]
            if len(got) != m:
                return _fail(name, f"process {e.ordinal} entered at entry {e.step} having read "
                                   f"only local indices {sorted(got)}")
    return _ok(name)


def mutex3_all_cells_on_entry(trace: Trace) -> CheckResult:
    name = "mutex3"
    for e, cells in shadow_memory(trace):
        if e.kind is Kind.CS_ENTER:
            me = trace.id_of(e.ordinal)
            foreign = [x for x, w in enumerate(cells, 1) if body_value(w.body) != me]
            if foreign:
                return _fail(name, f"process {e.ordinal} entered at entry {e.step} without "
                                   f"owning physical cells {foreign}")
    return _ok(name)


def mutex4_at_most_one_write(trace: Trace) -> CheckResult:
    name = "mutex4"
    entries = trace.entries
    intervals = [iv for iv in cs_intervals(trace) if iv.exit is not None]
    release_start: dict[int, int] = {}
    for iv in intervals:
        for pos in range(iv.enter, iv.exit + 1):
            e = entries[pos]
            if e.ordinal == iv.ordinal and sub_of(e.pc) == "release":
                release_start[iv.enter] = pos
                break
    need_before = set(release_start.values())
    need_after = {iv.exit for iv in intervals}
    before_at: dict[int, list[RegisterWord]] = {}
    after_at: dict[int, list[RegisterWord]] = {}
    cells = [INITIAL_WORD] * trace.m
    for pos, e in enumerate(entries):
        if pos in need_before:
            before_at[pos] = list(cells)
        if e.kind is Kind.WRITE:
            cells[e.physical_index - 1] = e.after
        if pos in need_after:
            after_at[pos] = list(cells)
    for iv in intervals:
        writes = Counter(e.ordinal for e in entries[iv.enter:iv.exit + 1]
                         if e.kind is Kind.WRITE and e.ordinal != iv.ordinal)
        over = {o: c for o, c in writes.items() if c > 1}
        if over:
            return _fail(name, f"during CS of process {iv.ordinal} (entry {iv.enter}) "
                               f"others wrote {over}")
        start = release_start.get(iv.enter)
        if start is None:
            continue
        me = trace.id_of(iv.ordinal)
        before, after = before_at[start], after_at[iv.exit]
        for x, (b, a) in enumerate(zip(before, after), 1):
            if body_value(b.body) == me and body_value(a.body) is not BOTTOM:
                return _fail(name, f"release of process {iv.ordinal} left physical cell {x} "
                                   f"holding {body_value(a.body)!r}")
    return _ok(name)


MUTEX_MONITORS = (
    mutual_exclusion,
    deadlock_freedom,
    mutex1_writes_id_or_bottom,
    mutex2_reads_all_before_cs,
    mutex3_all_cells_on_entry,
    mutex4_at_most_one_write,
)


def check_mutex_contract(trace: Trace) -> CheckResult:
    failed = [r for r in (mon(trace) for mon in MUTEX_MONITORS) if not r.passed]
    if failed:
        return _fail("mutex_contract", "; ".join(f"{r.name}: {r.detail}" for r in failed))
    return _ok("mutex_contract")


# -- symmetry ---------------------------------------------------------------

def _rename_value(v: Any, ren: dict) -> Any:
    return ren.get(v, v) if isinstance(v, ProcessId) else v


def _rename_word(w: Any, ren: dict) -> Any:
    if not isinstance(w, RegisterWord):
        return w
    b = w.body
    if isinstance(b, MutexVal):
        b = MutexVal(_rename_value(b.val, ren))
    elif isinstance(b, IndexedMutexVal):
        b = IndexedMutexVal(b.y, _rename_value(b.val, ren))
    elif isinstance(b, ApplVal):
        b = ApplVal(b.y, _rename_value(b.payload, ren))
    return RegisterWord(w.bit, w.ct, b)


def rename_entry(e: TraceEntry, ren: dict, g: Permutation) -> TraceEntry:
    """The entry expected when identities are renamed by ``ren`` and cells by ``g``."""
    phys = None if e.physical_index is None else g(e.physical_index)
    return replace(e, physical_index=phys, before=_rename_word(e.before, ren),
                   after=_rename_word(e.after, ren))


def traces_match(base: Trace, other: Trace, ren: dict, g: Permutation) -> str | None:
    """None if ``other`` is ``base`` up to renaming, else where they differ."""
    if len(base) != len(other):
        return f"trace lengths differ: {len(base)} vs {len(other)}"
    for a, b in zip(base.entries, other.entries):
        if rename_entry(a, ren, g) != b:
            return f"entries differ at step {a.step}: {a} vs {b}"
    return None


def check_equivariance(cfg: Config, seed: int, pairs: int = 50,
                       perms: Sequence[Permutation] | None = None,
                       bijections: Sequence[tuple[Sequence[int], Permutation]] | None = None) -> CheckResult:
    """Renaming identities and relabelling cells must only rename the trace.

    Each pair is a bijection on process identities (as a permutation of
    1..n) and a relabelling g of the physical cells; the renamed run uses
    g∘f_i as adversary and the same random scheduler seed.
    """
    from desanon.sched import default_ids, run

    name = "equivariance"
    cfg = replace(cfg, seed=seed)
    n, m = cfg.n, cfg.m
    perms = list(perms) if perms is not None else draw_permutations(n, m, seed)
    ids = default_ids(n)
    base = run(cfg, seed, perms, ids)
    if bijections is None:
        rng = random.Random(f"equivariance:{seed}")
        bijections = []
        for _ in range(pairs):
            sigma = list(range(1, n + 1))
            rng.shuffle(sigma)
            bijections.append((sigma, Permutation.random(m, rng)))
    for sigma, g in bijections:
        new_ids = tuple(ProcessId(f"p{s}") for s in sigma)
        ren = dict(zip(ids, new_ids))
        other = run(cfg, seed, [compose(g, f) for f in perms], new_ids)
        diff = traces_match(base.trace, other.trace, ren, g)
        if diff:
            return _fail(name, f"identity renaming {list(sigma)}, cell relabelling "
                               f"{list(g.table)}: {diff}")
    return _ok(name)


# -- bundles ----------------------------------------------------------------

def terminal_checks(trace: Trace, state: Any, world: Any) -> list[CheckResult]:
    """Checks applied to every terminal state (exploration and direct runs)."""
    out = [
        check_safety([p.map for p in state.procs], world.perms),
        check_winner(trace, state),
        check_counter_sequence(trace, state),
        check_lemma1(trace),
        check_mutex_contract(trace),
        check_bit_monotonicity(trace),
    ]
    if world.cfg.appl:
        out.append(check_appl(state))
    return out


CHECK_NAMES = ("safety", "liveness", "winner", "counter", "lemma1", "mutex", "bits",
               "appl", "equivariance")


def run_checks(result: Any, names: Iterable[str] = ("all",), equivariance_pairs: int = 3) -> list[CheckResult]:
    names = list(names)
    if "all" in names:
        names = [c for c in CHECK_NAMES if c != "appl" or result.cfg.appl]
    unknown = set(names) - set(CHECK_NAMES)
    if unknown:
        raise ValueError(f"unknown checks: {sorted(unknown)}")
    trace, state = result.trace, result.state
    out = []
    for c in names:
        if c == "liveness":
            out.append(check_liveness(result))
        elif c == "equivariance":
            out.append(check_equivariance(result.cfg, result.cfg.seed, equivariance_pairs,
                                          list(result.world.perms)))
        elif not result.terminated:
            out.append(_fail(c, "run did not terminate"))
        elif c == "safety":
            out.append(check_safety([p.map for p in state.procs], result.world.perms))
        elif c == "winner":
            out.append(check_winner(trace, state))
        elif c == "counter":
            out.append(check_counter_sequence(trace, state))
        elif c == "lemma1":
            out.append(check_lemma1(trace))
        elif c == "mutex":
            out.append(check_mutex_contract(trace))
        elif c == "bits":
            out.append(check_bit_monotonicity(trace))
        elif c == "appl":
            out.append(check_appl(state))
    return out
