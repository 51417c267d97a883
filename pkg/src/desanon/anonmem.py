"""Anonymous shared memory: register words, adversary permutations, M(n)."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from math import gcd
from typing import Any, Sequence

from desanon.trace import Kind, Trace


class ConfigError(ValueError):
    """Invalid configuration (bad sizes, infeasible m, malformed permutation)."""


class ProtocolError(RuntimeError):
    """A protocol step did something the model forbids."""


@dataclass(frozen=True, eq=True)
class ProcessId:
    """Opaque process identity. Equality is the only supported comparison."""

    token: str

    def __repr__(self) -> str:
        return f"<{self.token}>"

    def to_json(self) -> str:
        return self.token


class _Bottom:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self) -> str:
        return "⊥"

    def __reduce__(self):
        return (_Bottom, ())

    def to_json(self) -> None:
        return None


BOTTOM = _Bottom()


def _value_json(v: Any) -> Any:
    if v is BOTTOM:
        return None
    if isinstance(v, ProcessId):
        return v.token
    return v


@dataclass(frozen=True)
class MutexVal:
    val: Any  # ProcessId or BOTTOM

    def to_json(self) -> dict:
        return {"tag": "MUTEX", "val": _value_json(self.val)}


@dataclass(frozen=True)
class DesaVal:
    y: int

    def to_json(self) -> dict:
        return {"tag": "DESA", "y": self.y}


@dataclass(frozen=True)
class IndexedMutexVal:
    y: int
    val: Any

    def to_json(self) -> dict:
        return {"tag": "MUTEX", "y": self.y, "val": _value_json(self.val)}


@dataclass(frozen=True)
class ApplVal:
    y: int
    payload: Any

    def to_json(self) -> dict:
        return {"tag": "APPL", "y": self.y, "payload": _value_json(self.payload)}


RegisterBody = MutexVal | DesaVal | IndexedMutexVal | ApplVal


def body_index(body: RegisterBody) -> int | None:
    """The common index carried by a body, or None for plain mutex values."""
    if isinstance(body, MutexVal):
        return None
    return body.y


def body_value(body: RegisterBody) -> Any:
    """Value position as seen by the mutex: identity or BOTTOM."""
    if isinstance(body, (MutexVal, IndexedMutexVal)):
        return body.val
    return BOTTOM


@dataclass(frozen=True)
class RegisterWord:
    bit: int = 0
    ct: int = 0
    body: RegisterBody = MutexVal(BOTTOM)

    def to_json(self) -> dict:
        return {"bit": self.bit, "ct": self.ct, "body": self.body.to_json()}


INITIAL_WORD = RegisterWord(0, 0, MutexVal(BOTTOM))


@dataclass(frozen=True)
class Permutation:
    """Bijection on 1..m stored as a 1-based forward table."""

    table: tuple[int, ...]

    def __post_init__(self) -> None:
        table = tuple(int(v) for v in self.table)
        object.__setattr__(self, "table", table)
        if sorted(table) != list(range(1, len(table) + 1)):
            raise ConfigError(f"not a permutation of 1..{len(table)}: {list(table)}")

    @classmethod
    def identity(cls, m: int) -> Permutation:
        return cls(tuple(range(1, m + 1)))

    @classmethod
    def random(cls, m: int, rng: random.Random) -> Permutation:
        table = list(range(1, m + 1))
        rng.shuffle(table)
        return cls(tuple(table))

    @property
    def m(self) -> int:
        return len(self.table)

    def __call__(self, x: int) -> int:
        return self.table[x - 1]

    def is_identity(self) -> bool:
        return all(v == x for x, v in enumerate(self.table, 1))

    def to_json(self) -> list[int]:
        return list(self.table)


def apply(p: Permutation, x: int) -> int:
    return p(x)


def compose(p: Permutation, q: Permutation) -> Permutation:
    """p after q: x -> p(q(x))."""
    if p.m != q.m:
        raise ConfigError("cannot compose permutations of different sizes")
    return Permutation(tuple(p(q(x)) for x in range(1, q.m + 1)))


def invert(p: Permutation) -> Permutation:
    inv = [0] * p.m
    for x, v in enumerate(p.table, 1):
        inv[v - 1] = x
    return Permutation(tuple(inv))


def is_in_M(n: int, m: int) -> bool:
    """True iff m != 1 and gcd(l, m) == 1 for every l in 2..n."""
    if m == 1:
        return False
    return all(gcd(l, m) == 1 for l in range(2, n + 1))


def next_in_M(n: int, m_prime: int) -> int:
    m = max(m_prime + 1, 0)
    while not is_in_M(n, m):
        m += 1
    return m


def control_bits(m: int) -> int:
    """Tag bit plus ceil(log2 m) index bits."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return 1 + (m - 1).bit_length()


def infeasibility_reason(n: int, m: int) -> str | None:
    if m == 1:
        return f"m=1 is excluded from M({n})"
    for l in range(2, n + 1):
        g = gcd(l, m)
        if g != 1:
            return f"m={m} is not in M({n}): gcd({l},{m})={g}, need gcd(l,m)=1 for all 1<l<={n}"
    return None


class Variant(str, Enum):
    V1 = "v1"
    V2 = "v2"


class V2Mode(str, Enum):
    LITERAL = "literal"
    INDEXED = "indexed"


class ContenderPolicy(str, Enum):
    FIXED = "fixed-index"
    RANDOM = "seeded-random"


@dataclass(frozen=True)
class Config:
    n: int
    m: int
    variant: Variant = Variant.V1
    v2_mode: V2Mode = V2Mode.INDEXED
    contender_policy: ContenderPolicy = ContenderPolicy.FIXED
    seed: int = 0
    step_budget: int | None = None
    feasibility_gate: bool = True
    appl: bool = False
    mutants: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "v2_mode", V2Mode(self.v2_mode))
        object.__setattr__(self, "contender_policy", ContenderPolicy(self.contender_policy))
        object.__setattr__(self, "mutants", frozenset(self.mutants))
        if self.n < 2:
            raise ConfigError(f"need n >= 2 processes, got {self.n}")
        if self.m < 1:
            raise ConfigError(f"need m >= 1 registers, got {self.m}")
        if self.feasibility_gate:
            reason = infeasibility_reason(self.n, self.m)
            if reason:
                raise ConfigError(reason)
        if self.appl and self.variant is not Variant.V1:
            raise ConfigError("the APPL layer demo runs on top of variant v1 only")
        if self.appl and self.m < self.n:
            raise ConfigError("the APPL layer demo needs m >= n common names")

    @property
    def budget(self) -> int:
        if self.step_budget is not None:
            return self.step_budget
        return 2000 * self.n * self.m

    @property
    def max_acquires(self) -> int:
        return 1 if self.variant is Variant.V1 else 2

    @property
    def indexed(self) -> bool:
        return self.variant is Variant.V2 and self.v2_mode is V2Mode.INDEXED


def draw_permutations(n: int, m: int, seed: int) -> list[Permutation]:
    rng = random.Random(f"perms:{seed}")
    return [Permutation.random(m, rng) for _ in range(n)]


class AnonymousMemory:
    """m physical cells seen by each process through its own permutation.

    Protocol code only goes through ``read``/``write``/``scan`` with local
    indices; ``cells`` and ``perms`` are for the harness and verifier.
    """

    __slots__ = ("cells", "perms", "trace")

    def __init__(self, cells: list[RegisterWord], perms: Sequence[Permutation],
                 trace: Trace | None = None) -> None:
        self.cells = cells
        self.perms = tuple(perms)
        self.trace = trace

    @property
    def m(self) -> int:
        return len(self.cells)

    def clone(self) -> AnonymousMemory:
        return AnonymousMemory(list(self.cells), self.perms, None)

    def _phys(self, i: int, x: int) -> int:
        if not 1 <= x <= len(self.cells):
            raise IndexError(f"local index {x} outside 1..{len(self.cells)}")
        return self.perms[i - 1](x)

    def read(self, i: int, x: int, pc: str = "") -> RegisterWord:
        px = self._phys(i, x)
        word = self.cells[px - 1]
        if self.trace is not None:
            self.trace.append(i, Kind.READ, pc, local_index=x, physical_index=px,
                              before=word, after=word)
        return word

    def write(self, i: int, x: int, *, body: RegisterBody | None = None, ct: int | None = None,
              bit: int | None = None, pc: str = "", force: bool = False) -> RegisterWord:
        """Overwrite either (body, ct) or bit of the cell p_i calls x.

        Setting a bit from 1 back to 0 raises unless ``force`` is given.
        """
        if (body is None) == (bit is None):
            raise ValueError("a write touches either body+ct or bit, not both")
        px = self._phys(i, x)
        old = self.cells[px - 1]
        if bit is not None:
            if old.bit == 1 and bit == 0 and not force:
                raise ProtocolError(f"bit of physical cell {px} reset from 1 to 0")
            new = RegisterWord(bit, old.ct, old.body)
        else:
            new = RegisterWord(old.bit, old.ct if ct is None else ct, body)
        self.cells[px - 1] = new
        if self.trace is not None:
            self.trace.append(i, Kind.WRITE, pc, local_index=x, physical_index=px,
                              before=old, after=new)
        return new

    def scan(self, i: int, pc: str = "") -> list[RegisterWord]:
        """m reads in local order. Non-atomic only when driven step by step."""
        return [self.read(i, x, pc) for x in range(1, len(self.cells) + 1)]


def new_memory(cfg: Config, perms: Sequence[Permutation] | int | None = None,
               trace: Trace | None = None) -> AnonymousMemory:
    """Uniformly initialized memory; ``perms`` may be a list or a seed."""
    if perms is None:
        perms = cfg.seed
    if isinstance(perms, int):
        perms = draw_permutations(cfg.n, cfg.m, perms)
    perms = [p if isinstance(p, Permutation) else Permutation(tuple(p)) for p in perms]
    if len(perms) != cfg.n:
        raise ConfigError(f"need {cfg.n} permutations, got {len(perms)}")
    for p in perms:
        if p.m != cfg.m:
            raise ConfigError(f"permutation over 1..{p.m} but m={cfg.m}")
    return AnonymousMemory([INITIAL_WORD] * cfg.m, perms, trace)


def phys_read(mem: AnonymousMemory, i: int, x: int, pc: str = "") -> RegisterWord:
    return mem.read(i, x, pc)


def phys_write(mem: AnonymousMemory, i: int, x: int, **delta: Any) -> RegisterWord:
    return mem.write(i, x, **delta)


def scan(mem: AnonymousMemory, i: int, pc: str = "") -> list[RegisterWord]:
    return mem.scan(i, pc)
