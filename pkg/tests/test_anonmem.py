from itertools import permutations
from math import gcd

import pytest
from hypothesis import given, strategies as st

from desanon.anonmem import (
    BOTTOM, INITIAL_WORD, AnonymousMemory, Config, ConfigError, DesaVal, MutexVal,
    Permutation, ProcessId, ProtocolError, RegisterWord, apply, compose, control_bits,
    draw_permutations, infeasibility_reason, invert, is_in_M, new_memory, next_in_M,
)


def oracle_in_M(n, m):
    return m != 1 and all(gcd(l, m) == 1 for l in range(2, n + 1))


perm_tables = st.integers(1, 9).flatmap(lambda m: st.permutations(list(range(1, m + 1))))


# -- permutations -------------------------------------------------------------

def test_permutation_rejects_non_bijection():
    with pytest.raises(ConfigError):
        Permutation((1, 1, 3))
    with pytest.raises(ConfigError):
        Permutation((0, 1, 2))


def test_invert_examples():
    assert invert(Permutation.identity(4)).is_identity
    assert invert(Permutation((2, 3, 1))).table == (3, 1, 2)


@pytest.mark.parametrize("m", range(1, 8))
def test_compose_exhaustive(m):
    perms = [Permutation(t) for t in permutations(range(1, m + 1))]
    sample = perms if m <= 4 else perms[:: max(1, len(perms) // 40)]
    for p in sample:
        for q in sample:
            pq = compose(p, q)
            assert all(apply(pq, x) == apply(p, apply(q, x)) for x in range(1, m + 1))


@given(perm_tables)
def test_invert_roundtrip(table):
    p = Permutation(tuple(table))
    assert compose(p, invert(p)).is_identity
    assert compose(invert(p), p).is_identity


@given(perm_tables, st.randoms(use_true_random=False))
def test_compose_associative(table, rnd):
    m = len(table)
    p, q, r = Permutation(tuple(table)), Permutation.random(m, rnd), Permutation.random(m, rnd)
    assert compose(p, compose(q, r)) == compose(compose(p, q), r)


def test_draw_permutations_deterministic():
    assert draw_permutations(3, 5, 11) == draw_permutations(3, 5, 11)
    assert draw_permutations(3, 5, 11) != draw_permutations(3, 5, 12)


# -- feasibility ----------------------------------------------------------------

@pytest.mark.parametrize("n,m,expected", [(2, 4, False), (2, 1, False), (3, 5, True), (3, 9, False),
                                          (2, 3, True), (4, 25, True), (5, 7, True)])
def test_is_in_M_examples(n, m, expected):
    assert is_in_M(n, m) is expected


@pytest.mark.parametrize("n,mp,expected", [(2, 3, 5), (4, 4, 5), (3, 0, 5)])
def test_next_in_M_examples(n, mp, expected):
    assert next_in_M(n, mp) == expected


@given(st.integers(2, 12), st.integers(1, 200))
def test_is_in_M_matches_oracle(n, m):
    assert is_in_M(n, m) == oracle_in_M(n, m)


def test_infeasibility_message_cites_gcd():
    msg = infeasibility_reason(2, 4)
    assert "gcd(2,4)=2" in msg
    assert infeasibility_reason(3, 5) is None
    assert "excluded" in infeasibility_reason(3, 1)


@pytest.mark.parametrize("m,bits", [(8, 4), (5, 4), (1, 1), (2, 2), (3, 3), (4, 3), (9, 5)])
def test_control_bits(m, bits):
    assert control_bits(m) == bits


# -- config ---------------------------------------------------------------------

def test_config_gate():
    with pytest.raises(ConfigError, match="gcd"):
        Config(2, 4)
    assert Config(2, 4, feasibility_gate=False).m == 4
    with pytest.raises(ConfigError):
        Config(1, 3)
    with pytest.raises(ConfigError):
        Config(2, 3, variant="v2", appl=True)
    assert Config(3, 5).budget == 2000 * 15
    assert Config(3, 5, step_budget=7).budget == 7


# -- memory ---------------------------------------------------------------------

def test_initial_memory_uniform():
    mem = new_memory(Config(2, 3), [Permutation.identity(3)] * 2)
    assert mem.cells == [RegisterWord(0, 0, MutexVal(BOTTOM))] * 3
    assert mem.scan(1) == [INITIAL_WORD] * 3


def test_write_lands_in_translated_cell():
    mem = AnonymousMemory([INITIAL_WORD] * 3, [Permutation((2, 3, 1)), Permutation.identity(3)])
    p1 = ProcessId("p1")
    mem.write(1, 1, body=MutexVal(p1), ct=1)
    assert mem.cells[1].body == MutexVal(p1)
    assert mem.read(2, 2).body == MutexVal(p1)


def test_read_translation_and_bounds():
    mem = AnonymousMemory([INITIAL_WORD, RegisterWord(0, 0, DesaVal(2)), RegisterWord(0, 7, DesaVal(3))],
                          [Permutation.identity(3), Permutation((3, 1, 2))])
    assert mem.read(1, 2) == RegisterWord(0, 0, DesaVal(2))
    assert mem.read(2, 1).ct == 7
    with pytest.raises(IndexError):
        mem.read(1, 0)
    with pytest.raises(IndexError):
        mem.read(1, 4)


def test_write_preserves_bit_and_sets_bit():
    ident = ProcessId("p1")
    mem = AnonymousMemory([RegisterWord(1, 1, MutexVal(ident)), RegisterWord(0, 3, DesaVal(1))],
                          [Permutation.identity(2)])
    assert mem.write(1, 1, body=DesaVal(2), ct=4) == RegisterWord(1, 4, DesaVal(2))
    assert mem.write(1, 2, bit=1) == RegisterWord(1, 3, DesaVal(1))
    with pytest.raises(ProtocolError):
        mem.write(1, 1, bit=0)
    with pytest.raises(ValueError):
        mem.write(1, 1, bit=1, body=DesaVal(1))


def test_scan_is_not_atomic():
    # cell 1 is rewritten after the scan read it but before it reads cell 2
    p, q = ProcessId("p1"), ProcessId("p2")
    mem = AnonymousMemory([INITIAL_WORD] * 3, [Permutation.identity(3)] * 2)
    snap = [mem.read(1, 1)]
    mem.write(2, 1, body=MutexVal(q), ct=1)
    mem.write(2, 2, body=MutexVal(q), ct=1)
    snap += [mem.read(1, 2), mem.read(1, 3)]
    assert snap[0].body == MutexVal(BOTTOM)
    assert snap[1].body == MutexVal(q)
    assert p != q


def test_process_ids_support_equality_only():
    a, b = ProcessId("p1"), ProcessId("p1")
    assert a == b and hash(a) == hash(b)
    assert ProcessId("p2") != a
    with pytest.raises(TypeError):
        _ = a < ProcessId("p2")
