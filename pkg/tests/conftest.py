from __future__ import annotations

from collections import deque

import pytest

from desanon.anonmem import Config
from desanon.sched import World


def reachable_states(cfg: Config, perms=None, limit: int = 500_000):
    """Breadth-first over all interleavings; yields each distinct state once."""
    world = World.build(cfg, perms)
    start = world.initial_state()
    seen = {start.key()}
    todo = deque([start])
    while todo:
        st = todo.popleft()
        yield world, st
        for i in st.enabled():
            nxt = st.clone()
            nxt.step(world, i)
            k = nxt.key()
            if k not in seen:
                seen.add(k)
                if len(seen) > limit:
                    raise RuntimeError("state space larger than the test limit")
                todo.append(nxt)


@pytest.fixture
def cfg23() -> Config:
    return Config(2, 3)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    def record(number: int, passed: bool, detail: str) -> None:
        ACCEPTANCE[number] = (passed, detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
