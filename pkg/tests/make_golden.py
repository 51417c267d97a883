"""Regenerate the golden trace files. Run once; the files are then frozen.

    python tests/make_golden.py
"""

from pathlib import Path

from desanon.anonmem import Config
from desanon.sched import run

GOLDEN_DIR = Path(__file__).parent / "golden"

# name -> (config, scheduler, permutation seed)
GOLDEN = {
    "v1_n2_m3_rr": (Config(2, 3), "rr", 0),
    "v1_n3_m5_seed7": (Config(3, 5, seed=7), 7, 7),
    "v2_n2_m3_seed1": (Config(2, 3, variant="v2", seed=1), 1, 1),
}


def main() -> None:
    GOLDEN_DIR.mkdir(exist_ok=True)
    for name, (cfg, sched, perm_seed) in GOLDEN.items():
        res = run(cfg, sched, perm_seed)
        assert res.terminated, name
        res.trace.write(GOLDEN_DIR / f"{name}.jsonl")


if __name__ == "__main__":
    main()
