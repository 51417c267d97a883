"""Command-line front end: ``desanon run | explore | mtable``.

Exit codes: 0 all checks pass, 1 violation or budget exceeded, 2 bad configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from desanon.anonmem import (
    Config, ConfigError, Permutation, draw_permutations, is_in_M, next_in_M,
)
from desanon.desa import MUTANTS
from desanon.sched import RoundRobin, explore, run
from desanon.verify import CHECK_NAMES, run_checks

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

# exhaustive exploration is only tractable for tiny systems
EXPLORE_MAX_N, EXPLORE_MAX_M = 3, 5


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags already; keep messages on stderr
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, required=True, help="number of processes")
    p.add_argument("--m", type=int, required=True, help="number of registers")
    p.add_argument("--variant", choices=["v1", "v2"], default="v1")
    p.add_argument("--v2-mode", choices=["literal", "indexed"], default="indexed")
    p.add_argument("--contender", choices=["fixed", "random"], default="fixed",
                   help="local index a waiting contender writes to")
    p.add_argument("--seed", type=int, default=0)
    perm = p.add_mutually_exclusive_group()
    perm.add_argument("--perm-seed", type=int, default=None,
                      help="draw adversary permutations from this seed (default: --seed)")
    perm.add_argument("--perm-file", type=Path, default=None,
                      help="JSON array of n arrays of m 1-based indices")
    p.add_argument("--allow-infeasible", action="store_true",
                   help="run even if m is not in M(n)")
    p.add_argument("--mutate", action="append", default=[], choices=sorted(MUTANTS),
                   metavar="NAME", help="inject a seeded bug (repeatable): " + ", ".join(sorted(MUTANTS)))
    p.add_argument("--appl", action="store_true", help="run the APPL layer after v1")
    p.add_argument("--json", action="store_true", help="machine-readable report on stdout")


def build_config(args: argparse.Namespace, seed: int | None = None) -> Config:
    return Config(
        n=args.n, m=args.m, variant=args.variant, v2_mode=args.v2_mode,
        contender_policy="fixed-index" if args.contender == "fixed" else "seeded-random",
        seed=args.seed if seed is None else seed,
        step_budget=getattr(args, "budget", None),
        feasibility_gate=not args.allow_infeasible,
        appl=args.appl, mutants=frozenset(args.mutate),
    )


def load_perm_file(path: Path, n: int, m: int) -> list[Permutation]:
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read permutation file {path}: {exc}") from exc
    if not isinstance(data, list) or len(data) != n:
        raise ConfigError(f"permutation file must hold {n} arrays")
    perms = []
    for row in data:
        if not isinstance(row, list) or len(row) != m or not all(isinstance(v, int) for v in row):
            raise ConfigError(f"each permutation must be an array of {m} integers")
        perms.append(Permutation(tuple(row)))  # validates bijectivity
    return perms


def _perms(args: argparse.Namespace, seed: int) -> list[Permutation]:
    if args.perm_file is not None:
        return load_perm_file(args.perm_file, args.n, args.m)
    return draw_permutations(args.n, args.m, args.perm_seed if args.perm_seed is not None else seed)


def _check_names(choice: str) -> list[str]:
    names = [s.strip() for s in choice.split(",") if s.strip()]
    bad = [s for s in names if s != "all" and s not in CHECK_NAMES]
    if bad or not names:
        raise ConfigError(f"unknown checks {bad}; choose from all, {', '.join(CHECK_NAMES)}")
    return names


def _one_run(args: argparse.Namespace, seed: int, checks: list[str]) -> dict:
    cfg = build_config(args, seed)
    perms = _perms(args, seed)
    sched = RoundRobin() if args.scheduler == "rr" else seed
    res = run(cfg, sched, perms)
    results = run_checks(res, checks)
    if args.trace_out is not None:
        out = args.trace_out
        if args.runs > 1:
            out = out.with_name(f"{out.stem}.seed{seed}{out.suffix}")
        res.trace.write(out)
    return {
        "seed": seed,
        **res.summary(),
        "budget_exceeded": res.budget_exceeded,
        "perms": [p.to_json() for p in perms],
        "checks": [c.to_json() for c in results],
        "passed": res.terminated and res.error is None and all(results),
    }


def cmd_run(args: argparse.Namespace) -> int:
    checks = _check_names(args.checks)
    build_config(args)  # surface configuration errors before any work
    if args.perm_file is not None:
        load_perm_file(args.perm_file, args.n, args.m)
    seeds = range(args.seed, args.seed + args.runs)
    if args.parallel_seeds > 1 and args.runs > 1:
        with ProcessPoolExecutor(args.parallel_seeds) as pool:
            reports = list(pool.map(_one_run, [args] * len(seeds), seeds, [checks] * len(seeds)))
    else:
        reports = [_one_run(args, s, checks) for s in seeds]
    ok = all(r["passed"] for r in reports)
    if args.json:
        out = reports[0] if len(reports) == 1 else {"passed": ok, "runs": reports}
        print(json.dumps(out, indent=2))
    else:
        for r in reports:
            status = "PASS" if r["passed"] else "FAIL"
            print(f"seed {r['seed']}: {status} terminated={r['terminated']} turns={r['turns']}")
            if r["error"]:
                print(f"  error: {r['error']}")
            for c in r["checks"]:
                if not c["passed"]:
                    print(f"  {c['name']}: {c['detail']}")
        if len(reports) > 1:
            print(f"{sum(r['passed'] for r in reports)}/{len(reports)} runs passed")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_explore(args: argparse.Namespace) -> int:
    if args.n > EXPLORE_MAX_N or args.m > EXPLORE_MAX_M:
        raise ConfigError(f"exploration is limited to n <= {EXPLORE_MAX_N}, m <= {EXPLORE_MAX_M}; "
                          f"got n={args.n}, m={args.m} (use `run` with random seeds instead)")
    cfg = build_config(args)
    perms = _perms(args, args.seed)
    rep = explore(cfg, perms, max_states=args.max_states)
    report = {"n": cfg.n, "m": cfg.m, "variant": cfg.variant.value,
              "perms": [p.to_json() for p in perms], **rep.to_json()}
    written = []
    if rep.violations:
        args.counterexample_dir.mkdir(parents=True, exist_ok=True)
        for idx, v in enumerate(rep.violations):
            if v.trace is None:
                continue
            path = args.counterexample_dir / f"counterexample-{idx}-{v.kind}.jsonl"
            v.trace.write(path)
            written.append(str(path))
    report["counterexample_files"] = written
    print(json.dumps(report, indent=2))
    return EXIT_OK if rep.ok else EXIT_FAIL


def cmd_mtable(args: argparse.Namespace) -> int:
    if args.n < 2:
        raise ConfigError("need n >= 2")
    if args.next is not None:
        value = next_in_M(args.n, args.next)
        print(json.dumps({"n": args.n, "m_prime": args.next, "next": value}) if args.json else value)
        return EXIT_OK
    members = [m for m in range(1, args.max + 1) if is_in_M(args.n, m)]
    if args.json:
        print(json.dumps({"n": args.n, "max": args.max, "members": members}))
    else:
        for m in range(1, args.max + 1):
            print(f"{m:4d}  {'*' if m in members else '.'}")
        print(f"M({args.n}) up to {args.max}: {{{', '.join(map(str, members))}}}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="desanon", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="simulate and check runs")
    _add_config_flags(p)
    p.add_argument("--scheduler", choices=["rr", "random"], default="random")
    p.add_argument("--budget", type=int, default=None, help="step budget (default 2000*n*m)")
    p.add_argument("--trace-out", type=Path, default=None, help="JSON-lines trace output")
    p.add_argument("--checks", default="all", help="all or a comma list of " + ",".join(CHECK_NAMES))
    p.add_argument("--runs", type=int, default=1, help="consecutive seeds starting at --seed")
    p.add_argument("--parallel-seeds", type=int, default=1, metavar="WORKERS",
                   help="worker processes for multi-seed batches")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("explore", help="exhaustively explore all interleavings")
    _add_config_flags(p)
    p.add_argument("--max-states", type=int, default=2_000_000)
    p.add_argument("--counterexample-dir", type=Path, default=Path("."))
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("mtable", help="list members of M(n) or the next feasible m")
    p.add_argument("--n", type=int, required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--max", type=int, help="table of 1..MAX")
    g.add_argument("--next", type=int, metavar="M_PRIME", help="smallest member greater than M_PRIME")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_mtable)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "runs", 1) < 1:
        print("desanon: error: --runs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"desanon: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
