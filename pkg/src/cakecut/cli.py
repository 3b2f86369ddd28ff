"""Command-line front end.

Exit codes: 0 success or pass, 1 criterion failure, 2 input error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time

import numpy as np

from . import repro
from .adversary import (
    DEFAULT_MAX_CELLS,
    DEFAULT_STEP,
    MisreportFamily,
    best_response_search,
    gen_ef2_lb,
    gen_interp_lb,
    gen_mnw_lb,
    gen_pa_lb,
    random_profile,
)
from .audit import audit
from .core import CakeError
from .io import InputError, dumps, instance_digest, load_allocation, load_instance, utility_table, write_atomic
from .mechanisms import MECHANISM_IDS, MechanismSpec, run_mechanism
from .solver import DEFAULT_TOL, SolverError, solve_mnw

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2, 3
GENERATOR = "numpy.random.PCG64"

log = logging.getLogger("cakecut")


def _emit(args, report: dict, table: list[dict] | None = None) -> None:
    if args.format == "csv":
        if table is None:
            raise InputError(f"--format csv is not available for '{args.command}'")
        text = utility_table(table)
    else:
        text = dumps(report)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)


def _rows(utilities, mnw_utilities) -> list[dict]:
    rows = []
    for k, u in enumerate(utilities):
        m = None if mnw_utilities is None else mnw_utilities[k]
        rows.append({"agent": k + 1, "utility": u, "mnw_utility": m, "ratio": None if not m else u / m})
    return rows


def _spec(args) -> MechanismSpec:
    try:
        return MechanismSpec(args.mechanism, args.c)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def cmd_solve(args) -> int:
    profile = load_instance(args.instance)
    t0 = time.perf_counter()
    sol = solve_mnw(profile, complete=True, tol=args.tol)
    u = [float(x) for x in sol.utilities]
    report = {
        "command": "solve",
        "digest": instance_digest(profile),
        "utilities": u,
        "shares": {"boundaries": list(sol.shares.boundaries), "lengths": sol.shares.lengths.tolist()},
        "allocation": sol.allocation.to_pairs(),
        "kkt_residual": sol.kkt_residual,
        "iterations": sol.iterations,
        "timing": {"seconds": time.perf_counter() - t0},
    }
    _emit(args, report, _rows(u, u))
    return EXIT_OK


def mechanism_report(profile, spec: MechanismSpec, seed: int, tol: float, attack_agent: int | None = None) -> dict:
    """Run, audit and optionally attack one mechanism; all numbers depend only on the inputs."""
    t0 = time.perf_counter()
    alloc = run_mechanism(spec, profile, seed, tol)
    rep = audit(profile, alloc, solver_tol=tol)
    out = {
        "mechanism": spec.id,
        "params": {} if spec.c is None else {"c": spec.c},
        "seed": seed,
        "generator": GENERATOR,
        "digest": instance_digest(profile),
        "utilities": list(rep.utilities),
        "mnw_utilities": None if rep.mnw_utilities is None else list(rep.mnw_utilities),
        "allocation": alloc.to_pairs(),
        "audit": rep.to_dict(),
    }
    if attack_agent is not None:
        family = MisreportFamily.for_profile(profile)
        out["attack"] = best_response_search(spec, profile, attack_agent, family, tol).to_dict()
    out["timing"] = {"seconds": time.perf_counter() - t0}
    return out


def cmd_run(args) -> int:
    profile = load_instance(args.instance)
    spec = _spec(args)
    agent = None if args.attack_agent is None else _agent_index(args.attack_agent, profile.n)
    report = mechanism_report(profile, spec, args.seed, args.tol, agent)
    _emit(args, report, _rows(report["utilities"], report["mnw_utilities"]))
    return EXIT_OK


def cmd_audit(args) -> int:
    profile = load_instance(args.instance)
    alloc = load_allocation(args.allocation)
    if alloc.n != profile.n:
        raise InputError(f"{args.allocation}: {alloc.n} bundles for {profile.n} agents")
    rep = audit(profile, alloc, solver_tol=args.tol)
    report = {
        "command": "audit",
        "digest": instance_digest(profile),
        "utilities": list(rep.utilities),
        "mnw_utilities": None if rep.mnw_utilities is None else list(rep.mnw_utilities),
        "audit": rep.to_dict(),
    }
    _emit(args, report, _rows(report["utilities"], report["mnw_utilities"]))
    return EXIT_OK


def _agent_index(agent: int, n: int) -> int:
    if not 1 <= agent <= n:
        raise InputError(f"agent must be in 1..{n}, got {agent}")
    return agent - 1


def cmd_attack(args) -> int:
    profile = load_instance(args.instance)
    spec = _spec(args)
    agent = _agent_index(args.agent, profile.n)
    if args.values_only:
        family = MisreportFamily.values_only_for(profile, args.values or (0, 1, 2, 3, 4))
    else:
        family = MisreportFamily.for_profile(profile, args.step, args.values or (0, 1, 2, 3), args.max_cells)
    t0 = time.perf_counter()
    res = best_response_search(spec, profile, agent, family, args.tol)
    report = {
        "command": "attack",
        "mechanism": spec.id,
        "params": {} if spec.c is None else {"c": spec.c},
        "digest": instance_digest(profile),
        "family": {
            "values_only": family.values_only,
            "grid": list(family.grid),
            "values": list(family.values),
            "max_cells": family.max_cells,
        },
        "attack": res.to_dict(),
        "timing": {"seconds": time.perf_counter() - t0},
    }
    _emit(args, report)
    return EXIT_OK


def _repro_kwargs(args) -> dict:
    name = args.name
    kw: dict = {}
    if name == "mnw-lb":
        kw = {"n": args.n or 10, "eps": args.eps}
    elif name == "pa-lb":
        kw = {"ns": (args.n,) if args.n else (10, 200)}
    elif name == "interp-lb":
        kw = {"n": args.n or 3, "k": args.k}
    elif name == "rpa-truthful" and args.n:
        kw = {"n": args.n}
    if name in ("ef2-lb", "monotonicity", "pa-bounds", "rpa-truthful", "interp-curve", "mnw-ub", "pa-items"):
        kw["seed"] = args.seed
        if args.instances is not None:
            kw["instances"] = args.instances
    if name in ("ef2-lb", "interp-curve") and args.attack_instances is not None:
        kw["attack_instances"] = args.attack_instances
    if name == "interp-curve" and args.c_grid:
        kw["c_grid"] = tuple(args.c_grid)
    return kw


def cmd_repro(args) -> int:
    if args.name not in repro.SCENARIOS:
        raise InputError(f"unknown scenario {args.name!r}; expected one of {', '.join(repro.SCENARIOS)}")
    t0 = time.perf_counter()
    res = repro.SCENARIOS[args.name](**_repro_kwargs(args))
    for check in res.checks:
        print(check.line(), file=sys.stderr)
    report = res.to_dict()
    report["timing"] = {"seconds": time.perf_counter() - t0}
    _emit(args, report)
    return EXIT_OK if res.passed else EXIT_FAIL


GEN_NAMES = ("mnw-lb", "mnw-lb-lie", "pa-lb", "pa-lb-lie", "ef2-lb", "ef2-lb-lie", "interp-lb", "random")


def cmd_gen(args) -> int:
    name = args.name
    if name.startswith("mnw-lb"):
        profile, lie = gen_mnw_lb(args.n or 3, args.eps)
    elif name.startswith("pa-lb"):
        profile, lie = gen_pa_lb(args.n or 10)
    elif name.startswith("ef2-lb"):
        profile, lie = gen_ef2_lb()
    elif name == "interp-lb":
        n = args.n or 3
        profile, lie = gen_interp_lb(n, args.k, args.which or n + 1), None
    else:
        rng = np.random.default_rng(args.seed)
        profile, lie = random_profile(rng, args.n or 3, args.m), None
    if name.endswith("-lie"):
        profile = profile.with_density(0, lie)
    _emit(args, profile.to_dict())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tol", type=float, default=DEFAULT_TOL, help="solver tolerance (default 1e-9)")
    common.add_argument("--seed", type=int, default=0, help="seed for the PCG64 generator (default 0)")
    common.add_argument("--out", help="write the report here (atomically) instead of stdout")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="cakecut", description="MNW cake cutting: solve, run, audit, attack.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common], help="compute the MNW allocation")
    p.add_argument("instance")
    p.set_defaults(func=cmd_solve)

    def mech(p):
        p.add_argument("--mechanism", "-m", choices=MECHANISM_IDS, default="mnw")
        p.add_argument("--c", type=float, default=None, help="exponent for interp and interp-items")

    p = sub.add_parser("run", parents=[common], help="run a mechanism and audit its output")
    p.add_argument("instance")
    mech(p)
    p.add_argument("--attack-agent", type=int, help="also search misreports of this agent (1-based)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("audit", parents=[common], help="audit an allocation file")
    p.add_argument("instance")
    p.add_argument("allocation")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("attack", parents=[common], help="best-response search for one agent")
    p.add_argument("instance")
    mech(p)
    p.add_argument("--agent", type=int, default=1, help="attacking agent (1-based)")
    p.add_argument("--grid", "--step", dest="step", type=float, default=DEFAULT_STEP, help="grid resolution relative to the cake")
    p.add_argument("--values", type=float, nargs="+")
    p.add_argument("--max-cells", type=int, default=DEFAULT_MAX_CELLS)
    p.add_argument("--values-only", action="store_true", help="keep the cells fixed, vary values only")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("repro", parents=[common], help="run a named reproduction scenario")
    p.add_argument("name", help=", ".join(repro.SCENARIOS))
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--c-grid", type=float, nargs="+")
    p.add_argument("--instances", type=int)
    p.add_argument("--attack-instances", type=int, help="instances for the grid attack (ef2-lb, interp-curve)")
    p.set_defaults(func=cmd_repro)

    p = sub.add_parser("gen", parents=[common], help="write a named hard instance as an instance file")
    p.add_argument("name", choices=GEN_NAMES)
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int, default=4)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--which", type=int, help="interp-lb instance index (1..n+1)")
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SolverError as exc:
        print(f"error: solver did not converge (KKT residual {exc.residual:.3g}): {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (InputError, CakeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
