"""Named reproduction scenarios with pass/fail checks at fixed tolerances."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .adversary import (
    MisreportFamily,
    gen_ef2_lb,
    gen_interp_lb,
    gen_mnw_lb,
    gen_pa_lb,
    incentive_ratio_sweep,
    mnw_lb_ratio,
    random_items_profile,
    random_profile,
)
from .core import Interval, Profile, restrict_profile, value_of
from .mechanisms import (
    MechanismSpec,
    expected_utility,
    pa_factors,
    run_ef2,
    run_interpolated,
    run_mnw_mechanism,
    run_randomized_pa,
)
from .solver import solve_mnw

DEFAULT_SEED = 0
C_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class Check:
    name: str
    observed: float
    expected: str
    passed: bool

    def __post_init__(self):
        object.__setattr__(self, "observed", float(self.observed))
        object.__setattr__(self, "passed", bool(self.passed))

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: observed {self.observed!r} (expected {self.expected})"

    def to_dict(self) -> dict:
        return {"name": self.name, "observed": self.observed, "expected": self.expected, "passed": self.passed}


@dataclass
class ReproResult:
    name: str
    params: dict
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def near(self, name: str, observed: float, expected: float, tol: float) -> None:
        ok = abs(observed - expected) <= tol
        self.checks.append(Check(name, float(observed), f"{expected!r} +/- {tol:g}", ok))

    def at_most(self, name: str, observed: float, bound: float) -> None:
        self.checks.append(Check(name, float(observed), f"<= {bound!r}", observed <= bound))

    def at_least(self, name: str, observed: float, bound: float) -> None:
        self.checks.append(Check(name, float(observed), f">= {bound!r}", observed >= bound))

    def within(self, name: str, observed: float, lo: float, hi: float) -> None:
        self.checks.append(Check(name, float(observed), f"in [{lo!r}, {hi!r}]", lo <= observed <= hi))

    def holds(self, name: str, ok: bool, observed: float = 0.0, expected: str = "true") -> None:
        self.checks.append(Check(name, float(observed), expected, bool(ok)))

    def to_dict(self) -> dict:
        return {
            "scenario": self.name,
            "params": self.params,
            "passed": self.passed,
            "checks": [c.to_dict() for c in self.checks],
        }


def _true_utility(spec, profile, lie, agent=0):
    truth = profile.densities[agent]
    honest = expected_utility(spec, profile, truth, agent)
    lying = expected_utility(spec, profile.with_density(agent, lie), truth, agent)
    return honest, lying


def mnw_lb(n: int = 10, eps: float = 1e-3) -> ReproResult:
    res = ReproResult("mnw-lb", {"n": n, "eps": eps})
    profile, lie = gen_mnw_lb(n, eps)
    sol = solve_mnw(profile)
    lie_sol = solve_mnw(profile.with_density(0, lie))
    honest, lying = _true_utility(MechanismSpec("mnw"), profile, lie)
    res.near("truthful utility of agent 1", honest, float(n), 1e-6)
    res.near("agent 1 owns cell (0,1) when truthful", sol.shares.lengths[0, 0], 1.0, 1e-6)
    res.near(
        "agent 1's share of cell (1,2) under the misreport",
        lie_sol.shares.lengths[0, 1],
        1 - (n - 1) / n * eps,
        1e-6,
    )
    res.near("manipulation ratio", lying / honest, mnw_lb_ratio(n, eps), 1e-4)
    return res


def _pa_lb_closed_form(n: int) -> float:
    h = Fraction(n - 1, n) ** (n - 1)
    return float((1 - h / n) ** (1 - n))


def pa_lb(ns=(10, 200)) -> ReproResult:
    res = ReproResult("pa-lb", {"n": list(ns)})
    spec = MechanismSpec("pa")
    for n in ns:
        profile, lie = gen_pa_lb(n)
        honest, lying = _true_utility(spec, profile, lie)
        ratio = lying / honest
        res.near(f"ratio at n={n} vs closed form", ratio, _pa_lb_closed_form(n), 1e-5)
        if n >= 200:
            res.within(f"ratio at n={n}", ratio, 1.440, 1.4447)
    return res


def ef2_lb(instances: int = 500, attack_instances: int = 20, seed: int = DEFAULT_SEED) -> ReproResult:
    res = ReproResult("ef2-lb", {"instances": instances, "attack_instances": attack_instances, "seed": seed})
    profile, lie = gen_ef2_lb()
    spec = MechanismSpec("ef2")
    honest, lying = _true_utility(spec, profile, lie)
    res.near("truthful utility of agent 1", honest, 3 / 8, 1e-9)
    res.near("manipulated utility of agent 1", lying, 1 / 2, 1e-9)
    res.near("manipulation ratio", lying / honest, 4 / 3, 1e-9)
    rng = np.random.default_rng(seed)
    worst_envy = -math.inf
    worst_short = -math.inf
    for _ in range(instances):
        p = random_profile(rng, 2, int(rng.integers(1, 7)))
        alloc, _ = run_ef2(p)
        u = alloc.utilities(p)
        for i in range(2):
            d = p.densities[i]
            worst_envy = max(worst_envy, value_of(d, alloc.bundles[1 - i]) - u[i])
            worst_short = max(worst_short, d.total / 2 - u[i])
    res.at_most(f"max envy over {instances} random instances", worst_envy, 1e-9)
    res.at_most(f"max proportionality shortfall over {instances} random instances", worst_short, 1e-9)
    if attack_instances:
        insts = [profile] + [random_profile(rng, 2, int(rng.integers(1, 7))) for _ in range(attack_instances)]
        sweep = incentive_ratio_sweep(spec, insts)
        res.at_most("grid-attack ratio over 2-agent instances", sweep.ratio, 4 / 3 + 1e-6)
        res.near("grid attack finds the 4/3 misreport", sweep.results[0][0].best_ratio, 4 / 3, 1e-9)
    return res


def interp_lb(n: int = 3, k: int = 5) -> ReproResult:
    res = ReproResult("interp-lb", {"n": n, "k": k})
    sol = solve_mnw(gen_interp_lb(n, k, n + 1))
    res.near("min utility on instance n+1", float(np.min(sol.utilities)), k * n + k + 1, 1e-5)
    res.near("max utility on instance n+1", float(np.max(sol.utilities)), k * n + k + 1, 1e-5)
    for i in range(1, n + 1):
        sol = solve_mnw(gen_interp_lb(n, k, i))
        res.near(f"instance {i}: utility of agent {i}", sol.utilities[i - 1], n * k + 1, 1e-5)
        own = min(sol.shares.lengths[j - 1, j - 1] for j in range(1, n + 1) if j != i)
        res.near(f"instance {i}: others own their premium item", own, 1.0, 1e-5)
    return res


def grid_nash_welfare(profile: Profile, steps: int) -> float:
    """Best Nash welfare over complete share matrices on a 1/``steps`` grid per cell.

    Independent of the solver: plain enumeration of every way to cut each cell.
    """
    F = profile.value_matrix()
    L = profile.cell_lengths()
    n, m = F.shape
    splits = np.array(
        [c for c in itertools.product(range(steps + 1), repeat=n - 1) if sum(c) <= steps], dtype=float
    )
    splits = np.column_stack([splits, steps - splits.sum(axis=1)]) / steps  # fraction per agent
    # Utility contribution of every split of every cell: (m, S, n).
    contrib = np.stack([splits * (F[:, t] * L[t])[None, :] for t in range(m)])
    best = 0.0
    partial = contrib[0]
    for t in range(1, m - 1):
        partial = (partial[:, None, :] + contrib[t][None, :, :]).reshape(-1, n)
    if m == 1:
        return float(np.max(np.prod(partial, axis=1)) ** (1 / n))
    last = contrib[m - 1]
    for chunk in np.array_split(partial, max(1, len(partial) // 512)):
        u = chunk[:, None, :] + last[None, :, :]
        best = max(best, float(np.max(np.prod(u, axis=2))))
    return best ** (1 / n)


def _random_restrictable(rng):
    while True:
        p = random_profile(rng, int(rng.integers(2, 5)), int(rng.integers(1, 7)))
        a, b = np.sort(rng.uniform(0, 1, size=2))
        if b - a < 1e-6:
            continue
        r = restrict_profile(p, Interval(float(a), float(b)))
        if np.all(r.total_values() > 0):
            return p, r


def monotonicity(instances: int = 200, oracle_instances: int = 30, seed: int = DEFAULT_SEED) -> ReproResult:
    res = ReproResult("monotonicity", {"instances": instances, "oracle_instances": oracle_instances, "seed": seed})
    rng = np.random.default_rng(seed)
    worst = -math.inf
    for _ in range(instances):
        full, cut = _random_restrictable(rng)
        worst = max(worst, float(np.max(solve_mnw(cut).utilities - solve_mnw(full).utilities)))
    res.at_most(f"max utility gain after removing cake ({instances} pairs)", worst, 1e-6)
    worst = 0.0
    for _ in range(instances):
        p = random_profile(rng, int(rng.integers(2, 6)), int(rng.integers(1, 7)))
        order = rng.permutation(p.n)
        u = solve_mnw(p).utilities
        up = solve_mnw(p.permuted(order)).utilities
        back = np.empty(p.n)
        back[order] = up
        worst = max(worst, float(np.max(np.abs(back - u))))
    res.at_most(f"max utility change under agent permutation ({instances} instances)", worst, 1e-6)
    worst = -math.inf
    for _ in range(oracle_instances):
        n, m = int(rng.integers(2, 4)), int(rng.integers(1, 4))
        p = random_profile(rng, n, m)
        steps = 32 if (n, m) == (3, 3) else 64
        nw = float(math.prod(solve_mnw(p).utilities.tolist()) ** (1 / n))
        worst = max(worst, grid_nash_welfare(p, steps) - nw)
    res.at_most(f"grid brute force minus solver Nash welfare ({oracle_instances} instances)", worst, 1e-4)
    return res


def pa_bounds(instances: int = 500, seed: int = DEFAULT_SEED) -> ReproResult:
    res = ReproResult("pa-bounds", {"instances": instances, "seed": seed})
    rng = np.random.default_rng(seed)
    lo, hi = math.inf, -math.inf
    for _ in range(instances):
        p = random_profile(rng, int(rng.integers(1, 6)), int(rng.integers(1, 7)))
        y = pa_factors(p).factors
        lo, hi = min(lo, float(y.min())), max(hi, float(y.max()))
    res.at_least("smallest PA factor", lo, 1 / math.e - 1e-9)
    res.at_most("largest PA factor", hi, 1 + 1e-9)
    return res


def pa_items(instances: int = 20, seed: int = DEFAULT_SEED) -> ReproResult:
    res = ReproResult("pa-items", {"instances": instances, "seed": seed, "n": 3, "m": 3, "values": [0, 1, 2, 3, 4]})
    rng = np.random.default_rng(seed)
    insts = [random_items_profile(rng, 3, 3) for _ in range(instances)]
    sweep = incentive_ratio_sweep(MechanismSpec("pa"), insts, family_for=MisreportFamily.values_only_for)
    res.at_most("values-only attack ratio on fixed items", sweep.ratio, 1 + 1e-6)
    return res


ATTACK_SPECS = tuple([MechanismSpec("mnw"), MechanismSpec("rpa")] + [MechanismSpec("interp", c) for c in C_GRID[1:-1]])


@lru_cache(maxsize=4)
def cake_attack(instances: int = 50, seed: int = DEFAULT_SEED, specs: tuple = ATTACK_SPECS):
    """Grid attack by agent 1 on random 2-3 agent cakes, shared by several scenarios.

    Returns the sweep result of every mechanism in ``specs``, keyed by label.
    """
    rng = np.random.default_rng(seed)
    insts = [random_profile(rng, int(rng.integers(2, 4)), int(rng.integers(1, 7))) for _ in range(instances)]
    sweeps = incentive_ratio_sweep(list(specs), insts, agents=[0])
    return dict(zip((s.label for s in specs), sweeps))


def _interp_spec(c: float) -> MechanismSpec:
    return MechanismSpec("mnw") if c == 0 else MechanismSpec("rpa") if c == 1 else MechanismSpec("interp", c)


def mnw_ub(instances: int = 50, seed: int = DEFAULT_SEED) -> ReproResult:
    res = ReproResult("mnw-ub", {"instances": instances, "seed": seed, "grid": 1 / 8, "max_cells": 4})
    sweep = cake_attack(instances, seed, ATTACK_SPECS)["mnw"]
    res.at_most("MNW grid-attack ratio", sweep.ratio, 2 + 1e-6)
    return res


def rpa_truthful(instances: int = 50, seed: int = DEFAULT_SEED, n: int = 10) -> ReproResult:
    res = ReproResult("rpa-truthful", {"instances": instances, "seed": seed, "n": n, "grid": 1 / 8})
    sweep = cake_attack(instances, seed, ATTACK_SPECS)["rpa"]
    gain = max(r.manipulated_utility - r.truthful_utility for row in sweep.results for r in row)
    res.at_most("max manipulated minus truthful expected utility", gain, 1e-6)
    profile, lie = gen_pa_lb(n)
    honest, lying = _true_utility(MechanismSpec("rpa"), profile, lie)
    h = ((n - 1) / n) ** (n - 1)
    res.near(f"manipulated expected utility on the PA instance (n={n})", lying, h * h, 1e-9)
    res.near(f"truthful expected utility on the PA instance (n={n})", honest, h * (1 - h / n) ** (n - 1), 1e-9)
    res.holds("manipulation does not pay on the PA instance", lying < honest, lying - honest, "< 0")
    return res


def interp_curve(instances: int = 100, attack_instances: int = 50, seed: int = DEFAULT_SEED, c_grid=C_GRID) -> ReproResult:
    res = ReproResult(
        "interp-curve", {"instances": instances, "attack_instances": attack_instances, "seed": seed, "c": list(c_grid)}
    )
    rng = np.random.default_rng(seed)
    profiles = [random_profile(rng, int(rng.integers(2, 6)), int(rng.integers(1, 7))) for _ in range(instances)]
    for c in c_grid:
        worst = math.inf
        for k, p in enumerate(profiles):
            base = solve_mnw(p).utilities
            u = run_interpolated(p, c, seed + k).utilities(p)
            worst = min(worst, float(np.min(u - math.exp(-c) * base)))
        res.at_least(f"c={c:g}: min utility minus e^-c times MNW utility", worst, -1e-6)
    if attack_instances:
        wanted = [_interp_spec(c) for c in c_grid]
        specs = ATTACK_SPECS if set(wanted) <= set(ATTACK_SPECS) else tuple(wanted)
        sweeps = cake_attack(attack_instances, seed, specs)
        for c, spec in zip(c_grid, wanted):
            res.at_most(f"c={c:g}: grid-attack ratio", sweeps[spec.label].ratio, 2 ** (1 - c) + 1e-6)
    same0 = same1 = True
    for k, p in enumerate(profiles):
        mnw = run_mnw_mechanism(p)
        same0 &= bool(np.array_equal(run_interpolated(p, 0.0, seed + k).utilities(p), mnw.utilities(p)))
        same1 &= run_interpolated(p, 1.0, seed + k) == run_randomized_pa(p, seed + k)
    res.holds("c=0 utilities equal MNW utilities exactly", same0)
    res.holds("c=1 equals randomized PA under the same seed", same1)
    return res


SCENARIOS = {
    "mnw-lb": mnw_lb,
    "pa-lb": pa_lb,
    "ef2-lb": ef2_lb,
    "interp-lb": interp_lb,
    "monotonicity": monotonicity,
    "pa-bounds": pa_bounds,
    "rpa-truthful": rpa_truthful,
    "interp-curve": interp_curve,
    "mnw-ub": mnw_ub,
    "pa-items": pa_items,
}

# Acceptance criterion number -> scenario.
CRITERIA = {
    1: "mnw-lb",
    2: "pa-bounds",
    3: "pa-lb",
    4: "pa-items",
    5: "rpa-truthful",
    6: "mnw-ub",
    7: "interp-curve",
    8: "ef2-lb",
    9: "interp-lb",
    10: "monotonicity",
}
