"""Hard instances and brute-force best-response search.

The search enumerates a finite family of misreports, so every ratio it
returns is a lower bound on the incentive ratio over the searched space only.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .core import (
    MERGE_TOL,
    CakeError,
    Interval,
    PiecewiseDensity,
    Profile,
    _merge_points,
    common_refinement,
    items_profile,
)
from .mechanisms import MechanismSpec, expected_utility
from .solver import DEFAULT_TOL, SolverError

log = logging.getLogger(__name__)

DEFAULT_STEP = 1 / 8
DEFAULT_VALUES = (0.0, 1.0, 2.0, 3.0)
DEFAULT_MAX_CELLS = 4


# --- hard instances -------------------------------------------------------------


def gen_mnw_lb(n: int, eps: float = 1e-3) -> tuple[Profile, PiecewiseDensity]:
    """Three unit cells where agent 0 gains by understating its favourite cell."""
    if n < 2 or eps <= 0:
        raise ValueError("need n >= 2 and eps > 0")
    bps = (0.0, 1.0, 2.0, 3.0)
    dens = [PiecewiseDensity(bps, (n, n - 1, 0), "a1")]
    dens += [PiecewiseDensity(bps, (0, 1, n - 1), f"a{i + 1}") for i in range(1, n)]
    lie = PiecewiseDensity(bps, (eps, 1, n - 1), "a1")
    return common_refinement(dens, Interval(0.0, 3.0)), lie


def mnw_lb_ratio(n: int, eps: float) -> float:
    """Predicted gain of the misreport from :func:`gen_mnw_lb`."""
    return (2 * n - 1 - (n - 1) ** 2 / n * eps) / n


def pa_lb_h(n: int) -> float:
    return ((n - 1) / n) ** (n - 1)


def gen_pa_lb(n: int) -> tuple[Profile, PiecewiseDensity]:
    """Cake [0, n]; agent 0 merges its zero-valued left part into one item."""
    if n < 2:
        raise ValueError("need n >= 2")
    h = pa_lb_h(n)
    cake = Interval(0.0, float(n))
    f1 = PiecewiseDensity((0.0, 1.0 - h, 1.0, float(n)), (0.0, 1.0, 0.0), "a1")
    dens = [f1] + [PiecewiseDensity.uniform(0.0, n, 1.0, f"a{i + 1}") for i in range(1, n)]
    lie = PiecewiseDensity((0.0, 1.0, float(n)), (1.0, 0.0), "a1")
    return common_refinement(dens, cake), lie


def pa_lb_ratio(n: int) -> float:
    return (1 - pa_lb_h(n) / n) ** (1 - n)


def gen_ef2_lb() -> tuple[Profile, PiecewiseDensity]:
    cake = Interval(0.0, 1.0)
    f1 = PiecewiseDensity((0.0, 0.5, 1.0), (1.0, 0.0), "a1")
    f2 = PiecewiseDensity.uniform(name="a2")
    return common_refinement([f1, f2], cake), PiecewiseDensity.uniform(name="a1")


def gen_interp_lb(n: int, k: int, which: int) -> Profile:
    """Items instance ``which`` (1..n+1): premium items sit at positions 1..n.

    For ``which <= n`` agent ``which`` values every item at 1; in instance n+1
    everyone has a premium item.
    """
    if n < 2 or k < 1:
        raise ValueError("need n >= 2 and k >= 1")
    if not 1 <= which <= n + 1:
        raise ValueError(f"instance index must be in 1..{n + 1}, got {which}")
    m = (k + 1) * n
    rows = []
    for j in range(1, n + 1):
        row = [1.0] * m
        if j != which:
            row[j - 1] = float(k * n + 1)
        rows.append(row)
    return items_profile(rows)


def random_profile(rng: np.random.Generator, n: int, m: int, max_value: int = 4, grid: int = 8) -> Profile:
    """Random integer densities on ``m`` cells with boundaries on a 1/``grid`` lattice of [0, 1]."""
    if not 1 <= m <= grid:
        raise ValueError(f"m must be in 1..{grid}")
    cuts = np.sort(rng.choice(np.arange(1, grid), size=m - 1, replace=False)) / grid
    bps = (0.0, *cuts.tolist(), 1.0)
    dens = []
    for i in range(n):
        vals = rng.integers(0, max_value + 1, size=m)
        while vals.sum() == 0:
            vals = rng.integers(0, max_value + 1, size=m)
        dens.append(PiecewiseDensity(bps, tuple(float(v) for v in vals), f"a{i + 1}"))
    return common_refinement(dens, Interval(0.0, 1.0))


def random_items_profile(rng: np.random.Generator, n: int, m: int, max_value: int = 4) -> Profile:
    V = rng.integers(0, max_value + 1, size=(n, m))
    for row in V:
        while row.sum() == 0:
            row[:] = rng.integers(0, max_value + 1, size=m)
    return items_profile(V.tolist())


# --- best-response search -------------------------------------------------------


@dataclass(frozen=True)
class MisreportFamily:
    """Finite, ordered set of misreports for one agent.

    Cake-level families choose up to ``max_cells`` cells with boundaries on
    ``grid``. A ``values_only`` family keeps the profile's cells and varies
    only the value on each. The true density always comes first.
    """

    grid: tuple[float, ...]
    values: tuple[float, ...] = DEFAULT_VALUES
    max_cells: int = DEFAULT_MAX_CELLS
    values_only: bool = False
    include_truth: bool = field(default=True, init=False)

    @classmethod
    def for_profile(
        cls,
        profile: Profile,
        step: float | None = DEFAULT_STEP,
        values: Sequence[float] = DEFAULT_VALUES,
        max_cells: int = DEFAULT_MAX_CELLS,
    ) -> "MisreportFamily":
        """True refinement boundaries plus a uniform grid of relative ``step``."""
        cake = profile.cake
        pts = list(profile.boundaries)
        if step:
            count = int(round(1 / step))
            pts += [cake.lo + k * cake.length / count for k in range(count + 1)]
        return cls(_merge_points(pts), tuple(float(v) for v in values), max_cells)

    @classmethod
    def values_only_for(cls, profile: Profile, values: Sequence[float] = (0, 1, 2, 3, 4)) -> "MisreportFamily":
        return cls(tuple(profile.boundaries), tuple(float(v) for v in values), profile.m, values_only=True)

    def _scale_duplicate(self, vals: tuple[float, ...]) -> bool:
        # Every mechanism here ignores positive rescaling of one report.
        ints = [int(v) for v in vals if v]
        if any(v != int(v) for v in vals) or not ints:
            return False
        return math.gcd(*ints) > 1

    def candidates(self, truth: PiecewiseDensity) -> Iterator[PiecewiseDensity]:
        yield truth
        name = truth.name
        if self.values_only:
            bps = self.grid
            for vals in itertools.product(self.values, repeat=len(bps) - 1):
                if not any(vals):
                    continue
                cand = PiecewiseDensity(bps, vals, name)
                if cand != truth:
                    yield cand
            return
        canon_truth = truth.canonical()
        lo, hi = self.grid[0], self.grid[-1]
        interior = self.grid[1:-1]
        for k in range(1, self.max_cells + 1):
            for cuts in itertools.combinations(interior, k - 1):
                bps = (lo, *cuts, hi)
                for vals in itertools.product(self.values, repeat=k):
                    if not any(vals) or any(a == b for a, b in zip(vals, vals[1:])):
                        continue
                    if self._scale_duplicate(vals):
                        continue
                    cand = PiecewiseDensity(bps, vals, name)
                    if cand != canon_truth:
                        yield cand

    def size(self, truth: PiecewiseDensity) -> int:
        return sum(1 for _ in self.candidates(truth))


@dataclass(frozen=True)
class AttackResult:
    best_ratio: float
    best_misreport: PiecewiseDensity
    truthful_utility: float
    manipulated_utility: float
    agent: int
    evaluated: int
    skipped: int

    def to_dict(self) -> dict:
        return {
            "kind": "searched lower bound",
            "agent": self.agent + 1,
            "best_ratio": self.best_ratio,
            "truthful_utility": self.truthful_utility,
            "manipulated_utility": self.manipulated_utility,
            "best_misreport": self.best_misreport.to_dict(),
            "evaluated": self.evaluated,
            "skipped": self.skipped,
        }


def multi_search(
    specs: Sequence[MechanismSpec],
    profile: Profile,
    agent: int,
    family: MisreportFamily,
    tol: float = DEFAULT_TOL,
) -> list[AttackResult]:
    """Best misreport of ``agent`` in ``family`` against each mechanism.

    Every candidate is judged by the agent's true density. Ties go to the
    earliest candidate in enumeration order. A candidate on which a mechanism
    fails is skipped for that mechanism and logged.
    """
    truth = profile.densities[agent]
    base = []
    for spec in specs:
        u = expected_utility(spec, profile, truth, agent, tol)
        if u <= 0:
            raise CakeError(f"agent {agent + 1} gets zero truthful utility under {spec.label}")
        base.append(u)
    best_u = list(base)
    best_d = [truth] * len(specs)
    evaluated = [0] * len(specs)
    skipped = [0] * len(specs)
    for cand in family.candidates(truth):
        try:
            reported = profile if cand is truth else profile.with_density(agent, cand)
        except CakeError as exc:
            log.warning("skipping misreport %s: %s", cand.values, exc)
            for k in range(len(specs)):
                skipped[k] += 1
            continue
        for k, spec in enumerate(specs):
            try:
                u = expected_utility(spec, reported, truth, agent, tol)
            except (SolverError, CakeError) as exc:
                skipped[k] += 1
                log.warning("skipping misreport %s under %s: %s", cand.values, spec.label, exc)
                continue
            evaluated[k] += 1
            if u > best_u[k]:
                best_u[k], best_d[k] = u, cand
    return [
        AttackResult(best_u[k] / base[k], best_d[k], base[k], best_u[k], agent, evaluated[k], skipped[k])
        for k in range(len(specs))
    ]


def best_response_search(
    spec: MechanismSpec,
    profile: Profile,
    agent: int,
    family: MisreportFamily,
    tol: float = DEFAULT_TOL,
) -> AttackResult:
    """Best misreport of ``agent`` in ``family`` against one mechanism."""
    return multi_search([spec], profile, agent, family, tol)[0]


@dataclass(frozen=True)
class SweepResult:
    ratio: float
    worst_instance: int
    worst: AttackResult
    results: tuple[tuple[AttackResult, ...], ...]
    note: str

    def to_dict(self) -> dict:
        return {
            "kind": "searched lower bound",
            "ratio": self.ratio,
            "worst_instance": self.worst_instance,
            "worst": self.worst.to_dict(),
            "note": self.note,
        }


def incentive_ratio_sweep(
    spec: MechanismSpec | Sequence[MechanismSpec],
    instances: Sequence[Profile],
    family_for=MisreportFamily.for_profile,
    agents: Sequence[int] | None = None,
    tol: float = DEFAULT_TOL,
):
    """Largest searched manipulation gain over instances and agents.

    ``family_for`` maps a profile to its misreport family; ``agents`` limits
    which agents attack (all by default). Given a list of mechanisms, all of
    them are attacked with the same candidates and a list of results returns.
    """
    if not instances:
        raise ValueError("need at least one instance")
    specs = [spec] if isinstance(spec, MechanismSpec) else list(spec)
    per: list[list[list[AttackResult]]] = [[] for _ in specs]
    for prof in instances:
        family = family_for(prof)
        who = range(prof.n) if agents is None else agents
        rows = [multi_search(specs, prof, a, family, tol) for a in who]
        for k in range(len(specs)):
            per[k].append([r[k] for r in rows])
    ns = sorted({p.n for p in instances})
    note = f"lower bound over {len(instances)} instances with n in {ns}"
    out = []
    for k in range(len(specs)):
        best = None
        for idx, row in enumerate(per[k]):
            for res in row:
                if best is None or res.best_ratio > best[0]:
                    best = (res.best_ratio, idx, res)
        out.append(SweepResult(best[0], best[1], best[2], tuple(tuple(r) for r in per[k]), note))
    return out[0] if isinstance(spec, MechanismSpec) else out
