"""Division mechanisms built on the MNW solution, plus the two-agent envy-free rule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    MERGE_TOL,
    Allocation,
    CakeError,
    Interval,
    PiecewiseDensity,
    Profile,
    ShareMatrix,
    realize,
    to_share_matrix,
    value_of,
)
from .solver import DEFAULT_TOL, MnwSolution, solve_mnw

MECHANISM_IDS = ("mnw", "pa", "rpa", "interp", "interp-items", "ef2", "even-split")
RANDOMIZED = ("rpa", "interp")


@dataclass(frozen=True)
class MechanismSpec:
    """Mechanism id plus its exponent ``c`` (only for the interpolated family)."""

    id: str
    c: float | None = None

    def __post_init__(self):
        if self.id not in MECHANISM_IDS:
            raise ValueError(f"unknown mechanism {self.id!r}; expected one of {', '.join(MECHANISM_IDS)}")
        if self.id in ("interp", "interp-items"):
            c = 1.0 if self.c is None else float(self.c)
            if not 0.0 <= c <= 1.0:
                raise ValueError(f"c must lie in [0, 1], got {c}")
            object.__setattr__(self, "c", c)
        elif self.c is not None:
            raise ValueError(f"mechanism {self.id!r} takes no parameter c")

    @property
    def label(self) -> str:
        return self.id if self.c is None else f"{self.id}(c={self.c:g})"

    @property
    def exponent(self) -> float:
        """Power applied to the PA factors (0 means plain MNW)."""
        if self.id in ("pa", "rpa"):
            return 1.0
        if self.id in ("interp", "interp-items"):
            return self.c
        return 0.0


@dataclass(frozen=True)
class PaIntermediate:
    full: MnwSolution
    leaveout: tuple[MnwSolution | None, ...]
    factors: np.ndarray


@dataclass(frozen=True)
class Ef2Trace:
    x: float
    y: float
    p: float
    q: float
    swapped: bool
    branch: str


def _mnw_allocation(profile: Profile, tol: float = DEFAULT_TOL) -> tuple[MnwSolution, Allocation]:
    sol = solve_mnw(profile, complete=True, tol=tol)
    return sol, sol.allocation


def run_mnw_mechanism(profile: Profile, tol: float = DEFAULT_TOL) -> Allocation:
    """Complete MNW allocation, placed left to right within each cell."""
    return _mnw_allocation(profile, tol)[1]


def pa_factors(profile: Profile, tol: float = DEFAULT_TOL) -> PaIntermediate:
    """Each agent's share of its MNW piece under Partial Allocation.

    The factor of agent i is the others' Nash product with i present divided
    by their Nash product in the MNW solution without i.
    """
    full = solve_mnw(profile, complete=True, tol=tol)
    n = profile.n
    if n == 1:
        return PaIntermediate(full, (None,), np.ones(1))
    u = np.asarray(full.utilities)
    factors = np.empty(n)
    leaveout = []
    for i in range(n):
        sub = solve_mnw(profile.without_agent(i), complete=True, tol=tol)
        leaveout.append(sub)
        others = np.delete(u, i)
        # Ratio of products taken in log space: n can be in the hundreds.
        factors[i] = math.exp(float(np.sum(np.log(others)) - np.sum(np.log(sub.utilities))))
    factors.setflags(write=False)
    return PaIntermediate(full, tuple(leaveout), factors)


def _factors(profile: Profile, exponent: float, tol: float) -> tuple[MnwSolution, np.ndarray]:
    if exponent == 0.0:
        return solve_mnw(profile, complete=True, tol=tol), np.ones(profile.n)
    inter = pa_factors(profile, tol)
    return inter.full, np.minimum(inter.factors, 1.0) ** exponent


def agent_factor(profile: Profile, agent: int, exponent: float = 1.0, tol: float = DEFAULT_TOL) -> tuple[MnwSolution, float]:
    """One agent's (powered) PA factor; needs only the full and one leave-out solve."""
    full = solve_mnw(profile, complete=True, tol=tol)
    if exponent == 0.0 or profile.n == 1:
        return full, 1.0
    sub = solve_mnw(profile.without_agent(agent), complete=True, tol=tol)
    others = np.delete(np.asarray(full.utilities), agent)
    y = math.exp(float(np.sum(np.log(others)) - np.sum(np.log(sub.utilities))))
    return full, min(y, 1.0) ** exponent


def _kept(sol: MnwSolution, factors: np.ndarray) -> ShareMatrix:
    return ShareMatrix(sol.shares.boundaries, sol.shares.lengths * factors[:, None], False)


def _keep_rightmost(profile: Profile, exponent: float, tol: float) -> Allocation:
    sol, y = _factors(profile, exponent, tol)
    pieces = sol.allocation
    if np.all(y == 1.0):
        return pieces
    return realize(_kept(sol, y), "rightmost", pieces=pieces)


def _keep_cyclic(profile: Profile, exponent: float, seed, tol: float) -> Allocation:
    sol, y = _factors(profile, exponent, tol)
    pieces = sol.allocation
    if np.all(y == 1.0):
        return pieces
    return realize(_kept(sol, y), "cyclic", seed=seed, pieces=pieces)


def run_pa(profile: Profile, tol: float = DEFAULT_TOL) -> Allocation:
    """Partial Allocation keeping the rightmost factor-fraction of every piece."""
    return _keep_rightmost(profile, 1.0, tol)


def run_randomized_pa(profile: Profile, seed=None, tol: float = DEFAULT_TOL) -> Allocation:
    """Partial Allocation keeping a uniformly rotated cyclic arc of every piece."""
    return _keep_cyclic(profile, 1.0, seed, tol)


def run_interpolated(profile: Profile, c: float, seed=None, tol: float = DEFAULT_TOL) -> Allocation:
    """Randomized PA with factors raised to the power ``c``; ``c = 0`` is plain MNW."""
    if not 0.0 <= c <= 1.0:
        raise ValueError(f"c must lie in [0, 1], got {c}")
    return _keep_cyclic(profile, float(c), seed, tol)


def run_interpolated_items(profile: Profile, c: float, tol: float = DEFAULT_TOL) -> Allocation:
    """Deterministic interpolation for fixed items: rightmost fraction, factors to the power ``c``."""
    if not 0.0 <= c <= 1.0:
        raise ValueError(f"c must lie in [0, 1], got {c}")
    return _keep_rightmost(profile, float(c), tol)


def run_even_split(profile: Profile) -> Allocation:
    """Every cell cut into n equal consecutive pieces, piece k to agent k."""
    n = profile.n
    bundles: list[list[tuple[float, float]]] = [[] for _ in range(n)]
    avail = profile.available()
    for t, cell in enumerate(profile.cells):
        if not avail[t]:
            continue
        step = cell.length / n
        for k in range(n):
            hi = cell.hi if k == n - 1 else cell.lo + (k + 1) * step
            bundles[k].append((cell.lo + k * step, hi))
    return Allocation.from_pairs(bundles, complete=True)


def half_point(density: PiecewiseDensity, segment: Interval) -> float:
    """Leftmost point splitting ``segment`` into two halves of equal value."""
    cdf = density._cdf()
    bps = np.asarray(density.breakpoints)
    lo_mass = float(np.interp(segment.lo, bps, cdf))
    hi_mass = float(np.interp(segment.hi, bps, cdf))
    if hi_mass - lo_mass <= 0.0:
        return segment.lo
    target = 0.5 * (lo_mass + hi_mass)
    k = int(np.searchsorted(cdf, target, side="left"))
    k = min(max(k, 1), len(bps) - 1)
    # cdf[k - 1] < target <= cdf[k], so cell k - 1 carries positive density.
    x = bps[k - 1] + (target - cdf[k - 1]) / density.values[k - 1]
    return float(min(max(x, segment.lo), segment.hi))


def _point_half(density: PiecewiseDensity, lo: float, hi: float) -> float:
    if hi - lo <= MERGE_TOL:
        return lo
    return half_point(density, Interval(lo, hi))


def run_ef2(profile: Profile) -> tuple[Allocation, Ef2Trace]:
    """Envy-free two-agent division from the agents' half-points.

    The agent whose half-point is further left plays the first role.
    """
    if profile.n != 2:
        raise CakeError(f"the two-agent mechanism needs exactly 2 agents, got {profile.n}")
    cake = profile.cake
    d = profile.densities
    x = half_point(d[0], cake)
    y = half_point(d[1], cake)
    swapped = x > y
    first, second = (d[1], d[0]) if swapped else (d[0], d[1])
    if swapped:
        x, y = y, x
    p = _point_half(first, x, y)
    q = _point_half(second, x, y)
    if p <= q + MERGE_TOL:
        branch = "p<=q"
        a1 = [(cake.lo, p)]
        a2 = [(p, cake.hi)]
    else:
        branch = "p>q"
        a1 = [(cake.lo, x), (p, y)]
        a2 = [(x, p), (y, cake.hi)]
    bundles = [a2, a1] if swapped else [a1, a2]
    alloc = Allocation.from_pairs(bundles, complete=True)
    return alloc, Ef2Trace(x, y, p, q, swapped, branch)


def run_mechanism(spec: MechanismSpec, profile: Profile, seed=None, tol: float = DEFAULT_TOL) -> Allocation:
    if spec.id == "mnw":
        return run_mnw_mechanism(profile, tol)
    if spec.id == "pa":
        return run_pa(profile, tol)
    if spec.id == "rpa":
        return run_randomized_pa(profile, seed, tol)
    if spec.id == "interp":
        return run_interpolated(profile, spec.c, seed, tol)
    if spec.id == "interp-items":
        return run_interpolated_items(profile, spec.c, tol)
    if spec.id == "ef2":
        return run_ef2(profile)[0]
    return run_even_split(profile)


def expected_utility(
    spec: MechanismSpec,
    profile: Profile,
    true_density: PiecewiseDensity,
    agent: int,
    tol: float = DEFAULT_TOL,
) -> float:
    """Utility of ``agent`` (valued with ``true_density``) when ``profile`` is reported.

    Randomized mechanisms keep every point of an agent's MNW piece with
    probability equal to its factor, so their expectation is that factor times
    the true value of the piece; nothing is sampled.
    """
    if spec.id in RANDOMIZED:
        sol, y = agent_factor(profile, agent, spec.exponent, tol)
        piece = sol.allocation.bundles[agent]
        return float(y * value_of(true_density, piece))
    alloc = run_mechanism(spec, profile, tol=tol)
    return value_of(true_density, alloc.bundles[agent])


def mechanism_shares(spec: MechanismSpec, profile: Profile, seed=None, tol: float = DEFAULT_TOL) -> ShareMatrix:
    return to_share_matrix(profile, run_mechanism(spec, profile, seed, tol))
