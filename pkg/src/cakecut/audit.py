"""Post-hoc fairness and efficiency checks for any allocation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import COMPARE_TOL, Allocation, Profile, nash_welfare, value_of
from .solver import DEFAULT_TOL, SolverError, solve_mnw

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AuditReport:
    envy_free: bool
    envy: float  # max over i, j of v_i(A_j) - v_i(A_i)
    envy_pair: tuple[int, int] | None
    proportional: bool
    shortfall: float  # max over i of v_i(cake)/n - v_i(A_i)
    shortfall_agent: int | None
    mnw_approx: float | None  # None when the solver failed
    nash_welfare: float
    utilities: tuple[float, ...]
    mnw_utilities: tuple[float, ...] | None

    def to_dict(self) -> dict:
        return {
            "envy_free": self.envy_free,
            "envy": self.envy,
            "envy_pair": None if self.envy_pair is None else [k + 1 for k in self.envy_pair],
            "proportional": self.proportional,
            "shortfall": self.shortfall,
            "shortfall_agent": None if self.shortfall_agent is None else self.shortfall_agent + 1,
            "mnw_approx": self.mnw_approx,
            "nash_welfare": self.nash_welfare,
        }


def envy_matrix(profile: Profile, alloc: Allocation) -> np.ndarray:
    """``E[i, j] = v_i(A_j)``."""
    return np.array([[value_of(d, b) for b in alloc.bundles] for d in profile.densities])


def audit(profile: Profile, alloc: Allocation, tol: float = COMPARE_TOL, solver_tol: float = DEFAULT_TOL) -> AuditReport:
    E = envy_matrix(profile, alloc)
    own = np.diag(E).copy()
    gaps = E - own[:, None]
    i, j = np.unravel_index(int(np.argmax(gaps)), gaps.shape)
    envy = float(gaps[i, j])
    short = profile.total_values() / profile.n - own
    k = int(np.argmax(short))
    try:
        mnw_u = np.asarray(solve_mnw(profile, complete=True, tol=solver_tol).utilities)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(mnw_u > 0, own / mnw_u, np.inf)
        approx = float(ratio.min())
        mnw_t = tuple(mnw_u.tolist())
    except SolverError as exc:
        log.warning("MNW reference unavailable: %s", exc)
        approx, mnw_t = None, None
    return AuditReport(
        envy_free=envy <= tol,
        envy=max(envy, 0.0),
        envy_pair=(int(i), int(j)) if envy > 0 else None,
        proportional=float(short[k]) <= tol,
        shortfall=max(float(short[k]), 0.0),
        shortfall_agent=k if short[k] > 0 else None,
        mnw_approx=approx,
        nash_welfare=nash_welfare(profile, alloc),
        utilities=tuple(own.tolist()),
        mnw_utilities=mnw_t,
    )


def dominates(profile: Profile, a: Allocation, b: Allocation, tol: float = COMPARE_TOL) -> bool:
    """Every agent weakly prefers ``a`` to ``b`` and someone strictly."""
    ua, ub = a.utilities(profile), b.utilities(profile)
    return bool(np.all(ua >= ub - tol) and np.any(ua > ub + tol))
