"""Maximum Nash welfare share matrices and the first-order conditions that certify them.

The optimum is found as the equilibrium of the equal-budget Fisher market in
which every refinement cell is a divisible good. Proportional-response bidding
drives the market toward equilibrium; every few rounds the current iterate is
used to guess the set of tight (maximum bang-per-buck) edges, from which the
exact prices follow by solving the price equations on that graph and a
transportation flow. The guess is accepted only if the resulting allocation
passes :func:`check_mnw_condition`.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .core import Allocation, CakeError, Profile, ShareMatrix, realize

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
MAX_ITERATIONS = 1_000_000


class SolverError(RuntimeError):
    """Proportional response did not reach the requested residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class Violation:
    owner: int | None  # None: the cake is unallocated
    rival: int
    cell: int
    magnitude: float


@dataclass(frozen=True)
class ConditionReport:
    satisfied: bool
    worst: Violation | None

    @property
    def magnitude(self) -> float:
        return 0.0 if self.worst is None else self.worst.magnitude


@dataclass(frozen=True)
class MnwSolution:
    shares: ShareMatrix
    utilities: np.ndarray
    kkt_residual: float
    iterations: int

    @cached_property
    def allocation(self) -> Allocation:
        """The shares placed left to right within each cell."""
        return realize(self.shares)

    def ratios(self, profile: Profile) -> np.ndarray:
        """``f_i(X_t) / v_i`` for every agent and cell."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return profile.value_matrix() / self.utilities[:, None]


def _check(profile: Profile, shares: ShareMatrix, tol: float, rivals) -> ConditionReport:
    F = profile.value_matrix()
    L = np.asarray(shares.lengths)
    u = (F * L).sum(axis=1)
    if np.any(u <= 0):
        raise CakeError("every agent needs positive utility for the ratio conditions")
    R = F / u[:, None]
    cell = profile.cell_lengths()
    avail = profile.available()
    rivals = list(rivals)
    if not rivals:
        return ConditionReport(True, None)
    best_rival = np.argmax(R[rivals], axis=0)
    best = R[rivals][best_rival, np.arange(profile.m)]
    worst: Violation | None = None
    owned = L > tol * cell
    for i, t in zip(*np.nonzero(owned)):
        gap = best[t] - R[i, t]
        if gap > 0 and (worst is None or gap > worst.magnitude):
            worst = Violation(int(i), rivals[best_rival[t]], int(t), float(gap))
    unalloc = cell - L.sum(axis=0)
    for t in np.nonzero(avail & (unalloc > tol * cell))[0]:
        gap = best[t]
        if gap > 0 and (worst is None or gap > worst.magnitude):
            worst = Violation(None, rivals[best_rival[t]], int(t), float(gap))
    return ConditionReport(worst is None or worst.magnitude <= tol, worst)


def check_mnw_condition(profile: Profile, shares: ShareMatrix, tol: float = DEFAULT_TOL) -> ConditionReport:
    """Every owner of a cell must have the largest value-to-utility ratio on it.

    Unallocated cake counts as owned by a phantom with ratio 0, so cake that
    some agent values must not be left over.
    """
    return _check(profile, shares, tol, range(profile.n))


def check_weak_mnw(profile: Profile, shares: ShareMatrix, tol: float = DEFAULT_TOL) -> ConditionReport:
    """Like :func:`check_mnw_condition` but agent 0 never counts as a rival."""
    return _check(profile, shares, tol, range(1, profile.n))


def deserves(profile: Profile, solution: MnwSolution, agent: int, cell: int, tol: float = DEFAULT_TOL) -> bool:
    R = solution.ratios(profile)[:, cell]
    return bool(np.all(R[agent] >= R - tol))


def _proportional_response(F: np.ndarray, L: np.ndarray, bids: np.ndarray, rounds: int) -> np.ndarray:
    for _ in range(rounds):
        price = bids.sum(axis=0) / L
        gain = F * (bids / price)
        bids = gain / gain.sum(axis=1, keepdims=True)
    return bids


def _graph_candidates(F: np.ndarray, L: np.ndarray, bids: np.ndarray):
    price = bids.sum(axis=0) / L
    X = bids / price
    u = (F * X).sum(axis=1)
    R = F / u[:, None]
    top = R.max(axis=0)
    seen = set()
    masks = [(R >= top * (1 - d)) & (F > 0) for d in (1e-2, 1e-4)]
    masks.append(X > 1e-3 * L)
    masks += [(R >= top * (1 - d)) & (F > 0) for d in (1e-6, 1e-9)]
    masks.append(X > 1e-7 * L)
    for mask in masks:
        key = mask.tobytes()
        if key not in seen:
            seen.add(key)
            yield mask


def _polish(F: np.ndarray, L: np.ndarray, edges: np.ndarray):
    """Exact equilibrium supported on ``edges``, or None if the guess is wrong."""
    n, m = F.shape
    if not edges.any(axis=0).all() or not edges.any(axis=1).all():
        return None
    # Price equations along a spanning forest: p_t = F[i, t] * beta_i.
    by_agent = [np.flatnonzero(row).tolist() for row in edges]
    by_cell = [np.flatnonzero(col).tolist() for col in edges.T]
    Fl = F.tolist()
    beta = [0.0] * n
    price = [0.0] * m
    seen_a = [False] * n
    seen_c = [False] * m
    for root in range(n):
        if seen_a[root]:
            continue
        comp_agents, comp_cells = [root], []
        seen_a[root] = True
        beta[root] = 1.0
        stack = [root]
        while stack:
            k = stack.pop()
            for t in by_agent[k]:
                if seen_c[t]:
                    continue
                seen_c[t] = True
                price[t] = Fl[k][t] * beta[k]
                comp_cells.append(t)
                for i in by_cell[t]:
                    if not seen_a[i]:
                        seen_a[i] = True
                        beta[i] = price[t] / Fl[i][t]
                        comp_agents.append(i)
                        stack.append(i)
        # Money spent in a component equals its agents' budgets.
        scale = len(comp_agents) / sum(price[t] * L[t] for t in comp_cells)
        for i in comp_agents:
            beta[i] *= scale
        for t in comp_cells:
            price[t] *= scale
    beta = np.array(beta)
    price = np.array(price)
    top = (F * beta[:, None]).max(axis=0)
    if np.any(top > price * (1 + 1e-9)):
        return None
    tight = F * beta[:, None] >= top * (1 - 1e-12)
    tight &= F > 0
    money = _transport(price * L, tight)
    if money is None:
        return None
    _prefer_low_agents_left(money, tight)
    money[money < 1e-14 * (price * L)[None, :]] = 0.0
    X = money / price
    X *= L / X.sum(axis=0)
    return X


def _transport(supply: np.ndarray, edges: np.ndarray) -> np.ndarray | None:
    """Route each cell's money to agents along ``edges`` so every agent spends 1.

    Augmenting paths on the bipartite cell/agent graph; the graphs here are far
    too small for a general max-flow library to pay off.
    """
    n, m = edges.shape
    money = np.zeros((n, m))
    left = supply.astype(float).copy()
    need = np.ones(n)
    eps = 1e-13 * max(1.0, float(supply.sum()))
    adj = [np.nonzero(edges[:, t])[0].tolist() for t in range(m)]
    for t in range(m):
        for i in adj[t]:
            d = min(left[t], need[i])
            if d > 0:
                money[i, t] += d
                left[t] -= d
                need[i] -= d
    while need.max() > eps:
        # Search from cells with money left to an agent still short of budget.
        parent: dict = {}
        queue = deque(("c", t) for t in range(m) if left[t] > eps)
        for node in queue:
            parent[node] = None
        sink = None
        while queue and sink is None:
            kind, k = queue.popleft()
            if kind == "c":
                for i in adj[k]:
                    node = ("a", i)
                    if node not in parent:
                        parent[node] = (kind, k)
                        if need[i] > eps:
                            sink = node
                            break
                        queue.append(node)
            else:
                for t in np.nonzero(money[k] > eps)[0].tolist():
                    node = ("c", t)
                    if node not in parent:
                        parent[node] = (kind, k)
                        queue.append(node)
        if sink is None:
            break
        path = [sink]
        while parent[path[-1]] is not None:
            path.append(parent[path[-1]])
        path.reverse()
        delta = min(left[path[0][1]], need[sink[1]])
        for a, b in zip(path, path[1:]):
            if a[0] == "a":
                delta = min(delta, money[a[1], b[1]])
        for a, b in zip(path, path[1:]):
            if a[0] == "c":
                money[b[1], a[1]] += delta
            else:
                money[a[1], b[1]] -= delta
        left[path[0][1]] -= delta
        need[sink[1]] -= delta
    if need.sum() > n * 1e-9:
        return None
    return money


def _prefer_low_agents_left(money: np.ndarray, tight: np.ndarray) -> None:
    """Among equilibrium flows, move each agent's spending as far left as possible.

    Agents are settled in index order; a settled agent's row never changes.
    Money moves along exchange paths: agent i takes more of cell t, the agents
    holding t give it up and buy along tight edges, and the chain ends where i
    releases a cell to the right of t. Operates in place.
    """
    n, m = money.shape
    eps = 1e-15 * max(1.0, float(money.max(initial=0.0)))
    for i in range(n):
        for t in range(m):
            if not tight[i, t]:
                continue
            while True:
                path = _exchange_path(money, tight, i, t, eps)
                if path is None:
                    break
                cells, holders, release = path
                delta = min(money[j, c] for j, c in zip(holders, cells))
                delta = min(delta, money[i, release])
                money[i, t] += delta
                money[i, release] -= delta
                for k, (j, c) in enumerate(zip(holders, cells)):
                    money[j, c] -= delta
                    nxt = cells[k + 1] if k + 1 < len(cells) else release
                    money[j, nxt] += delta


def _exchange_path(money, tight, i, t, eps):
    n, m = money.shape
    parent: dict[int, tuple[int, int] | None] = {t: None}
    queue = deque([t])
    while queue:
        c = queue.popleft()
        for j in range(i + 1, n):
            if money[j, c] <= eps:
                continue
            for c2 in np.nonzero(tight[j])[0]:
                c2 = int(c2)
                if c2 in parent:
                    continue
                parent[c2] = (j, c)
                if c2 > t and money[i, c2] > eps:
                    cells, holders = [], []
                    node = c2
                    while parent[node] is not None:
                        j2, prev = parent[node]
                        cells.append(prev)
                        holders.append(j2)
                        node = prev
                    cells.reverse()
                    holders.reverse()
                    return cells, holders, c2
                queue.append(c2)
    return None


def solve_mnw(profile: Profile, complete: bool = True, tol: float = DEFAULT_TOL) -> MnwSolution:
    """Shares maximizing the product of agents' values.

    Cells nobody values go to agent 0 when ``complete`` and stay unallocated
    otherwise. Excluded cells are never allocated. Agents with no value left on
    the available cake get utility 0 and are ignored by the optimization.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    return _solve_cached(profile, bool(complete), float(tol))


@lru_cache(maxsize=65536)
def _solve_cached(profile: Profile, complete: bool, tol: float) -> MnwSolution:
    F_all = profile.value_matrix()
    L_all = profile.cell_lengths()
    avail = profile.available()
    n, m = F_all.shape
    active = avail & (F_all.max(axis=0) > 0)
    agents = np.nonzero((F_all[:, active] > 0).any(axis=1))[0]
    shares = np.zeros((n, m))
    iterations = 0
    if len(agents) == 1:
        shares[agents[0], active] = L_all[active]
    elif len(agents) > 1:
        F = F_all[np.ix_(agents, np.nonzero(active)[0])]
        L = L_all[active]
        X = _solve_market(F, L, tol)
        shares[np.ix_(agents, np.nonzero(active)[0])] = X[0]
        iterations = X[1]
    if complete:
        spare = avail & ~active
        shares[0, spare] = L_all[spare]
    sm = ShareMatrix(profile.boundaries, shares, complete)
    utilities = (F_all * sm.lengths).sum(axis=1)
    utilities.setflags(write=False)
    residual = _residual(F_all, sm.lengths, L_all, avail, agents, tol)
    if residual > tol:
        raise SolverError("MNW conditions not met after polishing", residual)
    return MnwSolution(sm, utilities, residual, iterations)


def _residual(F, X, L, avail, agents, tol) -> float:
    if len(agents) < 2:
        return 0.0
    F = F[agents]
    X = X[agents]
    u = (F * X).sum(axis=1)
    R = F / u[:, None]
    top = R.max(axis=0)
    owned = X > tol * L
    gaps = np.where(owned, top[None, :] - R, 0.0)
    unalloc = avail & (L - X.sum(axis=0) > tol * L)
    worst = max(float(gaps.max(initial=0.0)), float(top[unalloc].max(initial=0.0)))
    return worst


def _solve_market(F: np.ndarray, L: np.ndarray, tol: float):
    """Equilibrium lengths for a market where every cell is valued by someone."""
    bids = F * L
    bids = bids / bids.sum(axis=1, keepdims=True)
    done, rounds = 0, 8
    residual = np.inf
    while done < MAX_ITERATIONS:
        bids = _proportional_response(F, L, bids, rounds)
        done += rounds
        for edges in _graph_candidates(F, L, bids):
            X = _polish(F, L, edges)
            if X is None:
                continue
            u = (F * X).sum(axis=1)
            R = F / u[:, None]
            gaps = np.where(X > tol * L, R.max(axis=0) - R, 0.0)
            residual = float(gaps.max(initial=0.0))
            if residual <= tol:
                return X, done
        rounds = min(2 * rounds, MAX_ITERATIONS - done) or 1
    raise SolverError(f"no certified equilibrium within {MAX_ITERATIONS} iterations", residual)
