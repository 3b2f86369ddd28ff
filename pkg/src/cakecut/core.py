"""Piecewise-constant densities, profiles, and allocations over an interval cake.

Agents are indexed from 0 in the Python API. Reports and the CLI label them
from 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

#: Breakpoints closer than this are treated as the same point.
MERGE_TOL = 1e-12
#: Default tolerance for numeric comparisons of values and lengths.
COMPARE_TOL = 1e-9


class CakeError(ValueError):
    """An input lies outside the cake or violates a representation invariant."""


@dataclass(frozen=True, order=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise CakeError(f"interval endpoints must be finite, got [{lo}, {hi}]")
        if not lo < hi:
            raise CakeError(f"interval must have positive length, got [{lo}, {hi}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def contains(self, other: "Interval", tol: float = MERGE_TOL) -> bool:
        return other.lo >= self.lo - tol and other.hi <= self.hi + tol

    def overlap(self, lo: float, hi: float) -> float:
        """Length of the intersection with [lo, hi]."""
        return max(0.0, min(self.hi, hi) - max(self.lo, lo))


def union_intervals(intervals: Iterable[Interval], tol: float = MERGE_TOL) -> tuple[Interval, ...]:
    """Sort and merge intervals that overlap or touch (within ``tol``)."""
    out: list[list[float]] = []
    for iv in sorted(intervals):
        if out and iv.lo <= out[-1][1] + tol:
            out[-1][1] = max(out[-1][1], iv.hi)
        else:
            out.append([iv.lo, iv.hi])
    return tuple(Interval(lo, hi) for lo, hi in out)


def _intervals_from_pairs(pairs: Iterable[tuple[float, float]]) -> list[Interval]:
    """Build intervals, silently dropping empty or negative-length pairs."""
    return [Interval(lo, hi) for lo, hi in pairs if hi - lo > 0.0]


@dataclass(frozen=True)
class PiecewiseDensity:
    """A value density that is constant between consecutive breakpoints.

    ``values[k]`` is the density on ``(breakpoints[k], breakpoints[k + 1])``.
    """

    breakpoints: tuple[float, ...]
    values: tuple[float, ...]
    name: str = field(default="", compare=False)

    def __post_init__(self):
        bps = tuple(float(b) for b in self.breakpoints)
        vals = tuple(float(v) for v in self.values)
        if len(bps) < 2:
            raise CakeError("a density needs at least two breakpoints")
        if len(vals) != len(bps) - 1:
            raise CakeError(
                f"expected {len(bps) - 1} values for {len(bps)} breakpoints, got {len(vals)}"
            )
        if not all(math.isfinite(b) for b in bps):
            raise CakeError("breakpoints must be finite")
        if any(b2 <= b1 for b1, b2 in zip(bps, bps[1:])):
            raise CakeError(f"breakpoints must be strictly increasing: {bps}")
        if any(not math.isfinite(v) or v < 0 for v in vals):
            raise CakeError(f"density values must be finite and nonnegative: {vals}")
        if sum(v * (b2 - b1) for v, b1, b2 in zip(vals, bps, bps[1:])) <= 0:
            raise CakeError("density has zero total value")
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "values", vals)

    @classmethod
    def uniform(cls, lo: float = 0.0, hi: float = 1.0, value: float = 1.0, name: str = ""):
        return cls((lo, hi), (value,), name)

    @classmethod
    def from_pieces(cls, cake: Interval, pieces: Sequence[tuple[float, float, float]], name: str = ""):
        """Density equal to ``v`` on each ``(lo, hi, v)`` piece and zero elsewhere."""
        bps = {cake.lo, cake.hi}
        for lo, hi, _ in pieces:
            bps.update((lo, hi))
        grid = sorted(bps)
        vals = []
        for a, b in zip(grid, grid[1:]):
            mid = 0.5 * (a + b)
            vals.append(sum(v for lo, hi, v in pieces if lo <= mid <= hi))
        return cls(tuple(grid), tuple(vals), name).canonical()

    @property
    def span(self) -> Interval:
        return Interval(self.breakpoints[0], self.breakpoints[-1])

    @property
    def total(self) -> float:
        return float(self._cdf()[-1])

    def _cdf(self) -> np.ndarray:
        b = np.asarray(self.breakpoints)
        return np.concatenate(([0.0], np.cumsum(np.asarray(self.values) * np.diff(b))))

    def cdf(self, x: float) -> float:
        """Value of ``[span.lo, x]``."""
        return float(np.interp(x, self.breakpoints, self._cdf()))

    def integral(self, lo: float, hi: float) -> float:
        cdf = self._cdf()
        return float(np.interp(hi, self.breakpoints, cdf) - np.interp(lo, self.breakpoints, cdf))

    def value_at(self, x: float) -> float:
        """Density on the open cell containing ``x`` (the right cell at a breakpoint)."""
        k = int(np.searchsorted(self.breakpoints, x, side="right")) - 1
        k = min(max(k, 0), len(self.values) - 1)
        return self.values[k]

    def canonical(self) -> "PiecewiseDensity":
        """Merge adjacent cells carrying the same value."""
        bps = [self.breakpoints[0]]
        vals: list[float] = []
        for v, b in zip(self.values, self.breakpoints[1:]):
            if vals and vals[-1] == v:
                bps[-1] = b
            else:
                vals.append(v)
                bps.append(b)
        return PiecewiseDensity(tuple(bps), tuple(vals), self.name)

    def scaled(self, factor: float) -> "PiecewiseDensity":
        return PiecewiseDensity(self.breakpoints, tuple(v * factor for v in self.values), self.name)

    def to_dict(self) -> dict:
        return {"name": self.name, "breakpoints": list(self.breakpoints), "values": list(self.values)}


def value_of(density: PiecewiseDensity, intervals: Iterable[Interval]) -> float:
    """Integral of ``density`` over the union of ``intervals``."""
    span = density.span
    merged = union_intervals(intervals)
    for iv in merged:
        if not span.contains(iv):
            raise CakeError(f"interval [{iv.lo}, {iv.hi}] lies outside the cake [{span.lo}, {span.hi}]")
    if not merged:
        return 0.0
    cdf = density._cdf()
    los = np.interp([iv.lo for iv in merged], density.breakpoints, cdf)
    his = np.interp([iv.hi for iv in merged], density.breakpoints, cdf)
    return float(np.sum(his - los))


def _merge_points(points: Iterable[float], tol: float = MERGE_TOL) -> tuple[float, ...]:
    out: list[float] = []
    for p in sorted(points):
        if not out or p - out[-1] > tol:
            out.append(p)
    return tuple(out)


@dataclass(frozen=True)
class Profile:
    """Reported densities of all agents over a common cake.

    ``boundaries`` is the common refinement. ``pinned`` boundaries stay in the
    refinement whatever the agents report (fixed items). Cells inside an
    ``excluded`` interval are not part of the cake for allocation purposes.
    """

    cake: Interval
    densities: tuple[PiecewiseDensity, ...]
    boundaries: tuple[float, ...]
    pinned: tuple[float, ...] = ()
    excluded: tuple[Interval, ...] = ()

    @property
    def n(self) -> int:
        return len(self.densities)

    @property
    def m(self) -> int:
        return len(self.boundaries) - 1

    @property
    def cells(self) -> tuple[Interval, ...]:
        return tuple(Interval(a, b) for a, b in zip(self.boundaries, self.boundaries[1:]))

    def cell_lengths(self) -> np.ndarray:
        return np.diff(np.asarray(self.boundaries))

    def value_matrix(self) -> np.ndarray:
        """``F[i, t]``: density of agent ``i`` on refinement cell ``t``."""
        mids = 0.5 * (np.asarray(self.boundaries[:-1]) + np.asarray(self.boundaries[1:]))
        F = np.empty((self.n, self.m))
        for i, d in enumerate(self.densities):
            k = np.searchsorted(d.breakpoints, mids, side="right") - 1
            F[i] = np.asarray(d.values)[np.clip(k, 0, len(d.values) - 1)]
        return F

    def available(self) -> np.ndarray:
        """Mask of cells that may be allocated."""
        mask = np.ones(self.m, dtype=bool)
        for t, (a, b) in enumerate(zip(self.boundaries, self.boundaries[1:])):
            mid = 0.5 * (a + b)
            if any(ex.lo <= mid <= ex.hi for ex in self.excluded):
                mask[t] = False
        return mask

    def total_values(self) -> np.ndarray:
        """Each agent's value for the available cake."""
        return (self.value_matrix() * (self.cell_lengths() * self.available())).sum(axis=1)

    def with_density(self, agent: int, density: PiecewiseDensity) -> "Profile":
        """Same profile with one agent's report replaced (refinement rebuilt)."""
        dens = list(self.densities)
        dens[agent] = density
        return common_refinement(dens, self.cake, pinned=self.pinned, excluded=self.excluded)

    def without_agent(self, agent: int) -> "Profile":
        dens = [d for k, d in enumerate(self.densities) if k != agent]
        return common_refinement(dens, self.cake, pinned=self.pinned, excluded=self.excluded)

    def permuted(self, order: Sequence[int]) -> "Profile":
        return common_refinement(
            [self.densities[k] for k in order], self.cake, pinned=self.pinned, excluded=self.excluded
        )

    def to_dict(self) -> dict:
        out = {
            "cake": {"lo": self.cake.lo, "hi": self.cake.hi},
            "agents": [d.to_dict() for d in self.densities],
        }
        if self.pinned:
            out["cells"] = list(self.pinned)
        if self.excluded:
            out["excluded"] = [[iv.lo, iv.hi] for iv in self.excluded]
        return out


def common_refinement(
    densities: Sequence[PiecewiseDensity],
    cake: Interval,
    pinned: Iterable[float] = (),
    excluded: Iterable[Interval] = (),
) -> Profile:
    """Build the profile whose cells are the coarsest common refinement.

    Refinement boundaries come from each density's canonical breakpoints,
    the pinned points and the endpoints of excluded intervals.
    """
    if not densities:
        raise CakeError("a profile needs at least one agent")
    for k, d in enumerate(densities):
        span = d.span
        if abs(span.lo - cake.lo) > MERGE_TOL or abs(span.hi - cake.hi) > MERGE_TOL:
            raise CakeError(
                f"agent {k + 1} spans [{span.lo}, {span.hi}] but the cake is [{cake.lo}, {cake.hi}]"
            )
    pinned = tuple(sorted(float(p) for p in pinned))
    excluded = union_intervals(excluded)
    for p in pinned:
        if not cake.lo - MERGE_TOL <= p <= cake.hi + MERGE_TOL:
            raise CakeError(f"pinned boundary {p} lies outside the cake")
    for ex in excluded:
        if not cake.contains(ex):
            raise CakeError(f"excluded interval [{ex.lo}, {ex.hi}] lies outside the cake")
    points = [cake.lo, cake.hi, *pinned]
    for d in densities:
        points.extend(d.canonical().breakpoints[1:-1])
    for ex in excluded:
        points.extend((ex.lo, ex.hi))
    points = [min(max(p, cake.lo), cake.hi) for p in points]
    bounds = list(_merge_points(points))
    bounds[0], bounds[-1] = cake.lo, cake.hi
    if len(bounds) >= 3 and bounds[-1] - bounds[-2] <= MERGE_TOL:
        del bounds[-2]
    return Profile(cake, tuple(densities), tuple(bounds), pinned, excluded)


def make_profile(
    breakpoints: Sequence[Sequence[float]],
    values: Sequence[Sequence[float]],
    pinned: Iterable[float] = (),
) -> Profile:
    """Convenience constructor from raw per-agent breakpoint/value lists."""
    dens = [PiecewiseDensity(tuple(b), tuple(v), f"a{k + 1}") for k, (b, v) in enumerate(zip(breakpoints, values))]
    cake = Interval(dens[0].breakpoints[0], dens[0].breakpoints[-1])
    return common_refinement(dens, cake, pinned=pinned)


def items_profile(values: Sequence[Sequence[float]], widths: Sequence[float] | None = None) -> Profile:
    """Homogeneous-items view: unit-width (or given-width) items laid side by side.

    Item boundaries are pinned, so reports can never merge or split items.
    """
    values = [list(map(float, row)) for row in values]
    m = len(values[0])
    widths = [1.0] * m if widths is None else list(map(float, widths))
    bps = tuple(np.concatenate(([0.0], np.cumsum(widths))).tolist())
    dens = [PiecewiseDensity(bps, tuple(row), f"a{k + 1}") for k, row in enumerate(values)]
    return common_refinement(dens, Interval(bps[0], bps[-1]), pinned=bps)


@dataclass(frozen=True)
class ShareMatrix:
    """Lengths of each refinement cell held by each agent."""

    boundaries: tuple[float, ...]
    lengths: np.ndarray
    complete: bool = False

    def __post_init__(self):
        L = np.asarray(self.lengths, dtype=float)
        if L.ndim != 2 or L.shape[1] != len(self.boundaries) - 1:
            raise CakeError(f"share matrix shape {L.shape} does not match {len(self.boundaries) - 1} cells")
        cell = np.diff(np.asarray(self.boundaries))
        slack = COMPARE_TOL * np.maximum(cell, 1.0)
        if np.any(L < -slack) or np.any(L > cell + slack):
            raise CakeError("share entries must lie in [0, cell length]")
        if np.any(L.sum(axis=0) > cell + slack):
            raise CakeError("shares of a cell exceed its length")
        L = np.clip(L, 0.0, cell)
        L.setflags(write=False)
        object.__setattr__(self, "lengths", L)

    @property
    def n(self) -> int:
        return self.lengths.shape[0]

    def cell_lengths(self) -> np.ndarray:
        return np.diff(np.asarray(self.boundaries))

    def utilities(self, profile: Profile) -> np.ndarray:
        return (profile.value_matrix() * self.lengths).sum(axis=1)


@dataclass(frozen=True)
class Allocation:
    """Per-agent bundles of positioned intervals; ``complete`` means no free disposal."""

    bundles: tuple[tuple[Interval, ...], ...]
    complete: bool = False

    def __post_init__(self):
        object.__setattr__(self, "bundles", tuple(union_intervals(b) for b in self.bundles))

    @classmethod
    def from_pairs(cls, bundles: Sequence[Iterable[tuple[float, float]]], complete: bool = False):
        return cls(tuple(tuple(_intervals_from_pairs(b)) for b in bundles), complete)

    @property
    def n(self) -> int:
        return len(self.bundles)

    def measure(self, agent: int) -> float:
        return sum(iv.length for iv in self.bundles[agent])

    def utilities(self, profile: Profile) -> np.ndarray:
        return np.array([value_of(d, b) for d, b in zip(profile.densities, self.bundles)])

    def to_pairs(self) -> list[list[list[float]]]:
        return [[[iv.lo, iv.hi] for iv in b] for b in self.bundles]

    def to_dict(self) -> dict:
        return {"complete": self.complete, "bundles": self.to_pairs()}


def check_disjoint(alloc: Allocation, tol: float = COMPARE_TOL) -> None:
    """Raise if two agents' bundles overlap in more than a measure-zero set."""
    tagged = sorted((iv.lo, iv.hi, k) for k, b in enumerate(alloc.bundles) for iv in b)
    reach, owner = -math.inf, -1
    for lo, hi, k in tagged:
        if k != owner and lo < reach - tol:
            raise CakeError(f"bundles of agents {owner + 1} and {k + 1} overlap near {lo}")
        if hi > reach:
            reach, owner = hi, k


def nash_welfare(profile: Profile, alloc: Allocation) -> float:
    """Geometric mean of the agents' values for their bundles."""
    u = alloc.utilities(profile)
    if np.any(u <= 0):
        return 0.0
    return float(math.prod(u.tolist()) ** (1.0 / len(u)))


def to_share_matrix(profile: Profile, alloc: Allocation) -> ShareMatrix:
    """Measure of each bundle inside each refinement cell."""
    if alloc.n != profile.n:
        raise CakeError(f"allocation has {alloc.n} bundles for {profile.n} agents")
    check_disjoint(alloc)
    b = np.asarray(profile.boundaries)
    L = np.zeros((profile.n, profile.m))
    for i, bundle in enumerate(alloc.bundles):
        for iv in bundle:
            if not profile.cake.contains(iv):
                raise CakeError(f"interval [{iv.lo}, {iv.hi}] lies outside the cake")
            L[i] += np.clip(np.minimum(b[1:], iv.hi) - np.maximum(b[:-1], iv.lo), 0.0, None)
    return ShareMatrix(profile.boundaries, L, alloc.complete)


def rightmost_piece(piece: Interval, length: float) -> Interval | None:
    """The right end of ``piece`` with the given length."""
    lo = max(piece.lo, piece.hi - length)
    if not lo < piece.hi:
        return None
    return Interval(lo, piece.hi)


def cyclic_slice(piece: Interval, length: float, start: float) -> list[Interval]:
    """Arc of ``length`` starting at ``start`` with ``piece`` treated as a cycle."""
    if length <= 0:
        return []
    if length >= piece.length:
        return [piece]
    end = start + length
    if end <= piece.hi:
        return _intervals_from_pairs([(start, end)])
    return _intervals_from_pairs([(start, piece.hi), (piece.lo, piece.lo + end - piece.hi)])


def realize(
    matrix: ShareMatrix,
    policy: str = "left-to-right",
    seed: int | np.random.Generator | None = None,
    pieces: Allocation | None = None,
) -> Allocation:
    """Place the shares of ``matrix`` as concrete intervals.

    ``left-to-right`` packs agents in index order from each cell's left end.
    ``rightmost`` and ``cyclic`` cut each agent's share out of that agent's
    piece of the cell in ``pieces`` (its right end, or a cyclic arc with a
    uniformly drawn start).
    """
    bounds = matrix.boundaries
    L = matrix.lengths
    n, m = L.shape
    if policy == "left-to-right":
        out: list[list[tuple[float, float]]] = [[] for _ in range(n)]
        for t in range(m):
            a, b = bounds[t], bounds[t + 1]
            cursor = a
            for i in range(n):
                if L[i, t] > 0:
                    hi = min(cursor + L[i, t], b)
                    out[i].append((cursor, hi))
                    cursor = hi
        return Allocation.from_pairs(out, matrix.complete)
    if policy not in ("rightmost", "cyclic"):
        raise ValueError(f"unknown placement policy {policy!r}")
    if pieces is None or pieces.n != n:
        raise CakeError(f"policy {policy!r} needs the parent pieces of every agent")
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    out2: list[list[Interval]] = [[] for _ in range(n)]
    for i in range(n):
        for t in range(m):
            cell = (bounds[t], bounds[t + 1])
            parts = [
                Interval(max(iv.lo, cell[0]), min(iv.hi, cell[1]))
                for iv in pieces.bundles[i]
                if min(iv.hi, cell[1]) > max(iv.lo, cell[0])
            ]
            if not parts:
                if L[i, t] > COMPARE_TOL:
                    raise CakeError(f"agent {i + 1} has a share in cell {t} but no piece there")
                continue
            if len(parts) > 1:
                raise CakeError(f"agent {i + 1}'s piece in cell {t} is not a single interval")
            piece = parts[0]
            if L[i, t] > piece.length * (1 + COMPARE_TOL) + MERGE_TOL:
                raise CakeError(f"share of agent {i + 1} in cell {t} exceeds its piece")
            if policy == "rightmost":
                kept = rightmost_piece(piece, L[i, t])
                if kept is not None:
                    out2[i].append(kept)
            else:
                start = piece.lo + rng.random() * piece.length
                out2[i].extend(cyclic_slice(piece, L[i, t], start))
    return Allocation(tuple(tuple(b) for b in out2), False)


def restrict_profile(profile: Profile, removed: Interval) -> Profile:
    """The same agents over the cake with ``removed`` taken out."""
    if not profile.cake.contains(removed):
        raise CakeError(f"removed interval [{removed.lo}, {removed.hi}] is not inside the cake")
    return common_refinement(
        profile.densities, profile.cake, pinned=profile.pinned, excluded=(*profile.excluded, removed)
    )


def scale_cake(profile: Profile, target: Interval) -> Profile:
    """Affinely move the profile onto ``target``; densities keep their values."""
    src = profile.cake
    ratio = target.length / src.length

    def f(x: float) -> float:
        if x == src.hi:
            return target.hi
        return target.lo + (x - src.lo) * ratio

    dens = [
        PiecewiseDensity(tuple(f(b) for b in d.breakpoints), d.values, d.name) for d in profile.densities
    ]
    return common_refinement(
        dens,
        target,
        pinned=[f(p) for p in profile.pinned],
        excluded=[Interval(f(e.lo), f(e.hi)) for e in profile.excluded],
    )
