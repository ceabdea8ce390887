"""Probability-simplex geometry, decision maker utilities and policies.

Distributions are plain 1-D numpy arrays (batches are 2-D, one row per
point).  Grids enumerate integer compositions of ``k`` into ``m`` parts in
lexicographic order, so a grid point ``counts / k`` is an exact rational.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from math import comb
from typing import Sequence

import numpy as np

SUM_TOL = 1e-12
TIE_TOL = 1e-12


def make_distribution(probs: Sequence[float]) -> np.ndarray:
    """Validate ``probs`` as a point of the simplex and return a float array."""
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size < 2:
        raise ValueError(f"distribution needs at least 2 outcomes, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("distribution has non-finite entries")
    if np.any(p < 0):
        raise ValueError(f"distribution has negative entries: {p}")
    if abs(p.sum() - 1.0) > SUM_TOL:
        raise ValueError(f"distribution sums to {p.sum()!r}, not 1")
    return p


@dataclass(frozen=True)
class UtilityMatrix:
    """Decision-by-outcome payoffs; used for both the DM and the expert bias."""

    values: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError(f"utility matrix must be 2-D, got shape {v.shape}")
        n, m = v.shape
        if n < 1:
            raise ValueError("utility matrix needs at least one decision")
        if m < 2:
            raise ValueError("utility matrix needs at least two outcomes")
        if not np.all(np.isfinite(v)):
            raise ValueError("utility matrix has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        labels = tuple(self.labels) if self.labels else tuple(f"d{i}" for i in range(n))
        if len(labels) != n:
            raise ValueError(f"{len(labels)} labels for {n} decisions")
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def rows(self, index: Sequence[int]) -> "UtilityMatrix":
        index = list(index)
        return UtilityMatrix(self.values[index], tuple(self.labels[i] for i in index))

    def index(self, label: str) -> int:
        return self.labels.index(label)


ExpertBias = UtilityMatrix


def expected_utility(u: UtilityMatrix, i: int, p) -> float:
    """Expected utility ``u_i . p`` of decision ``i``."""
    if not 0 <= i < u.n:
        raise IndexError(f"decision index {i} out of range for {u.n} decisions")
    if len(p) and isinstance(p[0], Fraction):
        return sum((Fraction(x) * q for x, q in zip(u.values[i], p)), Fraction(0))
    return float(u.values[i] @ make_distribution(p))


def _argmax_with_ties(eu: np.ndarray, rank: np.ndarray) -> np.ndarray:
    """Row-wise argmax treating values within TIE_TOL (relative) as ties."""
    best = eu.max(axis=1, keepdims=True)
    tol = TIE_TOL * np.maximum(1.0, np.abs(best))
    tied = eu >= best - tol
    return np.argmin(np.where(tied, rank[None, :], np.iinfo(np.int64).max), axis=1)


@dataclass(frozen=True)
class DecisionPolicy:
    """Deterministic expected-utility maximizer with an explicit tie order.

    ``tie_break`` lists decision indices from most to least preferred; exact
    ties (and float ties within 1e-12 relative) go to the earliest one.
    """

    utility: UtilityMatrix
    tie_break: tuple[int, ...] = ()

    def __post_init__(self):
        order = tuple(self.tie_break) if self.tie_break else tuple(range(self.utility.n))
        if sorted(order) != list(range(self.utility.n)):
            raise ValueError(f"tie_break {order} is not a permutation of the decisions")
        object.__setattr__(self, "tie_break", order)

    @cached_property
    def _rank(self) -> np.ndarray:
        rank = np.empty(self.utility.n, dtype=np.int64)
        rank[list(self.tie_break)] = np.arange(self.utility.n)
        return rank

    def __call__(self, p) -> int:
        if len(p) and isinstance(p[0], Fraction):
            return self.decide_exact(p)
        return int(self.decide_many(np.asarray(p, dtype=float)[None, :])[0])

    def decide_many(self, points: np.ndarray) -> np.ndarray:
        eu = np.atleast_2d(points) @ self.utility.values.T
        return _argmax_with_ties(eu, self._rank)

    def decide_exact(self, p: Sequence[Fraction]) -> int:
        """Exact argmax on rational input (utility floats converted exactly)."""
        vals = [sum((Fraction(float(x)) * Fraction(q) for x, q in zip(row, p)), Fraction(0))
                for row in self.utility.values]
        best = max(vals)
        return min((i for i, v in enumerate(vals) if v == best), key=lambda i: self._rank[i])


def make_policy(u: UtilityMatrix, tie_break: Sequence[int] = ()) -> DecisionPolicy:
    """Policy that takes the DM's expected-utility maximizing decision."""
    return DecisionPolicy(u, tuple(tie_break))


def softmax_policy(u: UtilityMatrix, lam: float, p) -> np.ndarray:
    """Stochastic policy: decision probabilities proportional to exp(lam * u_i.p)."""
    if lam <= 0:
        raise ValueError("softmax temperature lambda must be positive")
    z = lam * (u.values @ make_distribution(p))
    z -= z.max()
    w = np.exp(z)
    return w / w.sum()


def _compositions(k: int, m: int) -> np.ndarray:
    if m == 1:
        return np.array([[k]], dtype=np.int64)
    blocks = []
    for first in range(k + 1):
        rest = _compositions(k - first, m - 1)
        blocks.append(np.column_stack([np.full(len(rest), first, dtype=np.int64), rest]))
    return np.vstack(blocks)


@dataclass(frozen=True)
class SimplexGrid:
    """All points ``c / k`` with ``c`` a composition of ``k`` into ``m`` parts."""

    m: int
    resolution: int

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("simplex grids need m >= 2 (m = 1 is a single point)")
        if self.resolution < 1:
            raise ValueError("grid resolution must be a positive integer")

    @cached_property
    def counts(self) -> np.ndarray:
        c = _compositions(self.resolution, self.m)
        c.setflags(write=False)
        return c

    @cached_property
    def points(self) -> np.ndarray:
        p = self.counts / self.resolution
        p.setflags(write=False)
        return p

    @property
    def size(self) -> int:
        return comb(self.resolution + self.m - 1, self.m - 1)

    @property
    def step(self) -> float:
        """L2 distance between adjacent grid points."""
        return np.sqrt(2.0) / self.resolution

    @cached_property
    def _keys(self) -> np.ndarray:
        return self.encode(self.counts)

    def encode(self, counts: np.ndarray) -> np.ndarray:
        base = self.resolution + 1
        weights = base ** np.arange(self.m - 1, -1, -1, dtype=np.int64)
        return np.atleast_2d(counts) @ weights

    def lookup(self, counts: np.ndarray) -> np.ndarray:
        """Grid indices of composition rows (-1 where not a grid point)."""
        counts = np.atleast_2d(counts)
        valid = np.all(counts >= 0, axis=1) & (counts.sum(axis=1) == self.resolution)
        keys = self.encode(np.where(valid[:, None], counts, 0))
        idx = np.searchsorted(self._keys, keys)
        idx = np.clip(idx, 0, len(self._keys) - 1)
        hit = valid & (self._keys[idx] == keys)
        return np.where(hit, idx, -1)

    def snap(self, p) -> int:
        """Index of the grid point nearest (L2) to ``p``."""
        d = np.linalg.norm(self.points - np.asarray(p, dtype=float), axis=1)
        return int(np.argmin(d))

    def line_directions(self) -> list[np.ndarray]:
        """Unit moves ``e_a - e_b`` (a < b) along which grid lines run."""
        dirs = []
        for a in range(self.m):
            for b in range(a + 1, self.m):
                d = np.zeros(self.m, dtype=np.int64)
                d[a], d[b] = 1, -1
                dirs.append(d)
        return dirs


@dataclass
class RegionMap:
    """Policy assignment over a grid plus detected decision boundaries."""

    grid: SimplexGrid
    assignment: np.ndarray
    boundaries: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    n: int = 0

    def region(self, i: int) -> np.ndarray:
        return self.grid.points[self.assignment == i]

    def nonempty(self) -> list[int]:
        return sorted(set(int(a) for a in np.unique(self.assignment)))


def decision_regions(u: UtilityMatrix, grid: SimplexGrid, policy: DecisionPolicy | None = None) -> RegionMap:
    """Assign every grid point its decision and find boundaries between regions.

    A boundary pair ``(i, j)`` (``i < j``) is recorded wherever two adjacent
    grid points are assigned ``i`` and ``j``; the representative points are
    the midpoints of those flips.
    """
    if grid.m != u.m:
        raise ValueError(f"grid has {grid.m} outcomes, utility matrix {u.m}")
    policy = policy or make_policy(u)
    assign = policy.decide_many(grid.points)
    counts = grid.counts
    found: dict[tuple[int, int], list[np.ndarray]] = {}
    for d in grid.line_directions():
        nbr = grid.lookup(counts + d)
        ok = nbr >= 0
        src = np.nonzero(ok)[0]
        dst = nbr[ok]
        flip = assign[src] != assign[dst]
        for s, t in zip(src[flip], dst[flip]):
            i, j = sorted((int(assign[s]), int(assign[t])))
            found.setdefault((i, j), []).append(0.5 * (grid.points[s] + grid.points[t]))
    boundaries = {pair: np.array(pts) for pair, pts in sorted(found.items())}
    return RegionMap(grid, assign, boundaries, u.n)


def boundary_points_1d(u: UtilityMatrix, resolution: int = 20000,
                       policy: DecisionPolicy | None = None) -> list[tuple[int, int, float]]:
    """Exact boundary locations for two-outcome problems.

    Returns ``(i, j, tau)`` sorted by ``tau``, where ``tau`` is the
    probability of the first outcome at which the policy switches between
    decisions ``i`` and ``j`` (the root of ``U_i = U_j``).
    """
    if u.m != 2:
        raise ValueError("exact boundary solving is only available for two outcomes")
    policy = policy or make_policy(u)
    t = np.arange(resolution + 1) / resolution
    pts = np.column_stack([t, 1 - t])
    assign = policy.decide_many(pts)
    out = []
    for s in np.nonzero(assign[1:] != assign[:-1])[0]:
        a, b = int(assign[s]), int(assign[s + 1])
        diff = u.values[a] - u.values[b]
        denom = diff[1] - diff[0]
        tau = diff[1] / denom if denom != 0 else 0.5 * (t[s] + t[s + 1])
        if not t[s] <= tau <= t[s + 1]:
            tau = 0.5 * (t[s] + t[s + 1])
        out.append((min(a, b), max(a, b), float(tau)))
    return out


def prune_indices(u: UtilityMatrix, grid: SimplexGrid, policy: DecisionPolicy | None = None) -> list[int]:
    """Decisions whose policy region is nonempty on ``grid`` (order preserved)."""
    policy = policy or make_policy(u)
    return sorted(set(int(a) for a in policy.decide_many(grid.points)))


def prune_decisions(u: UtilityMatrix, grid: SimplexGrid, policy: DecisionPolicy | None = None) -> UtilityMatrix:
    """Drop decisions the policy never takes on ``grid``."""
    return u.rows(prune_indices(u, grid, policy))
