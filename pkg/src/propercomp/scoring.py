"""Convex cost functions and the scoring rules they generate.

A cost function ``G`` with subgradient selector ``G*`` defines the score
vector ``H_p = G(p) - G*(p).p + G*(p)``; the expected score of report ``r``
under beliefs ``p`` is ``H_r . p``.  All evaluation is vectorized over rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .simplex import SimplexGrid, TIE_TOL, make_distribution

PROPER_TOL = 1e-9
LOG_CLAMP = 1e-12
CHUNK = 2048


@dataclass(frozen=True)
class CostFunction:
    """Convex ``G`` on the simplex with a fixed subgradient selector.

    ``fn`` maps an ``(N, m)`` batch to ``(N,)`` values and ``grad`` to
    ``(N, m)`` subgradients.  ``hessian_factor`` is the declared strong
    convexity modulus on the simplex tangent space, or ``None`` when ``G``
    is not twice differentiable.
    """

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hessian_factor: float | None = None
    spec: dict[str, Any] = field(default_factory=dict, compare=False)

    def value(self, points) -> np.ndarray:
        return self.fn(np.atleast_2d(np.asarray(points, dtype=float)))

    def subgrad(self, points) -> np.ndarray:
        return self.grad(np.atleast_2d(np.asarray(points, dtype=float)))

    def __call__(self, p) -> float:
        return float(self.value(p)[0])

    def scores(self, points) -> np.ndarray:
        """Hyperplane vectors ``H_p`` for each row of ``points``."""
        P = np.atleast_2d(np.asarray(points, dtype=float))
        g = self.fn(P)
        d = self.grad(P)
        return (g - np.einsum("ij,ij->i", d, P))[:, None] + d


# builtin costs ---------------------------------------------------------------

def quadratic_cost() -> CostFunction:
    return CostFunction(
        "quadratic",
        lambda P: np.einsum("ij,ij->i", P, P),
        lambda P: 2.0 * P,
        hessian_factor=2.0,
        spec={"kind": "quadratic"},
    )


def log_cost() -> CostFunction:
    """Negative entropy; probabilities below 1e-12 are clamped."""

    def fn(P):
        return np.sum(P * np.log(np.maximum(P, LOG_CLAMP)), axis=1)

    def grad(P):
        return np.log(np.maximum(P, LOG_CLAMP)) + 1.0

    # Hessian diag(1/p) dominates the identity on the simplex.
    return CostFunction("log", fn, grad, hessian_factor=1.0, spec={"kind": "log"})


def linear_cost(coef: Sequence[float]) -> CostFunction:
    a = np.asarray(coef, dtype=float)
    return CostFunction(
        "linear",
        lambda P: P @ a,
        lambda P: np.broadcast_to(a, P.shape).copy(),
        hessian_factor=0.0,
        spec={"kind": "linear", "coef": a.tolist()},
    )


def pwlc_cost(planes, name: str = "pwlc") -> CostFunction:
    """``G(p) = max_k a_k . p``; at kinks the lowest-index maximizing plane."""
    A = np.atleast_2d(np.asarray(planes, dtype=float))

    def pick(P):
        vals = P @ A.T
        best = vals.max(axis=1, keepdims=True)
        tied = vals >= best - TIE_TOL * np.maximum(1.0, np.abs(best))
        return np.argmax(tied, axis=1)

    return CostFunction(
        name,
        lambda P: (P @ A.T).max(axis=1),
        lambda P: A[pick(P)],
        spec={"kind": "pwlc", "planes": A.tolist()},
    )


def shifted(base: CostFunction, c: float) -> CostFunction:
    return CostFunction(
        f"shifted({base.name},{c:g})",
        lambda P: base.fn(P) + c,
        base.grad,
        base.hessian_factor,
        {"kind": "shifted", "base": base.spec, "c": c},
    )


def scaled(base: CostFunction, a: float) -> CostFunction:
    if a <= 0:
        raise ValueError("scale factor must be positive to preserve convexity")
    hf = None if base.hessian_factor is None else a * base.hessian_factor
    return CostFunction(
        f"scaled({base.name},{a:g})",
        lambda P: a * base.fn(P),
        lambda P: a * base.grad(P),
        hf,
        {"kind": "scaled", "base": base.spec, "a": a},
    )


def sum_cost(terms: Sequence[CostFunction]) -> CostFunction:
    terms = list(terms)
    if not terms:
        raise ValueError("sum of no cost functions")
    factors = [t.hessian_factor for t in terms]
    hf = None if any(f is None for f in factors) else float(sum(factors))
    return CostFunction(
        "+".join(t.name for t in terms),
        lambda P: sum(t.fn(P) for t in terms),
        lambda P: sum(t.grad(P) for t in terms),
        hf,
        {"kind": "sum", "terms": [t.spec for t in terms]},
    )


def builtin_cost(kind: str, **params) -> CostFunction:
    """Construct a named cost: log, quadratic, linear, pwlc, shifted, scaled, sum."""
    if kind == "log":
        return log_cost()
    if kind == "quadratic":
        return quadratic_cost()
    if kind == "linear":
        return linear_cost(params["coef"])
    if kind == "pwlc":
        return pwlc_cost(params["planes"])
    if kind == "shifted":
        return shifted(params["base"], float(params["c"]))
    if kind == "scaled":
        return scaled(params["base"], float(params["a"]))
    if kind == "sum":
        return sum_cost(params["terms"])
    raise ValueError(f"unknown cost kind {kind!r}")


# scoring rules ---------------------------------------------------------------

@dataclass(frozen=True)
class ScoringRule:
    """Payoff ``S(r, x_i)``; ``matrix`` maps a batch of reports to score rows."""

    matrix: Callable[[np.ndarray], np.ndarray]
    name: str = "rule"

    def score(self, r, i: int) -> float:
        return float(self.matrix(np.atleast_2d(np.asarray(r, dtype=float)))[0, i])

    def vector(self, r) -> np.ndarray:
        return self.matrix(np.atleast_2d(np.asarray(r, dtype=float)))[0]


def score_from_cost(G: CostFunction, p, i: int) -> float:
    """``G(p) - G*(p).p + G*_i(p)``."""
    return float(G.scores(make_distribution(p))[0, i])


def rule_from_cost(G: CostFunction) -> ScoringRule:
    return ScoringRule(G.scores, name=G.name)


def expected_score(S: ScoringRule, r, p) -> float:
    """``sum_i p_i S(r, x_i)``."""
    return float(S.vector(make_distribution(r)) @ make_distribution(p))


@dataclass
class ProperVerdict:
    proper: bool
    strict: bool | None
    worst_gap: float
    witness: dict[str, Any] | None = None
    min_strict_gap: float | None = None

    def __bool__(self) -> bool:
        return self.proper and (self.strict is not False)


def _gap_rows(H: np.ndarray, P: np.ndarray, rows: slice) -> np.ndarray:
    """gap[p, r] = S(p, p) - S(r, p) for truths ``P[rows]``."""
    Pr = P[rows]
    expected = Pr @ H.T
    self_score = np.einsum("ij,ij->i", Pr, H[rows])
    return self_score[:, None] - expected


def check_proper(S: ScoringRule, grid: SimplexGrid, strict: bool = False,
                 tol: float = PROPER_TOL, strict_distance: float | None = None) -> ProperVerdict:
    """Exhaustive pair sweep of the propriety inequality over ``grid``.

    With ``strict`` the verdict also requires ``S(p,p) > S(r,p)`` for every
    ``r != p``; ``min_strict_gap`` reports the smallest gap among pairs at
    L2 distance at least ``strict_distance`` (default ``2 / k``).
    """
    P = grid.points
    H = S.matrix(P)
    N = len(P)
    far = (2.0 / grid.resolution) if strict_distance is None else strict_distance
    worst = (np.inf, -1, -1)
    min_offdiag = np.inf
    min_far = np.inf
    for start in range(0, N, CHUNK):
        rows = slice(start, min(start + CHUNK, N))
        gap = _gap_rows(H, P, rows)
        k = np.argmin(gap)
        a, b = divmod(int(k), N)
        if gap[a, b] < worst[0]:
            worst = (float(gap[a, b]), start + a, b)
        if strict:
            idx = np.arange(rows.start, rows.stop)
            gap[np.arange(len(idx)), idx] = np.inf
            min_offdiag = min(min_offdiag, float(gap.min()))
            dist = np.linalg.norm(P[rows][:, None, :] - P[None, :, :], axis=2)
            far_gap = np.where(dist >= far - 1e-12, gap, np.inf)
            min_far = min(min_far, float(far_gap.min()))
    proper = worst[0] >= -tol
    witness = None
    if not proper:
        witness = {"p": P[worst[1]].tolist(), "r": P[worst[2]].tolist(), "gap": worst[0]}
    strict_ok = None
    if strict:
        strict_ok = bool(proper and min_offdiag > 0.0)
    return ProperVerdict(bool(proper), strict_ok, worst[0], witness,
                         min_far if strict else None)


# robustness ------------------------------------------------------------------

def _robust_ratios(G: CostFunction, centers: np.ndarray, Q: np.ndarray,
                   radius: float | None = None) -> tuple[float, int, int]:
    gq = G.value(Q)
    best = (np.inf, -1, -1)
    for start in range(0, len(centers), CHUNK):
        C = centers[start:start + CHUNK]
        gc = G.value(C)
        dc = G.subgrad(C)
        diff = Q[None, :, :] - C[:, None, :]
        dist = np.linalg.norm(diff, axis=2)
        gap = gq[None, :] - gc[:, None] - np.einsum("ijk,ik->ij", diff, dc)
        mask = dist > 1e-12
        if radius is not None:
            mask &= dist <= radius + 1e-12
        ratio = np.where(mask, gap / np.where(mask, dist, 1.0), np.inf)
        k = np.argmin(ratio)
        a, b = divmod(int(k), len(Q))
        if ratio[a, b] < best[0]:
            best = (float(ratio[a, b]), start + a, b)
    return best


def robustness_factor(G: CostFunction, region, grid: SimplexGrid) -> float:
    """Largest ``m`` with ``G(q) >= G(p) + G*(p).(q-p) + m |q-p|_2`` on the grid.

    ``region`` selects the tangent points ``p``: a predicate over a
    distribution, an array of points, or ``None`` for the whole grid.
    Returns 0 when the minimum ratio is negative only by rounding.
    """
    centers = _region_points(region, grid)
    if len(centers) == 0:
        raise ValueError("robustness region contains no points")
    ratio, _, _ = _robust_ratios(G, centers, grid.points)
    return max(ratio, 0.0) if ratio > -PROPER_TOL else ratio


def _region_points(region, grid: SimplexGrid) -> np.ndarray:
    if region is None:
        return np.asarray(grid.points)
    if callable(region):
        keep = np.array([bool(region(p)) for p in grid.points])
        return np.asarray(grid.points[keep])
    return np.atleast_2d(np.asarray(region, dtype=float))


@dataclass
class LocalRobustVerdict:
    passed: bool
    measured: float
    target: float
    eps: float
    witness: dict[str, Any] | None = None

    def __bool__(self) -> bool:
        return self.passed


def local_robustness_factor(G: CostFunction, p, eps: float, grid: SimplexGrid) -> tuple[float, np.ndarray | None]:
    """Minimum gap-per-distance ratio at ``p`` over grid points within ``eps``."""
    center = np.atleast_2d(np.asarray(p, dtype=float))
    ratio, _, b = _robust_ratios(G, center, grid.points, radius=eps)
    return ratio, (grid.points[b] if b >= 0 else None)


def local_robustness_check(G: CostFunction, p, eps: float, m_target: float,
                           grid: SimplexGrid, tol: float = 1e-9) -> LocalRobustVerdict:
    """Local robustness of ``G`` around ``p`` in the ``eps``-ball with factor ``m_target``."""
    if eps <= 0 or m_target <= 0:
        raise ValueError("eps and m_target must be positive")
    measured, q = local_robustness_factor(G, p, eps, grid)
    if q is None:
        raise ValueError(f"no grid point within {eps} of {p}; refine the grid")
    passed = measured >= m_target - tol
    witness = None if passed else {"p": list(map(float, p)), "q": q.tolist(), "ratio": measured}
    return LocalRobustVerdict(bool(passed), measured, m_target, eps, witness)


def tangent_fd_gradient(G: CostFunction, p, h: float = 1e-6) -> np.ndarray:
    """Central differences of ``G`` along ``e_i - e_m``; compare to ``G*`` projected."""
    p = np.asarray(p, dtype=float)
    m = len(p)
    out = np.empty(m - 1)
    for i in range(m - 1):
        v = np.zeros(m)
        v[i], v[-1] = 1.0, -1.0
        out[i] = (G(p + h * v) - G(p - h * v)) / (2 * h)
    return out


def tangent_projection(g: np.ndarray) -> np.ndarray:
    """Directional derivatives ``g . (e_i - e_m)`` of a subgradient row."""
    g = np.asarray(g, dtype=float)
    return g[:-1] - g[-1]
