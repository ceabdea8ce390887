"""Locally robust cost functions for two-outcome problems.

Beliefs are parameterized by ``t = p[0]``; a designed cost is a continuous
piecewise quadratic ``g(t)`` embedded as ``G(p) = g(p[0])``.  A derivative
jump of ``2 * sqrt(2) * m_ij`` at each DM boundary gives local robustness
factor ``m_ij`` there (one unit of ``t`` is ``sqrt(2)`` in simplex L2), and
a small curvature floor ``eta`` keeps ``G`` strictly convex.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.optimize import linprog

from .compensation import expected_compensation, rule_from_cost
from .scoring import CostFunction
from .simplex import (
    DecisionPolicy,
    ExpertBias,
    SimplexGrid,
    UtilityMatrix,
    boundary_points_1d,
    make_policy,
)
from .uncertainty import (
    BoundaryRequirement,
    LocalLossReport,
    Scenario,
    UncertaintyBox,
    boundary_requirements,
    delta,
    local_loss_bound_check,
    overlapping_requirements,
    uniform_estimate,
    utility_slope,
)

DEFAULT_ETA = 1e-3
KNOT_TOL = 1e-12
SQRT2 = np.sqrt(2.0)


class UnsupportedDimension(ValueError):
    pass


class InfeasibleDesign(ValueError):
    def __init__(self, message: str, max_sigma: float):
        super().__init__(message)
        self.max_sigma = max_sigma


@dataclass
class CurvatureProfile:
    dm: UtilityMatrix
    requirements: list[BoundaryRequirement]
    sigma: float
    delta: float
    rule_kind: str = "consistent"
    eta: float = DEFAULT_ETA
    trivial: bool = False

    def to_record(self) -> dict[str, Any]:
        return {
            "sigma": self.sigma, "delta": self.delta, "rule_kind": self.rule_kind,
            "eta": self.eta, "trivial": self.trivial,
            "boundaries": [{"pair": list(r.pair), "tau": r.tau, "m": r.m_factor,
                            "eps": r.eps, "reach": r.reach} for r in self.requirements],
        }


def required_profile(dm: UtilityMatrix, box: UncertaintyBox, sigma: float,
                     rule_kind: str = "consistent", eta: float = DEFAULT_ETA) -> CurvatureProfile:
    """Boundary curvature targets that bound DM loss by ``sigma``.

    When ``sigma`` is at least the DM's largest possible loss the profile is
    empty (any strictly convex cost works).  Raises ``InfeasibleDesign``
    with the largest workable ``sigma`` when neighbourhoods would overlap.
    """
    if dm.m != 2:
        raise UnsupportedDimension(f"cost design supports two outcomes, got {dm.m}")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    d = delta(box)
    if sigma >= utility_slope(dm):
        return CurvatureProfile(dm, [], sigma, d, rule_kind, eta, trivial=True)
    reqs = boundary_requirements(dm, d, sigma, rule_kind)
    overlaps = overlapping_requirements(reqs)
    if overlaps:
        # reach scales linearly with sigma, so every pair gives an upper limit
        limit = min(SQRT2 * abs(reqs[a].tau - reqs[b].tau) * sigma / (reqs[a].reach + reqs[b].reach)
                    for a in range(len(reqs)) for b in range(a + 1, len(reqs)))
        limit *= 1 - 1e-9
        raise InfeasibleDesign(
            f"local loss preconditions unsatisfiable at sigma={sigma:g}: boundary neighbourhoods "
            f"overlap; largest feasible sigma is {limit:.6g}", limit)
    return CurvatureProfile(dm, reqs, sigma, d, rule_kind, eta)


@dataclass
class PiecewiseQuadratic:
    """``g(t) = a + b t + c t^2`` on ``[knots[k], knots[k+1]]``."""

    knots: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=float)
        self.coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        if len(self.coeffs) != len(self.knots) - 1:
            raise ValueError("need one coefficient row per piece")

    def _piece(self, t: np.ndarray) -> np.ndarray:
        k = np.searchsorted(self.knots, t, side="right") - 1
        return np.clip(k, 0, len(self.coeffs) - 1)

    def value(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        a, b, c = self.coeffs[self._piece(t)].T
        return a + b * t + c * t * t

    def slope(self, t) -> np.ndarray:
        """Derivative; at interior knots the midpoint of the one-sided slopes."""
        t = np.asarray(t, dtype=float)
        k = self._piece(t)
        _, b, c = self.coeffs[k].T
        right = b + 2 * c * t
        inner = self.knots[1:-1]
        if len(inner) == 0:
            return right
        j = np.clip(np.searchsorted(inner, t), 0, len(inner) - 1)
        at_knot = np.abs(inner[j] - t) <= KNOT_TOL
        left_piece = self.coeffs[j]
        left = left_piece[:, 1] + 2 * left_piece[:, 2] * t
        right_piece = self.coeffs[j + 1]
        right_k = right_piece[:, 1] + 2 * right_piece[:, 2] * t
        return np.where(at_knot, 0.5 * (left + right_k), right)

    def to_cost(self, name: str = "designed") -> CostFunction:
        def fn(P):
            return self.value(P[:, 0])

        def grad(P):
            g = np.zeros_like(P)
            g[:, 0] = self.slope(P[:, 0])
            return g

        return CostFunction(name, fn, grad, spec=self.to_record())

    def to_record(self) -> dict[str, Any]:
        return {"kind": "designed", "parameter": "p0",
                "knots": self.knots.tolist(), "coeffs": self.coeffs.tolist()}

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "PiecewiseQuadratic":
        return cls(np.array(rec["knots"], dtype=float), np.array(rec["coeffs"], dtype=float))


@dataclass
class DesignedCost:
    piecewise: PiecewiseQuadratic
    base_kind: str
    profile: CurvatureProfile
    jumps: list[float] = field(default_factory=list)

    @property
    def cost(self) -> CostFunction:
        return self.piecewise.to_cost(f"designed({self.base_kind})")

    def to_record(self) -> dict[str, Any]:
        rec = self.piecewise.to_record()
        rec["base"] = self.base_kind
        rec["profile"] = self.profile.to_record()
        rec["jumps"] = [float(j) for j in self.jumps]
        return rec


def _linear_pieces_1d(policy: DecisionPolicy) -> tuple[list[float], list[int]]:
    """Breakpoints in ``t`` and the row taken on each piece by ``policy``."""
    cuts = [tau for _, _, tau in boundary_points_1d(policy.utility, policy=policy)]
    edges = [0.0] + cuts + [1.0]
    rows = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (lo + hi)
        rows.append(policy(np.array([mid, 1 - mid])))
    return edges, rows


def _bstar_pieces(b: ExpertBias):
    edges, rows = _linear_pieces_1d(make_policy(b))
    V = b.values
    lines = [(V[r, 1], V[r, 0] - V[r, 1]) for r in rows]
    return edges, lines


def _affine_majorant(b: ExpertBias, dm: UtilityMatrix) -> tuple[float, float]:
    """Smallest-mean affine ``alpha + beta t`` above the inherent utility ``B^pi``."""
    edges, rows = _linear_pieces_1d(make_policy(dm))
    V = b.values
    A, rhs = [], []
    for lo, hi, r in zip(edges[:-1], edges[1:], rows):
        for t in (lo, hi):
            val = V[r, 1] + (V[r, 0] - V[r, 1]) * t
            A.append([-1.0, -t])
            rhs.append(-val)
    res = linprog([1.0, 0.5], A_ub=A, b_ub=rhs, bounds=[(None, None), (None, None)])
    if not res.success:
        raise RuntimeError(f"affine majorant LP failed: {res.message}")
    return float(res.x[0]), float(res.x[1])


def construct_cost(profile: CurvatureProfile, base_kind: str, b: ExpertBias,
                   drop: Sequence[int] = ()) -> DesignedCost:
    """Build ``G = base + h`` meeting ``profile``.

    ``h(t) = eta t^2 / 2 + sum_j J_j max(0, t - tau_j)`` with
    ``J_j = 2 sqrt(2) m_j``, so ``h(0) = h'(0) = 0`` and ``h`` is convex and
    nondecreasing.  ``base_kind="strong"`` uses the expert's optimal utility
    ``B*`` (strong participation); ``"weak"`` uses the smallest affine
    majorant of ``B^pi`` (weak participation).  Boundaries listed in
    ``drop`` get no kink; only useful for negative tests.
    """
    if b.m != 2:
        raise UnsupportedDimension("cost design supports two outcomes only")
    taus = [r.tau for r in profile.requirements]
    jumps = [0.0 if k in drop else 2 * SQRT2 * r.m_factor for k, r in enumerate(profile.requirements)]
    if base_kind == "strong":
        edges, lines = _bstar_pieces(b)
    elif base_kind == "weak":
        alpha, beta = _affine_majorant(b, profile.dm)
        edges, lines = [0.0, 1.0], [(alpha, beta)]
    else:
        raise ValueError(f"unknown base kind {base_kind!r}")
    knots = sorted(set(edges) | set(taus) | {0.0, 1.0})
    coeffs = []
    for lo, hi in zip(knots[:-1], knots[1:]):
        mid = 0.5 * (lo + hi)
        piece = int(np.clip(np.searchsorted(edges, mid, side="right") - 1, 0, len(lines) - 1))
        a, slope = lines[piece]
        for tau, jump in zip(taus, jumps):
            if tau <= lo + KNOT_TOL:
                a -= jump * tau
                slope += jump
        coeffs.append([a, slope, profile.eta / 2])
    pq = PiecewiseQuadratic(np.array(knots), np.array(coeffs))
    return DesignedCost(pq, base_kind, profile, jumps)


def sabotage(designed: DesignedCost, b: ExpertBias, boundary: int) -> DesignedCost:
    """The same construction with the kink at one boundary removed."""
    return construct_cost(designed.profile, designed.base_kind, b, drop=[boundary])


def compensation_stats(G: DesignedCost | CostFunction, b: ExpertBias, policy: DecisionPolicy,
                       grid: SimplexGrid) -> dict[str, float]:
    """Max and mean of the truthful expected compensation ``G(p) - B^pi(p)``."""
    cost = G.cost if isinstance(G, DesignedCost) else G
    ec = expected_compensation(rule_from_cost(cost, b, policy), grid.points)
    return {"max": float(ec.max()), "mean": float(ec.mean()), "min": float(ec.min())}


def scenario_family(dm: UtilityMatrix, box: UncertaintyBox, cost: CostFunction,
                    rule_kind: str = "consistent", lam: float = 0.5, n_interior: int = 4,
                    max_corners: int = 16, seed: int = 0) -> list[Scenario]:
    """Scenarios with the true bias at box corners and in the interior.

    Consistent rules put the estimate at the opposite corner (largest
    estimate error of alternating sign); uniform rules use the ``lam`` blend.
    """
    rng = np.random.default_rng(seed)
    lo, hi = box.lower, box.upper
    shape = lo.shape
    size = lo.size
    if 2 ** size <= max_corners:
        masks = [np.array([(c >> k) & 1 for k in range(size)], dtype=bool).reshape(shape)
                 for c in range(2 ** size)]
    else:
        masks = [rng.random(shape) < 0.5 for _ in range(max_corners)]
    trues = [np.where(mk, hi, lo) for mk in masks]
    trues += [lo + rng.random(shape) * (hi - lo) for _ in range(n_interior)]
    labels = dm.labels
    out = []
    for k, tv in enumerate(trues):
        true = UtilityMatrix(tv, labels)
        if rule_kind == "uniform":
            out.append(Scenario.uniform(dm, true, box, cost, lam, name=f"family-{k}"))
        else:
            est = lo + hi - tv if k < len(masks) else lo + rng.random(shape) * (hi - lo)
            out.append(Scenario(dm, true, box, cost, UtilityMatrix(est, labels), "consistent",
                                name=f"family-{k}"))
    return out


@dataclass
class DesignReport:
    passed: bool
    worst_loss: float
    sigma: float
    witness: dict[str, Any] | None
    results: list[LocalLossReport]

    def __bool__(self) -> bool:
        return self.passed

    def to_record(self) -> dict[str, Any]:
        return {"name": "verify_design", "passed": self.passed, "bound": self.sigma,
                "observed": self.worst_loss, "witness": self.witness,
                "scenarios": len(self.results),
                "statuses": sorted({r.status for r in self.results})}


def verify_design(designed: DesignedCost | CostFunction, scenarios: Sequence[Scenario],
                  sigma: float, grid: SimplexGrid) -> DesignReport:
    """Run the local loss check for every scenario under the designed cost."""
    cost = designed.cost if isinstance(designed, DesignedCost) else designed
    results = [local_loss_bound_check(sc.with_cost(cost), sigma, grid) for sc in scenarios]
    worst = max(results, key=lambda r: r.worst_loss)
    passed = all(r.passed for r in results)
    failing = [r for r in results if not r.passed]
    witness = max(failing, key=lambda r: r.worst_loss).witness if failing else worst.witness
    return DesignReport(passed, worst.worst_loss, sigma, witness, results)


def design_for(dm: UtilityMatrix, box: UncertaintyBox, sigma: float, b: ExpertBias | None = None,
               rule_kind: str = "consistent", base_kind: str = "strong",
               eta: float = DEFAULT_ETA) -> DesignedCost:
    """``construct_cost(required_profile(...))`` with the box midpoint as default bias."""
    profile = required_profile(dm, box, sigma, rule_kind, eta)
    b = b if b is not None else uniform_estimate(box, 0.5, dm.labels)
    return construct_cost(profile, base_kind, b)


__all__ = [
    "CurvatureProfile", "DesignedCost", "DesignReport", "InfeasibleDesign", "PiecewiseQuadratic",
    "UnsupportedDimension", "compensation_stats", "construct_cost", "design_for",
    "required_profile", "sabotage", "scenario_family", "verify_design",
]
