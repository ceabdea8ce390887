"""Interval uncertainty about the expert bias and the misreporting it permits.

Every bound here is checked against an exhaustive best-response oracle:
for each true belief the expert's net score is evaluated at every report on
the grid and the maximizer taken (ties to smallest deviation, then lowest
lexicographic report).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .compensation import rule_from_cost
from .scoring import CostFunction, local_robustness_check, robustness_factor
from .simplex import (
    DecisionPolicy,
    ExpertBias,
    SimplexGrid,
    UtilityMatrix,
    boundary_points_1d,
    make_distribution,
    make_policy,
)

BOUND_TOL = 1e-6
SCORE_TIE = 1e-12
CHUNK = 512


@dataclass(frozen=True)
class UncertaintyBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float)
        hi = np.array(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 2:
            raise ValueError(f"box bounds have shapes {lo.shape} and {hi.shape}")
        if np.any(lo > hi):
            i, j = np.argwhere(lo > hi)[0]
            raise ValueError(f"box lower bound exceeds upper bound at entry ({i}, {j})")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def exact(cls, b: ExpertBias) -> "UncertaintyBox":
        return cls(b.values, b.values)

    @classmethod
    def around(cls, center: ExpertBias, width) -> "UncertaintyBox":
        w = np.broadcast_to(np.asarray(width, dtype=float), center.values.shape)
        return cls(center.values - w / 2, center.values + w / 2)

    def contains(self, b, tol: float = 1e-12) -> bool:
        v = b.values if isinstance(b, UtilityMatrix) else np.asarray(b)
        return bool(np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol))

    def rows(self, index) -> "UncertaintyBox":
        index = list(index)
        return UncertaintyBox(self.lower[index], self.upper[index])


def delta(box: UncertaintyBox) -> float:
    """Largest interval width: the DM is delta-certain of the bias."""
    return float(np.max(box.upper - box.lower))


def uniform_estimate(box: UncertaintyBox, lam: float, labels=()) -> ExpertBias:
    """``lam * lower + (1 - lam) * upper`` entrywise."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("uniform blend lambda must lie in [0, 1]")
    return UtilityMatrix(lam * box.lower + (1 - lam) * box.upper, tuple(labels))


@dataclass
class Scenario:
    """DM utility, true expert bias, uncertainty box, cost and bias estimate.

    ``rule_kind`` is ``"uniform"`` when the estimate is a fixed blend of the
    box endpoints (``lam`` records the blend), else ``"consistent"``.
    """

    dm: UtilityMatrix
    true_bias: ExpertBias
    box: UncertaintyBox
    cost: CostFunction
    estimate: ExpertBias
    rule_kind: str = "consistent"
    lam: float | None = None
    name: str = ""

    def __post_init__(self):
        shape = self.dm.values.shape
        for what, v in (("true bias", self.true_bias.values), ("estimate", self.estimate.values),
                        ("box", self.box.lower)):
            if v.shape != shape:
                raise ValueError(f"{what} shape {v.shape} does not match DM matrix {shape}")
        if not self.box.contains(self.true_bias):
            raise ValueError("true bias lies outside the uncertainty box")
        if not self.box.contains(self.estimate):
            raise ValueError("bias estimate is not consistent with the uncertainty box")
        if self.rule_kind not in ("consistent", "uniform"):
            raise ValueError(f"unknown rule kind {self.rule_kind!r}")

    @classmethod
    def uniform(cls, dm, true_bias, box, cost, lam: float, name: str = "") -> "Scenario":
        est = uniform_estimate(box, lam, true_bias.labels)
        return cls(dm, true_bias, box, cost, est, "uniform", lam, name)

    @property
    def policy(self) -> DecisionPolicy:
        return make_policy(self.dm)

    @property
    def delta(self) -> float:
        return delta(self.box)

    def with_cost(self, cost: CostFunction) -> "Scenario":
        return Scenario(self.dm, self.true_bias, self.box, cost, self.estimate,
                        self.rule_kind, self.lam, self.name)

    def incentive_bound(self) -> float:
        return self.delta if self.rule_kind == "uniform" else 2 * self.delta


@dataclass
class BestResponseResult:
    report: np.ndarray
    net_gain: float
    deviation: float
    dm_loss: float
    truth: np.ndarray


@dataclass
class SweepResult:
    """Best responses for a batch of truths (row-aligned arrays)."""

    truths: np.ndarray
    reports: np.ndarray
    gains: np.ndarray
    deviations: np.ndarray
    losses: np.ndarray
    truth_decisions: np.ndarray
    report_decisions: np.ndarray

    def row(self, k: int) -> BestResponseResult:
        return BestResponseResult(self.reports[k], float(self.gains[k]), float(self.deviations[k]),
                                  float(self.losses[k]), self.truths[k])


def _net_score_table(scenario: Scenario, grid: SimplexGrid):
    R = grid.points
    pol = scenario.policy
    d = pol.decide_many(R)
    C = rule_from_cost(scenario.cost, scenario.estimate, pol).matrix(R)
    S = C + scenario.true_bias.values[d]
    return R, S, d


def sweep_best_responses(scenario: Scenario, truths: np.ndarray, grid: SimplexGrid) -> SweepResult:
    """Exhaustive best response over ``grid`` for every row of ``truths``."""
    R, S, d_r = _net_score_table(scenario, grid)
    truths = np.atleast_2d(np.asarray(truths, dtype=float))
    u = scenario.dm.values
    pol = scenario.policy
    n_t = len(truths)
    best_idx = np.empty(n_t, dtype=np.int64)
    gains = np.empty(n_t)
    snapped = np.array([grid.snap(t) for t in truths]) if n_t < 64 else _snap_many(grid, truths)
    for start in range(0, n_t, CHUNK):
        T = truths[start:start + CHUNK]
        val = T @ S.T
        top = val.max(axis=1, keepdims=True)
        tied = val >= top - SCORE_TIE * np.maximum(1.0, np.abs(top))
        # the snapped truthful report is always a candidate
        rows = np.arange(len(T))
        truthful = snapped[start:start + CHUNK]
        dist = np.linalg.norm(R[None, :, :] - T[:, None, :], axis=2)
        choice = np.argmin(np.where(tied, dist, np.inf), axis=1)
        best_idx[start:start + CHUNK] = choice
        gains[start:start + CHUNK] = val[rows, choice] - val[rows, truthful]
    reports = R[best_idx]
    d_true = pol.decide_many(truths)
    d_rep = d_r[best_idx]
    eu = truths @ u.T
    rows = np.arange(n_t)
    losses = np.maximum(eu[rows, d_true] - eu[rows, d_rep], 0.0)
    devs = np.linalg.norm(reports - truths, axis=1)
    return SweepResult(truths, reports, gains, devs, losses, d_true, d_rep)


def _snap_many(grid: SimplexGrid, truths: np.ndarray) -> np.ndarray:
    counts = np.rint(truths * grid.resolution).astype(np.int64)
    idx = grid.lookup(counts)
    bad = idx < 0
    if np.any(bad):
        idx[bad] = [grid.snap(t) for t in truths[bad]]
    return idx


def best_response(scenario: Scenario, p_true, grid: SimplexGrid) -> BestResponseResult:
    """The expert's net-score maximizing report for beliefs ``p_true``."""
    p = make_distribution(p_true)
    return sweep_best_responses(scenario, p[None, :], grid).row(0)


def dm_loss(scenario: Scenario, p_true, report) -> float:
    """DM utility under ``p_true`` of the truthful decision minus the induced one."""
    p = make_distribution(p_true)
    pol = scenario.policy
    u = scenario.dm.values
    return float(max(u[pol(p)] @ p - u[pol(make_distribution(report))] @ p, 0.0))


@dataclass
class BoundReport:
    name: str
    observed: float
    bound: float
    passed: bool
    witness: dict[str, Any] | None = None
    extra: dict[str, Any] = field(default_factory=dict)
    sweep: SweepResult | None = field(default=None, repr=False)

    def __bool__(self) -> bool:
        return self.passed

    def to_record(self) -> dict[str, Any]:
        rec = {"name": self.name, "passed": self.passed, "bound": self.bound,
               "observed": self.observed, "witness": self.witness}
        rec.update(self.extra)
        return rec


def _witness(sw: SweepResult, k: int) -> dict[str, Any]:
    return {"p_true": sw.truths[k].tolist(), "report": sw.reports[k].tolist(),
            "gain": float(sw.gains[k]), "deviation": float(sw.deviations[k]),
            "dm_loss": float(sw.losses[k])}


def incentive_bound_check(scenario: Scenario, truths: SimplexGrid | np.ndarray, grid: SimplexGrid,
                          tol: float = BOUND_TOL, sweep: SweepResult | None = None) -> BoundReport:
    """Max misreport gain against ``2 delta`` (consistent) or ``delta`` (uniform)."""
    sw = sweep or sweep_best_responses(scenario, _truth_points(truths), grid)
    k = int(np.argmax(sw.gains))
    bound = scenario.incentive_bound()
    observed = float(sw.gains[k])
    return BoundReport(f"incentive[{scenario.rule_kind}]", observed, bound,
                       bool(observed <= bound + tol), _witness(sw, k), sweep=sw)


def deviation_bound(delta_: float, m_factor: float, form: str, rule_kind: str) -> float:
    """``2d/m`` (robust) or ``sqrt(4d/m)`` (strongly convex); uniform rules halve ``d``."""
    d = delta_ / 2 if rule_kind == "uniform" else delta_
    if form == "robust":
        return 2 * d / m_factor
    if form == "strongly_convex":
        return float(np.sqrt(4 * d / m_factor))
    raise ValueError(f"unknown bound form {form!r}")


def deviation_bound_check(scenario: Scenario, truths, grid: SimplexGrid, m_factor: float,
                          form: str, sweep: SweepResult | None = None) -> BoundReport:
    """Max best-response deviation against the robust or strong-convexity bound.

    The robust form refuses an ``m_factor`` above the robustness factor
    measured with the truths as tangent points; the strongly convex form
    requires the cost to declare a Hessian factor at least ``m_factor``.
    """
    if m_factor <= 0:
        raise ValueError("m_factor must be positive")
    T = _truth_points(truths)
    if form == "robust":
        measured = robustness_factor(scenario.cost, T, grid)
        if measured < m_factor:
            raise ValueError(f"measured robustness factor {measured:.6g} is below m={m_factor:.6g}")
    elif form == "strongly_convex":
        hf = scenario.cost.hessian_factor
        if hf is None or hf < m_factor:
            raise ValueError(f"cost {scenario.cost.name} does not declare Hessian factor >= {m_factor}")
    sw = sweep or sweep_best_responses(scenario, T, grid)
    k = int(np.argmax(sw.deviations))
    bound = deviation_bound(scenario.delta, m_factor, form, scenario.rule_kind)
    observed = float(sw.deviations[k])
    return BoundReport(f"deviation[{form}]", observed, bound, bool(observed <= bound + grid.step),
                       _witness(sw, k), {"m_factor": m_factor}, sweep=sw)


def utility_slope(u: UtilityMatrix) -> float:
    """``max_k max_{i,j} (u_ik - u_jk)``: steepest per-outcome DM utility difference."""
    V = u.values
    return float(np.max(V.max(axis=0) - V.min(axis=0)))


def pair_slope(u: UtilityMatrix, i: int, j: int) -> float:
    return float(np.max(np.abs(u.values[i] - u.values[j])))


def global_loss_bound_value(scenario: Scenario, m_factor: float, form: str) -> float:
    """Worst-case DM loss from the global robustness / strong convexity bound.

    The L1-L2 conversion uses the dimension of the probability vectors (the
    number of outcomes).
    """
    slope = utility_slope(scenario.dm)
    dim = scenario.dm.m
    return slope * np.sqrt(dim) * deviation_bound(scenario.delta, m_factor, form, scenario.rule_kind)


def global_loss_bound(scenario: Scenario, truths, grid: SimplexGrid, m_factor: float, form: str,
                      tol: float = BOUND_TOL, sweep: SweepResult | None = None) -> BoundReport:
    sw = sweep or sweep_best_responses(scenario, _truth_points(truths), grid)
    k = int(np.argmax(sw.losses))
    bound = float(global_loss_bound_value(scenario, m_factor, form))
    observed = float(sw.losses[k])
    return BoundReport(f"global_loss[{form}]", observed, bound, observed <= bound + tol,
                       _witness(sw, k), {"m_factor": m_factor}, sweep=sw)


def _truth_points(truths) -> np.ndarray:
    if isinstance(truths, SimplexGrid):
        return np.asarray(truths.points)
    return np.atleast_2d(np.asarray(truths, dtype=float))


# local loss bound ------------------------------------------------------------

@dataclass
class BoundaryRequirement:
    """Local robustness needed at one DM boundary (two-outcome problems)."""

    pair: tuple[int, int]
    tau: float
    m_factor: float
    eps: float
    reach: float

    @property
    def point(self) -> np.ndarray:
        return np.array([self.tau, 1.0 - self.tau])


def boundary_requirements(dm: UtilityMatrix, delta_: float, sigma: float,
                          rule_kind: str = "consistent") -> list[BoundaryRequirement]:
    """Per-boundary ``(m_ij, eps_ij)`` for a target DM loss ``sigma``.

    ``eps = sigma / (slope * sqrt(dim))`` and ``m = slope * sqrt(dim) * 2 delta / sigma``;
    uniform rules halve both.  ``reach`` is how far (L2) a profitable
    misreport can originate: ``gain bound / m``, which equals the
    consistent-rule ``eps`` in both cases.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if dm.m != 2:
        raise ValueError("local boundary requirements are implemented for two outcomes only")
    dim = np.sqrt(dm.m)
    out = []
    for i, j, tau in boundary_points_1d(dm):
        slope = pair_slope(dm, i, j)
        eps = sigma / (slope * dim)
        m = slope * dim * 2 * delta_ / sigma
        if rule_kind == "uniform":
            eps, m = eps / 2, m / 2
        gain = delta_ if rule_kind == "uniform" else 2 * delta_
        reach = gain / m if m > 0 else 0.0
        out.append(BoundaryRequirement((int(i), int(j)), float(tau), float(m), float(eps), float(reach)))
    return out


def overlapping_requirements(reqs: list[BoundaryRequirement]) -> list[tuple[int, int]]:
    """Index pairs of boundaries whose misreport neighbourhoods intersect."""
    bad = []
    for a in range(len(reqs)):
        for b in range(a + 1, len(reqs)):
            gap = np.sqrt(2) * abs(reqs[a].tau - reqs[b].tau)
            if reqs[a].reach + reqs[b].reach >= gap:
                bad.append((a, b))
    return bad


@dataclass
class LocalLossReport:
    status: str
    applicable: bool
    within_bound: bool
    worst_loss: float
    sigma: float
    slack: float
    witness: dict[str, Any] | None
    preconditions: list[dict[str, Any]]
    crossing_outside: int

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def __bool__(self) -> bool:
        return self.passed

    def to_record(self) -> dict[str, Any]:
        return {"name": "local_loss", "status": self.status, "passed": self.passed,
                "applicable": self.applicable, "bound": self.sigma, "observed": self.worst_loss,
                "slack": self.slack, "witness": self.witness,
                "crossings_outside_neighbourhoods": self.crossing_outside,
                "preconditions": self.preconditions}


def local_loss_bound_check(scenario: Scenario, sigma: float, grid: SimplexGrid,
                           truths=None, check_grid: SimplexGrid | None = None) -> LocalLossReport:
    """Sweep DM loss against ``sigma`` for a locally robust cost.

    Preconditions: local robustness at every boundary with the required
    ``(m_ij, eps_ij)`` and disjoint misreport neighbourhoods.  If they fail
    the status is ``"inapplicable"``; the sweep still runs and its result is
    reported alongside.  Also counts best responses that change the
    decision from truths farther than ``reach + step`` from every boundary
    (there should be none).  A ``sigma`` at least the DM's
    utility spread needs no preconditions.  On a violation the witness is
    the offending truth nearest a boundary; ``worst_loss`` is still the max.
    """
    dm = scenario.dm
    check_grid = check_grid or grid
    pre = []
    ok = True
    trivial = sigma >= utility_slope(dm)
    if trivial:
        # no report can cost the DM more than its own utility spread
        reqs = []
        pre.append({"sigma_covers_utility_spread": utility_slope(dm), "passed": True})
    else:
        reqs = boundary_requirements(dm, scenario.delta, sigma, scenario.rule_kind)
    for r in reqs:
        v = local_robustness_check(scenario.cost, r.point, r.eps, r.m_factor, check_grid)
        pre.append({"pair": list(r.pair), "tau": r.tau, "m_required": r.m_factor, "eps": r.eps,
                    "m_measured": v.measured, "passed": v.passed})
        ok &= v.passed
    overlaps = overlapping_requirements(reqs)
    if overlaps:
        ok = False
        pre.append({"overlapping_neighbourhoods": [list(o) for o in overlaps], "passed": False})
    T = grid.points if truths is None else _truth_points(truths)
    sw = sweep_best_responses(scenario, T, grid)
    slack = utility_slope(dm) * np.sqrt(dm.m) * grid.step
    k = int(np.argmax(sw.losses))
    worst = float(sw.losses[k])
    within = worst <= sigma + slack
    far = np.ones(len(T), dtype=bool)
    for r in reqs:
        far &= np.linalg.norm(T - r.point, axis=1) > r.reach + grid.step
    crossing = 0 if trivial else int(np.sum(far & (sw.truth_decisions != sw.report_decisions)))
    bad = np.nonzero(sw.losses > sigma + slack)[0]
    if len(bad) and reqs:
        # the violating truth closest to a boundary is the most telling witness
        gap = np.min([np.linalg.norm(T[bad] - r.point, axis=1) for r in reqs], axis=0)
        k = int(bad[np.argmin(gap)])
    if not ok:
        status = "inapplicable"
    elif within and crossing == 0:
        status = "pass"
    else:
        status = "violation"
    return LocalLossReport(status, ok, bool(within), worst, sigma, float(slack), _witness(sw, k),
                           pre, crossing)
