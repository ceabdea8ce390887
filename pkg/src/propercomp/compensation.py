"""Compensation rules for experts with an inherent interest in the decision.

The expert's net score is compensation plus the inherent utility of the
decision her report induces.  Rule construction takes a bias *estimate*;
every check runs against the *true* bias, so the two can differ.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .scoring import (
    PROPER_TOL,
    CostFunction,
    ProperVerdict,
    ScoringRule,
    check_proper,
)
from .simplex import DecisionPolicy, ExpertBias, SimplexGrid, make_distribution, make_policy


@dataclass(frozen=True)
class CompensationRule:
    """Payment ``C(r, x_i)``; ``matrix`` maps report rows to payment rows."""

    matrix: Callable[[np.ndarray], np.ndarray]
    policy: DecisionPolicy
    provenance: str
    cost: CostFunction | None = None
    estimate: ExpertBias | None = None

    def pay(self, r, i: int) -> float:
        return float(self.matrix(np.atleast_2d(np.asarray(r, dtype=float)))[0, i])

    def expected(self, r, p) -> float:
        """Expected compensation ``C(r, p)``."""
        row = self.matrix(np.atleast_2d(make_distribution(r)))[0]
        return float(row @ make_distribution(p))


def _check_shapes(b: ExpertBias, policy: DecisionPolicy):
    if b.values.shape != policy.utility.values.shape:
        raise ValueError(
            f"bias shape {b.values.shape} does not match decision set {policy.utility.values.shape}")


def inherent_utility(b: ExpertBias, policy: DecisionPolicy, r, p) -> float:
    """``b_{pi(r)} . p``: what the expert gets from the decision her report induces."""
    _check_shapes(b, policy)
    return float(b.values[policy(make_distribution(r))] @ make_distribution(p))


def inherent_utility_outcome(b: ExpertBias, policy: DecisionPolicy, r, i: int) -> float:
    return float(b.values[policy(make_distribution(r)), i])


def expert_optimal_utility(b: ExpertBias, p) -> tuple[float, int]:
    """``(max_d b_d . p, argmax)`` with ties to the lowest index."""
    p = make_distribution(p)
    d = make_policy(b)(p)
    return float(b.values[d] @ p), d


def c1_rule(b: ExpertBias, policy: DecisionPolicy) -> CompensationRule:
    """Pay the realized gap between the expert's preferred and the induced decision."""
    _check_shapes(b, policy)
    preferred = make_policy(b)
    B = b.values

    def matrix(R):
        return B[preferred.decide_many(R)] - B[policy.decide_many(R)]

    return CompensationRule(matrix, policy, "C1")


def rule_from_cost(G: CostFunction, b_est: ExpertBias, policy: DecisionPolicy) -> CompensationRule:
    """``C(r, x_i) = H_r[i] - b~_{pi(r), i}`` for the cost's hyperplanes ``H_r``."""
    _check_shapes(b_est, policy)
    B = b_est.values

    def matrix(R):
        return G.scores(R) - B[policy.decide_many(R)]

    return CompensationRule(matrix, policy, f"from_cost({G.name})", G, b_est)


def net_score(C: CompensationRule, b_true: ExpertBias) -> ScoringRule:
    """``S(r, x_i) = C(r, x_i) + b_{pi(r), i}`` under the true bias."""
    _check_shapes(b_true, C.policy)
    B = b_true.values

    def matrix(R):
        return C.matrix(R) + B[C.policy.decide_many(R)]

    return ScoringRule(matrix, name=f"net[{C.provenance}]")


def check_proper_compensation(C: CompensationRule, b_true: ExpertBias, grid: SimplexGrid,
                              strict: bool = False, tol: float = PROPER_TOL) -> ProperVerdict:
    return check_proper(net_score(C, b_true), grid, strict=strict, tol=tol)


@dataclass
class ParticipationVerdict:
    passed: bool
    min_margin: float
    max_expected: float
    mean_expected: float
    witness: dict[str, Any] | None = None
    advisory: bool = False

    def __bool__(self) -> bool:
        return self.passed


def expected_compensation(C: CompensationRule, points: np.ndarray) -> np.ndarray:
    """Truthful expected compensation ``C(p, p)`` at each row of ``points``."""
    return np.einsum("ij,ij->i", C.matrix(points), points)


def _participation(margin: np.ndarray, expected: np.ndarray, P: np.ndarray,
                   tol: float, advisory: bool) -> ParticipationVerdict:
    k = int(np.argmin(margin))
    passed = bool(margin[k] >= -tol)
    witness = None if passed else {"p": P[k].tolist(), "margin": float(margin[k]),
                                   "expected_compensation": float(expected[k])}
    return ParticipationVerdict(passed, float(margin[k]), float(expected.max()),
                                float(expected.mean()), witness, advisory)


def check_weak_participation(C: CompensationRule, b_true: ExpertBias, grid: SimplexGrid,
                             tol: float = PROPER_TOL) -> ParticipationVerdict:
    """Nonnegative truthful expected compensation everywhere on the grid.

    The verdict is marked advisory when ``C`` is not itself proper.
    """
    P = grid.points
    ec = expected_compensation(C, P)
    advisory = not check_proper_compensation(C, b_true, grid, tol=tol).proper
    return _participation(ec, ec, P, tol, advisory)


def check_strong_participation(C: CompensationRule, b_true: ExpertBias, grid: SimplexGrid,
                               tol: float = PROPER_TOL) -> ParticipationVerdict:
    """Truthful net score at least the expert's optimal inherent utility ``B*``."""
    P = grid.points
    S = net_score(C, b_true)
    self_score = np.einsum("ij,ij->i", S.matrix(P), P)
    bstar = (P @ b_true.values.T).max(axis=1)
    ec = expected_compensation(C, P)
    advisory = not check_proper_compensation(C, b_true, grid, tol=tol).proper
    return _participation(self_score - bstar, ec, P, tol, advisory)


def utility_gap(b: ExpertBias) -> float:
    """``max_i (max_k b_{k,i} - min_j b_{j,i})``: largest per-outcome spread."""
    B = b.values
    return float(np.max(B.max(axis=0) - B.min(axis=0)))


def ex_post_settlement(G: CostFunction, b_est: ExpertBias, report, taken: int, realized: int) -> float:
    """Score of ``report`` at ``realized`` minus the estimated utility of the taken decision.

    Only the decision actually taken enters, so the expert never needs to
    know the policy in advance.
    """
    if not 0 <= taken < b_est.n:
        raise ValueError(f"decision {taken} not in the pruned decision set of size {b_est.n}")
    r = make_distribution(report)
    return float(G.scores(r)[0, realized] - b_est.values[taken, realized])
