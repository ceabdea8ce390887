"""Sequential market scoring rule for experts with decision interests.

All experts share one cost function ``G``; expert ``k`` replaces the
incumbent forecast ``p[k-1]`` and settles with its owner according to the
subsidy scheme.  The house owns the initial forecast and collects nothing
for it, so a one-expert market reduces to one-shot settlement.

Schemes:

``none``
    entrant pays the predecessor its full net score ``H_{p[k-1]}``.
``full_net_utility``
    the house pays the displaced predecessor its net score; entrants pay nothing.
``inherent_only``
    entrant pays the predecessor's compensation ``H_{p[k-1]} - b^{k-1}_{pi(p[k-1])}``
    and the house pays the predecessor's inherent part ``b^{k-1}_{pi(p[k-1])}``.
``compensation_only``
    negative demo: entrant pays only the compensation and nobody covers the
    displaced inherent utility.  Experts then gain by misreporting; only
    truthful play is simulated and the forgone incentive is recorded.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from .scoring import CostFunction
from .simplex import DecisionPolicy, ExpertBias, SimplexGrid, make_distribution

HOUSE = "house"
SCHEMES = ("none", "full_net_utility", "inherent_only", "compensation_only")
GAIN_TOL = 1e-9


@dataclass(frozen=True)
class ExpertAgent:
    id: str
    beliefs: np.ndarray
    bias: ExpertBias

    def __post_init__(self):
        object.__setattr__(self, "beliefs", make_distribution(self.beliefs))


@dataclass(frozen=True)
class Flow:
    step: int
    payer: str
    payee: str
    amounts: tuple[float, ...]
    kind: str

    def to_record(self) -> dict[str, Any]:
        return {"step": self.step, "payer": self.payer, "payee": self.payee,
                "amounts": list(self.amounts), "kind": self.kind}


@dataclass(frozen=True)
class MarketState:
    incumbent: np.ndarray
    owner: str
    cost: CostFunction
    policy: DecisionPolicy
    ledger: tuple[Flow, ...] = ()
    owner_bias: ExpertBias | None = None
    step: int = 0
    traded: frozenset[str] = frozenset()


@dataclass
class StepRecord:
    step: int
    entrant: str
    previous: list[float]
    report: list[float]
    decision_before: int
    decision_after: int
    expected_payment: float
    expected_gain: float
    outside_option: float
    violation: bool
    flows: list[Flow]
    misreport_incentive: float | None = None

    def to_record(self) -> dict[str, Any]:
        rec = {
            "step": self.step, "entrant": self.entrant, "previous": self.previous,
            "report": self.report, "decision_before": self.decision_before,
            "decision_after": self.decision_after, "expected_payment": self.expected_payment,
            "expected_gain": self.expected_gain, "outside_option": self.outside_option,
            "participation_violation": self.violation,
            "obligations": [f.to_record() for f in self.flows],
        }
        if self.misreport_incentive is not None:
            rec["misreport_incentive"] = self.misreport_incentive
        return rec


def initial_state(p0, cost: CostFunction, policy: DecisionPolicy) -> MarketState:
    return MarketState(make_distribution(p0), HOUSE, cost, policy)


def _H(cost: CostFunction, p) -> np.ndarray:
    return cost.scores(p)[0]


def expected_payment(state: MarketState, beliefs) -> float:
    """``rho(k, k-1) = H_{p[k-1]} . p[k]``, the predecessor's net score under ``p[k]``.

    Zero while the house still owns the initial forecast.
    """
    if state.owner == HOUSE:
        return 0.0
    return float(_H(state.cost, state.incumbent) @ make_distribution(beliefs))


def _grid_report(cost: CostFunction, bias: ExpertBias, policy: DecisionPolicy,
                 beliefs: np.ndarray, grid: SimplexGrid, compensation_only: bool):
    R = grid.points
    val = cost.scores(R) @ beliefs
    if compensation_only:
        val = val - bias.values[policy.decide_many(R)] @ beliefs
    dist = np.linalg.norm(R - beliefs, axis=1)
    top = val.max()
    tied = val >= top - 1e-12 * max(1.0, abs(top))
    return R[int(np.argmin(np.where(tied, dist, np.inf)))], float(top)


def msr_step(state: MarketState, entrant: ExpertAgent, scheme: str, truthful: bool = True,
             grid: SimplexGrid | None = None) -> tuple[MarketState, StepRecord]:
    """Let ``entrant`` replace the incumbent forecast and record the obligations."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown subsidy scheme {scheme!r}")
    if entrant.id in state.traded or entrant.id == HOUSE:
        raise ValueError(f"expert {entrant.id!r} has already traded")
    if scheme == "compensation_only" and not truthful:
        raise ValueError("compensation_only is a demonstration mode; only truthful play is simulated")
    cost, pol = state.cost, state.policy
    p = entrant.beliefs
    if truthful:
        report = p
    else:
        if grid is None:
            raise ValueError("strategic reports need a grid")
        report, _ = _grid_report(cost, entrant.bias, pol, p, grid, False)
    step = state.step + 1
    prev = state.incumbent
    d_prev = pol(prev)
    H_prev = _H(cost, prev)
    H_new = _H(cost, report)
    flows: list[Flow] = []
    prev_owner = state.owner
    if prev_owner != HOUSE:
        inherent = state.owner_bias.values[d_prev]
        amounts = {
            "none": [(entrant.id, H_prev, "net_score")],
            "full_net_utility": [(HOUSE, H_prev, "net_score_subsidy")],
            "inherent_only": [(entrant.id, H_prev - inherent, "compensation"),
                              (HOUSE, inherent, "inherent_subsidy")],
            "compensation_only": [(entrant.id, H_prev - inherent, "compensation")],
        }[scheme]
        for payer, amt, kind in amounts:
            flows.append(Flow(step, payer, prev_owner, tuple(float(a) for a in amt), kind))
    payment = math.fsum(float(np.asarray(f.amounts) @ p) for f in flows if f.payer == entrant.id)
    expected_gain = float(H_new @ p) - payment
    outside = float(entrant.bias.values[d_prev] @ p)
    violation = expected_gain < outside - GAIN_TOL
    incentive = None
    if scheme == "compensation_only" and grid is not None:
        _, best = _grid_report(cost, entrant.bias, pol, p, grid, True)
        truthful_comp = float(H_new @ p - entrant.bias.values[pol(report)] @ p)
        incentive = best - truthful_comp
    new_state = replace(state, incumbent=np.asarray(report, dtype=float), owner=entrant.id,
                        ledger=state.ledger + tuple(flows), owner_bias=entrant.bias, step=step,
                        traded=state.traded | {entrant.id})
    rec = StepRecord(step, entrant.id, prev.tolist(), np.asarray(report).tolist(), d_prev,
                     pol(report), payment, expected_gain, outside, bool(violation), flows, incentive)
    return new_state, rec


def final_settlement(state: MarketState) -> Flow | None:
    """House pays the final forecaster her compensation ``H_p - b_{pi(p)}``."""
    if state.owner == HOUSE:
        return None
    d = state.policy(state.incumbent)
    comp = _H(state.cost, state.incumbent) - state.owner_bias.values[d]
    return Flow(state.step + 1, HOUSE, state.owner, tuple(float(a) for a in comp), "final_compensation")


@dataclass
class MarketRun:
    steps: list[StepRecord]
    ledger: list[Flow]
    final_forecast: np.ndarray
    final_decision: int
    realized: int
    house_outlay: float
    net_utility: dict[str, float]
    money: dict[str, float]
    violations: int
    scheme: str
    conserved: bool = True
    extra: dict[str, Any] = field(default_factory=dict)

    def summary(self) -> dict[str, Any]:
        return {
            "scheme": self.scheme, "final_forecast": self.final_forecast.tolist(),
            "final_decision": self.final_decision, "realized_outcome": self.realized,
            "house_outlay": self.house_outlay, "net_utility": self.net_utility,
            "money": self.money, "participation_violations": self.violations,
            "ledger_conserved": self.conserved, "experts": len(self.steps),
        }

    def event_lines(self) -> list[str]:
        return [json.dumps(s.to_record(), sort_keys=True) for s in self.steps]


def signed_flows(ledger: Sequence[Flow], outcome: int) -> dict[str, list[float]]:
    """Per party, the list of signed realized amounts (receipts positive)."""
    out: dict[str, list[float]] = {}
    for f in ledger:
        a = f.amounts[outcome]
        out.setdefault(f.payee, []).append(a)
        out.setdefault(f.payer, []).append(-a)
    return out


def run_market(experts: Sequence[ExpertAgent], p0, cost: CostFunction, policy: DecisionPolicy,
               scheme: str, realized: int | None = None, seed: int | None = None,
               truthful: bool = True, grid: SimplexGrid | None = None) -> MarketRun:
    """Apply ``msr_step`` in order and settle every flow at the realized outcome.

    When ``realized`` is ``None`` the outcome is drawn from the final
    forecast with ``numpy.random.default_rng(seed)``.
    """
    state = initial_state(p0, cost, policy)
    steps = []
    for e in experts:
        state, rec = msr_step(state, e, scheme, truthful=truthful, grid=grid)
        steps.append(rec)
    ledger = list(state.ledger)
    final = final_settlement(state)
    if final is not None:
        ledger.append(final)
    if realized is None:
        rng = np.random.default_rng(seed)
        realized = int(rng.choice(len(state.incumbent), p=state.incumbent))
    flows = signed_flows(ledger, realized)
    money = {party: math.fsum(v) for party, v in flows.items()}
    conserved = math.fsum(a for v in flows.values() for a in v) == 0.0
    house_outlay = -money.get(HOUSE, 0.0)
    d_final = policy(state.incumbent)
    net = {}
    for e in experts:
        net[e.id] = money.get(e.id, 0.0) + float(e.bias.values[d_final, realized])
    violations = sum(s.violation for s in steps)
    return MarketRun(steps, ledger, state.incumbent, d_final, realized, house_outlay, net,
                     {k: v for k, v in money.items() if k != HOUSE}, violations, scheme, conserved)


def _dominates(a: ExpertBias, b: ExpertBias) -> bool:
    """Pointwise ``a >= b`` with at least one strict entry."""
    return bool(np.all(a.values >= b.values) and np.any(a.values > b.values))


def order_by_bias(experts: Sequence[ExpertAgent]) -> list[ExpertAgent]:
    """Experts with the greatest utility first.

    Repeatedly emits the earliest remaining expert that nobody remaining
    strictly dominates, so a pointwise chain comes out in descending order
    and incomparable experts keep their input order.
    """
    rest = list(experts)
    out = []
    while rest:
        k = next(i for i, e in enumerate(rest)
                 if not any(_dominates(f.bias, e.bias) for f in rest if f is not e))
        out.append(rest.pop(k))
    return out
