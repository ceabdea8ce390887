"""Proper compensation rules for experts with a stake in the decision."""

from .simplex import (
    ExpertBias,
    DecisionPolicy,
    SimplexGrid,
    UtilityMatrix,
    decision_regions,
    make_distribution,
    make_policy,
)
from .scoring import CostFunction, ScoringRule, builtin_cost, check_proper
from .compensation import CompensationRule, c1_rule, net_score, rule_from_cost
from .uncertainty import Scenario, UncertaintyBox

__all__ = [
    "CompensationRule", "CostFunction", "DecisionPolicy", "ExpertBias", "Scenario",
    "ScoringRule", "SimplexGrid", "UncertaintyBox", "UtilityMatrix", "builtin_cost",
    "c1_rule", "check_proper", "decision_regions", "make_distribution", "make_policy",
    "net_score", "rule_from_cost",
]
__version__ = "0.1.0"
