"""Scenario files: JSON schema validation and conversion to library objects."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from .design import PiecewiseQuadratic
from .market import ExpertAgent
from .scoring import CostFunction, builtin_cost, quadratic_cost
from .simplex import DecisionPolicy, ExpertBias, UtilityMatrix, make_distribution, make_policy
from .uncertainty import Scenario, UncertaintyBox, uniform_estimate

DEFAULT_RESOLUTION = {2: 200, 3: 60}
DEFAULT_SWEEP = {2: 1000, 3: 120}


class ScenarioError(ValueError):
    """Invalid scenario input; ``field`` names the offending location."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _schema() -> dict[str, Any]:
    text = resources.files("propercomp").joinpath("schema/scenario.schema.json").read_text()
    return json.loads(text)


def bundled_path(name: str) -> Path:
    """Path of a bundled scenario, by stem or file name."""
    stem = name[:-5] if name.endswith(".json") else name
    path = Path(str(resources.files("propercomp").joinpath(f"scenarios/{stem}.json")))
    if not path.exists():
        raise FileNotFoundError(f"no bundled scenario {name!r}")
    return path


def bundled_names() -> list[str]:
    root = resources.files("propercomp").joinpath("scenarios")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def _matrix(raw, where: str, shape: tuple[int, int] | None = None) -> np.ndarray:
    width = len(raw[0]) if shape is None else shape[1]
    for i, row in enumerate(raw):
        if len(row) != width:
            raise ScenarioError(f"{where}[{i}]", f"row {i} has {len(row)} entries, expected {width}")
    if shape is not None and len(raw) != shape[0]:
        raise ScenarioError(where, f"{len(raw)} rows, expected {shape[0]}")
    return np.array(raw, dtype=float)


def cost_from_spec(spec: dict[str, Any]) -> CostFunction:
    """Recursive cost description to a ``CostFunction``."""
    kind = spec["kind"]
    if kind == "designed":
        return PiecewiseQuadratic.from_record(spec).to_cost()
    params = {k: v for k, v in spec.items() if k != "kind"}
    if "base" in params:
        params["base"] = cost_from_spec(params["base"])
    if "terms" in params:
        params["terms"] = [cost_from_spec(t) for t in params["terms"]]
    try:
        return builtin_cost(kind, **params)
    except KeyError as e:
        raise ScenarioError("cost", f"cost kind {kind!r} needs parameter {e.args[0]!r}") from None


@dataclass
class ScenarioFile:
    name: str
    raw: dict[str, Any]
    digest: str
    dm: UtilityMatrix
    policy: DecisionPolicy
    bias: ExpertBias | None
    estimate: ExpertBias | None
    box: UncertaintyBox | None
    rule_kind: str
    lam: float | None
    cost: CostFunction
    sigma: float | None
    resolution: int
    sweep_resolution: int
    tolerances: dict[str, float]
    experiment: str | None
    design: dict[str, Any] = field(default_factory=dict)
    experts: list[ExpertAgent] = field(default_factory=list)
    market: dict[str, Any] | None = None

    @property
    def m(self) -> int:
        return self.dm.m

    def require_bias(self) -> ExpertBias:
        if self.bias is None:
            raise ScenarioError("bias", "this experiment needs the expert bias matrix")
        return self.bias

    def rule_estimate(self) -> ExpertBias:
        """Bias estimate used to build compensation: explicit, uniform blend, or the true bias."""
        if self.estimate is not None:
            return self.estimate
        if self.box is not None and self.rule_kind == "uniform":
            return uniform_estimate(self.box, self.lam, self.dm.labels)
        return self.require_bias()

    def uncertainty_scenario(self) -> Scenario:
        if self.box is None:
            raise ScenarioError("box", "this experiment needs an uncertainty box")
        b = self.require_bias()
        try:
            if self.rule_kind == "uniform":
                return Scenario.uniform(self.dm, b, self.box, self.cost, self.lam, self.name)
            est = self.estimate if self.estimate is not None else b
            return Scenario(self.dm, b, self.box, self.cost, est, "consistent", name=self.name)
        except ValueError as e:
            raise ScenarioError("box", str(e)) from None


def parse_scenario(raw: dict[str, Any], digest: str = "") -> ScenarioFile:
    try:
        jsonschema.validate(raw, _schema())
    except jsonschema.ValidationError as e:
        where = "/".join(str(x) for x in e.absolute_path) or "<root>"
        raise ScenarioError(where, e.message) from None
    dm_raw = raw["dm"]
    V = _matrix(dm_raw["matrix"], "dm/matrix")
    shape = V.shape
    labels = tuple(dm_raw.get("labels", ()))
    if labels and len(labels) != shape[0]:
        raise ScenarioError("dm/labels", f"{len(labels)} labels for {shape[0]} decisions")
    dm = UtilityMatrix(V, labels)
    policy = make_policy(dm, dm_raw.get("tie_break", ()))

    def bias_matrix(key):
        return UtilityMatrix(_matrix(raw[key], key, shape), dm.labels) if key in raw else None

    bias, estimate = bias_matrix("bias"), bias_matrix("estimate")
    box = None
    if "box" in raw:
        braw = raw["box"]
        if "width" in braw:
            if bias is None:
                raise ScenarioError("box/width", "a box width needs the bias matrix as its centre")
            box = UncertaintyBox.around(bias, braw["width"])
        elif "lower" in braw and "upper" in braw:
            try:
                box = UncertaintyBox(_matrix(braw["lower"], "box/lower", shape),
                                     _matrix(braw["upper"], "box/upper", shape))
            except ValueError as e:
                if isinstance(e, ScenarioError):
                    raise
                raise ScenarioError("box", str(e)) from None
        else:
            raise ScenarioError("box", "give either width or both lower and upper")
    rule = raw.get("rule", {})
    rule_kind = rule.get("kind", "consistent")
    lam = rule.get("lambda", 0.5) if rule_kind == "uniform" else None
    cost = cost_from_spec(raw["cost"]) if "cost" in raw else quadratic_cost()
    if "cost" in raw and raw["cost"]["kind"] == "designed" and shape[1] != 2:
        raise ScenarioError("cost", "designed costs are defined for two outcomes")
    grid = raw.get("grid", {})
    m = shape[1]
    tol = {"proper": 1e-9, "bound": 1e-6, **raw.get("tolerances", {})}
    experts = []
    mk = raw.get("market")
    if mk is not None:
        if len(mk["initial"]) != m:
            raise ScenarioError("market/initial", f"{len(mk['initial'])} entries, expected {m}")
        for k, e in enumerate(mk["experts"]):
            where = f"market/experts/{k}"
            if len(e["beliefs"]) != m:
                raise ScenarioError(f"{where}/beliefs", f"{len(e['beliefs'])} entries, expected {m}")
            try:
                experts.append(ExpertAgent(e["id"], e["beliefs"],
                                           UtilityMatrix(_matrix(e["bias"], f"{where}/bias", shape), dm.labels)))
            except ScenarioError:
                raise
            except ValueError as err:
                raise ScenarioError(where, str(err)) from None
        try:
            make_distribution(mk["initial"])
        except ValueError as err:
            raise ScenarioError("market/initial", str(err)) from None
        if len({e.id for e in experts}) != len(experts):
            raise ScenarioError("market/experts", "expert ids must be unique")
        if mk.get("realized") is not None and mk["realized"] >= m:
            raise ScenarioError("market/realized", f"outcome {mk['realized']} out of range")
    return ScenarioFile(
        name=raw["name"], raw=raw, digest=digest, dm=dm, policy=policy, bias=bias,
        estimate=estimate, box=box, rule_kind=rule_kind, lam=lam, cost=cost,
        sigma=raw.get("sigma"),
        resolution=grid.get("resolution", DEFAULT_RESOLUTION.get(m, 20)),
        sweep_resolution=grid.get("sweep_resolution", DEFAULT_SWEEP.get(m, 30)),
        tolerances=tol, experiment=raw.get("experiment"), design=raw.get("design", {}),
        experts=experts, market=mk,
    )


def load_scenario(path: str | Path) -> ScenarioFile:
    """Read, validate and convert a scenario file (or a bundled scenario name)."""
    p = Path(path)
    if not p.exists() and not p.suffix:
        p = bundled_path(str(path))
    data = p.read_bytes()
    try:
        raw = json.loads(data)
    except json.JSONDecodeError as e:
        raise ScenarioError("<file>", f"not valid JSON: {e}") from None
    return parse_scenario(raw, hashlib.sha256(data).hexdigest())
