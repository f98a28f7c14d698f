"""Synthetic greenhouse decision scenarios with constructed ground truth.

Every scenario is generated from a known cause, so its annotation is exact:

``A``   comfort band threatened by an obvious disturbance (cold night, hot day)
``A2``  comfort band threatened through a less obvious channel (humid spell,
        CO2 drawdown under strong light)
``B``   extreme heat with relaxed comfort weights, so the hard bound binds
``C``   a cold spell two hours ago left the house just below its band and
        the controller applies a small corrective heating
``E``   cool sunny day on which CO2 enrichment pays for itself

A companion history process supplies the lagged record: the heating of the
past is scheduled on outdoor temperature read two hours earlier, and the
ventilation reacts to outdoor humidity an hour earlier.

Two smaller suites run on the hard-constrained testbeds.  They have no
comfort bands and no operating record, so their explanations rest on the
multipliers, the counterfactual re-solve and the graph alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np
import yaml

from .greenhouse import (DISTURBANCE_NAMES, DISTURBANCE_UNITS, TESTBEDS, GreenhouseParams,
                         build_greenhouse_ocp, build_hardconstrained_testbed)
from .kg import SignedKnowledgeGraph, greenhouse_graph, linear_graph
from .ocp import DecisionContext, rollout
from .pcmci import TimeSeriesTable

HISTORY_VARS = ("T_out", "C_out", "H_out", "Q_rad", "u_V", "u_Qh")
_EXO_MEAN = np.array([15.0, 410.0, 70.0, 200.0])
_EXO_SD = np.array([5.0, 50.0, 10.0, 200.0])
_EXO_PHI = np.array([0.95, 0.9, 0.9, 0.9])
HEAT_LAG = 8
VENT_LAG = 4
HISTORY_WINDOW = 48
SUITE_TAU_MAX = 12


@dataclass(frozen=True)
class GroundTruthAnnotation:
    scenario_ref: str
    true_causal_factors: tuple
    reference_explanation_text: str

    def __post_init__(self):
        if not self.true_causal_factors:
            raise ValueError(f"scenario {self.scenario_ref!r}: empty factor list")


@dataclass(frozen=True)
class Scenario:
    id: str
    family: str
    x0: tuple
    forecast: np.ndarray
    params: GreenhouseParams = field(default_factory=GreenhouseParams)
    horizon: int = 16
    history: Mapping = field(default_factory=dict)
    truth: Optional[GroundTruthAnnotation] = None
    timestamp: str = ""
    description: str = ""
    model: str = "greenhouse"

    def __post_init__(self):
        if self.model != "greenhouse" and self.model not in TESTBEDS:
            raise ValueError(f"unknown model {self.model!r}")

    def spec(self):
        if self.model == "greenhouse":
            return build_greenhouse_ocp(self.params, self.horizon)
        return build_hardconstrained_testbed(self.model, self.horizon)

    def context(self) -> DecisionContext:
        units = DISTURBANCE_UNITS if self.model == "greenhouse" else None
        return DecisionContext(np.asarray(self.x0, dtype=float), self.forecast, self.timestamp, units)


# ----------------------------------------------------------------------------
# history process


def _heat_schedule(t_out_lagged, noise):
    return np.clip(0.3 - 0.05 * (t_out_lagged - _EXO_MEAN[0]) + noise, 0.0, 1.0)


def _vent_schedule(h_out_lagged, noise):
    return np.clip(0.3 + 0.02 * (h_out_lagged - _EXO_MEAN[2]) + noise, 0.0, 1.0)


def _exogenous(n: int, rng) -> np.ndarray:
    X = np.empty((n, 4))
    X[0] = _EXO_MEAN + rng.normal(0.0, 1.0, 4) * _EXO_SD
    innov = _EXO_SD * np.sqrt(1.0 - _EXO_PHI ** 2)
    for t in range(1, n):
        X[t] = _EXO_MEAN + _EXO_PHI * (X[t - 1] - _EXO_MEAN) + rng.normal(0.0, 1.0, 4) * innov
    X[:, 3] = np.maximum(X[:, 3], 0.0)
    return X


def _controls(exo: np.ndarray, rng) -> np.ndarray:
    n = exo.shape[0]
    noise = rng.normal(0.0, 0.05, (n, 2))
    u = np.full((n, 2), 0.3)
    u[VENT_LAG:, 0] = _vent_schedule(exo[:-VENT_LAG, 2], noise[VENT_LAG:, 0])
    u[HEAT_LAG:, 1] = _heat_schedule(exo[:-HEAT_LAG, 0], noise[HEAT_LAG:, 1])
    return u


def simulate_history(n: int = 1500, seed: int = 0) -> TimeSeriesTable:
    """Operating record of exogenous drivers and scheduled actuation, 15-min steps."""
    rng = np.random.default_rng(seed)
    exo = _exogenous(n, rng)
    return TimeSeriesTable(HISTORY_VARS, np.hstack([exo, _controls(exo, rng)]), 15.0)


def history_window(seed: int, cold_spell: Optional[float] = None, length: int = HISTORY_WINDOW) -> dict:
    """Recent record ending at the decision instant.

    Exogenous values are kept within 1.5 standard deviations of their means.
    ``cold_spell`` plants an outdoor temperature ``cold_spell`` deviations
    below its mean over lags 6 to 11; the scheduled heating then responds.
    """
    rng = np.random.default_rng(seed)
    exo = _exogenous(length, rng)
    exo = np.clip(exo, _EXO_MEAN - 1.5 * _EXO_SD, _EXO_MEAN + 1.5 * _EXO_SD)
    if cold_spell is not None:
        for lag in range(6, 12):
            exo[length - 1 - lag, 0] = _EXO_MEAN[0] - cold_spell * _EXO_SD[0]
    u = _controls(exo, rng)
    data = np.hstack([exo, u])
    return {name: tuple(float(v) for v in data[:, j]) for j, name in enumerate(HISTORY_VARS)}


# ----------------------------------------------------------------------------
# scenario families


def _profile(H, T_out, C_out, H_out, Q):
    F = np.empty((H, 4))
    for j, v in enumerate((T_out, C_out, H_out, Q)):
        F[:, j] = v
    F[:, 3] = np.maximum(F[:, 3], 0.0)
    return F


def _bump(H):
    k = np.arange(H, dtype=float)
    return np.sin(np.pi * (k + 1.0) / (H + 1.0))


def _truth(sid, factors, text):
    return GroundTruthAnnotation(sid, tuple(factors), text)


def cold_night(sid, rng, H=16):
    start = 12.0 + rng.uniform(-1.0, 1.0)
    k = np.arange(H, dtype=float)
    frac = np.clip(1.0 - k / (0.5 * H), 0.0, 1.0)
    F = _profile(H, 5.0 + (start - 5.0) * frac + rng.normal(0, 0.2, H), 410 + rng.normal(0, 5, H),
                 80 + rng.normal(0, 2, H), 0.0)
    x0 = (21.9 + rng.uniform(-0.3, 0.3), 600 + rng.uniform(-30, 30), 75 + rng.uniform(-3, 3), 1.0)
    text = ("heating was activated because the outdoor temperature is forecast to fall and the "
            "greenhouse would drop below the lower comfort temperature bound")
    return Scenario(sid, "A", x0, F, GreenhouseParams(biomass_reference=1.0), H,
                    history_window(int(rng.integers(1 << 30)), cold_spell=2.6 + rng.uniform(-0.2, 0.2)),
                    _truth(sid, ["T_lower", "T_out"], text), "2024-03-01T22:00:00",
                    "outdoor temperature falls to 5 degC overnight")


def hot_day(sid, rng, H=16):
    b = _bump(H)
    F = _profile(H, 25 + 3 * b + rng.normal(0, 0.2, H), 410 + rng.normal(0, 5, H), 50 + rng.normal(0, 2, H),
                 300 + 200 * b + rng.normal(0, 10, H))
    x0 = (24.5 + rng.uniform(-0.3, 0.3), 700 + rng.uniform(-30, 30), 70 + rng.uniform(-3, 3), 1.0)
    text = ("cooling was applied because strong radiation and warm outdoor air would push the "
            "greenhouse above the upper comfort temperature bound")
    return Scenario(sid, "A", x0, F, GreenhouseParams(biomass_reference=1.0), H,
                    history_window(int(rng.integers(1 << 30))),
                    _truth(sid, ["T_upper", "Q_rad", "T_out"], text), "2024-07-15T11:00:00",
                    "warm sunny day")


def humid_spell(sid, rng, H=16):
    F = _profile(H, 17 + rng.normal(0, 0.3, H), 410 + rng.normal(0, 5, H),
                 np.clip(97 + rng.normal(0, 1, H), 0, 100), 250 + rng.uniform(-20, 20))
    x0 = (20 + rng.uniform(-0.3, 0.3), 650 + rng.uniform(-30, 30), 85 + rng.uniform(-2, 2), 1.0)
    text = ("dehumidifying actuation was applied because near saturated outdoor air would raise "
            "the humidity above the upper comfort humidity bound")
    return Scenario(sid, "A2", x0, F, GreenhouseParams(biomass_reference=1.0), H,
                    history_window(int(rng.integers(1 << 30))),
                    _truth(sid, ["Hm_upper", "H_out"], text), "2024-10-05T09:00:00",
                    "near-saturated outdoor air")


def co2_drawdown(sid, rng, H=16):
    F = _profile(H, 5 + rng.normal(0, 0.3, H), 410 + rng.normal(0, 5, H), 60 + rng.normal(0, 2, H),
                 450 + rng.uniform(-30, 30))
    x0 = (19 + rng.uniform(-0.3, 0.3), 560 + rng.uniform(-20, 20), 70 + rng.uniform(-3, 3), 1.0)
    text = ("carbon dioxide was injected because strong light drives photosynthesis that would "
            "draw the concentration below the lower comfort bound")
    return Scenario(sid, "A2", x0, F, GreenhouseParams(biomass_reference=1.0), H,
                    history_window(int(rng.integers(1 << 30))),
                    _truth(sid, ["C_lower", "Q_rad"], text), "2024-04-20T10:00:00",
                    "bright cool day with strong photosynthetic drawdown")


def extreme_heat(sid, rng, H=16):
    b = _bump(H)
    Q = 650 + rng.uniform(-50, 50)
    F = _profile(H, 33.5 + rng.uniform(-0.5, 0.5) + rng.normal(0, 0.1, H), 410 + rng.normal(0, 5, H),
                 50 + rng.normal(0, 2, H), Q * (0.6 + 0.4 * b))
    x0 = (27.8 + rng.uniform(-0.3, 0.3), 700 + rng.uniform(-30, 30), 70 + rng.uniform(-3, 3), 1.0)
    params = GreenhouseParams(biomass_reference=1.0, w_T=0.001)
    text = ("cooling was driven by the hard maximum temperature limit because extreme radiation "
            "and hot outdoor air would exceed the safety bound")
    return Scenario(sid, "B", x0, F, params, H, history_window(int(rng.integers(1 << 30))),
                    _truth(sid, ["T_max", "Q_rad", "T_out"], text), "2024-07-30T13:00:00",
                    "heat wave with relaxed comfort weighting")


def lagged_cold(sid, rng, H=16):
    Q0 = 100 + rng.uniform(-10, 10)
    F = _profile(H, 13 + rng.uniform(-1, 1) + rng.normal(0, 0.1, H), 410 + rng.normal(0, 5, H),
                 65 + rng.normal(0, 2, H), np.linspace(Q0, Q0 + 200, H))
    x0 = (17.97 + rng.uniform(-0.01, 0.01), 850 + rng.uniform(-20, 20), 70 + rng.uniform(-2, 2), 1.0)
    text = ("a small heating correction was applied because an outdoor cold spell two hours "
            "earlier left the greenhouse just below its comfort temperature")
    return Scenario(sid, "C", x0, F, GreenhouseParams(biomass_reference=1.0), H,
                    history_window(int(rng.integers(1 << 30)), cold_spell=2.6 + rng.uniform(-0.2, 0.2)),
                    _truth(sid, ["T_out"], text), "2024-03-12T08:00:00",
                    "morning after an outdoor cold spell")


def co2_enrichment(sid, rng, H=16):
    F = _profile(H, 6 + rng.uniform(-1, 1) + rng.normal(0, 0.2, H), 410 + rng.normal(0, 5, H),
                 60 + rng.normal(0, 2, H), 450 + rng.uniform(-20, 20))
    x0 = (22 + rng.uniform(-0.3, 0.3), 700 + rng.uniform(-20, 20), 70 + rng.uniform(-3, 3), 1.0)
    params = GreenhouseParams(biomass_reference=1.0, biomass_price=2000.0, c_leak=0.02)
    text = ("carbon dioxide enrichment was applied because strong light makes extra growth worth "
            "more than the injection cost")
    return Scenario(sid, "E", x0, F, params, H,
                    history_window(int(rng.integers(1 << 30))),
                    _truth(sid, ["economic", "Q_rad"], text), "2024-03-25T12:00:00",
                    "cool sunny spring day in a sealed house with a high-value crop")


SUITE_LAYOUT = (("cold-night", cold_night, 3), ("hot-day", hot_day, 2), ("humid-spell", humid_spell, 3),
                ("co2-drawdown", co2_drawdown, 3), ("extreme-heat", extreme_heat, 3),
                ("lagged-cold", lagged_cold, 3), ("co2-enrichment", co2_enrichment, 3))


def greenhouse_suite(seed: int = 0, horizon: int = 16) -> list:
    """Twenty annotated scenarios, ordered by id."""
    out = []
    for fam_i, (name, make, count) in enumerate(SUITE_LAYOUT):
        for i in range(count):
            rng = np.random.default_rng([seed, fam_i, i])
            out.append(make(f"{name}-{i + 1:02d}", rng, horizon))
    return sorted(out, key=lambda s: s.id)


# ----------------------------------------------------------------------------
# hard-constrained testbed suites

TESTBED_STATS = {
    "thermal-zone": {"T_out": (10.0, 5.0), "Q_int": (0.0, 10.0)},
    "reactor-chain": {"c_feed": (10.0, 2.0), "T_amb": (0.0, 1.0)},
}


def testbed_graph(kind: str) -> SignedKnowledgeGraph:
    """Signed graph of a testbed, with disturbance nominals for anomaly scores."""
    return linear_graph(build_hardconstrained_testbed(kind), TESTBED_STATS[kind])


def default_graph(model: str) -> SignedKnowledgeGraph:
    return greenhouse_graph() if model == "greenhouse" else testbed_graph(model)


def zone_cold_cap(sid, rng, H=12):
    F = np.column_stack([10.8 + rng.uniform(-0.6, 0.6) + rng.normal(0, 0.2, H),
                         np.clip(rng.normal(0.5, 0.5, H), 0, None)])
    x0 = (21.5 + rng.uniform(-0.3, 0.3), 20.5, 21.0)
    text = "heating ran at the power cap because cold outdoor air keeps pulling the zone down"
    return Scenario(sid, "T-cap", x0, F, horizon=H, truth=_truth(sid, ["power_max", "T_out"], text),
                    timestamp="2024-01-10T06:00:00", description="cold morning", model="thermal-zone")


def zone_hot_cap(sid, rng, H=12):
    F = np.column_stack([21 + rng.uniform(-1, 1) + rng.normal(0, 0.3, H),
                         10 + rng.uniform(-1, 1) + rng.normal(0, 0.5, H)])
    x0 = (22.5 + rng.uniform(-0.3, 0.3), 22.0, 21.0)
    text = "cooling ran at the power cap because warm outdoor air and internal gains heat the zone"
    return Scenario(sid, "T-cap", x0, F, horizon=H, truth=_truth(sid, ["power_max", "T_out", "Q_int"], text),
                    timestamp="2024-07-10T14:00:00", description="warm occupied afternoon", model="thermal-zone")


def zone_mild(sid, rng, H=12):
    F = np.column_stack([26 + rng.uniform(-1, 1) + rng.normal(0, 0.3, H),
                         np.clip(rng.normal(0, 0.5, H), 0, None)])
    x0 = (22 + rng.uniform(-0.3, 0.3), 22.0, 21.0)
    text = "moderate cooling keeps the zone near its setpoint at lower cost than doing nothing"
    return Scenario(sid, "T-econ", x0, F, horizon=H, truth=_truth(sid, ["economic"], text),
                    timestamp="2024-06-01T12:00:00", description="mild unoccupied day", model="thermal-zone")


def _first_breach(spec, x0, inputs, F):
    """Earliest hard constraint breached by an open-loop rollout (stage, then declaration order)."""
    X = rollout(spec, np.asarray(x0, dtype=float), inputs, F)
    H = spec.horizon
    for k in range(1, H + 1):
        for c in spec.path_constraints:
            if k in c.stages and c.evaluator(X[k], inputs[min(k, H - 1)], F[min(k, H - 1)]) > 0:
                return c.id
    return None


def reactor_hot_ambient(sid, rng, H=12):
    t_amb = 3 + rng.uniform(-0.5, 1.0)
    F = np.column_stack([10 + rng.normal(0, 0.2, H), t_amb + rng.normal(0, 0.2, H)])
    x0 = (1.0, rng.uniform(0, 3), 1.0, rng.uniform(0, 3), 1.2, rng.uniform(0, 3))
    # the annotated cap is the first one the planted heat load breaches at nominal feed without cooling
    nominal = np.zeros((H, 4))
    nominal[:, 0] = 0.4
    cap = _first_breach(build_hardconstrained_testbed("reactor-chain", H), x0, nominal, F)
    if cap is None:
        raise RuntimeError(f"scenario {sid}: planted heat load breaches no cap")
    text = "feed was throttled because hot ambient air would push a tank past its temperature cap"
    return Scenario(sid, "R-heat", x0, F, horizon=H, truth=_truth(sid, [cap, "T_amb"], text),
                    timestamp="2024-08-02T15:00:00", description="hot ambient", model="reactor-chain")


TESTBED_LAYOUT = {
    "thermal-zone": (("zone-cold-cap", zone_cold_cap, 4), ("zone-hot-cap", zone_hot_cap, 3),
                     ("zone-mild", zone_mild, 3)),
    "reactor-chain": (("reactor-hot-ambient", reactor_hot_ambient, 10),),
}


def testbed_suite(kind: str, seed: int = 0, horizon: int = 12) -> list:
    """Ten annotated scenarios on a hard-constrained testbed, ordered by id."""
    if kind not in TESTBED_LAYOUT:
        raise ValueError(f"unknown testbed {kind!r}; expected one of {TESTBEDS}")
    out = []
    for fam_i, (name, make, count) in enumerate(TESTBED_LAYOUT[kind]):
        for i in range(count):
            rng = np.random.default_rng([seed, 100 + TESTBEDS.index(kind), fam_i, i])
            out.append(make(f"{name}-{i + 1:02d}", rng, horizon))
    return sorted(out, key=lambda s: s.id)


# ----------------------------------------------------------------------------
# documents


def scenario_to_dict(s: Scenario) -> dict:
    spec = s.spec()
    head = {
        "model": s.model,
        "horizon": s.horizon,
        "timestamp": s.timestamp,
        "sampling_interval_minutes": float(spec.sampling_interval_minutes),
        "state": list(spec.state_names),
        "disturbances": list(spec.disturbance_names),
    }
    if s.model == "greenhouse":
        head["units"] = dict(zip(DISTURBANCE_NAMES, DISTURBANCE_UNITS))
    doc = {"id": s.id, "family": s.family, "description": s.description, "header": head}
    if s.model == "greenhouse":
        doc["params"] = {k: v for k, v in s.params.to_dict().items() if v != getattr(GreenhouseParams(), k)}
    doc["x0"] = [float(v) for v in s.x0]
    doc["forecast"] = [[float(v) for v in row] for row in s.forecast]
    doc["history"] = {k: [float(v) for v in vals] for k, vals in s.history.items()}
    if s.truth is not None:
        doc["truth"] = {"factors": list(s.truth.true_causal_factors),
                        "reference": s.truth.reference_explanation_text}
    return doc


def dump_scenario(s: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(s), sort_keys=False)


class ScenarioError(ValueError):
    pass


def scenario_from_dict(doc: Mapping, params: Optional[GreenhouseParams] = None) -> Scenario:
    """Parse a scenario document; ``params`` replaces the built-in defaults before overrides."""
    try:
        head = doc["header"]
        model = str(head.get("model", "greenhouse"))
        if model != "greenhouse" and model not in TESTBEDS:
            raise ScenarioError(f"unsupported model {model!r}")
        H = int(head["horizon"])
        base = params or GreenhouseParams()
        p = replace(base, **{k: float(v) for k, v in (doc.get("params") or {}).items()}) if doc.get("params") else base
        spec = build_greenhouse_ocp(p, H) if model == "greenhouse" else build_hardconstrained_testbed(model, H)
        names = tuple(head.get("disturbances", spec.disturbance_names))
        if names != tuple(spec.disturbance_names):
            raise ScenarioError(f"disturbance columns {list(names)} do not match {list(spec.disturbance_names)}")
        F = np.asarray(doc["forecast"], dtype=float)
        x0 = tuple(float(v) for v in doc["x0"])
    except (KeyError, TypeError) as exc:
        raise ScenarioError(f"malformed scenario document: missing or invalid {exc}") from None
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"malformed scenario document: {exc}") from None
    if F.shape != (H, spec.disturbance_dim):
        raise ScenarioError(f"forecast has shape {F.shape}, expected ({H}, {spec.disturbance_dim})")
    if not np.all(np.isfinite(F)):
        raise ScenarioError("forecast has missing entries")
    if len(x0) != spec.state_dim:
        raise ScenarioError(f"x0 needs {spec.state_dim} entries")
    truth = None
    if "truth" in doc:
        truth = GroundTruthAnnotation(str(doc["id"]), tuple(doc["truth"]["factors"]),
                                      str(doc["truth"].get("reference", "")))
    hist = {k: tuple(float(v) for v in vals) for k, vals in (doc.get("history") or {}).items()}
    return Scenario(str(doc["id"]), str(doc.get("family", "")), x0, F, p, H, hist, truth,
                    str(head.get("timestamp", "")), str(doc.get("description", "")), model)


def load_scenario(source, params: Optional[GreenhouseParams] = None) -> Scenario:
    if hasattr(source, "read_text"):
        source = source.read_text(encoding="utf-8")
    try:
        doc = yaml.safe_load(source)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"scenario is not valid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a mapping")
    return scenario_from_dict(doc, params)
