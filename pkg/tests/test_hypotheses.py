import numpy as np
import pytest
import yaml

from xmpc import forensics as fx
from xmpc.evaluation import SuiteConfig, TemporalFit, run_scenario
from xmpc.greenhouse import GreenhouseParams, build_greenhouse_ocp, with_params
from xmpc.hypotheses import (CONFIDENCE, HISTORY, HYPOTHESES, SECTIONS, ExplainConfig, TemporalEvidence,
                             dump_record, evaluate_hypothesis, generate_explanation, hypothesis, render_narrative,
                             statements_from_dict)
from xmpc.kg import PLUS, greenhouse_graph
from xmpc.ocp import DecisionContext
from xmpc.pcmci import LagBaseline, LaggedCausalGraph, LaggedEdge
from xmpc.scenarios import default_graph, testbed_suite
from xmpc.solver import solve

KG = greenhouse_graph()


def by_id(scenarios, prefix):
    return next(s for s in scenarios if s.id.startswith(prefix))


def explain(s, fit, config=SuiteConfig()):
    rec, _ = run_scenario(s, config, default_graph(s.model), fit, fx.Thresholds())
    return rec


def test_order_and_confidences():
    assert [h.kind for h in HYPOTHESES] == ["Safety", "Optimization", "Prediction", "Economics", "History"]
    assert [h.rank for h in HYPOTHESES] == [1, 2, 3, 4, 5]
    assert CONFIDENCE["safety-hard"] > CONFIDENCE["safety-soft"] > CONFIDENCE["prediction"]
    assert min(CONFIDENCE.values()) == CONFIDENCE["history"] == 0.82
    assert hypothesis("Economics").rank == 4
    with pytest.raises(ValueError, match="unknown hypothesis"):
        hypothesis("Luck")


def test_config_tags():
    assert ExplainConfig().tag() == "full"
    assert ExplainConfig(drop_kg=True).tag() == "drop-kg"
    assert ExplainConfig(True, True, True).tag() == "drop-kkt+kg+pcmci"


def test_cold_night_is_soft_safety(suite_scenarios, suite_history):
    rec = explain(by_id(suite_scenarios, "cold-night"), suite_history)
    assert rec.selected.kind == "Safety"
    assert rec.confidence == 0.92
    assert not rec.degraded_mode
    assert rec.evidence.details["constraint"] == "T_lower"
    assert rec.evidence.counterfactual.extreme_value < 18.0
    assert rec.predicted_factors[:2] == ("T_lower", "T_out")
    assert any(c.path == ("T_out", "T") and c.composite_sign == PLUS for c in rec.supporting_context)
    assert rec.narrative.count("## ") == 4
    assert [s for s in SECTIONS if f"## {s}" in rec.narrative] == list(SECTIONS)


def test_hard_bound_is_hard_safety():
    s = testbed_suite("thermal-zone", 0)[0]
    rec = explain(s, None)
    assert rec.selected.kind == "Safety" and rec.confidence == 0.95
    assert rec.evidence.details["path"] == "hard"
    assert rec.evidence.kkt.primary == ("power_max", 0)


def test_enrichment_is_economics(suite_scenarios, suite_history):
    rec = explain(by_id(suite_scenarios, "co2-enrichment"), suite_history)
    assert rec.selected.kind == "Economics" and rec.confidence == 0.85
    assert rec.evidence.details["saving"] > 0.05
    assert rec.predicted_factors[0] == "economic"


def test_lagged_cold_is_history(suite_scenarios, suite_history):
    rec = explain(by_id(suite_scenarios, "lagged-cold"), suite_history)
    assert rec.selected.kind == "History" and rec.confidence == 0.82
    assert rec.evidence.details["fraction"] > 0.5


def test_all_sources_dropped_is_degraded(suite_scenarios, suite_history):
    rec = explain(by_id(suite_scenarios, "cold-night"), suite_history, SuiteConfig(True, True, True))
    assert rec.degraded_mode
    assert rec.unavailable == ("kkt", "kg", "pcmci")
    assert "unavailable" in rec.narrative


# ----------------------------------------------------------------------------
# a decision with nothing to explain

IDLE = with_params(GreenhouseParams(), price_vent=0.0, price_co2=0.0, price_heat=0.0, price_cool=0.0,
                   biomass_price=0.0, c_photo=0.0, h_transp=0.0, a_rad=0.0)


@pytest.fixture(scope="module")
def idle():
    spec = build_greenhouse_ocp(IDLE, 8)
    ctx = DecisionContext([22.0, 700.0, 75.0, 1.0], np.tile([22.0, 700.0, 75.0, 0.0], (8, 1)))
    return spec, ctx, solve(spec, ctx)


@pytest.mark.parametrize("h", HYPOTHESES, ids=lambda h: h.kind)
def test_idle_decision_supports_nothing(idle, h):
    spec, ctx, sol = idle
    assert evaluate_hypothesis(h, sol.inputs[0], ctx, spec, sol, KG, None) is None


def test_idle_fallback_record(idle):
    spec, ctx, sol = idle
    rec = generate_explanation(sol.inputs[0], ctx, spec, sol, KG, None, scenario_ref="idle")
    assert rec.selected is None and rec.confidence is None
    assert rec.degraded_mode
    assert rec.narrative.count("## ") == 1
    assert "Insufficient evidence" in rec.narrative
    assert any("history skipped" in f for f in rec.evidence.uncertainty_flags)


# ----------------------------------------------------------------------------
# history needs a strict majority of flagged parents


def _temporal(values):
    edges = (LaggedEdge("u_Qh", "T_out", 8, 1e-4, -0.3), LaggedEdge("u_Qh", "Q_rad", 2, 1e-3, 0.2))
    graph = LaggedCausalGraph(edges, 8, 0.05, ("Q_rad", "T_out", "u_Qh"))
    mu = {"T_out": [15.0] * 9, "Q_rad": [200.0] * 9, "u_Qh": [0.3] * 9}
    sd = {"T_out": [5.0] * 9, "Q_rad": [100.0] * 9, "u_Qh": [0.1] * 9}
    hist = {"T_out": [15.0] * 12, "Q_rad": [200.0] * 12, "u_Qh": [0.3] * 12}
    for (name, lag), v in values.items():
        hist[name][-1 - lag] = v
    return TemporalEvidence(graph, LagBaseline(mu, sd, 8), hist)


@pytest.mark.parametrize("values, supported", [
    ({("T_out", 8): 0.0}, False),
    ({("T_out", 8): 0.0, ("Q_rad", 2): 600.0}, True),
    ({}, False),
])
def test_history_majority(cold_scenario, values, supported):
    spec, ctx = cold_scenario.spec(), cold_scenario.context()
    sol = solve(spec, ctx)
    out = evaluate_hypothesis(HISTORY, sol.inputs[0], ctx, spec, sol, KG, _temporal(values))
    assert (out is not None) == supported
    if supported:
        assert out[1] == 0.82
        assert out[0].details == {"active": 2, "parents": 2, "fraction": 1.0}


# ----------------------------------------------------------------------------
# rendering and serialization


def test_rendering_is_byte_stable(suite_scenarios, suite_history):
    s = by_id(suite_scenarios, "cold-night")
    a, b = explain(s, suite_history), explain(s, suite_history)
    assert a.narrative.encode() == b.narrative.encode()
    assert render_narrative(a) == a.narrative
    assert dump_record(a) == dump_record(b)


def test_record_document_roundtrip(suite_scenarios, suite_history):
    rec = explain(by_id(suite_scenarios, "cold-night"), suite_history)
    doc = yaml.safe_load(dump_record(rec))
    assert doc["selected"] == "Safety" and doc["rank"] == 1
    assert tuple(statements_from_dict(doc)) == rec.statements
    assert doc["narrative"] == rec.narrative
    assert all(s.tag in ("current-state", "kkt", "counterfactual", "forecast", "kg", "history", "none")
               for s in rec.statements)


def test_suite_history_links_heating_to_outdoor_temperature(suite_history):
    assert isinstance(suite_history, TemporalFit)
    parents = {(e.source, e.lag) for e in suite_history.graph.edges if e.target == "u_Qh"}
    assert ("T_out", 8) in parents
