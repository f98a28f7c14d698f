"""Suite execution, ablation and robustness configurations, metric reports."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import yaml

from . import forensics as fx
from .hypotheses import ExplainConfig, TemporalEvidence, generate_explanation
from .kg import SignedKnowledgeGraph, perturb
from .metrics import faithfulness, ranking_metrics, rouge_l
from .pcmci import LagBaseline, LaggedCausalGraph, compute_baselines, fit_pcmci
from .scenarios import SUITE_TAU_MAX, Scenario, default_graph, simulate_history
from .solver import SolverConfig, solve

K_VALUES = (1, 3, 5)
FAILURE_MODES = ("missing-evidence", "threshold-sensitivity", "temporal-mismatch")


@dataclass(frozen=True)
class SuiteConfig:
    drop_kg: bool = False
    drop_pcmci: bool = False
    drop_kkt: bool = False
    kg_op: Optional[str] = None
    kg_fraction: float = 0.0
    kg_seed: int = 0
    threshold_scale: float = 1.0

    def __post_init__(self):
        if self.kg_op not in (None, "remove", "flip"):
            raise ValueError(f"unknown graph perturbation {self.kg_op!r}")
        if not 0.0 <= self.kg_fraction <= 1.0:
            raise ValueError("graph perturbation fraction must lie in [0, 1]")
        if not self.threshold_scale > 0:
            raise ValueError("threshold scale must be positive")

    def tag(self) -> str:
        parts = [ExplainConfig(self.drop_kkt, self.drop_kg, self.drop_pcmci).tag()]
        if self.kg_op is not None and self.kg_fraction > 0:
            parts.append(f"kg-{self.kg_op}-{self.kg_fraction:g}-seed{self.kg_seed}")
        if self.threshold_scale != 1.0:
            parts.append(f"tau-x{self.threshold_scale:g}")
        return "/".join(parts)

    def explain_config(self) -> ExplainConfig:
        return ExplainConfig(drop_kkt=self.drop_kkt, drop_kg=self.drop_kg, drop_pcmci=self.drop_pcmci)


def ablation_configs(base: SuiteConfig = SuiteConfig()) -> list:
    """Full configuration followed by one configuration per dropped source."""
    return [base, replace(base, drop_kg=True), replace(base, drop_pcmci=True), replace(base, drop_kkt=True)]


@dataclass(frozen=True)
class TemporalFit:
    graph: LaggedCausalGraph
    baseline: LagBaseline


def fit_suite_history(seed: int = 0, n: int = 1500, tau_max: int = SUITE_TAU_MAX, alpha: float = 0.05) -> TemporalFit:
    """Fit the lagged causal graph and baselines once for a whole suite."""
    table = simulate_history(n, seed)
    return TemporalFit(fit_pcmci(table, tau_max=tau_max, alpha=alpha), compute_baselines(table, tau_max))


@dataclass(frozen=True)
class ScenarioResult:
    id: str
    family: str
    selected: Optional[str]
    confidence: Optional[float]
    predicted: tuple
    truth: tuple
    metrics: dict
    degraded_mode: bool
    failure: Optional[str] = None
    note: str = ""

    @property
    def success(self) -> bool:
        return self.metrics.get("p_at_1", 0.0) == 1.0


@dataclass(frozen=True)
class MetricReport:
    config: str
    results: tuple
    aggregate: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "aggregate": {k: float(v) for k, v in self.aggregate.items()},
            "failures": {m: [r.id for r in self.results if r.failure == m] for m in FAILURE_MODES},
            "scenarios": [{"id": r.id, "family": r.family, "selected": r.selected, "confidence": r.confidence,
                           "predicted": list(r.predicted), "truth": list(r.truth),
                           "degraded_mode": r.degraded_mode, "failure": r.failure, "note": r.note,
                           "metrics": {k: float(v) for k, v in r.metrics.items()}} for r in self.results],
        }

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def table(self, sep: str = "\t") -> str:
        """Delimited per-scenario table with a closing aggregate row."""
        keys = metric_keys()
        lines = [sep.join(["scenario", "family", "selected", "failure"] + keys)]
        for r in self.results:
            lines.append(sep.join([r.id, r.family, r.selected or "-", r.failure or "-"]
                                  + [f"{r.metrics[k]:.4f}" for k in keys]))
        lines.append(sep.join(["mean", "-", "-", "-"] + [f"{self.aggregate[k]:.4f}" for k in keys]))
        return "\n".join(lines) + "\n"


def metric_keys() -> list:
    keys = ["rouge_l", "faithfulness"]
    for k in K_VALUES:
        keys += [f"p_at_{k}", f"r_at_{k}", f"f1_at_{k}", f"ndcg_at_{k}"]
    return keys + ["mrr"]


def score(predicted: Sequence[str], truth: Sequence[str], narrative: str, reference: str, statements) -> dict:
    out = {"rouge_l": rouge_l(narrative, reference) if reference else 0.0,
           "faithfulness": faithfulness(statements) if statements else 0.0}
    for k in K_VALUES:
        m = ranking_metrics(predicted, truth, k)
        out[f"p_at_{k}"] = m["precision"]
        out[f"r_at_{k}"] = m["recall"]
        out[f"f1_at_{k}"] = m["f1"]
        out[f"ndcg_at_{k}"] = m["ndcg"]
        out["mrr"] = m["mrr"]
    return {k: out[k] for k in metric_keys()}


def _failure_mode(rec, truth: Sequence[str], spec) -> str:
    """Exactly one primary category for a scenario whose top factor is wrong."""
    if rec is None or rec.selected is None or rec.unavailable:
        return "missing-evidence"
    top = rec.predicted_factors[0] if rec.predicted_factors else None
    ids = {c.id: c for c in spec.constraints}
    if top in ids and truth[0] in ids and ids[top].variable == ids[truth[0]].variable:
        return "threshold-sensitivity"
    return "temporal-mismatch"


def run_scenario(s: Scenario, config: SuiteConfig, kg: Optional[SignedKnowledgeGraph],
                 temporal: Optional[TemporalFit], thresholds: fx.Thresholds,
                 solver_config: Optional[SolverConfig] = None):
    """Solve and explain one scenario; returns ``(record, spec)``."""
    spec = s.spec()
    ctx = s.context()
    sol = solve(spec, ctx, solver_config)
    tc = None if temporal is None else TemporalEvidence(temporal.graph, temporal.baseline, s.history)
    rec = generate_explanation(sol.inputs[0], ctx, spec, sol, kg, tc, thresholds, config.explain_config(),
                               solver_config, scenario_ref=s.id)
    return rec, spec


def run_suite(scenarios: Sequence[Scenario], config: SuiteConfig = SuiteConfig(),
              temporal: Optional[TemporalFit] = None, kg: Optional[SignedKnowledgeGraph] = None,
              thresholds: Optional[fx.Thresholds] = None,
              solver_config: Optional[SolverConfig] = None) -> MetricReport:
    """Explain every scenario under ``config`` and score it against its annotation.

    Scenarios are processed in id order.  A scenario that raises is scored
    as a miss and logged as ``missing-evidence``; the suite always completes.
    Without an explicit ``kg`` each scenario uses its model's reference graph.
    """
    graphs = {}

    def graph_for(model):
        # one graph per model, perturbed once so every scenario sees the same edges
        if model not in graphs:
            g = kg if kg is not None else default_graph(model)
            if config.kg_op is not None and config.kg_fraction > 0:
                g = perturb(g, config.kg_op, config.kg_fraction, config.kg_seed)
            graphs[model] = g
        return graphs[model]

    th = (thresholds or fx.Thresholds()).scaled(config.threshold_scale)
    results = []
    for s in sorted(scenarios, key=lambda s: s.id):
        if s.truth is None:
            raise ValueError(f"scenario {s.id!r} has no ground-truth annotation")
        truth = s.truth.true_causal_factors
        try:
            rec, spec = run_scenario(s, config, graph_for(s.model), temporal, th, solver_config)
        except Exception as exc:  # noqa: BLE001 - one bad scenario must not abort the suite
            metrics = score((), truth, "", s.truth.reference_explanation_text, ())
            results.append(ScenarioResult(s.id, s.family, None, None, (), truth, metrics, True,
                                          "missing-evidence", f"{type(exc).__name__}: {exc}"))
            continue
        metrics = score(rec.predicted_factors, truth, rec.narrative, s.truth.reference_explanation_text,
                        rec.statements)
        failure = None if metrics["p_at_1"] == 1.0 else _failure_mode(rec, truth, spec)
        results.append(ScenarioResult(s.id, s.family, rec.selected.kind if rec.selected else None,
                                      rec.confidence, rec.predicted_factors, truth, metrics,
                                      rec.degraded_mode, failure))
    keys = metric_keys()
    agg = {k: float(np.mean([r.metrics[k] for r in results])) if results else 0.0 for k in keys}
    return MetricReport(config.tag(), tuple(results), agg)
