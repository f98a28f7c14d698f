"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line (also repeated in the pytest
terminal summary) before asserting.  Run on its own with::

    python3 -m pytest tests/test_acceptance.py -v
"""

from __future__ import annotations

import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import yaml
from scipy import stats

from oracles import (VAR_PLANTED, VAR_SELF, brute_force_binding, edge_set, independent_ar, planted_qp,
                     planted_var, qp_as_ocp)
from xmpc import forensics as fx
from xmpc.cli import main
from xmpc.evaluation import SuiteConfig, ablation_configs, run_suite
from xmpc.greenhouse import COMFORT_BANDS, INPUT_NAMES, STATE_NAMES
from xmpc.hypotheses import SECTIONS, ExplainConfig, TemporalEvidence, generate_explanation, render_narrative
from xmpc.pcmci import fit_pcmci, write_timeseries
from xmpc.scenarios import default_graph, dump_scenario, greenhouse_suite, simulate_history
from xmpc.solver import ALL, RelaxationDirective, SolverConfig, multiplier_sensitivity_check, resolve_relaxed, solve

pytestmark = pytest.mark.slow

N_QP = 200
N_SENS = 50
N_RUNS = 50


@pytest.fixture(scope="module")
def qp_suite():
    """Planted QPs with their solver solutions, solved once for criteria 1-3."""
    t0 = time.perf_counter()
    rows = []
    for seed in range(N_QP):
        qp = planted_qp(seed)
        spec, ctx = qp_as_ocp(qp)
        rows.append((qp, spec, ctx, solve(spec, ctx)))
    return rows, time.perf_counter() - t0


def test_criterion_1_active_set_oracle(qp_suite, verdict):
    rows, solve_time = qp_suite
    table = fx.ThresholdTable()
    t0 = time.perf_counter()
    agree = 0
    for qp, spec, _, sol in rows:
        _, _, binding = brute_force_binding(qp.G, qp.a, qp.A, qp.b)
        detected = frozenset(int(e.id[1:]) for e in fx.detect_active_set(sol, table, spec))
        agree += detected == binding
    elapsed = solve_time + time.perf_counter() - t0
    ok = agree == N_QP and elapsed < 30.0
    verdict("criterion 1 active-set oracle", ok, f"{agree}/{N_QP} agree with enumeration in {elapsed:.2f} s")
    assert ok


def test_criterion_2_counterfactual_soundness(qp_suite, verdict):
    rows, _ = qp_suite
    cfg = SolverConfig()
    tol = 10.0 * cfg.step_tolerance
    table = fx.ThresholdTable()
    violations, n_active, n_inactive = [], 0, 0
    for qp, spec, ctx, sol in rows:
        active = {e.id for e in fx.detect_active_set(sol, table, spec)}
        uncertain = {row[0] for row in fx.uncertain_entries(sol, table, spec)}
        for c in spec.constraints:
            relaxed = resolve_relaxed(spec, ctx, [RelaxationDirective(c.id, ALL, "remove")], cfg, sol.inputs)
            du = float(np.linalg.norm(relaxed.inputs - sol.inputs))
            if c.id in active:
                n_active += 1
                if not (du > tol or c.id in uncertain):
                    violations.append((c.id, du))
            else:
                n_inactive += 1
                if du > tol:
                    violations.append((c.id, du))
    ok = not violations
    verdict("criterion 2 counterfactual soundness", ok,
            f"{len(violations)} violations over {n_active} active and {n_inactive} inactive constraints")
    assert ok, violations[:5]


def test_criterion_3_sensitivity(qp_suite, verdict):
    rows, _ = qp_suite
    table = fx.ThresholdTable()
    errors = []
    for _, spec, ctx, sol in rows:
        for e in fx.detect_active_set(sol, table, spec):
            if len(errors) == N_SENS:
                break
            lam, dJ = multiplier_sensitivity_check(spec, ctx, e.id, 1e-4, stage=e.stage, nominal=sol)
            errors.append(abs(lam - dJ) / abs(lam))
        if len(errors) == N_SENS:
            break
    worst = max(errors)
    ok = len(errors) == N_SENS and worst < 1e-2
    verdict("criterion 3 sensitivity", ok, f"max relative error {worst:.2e} over {len(errors)} active constraints")
    assert ok


def test_criterion_4_pcmci_recovery(verdict):
    good, fit_times, fp_counts = 0, [], []
    for seed in range(N_RUNS):
        data = planted_var(seed)
        t0 = time.perf_counter()
        g = fit_pcmci(data, tau_max=12, alpha=0.05)
        fit_times.append(time.perf_counter() - t0)
        found = edge_set(g)
        recall = len(found & VAR_PLANTED) / len(VAR_PLANTED)
        fp = len(found - VAR_PLANTED - VAR_SELF)
        fp_counts.append(fp)
        good += recall == 1.0 and fp <= 1

    null_fp, null_tests = 0, 0
    for seed in range(N_RUNS):
        data = independent_ar(seed)
        true = {(v, v, 1) for v in data.variables}
        null_fp += len(edge_set(fit_pcmci(data, tau_max=12, alpha=0.05)) - true)
        null_tests += len(data.variables) ** 2 * 12 - len(true)
    # the observed count must not exceed the upper 99% binomial quantile at rate 0.05
    upper = int(stats.binom.ppf(0.995, null_tests, 0.05))
    ok = good >= 45 and max(fit_times) < 60.0 and null_fp <= upper
    verdict("criterion 4 pcmci recovery", ok,
            f"{good}/{N_RUNS} runs with recall 1 and <=1 false positive; slowest fit {max(fit_times):.2f} s; "
            f"null false positives {null_fp}/{null_tests} = {null_fp / null_tests:.4f} (99% bound {upper})")
    assert ok


def test_criterion_5_worked_example(cold_scenario, suite_history, verdict):
    s = cold_scenario
    spec, ctx = s.spec(), s.context()
    sol = solve(spec, ctx)
    rec = generate_explanation(sol.inputs[0], ctx, spec, sol, default_graph(s.model),
                               TemporalEvidence(suite_history.graph, suite_history.baseline, s.history),
                               fx.Thresholds(), ExplainConfig(), scenario_ref=s.id)
    lo, hi = COMFORT_BANDS["T"]
    T0 = ctx.measured_state[STATE_NAMES.index("T")]
    heat = float(sol.inputs[0, INPUT_NAMES.index("u_Qh")])
    # the counterfactual is recomputed here rather than read from the record
    relaxed = resolve_relaxed(spec, ctx, [RelaxationDirective("T_lower", ALL, "remove")], None, sol.inputs)
    relaxed_T = relaxed.states[:, STATE_NAMES.index("T")]
    dips = relaxed_T.min() < lo
    headings = all(f"## {h}" in rec.narrative for h in SECTIONS)
    checks = {
        "preemptive heating": heat > 0 and lo <= T0 <= hi,
        "counterfactual dips below band": bool(dips),
        "Safety at 0.92": rec.selected is not None and rec.selected.kind == "Safety" and rec.confidence == 0.92,
        "four headings": headings,
    }
    ok = all(checks.values())
    verdict("criterion 5 worked example", ok,
            f"u_Qh(0) = {heat:.4f} at T = {T0:.2f}; relaxed min T = {relaxed_T.min():.2f}; "
            f"selected {rec.selected.kind if rec.selected else None} at {rec.confidence}; "
            f"failed: {[k for k, v in checks.items() if not v] or 'none'}")
    assert ok


def test_criterion_6_calibration(verdict):
    cal = fx.calibrate_kkt_thresholds(fx.synthetic_multipliers(2000, seed=0))
    ok = cal.heldout_accuracy >= 0.96
    verdict("criterion 6 calibration", ok,
            f"tau = {cal.threshold:.3g}, held-out accuracy {cal.heldout_accuracy:.4f} on {cal.n_heldout} samples")
    assert ok


@pytest.fixture(scope="module")
def ablation_reports(suite_scenarios, suite_history):
    configs = ablation_configs() + [SuiteConfig(drop_kg=True, drop_pcmci=True, drop_kkt=True)]
    return {c.tag(): run_suite(suite_scenarios, c, suite_history) for c in configs}


def test_criterion_7_ablation(ablation_reports, suite_scenarios, verdict):
    p = {tag: r.aggregate["p_at_1"] for tag, r in ablation_reports.items()}
    full = p["full"]
    drops = {tag: full - v for tag, v in p.items() if tag != "full"}
    singles = {k: v for k, v in drops.items() if "+" not in k}
    combined = drops["drop-kkt+kg+pcmci"]
    ok = len(suite_scenarios) >= 20 and all(d > 0 for d in singles.values()) and combined >= 0.25 - 1e-9
    verdict("criterion 7 ablation", ok,
            f"full P@1 {full:.2f}; drops " + ", ".join(f"{k} -{v:.2f}" for k, v in drops.items()))
    assert ok


def test_criterion_8_robustness(ablation_reports, suite_scenarios, suite_history, verdict):
    full = ablation_reports["full"].aggregate["p_at_1"]
    kg = [run_suite(suite_scenarios, SuiteConfig(kg_op="remove", kg_fraction=0.2, kg_seed=s), suite_history)
          .aggregate["p_at_1"] for s in range(5)]
    th = {f: run_suite(suite_scenarios, SuiteConfig(threshold_scale=f), suite_history).aggregate["p_at_1"]
          for f in (0.5, 1.5)}
    kg_mean = full - float(np.mean(kg))
    kg_worst = full - min(kg)
    th_worst = full - min(th.values())
    bound = 0.15 + 1e-9
    ok = kg_mean <= bound and kg_worst <= bound and th_worst <= bound
    verdict("criterion 8 robustness", ok,
            f"KG removal 20%: mean drop {kg_mean:.3f}, worst seed {kg_worst:.3f}; "
            f"threshold x0.5/x1.5 drop {full - th[0.5]:.3f}/{full - th[1.5]:.3f}")
    assert ok


def _outputs(out: Path) -> dict:
    files = {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "manifest.yaml"}
    manifest = yaml.safe_load((out / "manifest.yaml").read_text())
    manifest.pop("out")
    manifest.pop("argv")
    return {"files": files, "manifest": manifest}


def test_criterion_9_determinism(tmp_path, cold_scenario, verdict, capsys):
    scen = tmp_path / "scenarios.yaml"
    extra = greenhouse_suite(0)[0]
    scen.write_text(dump_scenario(cold_scenario) + "---\n" + dump_scenario(extra))
    hist = tmp_path / "history.csv"
    write_timeseries(hist, simulate_history(1500, 0))
    assert main(["discover", str(hist), "--tau-max", "12", "--out", str(tmp_path / "disc")]) == 0
    cg = tmp_path / "disc" / "causal_graph.yaml"
    assert main(["explain", str(scen), "--kg", "builtin", "--causal-graph", str(cg),
                 "--out", str(tmp_path / "ex1")]) == 0
    assert main(["rerun", str(tmp_path / "ex1"), "--out", str(tmp_path / "ex2")]) == 0
    config = tmp_path / "eval.yaml"
    config.write_text("suite: greenhouse\nablation: [kg]\n")
    assert main(["eval", str(config), "--seed", "0", "--out", str(tmp_path / "ev1")]) == 0
    assert main(["rerun", str(tmp_path / "ev1" / "manifest.yaml"), "--out", str(tmp_path / "ev2")]) == 0
    capsys.readouterr()

    explain_same = _outputs(tmp_path / "ex1") == _outputs(tmp_path / "ex2")
    eval_same = _outputs(tmp_path / "ev1") == _outputs(tmp_path / "ev2")

    # the narrative must not depend on the interpreter's hash seed
    texts = []
    for hash_seed in ("1", "2"):
        env = dict(os.environ, PYTHONHASHSEED=hash_seed)
        out = tmp_path / f"demo{hash_seed}"
        subprocess.run([sys.executable, "-m", "xmpc.cli", "demo", "--out", str(out)], env=env, check=True,
                       capture_output=True)
        texts.append((out / "narrative.md").read_bytes())
    ex = yaml.safe_load((tmp_path / "ex1" / "explanations.yaml").read_text().split("---\n")[0])
    rec_text = (tmp_path / "ex1" / "narrative.md").read_bytes()
    narrative_same = texts[0] == texts[1] and len(texts[0]) > 0 and ex["selected"] == "Safety"
    ok = explain_same and eval_same and narrative_same and len(rec_text) > 0
    verdict("criterion 9 determinism", ok,
            f"explain rerun identical: {explain_same}; eval rerun identical: {eval_same}; "
            f"narrative identical across hash seeds: {narrative_same}")
    assert ok


def test_criterion_10_runtime(suite_scenarios, suite_history, verdict):
    kg = default_graph("greenhouse")
    times = []
    for s in suite_scenarios:
        t0 = time.perf_counter()
        spec, ctx = s.spec(), s.context()
        sol = solve(spec, ctx)
        rec = generate_explanation(sol.inputs[0], ctx, spec, sol, kg,
                                   TemporalEvidence(suite_history.graph, suite_history.baseline, s.history),
                                   fx.Thresholds(), ExplainConfig())
        render_narrative(rec)
        times.append(time.perf_counter() - t0)
    ok = spec.horizon == 16 and max(times) < 1.0
    verdict("criterion 10 runtime", ok,
            f"slowest of {len(times)} explanations {max(times):.3f} s, median {np.median(times):.3f} s at H = 16")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
