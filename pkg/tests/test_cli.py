import pytest
import yaml

from oracles import VAR_PLANTED, planted_var
from xmpc import forensics as fx
from xmpc.cli import EXIT_INPUT, EXIT_OK, InputError, main, parse_eval_config
from xmpc.pcmci import load_causal_graph, write_timeseries
from xmpc.scenarios import dump_scenario, simulate_history


@pytest.fixture(scope="module")
def discovered(tmp_path_factory):
    root = tmp_path_factory.mktemp("discover")
    write_timeseries(root / "history.csv", simulate_history(1500, 0))
    assert main(["discover", str(root / "history.csv"), "--tau-max", "12", "--out", str(root / "out")]) == EXIT_OK
    return root / "out"


@pytest.fixture
def scenario_file(tmp_path, cold_scenario):
    path = tmp_path / "scenario.yaml"
    path.write_text(dump_scenario(cold_scenario))
    return path


def test_discover_planted_var(tmp_path):
    write_timeseries(tmp_path / "var.csv", planted_var(0, 1000))
    assert main(["discover", str(tmp_path / "var.csv"), "--tau-max", "4", "--out", str(tmp_path / "o")]) == 0
    g = load_causal_graph(tmp_path / "o" / "causal_graph.yaml")
    assert VAR_PLANTED <= {(e.source, e.target, e.lag) for e in g.edges}
    assert (tmp_path / "o" / "baselines.yaml").exists()
    assert (tmp_path / "o" / "manifest.yaml").exists()


def test_discover_bad_header(tmp_path, capsys):
    (tmp_path / "bad.csv").write_text("timestamp,,b\n2024-01-01T00:00:00,1,2\n2024-01-01T00:15:00,1,2\n")
    assert main(["discover", str(tmp_path / "bad.csv"), "--out", str(tmp_path / "o")]) == EXIT_INPUT
    assert "column 2" in capsys.readouterr().err


def test_discover_missing_file(tmp_path):
    assert main(["discover", str(tmp_path / "none.csv"), "--out", str(tmp_path / "o")]) == EXIT_INPUT


def test_explain_cold_night(tmp_path, scenario_file, discovered, capsys):
    out = tmp_path / "exp"
    code = main(["explain", str(scenario_file), "--kg", "builtin",
                 "--causal-graph", str(discovered / "causal_graph.yaml"), "--out", str(out)])
    assert code == EXIT_OK
    assert "Safety" in capsys.readouterr().out
    text = (out / "narrative.md").read_text()
    assert text.count("\n## ") == 4
    doc = yaml.safe_load((out / "explanations.yaml").read_text())
    assert doc["selected"] == "Safety" and not doc["degraded_mode"]


def test_explain_requires_causal_graph(tmp_path, scenario_file, capsys):
    code = main(["explain", str(scenario_file), "--kg", "builtin", "--out", str(tmp_path / "o")])
    assert code == EXIT_INPUT
    assert "--degraded-ok" in capsys.readouterr().err


def test_explain_degraded_ok(tmp_path, scenario_file):
    out = tmp_path / "o"
    assert main(["explain", str(scenario_file), "--kg", "builtin", "--degraded-ok", "--out", str(out)]) == 0
    doc = yaml.safe_load((out / "explanations.yaml").read_text())
    assert doc["degraded_mode"] is True
    assert "pcmci" in doc["unavailable"]
    assert "evidence source unavailable: pcmci" in doc["evidence"]["uncertainty_flags"]
    assert "Lagged causal history is unavailable" in (out / "narrative.md").read_text()


def test_explain_horizon_too_long(tmp_path, scenario_file):
    code = main(["explain", str(scenario_file), "--degraded-ok", "--horizon", "40", "--out", str(tmp_path / "o")])
    assert code == EXIT_INPUT


def _multiplier_csv(path, n=2000):
    rows = ["multiplier,active"] + [f"{lam:.6e},{int(a)}" for lam, a in fx.synthetic_multipliers(n, seed=0)]
    path.write_text("\n".join(rows) + "\n")


def test_calibrate(tmp_path, capsys):
    _multiplier_csv(tmp_path / "lam.csv")
    assert main(["calibrate", str(tmp_path / "lam.csv"), "--out", str(tmp_path / "c")]) == EXIT_OK
    report = (tmp_path / "c" / "calibration_report.txt").read_text()
    acc = float(next(l for l in report.splitlines() if l.startswith("held-out accuracy")).split()[-1])
    assert acc >= 0.96
    th = fx.load_thresholds(tmp_path / "c" / "thresholds.params")
    assert th.kkt.provenance[fx.ANY] == "calibrated"


def test_calibrate_rejects_oversized_splits(tmp_path, capsys):
    _multiplier_csv(tmp_path / "lam.csv", 200)
    code = main(["calibrate", str(tmp_path / "lam.csv"), "--splits", "0.5", "0.4", "0.2",
                 "--out", str(tmp_path / "c")])
    assert code == EXIT_INPUT
    assert "splits" in capsys.readouterr().err


def test_calibrate_bad_column(tmp_path):
    (tmp_path / "lam.csv").write_text("multiplier,active\n1e-3,maybe\n")
    assert main(["calibrate", str(tmp_path / "lam.csv"), "--out", str(tmp_path / "c")]) == EXIT_INPUT


def test_parse_eval_config():
    plan = parse_eval_config({"suite": "greenhouse", "ablation": ["kg", "pcmci", "kkt"]}, 0)
    assert [c.tag() for c in plan.configs] == ["full", "drop-kg", "drop-pcmci", "drop-kkt"]
    sweep = parse_eval_config({"kg_sweep": {"op": "remove", "fractions": [0.1, 0.2, 0.3]}}, 7)
    assert [(c.kg_fraction, c.kg_seed) for c in sweep.configs] == [(0.1, 7), (0.2, 7), (0.3, 7)]
    assert len(parse_eval_config({}, 0).configs) == 1
    assert parse_eval_config({"threshold_scales": [0.5, 1.5]}, 0).configs[1].threshold_scale == 1.5


@pytest.mark.parametrize("doc", [[1, 2], {"suite": "boiler"}, {"ablation": ["weather"]}, {"colour": 1},
                                 {"kg_sweep": {"op": "remove"}}, {"kg_sweep": {"op": "melt", "fractions": [0.1]}}])
def test_parse_eval_config_errors(doc):
    with pytest.raises(InputError):
        parse_eval_config(doc, 0)


def test_eval_testbed_ablation(tmp_path, capsys):
    cfg = tmp_path / "suite.yaml"
    cfg.write_text(yaml.safe_dump({"suite": "thermal-zone", "ablation": ["kg", "pcmci", "kkt"]}))
    assert main(["eval", str(cfg), "--seed", "0", "--out", str(tmp_path / "e")]) == EXIT_OK
    reports = sorted(p.name for p in (tmp_path / "e").glob("report-*.yaml"))
    assert reports == ["report-drop-kg.yaml", "report-drop-kkt.yaml", "report-drop-pcmci.yaml", "report-full.yaml"]
    summary = (tmp_path / "e" / "summary.tsv").read_text().splitlines()
    assert len(summary) == 5


def test_eval_requires_seed(tmp_path):
    cfg = tmp_path / "suite.yaml"
    cfg.write_text("suite: thermal-zone\n")
    assert main(["eval", str(cfg), "--out", str(tmp_path / "e")]) == EXIT_INPUT


def test_demo_and_rerun(tmp_path, capsys):
    out = tmp_path / "demo"
    assert main(["demo", "--seed", "0", "--out", str(out)]) == EXIT_OK
    printed = capsys.readouterr().out
    assert "## Primary Reason" in printed and "u_Qh" in printed
    assert main(["rerun", str(out), "--out", str(tmp_path / "again")]) == EXIT_OK
    assert (tmp_path / "again" / "narrative.md").read_bytes() == (out / "narrative.md").read_bytes()


def test_rerun_detects_changed_input(tmp_path, scenario_file):
    out = tmp_path / "o"
    assert main(["explain", str(scenario_file), "--degraded-ok", "--out", str(out)]) == 0
    scenario_file.write_text(scenario_file.read_text().replace("cold-night-test", "edited"))
    assert main(["rerun", str(out)]) == EXIT_INPUT
    assert main(["rerun", str(tmp_path / "nowhere")]) == EXIT_INPUT


def test_version(capsys):
    assert main(["--version"]) == 0
    assert "xmpc" in capsys.readouterr().out
