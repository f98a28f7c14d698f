"""Command-line entry point.

Subcommands::

    xmpc discover DATA --out DIR [--tau-max 48] [--alpha 0.05]
    xmpc explain SCENARIO --out DIR [--kg FILE|builtin] [--causal-graph FILE]
                 [--baselines FILE] [--thresholds FILE] [--params FILE]
                 [--horizon H] [--degraded-ok]
    xmpc calibrate DATA --out DIR [--cost-trials FILE] [--splits A B C] [--seed N]
    xmpc eval CONFIG --seed N --out DIR
    xmpc demo --out DIR [--horizon H] [--seed N]
    xmpc rerun MANIFEST [--out DIR]

Every command writes ``manifest.yaml`` next to its outputs.  The manifest
records the argument vector, input digests, seeds and the tool version,
and ``xmpc rerun`` replays it.  Exit codes: 0 when every requested output
was written, 2 for malformed input, 1 for any other failure.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import yaml

from . import __version__
from . import forensics as fx
from .evaluation import SuiteConfig, TemporalFit, fit_suite_history, run_suite
from .greenhouse import load_params
from .hypotheses import ExplainConfig, TemporalEvidence, dump_record, generate_explanation, render_narrative
from .kg import GraphError, load_graph
from .pcmci import (DataError, compute_baselines, dump_baselines, dump_causal_graph, fit_pcmci,
                    load_baselines, load_causal_graph, read_timeseries)
from .scenarios import (ScenarioError, cold_night, default_graph, dump_scenario, greenhouse_suite,
                        scenario_from_dict, testbed_suite)
from .solver import solve

MANIFEST = "manifest.yaml"
EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    """Malformed or missing input; maps to exit code 2."""


# ----------------------------------------------------------------------------
# manifest


@dataclass
class RunManifest:
    command: str
    argv: list
    out: str
    inputs: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    version: str = __version__

    def to_dict(self) -> dict:
        return {"tool": "xmpc", "version": self.version, "command": self.command, "argv": list(self.argv),
                "out": self.out, "inputs": dict(sorted(self.inputs.items())), "seeds": dict(self.seeds),
                "outputs": sorted(self.outputs)}

    def write(self, out: Path) -> None:
        text = yaml.safe_dump(self.to_dict(), sort_keys=False)
        (out / MANIFEST).write_text(text, encoding="utf-8")


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _input(path: Optional[str], manifest: RunManifest, role: str) -> Optional[Path]:
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{role}: no such file {path!r}")
    manifest.inputs[role] = {"path": str(path), "sha256": _digest(p)}
    return p


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    stale = out / MANIFEST
    if stale.exists():
        stale.unlink()
    return out


def _write(out: Path, name: str, text: str, manifest: RunManifest) -> None:
    (out / name).write_text(text, encoding="utf-8")
    manifest.outputs.append(name)


# ----------------------------------------------------------------------------
# discover


def cmd_discover(args, manifest: RunManifest) -> int:
    src = _input(args.data, manifest, "data")
    if args.tau_max < 1:
        raise InputError("--tau-max must be >= 1")
    if not 0.0 < args.alpha < 1.0:
        raise InputError("--alpha must lie in (0, 1)")
    table = read_timeseries(src)
    if len(table) <= args.tau_max + 30:
        raise InputError(f"series of length {len(table)} is too short for tau_max = {args.tau_max}")
    out = _out_dir(args.out)
    graph = fit_pcmci(table, tau_max=args.tau_max, alpha=args.alpha)
    _write(out, "causal_graph.yaml", dump_causal_graph(graph), manifest)
    _write(out, "baselines.yaml", dump_baselines(compute_baselines(table, args.tau_max)), manifest)
    for note in table.warnings:
        print(f"warning: {note}", file=sys.stderr)
    print(f"{len(graph.edges)} lagged edges over {len(table.variables)} series -> {out}")
    manifest.write(out)
    return EXIT_OK


# ----------------------------------------------------------------------------
# explain


def _load_yaml_documents(path: Path) -> list:
    try:
        docs = [d for d in yaml.safe_load_all(path.read_text(encoding="utf-8")) if d is not None]
    except yaml.YAMLError as exc:
        raise InputError(f"{path}: not valid YAML: {exc}") from None
    if not docs:
        raise InputError(f"{path}: no scenario documents")
    return docs


def _truncate(scenario, horizon: Optional[int]):
    if horizon is None or horizon == scenario.horizon:
        return scenario
    if not 1 <= horizon <= scenario.horizon:
        raise InputError(f"--horizon {horizon} exceeds the {scenario.horizon}-step forecast of {scenario.id!r}")
    return replace(scenario, forecast=scenario.forecast[:horizon], horizon=horizon)


def cmd_explain(args, manifest: RunManifest) -> int:
    scen_path = _input(args.scenario, manifest, "scenario")
    params_path = _input(args.params, manifest, "params")
    params = load_params(params_path) if params_path else None
    scenarios = []
    for doc in _load_yaml_documents(scen_path):
        if not isinstance(doc, dict):
            raise InputError(f"{scen_path}: every document must be a mapping")
        scenarios.append(_truncate(scenario_from_dict(doc, params), args.horizon))

    if args.kg == "builtin":
        manifest.inputs["kg"] = {"path": "builtin"}
        kg_file = None
    else:
        kg_file = _input(args.kg, manifest, "kg")
    kg = load_graph(kg_file) if kg_file else None
    graph_path = _input(args.causal_graph, manifest, "causal_graph")
    temporal = None
    if graph_path is not None:
        base_arg = args.baselines or str(graph_path.parent / "baselines.yaml")
        base_path = _input(base_arg, manifest, "baselines")
        temporal = TemporalFit(load_causal_graph(graph_path), load_baselines(base_path))
    missing = [name for name, val in (("--kg", args.kg), ("--causal-graph", graph_path)) if val is None]
    if missing and not args.degraded_ok:
        raise InputError(f"missing {' and '.join(missing)}; pass --degraded-ok to explain without them")
    th_path = _input(args.thresholds, manifest, "thresholds")
    thresholds = fx.load_thresholds(th_path) if th_path else fx.Thresholds()

    out = _out_dir(args.out)
    records, narratives = [], []
    for s in scenarios:
        spec, ctx = s.spec(), s.context()
        g = default_graph(s.model) if args.kg == "builtin" else kg
        tc = None if temporal is None else TemporalEvidence(temporal.graph, temporal.baseline, s.history)
        sol = solve(spec, ctx)
        rec = generate_explanation(sol.inputs[0], ctx, spec, sol, g, tc, thresholds, ExplainConfig(),
                                   scenario_ref=s.id)
        records.append(dump_record(rec))
        narratives.append(f"# {s.id}\n\n{render_narrative(rec)}")
        kind = rec.selected.kind if rec.selected else "none"
        flag = " (degraded)" if rec.degraded_mode else ""
        print(f"{s.id}: {kind}{flag}")
    _write(out, "explanations.yaml", "---\n".join(records), manifest)
    _write(out, "narrative.md", "\n".join(narratives), manifest)
    manifest.write(out)
    return EXIT_OK


# ----------------------------------------------------------------------------
# calibrate


def _read_csv(path: Path, required: Sequence[str]) -> pd.DataFrame:
    try:
        df = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise InputError(f"{path}: cannot parse: {exc}") from None
    for col in required:
        if col not in df.columns:
            raise InputError(f"{path}: missing column {col!r}")
    return df


def _bool_column(df: pd.DataFrame, col: str, path: Path) -> np.ndarray:
    raw = df[col].astype(str).str.strip().str.lower()
    mapping = {"1": True, "true": True, "yes": True, "0": False, "false": False, "no": False}
    bad = ~raw.isin(mapping)
    if bad.any():
        raise InputError(f"{path}: column {col!r} has non-boolean entry {df[col][bad].iloc[0]!r}")
    return raw.map(mapping).to_numpy(dtype=bool)


def cmd_calibrate(args, manifest: RunManifest) -> int:
    data = _input(args.data, manifest, "data")
    trials_path = _input(args.cost_trials, manifest, "cost_trials")
    fractions = tuple(args.splits)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or sum(fractions) > 1.0 + 1e-12:
        raise InputError(f"--splits must be three non-negative fractions summing to <= 1, got {list(fractions)}")
    manifest.seeds["split"] = args.seed
    df = _read_csv(data, ("multiplier", "active"))
    lam = pd.to_numeric(df["multiplier"], errors="coerce")
    if lam.isna().any():
        raise InputError(f"{data}: column 'multiplier' has non-numeric entries")
    active = _bool_column(df, "active", data)
    keys = df["key"].astype(str).to_numpy() if "key" in df.columns else np.full(len(df), fx.ANY)

    table = fx.ThresholdTable()
    reports = []
    for key in sorted(set(keys)):
        sel = keys == key
        samples = list(zip(lam.to_numpy()[sel], active[sel]))
        try:
            cal = fx.calibrate_kkt_thresholds(samples, fractions, args.seed)
        except ValueError as exc:
            raise InputError(f"key {key!r}: {exc}") from None
        table = table.with_entry(key, cal.threshold, "calibrated")
        reports.append(cal.report(key))
    if trials_path is not None:
        tdf = _read_csv(trials_path, ("mean_stage_cost", "delta_J"))
        trials = [fx.CostTrial(float(a), float(b)) for a, b in zip(tdf["mean_stage_cost"], tdf["delta_J"])]
        try:
            cost = fx.calibrate_cost_thresholds(trials)
        except ValueError as exc:
            raise InputError(str(exc)) from None
        reports.append(f"tau_cost   {cost.tau_cost:.4g}\nepsilon_J  {cost.epsilon_J:.4g}\n"
                       f"trials     {len(trials)}\n")
    else:
        cost = fx.CostThresholds()
        reports.append("cost thresholds: defaults (no trials supplied)\n")
    out = _out_dir(args.out)
    fx.save_thresholds(out / "thresholds.params", fx.Thresholds(table, cost))
    manifest.outputs.append("thresholds.params")
    report = "\n".join(reports)
    _write(out, "calibration_report.txt", report, manifest)
    print(report, end="")
    manifest.write(out)
    return EXIT_OK


# ----------------------------------------------------------------------------
# eval


@dataclass(frozen=True)
class EvalPlan:
    suite: str
    horizon: Optional[int]
    configs: tuple
    thresholds: Optional[str]


SUITES = ("greenhouse", "thermal-zone", "reactor-chain")


def parse_eval_config(doc, seed: int) -> EvalPlan:
    """Suite configuration document -> list of configuration cells.

    Keys: ``suite``; ``horizon``; ``ablation`` (list drawn from kg, pcmci,
    kkt: the full configuration plus one cell per listed drop);
    ``kg_sweep`` (``op``, ``fractions``, optional ``seeds``);
    ``threshold_scales``; ``thresholds`` (file path).  Without any sweep
    the single full configuration is run.
    """
    if not isinstance(doc, dict):
        raise InputError("suite configuration must be a mapping")
    unknown = sorted(set(doc) - {"suite", "horizon", "ablation", "kg_sweep", "threshold_scales", "thresholds"})
    if unknown:
        raise InputError(f"unknown suite configuration keys: {unknown}")
    suite = str(doc.get("suite", "greenhouse"))
    if suite not in SUITES:
        raise InputError(f"unknown suite {suite!r}; expected one of {list(SUITES)}")
    horizon = doc.get("horizon")
    configs = []
    try:
        if "ablation" in doc:
            drops = [str(d) for d in doc["ablation"] or []]
            bad = sorted(set(drops) - {"kg", "pcmci", "kkt"})
            if bad:
                raise InputError(f"unknown ablation source(s) {bad}")
            configs.append(SuiteConfig())
            for d in ("kg", "pcmci", "kkt"):
                if d in drops:
                    configs.append(SuiteConfig(**{f"drop_{d}": True}))
        if "kg_sweep" in doc:
            sw = doc["kg_sweep"]
            seeds = [int(s) for s in sw.get("seeds", [seed])]
            for frac in sw["fractions"]:
                for s in seeds:
                    configs.append(SuiteConfig(kg_op=str(sw.get("op", "remove")), kg_fraction=float(frac), kg_seed=s))
        for scale in doc.get("threshold_scales") or []:
            configs.append(SuiteConfig(threshold_scale=float(scale)))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"malformed suite configuration: {exc}") from None
    if not configs:
        configs.append(SuiteConfig())
    return EvalPlan(suite, None if horizon is None else int(horizon), tuple(configs), doc.get("thresholds"))


def _report_name(tag: str) -> str:
    return "report-" + tag.replace("/", "_").replace("+", "-")


def cmd_eval(args, manifest: RunManifest) -> int:
    cfg_path = _input(args.config, manifest, "config")
    try:
        doc = yaml.safe_load(cfg_path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise InputError(f"{cfg_path}: not valid YAML: {exc}") from None
    plan = parse_eval_config(doc, args.seed)
    manifest.seeds["suite"] = args.seed
    th = fx.Thresholds()
    if plan.thresholds:
        th = fx.load_thresholds(_input(str(plan.thresholds), manifest, "thresholds"))
    if plan.suite == "greenhouse":
        scenarios = greenhouse_suite(args.seed, plan.horizon or 16)
        temporal = fit_suite_history(args.seed)
    else:
        scenarios = testbed_suite(plan.suite, args.seed, plan.horizon or 12)
        temporal = None
    out = _out_dir(args.out)
    summary = ["config\tp_at_1\tmrr\tndcg_at_3\tfaithfulness\trouge_l\tfailures"]
    failed = []
    for config in plan.configs:
        try:
            report = run_suite(scenarios, config, temporal, thresholds=th)
        except Exception as exc:  # noqa: BLE001 - a failed cell is reported, the others still run
            failed.append(f"{config.tag()}: {type(exc).__name__}: {exc}")
            continue
        name = _report_name(report.config)
        _write(out, name + ".yaml", report.dump(), manifest)
        _write(out, name + ".tsv", report.table(), manifest)
        a = report.aggregate
        misses = sum(1 for r in report.results if r.failure)
        summary.append(f"{report.config}\t{a['p_at_1']:.4f}\t{a['mrr']:.4f}\t{a['ndcg_at_3']:.4f}"
                       f"\t{a['faithfulness']:.4f}\t{a['rouge_l']:.4f}\t{misses}")
    _write(out, "summary.tsv", "\n".join(summary) + "\n", manifest)
    print("\n".join(summary))
    manifest.write(out)
    for line in failed:
        print(f"error: {line}", file=sys.stderr)
    return EXIT_FAIL if failed else EXIT_OK


# ----------------------------------------------------------------------------
# demo


def cmd_demo(args, manifest: RunManifest) -> int:
    manifest.seeds["scenario"] = args.seed
    H = args.horizon or 16
    s = cold_night("cold-night-demo", np.random.default_rng([args.seed, 0, 0]), H)
    temporal = fit_suite_history(args.seed)
    spec, ctx = s.spec(), s.context()
    sol = solve(spec, ctx)
    rec = generate_explanation(sol.inputs[0], ctx, spec, sol, default_graph(s.model),
                               TemporalEvidence(temporal.graph, temporal.baseline, s.history),
                               fx.Thresholds(), ExplainConfig(), scenario_ref=s.id)
    out = _out_dir(args.out)
    _write(out, "scenario.yaml", dump_scenario(s), manifest)
    _write(out, "explanation.yaml", dump_record(rec), manifest)
    text = render_narrative(rec)
    _write(out, "narrative.md", text, manifest)
    print(text, end="")
    manifest.write(out)
    return EXIT_OK


# ----------------------------------------------------------------------------
# rerun


def cmd_rerun(args, manifest: RunManifest) -> int:
    path = Path(args.manifest)
    if path.is_dir():
        path = path / MANIFEST
    if not path.is_file():
        raise InputError(f"no manifest at {args.manifest!r}")
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
        argv = [str(a) for a in doc["argv"]]
    except (yaml.YAMLError, KeyError, TypeError) as exc:
        raise InputError(f"{path}: malformed manifest: {exc}") from None
    if doc.get("version") != __version__:
        print(f"warning: manifest written by version {doc.get('version')}, running {__version__}",
              file=sys.stderr)
    for role, info in (doc.get("inputs") or {}).items():
        p = info.get("path")
        if p and p != "builtin" and info.get("sha256") and Path(p).is_file() and _digest(Path(p)) != info["sha256"]:
            raise InputError(f"input {role} ({p}) changed since the recorded run")
    if args.out is not None:
        argv = _replace_out(argv, args.out)
    return main(argv)


def _replace_out(argv: list, out: str) -> list:
    argv = list(argv)
    for i, a in enumerate(argv):
        if a == "--out" and i + 1 < len(argv):
            argv[i + 1] = out
            return argv
        if a.startswith("--out="):
            argv[i] = f"--out={out}"
            return argv
    return argv + ["--out", out]


# ----------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xmpc", description="Explainable MPC toolkit")
    p.add_argument("--version", action="version", version=f"xmpc {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("discover", help="fit a lagged causal graph and baselines from a time-series file")
    d.add_argument("data")
    d.add_argument("--tau-max", type=int, default=48)
    d.add_argument("--alpha", type=float, default=0.05)
    d.add_argument("--out", required=True)

    e = sub.add_parser("explain", help="solve and explain every decision in a scenario file")
    e.add_argument("scenario")
    e.add_argument("--params", help="greenhouse parameter file")
    e.add_argument("--kg", help="signed knowledge graph file, or 'builtin' for the model's reference graph")
    e.add_argument("--causal-graph", help="lagged causal graph from 'discover'")
    e.add_argument("--baselines", help="lag baselines (default: baselines.yaml next to the causal graph)")
    e.add_argument("--thresholds", help="threshold parameter file from 'calibrate'")
    e.add_argument("--horizon", type=int)
    e.add_argument("--degraded-ok", action="store_true",
                   help="explain even when the knowledge graph or causal graph is missing")
    e.add_argument("--out", required=True)

    c = sub.add_parser("calibrate", help="calibrate multiplier and cost thresholds")
    c.add_argument("data", help="CSV with columns multiplier, active and optionally key")
    c.add_argument("--cost-trials", help="CSV with columns mean_stage_cost, delta_J")
    c.add_argument("--splits", type=float, nargs=3, default=(0.125, 0.125, 0.75),
                   metavar=("CAL", "HELDOUT", "REST"))
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)

    v = sub.add_parser("eval", help="run a scenario suite under one or more configurations")
    v.add_argument("config", help="suite configuration YAML")
    v.add_argument("--seed", type=int, required=True)
    v.add_argument("--out", required=True)

    m = sub.add_parser("demo", help="explain the cold-night heating decision end to end")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--horizon", type=int)
    m.add_argument("--out", required=True)

    r = sub.add_parser("rerun", help="replay a run from its manifest")
    r.add_argument("manifest", help="manifest file or output directory")
    r.add_argument("--out", help="write to this directory instead of the recorded one")
    return p


COMMANDS = {"discover": cmd_discover, "explain": cmd_explain, "calibrate": cmd_calibrate,
            "eval": cmd_eval, "demo": cmd_demo, "rerun": cmd_rerun}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    manifest = RunManifest(args.command, argv, str(getattr(args, "out", "") or ""))
    try:
        return COMMANDS[args.command](args, manifest)
    except (InputError, DataError, ScenarioError, GraphError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
