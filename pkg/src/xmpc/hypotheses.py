"""Ordered hypothesis evaluation and explanation records.

Five hypotheses are tried in a fixed order and the first supported one is
selected.  Evidence comes from three optional sources: KKT multipliers of the
nominal solve, the signed knowledge graph, and a lagged causal graph with
baselines.  Counterfactual re-solves and rollouts are always available.

Each narrative sentence carries a tag naming what it rests on:
``current-state``, ``kkt``, ``counterfactual``, ``forecast``, ``kg``,
``history`` or ``none``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import yaml

from . import forensics as fx
from .kg import MINUS, PLUS, CausalChain, SignedKnowledgeGraph, backward_trace, forward_trace
from .ocp import HARD, OPTIMAL, DecisionContext, OcpSolution, OcpSpec, constraint_values, rollout, trajectory_cost
from .pcmci import LagBaseline, LaggedCausalGraph, deviation_flags, query_parents
from .solver import SolverConfig


@dataclass(frozen=True)
class Hypothesis:
    kind: str
    rank: int


SAFETY = Hypothesis("Safety", 1)
OPTIMIZATION = Hypothesis("Optimization", 2)
PREDICTION = Hypothesis("Prediction", 3)
ECONOMICS = Hypothesis("Economics", 4)
HISTORY = Hypothesis("History", 5)
HYPOTHESES = (SAFETY, OPTIMIZATION, PREDICTION, ECONOMICS, HISTORY)
_BY_KIND = {h.kind: h for h in HYPOTHESES}

CONFIDENCE = {"safety-hard": 0.95, "safety-soft": 0.92, "prediction": 0.90,
              "optimization": 0.88, "economics": 0.85, "history": 0.82}
MIN_CONFIDENCE = 0.5

TAGS = ("current-state", "kkt", "counterfactual", "forecast", "kg", "history", "none")
SECTIONS = ("Primary Reason", "Mathematical Evidence", "Predictive Justification",
            "Physical & Historical Context")

PERTURBED_Z = 0.5


@dataclass(frozen=True)
class TemporalEvidence:
    """Lagged causal graph, its baselines, and the recent history window.

    ``history[var]`` ends at the decision instant (last entry is lag 0).
    """

    graph: LaggedCausalGraph
    baseline: LagBaseline
    history: Mapping


@dataclass(frozen=True)
class ExplainConfig:
    drop_kkt: bool = False
    drop_kg: bool = False
    drop_pcmci: bool = False
    resolve_budget: int = 3
    u_tol: float = 1e-6
    alternative_step: float = 0.1
    infeasible_fraction: float = 0.7
    saving_fraction: float = 0.05
    history_fraction: float = 0.5
    z_threshold: float = 2.0
    max_depth: int = 4

    def tag(self) -> str:
        dropped = [n for n, on in (("kkt", self.drop_kkt), ("kg", self.drop_kg), ("pcmci", self.drop_pcmci)) if on]
        return "full" if not dropped else "drop-" + "+".join(dropped)


@dataclass(frozen=True)
class KKTEvidence:
    active: tuple
    primary: tuple

    @property
    def primary_multiplier(self) -> float:
        for e in self.active:
            if (e.id, e.stage) == self.primary:
                return e.multiplier
        return float("nan")


@dataclass(frozen=True)
class EvidenceBundle:
    kkt: Optional[KKTEvidence] = None
    counterfactual: Optional[fx.CounterfactualResult] = None
    pcmci: tuple = ()
    kg_chains: tuple = ()
    uncertainty_flags: tuple = ()
    types: tuple = ()
    details: Mapping = field(default_factory=dict)

    def populated(self) -> bool:
        return bool(self.kkt or self.counterfactual or self.pcmci or self.kg_chains or self.details)


@dataclass(frozen=True)
class ObservedEffect:
    input: str
    delta_u: float
    state: str
    predicted_sign: str
    realized_delta: float

    @property
    def consistent(self) -> bool:
        if self.predicted_sign not in (PLUS, MINUS) or self.realized_delta == 0.0:
            return True
        return (self.realized_delta > 0) == (self.predicted_sign == PLUS)


@dataclass(frozen=True)
class Statement:
    section: str
    tag: str
    text: str


@dataclass(frozen=True)
class ExplanationRecord:
    selected: Optional[Hypothesis]
    confidence: Optional[float]
    evidence: EvidenceBundle
    supporting_context: tuple
    observed_effects: tuple
    narrative: str
    scenario_ref: str
    degraded_mode: bool
    predicted_factors: tuple = ()
    unavailable: tuple = ()
    action: Mapping = field(default_factory=dict)
    state: Mapping = field(default_factory=dict)
    forecast_summary: tuple = ()
    statements: tuple = ()
    timestamp: str = ""


# ----------------------------------------------------------------------------
# shared per-decision context


def _fmt(v) -> str:
    v = float(v)
    if not np.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    s = f"{v:.4g}"
    return "0" if s in ("-0", "0") else s


def _sgn(v) -> int:
    return 1 if v > 0 else (-1 if v < 0 else 0)


def _sign_int(s: str) -> int:
    return {PLUS: 1, MINUS: -1}.get(s, 0)


class _Decision:
    """Quantities shared by every hypothesis at one decision instant."""

    def __init__(self, u, ctx, spec, sol, g_kg, g_c, thresholds, cfg, solver_cfg):
        self.u = np.asarray(u, dtype=float).reshape(spec.input_dim)
        self.ctx, self.spec, self.sol = ctx, spec, sol
        self.th = thresholds or fx.Thresholds()
        self.cfg = cfg or ExplainConfig()
        self.solver_cfg = solver_cfg
        self.kg = None if self.cfg.drop_kg else g_kg
        self.tc = None if self.cfg.drop_pcmci else g_c
        self.kkt_ok = (not self.cfg.drop_kkt) and sol.status == OPTIMAL
        self.unavailable = []
        if not self.kkt_ok:
            self.unavailable.append("kkt" if self.cfg.drop_kkt or sol.status == OPTIMAL else f"kkt ({sol.status})")
        if self.kg is None:
            self.unavailable.append("kg")
        if self.tc is None:
            self.unavailable.append("pcmci")
        F = ctx.disturbance_forecast
        self.forecast = F
        self.mean_forecast = dict(zip(spec.disturbance_names, F.mean(axis=0)))
        self.values = dict(zip(spec.state_names, ctx.measured_state))
        self.values.update(self.mean_forecast)
        self.neutral = np.asarray(spec.input_neutral, dtype=float)
        self.actuated = [spec.input_names[j] for j in range(spec.input_dim)
                         if abs(self.u[j] - self.neutral[j]) > self.cfg.u_tol]
        self.neutral_states = rollout(spec, ctx.measured_state, np.tile(self.neutral, (spec.horizon, 1)), F)
        self.z = self._zscores()
        self.flags = self._flags()

    def _zscores(self) -> dict:
        out = {}
        if self.kg is None:
            return out
        for name, node in self.kg.nodes.items():
            if node.role == "disturbance" and name in self.mean_forecast and node.nominal is not None:
                scale = node.scale if node.scale else 1.0
                out[name] = float((self.mean_forecast[name] - node.nominal) / scale)
        return out

    def _flags(self) -> list:
        if self.tc is None:
            return []
        parents = []
        for name in self.actuated:
            if name in self.tc.graph.variables:
                parents.extend((src, lag) for src, lag, _ in query_parents(self.tc.graph, name))
        seen, uniq = set(), []
        for p in parents:
            if p not in seen:
                seen.add(p)
                uniq.append(p)
        try:
            return deviation_flags(self.tc.baseline, self.tc.history, uniq, self.cfg.z_threshold)
        except (KeyError, ValueError):
            return []

    # -- knowledge-graph helpers -------------------------------------------

    def perturbed(self) -> list:
        return sorted((d for d, z in self.z.items() if abs(z) >= PERTURBED_Z), key=lambda d: (-abs(self.z[d]), d))

    def push(self, variable: Optional[str], direction: int) -> dict:
        """Strength with which each perturbed disturbance pushes ``variable`` in ``direction``.

        A chain contributes ``|z| / length``, so direct mechanisms outweigh
        long detours through slow states.
        """
        if self.kg is None or variable is None or variable not in self.kg.nodes or direction == 0:
            return {}
        hits = {}
        for ch in backward_trace(self.kg, variable, self.cfg.max_depth, self.values):
            d = ch.source
            if d not in self.z or abs(self.z[d]) < PERTURBED_Z:
                continue
            if _sign_int(ch.composite_sign) * _sgn(self.z[d]) == direction:
                hits[d] = max(hits.get(d, 0.0), abs(self.z[d]) / (len(ch.path) - 1))
        return hits

    def drivers(self, variable: Optional[str], direction: int) -> list:
        """Disturbances pushing ``variable`` in ``direction``; flagged lagged parents first."""
        hits = self.push(variable, direction)
        order = sorted(hits, key=lambda d: (-hits[d], d))
        flagged = [f.source for f in self.flags if f.active]
        return [d for d in order if d in flagged] + [d for d in order if d not in flagged]

    def priority(self) -> list:
        """Soft constraints threatened by the forecast, most strongly first."""
        if self.kg is None:
            return []
        score = {}
        for pos, c in enumerate(self.spec.soft_constraints):
            hits = self.push(c.variable, -1 if c.sense == "lower" else 1)
            if hits:
                score[c.id] = (-max(hits.values()), pos)
        return sorted(score, key=lambda cid: score[cid])

    def mechanism(self, variable: str, direction: int) -> list:
        """Chains from actuated inputs that move ``variable`` in ``direction``."""
        if self.kg is None or variable not in self.kg.nodes:
            return []
        srcs = [a for a in self.actuated if a in self.kg.nodes]
        if not srcs:
            return []
        out = []
        for ch in forward_trace(self.kg, srcs, self.cfg.max_depth, self.values):
            if ch.target != variable:
                continue
            j = self.spec.input_names.index(ch.source)
            if _sign_int(ch.composite_sign) * _sgn(self.u[j] - self.neutral[j]) == direction:
                out.append(ch)
        return out


def _direction(c) -> int:
    """+1 when the constraint protects against the variable rising."""
    return -1 if c.sense == "lower" else 1


def _violations(spec, states, inputs, forecast, c, tau_cost):
    vals = constraint_values(spec, c, states, inputs, forecast)
    tol = fx.HARD_VIOLATION_TOL if c.kind == HARD else tau_cost
    return [k for k in sorted(vals) if vals[k] > tol]


# ----------------------------------------------------------------------------
# individual hypotheses


def _safety(dc: _Decision):
    spec, flags = dc.spec, []
    costs = dc.th.cost
    if dc.kkt_ok:
        active = [e for e in fx.detect_active_set(dc.sol, dc.th.kkt, spec)]
        for cid, k, lam, tau in fx.uncertain_entries(dc.sol, dc.th.kkt, spec):
            flags.append(f"uncertain multiplier {cid}[{k}] = {_fmt(lam)} near threshold {_fmt(tau)}")
        if active:
            cid, k = fx.primary_driver(active)
            try:
                cf = fx.counterfactual(spec, dc.ctx, dc.sol, cid, dc.solver_cfg, costs, dc.cfg.u_tol)
            except RuntimeError as exc:
                cf = None
                flags.append(f"counterfactual for {cid} failed: {exc}")
            if cf is not None and cf.u_changed and cf.violation_found:
                c = spec.constraint(cid)
                chains = tuple(dc.mechanism(c.variable, -_direction(c))) if c.variable else ()
                ev = EvidenceBundle(KKTEvidence(tuple(active), (cid, k)), cf, kg_chains=chains,
                                    uncertainty_flags=tuple(flags), types=("KKT", "CFT"),
                                    details={"constraint": cid, "variable": c.variable, "stage": k,
                                             "path": "hard"})
                return ev, CONFIDENCE["safety-hard"], flags
    else:
        flags.append("multiplier evidence unavailable; safety judged by counterfactuals only")
    if spec.soft_constraints:
        ident = fx.identify_soft_constraint(spec, dc.ctx, dc.solver_cfg, dc.sol, costs, dc.priority(),
                                            dc.cfg.resolve_budget, dc.cfg.u_tol)
        flags.extend(ident.warnings)
        if ident.constraint is not None:
            c = spec.constraint(ident.constraint)
            chains = tuple(dc.mechanism(c.variable, -_direction(c))) if c.variable else ()
            ev = EvidenceBundle(None, ident.result, kg_chains=chains, uncertainty_flags=tuple(flags),
                                types=("CFT",), details={"constraint": c.id, "variable": c.variable,
                                                         "path": "soft", "tried": list(ident.tried)})
            return ev, CONFIDENCE["safety-soft"], flags
    return None, None, flags


def _optimization(dc: _Decision):
    spec = dc.spec
    lo, hi = spec.input_bounds[:, 0], spec.input_bounds[:, 1]
    n_total = n_inf = 0
    counts = {}
    for j in range(spec.input_dim):
        span = hi[j] - lo[j]
        step = dc.cfg.alternative_step * (span if np.isfinite(span) else max(abs(dc.u[j]), 1.0))
        for s in (-1.0, 1.0):
            alt = dc.u[j] + s * step
            if alt < lo[j] - 1e-12 or alt > hi[j] + 1e-12:
                continue
            n_total += 1
            U = np.array(dc.sol.inputs, dtype=float)
            U[0] = dc.u
            U[0, j] = alt
            X = rollout(spec, dc.ctx.measured_state, U, dc.forecast)
            bad = [c.id for c in spec.hard_constraints if _violations(spec, X, U, dc.forecast, c, 0.0)]
            if bad:
                n_inf += 1
                for cid in bad:
                    counts[cid] = counts.get(cid, 0) + 1
    if n_total == 0:
        return None, None, ["no admissible alternative actions"]
    frac = n_inf / n_total
    if frac > dc.cfg.infeasible_fraction:
        order = [c.id for c in spec.hard_constraints]
        cid = max(counts, key=lambda k: (counts[k], -order.index(k)))
        return EvidenceBundle(types=("CFT",), details={"constraint": cid, "infeasible": n_inf,
                                                       "alternatives": n_total, "fraction": frac}), \
            CONFIDENCE["optimization"], []
    return None, None, []


def _prediction(dc: _Decision):
    if dc.kg is None:
        return None, None, ["prediction skipped: knowledge graph unavailable"]
    if not dc.actuated:
        return None, None, []
    spec, F = dc.spec, dc.forecast
    N = np.tile(dc.neutral, (spec.horizon, 1))
    tau = dc.th.cost.tau_cost
    cands = []
    for pos, c in enumerate(spec.constraints):
        cf_bad = _violations(spec, dc.neutral_states, N, F, c, tau)
        if cf_bad and not _violations(spec, dc.sol.states, dc.sol.inputs, F, c, tau):
            cands.append((cf_bad[0], pos, c))
    for k, _, c in sorted(cands, key=lambda t: (t[0], t[1])):
        chains = dc.mechanism(c.variable, -_direction(c)) if c.variable else []
        if chains:
            col = dc.neutral_states[:, spec.state_names.index(c.variable)]
            extreme = float(col.min() if c.sense == "lower" else col.max())
            ev = EvidenceBundle(kg_chains=tuple(chains), types=("PRED",),
                                details={"constraint": c.id, "variable": c.variable, "stage": int(k),
                                         "extreme": extreme})
            return ev, CONFIDENCE["prediction"], []
    return None, None, []


def _economics(dc: _Decision):
    spec = dc.spec
    N = np.tile(dc.neutral, (spec.horizon, 1))
    j_base = trajectory_cost(spec, dc.neutral_states, N, dc.forecast)
    j_star = float(dc.sol.total_cost)
    saving = (j_base - j_star) / max(abs(j_base), 1e-12)
    if saving > dc.cfg.saving_fraction:
        ev = EvidenceBundle(types=("ECON",), details={"J_base": j_base, "J_star": j_star, "saving": saving})
        return ev, CONFIDENCE["economics"], []
    return None, None, []


def _history(dc: _Decision):
    if dc.tc is None:
        return None, None, ["history skipped: lagged causal graph unavailable"]
    if not dc.flags:
        return None, None, []
    n_act = sum(f.active for f in dc.flags)
    frac = n_act / len(dc.flags)
    if frac > dc.cfg.history_fraction:
        ev = EvidenceBundle(pcmci=tuple(dc.flags), types=("PCMCI",),
                            details={"active": n_act, "parents": len(dc.flags), "fraction": frac})
        return ev, CONFIDENCE["history"], []
    return None, None, []


_EVALUATORS = {"Safety": _safety, "Optimization": _optimization, "Prediction": _prediction,
               "Economics": _economics, "History": _history}


def evaluate_hypothesis(h: Hypothesis, u, ctx: DecisionContext, spec: OcpSpec, sol: OcpSolution,
                        g_kg: Optional[SignedKnowledgeGraph], g_c: Optional[TemporalEvidence],
                        thresholds: Optional[fx.Thresholds] = None, config: Optional[ExplainConfig] = None,
                        solver_config: Optional[SolverConfig] = None):
    """Evidence and confidence for ``h``, or ``None`` when unsupported."""
    dc = _Decision(u, ctx, spec, sol, g_kg, g_c, thresholds, config, solver_config)
    ev, conf, _ = _EVALUATORS[h.kind](dc)
    if ev is None or conf < MIN_CONFIDENCE:
        return None
    return ev, conf


# ----------------------------------------------------------------------------
# explanation assembly


def _deeper_context(dc: _Decision, ev: Optional[EvidenceBundle]) -> tuple:
    """Graph chains that start at a perturbed disturbance or an actuated input."""
    if dc.kg is None:
        return ()
    movers = [n for n in list(dc.perturbed()) + list(dc.actuated) if n in dc.kg.nodes]
    chains = set(ev.kg_chains if ev else ())
    cid = (ev.details.get("constraint") if ev else None)
    var = dc.spec.constraint(cid).variable if cid is not None else None
    if var in dc.kg.nodes:
        chains.update(ch for ch in backward_trace(dc.kg, var, dc.cfg.max_depth, dc.values) if ch.source in movers)
    elif movers:
        chains.update(forward_trace(dc.kg, movers, 1, dc.values))
    # chains into the constrained variable first, shortest first
    return tuple(sorted(chains, key=lambda c: (c.target != var, len(c.path), c.path)))


def _observed_effects(dc: _Decision) -> tuple:
    if dc.kg is None:
        return ()
    spec = dc.spec
    out = []
    f = spec.batched(spec.dynamics)
    x0, d0 = dc.ctx.measured_state, dc.forecast[0]
    base = f(x0, dc.u, d0)
    for name in dc.actuated:
        if name not in dc.kg.nodes:
            continue
        j = spec.input_names.index(name)
        un = dc.u.copy()
        un[j] = dc.neutral[j]
        alt = f(x0, un, d0)
        du = float(dc.u[j] - dc.neutral[j])
        for e in dc.kg.out_edges(name):
            if e.dst not in spec.state_names:
                continue
            s = e.resolve(dc.values)
            pred = {1: PLUS, -1: MINUS}.get(_sign_int(s) * _sgn(du), s)
            i = spec.state_names.index(e.dst)
            out.append(ObservedEffect(name, du, e.dst, pred, float(base[i] - alt[i])))
    return tuple(out)


def _factors(dc: _Decision, kind: Optional[str], ev: Optional[EvidenceBundle]) -> tuple:
    if kind is None:
        return ()
    spec = dc.spec
    # only exogenous parents are reported as causes; actuator self-lags are not
    flagged = [f.source for f in sorted((f for f in dc.flags if f.active),
                                        key=lambda f: (-abs(f.z_score), f.source, f.lag))
               if f.source in spec.disturbance_names]
    out = []
    if kind == "History":
        out.extend(flagged)
        if not flagged:
            out.extend(f.source for f in sorted(dc.flags, key=lambda f: (-abs(f.z_score), f.source, f.lag))
                       if f.active)
    elif kind == "Economics":
        out.append("economic")
        if dc.kg is not None:
            # disturbances acting directly on the states the actuated inputs move
            touched = {e.dst for name in dc.actuated if name in dc.kg.nodes for e in dc.kg.out_edges(name)}
            for d in dc.perturbed():
                if any(e.dst in touched for e in dc.kg.out_edges(d)):
                    out.append(d)
    else:
        cid = ev.details["constraint"]
        c = spec.constraint(cid)
        out.append(cid)
        out.extend(dc.drivers(c.variable, _direction(c)))
    out.extend(flagged)
    seen, uniq = set(), []
    for f in out:
        if f not in seen:
            seen.add(f)
            uniq.append(f)
    return tuple(uniq)


def generate_explanation(u, ctx: DecisionContext, spec: OcpSpec, sol: OcpSolution,
                         g_kg: Optional[SignedKnowledgeGraph], g_c: Optional[TemporalEvidence],
                         thresholds: Optional[fx.Thresholds] = None, config: Optional[ExplainConfig] = None,
                         solver_config: Optional[SolverConfig] = None, scenario_ref: str = "") -> ExplanationRecord:
    """Evaluate the hypotheses in order and assemble the explanation for ``u``."""
    dc = _Decision(u, ctx, spec, sol, g_kg, g_c, thresholds, config, solver_config)
    flags = []
    for src in dc.unavailable:
        flags.append(f"evidence source unavailable: {src}")
    selected = conf = ev = None
    for h in HYPOTHESES:
        e, c, notes = _EVALUATORS[h.kind](dc)
        flags.extend(notes)
        if e is not None and c >= MIN_CONFIDENCE:
            selected, conf, ev = h, c, e
            break
    if ev is not None:
        ev = EvidenceBundle(ev.kkt, ev.counterfactual, ev.pcmci or tuple(dc.flags), ev.kg_chains,
                            tuple(dict.fromkeys(flags)), ev.types, ev.details)
    else:
        ev = EvidenceBundle(pcmci=tuple(dc.flags), uncertainty_flags=tuple(dict.fromkeys(flags)))
    forecast_summary = tuple((d, float(dc.mean_forecast[d]), float(dc.z[d])) for d in dc.perturbed())
    record = ExplanationRecord(
        selected=selected, confidence=conf, evidence=ev,
        supporting_context=_deeper_context(dc, ev if selected else None),
        observed_effects=_observed_effects(dc) if selected else (),
        narrative="", scenario_ref=scenario_ref,
        degraded_mode=bool(dc.unavailable) or selected is None,
        predicted_factors=_factors(dc, selected.kind if selected else None, ev),
        unavailable=tuple(dc.unavailable),
        action={n: float(v) for n, v in zip(spec.input_names, dc.u)},
        state={n: float(v) for n, v in zip(spec.state_names, ctx.measured_state)},
        forecast_summary=forecast_summary, timestamp=ctx.timestamp)
    stmts = tuple(narrative_statements(record, spec.input_neutral))
    record = _replace(record, statements=stmts)
    return _replace(record, narrative=render_narrative(record))


def _replace(rec, **kw):
    from dataclasses import replace
    return replace(rec, **kw)


# ----------------------------------------------------------------------------
# narrative


def narrative_statements(record: ExplanationRecord, neutral=None) -> list:
    """Tagged sentences of the four-part narrative, in rendering order."""
    if record.statements:
        return list(record.statements)
    out = []

    def add(section, tag, text):
        out.append(Statement(section, tag, text))

    pr, me, pj, pc = SECTIONS
    if record.selected is None:
        add(pr, "none", "Insufficient evidence: no hypothesis is supported by the available sources.")
        return out
    ev, det = record.evidence, record.evidence.details
    kind, conf = record.selected.kind, _fmt(record.confidence)
    neutral = np.zeros(len(record.action)) if neutral is None else np.asarray(neutral, dtype=float)
    moved = [(n, v, neutral[i]) for i, (n, v) in enumerate(record.action.items()) if abs(v - neutral[i]) > 1e-6]
    if kind == "Safety":
        cid = det["constraint"]
        if det.get("path") == "hard":
            add(pr, "kkt", f"Safety (confidence {conf}): the action is dictated by hard constraint {cid}, "
                           f"which binds at stage {det['stage']}.")
        else:
            add(pr, "counterfactual", f"Safety (confidence {conf}): the action keeps the trajectory "
                                      f"inside comfort band {cid}.")
    elif kind == "Optimization":
        add(pr, "counterfactual", f"Optimization (confidence {conf}): {det['infeasible']} of "
                                  f"{det['alternatives']} nearby actions violate a hard constraint, "
                                  f"most often {det['constraint']}.")
    elif kind == "Prediction":
        add(pr, "forecast", f"Prediction (confidence {conf}): without actuation {det['constraint']} "
                            f"would be violated at stage {det['stage']}.")
    elif kind == "Economics":
        add(pr, "counterfactual", f"Economics (confidence {conf}): the action lowers the predicted cost "
                                  f"by {_fmt(100 * det['saving'])}% relative to no actuation.")
    else:
        add(pr, "history", f"History (confidence {conf}): {det['active']} of {det['parents']} lagged causal "
                           f"parents of the actuated inputs deviate from their baselines.")
    for n, v, r in moved:
        verb = "raised" if v > r else "lowered"
        add(pr, "current-state", f"Action: {n} {verb} to {_fmt(v)} from its resting value {_fmt(r)}.")

    state = ", ".join(f"{n} = {_fmt(v)}" for n, v in record.state.items())
    add(me, "current-state", f"Current state: {state}.")
    if ev.kkt is not None:
        for e in ev.kkt.active[:5]:
            add(me, "kkt", f"Multiplier of {e.id} at stage {e.stage} is {_fmt(e.multiplier)}, "
                           f"above its threshold {_fmt(e.threshold)}.")
        if len(ev.kkt.active) > 5:
            add(me, "kkt", f"{len(ev.kkt.active) - 5} further stage multipliers exceed their thresholds.")
    elif "kkt" in record.unavailable or any(u.startswith("kkt") for u in record.unavailable):
        add(me, "none", "Multiplier evidence is unavailable for this decision.")
    else:
        add(me, "kkt", "No hard-constraint multiplier exceeds its threshold.")
    for flag in ev.uncertainty_flags:
        if flag.startswith("uncertain multiplier"):
            add(me, "kkt", flag[0].upper() + flag[1:] + ".")

    cf = ev.counterfactual
    if cf is not None:
        text = f"Without {cf.constraint} the first action changes by {_fmt(cf.input_change)}"
        if cf.extreme_value is not None:
            text += f" and {det.get('variable') or 'the constrained variable'} reaches {_fmt(cf.extreme_value)}"
        if cf.violation_stage is not None:
            text += f", first leaving its bound at stage {cf.violation_stage}"
        text += f" (violation cost {_fmt(cf.violation_cost)}, cost change {_fmt(cf.delta_J)})."
        add(pj, "counterfactual", text)
    if kind == "Prediction":
        add(pj, "counterfactual", f"With all inputs at rest {det.get('variable') or 'the constrained variable'} "
                                  f"reaches {_fmt(det['extreme'])}.")
    if kind == "Economics":
        add(pj, "counterfactual", f"Predicted cost {_fmt(det['J_star'])} versus {_fmt(det['J_base'])} "
                                  f"with no actuation.")
    for d, mean, z in record.forecast_summary:
        add(pj, "forecast", f"Forecast {d} averages {_fmt(mean)} over the horizon (z = {_fmt(z)}).")

    for ch in record.supporting_context[:8]:
        add(pc, "kg", f"Mechanism: {' -> '.join(ch.path)} ({ch.composite_sign}).")
    for eff in record.observed_effects:
        if eff.predicted_sign in (PLUS, MINUS):
            word = "up" if eff.predicted_sign == PLUS else "down"
            add(pc, "kg", f"Changing {eff.input} by {_fmt(eff.delta_u)} pushes {eff.state} {word}; "
                          f"one-step effect {_fmt(eff.realized_delta)}.")
    for f in ev.pcmci:
        state = "deviates" if f.active else "is within its usual range"
        add(pc, "history", f"Parent {f.source} at lag {f.lag} {state} (z = {_fmt(f.z_score)}).")
    if not ev.pcmci and "pcmci" in record.unavailable:
        add(pc, "none", "Lagged causal history is unavailable for this decision.")
    return out


def render_narrative(record: ExplanationRecord) -> str:
    """Deterministic text with one heading per non-empty section."""
    stmts = narrative_statements(record)
    blocks = []
    for sec in SECTIONS:
        lines = [s.text for s in stmts if s.section == sec]
        if lines:
            blocks.append(f"## {sec}\n" + "\n".join(f"- {t}" for t in lines))
    return "\n\n".join(blocks) + "\n"


# ----------------------------------------------------------------------------
# serialization


def _chain_dict(ch: CausalChain) -> dict:
    return {"path": list(ch.path), "sign": ch.composite_sign}


def record_to_dict(rec: ExplanationRecord) -> dict:
    ev = rec.evidence
    doc = {
        "scenario": rec.scenario_ref,
        "timestamp": rec.timestamp,
        "selected": rec.selected.kind if rec.selected else None,
        "rank": rec.selected.rank if rec.selected else None,
        "confidence": rec.confidence,
        "degraded_mode": rec.degraded_mode,
        "unavailable": list(rec.unavailable),
        "predicted_factors": list(rec.predicted_factors),
        "state": dict(rec.state),
        "action": dict(rec.action),
        "evidence": {
            "types": list(ev.types),
            "details": {k: (list(v) if isinstance(v, (list, tuple)) else v) for k, v in ev.details.items()},
            "kkt": None if ev.kkt is None else {
                "primary": {"constraint": ev.kkt.primary[0], "stage": ev.kkt.primary[1]},
                "active": [{"constraint": e.id, "stage": e.stage, "multiplier": e.multiplier,
                            "threshold": e.threshold} for e in ev.kkt.active]},
            "counterfactual": None if ev.counterfactual is None else {
                k: getattr(ev.counterfactual, k) for k in
                ("constraint", "u_changed", "violation_found", "violation_stage", "delta_J",
                 "classification", "violation_cost", "extreme_value", "input_change")},
            "pcmci": [{"source": f.source, "lag": f.lag, "value": f.value, "z": f.z_score,
                       "active": f.active} for f in ev.pcmci],
            "kg_chains": [_chain_dict(c) for c in ev.kg_chains],
            "uncertainty_flags": list(ev.uncertainty_flags),
        },
        "supporting_context": [_chain_dict(c) for c in rec.supporting_context],
        "observed_effects": [{"input": e.input, "delta_u": e.delta_u, "state": e.state,
                              "predicted_sign": e.predicted_sign, "realized_delta": e.realized_delta,
                              "consistent": e.consistent} for e in rec.observed_effects],
        "statements": [{"section": s.section, "tag": s.tag, "text": s.text} for s in rec.statements],
        "narrative": rec.narrative,
    }
    return _plain(doc)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dump_record(rec: ExplanationRecord) -> str:
    return yaml.safe_dump(record_to_dict(rec), sort_keys=False, allow_unicode=True)


def statements_from_dict(doc: Mapping) -> list:
    return [Statement(s["section"], s["tag"], s["text"]) for s in doc.get("statements", [])]


def hypothesis(kind: str) -> Hypothesis:
    try:
        return _BY_KIND[kind]
    except KeyError:
        raise ValueError(f"unknown hypothesis {kind!r}") from None
