"""KKT active-set forensics, soft-constraint identification and calibration.

Multiplier thresholds are looked up per constraint id first, then per
constraint family, then from :data:`FAMILY_DEFAULTS`.  A relaxation's cost
change is ``dJ = J_relaxed - J_nominal``, which is non-positive whenever the
relaxation widens the feasible set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import paramfile
from .ocp import HARD, OPTIMAL, SOFT, DecisionContext, OcpSolution, OcpSpec, constraint_values
from .solver import ALL, RelaxationDirective, SolverConfig, resolve_relaxed, solve

FAMILY_DEFAULTS = {"temperature": 1e-6, "power": 1e-7, "pressure": 1e-8}
FALLBACK_TAU = 1e-6
UNCERTAIN_BAND = 0.2
EPS_FLOOR = 1e-9
HARD_VIOLATION_TOL = 1e-6
ANY = "*"  # threshold key that applies to every constraint without a closer entry


class NotOptimal(RuntimeError):
    """Multiplier evidence was requested from a solution that is not optimal."""


# ----------------------------------------------------------------------------
# thresholds


@dataclass(frozen=True)
class ThresholdTable:
    """Multiplier thresholds keyed by constraint id or family name."""

    entries: Mapping = field(default_factory=dict)
    provenance: Mapping = field(default_factory=dict)
    scale: float = 1.0

    def __post_init__(self):
        for key, val in self.entries.items():
            if not val > 0:
                raise ValueError(f"threshold for {key!r} must be positive")
        if not self.scale > 0:
            raise ValueError("threshold scale must be positive")

    def lookup(self, cid: str, family: Optional[str] = None) -> float:
        """Threshold for ``cid``: its own entry, then its family, then ``*``, then the family default."""
        for key in (cid, family, ANY):
            if key is not None and key in self.entries:
                return float(self.entries[key]) * self.scale
        return FAMILY_DEFAULTS.get(family, FALLBACK_TAU) * self.scale

    def source(self, cid: str, family: Optional[str] = None) -> str:
        for key in (cid, family, ANY):
            if key is not None and key in self.entries:
                return self.provenance.get(key, "default")
        return "default"

    def scaled(self, factor: float) -> "ThresholdTable":
        return ThresholdTable(dict(self.entries), dict(self.provenance), self.scale * factor)

    def with_entry(self, key: str, tau: float, provenance: str = "calibrated") -> "ThresholdTable":
        entries = dict(self.entries)
        prov = dict(self.provenance)
        entries[key] = float(tau)
        prov[key] = provenance
        return ThresholdTable(entries, prov, self.scale)


@dataclass(frozen=True)
class CostThresholds:
    tau_cost: float = 0.006
    epsilon_J: float = 0.0006

    def __post_init__(self):
        if not (self.tau_cost > 0 and self.epsilon_J > 0):
            raise ValueError("cost thresholds must be positive")


@dataclass(frozen=True)
class Thresholds:
    kkt: ThresholdTable = field(default_factory=ThresholdTable)
    cost: CostThresholds = field(default_factory=CostThresholds)

    def scaled(self, factor: float) -> "Thresholds":
        return Thresholds(self.kkt.scaled(factor), self.cost)


def save_thresholds(path, th: Thresholds) -> None:
    values = {"tau_cost": th.cost.tau_cost, "epsilon_J": th.cost.epsilon_J, "scale": th.kkt.scale}
    for key, val in th.kkt.entries.items():
        values[f"tau_lambda.{key}"] = float(val)
        values[f"provenance.{key}"] = th.kkt.provenance.get(key, "default")
    paramfile.write(path, values, "thresholds")


def load_thresholds(path) -> Thresholds:
    raw = paramfile.read(path, "thresholds")
    entries, prov = {}, {}
    for key, val in raw.items():
        if key.startswith("tau_lambda."):
            entries[key[len("tau_lambda."):]] = float(val)
        elif key.startswith("provenance."):
            prov[key[len("provenance."):]] = str(val)
        elif key not in ("tau_cost", "epsilon_J", "scale"):
            raise ValueError(f"unknown threshold key {key!r}")
    table = ThresholdTable(entries, prov, float(raw.get("scale", 1.0)))
    cost = CostThresholds(float(raw.get("tau_cost", 0.006)), float(raw.get("epsilon_J", 0.0006)))
    return Thresholds(table, cost)


# ----------------------------------------------------------------------------
# active set


@dataclass(frozen=True, order=True)
class ActiveEntry:
    stage: int
    id: str
    multiplier: float = field(compare=False)
    threshold: float = field(compare=False)

    @property
    def ratio(self) -> float:
        return self.multiplier / self.threshold


def detect_active_set(sol: OcpSolution, table: ThresholdTable, spec: Optional[OcpSpec] = None) -> list:
    """Entries with multiplier strictly above their threshold, sorted by (stage, id).

    Raises
    ------
    NotOptimal
        If the solver did not report ``optimal``; multipliers are then unreliable.
    """
    if sol.status != OPTIMAL:
        raise NotOptimal(f"solution status is {sol.status!r}")
    fam = {c.id: c.family for c in spec.constraints} if spec is not None else {}
    out = []
    for (cid, k), lam in sol.multipliers.items():
        tau = table.lookup(cid, fam.get(cid))
        if lam > tau:
            out.append(ActiveEntry(int(k), cid, float(lam), tau))
    return sorted(out)


def uncertain_entries(sol: OcpSolution, table: ThresholdTable, spec: Optional[OcpSpec] = None) -> list:
    """``(id, stage, lambda, tau)`` with lambda within +/-20% of its threshold."""
    fam = {c.id: c.family for c in spec.constraints} if spec is not None else {}
    out = []
    for (cid, k), lam in sorted(sol.multipliers.items(), key=lambda t: (t[0][1], t[0][0])):
        tau = table.lookup(cid, fam.get(cid))
        if abs(lam - tau) <= UNCERTAIN_BAND * tau:
            out.append((cid, int(k), float(lam), tau))
    return out


def primary_driver(active: Sequence[ActiveEntry]):
    """``(id, stage)`` of the largest ``lambda / tau``; ties go to the earlier stage, then id."""
    if not active:
        raise ValueError("active set is empty")
    best = min(active, key=lambda e: (-e.ratio, e.stage, e.id))
    return best.id, best.stage


# ----------------------------------------------------------------------------
# counterfactuals


@dataclass(frozen=True)
class CounterfactualData:
    """Nominal and relaxed solutions for one relaxed constraint."""

    spec: OcpSpec
    forecast: np.ndarray
    constraint: str
    nominal: OcpSolution
    relaxed: OcpSolution


@dataclass(frozen=True)
class CounterfactualResult:
    constraint: str
    u_changed: bool
    violation_found: bool
    violation_stage: Optional[int]
    delta_J: float
    classification: str
    violation_cost: float = 0.0
    extreme_value: Optional[float] = None
    input_change: float = 0.0


CONSTRAINT_DRIVEN = "constraint-driven"
ECONOMIC_DRIVEN = "economic-driven"
NOT_CAUSAL = "not-causal"


def classify(cf: CounterfactualData, costs: CostThresholds, u_tol: float = 1e-6) -> CounterfactualResult:
    """Classify a relaxation outcome.

    The constraint is judged on the relaxed trajectory with its original
    evaluator.  A hard constraint is violated when ``g > 1e-6`` at some
    stage.  A soft constraint is violated when its penalty is positive
    somewhere, and its violation cost is the penalty increase over the
    nominal trajectory.
    """
    spec = cf.spec
    c = spec.constraint(cf.constraint)
    du = float(np.max(np.abs(cf.relaxed.inputs[0] - cf.nominal.inputs[0])))
    u_changed = du > u_tol
    rel = constraint_values(spec, c, cf.relaxed.states, cf.relaxed.inputs, cf.forecast)
    nom = constraint_values(spec, c, cf.nominal.states, cf.nominal.inputs, cf.forecast)
    stages = sorted(rel)
    if c.kind == HARD:
        bad = [k for k in stages if rel[k] > HARD_VIOLATION_TOL]
        cost = float(sum(max(rel[k], 0.0) for k in stages))
        significant = bool(bad)
    else:
        bad = [k for k in stages if rel[k] > 0.0]
        cost = float(sum(rel.values()) - sum(nom.values()))
        significant = cost > costs.tau_cost
    violation = bool(bad)
    extreme = None
    if c.variable is not None and c.variable in spec.state_names:
        col = cf.relaxed.states[:, spec.state_names.index(c.variable)]
        extreme = float(col.min() if c.sense == "lower" else col.max())
    dJ = float(cf.relaxed.total_cost - cf.nominal.total_cost)
    if u_changed and violation and significant:
        label = CONSTRAINT_DRIVEN
    elif not violation and dJ < -costs.epsilon_J:
        label = ECONOMIC_DRIVEN
    else:
        label = NOT_CAUSAL
    return CounterfactualResult(cf.constraint, u_changed, violation, bad[0] if bad else None, dJ, label,
                                cost, extreme, du)


def counterfactual(spec: OcpSpec, ctx: DecisionContext, nominal: OcpSolution, cid: str,
                   cfg: Optional[SolverConfig] = None, costs: Optional[CostThresholds] = None,
                   u_tol: float = 1e-6) -> CounterfactualResult:
    """Remove ``cid`` at every stage, re-solve, and classify the outcome."""
    relaxed = resolve_relaxed(spec, ctx, [RelaxationDirective(cid, ALL, "remove")], cfg, nominal.inputs)
    if relaxed.status != OPTIMAL:
        raise RuntimeError(f"relaxed solve for {cid!r} ended with status {relaxed.status}")
    data = CounterfactualData(spec, ctx.disturbance_forecast, cid, nominal, relaxed)
    return classify(data, costs or CostThresholds(), u_tol)


# ----------------------------------------------------------------------------
# soft constraints


def rank_soft_constraints(spec: OcpSpec, x_k, priority: Sequence[str] = ()) -> list:
    """Soft constraint ids by descending penalty-gradient norm at ``x_k``.

    Equal norms keep the order of ``priority`` (ids listed there first),
    then declaration order.
    """
    x_k = np.asarray(x_k, dtype=float)
    soft = spec.soft_constraints
    pri = {cid: i for i, cid in enumerate(priority)}
    keyed = []
    for pos, c in enumerate(soft):
        norm = float(np.linalg.norm(c.penalty_gradient(x_k)))
        keyed.append((-norm, pri.get(c.id, len(pri)), pos, c.id))
    return [t[-1] for t in sorted(keyed)]


@dataclass(frozen=True)
class SoftIdentification:
    constraint: Optional[str]
    result: Optional[CounterfactualResult]
    tried: tuple = ()
    warnings: tuple = ()


def identify_soft_constraint(spec: OcpSpec, ctx: DecisionContext, cfg: Optional[SolverConfig] = None,
                             nominal: Optional[OcpSolution] = None, costs: Optional[CostThresholds] = None,
                             priority: Sequence[str] = (), budget: Optional[int] = None,
                             u_tol: float = 1e-6) -> SoftIdentification:
    """Walk the ranked soft constraints and return the first one whose removal matters.

    A candidate is accepted when removing it changes the first input and the
    relaxed trajectory exits its band at a cost above ``tau_cost``.  At most
    ``budget`` re-solves are spent (all soft constraints when ``None``).
    """
    costs = costs or CostThresholds()
    nominal = nominal or solve(spec, ctx, cfg)
    ranked = rank_soft_constraints(spec, ctx.measured_state, priority)
    if budget is not None:
        ranked = ranked[: max(int(budget), 0)]
    tried, notes = [], []
    for cid in ranked:
        tried.append(cid)
        try:
            res = counterfactual(spec, ctx, nominal, cid, cfg, costs, u_tol)
        except (RuntimeError, ValueError) as exc:
            notes.append(f"re-solve without {cid} failed: {exc}")
            continue
        if res.classification == CONSTRAINT_DRIVEN:
            return SoftIdentification(cid, res, tuple(tried), tuple(notes))
    return SoftIdentification(None, None, tuple(tried), tuple(notes))


# ----------------------------------------------------------------------------
# calibration


@dataclass(frozen=True)
class KKTCalibration:
    threshold: float
    calibration_accuracy: float
    heldout_accuracy: float
    heldout_balanced_accuracy: float
    n_calibration: int
    n_heldout: int

    def report(self, key: str = "threshold") -> str:
        rows = [("key", key), ("tau_lambda", f"{self.threshold:.4g}"),
                ("calibration balanced accuracy", f"{self.calibration_accuracy:.4f}"),
                ("held-out accuracy", f"{self.heldout_accuracy:.4f}"),
                ("held-out balanced accuracy", f"{self.heldout_balanced_accuracy:.4f}"),
                ("calibration samples", str(self.n_calibration)), ("held-out samples", str(self.n_heldout))]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{a.ljust(width)}  {b}" for a, b in rows) + "\n"


def _balanced(lam, act, tau):
    pred = lam > tau
    tpr = np.mean(pred[act]) if act.any() else 0.0
    tnr = np.mean(~pred[~act]) if (~act).any() else 0.0
    return 0.5 * (tpr + tnr)


def split_indices(n: int, fractions=(0.125, 0.125, 0.75), seed: int = 0):
    """Disjoint (calibration, held-out, remainder) index sets."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or sum(fractions) > 1.0 + 1e-12:
        raise ValueError(f"split fractions must be three non-negative numbers summing to <= 1, got {fractions}")
    perm = np.random.default_rng(seed).permutation(n)
    n_cal = int(round(fractions[0] * n))
    n_hold = int(round(fractions[1] * n))
    return perm[:n_cal], perm[n_cal:n_cal + n_hold], perm[n_cal + n_hold:]


def calibrate_kkt_thresholds(samples, fractions=(0.125, 0.125, 0.75), seed: int = 0,
                             n_candidates: int = 400) -> KKTCalibration:
    """ROC sweep over log-spaced thresholds maximizing balanced accuracy.

    ``samples`` is a sequence of ``(lambda, is_active)``.  The threshold is
    chosen on the calibration split and scored on the disjoint held-out split.
    """
    arr = np.asarray([(float(l), bool(a)) for l, a in samples], dtype=float).reshape(-1, 2)
    lam, act = np.maximum(arr[:, 0], 0.0), arr[:, 1].astype(bool)
    if act.all() or (~act).all():
        raise ValueError("calibration needs both active and inactive samples")
    cal, hold, _ = split_indices(lam.size, fractions, seed)
    if cal.size == 0 or hold.size == 0:
        raise ValueError("calibration and held-out splits must be non-empty")
    lc, ac = lam[cal], act[cal]
    if ac.all() or (~ac).all():
        raise ValueError("calibration split lacks one of the classes")
    pos = lam[lam > 0]
    lo = math.log10(pos.min()) - 1.0 if pos.size else -12.0
    hi = math.log10(pos.max()) + 1.0 if pos.size else 0.0
    grid = np.logspace(lo, hi, n_candidates)
    scores = np.array([_balanced(lc, ac, t) for t in grid])
    best = np.flatnonzero(scores >= scores.max() - 1e-12)
    # centre of the best plateau, in log space
    tau = float(np.sqrt(grid[best[0]] * grid[best[-1]]))
    lh, ah = lam[hold], act[hold]
    acc = float(np.mean((lh > tau) == ah))
    return KKTCalibration(tau, float(_balanced(lc, ac, tau)), acc, float(_balanced(lh, ah, tau)),
                          int(cal.size), int(hold.size))


def synthetic_multipliers(n: int = 2000, seed: int = 0, active_center: float = 1e-4,
                          inactive_center: float = 1e-10, spread_decades: float = 1.25,
                          active_fraction: float = 0.5) -> list:
    """Labelled ``(lambda, is_active)`` pairs from two log-normal modes.

    ``spread_decades`` is the standard deviation of ``log10(lambda)`` in each
    mode.
    """
    rng = np.random.default_rng(seed)
    active = rng.uniform(size=n) < active_fraction
    centre = np.where(active, math.log10(active_center), math.log10(inactive_center))
    lam = 10.0 ** rng.normal(centre, spread_decades)
    return [(float(l), bool(a)) for l, a in zip(lam, active)]


@dataclass(frozen=True)
class CostTrial:
    mean_stage_cost: float
    delta_J: float


MIN_COST_TRIALS = 100


def calibrate_cost_thresholds(trials: Sequence[CostTrial]) -> CostThresholds:
    """``tau_cost = 0.05 * mean stage cost`` and ``epsilon_J = 0.02 * std(dJ)``.

    Degenerate (non-positive) results fall back to a floor of 1e-9.
    """
    if len(trials) < MIN_COST_TRIALS:
        raise ValueError(f"need at least {MIN_COST_TRIALS} counterfactual trials, got {len(trials)}")
    ell = np.array([t.mean_stage_cost for t in trials], dtype=float)
    dJ = np.array([t.delta_J for t in trials], dtype=float)
    tau_cost = 0.05 * float(np.mean(ell))
    eps = 0.02 * float(np.std(dJ))
    return CostThresholds(tau_cost if tau_cost > EPS_FLOOR else EPS_FLOOR, eps if eps > EPS_FLOOR else EPS_FLOOR)
