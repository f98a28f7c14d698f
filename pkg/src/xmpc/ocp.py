"""Finite-horizon optimal control problem data model.

All function handles attached to an :class:`OcpSpec` are expected to be pure
and *batched*: they receive arrays whose trailing axis is the state / input /
disturbance dimension and must broadcast over any leading axes.  Set
``vectorized=False`` on the spec to have plain per-point callables wrapped in
a loop instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

HARD = "hard-inequality"
SOFT = "soft-penalty"

Array = np.ndarray


@dataclass(frozen=True)
class ConstraintDef:
    """One inequality (hard) or comfort-band penalty (soft) constraint.

    ``evaluator(x, u, d)`` returns ``g`` with ``g <= 0`` feasible for hard
    constraints, or the non-negative penalty contribution for soft ones.  A
    bound shift of ``dc`` turns a hard constraint into ``g - dc <= 0``, so a
    positive shift widens the feasible region.  At the terminal stage ``H``
    the evaluator receives a zero input and the last forecast row.

    ``variable`` and ``sense`` name the constrained quantity (e.g. ``"T"``,
    ``"lower"``) so explanations and graph traversals can refer to it.
    """

    id: str
    kind: str
    stages: tuple[int, ...]
    evaluator: Callable[[Array, Array, Array], Array]
    bound: float
    penalty_gradient: Optional[Callable[[Array], Array]] = None
    family: Optional[str] = None
    variable: Optional[str] = None
    sense: Optional[str] = None

    @property
    def is_hard(self) -> bool:
        return self.kind == HARD


@dataclass(frozen=True)
class OcpSpec:
    horizon: int
    state_dim: int
    input_dim: int
    disturbance_dim: int
    dynamics: Callable[[Array, Array, Array], Array]
    stage_cost: Callable[[Array, Array], Array]
    terminal_cost: Callable[[Array], Array]
    path_constraints: tuple[ConstraintDef, ...] = ()
    terminal_constraints: tuple[ConstraintDef, ...] = ()
    input_bounds: Optional[Array] = None
    sampling_interval_minutes: float = 15.0
    state_names: tuple[str, ...] = ()
    input_names: tuple[str, ...] = ()
    disturbance_names: tuple[str, ...] = ()
    input_neutral: Optional[Array] = None
    unconstrained: bool = False
    vectorized: bool = True
    name: str = "ocp"

    def __post_init__(self):
        if self.input_bounds is None:
            bounds = np.tile([-np.inf, np.inf], (self.input_dim, 1))
        else:
            bounds = np.array(self.input_bounds, dtype=float).reshape(self.input_dim, 2)
        bounds.setflags(write=False)
        object.__setattr__(self, "input_bounds", bounds)
        if self.input_neutral is None:
            neutral = np.clip(np.zeros(self.input_dim), bounds[:, 0], bounds[:, 1])
        else:
            neutral = np.array(self.input_neutral, dtype=float).reshape(self.input_dim)
        neutral.setflags(write=False)
        object.__setattr__(self, "input_neutral", neutral)
        object.__setattr__(self, "path_constraints", tuple(self.path_constraints))
        object.__setattr__(self, "terminal_constraints", tuple(self.terminal_constraints))
        for attr, dim, prefix in (("state_names", self.state_dim, "x"),
                                  ("input_names", self.input_dim, "u"),
                                  ("disturbance_names", self.disturbance_dim, "d")):
            if not getattr(self, attr):
                object.__setattr__(self, attr, tuple(f"{prefix}{i}" for i in range(dim)))

    @property
    def constraints(self) -> tuple[ConstraintDef, ...]:
        return self.path_constraints + self.terminal_constraints

    @property
    def hard_constraints(self) -> tuple[ConstraintDef, ...]:
        return tuple(c for c in self.constraints if c.kind == HARD)

    @property
    def soft_constraints(self) -> tuple[ConstraintDef, ...]:
        return tuple(c for c in self.constraints if c.kind == SOFT)

    def constraint(self, cid: str) -> ConstraintDef:
        for c in self.constraints:
            if c.id == cid:
                return c
        raise KeyError(f"unknown constraint {cid!r}")

    def with_constraints(self, path, terminal) -> "OcpSpec":
        return replace(self, path_constraints=tuple(path), terminal_constraints=tuple(terminal))

    def batched(self, fn: Callable) -> Callable:
        """Return ``fn`` itself, or a looping wrapper for per-point handles."""
        if self.vectorized:
            return fn
        return _loop(fn)


def _loop(fn):
    def wrapped(*args):
        arrays = [np.asarray(a, dtype=float) for a in args]
        lead = np.broadcast_shapes(*(a.shape[:-1] for a in arrays))
        if lead == ():
            return np.asarray(fn(*arrays), dtype=float)
        flat = [np.broadcast_to(a, lead + a.shape[-1:]).reshape(-1, a.shape[-1]) for a in arrays]
        out = [np.asarray(fn(*row), dtype=float) for row in zip(*flat)]
        return np.stack(out).reshape(lead + out[0].shape)
    return wrapped


@dataclass(frozen=True)
class DecisionContext:
    measured_state: Array
    disturbance_forecast: Array
    timestamp: str = ""
    disturbance_units: tuple[str, ...] = ()

    def __post_init__(self):
        x = np.array(self.measured_state, dtype=float).ravel()
        d = np.array(self.disturbance_forecast, dtype=float)
        if d.ndim == 1:
            d = d[:, None]
        if not np.all(np.isfinite(d)):
            raise ValueError("disturbance forecast has missing entries")
        x.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "measured_state", x)
        object.__setattr__(self, "disturbance_forecast", d)


OPTIMAL = "optimal"
MAX_ITER = "max-iter"
INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class OcpSolution:
    inputs: Array
    states: Array
    multipliers: dict
    total_cost: float
    status: str
    bound_multipliers: Array = field(default=None, repr=False)
    iterations: int = 0
    kkt_residual: float = float("nan")
    trace: tuple[str, ...] = field(default=(), repr=False)

    def multiplier(self, cid: str, stage: int) -> float:
        return self.multipliers.get((cid, stage), 0.0)


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok

    def __iter__(self):
        return iter(self.violations)

    def __len__(self):
        return len(self.violations)


def validate_spec(spec: OcpSpec) -> ValidationReport:
    """Collect every structural problem with ``spec``; empty means usable."""
    problems = []
    if int(spec.horizon) < 1:
        problems.append(f"horizon must be >= 1, got {spec.horizon}")
    for name in ("state_dim", "input_dim", "disturbance_dim"):
        if int(getattr(spec, name)) < 1:
            problems.append(f"{name} must be positive")
    if spec.sampling_interval_minutes <= 0:
        problems.append("sampling interval must be positive")
    lo, hi = spec.input_bounds[:, 0], spec.input_bounds[:, 1]
    for i in np.flatnonzero(lo > hi):
        problems.append(f"input bound {spec.input_names[i]}: lo > hi")
    for names, dim, label in ((spec.state_names, spec.state_dim, "state"),
                              (spec.input_names, spec.input_dim, "input"),
                              (spec.disturbance_names, spec.disturbance_dim, "disturbance")):
        if len(names) != dim:
            problems.append(f"{label} names: expected {dim}, got {len(names)}")
    seen = set()
    for c in spec.constraints:
        if c.id in seen:
            problems.append(f"duplicate constraint id {c.id!r}")
        seen.add(c.id)
        if c.kind not in (HARD, SOFT):
            problems.append(f"constraint {c.id!r}: unknown kind {c.kind!r}")
        if c.kind == SOFT and c.penalty_gradient is None:
            problems.append(f"constraint {c.id!r}: soft constraint missing gradient")
        bad = [k for k in c.stages if not 0 <= k <= spec.horizon]
        if bad:
            problems.append(f"constraint {c.id!r}: stages {bad} outside 0..{spec.horizon}")
        if not c.stages:
            problems.append(f"constraint {c.id!r}: empty stage range")
    for c in spec.terminal_constraints:
        if tuple(c.stages) != (spec.horizon,):
            problems.append(f"terminal constraint {c.id!r} must apply at stage {spec.horizon} only")
    if not spec.constraints and not spec.unconstrained and np.all(~np.isfinite(spec.input_bounds)):
        problems.append("no constraints declared and problem not marked unconstrained")
    if spec.input_neutral is not None:
        if np.any(spec.input_neutral < lo) or np.any(spec.input_neutral > hi):
            problems.append("input neutral point outside input bounds")
    return ValidationReport(tuple(problems))


def check_context(spec: OcpSpec, ctx: DecisionContext) -> None:
    if ctx.measured_state.shape != (spec.state_dim,):
        raise ValueError(f"measured state has shape {ctx.measured_state.shape}, "
                         f"expected ({spec.state_dim},)")
    if ctx.disturbance_forecast.shape != (spec.horizon, spec.disturbance_dim):
        raise ValueError(f"forecast has shape {ctx.disturbance_forecast.shape}, "
                         f"expected ({spec.horizon}, {spec.disturbance_dim})")


def rollout(spec: OcpSpec, x0, inputs, disturbances) -> Array:
    """Iterate the dynamics from ``x0``; returns the ``(H+1, n)`` state sequence."""
    x0 = np.asarray(x0, dtype=float).ravel()
    inputs = np.asarray(inputs, dtype=float).reshape(-1, spec.input_dim) if np.size(inputs) else np.zeros((0, spec.input_dim))
    disturbances = np.asarray(disturbances, dtype=float)
    if disturbances.ndim == 1:
        disturbances = disturbances[:, None]
    if x0.shape != (spec.state_dim,):
        raise ValueError(f"x0 has shape {x0.shape}, expected ({spec.state_dim},)")
    if inputs.shape[0] != spec.horizon or disturbances.shape[0] != spec.horizon:
        raise ValueError(f"trajectory lengths must equal H={spec.horizon}: "
                         f"inputs {inputs.shape[0]}, disturbances {disturbances.shape[0]}")
    if disturbances.shape[1] != spec.disturbance_dim:
        raise ValueError("disturbance dimension mismatch")
    f = spec.batched(spec.dynamics)
    states = np.empty((spec.horizon + 1, spec.state_dim))
    states[0] = x0
    for k in range(spec.horizon):
        states[k + 1] = f(states[k], inputs[k], disturbances[k])
    return states


def stage_args(spec: OcpSpec, states: Array, inputs: Array, forecast: Array, k: int):
    """Arguments a constraint evaluator sees at stage ``k`` (terminal included)."""
    if k < spec.horizon:
        return states[k], inputs[k], forecast[k]
    return states[k], np.zeros(spec.input_dim), forecast[spec.horizon - 1]


def constraint_values(spec: OcpSpec, c: ConstraintDef, states, inputs, forecast) -> dict:
    """Map stage -> evaluator value of ``c`` along a trajectory."""
    g = spec.batched(c.evaluator)
    return {k: float(g(*stage_args(spec, states, inputs, forecast, k))) for k in c.stages}


def trajectory_cost(spec: OcpSpec, states, inputs, forecast, exclude: Sequence[str] = ()) -> float:
    """Stage + soft-penalty + terminal cost of a trajectory; ``exclude`` drops soft terms."""
    ell = spec.batched(spec.stage_cost)
    total = float(np.sum(ell(states[:-1], inputs)))
    total += float(spec.batched(spec.terminal_cost)(states[-1]))
    for c in spec.soft_constraints:
        if c.id in exclude:
            continue
        total += sum(constraint_values(spec, c, states, inputs, forecast).values())
    return total
