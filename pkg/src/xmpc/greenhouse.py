"""Reference greenhouse climate/crop model and two hard-constrained testbeds.

The greenhouse has four states ``[T, C, Hm, B]`` (air temperature in degC,
CO2 in ppm, relative humidity in %, crop biomass in kg/m^2), four normalized
inputs ``[u_V, u_C, u_Qh, u_Qc]`` (ventilation, CO2 injection, heating,
cooling) and four disturbances ``[T_out, C_out, H_out, Q_rad]``.  Rates are
per hour; one explicit Euler step of ``dt = 0.25 h`` gives the discrete
dynamics, so every partial derivative of the update has the sign of the
corresponding rate term.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import paramfile
from .ocp import HARD, SOFT, ConstraintDef, OcpSpec

STATE_NAMES = ("T", "C", "Hm", "B")
INPUT_NAMES = ("u_V", "u_C", "u_Qh", "u_Qc")
DISTURBANCE_NAMES = ("T_out", "C_out", "H_out", "Q_rad")
DISTURBANCE_UNITS = ("degC", "ppm", "%", "W/m2")

HARD_BOUNDS = {"T": (14.0, 30.0), "C": (300.0, 1000.0), "Hm": (10.0, 100.0)}
COMFORT_BANDS = {"T": (18.0, 26.0), "Hm": (60.0, 90.0), "C": (500.0, 900.0)}
# penalty scale: one unit of band excursion costs weight * 1
BAND_SCALE = {"T": 1.0, "Hm": 10.0, "C": 100.0}
FAMILY = {"T": "temperature", "C": "co2", "Hm": "humidity"}


@dataclass(frozen=True)
class GreenhouseParams:
    # heat balance [degC/h]
    a_loss: float = 0.1
    a_vent: float = 0.6
    a_rad: float = 0.006
    a_heat: float = 4.0
    a_cool: float = 4.0
    # CO2 balance [ppm/h]
    c_leak: float = 0.1
    c_vent: float = 1.5
    c_inj: float = 400.0
    c_photo: float = 100.0
    # humidity balance [%/h]
    h_leak: float = 0.1
    h_vent: float = 1.0
    h_transp: float = 0.005
    h_cool: float = 5.0
    # crop growth
    k_growth: float = 0.002
    q_half: float = 200.0
    c_half: float = 400.0
    t_opt: float = 24.0
    t_width: float = 10.0
    k_canopy: float = 2.0
    # economics, per hour of full actuation
    price_vent: float = 0.02
    price_co2: float = 0.1
    price_heat: float = 0.1
    price_cool: float = 0.1
    input_weight: float = 0.1
    biomass_price: float = 200.0
    biomass_reference: float = 0.0
    # comfort penalty weights per stage
    w_T: float = 1.0
    w_C: float = 1.0
    w_Hm: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "GreenhouseParams":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ValueError(f"unknown greenhouse parameters: {unknown}")
        out = cls(**{k: float(v) for k, v in values.items()})
        bad = [k for k, v in out.to_dict().items() if not np.isfinite(v)]
        if bad:
            raise ValueError(f"non-finite greenhouse parameters: {bad}")
        return out


def save_params(path, params: GreenhouseParams) -> None:
    paramfile.write(path, params.to_dict(), "greenhouse")


def load_params(path) -> GreenhouseParams:
    return GreenhouseParams.from_dict(paramfile.read(path, "greenhouse"))


DT_HOURS = 0.25


def photosynthesis(p: GreenhouseParams, T, C, Q):
    """Saturating light and CO2 response with a bell-shaped temperature factor."""
    Q = np.maximum(Q, 0.0)
    C = np.maximum(C, 0.0)
    light = Q / (Q + p.q_half)
    co2 = C / (C + p.c_half)
    temp = np.exp(-((T - p.t_opt) / p.t_width) ** 2)
    return light * co2 * temp


def canopy(p: GreenhouseParams, B):
    return 1.0 - np.exp(-p.k_canopy * np.maximum(B, 0.0))


def greenhouse_rates(p: GreenhouseParams, x, u, d):
    T, C, Hm, B = (x[..., i] for i in range(4))
    uV, uC, uQh, uQc = (u[..., i] for i in range(4))
    T_out, C_out, H_out, Q = (d[..., i] for i in range(4))
    growth = photosynthesis(p, T, C, Q) * canopy(p, B)
    dT = (p.a_loss * (T_out - T) + p.a_vent * uV * (T_out - T) + p.a_rad * Q
          + p.a_heat * uQh - p.a_cool * uQc)
    dC = (p.c_leak * (C_out - C) + p.c_vent * uV * (C_out - C) + p.c_inj * uC
          - p.c_photo * growth)
    dH = (p.h_leak * (H_out - Hm) + p.h_vent * uV * (H_out - Hm) + p.h_transp * Q
          - p.h_cool * uQc)
    dB = p.k_growth * growth
    return np.stack(np.broadcast_arrays(dT, dC, dH, dB), axis=-1)


def _hinge_sq(excess):
    return np.maximum(excess, 0.0) ** 2


def _band_constraint(var, idx, sense, weight, stages):
    lo, hi = COMFORT_BANDS[var]
    scale = BAND_SCALE[var]
    edge = lo if sense == "lower" else hi
    sgn = -1.0 if sense == "lower" else 1.0

    def penalty(x, u, d):
        return weight * _hinge_sq(sgn * (x[..., idx] - edge) / scale)

    def gradient(x):
        x = np.asarray(x, dtype=float)
        g = np.zeros(x.shape)
        g[..., idx] = 2.0 * weight * sgn * np.maximum(sgn * (x[..., idx] - edge) / scale, 0.0) / scale
        return g

    return ConstraintDef(id=f"{var}_{sense}", kind=SOFT, stages=stages, evaluator=penalty, bound=edge,
                         penalty_gradient=gradient, family=FAMILY[var], variable=var, sense=sense)


def _bound_constraint(var, idx, sense, stages):
    lo, hi = HARD_BOUNDS[var]
    if sense == "lower":
        def g(x, u, d, _lo=lo):
            return _lo - x[..., idx]
        cid, bound = f"{var}_min", lo
    else:
        def g(x, u, d, _hi=hi):
            return x[..., idx] - _hi
        cid, bound = f"{var}_max", hi
    return ConstraintDef(id=cid, kind=HARD, stages=stages, evaluator=g, bound=bound,
                         family=FAMILY[var], variable=var, sense=sense)


def build_greenhouse_ocp(params: GreenhouseParams | None = None, H: int = 16) -> OcpSpec:
    """Greenhouse NMPC with hard safety bounds and soft comfort bands.

    Hard bounds and comfort penalties apply at stages ``1..H``; stage 0 is the
    measured state, which no input can change.
    """
    p = params or GreenhouseParams()
    if int(H) < 1:
        raise ValueError("horizon must be >= 1")
    stages = tuple(range(1, H + 1))
    prices = np.array([p.price_vent, p.price_co2, p.price_heat, p.price_cool])

    def dynamics(x, u, d):
        return x + DT_HOURS * greenhouse_rates(p, x, u, d)

    def stage_cost(x, u):
        return DT_HOURS * (u @ prices) + p.input_weight * np.sum(u * u, axis=-1)

    def terminal_cost(x):
        return -p.biomass_price * (x[..., 3] - p.biomass_reference)

    hard = []
    for var, idx in (("T", 0), ("C", 1), ("Hm", 2)):
        hard.append(_bound_constraint(var, idx, "lower", stages))
        hard.append(_bound_constraint(var, idx, "upper", stages))
    soft = []
    for var, idx in (("T", 0), ("Hm", 2), ("C", 1)):
        w = getattr(p, f"w_{var}")
        soft.append(_band_constraint(var, idx, "lower", w, stages))
        soft.append(_band_constraint(var, idx, "upper", w, stages))
    return OcpSpec(horizon=int(H), state_dim=4, input_dim=4, disturbance_dim=4, dynamics=dynamics,
                   stage_cost=stage_cost, terminal_cost=terminal_cost,
                   path_constraints=tuple(hard + soft), input_bounds=np.tile([0.0, 1.0], (4, 1)),
                   sampling_interval_minutes=60.0 * DT_HOURS, state_names=STATE_NAMES,
                   input_names=INPUT_NAMES, disturbance_names=DISTURBANCE_NAMES,
                   input_neutral=np.zeros(4), name="greenhouse")


# ----------------------------------------------------------------------------
# disturbance profiles

PROFILES = ("cold-night", "sunny-day", "humid-spell")


def synth_disturbances(profile: str, H: int, seed: int = 0) -> np.ndarray:
    """Reproducible ``(H, 4)`` forecast for one of :data:`PROFILES`.

    cold-night: T_out falls linearly to exactly 5 degC by mid-horizon and
    stays there, no sun.  sunny-day: half-sine radiation peaking at the
    horizon midpoint.  humid-spell: near-saturated outdoor air under
    moderate light.
    """
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; expected one of {PROFILES}")
    rng = np.random.default_rng(seed)
    k = np.arange(H, dtype=float)
    out = np.empty((H, 4))
    out[:, 1] = 410.0 + rng.normal(0.0, 5.0, H)
    if profile == "cold-night":
        start = 12.0 + rng.uniform(-1.0, 1.0)
        frac = np.clip(1.0 - k / max(0.5 * H, 1.0), 0.0, 1.0)
        out[:, 0] = 5.0 + (start - 5.0) * frac
        out[:, 2] = np.clip(80.0 + rng.normal(0.0, 2.0, H), 0.0, 100.0)
        out[:, 3] = 0.0
    elif profile == "sunny-day":
        peak = 650.0 + rng.uniform(-50.0, 50.0)
        out[:, 3] = peak * np.sin(np.pi * (k + 1.0) / (H + 1.0))
        out[:, 0] = 18.0 + 4.0 * np.sin(np.pi * (k + 1.0) / (H + 1.0)) + rng.normal(0.0, 0.3, H)
        out[:, 2] = np.clip(55.0 + rng.normal(0.0, 2.0, H), 0.0, 100.0)
    else:
        out[:, 0] = 17.0 + rng.normal(0.0, 0.3, H)
        out[:, 2] = np.clip(97.0 + rng.normal(0.0, 1.0, H), 0.0, 100.0)
        out[:, 3] = 250.0 + rng.uniform(-20.0, 20.0) + 0.0 * k
    out[:, 3] = np.maximum(out[:, 3], 0.0)
    return out


# ----------------------------------------------------------------------------
# hard-constrained testbeds

TESTBEDS = ("thermal-zone", "reactor-chain")


def build_hardconstrained_testbed(kind: str, H: int = 12) -> OcpSpec:
    """Linear-quadratic stand-ins with hard constraints only.

    thermal-zone
        States ``[T_zone, T_wall, T_supply]``, inputs ``[heat, cool]`` and
        disturbances ``[T_out, Q_int]``.  Zone temperature must stay in
        [20, 24] degC and total power ``heat + cool <= 0.8``.
    reactor-chain
        Three stirred tanks, each with a concentration and a temperature;
        inputs ``[feed, cool_1, cool_2, cool_3]``, disturbances
        ``[c_feed, T_amb]``.  Tank temperatures are capped (temperature
        family) and the last tank's concentration acts as a pressure proxy.
    """
    if kind == "thermal-zone":
        A = np.array([[0.80, 0.15, 0.03],
                      [0.10, 0.88, 0.00],
                      [0.00, 0.00, 0.50]])
        B = np.array([[0.00, 0.00],
                      [0.00, 0.00],
                      [4.00, -4.00]])
        E = np.array([[0.02, 0.05],
                      [0.02, 0.00],
                      [0.50 * 0.0, 0.00]])
        offset = np.array([0.0, 0.0, 0.5 * 21.0])
        x_ref = np.array([22.0, 21.0, 21.0])
        Q = np.diag([1.0, 0.0, 0.0])
        R = np.diag([0.5, 0.5])
        lin = np.array([0.2, 0.2])
        names = (("T_zone", "T_wall", "T_supply"), ("heat", "cool"), ("T_out", "Q_int"))
        cons = [
            ConstraintDef("T_zone_min", HARD, tuple(range(1, H + 1)), lambda x, u, d: 20.0 - x[..., 0], 20.0,
                          family="temperature", variable="T_zone", sense="lower"),
            ConstraintDef("T_zone_max", HARD, tuple(range(1, H + 1)), lambda x, u, d: x[..., 0] - 24.0, 24.0,
                          family="temperature", variable="T_zone", sense="upper"),
            ConstraintDef("power_max", HARD, tuple(range(0, H)), lambda x, u, d: u[..., 0] + u[..., 1] - 0.8, 0.8,
                          family="power", variable="heat", sense="upper"),
        ]
        bounds = np.tile([0.0, 1.0], (2, 1))
    elif kind == "reactor-chain":
        a = 0.7
        A = np.zeros((6, 6))
        for i in range(3):
            A[2 * i, 2 * i] = a                 # concentration retention
            A[2 * i + 1, 2 * i + 1] = 0.8       # thermal retention
            A[2 * i + 1, 2 * i] = 0.5           # reaction heat
            if i > 0:
                A[2 * i, 2 * (i - 1)] = 0.25    # flow from upstream tank
                A[2 * i + 1, 2 * (i - 1) + 1] = 0.1
        B = np.zeros((6, 4))
        B[0, 0] = 0.3
        for i in range(3):
            B[2 * i + 1, 1 + i] = -3.0
        E = np.zeros((6, 2))
        E[0, 0] = 0.05
        for i in range(3):
            E[2 * i + 1, 1] = 0.1
        offset = np.zeros(6)
        x_ref = np.array([1.0, 0.0, 1.0, 0.0, 1.2, 0.0])
        Q = np.diag([0.1, 0.0, 0.1, 0.0, 1.0, 0.0])
        R = np.diag([0.1, 0.2, 0.2, 0.2])
        lin = np.array([0.0, 0.05, 0.05, 0.05])
        names = (("c1", "T1", "c2", "T2", "c3", "T3"), ("feed", "cool_1", "cool_2", "cool_3"),
                 ("c_feed", "T_amb"))
        cons = []
        for i in range(3):
            cons.append(ConstraintDef(f"T{i + 1}_max", HARD, tuple(range(1, H + 1)),
                                      (lambda j: lambda x, u, d: x[..., j] - 6.0)(2 * i + 1), 6.0,
                                      family="temperature", variable=f"T{i + 1}", sense="upper"))
        cons.append(ConstraintDef("p3_max", HARD, tuple(range(1, H + 1)),
                                  lambda x, u, d: x[..., 4] - 1.5, 1.5,
                                  family="pressure", variable="c3", sense="upper"))
        bounds = np.tile([0.0, 1.0], (4, 1))
    else:
        raise ValueError(f"unknown testbed {kind!r}; expected one of {TESTBEDS}")

    def dynamics(x, u, d, A=A, B=B, E=E, offset=offset):
        return x @ A.T + u @ B.T + d @ E.T + offset

    def stage_cost(x, u, Q=Q, R=R, x_ref=x_ref, lin=lin):
        e = x - x_ref
        return np.einsum("...i,ij,...j->...", e, Q, e) + np.einsum("...i,ij,...j->...", u, R, u) + u @ lin

    def terminal_cost(x, Q=Q, x_ref=x_ref):
        e = x - x_ref
        return np.einsum("...i,ij,...j->...", e, Q, e)

    return OcpSpec(horizon=int(H), state_dim=A.shape[0], input_dim=B.shape[1], disturbance_dim=E.shape[1],
                   dynamics=dynamics, stage_cost=stage_cost, terminal_cost=terminal_cost,
                   path_constraints=tuple(cons), input_bounds=bounds, state_names=names[0],
                   input_names=names[1], disturbance_names=names[2], name=kind)


def testbed_disturbances(kind: str, H: int, seed: int = 0, severity: float = 1.0) -> np.ndarray:
    """Seeded forecast for a testbed; ``severity`` scales the excursion."""
    rng = np.random.default_rng(seed)
    k = np.arange(H, dtype=float)
    if kind == "thermal-zone":
        t_out = 10.0 + severity * 15.0 * np.sin(np.pi * (k + 1) / (H + 1)) + rng.normal(0, 0.5, H)
        q_int = severity * 20.0 * (rng.uniform(size=H) > 0.5)
        return np.column_stack([t_out, q_int])
    if kind == "reactor-chain":
        c_feed = 10.0 + severity * 6.0 * rng.uniform(0.5, 1.0) + rng.normal(0, 0.2, H)
        t_amb = severity * 3.0 + rng.normal(0, 0.3, H)
        return np.column_stack([c_feed, t_amb])
    raise ValueError(f"unknown testbed {kind!r}; expected one of {TESTBEDS}")


def with_params(params: GreenhouseParams, **changes) -> GreenhouseParams:
    return replace(params, **changes)
