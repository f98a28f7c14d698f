"""Time-lagged causal discovery (PC1 + MCI) and lag baseline statistics.

Conditional independence is tested with partial correlation under a
Student-t null.  All series are standardized before testing.  Candidates
and conditioning sets are ordered by test strength with ties broken by
``(variable name, lag)``, which makes the output independent of column order.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd
import yaml
from scipy import stats

MAX_GAP = 4


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class TimeSeriesTable:
    variables: tuple
    samples: np.ndarray
    sampling_interval_minutes: float = 15.0
    warnings: tuple = ()

    def __post_init__(self):
        arr = np.array(self.samples, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != len(self.variables):
            raise DataError(f"samples shape {arr.shape} does not match {len(self.variables)} variables")
        if not np.all(np.isfinite(arr)):
            raise DataError("samples contain missing values")
        if len(set(self.variables)) != len(self.variables):
            raise DataError("duplicate variable names")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "variables", tuple(self.variables))

    def column(self, name: str) -> np.ndarray:
        return self.samples[:, self.variables.index(name)]

    def __len__(self):
        return self.samples.shape[0]


def fill_gaps(values: np.ndarray, max_gap: int = MAX_GAP) -> Optional[np.ndarray]:
    """Linear interpolation over runs of at most ``max_gap`` missing values.

    Returns ``None`` when a longer run exists or the series edges are missing.
    """
    s = pd.Series(np.asarray(values, dtype=float))
    miss = s.isna().to_numpy()
    if not miss.any():
        return s.to_numpy()
    if miss[0] or miss[-1]:
        return None
    run = 0
    for flag in miss:
        run = run + 1 if flag else 0
        if run > max_gap:
            return None
    return s.interpolate(method="linear").to_numpy()


def read_timeseries(source, time_column: Optional[str] = None) -> TimeSeriesTable:
    """Load delimited text with a header row and one ISO-8601 timestamp column.

    The sampling interval must be constant.  Gaps of up to four missing
    values are interpolated; series with longer gaps are dropped with a
    warning recorded on the table.
    """
    if isinstance(source, str) and "\n" in source:
        source = io.StringIO(source)
    try:
        df = pd.read_csv(source, sep=None, engine="python")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot parse time series: {exc}") from None
    cols = [str(c) for c in df.columns]
    for pos, c in enumerate(cols, start=1):
        if not c.strip() or c.startswith("Unnamed:"):
            raise DataError(f"malformed header: column {pos} has no name")
    if time_column is None:
        named = [c for c in cols if c.lower() in ("timestamp", "time", "datetime")]
        time_column = named[0] if named else cols[0]
    if time_column not in cols:
        raise DataError(f"timestamp column {time_column!r} not found")
    ts = pd.to_datetime(df[time_column], errors="coerce", format="ISO8601")
    if ts.isna().any():
        raise DataError(f"column {time_column!r}: unparseable ISO-8601 timestamps")
    steps = np.diff(ts.to_numpy().astype("datetime64[s]").astype(np.int64))
    if steps.size == 0 or np.any(steps <= 0) or np.any(steps != steps[0]):
        raise DataError(f"column {time_column!r}: sampling interval is not fixed")
    interval = float(steps[0]) / 60.0
    names, columns, notes = [], [], []
    for c in cols:
        if c == time_column:
            continue
        values = pd.to_numeric(df[c], errors="coerce")
        bad = values.isna() & df[c].notna()
        if bad.any():
            raise DataError(f"malformed column {c!r}: non-numeric entries")
        filled = fill_gaps(values.to_numpy())
        if filled is None:
            notes.append(f"dropped {c!r}: gap longer than {MAX_GAP} samples")
            continue
        names.append(c)
        columns.append(filled)
    if not names:
        raise DataError("no usable series")
    for note in notes:
        warnings.warn(note)
    return TimeSeriesTable(tuple(names), np.column_stack(columns), interval, tuple(notes))


def write_timeseries(path, table: TimeSeriesTable, start: str = "2024-01-01T00:00:00") -> None:
    idx = pd.date_range(start=start, periods=len(table), freq=pd.Timedelta(minutes=table.sampling_interval_minutes))
    df = pd.DataFrame(table.samples, columns=list(table.variables))
    df.insert(0, "timestamp", idx.strftime("%Y-%m-%dT%H:%M:%S"))
    df.to_csv(path, index=False, float_format="%.10g")


# ----------------------------------------------------------------------------
# causal graph


@dataclass(frozen=True, order=True)
class LaggedEdge:
    target: str
    source: str
    lag: int
    p_value: float = field(compare=False)
    partial_correlation: float = field(compare=False)


@dataclass(frozen=True)
class LaggedCausalGraph:
    edges: tuple
    tau_max: int
    alpha: float
    variables: tuple = ()
    excluded: tuple = ()

    def parents(self, target: str) -> list:
        return query_parents(self, target)


def partial_corr_test(x, y, Z=None):
    """Partial correlation of ``x`` and ``y`` given columns of ``Z``; returns ``(r, p)``."""
    n = x.shape[0]
    if Z is not None and Z.shape[1]:
        D = np.column_stack([np.ones(n), Z])
        coef, *_ = np.linalg.lstsq(D, np.column_stack([x, y]), rcond=None)
        res = np.column_stack([x, y]) - D @ coef
        k = Z.shape[1]
    else:
        res = np.column_stack([x - x.mean(), y - y.mean()])
        k = 0
    denom = np.sqrt(np.sum(res[:, 0] ** 2) * np.sum(res[:, 1] ** 2))
    r = float(np.sum(res[:, 0] * res[:, 1]) / denom) if denom > 0 else 0.0
    r = max(min(r, 1.0), -1.0)
    dof = n - k - 2
    if dof < 1:
        return r, 1.0
    if abs(r) >= 1.0:
        return r, 0.0
    t = r * np.sqrt(dof / (1.0 - r * r))
    return r, float(2.0 * stats.t.sf(abs(t), dof))


PC_ALPHA = 0.01


def fit_pcmci(data: TimeSeriesTable, tau_max: int = 48, alpha: float = 0.05, max_conds: int = 5,
              pc_alpha: Optional[float] = PC_ALPHA) -> LaggedCausalGraph:
    """Run PC1 condition selection then MCI tests on the surviving links.

    Parameters
    ----------
    tau_max : int
        Largest lag considered; contemporaneous links are never tested.
    alpha : float
        Significance level of the MCI stage; every reported edge has ``p <= alpha``.
    max_conds : int
        At most this many strongest parents condition each PC1 test.
    pc_alpha : float or None
        Level at which PC1 prunes candidates; ``None`` reuses ``alpha``.
    """
    tau_max = int(tau_max)
    if tau_max < 1:
        raise ValueError("tau_max must be >= 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    pc_alpha = alpha if pc_alpha is None else pc_alpha
    N = len(data)
    if N <= tau_max + 30:
        raise DataError(f"need more than {tau_max + 30} samples for tau_max={tau_max}, got {N}")
    sd = data.samples.std(axis=0)
    keep = [i for i in range(len(data.variables)) if sd[i] > 1e-12 * max(1.0, abs(data.samples[:, i]).max())]
    excluded = tuple(sorted(data.variables[i] for i in range(len(data.variables)) if i not in keep))
    for name in excluded:
        warnings.warn(f"series {name!r} is constant and was excluded")
    order = sorted(keep, key=lambda i: data.variables[i])
    names = [data.variables[i] for i in order]
    X = data.samples[:, order]
    X = (X - X.mean(axis=0)) / X.std(axis=0)
    V = len(names)

    # every PC1 test uses the same tau_max cut-off; an MCI test is cut at the
    # largest lag it involves, since shifted source parents may exceed tau_max
    def lagged(var, lag, cut=tau_max):
        return X[cut - lag: N - lag, var]

    def stack(conds, cut=tau_max):
        if not conds:
            return None
        return np.column_stack([lagged(v, l, cut) for v, l in conds])

    parents = {}
    for j in range(V):
        y = lagged(j, 0)
        cands = [(i, lag) for i in range(V) for lag in range(1, tau_max + 1)]
        strength = {c: np.inf for c in cands}
        dim = 0
        while dim <= max_conds and dim <= len(cands) - 1:
            drop = set()
            for c in cands:
                conds = [d for d in cands if d != c][:dim]
                r, p = partial_corr_test(lagged(*c), y, stack(conds))
                if p > pc_alpha:
                    drop.add(c)
                else:
                    strength[c] = min(strength[c], abs(r))
            cands = [c for c in cands if c not in drop]
            cands.sort(key=lambda c: (-strength[c], names[c[0]], c[1]))
            dim += 1
        parents[j] = cands

    edges = []
    for j in range(V):
        for c in parents[j]:
            i, lag = c
            conds = [d for d in parents[j] if d != c]
            conds += [(v, l + lag) for v, l in parents[i][:max_conds] if (v, l + lag) not in conds]
            cut = max([tau_max] + [l for _, l in conds])
            r, p = partial_corr_test(lagged(i, lag, cut), lagged(j, 0, cut), stack(conds, cut))
            if p <= alpha:
                edges.append(LaggedEdge(names[j], names[i], lag, p, r))
    edges.sort()
    return LaggedCausalGraph(tuple(edges), tau_max, alpha, tuple(sorted(names + list(excluded))), excluded)


def query_parents(g: LaggedCausalGraph, target: str) -> list:
    """Edges into ``target`` as ``(source, lag, p)``, most significant first."""
    if target not in g.variables:
        raise KeyError(f"unknown variable {target!r}")
    found = [(e.source, e.lag, e.p_value) for e in g.edges if e.target == target]
    return sorted(found, key=lambda t: (t[2], t[0], t[1]))


def graph_to_dict(g: LaggedCausalGraph) -> dict:
    return {
        "tau_max": g.tau_max,
        "alpha": g.alpha,
        "nodes": [{"name": v, "excluded": v in g.excluded} for v in g.variables],
        "edges": [{"src": e.source, "dst": e.target, "lag": e.lag, "p_value": float(e.p_value),
                   "partial_correlation": float(e.partial_correlation)} for e in g.edges],
    }


def dump_causal_graph(g: LaggedCausalGraph) -> str:
    return yaml.safe_dump(graph_to_dict(g), sort_keys=False)


def load_causal_graph(document) -> LaggedCausalGraph:
    if hasattr(document, "read_text"):
        document = document.read_text(encoding="utf-8")
    doc = yaml.safe_load(document) if isinstance(document, str) else document
    try:
        nodes = doc["nodes"]
        variables = tuple(n["name"] for n in nodes)
        excluded = tuple(n["name"] for n in nodes if n.get("excluded"))
        edges = tuple(sorted(LaggedEdge(e["dst"], e["src"], int(e["lag"]), float(e["p_value"]),
                                        float(e.get("partial_correlation", 0.0))) for e in doc.get("edges") or []))
        g = LaggedCausalGraph(edges, int(doc["tau_max"]), float(doc["alpha"]), variables, excluded)
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed causal graph document: {exc}") from None
    for e in g.edges:
        if e.source not in variables or e.target not in variables:
            raise DataError(f"edge {e.source}->{e.target} references an unknown variable")
        if not 1 <= e.lag <= g.tau_max:
            raise DataError(f"edge {e.source}->{e.target}: lag {e.lag} outside 1..{g.tau_max}")
    return g


# ----------------------------------------------------------------------------
# baselines and deviation flags


@dataclass(frozen=True)
class LagBaseline:
    """``mu[var][lag]`` and ``sigma[var][lag]`` for lags ``0..tau_max``."""

    mu: Mapping
    sigma: Mapping
    tau_max: int

    def stats(self, var: str, lag: int):
        return self.mu[var][lag], self.sigma[var][lag]


def compute_baselines(data: TimeSeriesTable, tau_max: int) -> LagBaseline:
    """Mean and population deviation of ``x_j(t - lag)`` over its ``N - lag`` samples."""
    N = len(data)
    if tau_max >= N:
        raise DataError("tau_max must be smaller than the series length")
    mu, sigma = {}, {}
    for j, name in enumerate(data.variables):
        col = data.samples[:, j]
        mu[name] = [float(col[: N - lag].mean()) for lag in range(tau_max + 1)]
        sigma[name] = [float(col[: N - lag].std()) for lag in range(tau_max + 1)]
    return LagBaseline(mu, sigma, int(tau_max))


def dump_baselines(b: LagBaseline) -> str:
    doc = {"tau_max": b.tau_max,
           "variables": {v: {"mu": list(b.mu[v]), "sigma": list(b.sigma[v])} for v in sorted(b.mu)}}
    return yaml.safe_dump(doc, sort_keys=False)


def load_baselines(document) -> LagBaseline:
    if hasattr(document, "read_text"):
        document = document.read_text(encoding="utf-8")
    doc = yaml.safe_load(document) if isinstance(document, str) else document
    try:
        mu = {v: [float(a) for a in d["mu"]] for v, d in doc["variables"].items()}
        sigma = {v: [float(a) for a in d["sigma"]] for v, d in doc["variables"].items()}
        return LagBaseline(mu, sigma, int(doc["tau_max"]))
    except (KeyError, TypeError, AttributeError) as exc:
        raise DataError(f"malformed baseline document: {exc}") from None


@dataclass(frozen=True)
class ParentFlag:
    source: str
    lag: int
    value: float
    z_score: float
    active: bool


def deviation_flags(baseline: LagBaseline, history: Mapping[str, Sequence[float]],
                    parents: Sequence, threshold: float = 2.0) -> list:
    """Flag parents whose lagged value deviates from its baseline by more than 2 sigma.

    ``history[var]`` is a window ending at the current time ``t`` (last entry).
    A zero-deviation baseline flags any difference as active with an infinite
    z-score.
    """
    out = []
    for par in parents:
        source, lag = par[0], int(par[1])
        if source not in history:
            raise KeyError(f"history has no series {source!r}")
        series = np.asarray(history[source], dtype=float)
        if lag >= series.size:
            raise ValueError(f"lag {lag} exceeds history length {series.size} for {source!r}")
        if lag > baseline.tau_max:
            raise ValueError(f"lag {lag} exceeds baseline tau_max {baseline.tau_max}")
        value = float(series[-1 - lag])
        mu, sigma = baseline.stats(source, lag)
        dev = value - mu
        if sigma > 0:
            z = dev / sigma
            active = abs(dev) > threshold * sigma
        elif dev == 0:
            z, active = 0.0, False
        else:
            z, active = float(np.copysign(np.inf, dev)), True
        out.append(ParentFlag(source, lag, value, float(z), bool(active)))
    return out
