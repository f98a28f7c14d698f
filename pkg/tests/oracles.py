"""Independent reference constructions used by the tests.

Nothing here calls into the solver or the causal-discovery code: the QP
binding set is found by enumerating working sets and solving each KKT system
directly, and the VAR generators plant known lagged links.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from xmpc.ocp import HARD, ConstraintDef, DecisionContext, OcpSpec
from xmpc.pcmci import TimeSeriesTable


# ----------------------------------------------------------------------------
# strictly convex QPs with a known binding set


@dataclass(frozen=True)
class PlantedQP:
    """``min 0.5 x'Gx + a'x  s.t.  A x <= b`` built around a chosen optimum."""

    G: np.ndarray
    a: np.ndarray
    A: np.ndarray
    b: np.ndarray
    x_star: np.ndarray
    lam_star: np.ndarray
    binding: frozenset

    @property
    def n(self) -> int:
        return self.a.size

    @property
    def m(self) -> int:
        return self.b.size


def planted_qp(seed: int, max_vars: int = 8, max_cons: int = 6, lam_range=(0.1, 2.0),
               slack_range=(0.1, 1.0), max_cond: float = 1e4) -> PlantedQP:
    """Random QP whose optimum, multipliers and binding set are fixed in advance.

    Binding rows get multipliers drawn from ``lam_range`` (strict
    complementarity) and the remaining rows a slack drawn from
    ``slack_range``.  Binding rows are redrawn until they are well
    conditioned, so LICQ holds with margin.
    """
    rng = np.random.default_rng([seed, 7])
    n = int(rng.integers(2, max_vars + 1))
    m = int(rng.integers(1, max_cons + 1))
    n_bind = int(rng.integers(0, min(n, m) + 1))
    M = rng.normal(size=(n, n))
    G = M @ M.T + n * np.eye(n)
    while True:
        A = rng.normal(size=(m, n))
        bind = np.sort(rng.choice(m, n_bind, replace=False))
        if n_bind == 0 or np.linalg.cond(A[bind]) < max_cond:
            break
    x = rng.normal(size=n)
    b = A @ x + rng.uniform(*slack_range, size=m)
    b[bind] = A[bind] @ x
    lam = np.zeros(m)
    lam[bind] = rng.uniform(*lam_range, size=n_bind)
    a = -G @ x - A.T @ lam
    return PlantedQP(G, a, A, b, x, lam, frozenset(int(i) for i in bind))


def brute_force_binding(G, a, A, b, tol: float = 1e-9):
    """Enumerate working sets and return ``(x, lam, binding)`` of the KKT point.

    For each subset ``S`` with ``|S| <= n`` the equality-constrained KKT
    system is solved; the first subset whose solution is primal feasible with
    non-negative multipliers is the optimum (unique for strictly convex
    problems).  ``binding`` holds the rows with a strictly positive
    multiplier.
    """
    G, a, A, b = (np.asarray(v, dtype=float) for v in (G, a, A, b))
    n, m = a.size, b.size
    scale = 1.0 + np.abs(b).max(initial=0.0)
    for size in range(0, min(n, m) + 1):
        for S in itertools.combinations(range(m), size):
            S = list(S)
            K = np.zeros((n + size, n + size))
            K[:n, :n] = G
            K[:n, n:] = A[S].T
            K[n:, :n] = A[S]
            rhs = np.concatenate([-a, b[S]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            x, lam_S = sol[:n], sol[n:]
            if np.all(A @ x <= b + tol * scale) and np.all(lam_S >= -tol):
                lam = np.zeros(m)
                lam[S] = lam_S
                return x, lam, frozenset(i for i in S if lam[i] > tol)
    raise ValueError("no KKT point found; the QP is infeasible")


def qp_as_ocp(qp: PlantedQP):
    """One-stage OCP whose input is the QP variable and whose state is inert.

    Returns ``(spec, ctx)``.  Constraint ``c<i>`` is row ``i`` of ``A x <= b``.
    """
    G, a, A, b = qp.G, qp.a, qp.A, qp.b

    def row(i):
        return lambda x, u, d: u @ A[i] - b[i]

    cons = tuple(ConstraintDef(f"c{i}", HARD, (0,), row(i), float(b[i]), family="qp")
                 for i in range(qp.m))
    spec = OcpSpec(
        horizon=1, state_dim=1, input_dim=qp.n, disturbance_dim=1,
        dynamics=lambda x, u, d: x + 0.0 * u[..., :1],
        stage_cost=lambda x, u: 0.5 * np.einsum("...i,ij,...j->...", u, G, u) + u @ a,
        terminal_cost=lambda x: 0.0 * x[..., 0],
        path_constraints=cons, name="qp")
    ctx = DecisionContext(np.zeros(1), np.zeros((1, 1)))
    return spec, ctx


# ----------------------------------------------------------------------------
# lagged VAR benchmarks

VAR_SELF = frozenset({("X", "X", 1), ("Y", "Y", 1), ("Z", "Z", 1)})
VAR_PLANTED = frozenset({("X", "Y", 2), ("Y", "Z", 1), ("X", "Z", 3)})


def planted_var(seed: int, n: int = 2000, burn: int = 100) -> TimeSeriesTable:
    """Three-variable VAR with links X->Y (lag 2), Y->Z (lag 1), X->Z (lag 3)."""
    rng = np.random.default_rng(seed)
    x = np.zeros((n + burn, 3))
    e = rng.normal(size=x.shape)
    for t in range(3, n + burn):
        x[t, 0] = 0.5 * x[t - 1, 0] + e[t, 0]
        x[t, 1] = 0.4 * x[t - 1, 1] + 0.6 * x[t - 2, 0] + e[t, 1]
        x[t, 2] = 0.3 * x[t - 1, 2] + 0.5 * x[t - 1, 1] + 0.4 * x[t - 3, 0] + e[t, 2]
    return TimeSeriesTable(("X", "Y", "Z"), x[burn:])


def independent_ar(seed: int, n: int = 2000, phi: float = 0.5, k: int = 3, burn: int = 100) -> TimeSeriesTable:
    """``k`` mutually independent AR(1) series; only the lag-1 self links are real."""
    rng = np.random.default_rng([seed, 11])
    x = np.zeros((n + burn, k))
    e = rng.normal(size=x.shape)
    for t in range(1, n + burn):
        x[t] = phi * x[t - 1] + e[t]
    return TimeSeriesTable(tuple(f"S{i}" for i in range(k)), x[burn:])


def edge_set(graph) -> set:
    return {(e.source, e.target, e.lag) for e in graph.edges}
