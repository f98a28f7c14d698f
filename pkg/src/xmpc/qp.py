"""Dense strictly convex QP solver (dual active-set, Goldfarb & Idnani 1983).

Solves::

    min  0.5 x'Gx + a'x   s.t.  A x <= b

with ``G`` positive definite.  The dual method starts from the unconstrained
minimizer and adds violated constraints one at a time while keeping the
multipliers of the working set non-negative, so the returned multipliers are
exactly zero off the active set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular


class QPInfeasible(RuntimeError):
    pass


@dataclass
class QPResult:
    x: np.ndarray
    multipliers: np.ndarray
    active: list
    iterations: int
    status: str = "optimal"


def solve_qp(G, a, A=None, b=None, tol=1e-11, max_iter=None) -> QPResult:
    G = np.asarray(G, dtype=float)
    a = np.asarray(a, dtype=float)
    n = a.size
    if A is None or np.size(A) == 0:
        A = np.zeros((0, n))
        b = np.zeros(0)
    A = np.asarray(A, dtype=float).reshape(-1, n)
    b = np.asarray(b, dtype=float).ravel()
    m = A.shape[0]
    L = np.linalg.cholesky(G)

    def lsolve(v):
        return solve_triangular(L, v, lower=True, check_finite=False)

    def ltsolve(v):
        return solve_triangular(L.T, v, lower=False, check_finite=False)

    x = -ltsolve(lsolve(a))
    norms = np.linalg.norm(A, axis=1)
    norms[norms == 0.0] = 1.0
    finite = np.isfinite(b)
    active: list[int] = []
    M = np.zeros((n, 0))          # L^{-1} N for the working set, N = -A[active].T
    u = np.zeros(0)
    max_iter = max_iter or 50 * (n + m) + 100
    it = 0

    while True:
        viol = np.where(finite, (A @ x - np.where(finite, b, 0.0)) / norms, -np.inf)
        if active:
            viol[active] = -np.inf
        p = int(np.argmax(viol)) if m else -1
        if m == 0 or viol[p] <= tol * max(1.0, abs(b[p]) / norms[p]):
            break
        n_p = -A[p]
        w = lsolve(n_p)
        u_plus = np.append(u, 0.0)
        while True:
            it += 1
            if it > max_iter:
                lam = _expand(m, active, u)
                return QPResult(x, lam, list(active), it, "max-iter")
            if active:
                gram = M.T @ M
                try:
                    r = cho_solve(cho_factor(gram, check_finite=False), M.T @ w, check_finite=False)
                except np.linalg.LinAlgError:
                    r = np.linalg.lstsq(gram, M.T @ w, rcond=None)[0]
                z = ltsolve(w - M @ r)
            else:
                r = np.zeros(0)
                z = ltsolve(w)
            # dual step bound: first working-set multiplier to hit zero
            t1, k_drop = np.inf, -1
            for j in range(len(active)):
                if r[j] > 1e-14:
                    ratio = u_plus[j] / r[j]
                    if ratio < t1:
                        t1, k_drop = ratio, j
            zn = float(z @ n_p)
            if len(active) < n and zn > 1e-11 * float(w @ w):
                slack = float(n_p @ x + b[p])   # n_p'x - (-b_p) < 0 while violated
                t2 = -slack / zn
            else:
                t2 = np.inf
            if not np.isfinite(t1) and not np.isfinite(t2):
                raise QPInfeasible(f"constraint {p} cannot be satisfied")
            if not np.isfinite(t2):
                u_plus[:-1] -= t1 * r
                u_plus[-1] += t1
                u_plus = np.delete(u_plus, k_drop)
                del active[k_drop]
                M = np.delete(M, k_drop, axis=1)
                continue
            t = min(t1, t2)
            x = x + t * z
            u_plus[:-1] -= t * r
            u_plus[-1] += t
            if t2 <= t1:
                active.append(p)
                M = np.column_stack([M, w])
                u = np.maximum(u_plus, 0.0)
                break
            u_plus = np.delete(u_plus, k_drop)
            del active[k_drop]
            M = np.delete(M, k_drop, axis=1)

    if m and np.max(np.where(finite, (A @ x - np.where(finite, b, 0.0)) / norms, -np.inf)) > 1e-6 * (1.0 + np.max(np.abs(x))):
        raise QPInfeasible("working set lost feasibility; constraints are inconsistent")
    lam = _expand(m, active, u)
    return QPResult(x, lam, list(active), it)


def _expand(m, active, u):
    lam = np.zeros(m)
    if active:
        lam[np.asarray(active)] = u[: len(active)]
    return lam
