"""Direct-transcription SQP for :class:`~xmpc.ocp.OcpSpec` problems.

States ``x_1..x_H`` and inputs ``u_0..u_{H-1}`` are the decision variables and
the dynamics enter as equality constraints.  Each SQP iteration linearizes the
dynamics and hard constraints, builds the exact Lagrangian Hessian stage by
stage from finite differences, and condenses the QP subproblem onto the input
step by eliminating the state step through the linearized dynamics

    dx_{k+1} = A_k dx_k + B_k du_k + c_k,      c_k = f(x_k, u_k, d_k) - x_{k+1}.

The condensed QP is solved with the dual active-set method in
:mod:`xmpc.qp`, so multipliers of inactive constraints are exactly zero.  An
L1 merit function with Armijo backtracking globalizes the iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .ocp import (HARD, INFEASIBLE, MAX_ITER, OPTIMAL, SOFT, ConstraintDef,
                  DecisionContext, OcpSolution, OcpSpec, check_context,
                  rollout, trajectory_cost, validate_spec)
from .qp import QPInfeasible, solve_qp

ALL = "all"
_FD_NOISE = 16.0 * np.finfo(float).eps  # rounding-noise multiplier of a central difference


@dataclass(frozen=True)
class SolverConfig:
    """SQP settings.

    Attributes
    ----------
    max_iterations : int
        SQP iteration cap; exceeding it yields status ``max-iter``.
    kkt_tolerance : float
        Bound on the scaled first-order residual for status ``optimal``.  The
        stationarity part is also accepted at the rounding-noise level of the
        finite-difference gradient when that level is larger.
    step_tolerance : float
        Input-change resolution used when comparing solutions (a relaxed
        re-solve counts as unchanged within ``10 * step_tolerance``).
    finite_difference_step : float
        Relative step for central-difference Jacobians.
    hessian_step : float
        Relative step for the second-difference Lagrangian Hessian.
    """

    max_iterations: int = 100
    kkt_tolerance: float = 1e-8
    step_tolerance: float = 1e-8
    finite_difference_step: float = 1e-6
    hessian_step: float = 1e-4

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        for name in ("kkt_tolerance", "step_tolerance", "finite_difference_step", "hessian_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class RelaxationDirective:
    """Remove a constraint, or widen a hard one by ``delta`` (``g - delta <= 0``)."""

    target: str
    stages: object = ALL
    mode: str = "remove"
    delta: float = 0.0

    def __post_init__(self):
        if self.mode not in ("remove", "shift"):
            raise ValueError(f"unknown relaxation mode {self.mode!r}")
        if not np.isfinite(self.delta):
            raise ValueError("relaxation shift must be finite")


class InfeasibleProblem(RuntimeError):
    pass


# ----------------------------------------------------------------------------
# stage-wise function evaluation


class _Stages:
    """Vectorized evaluation of every per-stage function of a spec.

    Stage ``k`` owns ``z_k = (x_k, u_k)``; the terminal stage ``H`` sees a zero
    input and the last forecast row.
    """

    def __init__(self, spec: OcpSpec, forecast):
        self.spec = spec
        H = spec.horizon
        self.n, self.m = spec.state_dim, spec.input_dim
        self.N = self.n + self.m
        d = np.asarray(forecast, dtype=float)
        self.D = np.vstack([d, d[-1:]])
        self.f = spec.batched(spec.dynamics)
        self.ell = spec.batched(spec.stage_cost)
        self.ellT = spec.batched(spec.terminal_cost)
        self.hard = spec.hard_constraints
        self.soft = spec.soft_constraints
        self.g = [spec.batched(c.evaluator) for c in self.hard]
        self.pi = [spec.batched(c.evaluator) for c in self.soft]
        stages = np.arange(H + 1)
        self.hard_mask = np.array([np.isin(stages, c.stages) for c in self.hard], dtype=bool).reshape(len(self.hard), H + 1)
        self.soft_mask = np.array([np.isin(stages, c.stages) for c in self.soft], dtype=bool).reshape(len(self.soft), H + 1)
        self.is_terminal = stages == H

    def _split(self, Z):
        return Z[..., : self.n], Z[..., self.n:]

    def _dist(self, Z):
        # Z has shape (H+1, P, N); broadcast the disturbance over P
        return self.D[:, None, :] if Z.ndim == 3 else self.D

    def objective(self, Z):
        x, u = self._split(Z)
        d = self._dist(Z)
        run = np.asarray(self.ell(x, u), dtype=float)
        term = np.asarray(self.ellT(x), dtype=float)
        term_mask = self.is_terminal.reshape((-1,) + (1,) * (Z.ndim - 2))
        val = np.where(term_mask, term, run)
        for pi, mask in zip(self.pi, self.soft_mask):
            val = val + mask.reshape(term_mask.shape) * np.asarray(pi(x, u, d), dtype=float)
        return val

    def dynamics(self, Z):
        x, u = self._split(Z)
        return np.asarray(self.f(x, u, self._dist(Z)), dtype=float)

    def constraints(self, Z):
        """Hard constraint values, shape ``(n_hard,) + Z.shape[:-1]``."""
        x, u = self._split(Z)
        d = self._dist(Z)
        if not self.g:
            return np.zeros((0,) + Z.shape[:-1])
        return np.stack([np.broadcast_to(np.asarray(g(x, u, d), dtype=float), Z.shape[:-1]) for g in self.g])

    def lagrangian(self, Z, nu, mu):
        """Per-stage Lagrangian ``obj_k + nu_k.f_k + sum_i mu_ik g_ik``."""
        val = self.objective(Z)
        expand = (slice(None),) + (None,) * (Z.ndim - 2)
        nu_full = np.vstack([nu, np.zeros((1, self.n))])
        val = val + np.einsum("k...n,kn->k...", self.dynamics(Z), nu_full) * (~self.is_terminal)[expand]
        if self.g:
            G = self.constraints(Z)
            val = val + np.einsum("ik...,ik->k...", G, mu * self.hard_mask)
        return val

    # -- derivatives ---------------------------------------------------------

    def gradients(self, Z, h_rel):
        """Central-difference Jacobians of objective, dynamics and constraints."""
        N = self.N
        h = h_rel * np.maximum(1.0, np.abs(Z))                       # (H+1, N)
        E = np.eye(N)
        P = np.concatenate([Z[:, None, :] + h[:, None, :] * E, Z[:, None, :] - h[:, None, :] * E], axis=1)
        denom = 2.0 * h                                              # (H+1, N)
        obj = self.objective(P)
        q = (obj[:, :N] - obj[:, N:]) / denom
        fx = self.dynamics(P)
        J = (fx[:, :N] - fx[:, N:]) / denom[:, :, None]              # (H+1, N, n)
        Jf = np.transpose(J, (0, 2, 1))                               # (H+1, n, N)
        if self.g:
            gv = self.constraints(P)
            Jg = (gv[:, :, :N] - gv[:, :, N:]) / denom[None]         # (n_hard, H+1, N)
        else:
            Jg = np.zeros((0, Z.shape[0], N))
        return q, Jf, Jg

    def hessian(self, Z, nu, mu, h_rel):
        """Second-difference Hessian of each stage Lagrangian, ``(H+1, N, N)``."""
        N = self.N
        h = h_rel * np.maximum(1.0, np.abs(Z))
        ii, jj = np.triu_indices(N)
        K = ii.size
        E = np.eye(N)
        hi = h[:, ii, None] * E[ii][None]
        hj = h[:, jj, None] * E[jj][None]
        base = Z[:, None, :]
        P = np.concatenate([base + hi + hj, base + hi - hj, base - hi + hj, base - hi - hj], axis=1)
        L = self.lagrangian(P, nu, mu)
        vals = (L[:, :K] - L[:, K:2 * K] - L[:, 2 * K:3 * K] + L[:, 3 * K:]) / (4.0 * h[:, ii] * h[:, jj])
        W = np.zeros((Z.shape[0], N, N))
        W[:, ii, jj] = vals
        W[:, jj, ii] = vals
        return W


def _psd(W):
    vals, vecs = np.linalg.eigh(W)
    vals = np.maximum(vals, 0.0)
    return np.einsum("kij,kj,klj->kil", vecs, vals, vecs)


# ----------------------------------------------------------------------------
# SQP


def _stack(states, inputs, m):
    U = np.vstack([inputs, np.zeros((1, m))])
    return np.hstack([states, U])


def solve(spec: OcpSpec, ctx: DecisionContext, cfg: Optional[SolverConfig] = None,
          initial_inputs=None) -> OcpSolution:
    """Solve ``spec`` from the measured state and forecast in ``ctx``.

    Returns an :class:`OcpSolution` whose ``multipliers`` hold one entry per
    hard constraint and stage in its range.  Status ``infeasible`` is returned
    (not raised) when a QP subproblem has no feasible point.

    Raises
    ------
    ValueError
        If ``spec`` fails :func:`validate_spec` or ``ctx`` has wrong shapes.
    """
    cfg = cfg or SolverConfig()
    report = validate_spec(spec)
    if not report.ok:
        raise ValueError("invalid spec: " + "; ".join(report))
    check_context(spec, ctx)
    return _sqp(spec, ctx, cfg, initial_inputs)


def _sqp(spec, ctx, cfg, initial_inputs=None):
    H, n, m = spec.horizon, spec.state_dim, spec.input_dim
    st = _Stages(spec, ctx.disturbance_forecast)
    lo, hi = spec.input_bounds[:, 0], spec.input_bounds[:, 1]
    x0 = ctx.measured_state
    if initial_inputs is None:
        U = np.tile(spec.input_neutral, (H, 1))
    else:
        U = np.clip(np.asarray(initial_inputs, dtype=float).reshape(H, m), lo, hi)
    X = rollout(spec, x0, U, ctx.disturbance_forecast)
    nh = len(st.hard)
    nu = np.zeros((H, n))
    mu = np.zeros((nh, H + 1))
    mu_b = np.zeros((H, m, 2))
    rho = 1.0
    trace = []
    status = MAX_ITER
    kkt = np.inf
    active_rows = []
    nU = H * m
    it = 0

    for it in range(1, cfg.max_iterations + 1):
        Z = _stack(X, U, m)
        q, Jf, Jg = st.gradients(Z, cfg.finite_difference_step)
        W = _psd(st.hessian(Z, nu, mu, cfg.hessian_step))
        A = Jf[:H, :, :n]
        B = Jf[:H, :, n:]
        F = st.dynamics(Z)[:H]
        defects = F - X[1:]
        gval = st.constraints(Z) if nh else np.zeros((0, H + 1))

        # condensing: dz_k = T_k dU + t_k
        T = np.zeros((H + 1, n + m, nU))
        t = np.zeros((H + 1, n + m))
        for k in range(H):
            T[k, n:, k * m:(k + 1) * m] = np.eye(m)
            T[k + 1, :n] = A[k] @ T[k, :n]
            T[k + 1, :n, k * m:(k + 1) * m] += B[k]
            t[k + 1, :n] = A[k] @ t[k, :n] + defects[k]
        WT = np.einsum("kij,kjl->kil", W, T)
        Gqp = np.einsum("kil,kim->lm", T, WT)
        aqp = np.einsum("kil,ki->l", T, np.einsum("kij,kj->ki", W, t) + q)
        Gqp = 0.5 * (Gqp + Gqp.T)
        Gqp[np.diag_indices(nU)] += 1e-10 * max(1.0, float(np.max(np.abs(np.diag(Gqp)))))

        rows, rhs, keys = [], [], []
        for i in range(nh):
            for k in np.flatnonzero(st.hard_mask[i]):
                rows.append(Jg[i, k] @ T[k])
                rhs.append(-gval[i, k] - Jg[i, k] @ t[k])
                keys.append((i, k))
        Uf = U.ravel()
        eye = np.eye(nU)
        Aqp = np.vstack(rows + [eye, -eye]) if rows else np.vstack([eye, -eye])
        bqp = np.concatenate([np.asarray(rhs, dtype=float), np.repeat(hi[None], H, 0).ravel() - Uf,
                              Uf - np.repeat(lo[None], H, 0).ravel()])
        try:
            res = solve_qp(Gqp, aqp, Aqp, bqp)
        except QPInfeasible as exc:
            trace.append(f"iter {it:3d} qp infeasible: {exc}")
            status = INFEASIBLE
            break
        dU = res.x
        lam = res.multipliers
        nc = len(keys)
        mu_qp = np.zeros_like(mu)
        for r, (i, k) in enumerate(keys):
            mu_qp[i, k] = lam[r]
        mub_qp = np.stack([lam[nc:nc + nU].reshape(H, m), lam[nc + nU:].reshape(H, m)], axis=-1)
        dz = np.einsum("kil,l->ki", T, dU) + t
        model_grad = np.einsum("kij,kj->ki", W, dz) + q
        nu_qp = _costates(model_grad, A, Jg, mu_qp, n, H)

        # first-order residual at the current iterate, with QP multiplier estimates
        nu_true = _costates(q, A, Jg, mu_qp, n, H)
        r_u = q[:H, n:] + np.einsum("kji,kj->ki", B, nu_true) + mub_qp[..., 0] - mub_qp[..., 1]
        if nh:
            r_u += np.einsum("ikj,ik->kj", Jg[:, :H, n:], mu_qp[:, :H])
        scale = max(1.0, float(np.max(np.abs(q))))
        viol = float(np.max(np.maximum(gval[st.hard_mask], 0.0), initial=0.0))
        comp = float(np.max(np.abs(mu_qp * gval * st.hard_mask), initial=0.0))
        # stationarity cannot be resolved below the rounding noise of the
        # central-difference gradient, roughly eps * |f| / h per entry
        noise = _FD_NOISE * float(np.max(np.abs(st.objective(Z)))) / cfg.finite_difference_step / scale
        stat = float(np.max(np.abs(r_u), initial=0.0)) / scale
        feas = max(float(np.max(np.abs(defects), initial=0.0)), viol, comp / scale)
        kkt = max(stat, feas)
        converged = stat <= max(cfg.kkt_tolerance, noise) and feas <= cfg.kkt_tolerance
        step = float(np.max(np.abs(dU), initial=0.0))
        active_rows = [keys[r] for r in range(nc) if lam[r] > 0]
        trace.append(f"iter {it:3d} |u|={np.linalg.norm(U):.6e} kkt={kkt:.3e} step={step:.3e} "
                     f"active={[(st.hard[i].id, int(k)) for i, k in active_rows]}")
        if converged:
            mu, mu_b, nu = mu_qp, mub_qp, nu_true
            status = OPTIMAL
            break

        # L1 merit line search
        mult_max = max(float(np.max(np.abs(nu_qp), initial=0.0)), float(np.max(mu_qp, initial=0.0)))
        rho = max(rho, 1.1 * mult_max + 1e-8)

        def merit(Xc, Uc):
            Zc = _stack(Xc, Uc, m)
            obj = float(np.sum(st.objective(Zc)))
            dfc = st.dynamics(Zc)[:H] - Xc[1:]
            pen = float(np.sum(np.abs(dfc)))
            if nh:
                pen += float(np.sum(np.maximum(st.constraints(Zc), 0.0) * st.hard_mask))
            return obj + rho * pen

        phi0 = merit(X, U)
        infeas0 = float(np.sum(np.abs(defects))) + float(np.sum(np.maximum(gval, 0.0) * st.hard_mask))
        slope = float(np.sum(q * dz)) - rho * infeas0
        # trial states come from a rollout, so the dynamics hold exactly along the search
        dUm = dU.reshape(H, m)
        alpha = 1.0
        for _ in range(40):
            Un = np.clip(U + alpha * dUm, lo, hi)
            Xn = rollout(spec, x0, Un, ctx.disturbance_forecast)
            if merit(Xn, Un) <= phi0 + 1e-4 * alpha * min(slope, 0.0):
                break
            alpha *= 0.5
        X, U = Xn, Un
        nu = nu + alpha * (nu_qp - nu)
        mu = mu + alpha * (mu_qp - mu)
        mu_b = mu_b + alpha * (mub_qp - mu_b)

    multipliers = {}
    for i, c in enumerate(st.hard):
        for k in c.stages:
            multipliers[(c.id, int(k))] = float(max(mu[i, k], 0.0)) if status != INFEASIBLE else 0.0
    total = trajectory_cost(spec, X, U, ctx.disturbance_forecast)
    return OcpSolution(inputs=U, states=X, multipliers=multipliers, total_cost=total, status=status,
                       bound_multipliers=np.maximum(mu_b, 0.0), iterations=it, kkt_residual=kkt,
                       trace=tuple(trace))



def _costates(grad, A, Jg, mu, n, H):
    """Dynamics multipliers from stationarity with respect to ``x_1..x_H``."""
    nu = np.zeros((H, n))
    gx = grad[:, :n].copy()
    if Jg.shape[0]:
        gx += np.einsum("ikj,ik->kj", Jg[:, :, :n], mu)
    nu[H - 1] = gx[H]
    for k in range(H - 1, 0, -1):
        nu[k - 1] = gx[k] + A[k].T @ nu[k]
    return nu


def write_trace(sol: OcpSolution, path) -> None:
    """Dump the per-iteration log of ``sol`` as line-oriented text."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"status {sol.status} iterations {sol.iterations} kkt {sol.kkt_residual:.3e}\n")
        for line in sol.trace:
            fh.write(line + "\n")


# ----------------------------------------------------------------------------
# relaxation


def _shift(c: ConstraintDef, delta: float) -> ConstraintDef:
    g = c.evaluator

    def shifted(x, u, d, _g=g, _dc=delta):
        return np.asarray(_g(x, u, d), dtype=float) - _dc

    bound = c.bound
    if c.sense == "upper":
        bound = c.bound + delta
    elif c.sense == "lower":
        bound = c.bound - delta
    return replace(c, evaluator=shifted, bound=bound)


def relax_spec(spec: OcpSpec, directives: Sequence[RelaxationDirective], allow_tighten=False) -> OcpSpec:
    """Return a copy of ``spec`` with ``directives`` applied; ``spec`` is untouched.

    Removing a subset of stages keeps the constraint on the others.  Shifting
    a subset splits the constraint, and the shifted part gets the id suffix
    ``~shift``.
    """
    lists = [list(spec.path_constraints), list(spec.terminal_constraints)]
    ids = {c.id for c in spec.constraints}
    for dv in directives:
        if dv.target not in ids:
            raise KeyError(f"unknown constraint {dv.target!r}")
        if dv.mode == "shift":
            if not allow_tighten and dv.delta < 0:
                raise ValueError(f"directive on {dv.target!r} tightens the constraint (delta={dv.delta})")
        for lst in lists:
            for pos, c in enumerate(list(lst)):
                if c is None or c.id != dv.target:
                    continue
                chosen = set(c.stages) if dv.stages == ALL else set(dv.stages) & set(c.stages)
                keep = tuple(k for k in c.stages if k not in chosen)
                hit = tuple(k for k in c.stages if k in chosen)
                new = []
                if keep:
                    new.append(replace(c, stages=keep))
                if dv.mode == "shift" and hit:
                    if c.kind != HARD:
                        raise ValueError("bound shifts apply to hard constraints only; remove soft ones")
                    sh = _shift(c, dv.delta)
                    new.append(replace(sh, stages=hit, id=c.id if not keep else c.id + "~shift"))
                lst[pos:pos + 1] = [new] if new else [None]
        lists = [[c for c in _flatten(lst) if c is not None] for lst in lists]
    return spec.with_constraints(lists[0], lists[1])


def _flatten(lst):
    for item in lst:
        if isinstance(item, list):
            yield from item
        else:
            yield item


def resolve_relaxed(spec: OcpSpec, ctx: DecisionContext, directives: Sequence[RelaxationDirective],
                    cfg: Optional[SolverConfig] = None, initial_inputs=None) -> OcpSolution:
    """Solve ``spec`` with constraints removed or widened; tightening is rejected.

    ``initial_inputs`` warm-starts the SQP, typically from the nominal solution.
    """
    relaxed = relax_spec(spec, directives)
    if not relaxed.constraints and np.all(~np.isfinite(relaxed.input_bounds)):
        relaxed = replace(relaxed, unconstrained=True)
    return solve(relaxed, ctx, cfg, initial_inputs)


def multiplier_sensitivity_check(spec: OcpSpec, ctx: DecisionContext, cid: str, dc: float,
                                 cfg: Optional[SolverConfig] = None, stage: Optional[int] = None,
                                 nominal: Optional[OcpSolution] = None):
    """Compare the reported multiplier with a central difference of ``J*``.

    The level ``c`` is taken in the tightening direction (``g + c <= 0``),
    so ``dJ*/dc`` equals the multiplier at a regular active point.

    Returns
    -------
    (float, float)
        ``(lambda_reported, dJ/dc)``.  With ``stage=None`` all stages of the
        constraint move together and the multipliers are summed.
    """
    cfg = cfg or SolverConfig()
    c = spec.constraint(cid)
    if c.kind != HARD:
        raise ValueError(f"{cid!r} is a soft constraint; it has no multiplier")
    sol = nominal or solve(spec, ctx, cfg)
    if sol.status != OPTIMAL:
        raise InfeasibleProblem(f"nominal solve ended with status {sol.status}")
    stages = c.stages if stage is None else (stage,)
    lam = float(sum(sol.multiplier(cid, k) for k in stages))
    values = []
    for sign in (+1.0, -1.0):
        dv = RelaxationDirective(cid, ALL if stage is None else (stage,), "shift", -sign * dc)
        s = solve(relax_spec(spec, [dv], allow_tighten=True), ctx, cfg)
        if s.status != OPTIMAL:
            raise InfeasibleProblem(f"perturbed solve ({sign:+.0f}) ended with status {s.status}")
        values.append(s.total_cost)
    return lam, (values[0] - values[1]) / (2.0 * dc)
