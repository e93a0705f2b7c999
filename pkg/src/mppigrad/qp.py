"""Convex QP lift of the box-constrained linear-quadratic problem.

The trajectory cost of an `LqrSpec` is an exact quadratic in the stacked
control vector once states are eliminated through x = M u + b.  This module
builds that quadratic, solves it with an accelerated projected-gradient /
augmented-Lagrangian reference solver (no external solver dependency), and
cross-checks the value with an independent second method before it is trusted
as an optimality-gap reference.  It also provides Euclidean projection onto
the joint box-plus-linear feasible set (used by the finite-difference
baseline), implemented with ADMM and a cached factorization so repeated
projections are cheap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import Bounds, LinearConstraint, minimize

from .errors import ConvergenceError, InfeasibleProblemError, NotSpdError
from .problems import LqrSpec

Array = np.ndarray


@dataclass(frozen=True)
class QpProblem:
    """minimize 1/2 u'Qu + c'u  over  lb <= u <= ub,  lin_lo <= A u <= lin_hi.

    `constant` is the affine offset dropped by the lift (1/2 b'Qbar b), so the
    original trajectory cost is value(u) + constant.
    """

    q: Array
    c: Array
    lb: Array
    ub: Array
    lin_mat: Optional[Array] = None
    lin_lo: Optional[Array] = None
    lin_hi: Optional[Array] = None
    constant: float = 0.0
    free_response: Optional[Array] = None

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        n = q.shape[0]
        object.__setattr__(self, "q", q)
        for name in ("c", "lb", "ub"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},), got {v.shape}")
            object.__setattr__(self, name, v)
        if not np.allclose(q, q.T, atol=1e-10):
            raise NotSpdError("Q_qp must be symmetric")
        if np.linalg.eigvalsh(q).min() < -1e-8:
            raise NotSpdError("Q_qp must be positive semidefinite")
        if self.lin_mat is not None:
            a = np.asarray(self.lin_mat, dtype=float)
            lo = np.asarray(self.lin_lo, dtype=float)
            hi = np.asarray(self.lin_hi, dtype=float)
            if a.ndim != 2 or a.shape[1] != n or lo.shape != (a.shape[0],) or hi.shape != lo.shape:
                raise ValueError("inconsistent linear constraint dimensions")
            object.__setattr__(self, "lin_mat", a)
            object.__setattr__(self, "lin_lo", lo)
            object.__setattr__(self, "lin_hi", hi)
        if self.free_response is not None:
            object.__setattr__(self, "free_response", np.asarray(self.free_response, dtype=float))

    @property
    def dim(self) -> int:
        return self.q.shape[0]

    def value(self, u: Array) -> float:
        u = np.asarray(u, dtype=float)
        return float(0.5 * u @ self.q @ u + self.c @ u)

    def violation(self, u: Array) -> float:
        """Infinity-norm constraint violation of a candidate point."""
        u = np.asarray(u, dtype=float)
        v = max(float(np.max(self.lb - u, initial=0.0)), float(np.max(u - self.ub, initial=0.0)))
        if self.lin_mat is not None:
            au = self.lin_mat @ u
            v = max(
                v,
                float(np.max(self.lin_lo - au, initial=0.0)),
                float(np.max(au - self.lin_hi, initial=0.0)),
            )
        return v


@dataclass(frozen=True)
class QpSolution:
    u_star: Array
    f_star: float
    kkt_residual: float
    iterations: int


def lift(spec: LqrSpec) -> QpProblem:
    """Eliminate states from an LqrSpec, yielding the equivalent QP.

    With x = (x_1..x_T) stacked, x = M u + b where block (t, j) of M is
    A^(t-1-j) B for j < t and b stacks the free response A^t x0.  Then

        J(u) = 1/2 u'(M'Qbar M + Rbar)u + (M'Qbar b)'u + 1/2 b'Qbar b,

    and the state box becomes the linear range constraint on M u.
    """
    n, m, T = spec.state_dim, spec.control_dim, spec.horizon
    powers = [np.eye(n)]
    for _ in range(T):
        powers.append(spec.a @ powers[-1])

    big_m = np.zeros((T * n, T * m))
    b = np.empty(T * n)
    for t in range(1, T + 1):
        b[(t - 1) * n : t * n] = powers[t] @ spec.x0
        for j in range(t):
            big_m[(t - 1) * n : t * n, j * m : (j + 1) * m] = powers[t - 1 - j] @ spec.b

    q_bar = np.kron(np.eye(T), spec.q)
    r_bar = np.kron(np.eye(T), spec.r)
    q_qp = big_m.T @ q_bar @ big_m + r_bar
    q_qp = 0.5 * (q_qp + q_qp.T)
    c = big_m.T @ (q_bar @ b)

    return QpProblem(
        q=q_qp,
        c=c,
        lb=np.tile(spec.u_min, T),
        ub=np.tile(spec.u_max, T),
        lin_mat=big_m,
        lin_lo=np.tile(spec.x_min, T) - b,
        lin_hi=np.tile(spec.x_max, T) - b,
        constant=float(0.5 * b @ q_bar @ b),
        free_response=b,
    )


def _fista_box(q, c, extra_grad, lip, u0, lb, ub, tol, max_iter):
    """Accelerated projected gradient on a box; returns (u, residual, iters).

    `extra_grad` adds the augmented-Lagrangian term's gradient (or nothing).
    The residual is the norm of the gradient mapping at unit step 1/lip,
    rescaled by lip so it is comparable to a plain gradient norm.
    """
    u = np.clip(u0, lb, ub)
    y = u.copy()
    t_acc = 1.0
    residual = np.inf
    for it in range(1, max_iter + 1):
        g = q @ y + c + extra_grad(y)
        u_next = np.clip(y - g / lip, lb, ub)
        residual = lip * float(np.max(np.abs(u_next - y)))
        # adaptive restart: drop momentum when it points uphill
        if (y - u_next) @ (u_next - u) > 0:
            t_acc = 1.0
            y = u_next
        else:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_acc**2))
            y = u_next + ((t_acc - 1.0) / t_next) * (u_next - u)
            t_acc = t_next
        u = u_next
        if residual <= tol:
            # evaluate the mapping at u itself for the reported residual
            g = q @ u + c + extra_grad(u)
            residual = lip * float(np.max(np.abs(np.clip(u - g / lip, lb, ub) - u)))
            if residual <= tol:
                return u, residual, it
    return u, residual, max_iter


def solve_reference(qp: QpProblem, tol: float = 1e-8, max_outer: int = 60) -> QpSolution:
    """Reference QP solve: FISTA on the box, augmented Lagrangian outside.

    Raises ConvergenceError (carrying the best iterate and its residual) if
    the tolerance is not met, and InfeasibleProblemError when the linear
    constraints appear inconsistent with the box (violation stalls while the
    penalty is driven to its cap).
    """
    lip_q = max(float(np.linalg.eigvalsh(qp.q).max()), 1e-12)
    if qp.lin_mat is None:
        u, res, its = _fista_box(
            qp.q, qp.c, lambda _u: 0.0, lip_q, np.zeros(qp.dim), qp.lb, qp.ub, tol, 20000
        )
        if res > tol:
            raise ConvergenceError("box QP did not reach tolerance", best=u, residual=res)
        return QpSolution(u_star=u, f_star=qp.value(u), kkt_residual=res, iterations=its)

    a = qp.lin_mat
    norm_a2 = float(np.linalg.norm(a, 2)) ** 2
    rho = max(lip_q / max(norm_a2, 1e-12), 1e-3)
    rho_cap = rho * 1e8
    lam_lo = np.zeros(a.shape[0])
    lam_hi = np.zeros(a.shape[0])
    u = np.clip(np.zeros(qp.dim), qp.lb, qp.ub)
    best = (np.inf, u, np.inf)  # (violation+residual, iterate, kkt residual)
    total_inner = 0
    prev_viol = np.inf

    for _ in range(max_outer):
        def al_grad(v, _a=a, _rho=rho, _lo=lam_lo, _hi=lam_hi):
            av = _a @ v
            up = np.maximum(0.0, av - qp.lin_hi + _hi / _rho)
            dn = np.maximum(0.0, qp.lin_lo - av + _lo / _rho)
            return _rho * (_a.T @ up) - _rho * (_a.T @ dn)

        lip = lip_q + rho * norm_a2
        u, _, its = _fista_box(
            qp.q, qp.c, al_grad, lip, u, qp.lb, qp.ub, max(0.1 * tol, 1e-12) * lip / lip_q, 5000
        )
        total_inner += its
        au = a @ u
        lam_hi = np.maximum(0.0, lam_hi + rho * (au - qp.lin_hi))
        lam_lo = np.maximum(0.0, lam_lo + rho * (qp.lin_lo - au))
        viol = qp.violation(u)
        # KKT residual of the original problem at (u, lambda)
        g = qp.q @ u + qp.c + a.T @ lam_hi - a.T @ lam_lo
        kkt = float(np.max(np.abs(np.clip(u - g, qp.lb, qp.ub) - u)))
        score = viol + kkt
        if score < best[0]:
            best = (score, u.copy(), max(viol, kkt))
        if viol <= tol and kkt <= tol:
            return QpSolution(
                u_star=u, f_star=qp.value(u), kkt_residual=max(viol, kkt), iterations=total_inner
            )
        if viol > 0.25 * prev_viol:
            rho = min(rho * 10.0, rho_cap)
        prev_viol = viol

    if best[0] > np.sqrt(tol) and rho >= rho_cap:
        raise InfeasibleProblemError(
            "linear constraints appear infeasible: violation "
            f"{best[0]:.3e} persists at penalty cap"
        )
    raise ConvergenceError(
        "augmented Lagrangian did not reach tolerance", best=best[1], residual=best[2]
    )


def solve_verified(qp: QpProblem, tol: float = 1e-8, agreement: float = 1e-6) -> QpSolution:
    """Solve twice by independent methods and insist the values agree.

    Route one is `solve_reference`; route two is an interior trust-region
    method started from a different point.  Disagreement beyond `agreement`
    (relative on the optimal value) raises instead of returning a number that
    would silently corrupt every optimality gap downstream.
    """
    ref = solve_reference(qp, tol=tol)

    x0 = np.clip(np.zeros(qp.dim), qp.lb, qp.ub)
    constraints = []
    if qp.lin_mat is not None:
        constraints.append(LinearConstraint(qp.lin_mat, qp.lin_lo, qp.lin_hi))
    res = minimize(
        lambda v: 0.5 * v @ qp.q @ v + qp.c @ v,
        x0,
        jac=lambda v: qp.q @ v + qp.c,
        hess=lambda v: qp.q,
        bounds=Bounds(qp.lb, qp.ub),
        constraints=constraints,
        method="trust-constr",
        options={"gtol": 1e-12, "xtol": 1e-14, "maxiter": 5000},
    )
    f_second = float(res.fun)
    gap = abs(ref.f_star - f_second) / (1.0 + abs(ref.f_star))
    if gap > agreement:
        raise ConvergenceError(
            f"independent QP routes disagree: {ref.f_star:.12g} vs {f_second:.12g}",
            best=ref.u_star,
            residual=gap,
        )
    return ref


class FeasibleSetProjector:
    """Euclidean projection onto {u: lb<=u<=ub, lin_lo<=A u<=lin_hi} via ADMM.

    The splitting is min 1/2|u-p|^2 s.t. G u = y, y in a box, with G the
    row-normalized stack of the identity and the linear constraint matrix.
    The (I + rho G'G) factorization is cached, so projecting many points
    against the same constraint set costs one Cholesky total.
    """

    def __init__(self, qp: QpProblem, rho: float = 4.0, tol: float = 1e-8, max_iter: int = 20000):
        self.tol = float(tol)
        self.max_iter = int(max_iter)
        self.rho = float(rho)
        n = qp.dim
        blocks = [np.eye(n)]
        los = [qp.lb]
        his = [qp.ub]
        if qp.lin_mat is not None:
            scale = np.linalg.norm(qp.lin_mat, axis=1)
            scale[scale == 0] = 1.0
            blocks.append(qp.lin_mat / scale[:, None])
            los.append(qp.lin_lo / scale)
            his.append(qp.lin_hi / scale)
        self.g = np.vstack(blocks)
        self.lo = np.concatenate(los)
        self.hi = np.concatenate(his)
        self._chol = cho_factor(np.eye(n) + self.rho * (self.g.T @ self.g))
        self._qp = qp

    def __call__(self, point: Array) -> Array:
        p = np.asarray(point, dtype=float)
        g, rho, alpha = self.g, self.rho, 1.7
        y = np.clip(g @ p, self.lo, self.hi)
        lam = np.zeros_like(y)
        u = p
        for _ in range(self.max_iter):
            u = cho_solve(self._chol, p + rho * (g.T @ (y - lam)))
            gu = g @ u
            gu_rel = alpha * gu + (1.0 - alpha) * y
            y_prev = y
            y = np.clip(gu_rel + lam, self.lo, self.hi)
            lam = lam + gu_rel - y
            primal = float(np.max(np.abs(gu - y)))
            dual = rho * float(np.max(np.abs(g.T @ (y - y_prev))))
            if primal <= self.tol and dual <= self.tol:
                return u
        raise ConvergenceError(
            "projection ADMM did not converge", best=u, residual=max(primal, dual)
        )


def project(qp: QpProblem, point: Array, tol: float = 1e-8) -> Array:
    """One-shot projection; build a FeasibleSetProjector for repeated use."""
    return FeasibleSetProjector(qp, tol=tol)(point)
