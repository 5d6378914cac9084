"""Solvers for convex M-estimation to a certified KKT tolerance.

Three algorithms cover the penalty families: damped Newton for smooth
penalties, FISTA for anything with a prox, and IRLS coordinate descent
with working-set restriction for l1 / elastic-net.  ``fit_coercive``
minimizes the guard-modified objective that stays coercive on separable
data.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .losses import Loss
from .penalties import Penalty, NoPenalty, soft_threshold


class ConvergenceError(RuntimeError):
    """Solver failed to reach the KKT tolerance; carries the iterate trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class SeparableDataError(ConvergenceError):
    """Objective has no minimizer (iterates diverge); advises the coercive guard."""


@dataclass(frozen=True)
class SolverConfig:
    algorithm: str = "auto"  # auto | newton | prox-gradient | coordinate-descent
    max_iters: int = 200
    kkt_tol: float = 1e-8
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    max_line_search: int = 50
    coercive_K: Optional[float] = None

    def __post_init__(self):
        if self.kkt_tol <= 0:
            raise ValueError("kkt_tol must be positive")
        if self.algorithm not in ("auto", "newton", "prox-gradient", "coordinate-descent"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")


@dataclass
class FitResult:
    """Solution of the penalized M-estimation problem.

    ``psi`` is the effective residual -loss.d1(y, X beta) and ``d2_diag``
    the per-observation curvature loss.d2(y, X beta); both are
    recomputable from beta.
    """

    beta: np.ndarray
    psi: np.ndarray
    d2_diag: np.ndarray
    active_set: np.ndarray
    kkt_residual: float
    converged: bool
    guard_active: bool = False
    n_iter: int = 0
    objective: float = np.nan
    loss: Optional[Loss] = None
    penalty: Optional[Penalty] = None
    trace: list = field(default_factory=list, repr=False)


def objective_value(X, y, loss: Loss, penalty: Penalty, b) -> float:
    """(1/n) sum_i loss(y_i, x_i'b) + g(b)."""
    return float(np.mean(loss.value(y, X @ b))) + penalty.value(b)


def kkt_residual(fit: FitResult, dataset, loss: Loss, penalty: Penalty) -> float:
    """Relative infinity-norm distance from X'psi/n to the subdifferential of g."""
    X = dataset.X
    psi = loss.psi(dataset.y, X @ fit.beta)
    return _kkt_from_state(X, psi, fit.beta, penalty)


def _kkt_from_state(X, psi, b, penalty: Penalty) -> float:
    v = X.T @ psi / X.shape[0]
    scale = max(1.0, float(np.max(np.abs(v))) if v.size else 0.0)
    return penalty.subgrad_distance(b, v) / scale


_DIVERGENCE_LIMIT = 1e6  # on ||X b||^2 / n; unregularized fits that pass it have no minimizer


def _line_search(f, b, direction, f0, slope, cfg):
    """Backtracking Armijo; returns (step, new_value) or (None, f0)."""
    t = 1.0
    for _ in range(cfg.max_line_search):
        fn = f(b + t * direction)
        if np.isfinite(fn) and fn <= f0 + cfg.armijo_c * t * slope:
            return t, fn
        t *= cfg.backtrack
    return None, f0


def _fit_newton(X, y, loss, penalty, cfg, beta0):
    n, p = X.shape
    b = np.zeros(p) if beta0 is None else np.asarray(beta0, float).copy()
    f = lambda bb: objective_value(X, y, loss, penalty, bb)
    trace = []
    for it in range(cfg.max_iters):
        u = X @ b
        psi = loss.psi(y, u)
        kkt = _kkt_from_state(X, psi, b, penalty)
        fval = float(np.mean(loss.value(y, u))) + penalty.value(b)
        trace.append((it, fval, kkt))
        if kkt <= cfg.kkt_tol:
            return b, kkt, it, fval, trace
        if float(u @ u) / n > _DIVERGENCE_LIMIT:
            raise SeparableDataError(
                "iterates diverge (||X b||^2/n exceeded 1e6): the objective has no "
                "minimizer, e.g. separable classification data; re-fit with the "
                "coercive guard (fit_coercive / --coercive-K)",
                trace,
            )
        grad = -(X.T @ psi) / n + penalty.grad_smooth(b)
        d = loss.d2(y, u)
        H = (X.T * d) @ X / n
        curv = penalty.curvature_diag(b)
        H[np.diag_indices_from(H)] += curv
        # ridge-of-last-resort damping when the Hessian is numerically singular
        damp = 0.0
        base = max(np.trace(H) / p, 1e-12)
        for _ in range(12):
            try:
                cf = cho_factor(H + damp * np.eye(p), lower=True)
                break
            except np.linalg.LinAlgError:
                damp = base * 1e-10 if damp == 0.0 else damp * 100.0
        else:
            raise ConvergenceError("Hessian factorization failed", trace)
        direction = -cho_solve(cf, grad)
        slope = float(grad @ direction)
        if slope > 0:  # damping destroyed descent; fall back to gradient
            direction = -grad
            slope = -float(grad @ grad)
        t, _ = _line_search(f, b, direction, fval, slope, cfg)
        if t is None:
            # no decrease along the Newton direction: either converged to
            # rounding or genuinely stuck
            if kkt <= 10 * cfg.kkt_tol:
                return b, kkt, it, fval, trace
            raise ConvergenceError(
                f"line search failed at iteration {it} (kkt={kkt:.3e})", trace
            )
        b = b + t * direction
    u = X @ b
    kkt = _kkt_from_state(X, loss.psi(y, u), b, penalty)
    if kkt <= cfg.kkt_tol:
        return b, kkt, cfg.max_iters, f(b), trace
    if float(u @ u) / n > 0.01 * _DIVERGENCE_LIMIT:
        raise SeparableDataError(
            "no convergence and ||X b||^2/n keeps growing; data may be separable, "
            "re-fit with the coercive guard (fit_coercive / --coercive-K)",
            trace,
        )
    raise ConvergenceError(
        f"Newton did not reach kkt_tol={cfg.kkt_tol:.1e} in {cfg.max_iters} "
        f"iterations (kkt={kkt:.3e})",
        trace,
    )


def _power_op_norm_sq(X, iters=30, seed=0):
    """Largest eigenvalue of X'X via power iterations."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(X.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = X.T @ (X @ v)
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v = w / lam
    return lam


def _fit_prox_gradient(X, y, loss, penalty, cfg, beta0):
    n, p = X.shape
    b = np.zeros(p) if beta0 is None else np.asarray(beta0, float).copy()
    lip = loss.lipschitz_d1 * _power_op_norm_sq(X) / n
    step = 1.0 / max(lip, 1e-12)
    fsmooth = lambda bb: float(np.mean(loss.value(y, X @ bb)))
    z = b.copy()
    t_acc = 1.0
    fb = fsmooth(b) + penalty.value(b)
    trace = []
    max_iters = max(cfg.max_iters, 2000)
    for it in range(max_iters):
        u = X @ z
        psi = loss.psi(y, u)
        grad = -(X.T @ psi) / n
        fz = float(np.mean(loss.value(y, u)))
        # backtracking on the smooth majorization at z
        s = step
        for _ in range(60):
            b_new = penalty.prox(s, z - s * grad)
            diff = b_new - z
            quad = fz + float(grad @ diff) + float(diff @ diff) / (2 * s)
            if fsmooth(b_new) <= quad + 1e-12 * max(1.0, abs(quad)):
                break
            s *= 0.5
        fb_new = fsmooth(b_new) + penalty.value(b_new)
        if fb_new > fb:  # adaptive restart
            z = b.copy()
            t_acc = 1.0
            continue
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_acc**2))
        z = b_new + ((t_acc - 1.0) / t_new) * (b_new - b)
        b, fb, t_acc = b_new, fb_new, t_new
        if it % 10 == 0 or it == max_iters - 1:
            kkt = _kkt_from_state(X, loss.psi(y, X @ b), b, penalty)
            trace.append((it, fb, kkt))
            if kkt <= cfg.kkt_tol:
                return b, kkt, it, fb, trace
    kkt = _kkt_from_state(X, loss.psi(y, X @ b), b, penalty)
    if kkt <= cfg.kkt_tol:
        return b, kkt, max_iters, fb, trace
    raise ConvergenceError(
        f"proximal gradient did not reach kkt_tol={cfg.kkt_tol:.1e} "
        f"(kkt={kkt:.3e})",
        trace,
    )


def _cd_quadratic_pass(XF, d, grad0, b, b_new, v, cols, level, q2, col_curv):
    """One cyclic sweep of coordinate minimization on the local quadratic model.

    Maintains v = X (b_new - b).  Returns the largest coordinate move.
    """
    max_move = 0.0
    n = XF.shape[0]
    for j in cols:
        xj = XF[:, j]
        old = b_new[j]
        v_minus = v if old == b[j] else v - xj * (old - b[j])
        cj = grad0[j] + (xj @ (d * v_minus)) / n - col_curv[j] * b[j]
        denom = col_curv[j] + q2
        if denom <= 1e-12:
            denom = 1e-12
        t = soft_threshold(-cj, level) / denom
        if t != old:
            v = v_minus + xj * (t - b[j])
            b_new[j] = t
            move = abs(t - old)
            if move > max_move:
                max_move = move
        elif old != b[j]:
            v = v_minus + xj * (old - b[j])
    return v, max_move


def _fit_cd(X, y, loss, penalty, cfg, beta0):
    """IRLS outer loop with coordinate descent on the quadratic model.

    Hard zeros: the soft-threshold writes exact 0.0, so the active set is
    unambiguous.  A monotone line search on the true objective guards the
    quadratic model (needed for the Huber loss, whose curvature is 0/1).
    """
    n, p = X.shape
    XF = np.asfortranarray(X)
    b = np.zeros(p) if beta0 is None else np.asarray(beta0, float).copy()
    level = getattr(penalty, "level", 0.0)
    q2 = penalty.quad_coef
    f = lambda bb: objective_value(X, y, loss, penalty, bb)
    fval = f(b)
    trace = []
    for outer in range(cfg.max_iters):
        u = X @ b
        psi = loss.psi(y, u)
        kkt = _kkt_from_state(X, psi, b, penalty)
        trace.append((outer, fval, kkt))
        if kkt <= cfg.kkt_tol:
            return b, kkt, outer, fval, trace
        d = loss.d2(y, u)
        grad0 = -(X.T @ psi) / n
        col_curv = ((XF * XF).T @ d) / n
        b_new = b.copy()
        v = np.zeros(n)
        all_cols = np.arange(p)
        v, _ = _cd_quadratic_pass(XF, d, grad0, b, b_new, v, all_cols, level, q2, col_curv)
        working = np.flatnonzero(b_new != 0.0)
        inner_tol = max(1e-13, 1e-3 * kkt) * (1.0 + float(np.max(np.abs(b_new), initial=0.0)))
        for _ in range(100):
            v, move = _cd_quadratic_pass(
                XF, d, grad0, b, b_new, v, working, level, q2, col_curv
            )
            if move <= inner_tol:
                break
        delta = b_new - b
        if not np.any(delta):
            raise ConvergenceError(
                f"coordinate descent stalled at kkt={kkt:.3e}", trace
            )
        # monotone step on the true objective
        t = 1.0
        accepted = False
        for _ in range(cfg.max_line_search):
            cand = b + t * delta
            fc = f(cand)
            if fc <= fval - 1e-14 * max(1.0, abs(fval)) or fc < fval:
                b, fval, accepted = cand, fc, True
                break
            t *= cfg.backtrack
        if not accepted:
            if kkt <= 10 * cfg.kkt_tol:
                return b, kkt, outer, fval, trace
            raise ConvergenceError(
                f"coordinate descent line search failed (kkt={kkt:.3e})", trace
            )
        if t < 1.0:
            # partial steps break exact zeros; re-threshold tiny coefficients
            b[np.abs(b) < 1e-14] = 0.0
    kkt = _kkt_from_state(X, loss.psi(y, X @ b), b, penalty)
    if kkt <= cfg.kkt_tol:
        return b, kkt, cfg.max_iters, fval, trace
    raise ConvergenceError(
        f"coordinate descent did not reach kkt_tol={cfg.kkt_tol:.1e} "
        f"(kkt={kkt:.3e})",
        trace,
    )


def fit(
    dataset,
    loss: Loss,
    penalty: Penalty,
    cfg: SolverConfig = SolverConfig(),
    beta0: Optional[np.ndarray] = None,
) -> FitResult:
    """Solve the penalized M-estimation problem to cfg.kkt_tol.

    Algorithm "auto" uses Newton for smooth penalties and coordinate
    descent otherwise.  Raises ConvergenceError (with the iterate trace)
    on failure and SeparableDataError when the unpenalized objective has
    no minimizer.
    """
    X, y = dataset.X, dataset.y
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    loss.validate_response(y)
    algo = cfg.algorithm
    if algo == "auto":
        algo = "newton" if penalty.is_smooth() else "coordinate-descent"
    if algo == "newton":
        if not penalty.is_smooth():
            raise ValueError("newton requires a smooth penalty; use coordinate-descent")
        b, kkt, it, fval, trace = _fit_newton(X, y, loss, penalty, cfg, beta0)
    elif algo == "prox-gradient":
        b, kkt, it, fval, trace = _fit_prox_gradient(X, y, loss, penalty, cfg, beta0)
    else:
        b, kkt, it, fval, trace = _fit_cd(X, y, loss, penalty, cfg, beta0)
    u = X @ b
    return FitResult(
        beta=b,
        psi=loss.psi(y, u),
        d2_diag=loss.d2(y, u),
        active_set=penalty.active_set(b),
        kkt_residual=kkt,
        converged=True,
        guard_active=False,
        n_iter=it,
        objective=fval,
        loss=loss,
        penalty=penalty,
        trace=trace,
    )


# -- coercive modification ----------------------------------------------------


def guard_h(t):
    """Smoothstep ramp: 0 below 0, 3t^2 - 2t^3 on [0,1], 1 above."""
    t = np.asarray(t, dtype=float)
    return np.where(t < 0.0, 0.0, np.where(t > 1.0, 1.0, 3.0 * t**2 - 2.0 * t**3))


def guard_h_prime(t):
    t = np.asarray(t, dtype=float)
    return np.where((t < 0.0) | (t > 1.0), 0.0, 6.0 * t - 6.0 * t**2)


def guard_H(t):
    """Antiderivative of guard_h with guard_H(0) = 0."""
    t = np.asarray(t, dtype=float)
    mid = t**3 - 0.5 * t**4
    return np.where(t < 0.0, 0.0, np.where(t > 1.0, t - 0.5, mid))


def fit_coercive(dataset, loss: Loss, K: float, cfg: SolverConfig = SolverConfig()) -> FitResult:
    """Minimize (1/n) sum_i loss_i(x_i'b) + H((||Xb||^2/n - K)/2).

    The added term vanishes on {||Xb||^2/n <= K}, so when the returned
    solution satisfies that bound (guard_active=False) it also minimizes
    the plain unregularized objective.  For losses with |d1| <= 1 the
    solution always satisfies ||Xb||^2/n <= K + 2.
    """
    X, y = dataset.X, dataset.y
    n, p = X.shape
    if p >= n:
        raise ValueError(f"coercive fit needs p < n, got p={p}, n={n}")
    if K <= 0:
        raise ValueError("guard level K must be positive")
    loss.validate_response(y)

    def split(b):
        u = X @ b
        t = 0.5 * (float(u @ u) / n - K)
        return u, t

    def f(b):
        u, t = split(b)
        return float(np.mean(loss.value(y, u))) + float(guard_H(t))

    b = np.zeros(p)
    trace = []
    kkt = np.inf
    for it in range(cfg.max_iters):
        u, tval = split(b)
        psi = loss.psi(y, u)
        hval = float(guard_h(tval))
        xtxb = X.T @ u  # equals X'X b
        grad = -(X.T @ psi) / n + hval * xtxb / n
        scale = max(1.0, float(np.max(np.abs(X.T @ psi))) / n)
        kkt = float(np.max(np.abs(grad))) / scale
        fval = f(b)
        trace.append((it, fval, kkt))
        if kkt <= cfg.kkt_tol:
            break
        d = loss.d2(y, u)
        H = (X.T * d) @ X / n + (hval / n) * (X.T @ X)
        hp = float(guard_h_prime(tval))
        if hp != 0.0:
            H += np.outer(xtxb, xtxb) * (hp / n**2)
        damp = 0.0
        base = max(np.trace(H) / p, 1e-12)
        for _ in range(12):
            try:
                cf = cho_factor(H + damp * np.eye(p), lower=True)
                break
            except np.linalg.LinAlgError:
                damp = base * 1e-10 if damp == 0.0 else damp * 100.0
        else:
            raise ConvergenceError("Hessian factorization failed", trace)
        direction = -cho_solve(cf, grad)
        slope = float(grad @ direction)
        if slope > 0:
            direction = -grad
            slope = -float(grad @ grad)
        t_step, _ = _line_search(f, b, direction, fval, slope, cfg)
        if t_step is None:
            if kkt <= 10 * cfg.kkt_tol:
                break
            raise ConvergenceError(
                f"coercive fit line search failed (kkt={kkt:.3e})", trace
            )
        b = b + t_step * direction
    else:
        u, tval = split(b)
        psi = loss.psi(y, u)
        if kkt > cfg.kkt_tol:
            raise ConvergenceError(
                f"coercive fit did not reach kkt_tol={cfg.kkt_tol:.1e} "
                f"(kkt={kkt:.3e})",
                trace,
            )
    u, tval = split(b)
    pred_norm = float(u @ u) / n
    guard_active = pred_norm > K
    if loss.sup_d1 <= 1.0 and pred_norm > K + 2.0 + 1e-8:
        raise RuntimeError(
            f"guard invariant violated: ||X b||^2/n = {pred_norm:.6f} > K + 2"
        )
    return FitResult(
        beta=b,
        psi=loss.psi(y, u),
        d2_diag=loss.d2(y, u),
        active_set=np.arange(p),
        kkt_residual=kkt,
        converged=True,
        guard_active=bool(guard_active),
        n_iter=len(trace),
        objective=f(b),
        loss=loss,
        penalty=NoPenalty(),
        trace=trace,
    )
