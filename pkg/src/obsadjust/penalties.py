"""Convex penalty families: value, prox, curvature, and KKT subgradient checks.

Scaling conventions are explicit enum-like strings because the same tuning
parameter means different things under different normalizations; nothing
here defaults silently.
"""
from __future__ import annotations

import numpy as np


class KKTViolationError(RuntimeError):
    """X' psi / n falls outside the penalty subdifferential at beta."""

    def __init__(self, message, max_residual):
        super().__init__(message)
        self.max_residual = max_residual


class UnsupportedPenaltyError(ValueError):
    """Penalty has no computable sensitivity representation."""


def soft_threshold(x, t):
    """sign(x) * max(|x| - t, 0)."""
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


class Penalty:
    """Convex penalty g with g(0) <= g(b) for all b."""

    name = "penalty"
    #: True when g(b) = sum_j h_j(b_j)
    separable = True
    #: coefficient q of the smooth quadratic part q * ||b||^2 / 2, if any
    quad_coef = 0.0

    def value(self, b) -> float:
        raise NotImplementedError

    def prox(self, c: float, x: np.ndarray) -> np.ndarray:
        """prox[c * g](x), the coordinate-wise minimizer of ||x-v||^2/2 + c g(v)."""
        raise NotImplementedError

    def grad_smooth(self, b: np.ndarray) -> np.ndarray:
        """Gradient of the smooth part of g (the full gradient when g is smooth)."""
        return self.quad_coef * np.asarray(b, float)

    def curvature_diag(self, b: np.ndarray) -> np.ndarray:
        """Diagonal of the Hessian of the smooth part of g at b."""
        return np.full(np.asarray(b).shape[0], self.quad_coef)

    def active_set(self, b: np.ndarray) -> np.ndarray:
        """Coordinates that enter the sensitivity computation."""
        return np.arange(np.asarray(b).shape[0])

    def is_smooth(self) -> bool:
        return True

    def strong_convexity(self, sigma_op_norm: float) -> float:
        """Constant tau with (b-b')'(dg(b)-dg(b')) >= tau ||Sigma^{1/2}(b-b')||^2."""
        return self.quad_coef / sigma_op_norm if self.quad_coef > 0 else 0.0

    def subgrad_distance(self, b: np.ndarray, v: np.ndarray) -> float:
        """Infinity-norm distance from v to the subdifferential of g at b."""
        raise NotImplementedError


class NoPenalty(Penalty):
    """g = 0 (unregularized M-estimation)."""

    name = "none"

    def value(self, b):
        return 0.0

    def prox(self, c, x):
        return np.asarray(x, float).copy()

    def subgrad_distance(self, b, v):
        return float(np.max(np.abs(v))) if np.asarray(v).size else 0.0


class RidgePenalty(Penalty):
    """Quadratic penalty with an explicit scaling convention.

    ``per-p``:     g(b) = lam * ||b||^2 / (2p)
    ``per-p-alt``: g(b) = lam * ||b||^2 / p
    ``per-n``:     g(b) = lam * ||b||^2 / (2n)

    Writing g(b) = q ||b||^2 / 2, the KKT conditions read
    X' psi = n q beta, so per-p gives X' psi = (n/p) lam beta.
    """

    name = "ridge"
    SCALINGS = ("per-p", "per-p-alt", "per-n")

    def __init__(self, lam: float, scaling: str, n: int, p: int):
        if lam <= 0:
            raise ValueError("ridge lam must be positive")
        if scaling not in self.SCALINGS:
            raise ValueError(f"ridge scaling must be one of {self.SCALINGS}, got {scaling!r}")
        self.lam = float(lam)
        self.scaling = scaling
        self.n = int(n)
        self.p = int(p)
        if scaling == "per-p":
            self.quad_coef = lam / p
        elif scaling == "per-p-alt":
            self.quad_coef = 2.0 * lam / p
        else:
            self.quad_coef = lam / n

    def value(self, b):
        b = np.asarray(b, float)
        return 0.5 * self.quad_coef * float(b @ b)

    def prox(self, c, x):
        return np.asarray(x, float) / (1.0 + c * self.quad_coef)

    def subgrad_distance(self, b, v):
        return float(np.max(np.abs(v - self.quad_coef * np.asarray(b, float))))

    def kkt_multiplier(self, sigma_c: float) -> float:
        """Effective lambda in the isotropic simplified estimates.

        With Sigma = c I_p the KKT conditions give
        Sigma^{-1/2} X' psi / n = (q / sqrt(c)) beta, and the simplified
        ridge estimates use lam_eff = q / c (equal to lam under per-p
        scaling with c = 1/p).
        """
        return self.quad_coef / sigma_c

    def __repr__(self):
        return f"RidgePenalty(lam={self.lam}, scaling={self.scaling!r})"


class L1Penalty(Penalty):
    """g(b) = lam * s * ||b||_1 with explicit scaling s.

    ``per-sqrt-n``: s = 1/sqrt(n);  ``per-p``: s = 1/p;  ``raw``: s = 1.
    """

    name = "l1"
    SCALINGS = ("per-sqrt-n", "per-p", "raw")

    def __init__(self, lam: float, scaling: str, n: int, p: int):
        if lam <= 0:
            raise ValueError("l1 lam must be positive")
        if scaling not in self.SCALINGS:
            raise ValueError(f"l1 scaling must be one of {self.SCALINGS}, got {scaling!r}")
        self.lam = float(lam)
        self.scaling = scaling
        self.n = int(n)
        self.p = int(p)
        if scaling == "per-sqrt-n":
            self.level = lam / np.sqrt(n)
        elif scaling == "per-p":
            self.level = lam / p
        else:
            self.level = lam

    def value(self, b):
        return self.level * float(np.abs(np.asarray(b, float)).sum())

    def prox(self, c, x):
        return soft_threshold(np.asarray(x, float), c * self.level)

    def is_smooth(self):
        return False

    def active_set(self, b):
        return np.flatnonzero(np.asarray(b) != 0.0)

    def curvature_diag(self, b):
        return np.zeros(np.asarray(b).shape[0])

    def subgrad_distance(self, b, v):
        b = np.asarray(b, float)
        v = np.asarray(v, float)
        active = b != 0.0
        resid = np.where(
            active,
            np.abs(v - self.level * np.sign(b)),
            np.maximum(np.abs(v) - self.level, 0.0),
        )
        return float(np.max(resid)) if resid.size else 0.0

    def __repr__(self):
        return f"L1Penalty(lam={self.lam}, scaling={self.scaling!r})"


class ElasticNetPenalty(Penalty):
    """g(b) = lam1 * s1 * ||b||_1 + lam2 * ||b||^2.

    The l1 scaling s1 follows the L1Penalty conventions; the quadratic
    coefficient is raw (quad_coef = 2 lam2).
    """

    name = "elastic-net"

    def __init__(self, lam1: float, lam2: float, l1_scaling: str, n: int, p: int):
        if lam1 < 0 or lam2 <= 0:
            raise ValueError("elastic-net needs lam1 >= 0 and lam2 > 0")
        if l1_scaling not in L1Penalty.SCALINGS:
            raise ValueError(
                f"l1 scaling must be one of {L1Penalty.SCALINGS}, got {l1_scaling!r}"
            )
        self.lam1 = float(lam1)
        self.lam2 = float(lam2)
        self.l1_scaling = l1_scaling
        self.n = int(n)
        self.p = int(p)
        if l1_scaling == "per-sqrt-n":
            self.level = lam1 / np.sqrt(n)
        elif l1_scaling == "per-p":
            self.level = lam1 / p
        else:
            self.level = lam1
        self.quad_coef = 2.0 * lam2

    def value(self, b):
        b = np.asarray(b, float)
        return self.level * float(np.abs(b).sum()) + self.lam2 * float(b @ b)

    def prox(self, c, x):
        return soft_threshold(np.asarray(x, float), c * self.level) / (1.0 + c * self.quad_coef)

    def is_smooth(self):
        return False

    def active_set(self, b):
        return np.flatnonzero(np.asarray(b) != 0.0)

    def subgrad_distance(self, b, v):
        b = np.asarray(b, float)
        v = np.asarray(v, float)
        smooth = self.quad_coef * b
        active = b != 0.0
        resid = np.where(
            active,
            np.abs(v - smooth - self.level * np.sign(b)),
            np.maximum(np.abs(v) - self.level, 0.0),
        )
        return float(np.max(resid)) if resid.size else 0.0

    def __repr__(self):
        return (
            f"ElasticNetPenalty(lam1={self.lam1}, lam2={self.lam2}, "
            f"l1_scaling={self.l1_scaling!r})"
        )


class SeparablePenalty(Penalty):
    """g(b) = sum_j h(b_j) for a user-supplied twice-differentiable scalar h.

    ``funcs`` is a dict with callables ``value``, ``d1``, ``d2``, ``prox``;
    ``prox(c, x)`` must return the scalar prox of c*h elementwise.
    """

    name = "separable"

    def __init__(self, value, d1, d2, prox, strongly_convex_coef=0.0):
        self._value = value
        self._d1 = d1
        self._d2 = d2
        self._prox = prox
        self._sc = float(strongly_convex_coef)

    def value(self, b):
        return float(np.sum(self._value(np.asarray(b, float))))

    def prox(self, c, x):
        return self._prox(c, np.asarray(x, float))

    def grad_smooth(self, b):
        return self._d1(np.asarray(b, float))

    def curvature_diag(self, b):
        return self._d2(np.asarray(b, float))

    def strong_convexity(self, sigma_op_norm):
        return self._sc / sigma_op_norm if self._sc > 0 else 0.0

    def subgrad_distance(self, b, v):
        return float(np.max(np.abs(np.asarray(v, float) - self._d1(np.asarray(b, float)))))


def penalty_subgrad_from_kkt(fit, X: np.ndarray, penalty: Penalty, tol: float = 1e-6):
    """Return X' psi / n and verify it lies in the subdifferential of g at beta.

    The tolerance is relative to max(1, ||X'psi||_inf / n).  Raises
    KKTViolationError carrying the worst residual on failure.
    """
    v = X.T @ fit.psi / X.shape[0]
    scale = max(1.0, float(np.max(np.abs(v))) if v.size else 0.0)
    resid = penalty.subgrad_distance(fit.beta, v)
    if resid > tol * scale:
        raise KKTViolationError(
            f"KKT check failed: subgradient residual {resid:.3e} exceeds "
            f"{tol:.1e} * {scale:.3e}",
            max_residual=resid,
        )
    return v


def make_penalty(name: str, n: int, p: int, **params) -> Penalty:
    """Penalty factory keyed by the CLI/config names."""
    name = name.lower()
    if name == "none":
        return NoPenalty()
    if name == "ridge":
        return RidgePenalty(params["lam"], params["scaling"], n, p)
    if name == "l1":
        return L1Penalty(params["lam"], params["scaling"], n, p)
    if name == "elastic-net":
        return ElasticNetPenalty(
            params["lam1"], params["lam2"], params["l1_scaling"], n, p
        )
    raise ValueError(f"unknown penalty {name!r}")
