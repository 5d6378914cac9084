"""Scalar convex loss families with first/second derivatives and prox maps.

Each family evaluates elementwise on arrays of (y, u) pairs.  The minus
derivative -d1(y, u) generalizes the linear-model residual: for the square
loss it is exactly y - u.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit


class ResponseError(ValueError):
    """Response value outside the loss family's allowed set."""


def huber_clip(u):
    """Derivative of the Huber loss: clip to [-1, 1]."""
    return np.clip(u, -1.0, 1.0)


def _prox_newton_1d(d1, d2, gamma, x, tol=1e-12, max_iter=100):
    """Solve v + gamma * d1(v) = x elementwise by safeguarded Newton.

    Falls back to bisection halving whenever a Newton step leaves the
    current bracket.  Requires d1 increasing (convexity).
    """
    x = np.asarray(x, dtype=float)
    # v + gamma*d1(v) is increasing in v, so the root lies between x - gamma*M
    # and x + gamma*M for any bound M >= |d1|; grow the bracket adaptively.
    lo = x - gamma
    hi = x + gamma
    for _ in range(200):
        bad_lo = lo + gamma * d1(lo) > x
        bad_hi = hi + gamma * d1(hi) < x
        if not (bad_lo.any() or bad_hi.any()):
            break
        span = hi - lo
        lo = np.where(bad_lo, lo - span, lo)
        hi = np.where(bad_hi, hi + span, hi)
    v = 0.5 * (lo + hi)
    for _ in range(max_iter):
        f = v + gamma * d1(v) - x
        lo = np.where(f <= 0, v, lo)
        hi = np.where(f > 0, v, hi)
        fp = 1.0 + gamma * d2(v)
        step = f / fp
        v_new = v - step
        outside = (v_new <= lo) | (v_new >= hi)
        v_new = np.where(outside, 0.5 * (lo + hi), v_new)
        if np.max(np.abs(v_new - v)) <= tol:
            v = v_new
            break
        v = v_new
    return v


class Loss:
    """Family of convex losses, one per admissible response value."""

    #: smallest upper bound we report for sup |d2|; d1 is Lipschitz with it
    lipschitz_d1: float = 1.0
    #: sup over (y, u) of |d1|; np.inf when unbounded
    sup_d1: float = np.inf
    #: second derivative strictly positive and |d1| bounded by 1, as required
    #: by the unregularized theory; square/huber fail this
    smooth_unregularized_ok: bool = False

    name = "loss"

    def validate_response(self, y) -> None:
        raise NotImplementedError

    def value(self, y, u):
        raise NotImplementedError

    def d1(self, y, u):
        raise NotImplementedError

    def d2(self, y, u):
        raise NotImplementedError

    def prox(self, y, gamma, x):
        """prox[gamma * loss_y](x): minimizer of (x-v)^2/2 + gamma*loss_y(v)."""
        if gamma < 0:
            raise ValueError("prox scale gamma must be >= 0")
        if gamma == 0:
            return np.asarray(x, dtype=float).copy()
        return _prox_newton_1d(
            lambda v: self.d1(y, v), lambda v: self.d2(y, v), gamma, x
        )

    def psi(self, y, u):
        """Effective residual -d1(y, u)."""
        return -self.d1(y, u)

    def __repr__(self):
        return f"{type(self).__name__}()"


class SquareLoss(Loss):
    """loss_y(u) = (y - u)^2 / 2."""

    name = "square"
    lipschitz_d1 = 1.0
    sup_d1 = np.inf
    smooth_unregularized_ok = False

    def validate_response(self, y):
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise ResponseError("square loss needs finite responses")

    def value(self, y, u):
        return 0.5 * (np.asarray(y, float) - u) ** 2

    def d1(self, y, u):
        return np.asarray(u, float) - y

    def d2(self, y, u):
        return np.ones_like(np.broadcast_arrays(np.asarray(y, float), u)[1], dtype=float)

    def prox(self, y, gamma, x):
        if gamma < 0:
            raise ValueError("prox scale gamma must be >= 0")
        return (np.asarray(x, float) + gamma * np.asarray(y, float)) / (1.0 + gamma)


class HuberLoss(Loss):
    """loss_y(u) = H(y - u) with H(t) = t^2/2 on [-1, 1], |t| - 1/2 outside.

    The transition threshold is fixed at 1; rescale the data to move it.
    """

    name = "huber"
    lipschitz_d1 = 1.0
    sup_d1 = 1.0
    smooth_unregularized_ok = False

    def validate_response(self, y):
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise ResponseError("huber loss needs finite responses")

    def value(self, y, u):
        t = np.abs(np.asarray(y, float) - u)
        return np.where(t <= 1.0, 0.5 * t * t, t - 0.5)

    def d1(self, y, u):
        return -huber_clip(np.asarray(y, float) - u)

    def d2(self, y, u):
        return (np.abs(np.asarray(y, float) - u) <= 1.0).astype(float)

    def prox(self, y, gamma, x):
        if gamma < 0:
            raise ValueError("prox scale gamma must be >= 0")
        y = np.asarray(y, float)
        x = np.asarray(x, float)
        t = y - x
        inner = np.abs(t) <= 1.0 + gamma
        return np.where(inner, x + gamma * t / (1.0 + gamma), x + gamma * np.sign(t))


class LogisticLoss(Loss):
    """Logistic loss for binary labels in {0,1} or {-1,+1}.

    {0,1}: loss_y(u) = log(1 + e^u) - y u;  {-1,+1}: loss_y(u) = log(1 + e^{-yu}).
    The two codings give identical fits under y01 = (ypm + 1)/2.
    """

    lipschitz_d1 = 0.25
    sup_d1 = 1.0
    smooth_unregularized_ok = True

    def __init__(self, labels: str = "01"):
        if labels not in ("01", "pm1"):
            raise ValueError(f"labels must be '01' or 'pm1', got {labels!r}")
        self.labels = labels

    @property
    def name(self):
        return "logistic"

    def _to01(self, y):
        y = np.asarray(y, dtype=float)
        return (y + 1.0) / 2.0 if self.labels == "pm1" else y

    def validate_response(self, y):
        y = np.asarray(y, dtype=float)
        allowed = (-1.0, 1.0) if self.labels == "pm1" else (0.0, 1.0)
        if not np.all(np.isin(y, allowed)):
            raise ResponseError(f"logistic labels must lie in {allowed}")

    def value(self, y, u):
        u = np.asarray(u, dtype=float)
        return np.logaddexp(0.0, u) - self._to01(y) * u

    def d1(self, y, u):
        return expit(np.asarray(u, dtype=float)) - self._to01(y)

    def d2(self, y, u):
        s = expit(np.asarray(u, dtype=float))
        return s * (1.0 - s)

    def __repr__(self):
        return f"LogisticLoss(labels={self.labels!r})"


class BinomialLogisticLoss(Loss):
    """loss_y(u) = q log(1 + e^u) - y u for counts y in {0, ..., q}.

    For q >= 5 the derivative is q/4-Lipschitz, beyond the 1-Lipschitz
    regime of the theory; the family still evaluates fine.
    """

    smooth_unregularized_ok = True

    def __init__(self, q: int):
        if int(q) != q or q < 1:
            raise ValueError(f"q must be a positive integer, got {q}")
        self.q = int(q)
        self.lipschitz_d1 = self.q / 4.0
        self.sup_d1 = float(self.q)

    @property
    def name(self):
        return "binomial"

    def validate_response(self, y):
        y = np.asarray(y, dtype=float)
        if not np.all((y == np.round(y)) & (y >= 0) & (y <= self.q)):
            raise ResponseError(f"binomial counts must be integers in [0, {self.q}]")

    def value(self, y, u):
        u = np.asarray(u, dtype=float)
        return self.q * np.logaddexp(0.0, u) - np.asarray(y, float) * u

    def d1(self, y, u):
        return self.q * expit(np.asarray(u, dtype=float)) - np.asarray(y, float)

    def d2(self, y, u):
        s = expit(np.asarray(u, dtype=float))
        return self.q * s * (1.0 - s)

    def __repr__(self):
        return f"BinomialLogisticLoss(q={self.q})"


def make_loss(name: str, **params) -> Loss:
    """Loss factory keyed by the CLI/config names."""
    name = name.lower()
    if name == "square":
        return SquareLoss()
    if name == "huber":
        return HuberLoss()
    if name == "logistic":
        return LogisticLoss(labels=params.get("labels", "01"))
    if name == "binomial":
        return BinomialLogisticLoss(q=params["q"])
    raise ValueError(f"unknown loss {name!r}")
