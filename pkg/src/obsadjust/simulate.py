"""Gaussian designs and single-index response generators.

Every sampler takes an explicit integer seed and draws from
``numpy.random.default_rng`` (PCG64), so datasets are bit-reproducible.
Responses depend on the design only through the projection ``X @ w`` plus
an independent latent draw.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.random import default_rng
from scipy.special import expit


class CovarianceError(ValueError):
    """Covariance specification is not symmetric positive definite."""


@dataclass(frozen=True)
class CovarianceSpec:
    """Covariance of the design rows.

    Either a scaled identity ``c * I_p`` (``kind="identity-scaled"``) or an
    explicit SPD matrix (``kind="explicit"``).  The Cholesky factor of an
    explicit matrix is computed once at construction; all downstream
    products (sampling, inverse norms, trace products) reuse it.
    """

    p: int
    kind: str = "identity-scaled"
    c: float = 1.0
    matrix: Optional[np.ndarray] = None
    _chol: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.p < 1:
            raise CovarianceError(f"dimension p must be >= 1, got {self.p}")
        if self.kind == "identity-scaled":
            if not np.isfinite(self.c) or self.c <= 0:
                raise CovarianceError(f"identity scale must be positive, got {self.c}")
        elif self.kind == "explicit":
            m = np.asarray(self.matrix, dtype=float)
            if m.shape != (self.p, self.p):
                raise CovarianceError(f"matrix shape {m.shape} != ({self.p}, {self.p})")
            if not np.allclose(m, m.T, atol=1e-10 * max(1.0, np.abs(m).max())):
                raise CovarianceError("explicit covariance must be symmetric")
            try:
                chol = np.linalg.cholesky(m)
            except np.linalg.LinAlgError as exc:
                raise CovarianceError("explicit covariance is not positive definite") from exc
            object.__setattr__(self, "matrix", m)
            object.__setattr__(self, "_chol", chol)
        else:
            raise CovarianceError(f"unknown covariance kind {self.kind!r}")

    # -- closed-form products ------------------------------------------------

    def quad_form(self, v: np.ndarray) -> float:
        """v' Sigma v."""
        if self.kind == "identity-scaled":
            return self.c * float(v @ v)
        return float(v @ (self.matrix @ v))

    def mul(self, v: np.ndarray) -> np.ndarray:
        """Sigma v."""
        if self.kind == "identity-scaled":
            return self.c * v
        return self.matrix @ v

    def inv_mul(self, v: np.ndarray) -> np.ndarray:
        """Sigma^{-1} v."""
        if self.kind == "identity-scaled":
            return v / self.c
        from scipy.linalg import cho_solve

        return cho_solve((self._chol, True), v)

    def inv_quad_form(self, v: np.ndarray) -> float:
        """v' Sigma^{-1} v  ==  ||Sigma^{-1/2} v||^2."""
        if self.kind == "identity-scaled":
            return float(v @ v) / self.c
        from scipy.linalg import solve_triangular

        z = solve_triangular(self._chol, v, lower=True)
        return float(z @ z)

    def omega_diag(self) -> np.ndarray:
        """Diagonal of Sigma^{-1}."""
        if self.kind == "identity-scaled":
            return np.full(self.p, 1.0 / self.c)
        from scipy.linalg import cho_solve

        return np.diag(cho_solve((self._chol, True), np.eye(self.p)))

    def op_norm(self) -> float:
        """Largest eigenvalue of Sigma."""
        if self.kind == "identity-scaled":
            return self.c
        return float(np.linalg.eigvalsh(self.matrix)[-1])

    def chol_factor(self) -> np.ndarray:
        """Lower Cholesky factor L with Sigma = L L'."""
        if self.kind == "identity-scaled":
            return np.sqrt(self.c) * np.eye(self.p)
        return self._chol

    def is_isotropic(self, c: Optional[float] = None, rtol: float = 1e-12) -> bool:
        """True when Sigma is a scaled identity (optionally with scale ``c``)."""
        if self.kind != "identity-scaled":
            return False
        return c is None or abs(self.c - c) <= rtol * max(self.c, c)


@dataclass(frozen=True)
class IndexVector:
    """Index direction normalized so that Var[x_i' w] = w' Sigma w = 1."""

    w: np.ndarray

    @property
    def p(self) -> int:
        return self.w.shape[0]


def normalize_index(w_raw: np.ndarray, sigma: CovarianceSpec) -> IndexVector:
    """Rescale ``w_raw`` so that the returned index satisfies w' Sigma w = 1."""
    w_raw = np.asarray(w_raw, dtype=float)
    if w_raw.shape != (sigma.p,):
        raise ValueError(f"index length {w_raw.shape} != ({sigma.p},)")
    norm2 = sigma.quad_form(w_raw)
    if norm2 <= 0.0:
        raise ValueError("cannot normalize the zero vector")
    return IndexVector(w=w_raw / np.sqrt(norm2))


def make_index(recipe: str, sigma: CovarianceSpec, **params) -> IndexVector:
    """Build a normalized index from a named recipe.

    Recipes:
      - ``sparse-equal``: ``s`` leading coordinates share one value, rest 0.
      - ``equispaced``: ``s`` leading coordinates equispaced in [lo, hi],
        rest 0 (the sparse grid used for L1 correlation experiments).
      - ``dense-equal``: all coordinates equal.
    """
    p = sigma.p
    w0 = np.zeros(p)
    if recipe == "sparse-equal":
        s = int(params["s"])
        if not 1 <= s <= p:
            raise ValueError(f"sparse-equal needs 1 <= s <= p, got s={s}")
        w0[:s] = 1.0
    elif recipe == "equispaced":
        s = int(params["s"])
        lo = float(params.get("lo", 0.5))
        hi = float(params.get("hi", 4.0))
        if not 1 <= s <= p:
            raise ValueError(f"equispaced needs 1 <= s <= p, got s={s}")
        w0[:s] = np.linspace(lo, hi, s)
    elif recipe == "dense-equal":
        w0[:] = 1.0
    else:
        raise ValueError(f"unknown index recipe {recipe!r}")
    return normalize_index(w0, sigma)


@dataclass(frozen=True)
class LinkSpec:
    """Conditional law of y_i given the projection u_i = x_i' w.

    Kinds and parameters:
      - ``linear``: y = signal * u + noise, ``noise`` in {"gaussian", "cauchy"}
        with standard deviation ``sigma`` in the Gaussian case.  Cauchy noise
        is generated as tan(pi (U - 1/2)) for U uniform; heavy tails are
        intentional and not truncated.
      - ``logistic``: binary response with P(success) = sigmoid(signal * u);
        ``labels`` selects the {0,1} or {-1,+1} coding.
      - ``one-bit``: y = u_i * sign(x_i' w) with flip probability
        P(u_i = -1) = ``flip_prob``.
      - ``poisson``: y ~ Poisson(exp(u)).
      - ``binomial``: y ~ Binomial(q, sigmoid(signal * u)).
    """

    kind: str
    signal: float = 1.0
    noise: str = "gaussian"
    sigma: float = 1.0
    flip_prob: float = 0.0
    q: int = 1
    labels: str = "01"

    def __post_init__(self):
        if self.kind not in ("linear", "logistic", "one-bit", "poisson", "binomial"):
            raise ValueError(f"unknown link kind {self.kind!r}")
        if self.kind == "linear" and self.noise not in ("gaussian", "cauchy"):
            raise ValueError(f"unknown linear noise {self.noise!r}")
        if self.kind in ("linear", "logistic", "binomial") and self.signal <= 0:
            raise ValueError("signal must be positive")
        if self.kind == "one-bit" and not 0.0 <= self.flip_prob < 1.0:
            raise ValueError("flip probability must lie in [0, 1)")
        if self.kind == "binomial" and self.q < 1:
            raise ValueError("binomial q must be a positive integer")
        if self.labels not in ("01", "pm1"):
            raise ValueError(f"unknown label coding {self.labels!r}")


@dataclass(frozen=True)
class Truth:
    """Ground truth carried alongside simulated data for oracle evaluation."""

    w: np.ndarray
    sigma: CovarianceSpec
    beta_star: Optional[np.ndarray] = None


@dataclass(frozen=True)
class Dataset:
    """Design matrix, responses, and optional ground truth."""

    X: np.ndarray
    y: np.ndarray
    truth: Optional[Truth] = None

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def sample_design(spec: CovarianceSpec, n: int, seed: int) -> np.ndarray:
    """n iid rows from N(0, Sigma), reproducible given the seed."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    rng = default_rng(seed)
    Z = rng.standard_normal((n, spec.p))
    if spec.kind == "identity-scaled":
        return np.sqrt(spec.c) * Z
    return Z @ spec._chol.T


def sample_response(X: np.ndarray, w: IndexVector, link: LinkSpec, seed: int) -> np.ndarray:
    """Draw y from the single-index law defined by ``link``.

    y depends on X only through u = X @ w, so two designs with the same
    projection produce identical responses under the same seed.
    """
    if X.shape[1] != w.p:
        raise ValueError(f"design has {X.shape[1]} columns but index has {w.p}")
    u = X @ w.w
    n = u.shape[0]
    rng = default_rng(seed)
    if link.kind == "linear":
        if link.noise == "gaussian":
            eps = link.sigma * rng.standard_normal(n)
        else:
            eps = np.tan(np.pi * (rng.uniform(size=n) - 0.5))
        return link.signal * u + eps
    if link.kind == "logistic":
        y = (rng.uniform(size=n) < expit(link.signal * u)).astype(float)
        if link.labels == "pm1":
            y = 2.0 * y - 1.0
        return y
    if link.kind == "one-bit":
        signs = np.where(u >= 0, 1.0, -1.0)
        flips = np.where(rng.uniform(size=n) < link.flip_prob, -1.0, 1.0)
        return flips * signs
    if link.kind == "poisson":
        return rng.poisson(np.exp(u)).astype(float)
    # binomial
    return rng.binomial(link.q, expit(link.signal * u)).astype(float)


def make_dataset(
    sigma: CovarianceSpec,
    w: IndexVector,
    link: LinkSpec,
    n: int,
    seed: int,
) -> Dataset:
    """Sample a full dataset; design and response streams are split off one seed."""
    seq = np.random.SeedSequence(seed)
    x_seed, y_seed = seq.spawn(2)
    X = sample_design(sigma, n, x_seed)
    y = sample_response(X, w, link, y_seed)
    beta_star = link.signal * w.w if link.kind in ("linear", "logistic", "binomial") else None
    return Dataset(X=X, y=y, truth=Truth(w=w.w, sigma=sigma, beta_star=beta_star))
