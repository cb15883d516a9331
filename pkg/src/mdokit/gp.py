"""Gaussian-process regression with an anisotropic squared-exponential kernel.

Outputs are modeled zero-mean after standardization; the process variance is
profiled out of the likelihood, and lengthscales are calibrated by restarted
derivative-free maximization of the concentrated log-likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.linalg.lapack import dpotrf

from .local_opt import _nm_batch

_NUGGET_CAP = 1e-4
_MIN_PROCESS_VAR = 1e-12


class GpFitError(RuntimeError):
    """Raised when the kernel matrix stays numerically singular at the nugget cap."""


@dataclass(frozen=True)
class GpConfig:
    """Fitting controls.

    ``nugget`` is relative to unit output variance (outputs are standardized
    before fitting) and is escalated by decades up to 1e-4 on Cholesky
    failure.  ``lengthscale_bounds`` are log-space offsets applied to each
    standardized input dimension's range.  ``restart_evals`` caps the
    likelihood evaluations of each restart's local search; None picks a
    dimension-based default.
    """

    nugget: float = 1e-8
    n_restarts: int = 10
    lengthscale_bounds: tuple[float, float] = (math.log(1e-2), math.log(1e2))
    seed: int = 0
    restart_evals: Optional[int] = None

    def __post_init__(self) -> None:
        if self.nugget <= 0:
            raise ValueError("nugget must be positive")
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be >= 1")
        lo, hi = self.lengthscale_bounds
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ValueError("lengthscale_bounds must be finite with lower < upper")


def kernel(x, x2, lengthscales, variance) -> float:
    """Anisotropic squared-exponential covariance between two points."""
    x = np.asarray(x, dtype=float).reshape(-1)
    x2 = np.asarray(x2, dtype=float).reshape(-1)
    ell = np.asarray(lengthscales, dtype=float).reshape(-1)
    if x.size != x2.size or x.size != ell.size:
        raise ValueError("dimension mismatch")
    if np.any(ell <= 0):
        raise ValueError("lengthscales must be positive")
    if variance <= 0:
        raise ValueError("variance must be positive")
    r = (x - x2) / ell
    return float(variance * math.exp(-0.5 * float(r @ r)))


def _corr_matrix(X, lengthscales):
    Xl = X / lengthscales
    sq = np.sum(Xl * Xl, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (Xl @ Xl.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-0.5 * d2)


def _corr_cross(X, X2, lengthscales):
    Xl = X / lengthscales
    X2l = X2 / lengthscales
    d2 = (
        np.sum(Xl * Xl, axis=1)[:, None]
        + np.sum(X2l * X2l, axis=1)[None, :]
        - 2.0 * (Xl @ X2l.T)
    )
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-0.5 * d2)


def concentrated_nll(log_lengthscales, X, y, nugget) -> float:
    """Negative concentrated log-likelihood of a zero-mean unit-variance-profile GP.

    The process variance is replaced by its closed-form maximizer, so the
    value equals the negative Gaussian log-density of ``y`` under covariance
    sigma2_hat * (R + nugget * I).  Cholesky failure returns +inf.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    ell = np.exp(np.asarray(log_lengthscales, dtype=float).reshape(-1))
    n = X.shape[0]
    R = _corr_matrix(X, ell)
    R[np.diag_indices_from(R)] += nugget
    try:
        L = cholesky(R, lower=True)
    except np.linalg.LinAlgError:
        return float("inf")
    w = solve_triangular(L, y, lower=True)
    sigma2 = max(float(w @ w) / n, _MIN_PROCESS_VAR)
    log_det_half = float(np.sum(np.log(np.diag(L))))
    return 0.5 * n * (math.log(2.0 * math.pi) + 1.0 + math.log(sigma2)) + log_det_half


@dataclass
class GpModel:
    """A fitted surrogate; immutable after :func:`fit`.

    Training data and lengthscales are stored in standardized coordinates;
    predictions are de-standardized back to the original output scale.
    """

    X: np.ndarray
    y: np.ndarray
    lengthscales: np.ndarray
    process_variance: float
    chol: np.ndarray
    alpha: np.ndarray
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float
    nugget: float
    fit_info: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def predict_batch(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance at each row of ``Xq``, original scale."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        if Xq.shape[1] != self.dim:
            raise ValueError(f"query dimension {Xq.shape[1]} != training dimension {self.dim}")
        Xs = (Xq - self.x_mean) / self.x_scale
        r = _corr_cross(self.X, Xs, self.lengthscales)
        mu_std = r.T @ self.alpha
        v = solve_triangular(self.chol, r, lower=True, check_finite=False)
        var_std = self.process_variance * np.maximum(1.0 - np.sum(v * v, axis=0), 0.0)
        mu = self.y_mean + self.y_scale * mu_std
        var = (self.y_scale**2) * var_std
        return mu, var

    def predict(self, x) -> tuple[float, float]:
        mu, var = self.predict_batch(np.asarray(x, dtype=float).reshape(1, -1))
        return float(mu[0]), float(var[0])


def predict(model: GpModel, x) -> tuple[float, float]:
    """Posterior mean and non-negative variance at a single point."""
    return model.predict(x)


def _standardize(values, axis=None):
    mean = np.mean(values, axis=axis)
    scale = np.std(values, axis=axis)
    scale = np.where(scale > 0, scale, 1.0) if np.ndim(scale) else (scale if scale > 0 else 1.0)
    return (values - mean) / scale, mean, scale


def fit(X, y, config: GpConfig = GpConfig(), warm_start=None) -> GpModel:
    """Fit lengthscales by restarted local maximization of the concentrated likelihood.

    Restart starting points are drawn from the seeded generator uniformly in
    log-lengthscale space; ``warm_start`` lengthscales, when given, add one
    extra search start.  The final factorization escalates the nugget by
    decades (to at most 1e-4) if the kernel matrix is not positive definite.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    n, d = X.shape
    if y.size != n:
        raise ValueError("X and y row counts differ")
    if n < 2:
        raise ValueError("need at least 2 training rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("training data must be finite")

    Xs, x_mean, x_scale = _standardize(X, axis=0)
    ys, y_mean, y_scale = _standardize(y)

    ranges = Xs.max(axis=0) - Xs.min(axis=0)
    ranges = np.where(ranges > 0, ranges, 1.0)
    lo = config.lengthscale_bounds[0] + np.log(ranges)
    hi = config.lengthscale_bounds[1] + np.log(ranges)
    ls_bounds = np.column_stack([lo, hi])

    rng = np.random.default_rng(config.seed)
    starts = rng.uniform(lo, hi, size=(config.n_restarts, d))
    if warm_start is not None:
        ws = np.clip(np.log(np.asarray(warm_start, dtype=float).reshape(-1)), lo, hi)
        starts = np.vstack([starts, ws[None, :]])

    # distances are fixed during the search: precompute per-dimension squares
    diff = Xs[:, None, :] - Xs[None, :, :]
    d2_flat = (diff * diff).reshape(n * n, d)

    const = 0.5 * n * (math.log(2.0 * math.pi) + 1.0)

    def nll_batch(log_ells):
        out = np.empty(len(log_ells))
        for k, le in enumerate(log_ells):
            inv2 = 0.5 * np.exp(-2.0 * le)
            R = np.exp(-(d2_flat @ inv2)).reshape(n, n)
            R.flat[:: n + 1] += config.nugget
            L, info = dpotrf(R, lower=1, overwrite_a=1, clean=0)
            if info != 0:
                out[k] = np.inf
                continue
            w = solve_triangular(L, ys, lower=True, check_finite=False)
            sigma2 = max(float(w @ w) / n, _MIN_PROCESS_VAR)
            out[k] = const + 0.5 * n * math.log(sigma2) + float(np.sum(np.log(L.flat[:: n + 1])))
        return out

    start_nll = nll_batch(starts)
    budget = config.restart_evals if config.restart_evals is not None else min(4 * d + 16, 60)
    xb, fb, _, _ = _nm_batch(nll_batch, starts, ls_bounds, budget)
    best = int(np.argmin(fb))
    log_ell = xb[best]
    ell = np.exp(log_ell)

    nugget = config.nugget
    L = None
    while True:
        R = _corr_matrix(Xs, ell)
        R[np.diag_indices_from(R)] += nugget
        try:
            L = cholesky(R, lower=True)
            break
        except np.linalg.LinAlgError:
            nugget *= 10.0
            if nugget > _NUGGET_CAP * (1.0 + 1e-9):
                raise GpFitError(
                    f"kernel matrix singular for nugget up to {_NUGGET_CAP:g}"
                ) from None

    alpha = cho_solve((L, True), ys)
    w = solve_triangular(L, ys, lower=True)
    process_variance = max(float(w @ w) / n, _MIN_PROCESS_VAR)

    return GpModel(
        X=Xs,
        y=ys,
        lengthscales=ell,
        process_variance=process_variance,
        chol=L,
        alpha=alpha,
        x_mean=x_mean,
        x_scale=x_scale,
        y_mean=float(y_mean),
        y_scale=float(y_scale),
        nugget=nugget,
        fit_info={
            "start_nll": np.asarray(start_nll),
            "restart_nll": fb,
            "nll": float(fb[best]),
            "log_lengthscales": log_ell,
        },
    )
