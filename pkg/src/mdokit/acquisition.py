"""Expected improvement and its numerically stable logarithmic form."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
# Inner constant of the middle regime: log(sqrt(2*pi)/2). Folding the 1/2 of
# erfc into the exponent keeps the log1mexp argument negative on the whole
# middle range.
_HALF_LOG_HALF_PI = 0.5 * math.log(math.pi / 2.0)
_Z_DEEP = -1.0 / math.sqrt(np.finfo(float).eps)
_NEG_ULP = np.nextafter(0.0, -1.0)


@dataclass(frozen=True)
class AcquisitionInput:
    """Posterior summary feeding an improvement-based acquisition.

    Fields may be scalars or broadcastable arrays; ``sigma`` is a standard
    deviation and must be non-negative everywhere.
    """

    mu: object
    sigma: object
    best: object

    def __post_init__(self) -> None:
        if np.any(np.asarray(self.sigma, dtype=float) < 0):
            raise ValueError("sigma must be non-negative")


def erfcx(z):
    """Scaled complementary error function exp(z^2) * erfc(z).

    Positive everywhere and overflow-free for large positive z.
    """
    return special.erfcx(z)


def log1mexp(z):
    """log(1 - exp(z)) for z < 0, stable on both sides of -log 2."""
    z = np.asarray(z, dtype=float)
    if np.any(z >= 0):
        raise ValueError("log1mexp requires z < 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        small = np.log(-np.expm1(z))       # |z| small: 1 - e^z ~ -z
        large = np.log1p(-np.exp(z))       # |z| large: e^z ~ 0
    out = np.where(z > -math.log(2.0), small, large)
    return float(out) if out.ndim == 0 else out


def _phi(z):
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def log_h(z):
    """Stable evaluation of log(phi(z) + z * Phi(z)) for any finite z.

    Three regimes: the naive formula above -1, an erfcx/log1mexp expansion
    down to -1/sqrt(machine eps), and the quadratic asymptote beyond.  The
    log1mexp argument is clamped one ulp below zero against rounding at the
    deep end of the middle regime.
    """
    z = np.asarray(z, dtype=float)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    out = np.empty_like(z)

    near = z > -1.0
    deep = z <= _Z_DEEP
    mid = ~near & ~deep

    if np.any(near):
        zn = z[near]
        out[near] = np.log(_phi(zn) + zn * special.ndtr(zn))
    if np.any(mid):
        zm = z[mid]
        inner = np.log(special.erfcx(-zm / math.sqrt(2.0)) * np.abs(zm)) + _HALF_LOG_HALF_PI
        inner = np.minimum(inner, _NEG_ULP)
        out[mid] = -0.5 * zm * zm - _HALF_LOG_2PI + log1mexp(inner)
    if np.any(deep):
        zd = z[deep]
        out[deep] = -0.5 * zd * zd - _HALF_LOG_2PI - 2.0 * np.log(np.abs(zd))

    return float(out[0]) if scalar else out


def expected_improvement(inp: AcquisitionInput):
    """Expected amount by which a draw at the query would beat ``best``.

    Degenerate points (sigma == 0) contribute the deterministic improvement
    max(0, best - mu).  Always non-negative.
    """
    mu, sigma, best = np.broadcast_arrays(
        np.asarray(inp.mu, dtype=float),
        np.asarray(inp.sigma, dtype=float),
        np.asarray(inp.best, dtype=float),
    )
    scalar = mu.ndim == 0
    mu, sigma, best = np.atleast_1d(mu), np.atleast_1d(sigma), np.atleast_1d(best)
    imp = best - mu
    out = np.maximum(imp, 0.0)
    pos = sigma > 0
    if np.any(pos):
        zz = imp[pos] / sigma[pos]
        out[pos] = imp[pos] * special.ndtr(zz) + sigma[pos] * _phi(zz)
    out = np.maximum(out, 0.0)
    return float(out[0]) if scalar else out


def log_expected_improvement(inp: AcquisitionInput):
    """log of expected improvement, finite even where the plain form underflows.

    Points with sigma == 0 return -inf: the posterior is fully determined
    there, so they can never win an acquisition maximization.
    """
    mu, sigma, best = np.broadcast_arrays(
        np.asarray(inp.mu, dtype=float),
        np.asarray(inp.sigma, dtype=float),
        np.asarray(inp.best, dtype=float),
    )
    scalar = mu.ndim == 0
    mu, sigma, best = np.atleast_1d(mu), np.atleast_1d(sigma), np.atleast_1d(best)
    out = np.full(mu.shape, -np.inf)
    pos = sigma > 0
    if np.any(pos):
        zz = (best[pos] - mu[pos]) / sigma[pos]
        out[pos] = log_h(zz) + np.log(sigma[pos])
    return float(out[0]) if scalar else out
