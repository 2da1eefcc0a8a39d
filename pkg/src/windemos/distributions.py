"""Standard normal helpers and the normal distribution truncated below at zero.

All functions broadcast over numpy arrays. Ratios of normal CDF values are
evaluated in log space so that strongly negative standardized locations do not
underflow.
"""

from dataclasses import dataclass

import numpy as np
from scipy import special

from .exceptions import DomainError

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
_INV_SQRT_PI = 1.0 / np.sqrt(np.pi)
_FAST_PATH_MIN_ALPHA = -5.0

# scipy.special supplies the accurate standard normal primitives.
norm_cdf = special.ndtr
log_norm_cdf = special.log_ndtr
norm_ppf = special.ndtri


def norm_pdf(x):
    """Standard normal density."""
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x - _LOG_SQRT_2PI)


def log_norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return -0.5 * x * x - _LOG_SQRT_2PI


def log_norm_cdf_diff(a, b):
    """Return ``log(Phi(b) - Phi(a))`` for ``a <= b`` without cancellation.

    When both arguments sit in the upper tail the difference is rewritten as
    ``Phi(-a) - Phi(-b)``.
    """
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    upper = a > 0
    hi = np.where(upper, -a, b)
    lo = np.where(upper, -b, a)
    log_hi = special.log_ndtr(hi)
    log_lo = special.log_ndtr(lo)
    with np.errstate(divide="ignore"):
        return log_hi + np.log1p(-np.exp(log_lo - log_hi))


@dataclass(frozen=True)
class TruncatedNormal:
    """Normal law with location ``location`` and scale ``scale`` restricted to [0, inf).

    ``location`` and ``scale`` may be scalars or broadcast-compatible arrays;
    every scale must be strictly positive.
    """

    location: object
    scale: object

    def __post_init__(self):
        scale = np.asarray(self.scale, dtype=float)
        location = np.asarray(self.location, dtype=float)
        if not np.all(np.isfinite(location)):
            raise DomainError("location must be finite")
        if not np.all(scale > 0) or not np.all(np.isfinite(scale)):
            raise DomainError("scale must be finite and strictly positive")

    @property
    def standardized_location(self):
        return np.asarray(self.location, dtype=float) / np.asarray(self.scale, dtype=float)

    def cdf(self, y):
        return tn_cdf(self, y)

    def pdf(self, y):
        return tn_pdf(self, y)

    def quantile(self, tau):
        return tn_quantile(self, tau)

    def mean(self):
        return tn_mean(self)

    def median(self):
        return tn_quantile(self, 0.5)


def _params(d):
    mu = np.asarray(d.location, dtype=float)
    sigma = np.asarray(d.scale, dtype=float)
    return mu, sigma


def _scalar_or_array(x):
    x = np.asarray(x)
    return x[()] if x.ndim == 0 else x


def tn_cdf(d, y):
    """Cumulative distribution function, zero for ``y <= 0``."""
    mu, sigma = _params(d)
    y = np.asarray(y, dtype=float)
    alpha = mu / sigma
    z = (y - mu) / sigma
    pos = y > 0
    # Clip z at the truncation point so the log difference is always defined.
    z_safe = np.where(pos, np.maximum(z, -alpha), -alpha)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_num = log_norm_cdf_diff(-alpha, z_safe)
        out = np.exp(log_num - special.log_ndtr(alpha))
    out = np.where(pos, np.minimum(out, 1.0), 0.0)
    return _scalar_or_array(out)


def tn_sf(d, y):
    """Survival function ``1 - cdf``; exact in the upper tail."""
    mu, sigma = _params(d)
    y = np.asarray(y, dtype=float)
    alpha = mu / sigma
    z = (y - mu) / sigma
    out = np.exp(special.log_ndtr(-z) - special.log_ndtr(alpha))
    out = np.where(y > 0, np.minimum(out, 1.0), 1.0)
    return _scalar_or_array(out)


def tn_pdf(d, y):
    """Density; zero below the truncation point."""
    mu, sigma = _params(d)
    y = np.asarray(y, dtype=float)
    z = (y - mu) / sigma
    logp = log_norm_pdf(z) - np.log(sigma) - special.log_ndtr(mu / sigma)
    out = np.where(y >= 0, np.exp(logp), 0.0)
    return _scalar_or_array(out)


def tn_quantile(d, tau):
    """Quantile function.

    Raises
    ------
    DomainError
        If any ``tau`` lies outside the open interval (0, 1).
    """
    tau = np.asarray(tau, dtype=float)
    if np.any(~(tau > 0) | ~(tau < 1)):
        raise DomainError("quantile level must lie in the open interval (0, 1)")
    mu, sigma = _params(d)
    alpha = mu / sigma
    log_mass = special.log_ndtr(alpha)
    # Target p = Phi(-alpha) + tau * Phi(alpha); its complement is (1 - tau) * Phi(alpha).
    log_p = np.logaddexp(special.log_ndtr(-alpha), np.log(tau) + log_mass)
    log_q = np.log1p(-tau) + log_mass
    upper = log_q < log_p
    with np.errstate(over="ignore", invalid="ignore"):
        x_lower = special.ndtri_exp(np.minimum(log_p, 0.0))
        x_upper = -special.ndtri_exp(np.minimum(log_q, 0.0))
    x = np.where(upper, x_upper, x_lower)
    out = np.maximum(mu + sigma * x, 0.0)
    return _scalar_or_array(out)


def inverse_mills(alpha):
    """``phi(alpha) / Phi(alpha)`` evaluated in log space."""
    alpha = np.asarray(alpha, dtype=float)
    return np.exp(log_norm_pdf(alpha) - special.log_ndtr(alpha))


def tn_mean(d):
    """Expectation ``mu + sigma * phi(mu/sigma) / Phi(mu/sigma)``."""
    mu, sigma = _params(d)
    return _scalar_or_array(mu + sigma * inverse_mills(mu / sigma))


def tn_variance(d):
    mu, sigma = _params(d)
    alpha = mu / sigma
    lam = inverse_mills(alpha)
    return _scalar_or_array(sigma**2 * (1.0 + alpha * (-lam) - lam**2))


def crps_tn_array(mu, sigma, y):
    """Closed-form CRPS of the zero-truncated normal on raw arrays.

    No validation; this is the inner loop of parameter estimation. With
    ``z = (y - mu)/sigma``, ``alpha = mu/sigma`` and ``P = Phi(alpha)``::

        CRPS = sigma * [z (1 - 2 Phi(-z)/P) + 2 phi(z)/P - Phi(sqrt(2) alpha) / (sqrt(pi) P^2)]
    """
    mu, sigma, y = np.broadcast_arrays(
        np.asarray(mu, dtype=float), np.asarray(sigma, dtype=float), np.asarray(y, dtype=float)
    )
    shape = mu.shape
    mu, sigma, y = mu.ravel(), sigma.ravel(), y.ravel()
    z = (y - mu) / sigma
    alpha = mu / sigma
    # Direct ratios are accurate while Phi(alpha) >= Phi(-5); log space below that.
    mass = special.ndtr(alpha)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        r_tail = special.ndtr(-z) / mass
        r_dens = np.exp(-0.5 * z * z - _LOG_SQRT_2PI) / mass
        r_pair = special.ndtr(np.sqrt(2.0) * alpha) / (mass * mass)
    tail = alpha < _FAST_PATH_MIN_ALPHA
    if np.any(tail):
        z_t, a_t = z[tail], alpha[tail]
        log_mass = special.log_ndtr(a_t)
        r_tail[tail] = np.exp(special.log_ndtr(-z_t) - log_mass)
        r_dens[tail] = np.exp(-0.5 * z_t * z_t - _LOG_SQRT_2PI - log_mass)
        r_pair[tail] = np.exp(special.log_ndtr(np.sqrt(2.0) * a_t) - 2.0 * log_mass)
    out = sigma * (z * (1.0 - 2.0 * r_tail) + 2.0 * r_dens - _INV_SQRT_PI * r_pair)
    return out.reshape(shape)
