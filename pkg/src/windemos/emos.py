"""Truncated-normal EMOS for single- and dual-resolution ensembles.

The predictive law is a normal truncated at zero with

    location = a + b_high**2 * mean_high + b_low**2 * mean_low
    scale**2 = c**2 + d**2 * S**2

where ``S**2`` is the variance of the pooled ensemble. Coefficients are fitted
by minimizing the mean closed-form CRPS over a training set with a
Nelder-Mead simplex.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import kernels, optimize
from .distributions import TruncatedNormal, crps_tn_array, tn_mean, tn_quantile
from .exceptions import (
    DegenerateDistributionError,
    FitFailedError,
    InputError,
    InsufficientTrainingData,
)

MODES = ("dual", "pure_high", "pure_low")
PARAM_NAMES = ("a", "b_high", "b_low", "c", "d")
_ACTIVE = {
    "dual": np.array([0, 1, 2, 3, 4]),
    "pure_high": np.array([0, 1, 3, 4]),
    "pure_low": np.array([0, 2, 3, 4]),
}


def mode_for(m_low, m_high):
    """Link-function mode for a combination of low/high member counts."""
    if m_low + m_high < 1:
        raise InputError("a combination needs at least one member")
    if m_low == 0:
        return "pure_high"
    if m_high == 0:
        return "pure_low"
    return "dual"


@dataclass(frozen=True)
class FitMeta:
    objective: float = float("nan")
    iterations: int = 0
    converged: bool = False


@dataclass(frozen=True)
class EmosCoefficients:
    a: float
    b_high: float
    b_low: float
    c: float
    d: float
    mode: str = "dual"
    fit_meta: FitMeta = field(default_factory=FitMeta)

    def __post_init__(self):
        if self.mode not in MODES:
            raise InputError(f"mode must be one of {MODES}")
        if self.mode == "pure_high" and self.b_low != 0:
            raise InputError("pure_high coefficients require b_low = 0")
        if self.mode == "pure_low" and self.b_high != 0:
            raise InputError("pure_low coefficients require b_high = 0")

    @classmethod
    def default(cls, mode="dual"):
        if mode == "dual":
            b = np.sqrt(0.5)
            return cls(0.0, b, b, 1.0, 1.0, mode)
        if mode == "pure_high":
            return cls(0.0, 1.0, 0.0, 1.0, 1.0, mode)
        if mode == "pure_low":
            return cls(0.0, 0.0, 1.0, 1.0, 1.0, mode)
        raise InputError(f"mode must be one of {MODES}")

    @classmethod
    def from_vector(cls, theta, mode, fit_meta=None):
        theta = np.asarray(theta, dtype=float)
        vals = [float(v) for v in theta]
        if mode == "pure_high":
            vals[2] = 0.0
        elif mode == "pure_low":
            vals[1] = 0.0
        return cls(*vals, mode=mode, fit_meta=fit_meta or FitMeta())

    def as_vector(self):
        return np.array([self.a, self.b_high, self.b_low, self.c, self.d])

    def with_mode(self, mode):
        """Coefficients projected onto ``mode`` (the inactive ``b`` is zeroed)."""
        return EmosCoefficients.from_vector(self.as_vector(), mode, self.fit_meta)


@dataclass(frozen=True)
class EnsembleSummary:
    mean_high: float | None
    mean_low: float | None
    pooled_variance: float
    count_high: int
    count_low: int


def summarize(case):
    """Group means and pooled sample variance (denominator M - 1) of a forecast case."""
    high = np.asarray(case.members_high, dtype=float)
    low = np.asarray(case.members_low, dtype=float)
    pooled = np.concatenate([high, low])
    if pooled.size == 0:
        raise InputError("forecast case has no members")
    s2 = float(np.var(pooled, ddof=1)) if pooled.size > 1 else 0.0
    return EnsembleSummary(
        mean_high=float(high.mean()) if high.size else None,
        mean_low=float(low.mean()) if low.size else None,
        pooled_variance=s2,
        count_high=high.size,
        count_low=low.size,
    )


def summary_arrays(low, high):
    """Vectorized summaries over trailing member axes.

    Returns ``(mean_high, mean_low, pooled_variance)``; a group mean is NaN
    when that resolution has no members.
    """
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    n_low, n_high = low.shape[-1], high.shape[-1]
    if n_low + n_high == 0:
        raise InputError("forecast cases have no members")
    batch = np.broadcast_shapes(low.shape[:-1], high.shape[:-1])
    mean_high = high.mean(axis=-1) if n_high else np.full(batch, np.nan)
    mean_low = low.mean(axis=-1) if n_low else np.full(batch, np.nan)
    if n_low + n_high > 1:
        s2 = np.concatenate([high, low], axis=-1).var(axis=-1, ddof=1)
    else:
        s2 = np.zeros(batch)
    return mean_high, mean_low, s2


def _link_arrays(theta, mean_high, mean_low, s2):
    theta = np.asarray(theta, dtype=float)
    a, bh, bl, c, d = (theta[..., i] for i in range(5))
    mh = np.nan_to_num(mean_high, nan=0.0)
    ml = np.nan_to_num(mean_low, nan=0.0)
    mu = a + bh**2 * mh + bl**2 * ml
    sigma = np.sqrt(c**2 + d**2 * s2)
    return mu, sigma


def link(coeffs, s):
    """Predictive truncated normal for one ensemble summary."""
    for mean, b, name in ((s.mean_high, coeffs.b_high, "high"), (s.mean_low, coeffs.b_low, "low")):
        if mean is None and b != 0:
            raise InputError(f"no {name}-resolution members but b_{name} != 0")
    mh = np.nan if s.mean_high is None else s.mean_high
    ml = np.nan if s.mean_low is None else s.mean_low
    mu, sigma = _link_arrays(coeffs.as_vector(), mh, ml, s.pooled_variance)
    if not sigma > 0:
        raise DegenerateDistributionError("link produced a predictive scale of zero")
    return TruncatedNormal(float(mu), float(sigma))


def predictive(coeffs, mean_high, mean_low, s2):
    """Vectorized link: ``TruncatedNormal`` with array location and scale."""
    mu, sigma = _link_arrays(coeffs.as_vector(), mean_high, mean_low, np.asarray(s2, dtype=float))
    if not np.all(sigma > 0):
        raise DegenerateDistributionError("link produced a predictive scale of zero")
    return TruncatedNormal(mu, sigma)


def mean_crps(theta, mean_high, mean_low, s2, y):
    """Mean CRPS of the link output over training arrays; ``inf`` if any scale is zero.

    Uses the same compiled kernel as the optimizer, so objective values agree
    bit for bit with those reported by a fit.
    """
    y = np.asarray(y, dtype=float).reshape(1, -1)
    row = lambda v: np.nan_to_num(np.asarray(v, dtype=float), nan=0.0).reshape(1, -1)
    out = np.empty(1)
    kernels.batch_mean_crps(
        np.asarray(theta, dtype=float).reshape(1, 5), np.zeros(1, dtype=np.int64),
        row(mean_high), row(mean_low), row(s2), np.ascontiguousarray(y),
        np.array([y.size], dtype=np.int64), out,
    )
    return float(out[0])


def _usable(cases):
    return [c for c in cases if c.has_observation and c.complete]


def training_arrays(cases):
    """Summary arrays and observations for usable cases (observed, no missing members)."""
    cases = _usable(cases)
    if not cases:
        return np.empty(0), np.empty(0), np.empty(0), np.empty(0)
    summaries = [summarize(c) for c in cases]
    mh = np.array([np.nan if s.mean_high is None else s.mean_high for s in summaries])
    ml = np.array([np.nan if s.mean_low is None else s.mean_low for s in summaries])
    s2 = np.array([s.pooled_variance for s in summaries])
    y = np.array([c.observation for c in cases])
    return mh, ml, s2, y


def objective(coeffs, training):
    """Mean CRPS of ``coeffs`` over ``training`` (a list of forecast cases)."""
    mh, ml, s2, y = training_arrays(training)
    if y.size == 0:
        raise InputError("objective needs at least one usable training case")
    return mean_crps(coeffs.as_vector(), mh, ml, s2, y)


@dataclass(frozen=True)
class FitSettings:
    max_iter: int = 500
    tol: float = 1e-6
    restart: bool = True
    min_cases: int = 10
    rel_step: float = 0.1
    abs_step: float = 0.1


class BatchObjective:
    """Mean CRPS for ``G`` training sets padded to a common width.

    Arrays have shape ``(G, W)``; ``mask`` marks real cases, which are packed
    to the front of each row in their original order. Points carry only the
    coordinates listed in ``active``; the rest are held at zero.
    """

    def __init__(self, mean_high, mean_low, s2, y, mask, active):
        mask = np.asarray(mask, dtype=bool)
        order = np.argsort(~mask, axis=1, kind="stable")
        pack = lambda v: np.ascontiguousarray(
            np.take_along_axis(np.where(mask, np.nan_to_num(v, nan=0.0), 0.0), order, axis=1)
        )
        self.mean_high = pack(mean_high)
        self.mean_low = pack(mean_low)
        self.s2 = pack(s2)
        self.y = pack(y)
        self.count = mask.sum(axis=1).astype(np.int64)
        self.active = np.asarray(active)
        self.n_eval = 0

    def full(self, points):
        points = np.atleast_2d(points)
        theta = np.zeros((points.shape[0], 5))
        theta[:, self.active] = points
        return theta

    def minimize(self, x0, settings):
        """Compiled Nelder-Mead with restart; same steps as :func:`optimize.minimize`."""
        x0 = np.ascontiguousarray(x0, dtype=float)
        g, p = x0.shape
        x = np.empty((g, p))
        f = np.empty(g)
        nit = np.empty(g, dtype=np.int64)
        conv = np.empty(g, dtype=np.bool_)
        kernels.fit_rows(
            x0, self.active.astype(np.int64), self.mean_high, self.mean_low, self.s2, self.y,
            self.count, settings.max_iter, settings.tol, settings.restart,
            settings.rel_step, settings.abs_step, x, f, nit, conv,
        )
        return optimize.SimplexResult(x=x, fun=f, nit=nit, converged=conv)

    def __call__(self, points, rows):
        theta = self.full(points)
        self.n_eval += theta.shape[0]
        out = np.empty(theta.shape[0])
        kernels.batch_mean_crps(
            theta, np.asarray(rows, dtype=np.int64), self.mean_high, self.mean_low,
            self.s2, self.y, self.count, out,
        )
        return out


@dataclass
class BatchFit:
    theta: np.ndarray
    objective: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    status: np.ndarray  # "ok", "skipped" (too few cases) or "failed"

    def coefficients(self, g, mode):
        if self.status[g] != "ok":
            return None
        meta = FitMeta(float(self.objective[g]), int(self.iterations[g]), bool(self.converged[g]))
        return EmosCoefficients.from_vector(self.theta[g], mode, meta)


def fit_batch(mean_high, mean_low, s2, y, mask, mode, init, settings=FitSettings()):
    """Fit ``G`` independent EMOS models in one vectorized simplex run.

    Parameters
    ----------
    mean_high, mean_low, s2, y, mask : ndarray, shape (G, W)
        Padded training arrays; ``mask`` marks usable cases.
    mode : str
        Which ``b`` coefficients are estimated.
    init : ndarray, shape (G, 5)
        Starting coefficients.
    """
    if mode not in MODES:
        raise InputError(f"mode must be one of {MODES}")
    mask = np.asarray(mask, dtype=bool)
    g = mask.shape[0]
    init = np.broadcast_to(np.asarray(init, dtype=float), (g, 5))
    count = mask.sum(axis=1)
    status = np.where(count >= settings.min_cases, "ok", "skipped").astype(object)
    theta = np.full((g, 5), np.nan)
    fun = np.full(g, np.nan)
    nit = np.zeros(g, dtype=int)
    conv = np.zeros(g, dtype=bool)
    rows = np.flatnonzero(status == "ok")
    if rows.size:
        active = _ACTIVE[mode]
        obj = BatchObjective(
            mean_high[rows], mean_low[rows], s2[rows], y[rows], mask[rows], active
        )
        res = obj.minimize(init[rows][:, active], settings)
        theta[rows] = obj.full(res.x)
        fun[rows] = res.fun
        nit[rows] = res.nit
        conv[rows] = res.converged
        failed = rows[~np.isfinite(res.fun)]
        status[failed] = "failed"
    return BatchFit(theta, fun, nit, conv, status)


def effective_mode(mode, mean_high, mean_low):
    """Reduce ``dual`` to a pure mode when one resolution is absent from all cases."""
    if mode != "dual":
        return mode
    no_high = np.all(np.isnan(mean_high))
    no_low = np.all(np.isnan(mean_low))
    if no_high and no_low:
        raise InputError("training cases have no members")
    if no_low:
        return "pure_high"
    if no_high:
        return "pure_low"
    return mode


def _fit_arrays(mh, ml, s2, y, mode, init, settings):
    keep = np.isfinite(y) & np.isfinite(s2)
    mh, ml, s2, y = mh[keep], ml[keep], s2[keep], y[keep]
    if y.size < settings.min_cases:
        raise InsufficientTrainingData(
            f"{y.size} usable training cases; at least {settings.min_cases} required"
        )
    mode = effective_mode(mode, mh, ml)
    if init is None:
        init = EmosCoefficients.default(mode)
    elif init.mode != mode:
        init = init.with_mode(mode)
    row = lambda v: v[None, :]
    batch = fit_batch(
        row(mh), row(ml), row(s2), row(y), np.ones((1, y.size), bool), mode, init.as_vector(), settings
    )
    if batch.status[0] == "failed":
        raise FitFailedError("objective is non-finite at every simplex vertex")
    return batch.coefficients(0, mode)


def fit(training, mode="dual", init=None, settings=FitSettings()):
    """Fit EMOS coefficients to a list of forecast cases.

    Cases without an observation or with missing members are dropped. When no
    case has members of one resolution, ``dual`` reduces to the matching pure
    mode.

    Raises
    ------
    InsufficientTrainingData
        Fewer than ``settings.min_cases`` usable cases.
    FitFailedError
        The objective is non-finite everywhere the simplex looked.
    """
    if mode not in MODES:
        raise InputError(f"mode must be one of {MODES}")
    mh, ml, s2, y = training_arrays(training)
    return _fit_arrays(mh, ml, s2, y, mode, init, settings)


# ---------------------------------------------------------------------------
# scikit-learn interface


class EnsembleSummarizer(TransformerMixin, BaseEstimator):
    """Turn raw member columns into ``[mean_high, mean_low, pooled_variance]``.

    Input columns are the ``n_low`` low-resolution members followed by the
    high-resolution members.
    """

    def __init__(self, n_low=0):
        self.n_low = n_low

    def fit(self, X, y=None):
        X = check_array(X, ensure_all_finite="allow-nan")
        if not 0 <= self.n_low <= X.shape[1]:
            raise InputError("n_low must lie between 0 and the number of columns")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, ensure_all_finite="allow-nan")
        mh, ml, s2 = summary_arrays(X[:, : self.n_low], X[:, self.n_low :])
        return np.column_stack([mh, ml, s2])


class TruncatedNormalEMOS(RegressorMixin, BaseEstimator):
    """Zero-truncated normal EMOS regressor.

    ``X`` has columns ``[mean_high, mean_low, pooled_variance]`` (see
    :class:`EnsembleSummarizer`); a NaN group mean marks an absent resolution.
    ``predict`` returns the predictive mean and ``score`` the negative mean
    CRPS, so larger is better as scikit-learn expects.

    Parameters
    ----------
    mode : {"dual", "pure_high", "pure_low"}
    max_iter, tol, restart : simplex controls
    min_cases : int
        Minimum number of usable training rows.
    warm_start : bool
        Start the next ``fit`` from the current coefficients.
    """

    def __init__(self, mode="dual", max_iter=500, tol=1e-6, restart=True, min_cases=10, warm_start=False):
        self.mode = mode
        self.max_iter = max_iter
        self.tol = tol
        self.restart = restart
        self.min_cases = min_cases
        self.warm_start = warm_start

    def _settings(self):
        return FitSettings(max_iter=self.max_iter, tol=self.tol, restart=self.restart, min_cases=self.min_cases)

    def _check_X(self, X):
        X = check_array(X, ensure_all_finite="allow-nan")
        if X.shape[1] != 3:
            raise InputError("X must have columns [mean_high, mean_low, pooled_variance]")
        if np.any(np.isnan(X[:, 2])) or np.any(X[:, 2] < 0):
            raise InputError("pooled_variance must be finite and non-negative")
        return X

    def fit(self, X, y):
        if self.mode not in MODES:
            raise InputError(f"mode must be one of {MODES}")
        X = self._check_X(X)
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise InputError("X and y have inconsistent lengths")
        if np.any(y[np.isfinite(y)] < 0):
            raise InputError("observations must be non-negative")
        init = self.coef_ if self.warm_start and hasattr(self, "coef_") else None
        self.coef_ = _fit_arrays(X[:, 0], X[:, 1], X[:, 2], y, self.mode, init, self._settings())
        self.objective_ = self.coef_.fit_meta.objective
        self.n_iter_ = self.coef_.fit_meta.iterations
        self.converged_ = self.coef_.fit_meta.converged
        self.n_features_in_ = 3
        return self

    def predict_distribution(self, X):
        check_is_fitted(self, "coef_")
        X = self._check_X(X)
        return predictive(self.coef_, X[:, 0], X[:, 1], X[:, 2])

    def predict(self, X):
        return np.asarray(tn_mean(self.predict_distribution(X)))

    def predict_quantile(self, X, tau):
        return np.asarray(tn_quantile(self.predict_distribution(X), tau))

    def score(self, X, y, sample_weight=None):
        d = self.predict_distribution(X)
        crps = crps_tn_array(np.asarray(d.location), np.asarray(d.scale), np.asarray(y, dtype=float))
        return -float(np.average(crps, weights=sample_weight))
