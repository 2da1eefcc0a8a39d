"""Proper scoring rules, point-forecast errors and skill scores.

A *forecast* here is either a :class:`~windemos.distributions.TruncatedNormal`
or a raw ensemble given as an array whose last axis holds the members.
Observations broadcast against the forecast's batch shape.
"""

import math
import warnings
from dataclasses import dataclass
from datetime import date

import numpy as np
import pandas as pd

from .distributions import TruncatedNormal, crps_tn_array, tn_cdf, tn_mean, tn_quantile
from .exceptions import DomainError, InputError, UndefinedSkillError

BRIER_THRESHOLDS = (5.0, 10.0, 15.0)
QUANTILE_LEVELS = (0.05, 0.10, 0.20, 0.80, 0.90, 0.95)

RECORD_COLUMNS = ["model_id", "station_id", "date", "lead_time", "metric", "value"]


def brier_metric(threshold):
    return f"BS@{threshold:g}"


def quantile_metric(tau):
    return f"QS@{tau:g}"


def metric_names(thresholds=BRIER_THRESHOLDS, taus=QUANTILE_LEVELS):
    return (
        ["CRPS"]
        + [brier_metric(z) for z in thresholds]
        + [quantile_metric(t) for t in taus]
        + ["AE_median", "SE_mean"]
    )


@dataclass(frozen=True)
class ScoreRecord:
    model_id: str
    station_id: str
    verification_date: date
    lead_time: int
    metric: str
    value: float


@dataclass(frozen=True)
class SkillSummary:
    metric: str
    lead_time: int
    skill: float
    ci_low: float
    ci_high: float
    reference_id: str


def _observation(y):
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise DomainError("observations must be non-negative wind speeds")
    return y


def _members(members):
    members = np.asarray(members, dtype=float)
    if members.ndim == 0 or members.shape[-1] == 0:
        raise InputError("an ensemble needs at least one member")
    return members


def _out(x):
    x = np.asarray(x)
    return x[()] if x.ndim == 0 else x


def crps_tn(d, y):
    """Closed-form CRPS of a zero-truncated normal forecast."""
    y = _observation(y)
    mu = np.asarray(d.location, dtype=float)
    sigma = np.asarray(d.scale, dtype=float)
    return _out(crps_tn_array(mu, sigma, y))


def crps_ensemble(members, y, fair=False):
    """CRPS of the empirical CDF of an ensemble.

    Uses ``mean|x_i - y| - sum_ij |x_i - x_j| / (2 M^2)``. With ``fair=True``
    the spread term is divided by ``2 M (M - 1)`` instead, which gives the
    unbiased estimator for the underlying distribution.
    """
    x = np.sort(_members(members), axis=-1)
    y = _observation(y)
    m = x.shape[-1]
    abs_err = np.mean(np.abs(x - y[..., None]), axis=-1)
    # sum_ij |x_i - x_j| = 2 sum_i (2i - m - 1) x_(i) for sorted members, i = 1..m
    weights = 2.0 * np.arange(1, m + 1) - m - 1.0
    pair_sum = 2.0 * np.sum(x * weights, axis=-1)
    if fair:
        spread = pair_sum / (2.0 * m * (m - 1)) if m > 1 else 0.0
    else:
        spread = pair_sum / (2.0 * m * m)
    return _out(abs_err - spread)


def forecast_cdf(forecast, z):
    if isinstance(forecast, TruncatedNormal):
        return tn_cdf(forecast, z)
    x = _members(forecast)
    return _out(np.mean(x <= z, axis=-1))


def forecast_quantile(forecast, tau):
    """Predictive quantile; linear interpolation between sorted members for ensembles."""
    if isinstance(forecast, TruncatedNormal):
        return tn_quantile(forecast, tau)
    if not 0 < tau < 1:
        raise DomainError("quantile level must lie in the open interval (0, 1)")
    return _out(np.quantile(_members(forecast), tau, axis=-1))


def forecast_mean(forecast):
    if isinstance(forecast, TruncatedNormal):
        return tn_mean(forecast)
    return _out(np.mean(_members(forecast), axis=-1))


def forecast_median(forecast):
    if isinstance(forecast, TruncatedNormal):
        return tn_quantile(forecast, 0.5)
    return _out(np.median(_members(forecast), axis=-1))


def brier(forecast, y, z):
    """Brier score ``(F(z) - 1{z >= y})^2`` for the event that ``y`` exceeds ``z``."""
    y = _observation(y)
    prob = np.asarray(forecast_cdf(forecast, z), dtype=float)
    return _out((prob - (z >= y).astype(float)) ** 2)


def pinball(x, tau):
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, tau * np.abs(x), (1.0 - tau) * np.abs(x))


def quantile_score(forecast, y, tau):
    """Pinball loss of the predictive ``tau``-quantile."""
    if not 0 < tau < 1:
        raise DomainError("quantile level must lie in the open interval (0, 1)")
    y = _observation(y)
    return _out(pinball(y - forecast_quantile(forecast, tau), tau))


def point_errors(forecast, y):
    """Absolute error of the median and squared error of the mean."""
    y = _observation(y)
    ae = np.abs(y - forecast_median(forecast))
    se = (y - forecast_mean(forecast)) ** 2
    return _out(ae), _out(se)


def skill_score(mean_score, mean_score_ref):
    """Positively oriented skill ``1 - mean_score / mean_score_ref``."""
    if mean_score_ref == 0:
        raise UndefinedSkillError("reference mean score is zero; skill is undefined")
    if mean_score_ref < 0:
        raise DomainError("reference mean score must be positive")
    return 1.0 - mean_score / mean_score_ref


def score_all(forecast, y, thresholds=BRIER_THRESHOLDS, taus=QUANTILE_LEVELS, fair=False):
    """Evaluate every verification metric; returns ``{metric: values}``.

    The median is computed once and shared by ``QS@0.5`` (when requested) and
    ``AE_median``.
    """
    y = _observation(y)
    if isinstance(forecast, TruncatedNormal):
        crps = crps_tn(forecast, y)
    else:
        crps = crps_ensemble(forecast, y, fair=fair)
    scores = {"CRPS": np.asarray(crps, dtype=float)}
    for z in thresholds:
        scores[brier_metric(z)] = np.asarray(brier(forecast, y, z), dtype=float)
    median = np.asarray(forecast_median(forecast), dtype=float)
    for tau in taus:
        q = median if tau == 0.5 else forecast_quantile(forecast, tau)
        scores[quantile_metric(tau)] = pinball(y - q, tau)
    scores["AE_median"] = np.abs(y - median)
    scores["SE_mean"] = (y - np.asarray(forecast_mean(forecast), dtype=float)) ** 2
    return scores


def records_frame(records):
    """Normalize ScoreRecords, dicts or a DataFrame to the long record layout."""
    if isinstance(records, pd.DataFrame):
        return records.loc[:, RECORD_COLUMNS]
    rows = []
    for r in records:
        if isinstance(r, ScoreRecord):
            rows.append((r.model_id, r.station_id, r.verification_date, r.lead_time, r.metric, r.value))
        else:
            rows.append(tuple(r[c] for c in RECORD_COLUMNS))
    return pd.DataFrame(rows, columns=RECORD_COLUMNS)


def _fsum_mean(values):
    v = values.to_numpy(dtype=float)
    return math.fsum(v) / len(v)


def aggregate(records, group_by=("model_id", "metric", "lead_time")):
    """Mean scores per group plus the per-date series of spatial means.

    Sums are exactly rounded (``math.fsum``), so the output does not depend
    on record order.

    Returns
    -------
    means : DataFrame
        ``group_by`` columns, ``mean`` and ``count``.
    series : DataFrame
        ``group_by`` columns, ``date`` and ``daily_mean`` sorted by date.
    """
    df = records_frame(records)
    keys = list(group_by)
    finite = np.isfinite(df["value"].to_numpy(dtype=float))
    if not finite.all():
        all_groups = set(map(tuple, df[keys].drop_duplicates().to_numpy().tolist()))
        df = df.loc[finite]
        kept = set(map(tuple, df[keys].drop_duplicates().to_numpy().tolist()))
        for g in sorted(all_groups - kept, key=str):
            warnings.warn(f"group {g} has no finite scores; excluded from aggregates", stacklevel=2)
    if df.empty:
        empty = pd.DataFrame(columns=keys + ["mean", "count"])
        return empty, pd.DataFrame(columns=keys + ["date", "daily_mean"])
    grouped = df.groupby(keys, sort=True)["value"]
    means = grouped.agg(mean=_fsum_mean, count="size").reset_index()
    series = (
        df.groupby(keys + ["date"], sort=True)["value"]
        .agg(_fsum_mean)
        .rename("daily_mean")
        .reset_index()
    )
    return means, series
