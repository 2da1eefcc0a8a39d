"""Stationary block bootstrap for skill-score confidence intervals."""

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .exceptions import InputError, UndefinedSkillError
from .scoring import SkillSummary


@dataclass(frozen=True)
class BootstrapSettings:
    """Settings for the stationary bootstrap.

    ``mean_block_length=None`` means the cube root of the series length.
    """

    replicates: int = 2000
    confidence: float = 0.95
    mean_block_length: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.replicates < 1:
            raise InputError("replicates must be >= 1")
        if not 0 < self.confidence < 1:
            raise InputError("confidence must lie in (0, 1)")
        if self.mean_block_length is not None and self.mean_block_length < 1:
            raise InputError("mean_block_length must be >= 1")

    def block_length(self, n):
        if self.mean_block_length is not None:
            return float(self.mean_block_length)
        return max(1.0, float(n) ** (1.0 / 3.0))


def _as_rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def stationary_indices(n, mean_block_length, rng, size=None):
    """Draw stationary-bootstrap index sequences.

    A new block starts at each position with probability ``1/mean_block_length``
    (so block lengths are geometric with that mean) at a uniform random index;
    otherwise the previous index is advanced by one, wrapping circularly.

    Returns an array of shape ``(n,)`` or ``(size, n)``.
    """
    if n < 1:
        raise InputError("series length must be >= 1")
    rng = _as_rng(rng)
    shape = (n,) if size is None else (size, n)
    p_new = 1.0 / mean_block_length
    starts = rng.integers(0, n, size=shape)
    new_block = rng.random(shape) < p_new
    new_block[..., 0] = True
    pos = np.arange(n)
    last_start = np.maximum.accumulate(np.where(new_block, pos, 0), axis=-1)
    offset = pos - last_start
    block_origin = np.take_along_axis(starts, last_start, axis=-1)
    return (block_origin + offset) % n


def stationary_resample(n, settings, rng):
    """One resampled index sequence of length ``n`` for ``settings``."""
    return stationary_indices(n, settings.block_length(n), rng)


def block_lengths(new_block_flags):
    """Lengths of runs delimited by block-start flags (for diagnostics)."""
    flags = np.asarray(new_block_flags, dtype=bool)
    starts = np.flatnonzero(flags)
    return np.diff(np.append(starts, flags.size))


def _skill(score_mean, ref_mean, root):
    if root:
        return 1.0 - np.sqrt(score_mean) / np.sqrt(ref_mean)
    return 1.0 - score_mean / ref_mean


def skill_ci(score_series, ref_series, settings=BootstrapSettings(), root=False,
             metric="", lead_time=0, reference_id=""):
    """Skill score with a Gaussian confidence interval from the stationary bootstrap.

    Forecast and reference series are resampled with the same indices in each
    replicate. With ``root=True`` the skill compares square roots of the mean
    scores (RMSE skill from squared errors).

    Raises
    ------
    UndefinedSkillError
        If the reference series has mean zero.
    """
    score = np.asarray(score_series, dtype=float)
    ref = np.asarray(ref_series, dtype=float)
    if score.shape != ref.shape or score.ndim != 1:
        raise InputError("score and reference series must be 1-d and aligned")
    n = score.size
    if n < 2:
        raise InputError("need at least two dates for a bootstrap interval")
    ref_mean = ref.mean()
    if ref_mean == 0:
        raise UndefinedSkillError("reference mean score is zero; skill is undefined")
    point = float(_skill(score.mean(), ref_mean, root))

    idx = stationary_indices(n, settings.block_length(n), settings.seed, size=settings.replicates)
    with np.errstate(divide="ignore", invalid="ignore"):
        reps = _skill(score[idx].mean(axis=1), ref[idx].mean(axis=1), root)
    reps = reps[np.isfinite(reps)]
    sd = float(np.std(reps, ddof=1)) if reps.size > 1 else 0.0
    half = float(stats.norm.ppf(0.5 * (1.0 + settings.confidence))) * sd
    return SkillSummary(
        metric=metric,
        lead_time=lead_time,
        skill=point,
        ci_low=point - half,
        ci_high=point + half,
        reference_id=reference_id,
    )
