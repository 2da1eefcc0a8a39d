"""Experiment orchestration: rolling fits, scoring, aggregation and skill summaries.

A *model* is either the raw ensemble of one member combination
``(m_low, m_high)`` or EMOS post-processing of that combination under one
training strategy. Model ids read ``raw(100,50)``, ``local(100,50)`` and so on.
"""

import json
import math
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import date
from pathlib import Path

import numpy as np
import pandas as pd

from .bootstrap import BootstrapSettings, skill_ci
from .distributions import TruncatedNormal
from .emos import PARAM_NAMES, EmosCoefficients, FitSettings, fit_batch, mode_for
from .exceptions import InputError, UndefinedSkillError
from .scoring import BRIER_THRESHOLDS, QUANTILE_LEVELS, metric_names, score_all
from .training import (
    REGION_ID,
    STRATEGIES,
    TrainingPlan,
    group_training,
    lead_arrays,
    station_groups,
    verification_days,
)

# the median level is scored too so that its skill can be checked against MAES
PIPELINE_QUANTILES = tuple(sorted(QUANTILE_LEVELS + (0.5,)))
METRICS = tuple(metric_names(BRIER_THRESHOLDS, PIPELINE_QUANTILES))
SUMMARY_COLUMNS = ["model_id", "metric", "lead_time", "mean", "skill_vs_ref", "ci_low", "ci_high"]
SCORE_COLUMNS = ["model_id", "station_id", "date", "lead_time", "metric", "value"]
CLUSTER_COLUMNS = ["model_id", "date", "lead_time", "station_id", "cluster_id"]
FLOAT_FORMAT = "%.17g"


def model_id(kind, combination):
    m_low, m_high = combination
    return f"{kind}({m_low},{m_high})"


def parse_model_id(mid):
    kind, rest = mid.split("(", 1)
    m_low, m_high = rest.rstrip(")").split(",")
    return kind, (int(m_low), int(m_high))


@dataclass(frozen=True)
class ExperimentSpec:
    """What to fit and verify.

    ``reference`` is the combination each model is compared against (the
    model of the same kind with that combination). ``leads=None`` uses every
    lead time of the dataset; ``start``/``end`` bound the verification period.
    """

    combinations: tuple
    strategies: tuple = ("local",)
    window_days: int = 60
    cluster_count: int | None = None
    reference: tuple | None = None
    start: date | None = None
    end: date | None = None
    leads: tuple | None = None
    seed: int = 0
    bootstrap_replicates: int = 2000
    confidence: float = 0.95
    threads: int = 1
    fit_settings: FitSettings = field(default_factory=FitSettings)

    def __post_init__(self):
        combos = tuple((int(a), int(b)) for a, b in self.combinations)
        object.__setattr__(self, "combinations", combos)
        object.__setattr__(self, "strategies", tuple(self.strategies))
        if self.reference is not None:
            object.__setattr__(self, "reference", tuple(int(v) for v in self.reference))
        if not self.strategies:
            raise InputError("at least one training strategy is required")
        bad = [s for s in self.strategies if s not in STRATEGIES]
        if bad:
            raise InputError(f"unknown strategies {bad}; choose from {STRATEGIES}")
        if len(set(self.strategies)) != len(self.strategies):
            raise InputError("duplicate strategies")
        if not combos:
            raise InputError("at least one member combination is required")
        if len(set(combos)) != len(combos):
            raise InputError("duplicate member combinations")
        for m_low, m_high in combos:
            if m_low < 0 or m_high < 0 or m_low + m_high < 1:
                raise InputError(f"invalid member combination ({m_low},{m_high})")
        if self.reference is not None and self.reference not in combos:
            raise InputError(f"reference {self.reference} is not among the evaluated combinations")
        if self.window_days < 1:
            raise InputError("window_days must be >= 1")
        if "semi_local" in self.strategies and (self.cluster_count is None or self.cluster_count < 1):
            raise InputError("semi_local needs cluster_count >= 1")
        if self.threads < 1:
            raise InputError("threads must be >= 1")
        BootstrapSettings(self.bootstrap_replicates, self.confidence)

    def check_dataset(self, dataset):
        for m_low, m_high in self.combinations:
            if m_low > dataset.members_low or m_high > dataset.members_high:
                raise InputError(
                    f"combination ({m_low},{m_high}) exceeds the available "
                    f"({dataset.members_low},{dataset.members_high}) members"
                )
        if self.cluster_count is not None and "semi_local" in self.strategies:
            if self.cluster_count > dataset.n_stations:
                raise InputError(f"cluster_count exceeds the {dataset.n_stations} stations")
        for lead in self.lead_times(dataset):
            if not 1 <= lead <= dataset.n_leads:
                raise InputError(f"lead time {lead} not in dataset")
        days = self.days(dataset)
        if days.size == 0:
            raise InputError("verification period is empty once the training window is reserved")
        return days

    def lead_times(self, dataset):
        return tuple(range(1, dataset.n_leads + 1)) if self.leads is None else tuple(self.leads)

    def days(self, dataset):
        return verification_days(dataset, self.window_days, self.start, self.end)

    def model_ids(self):
        out = []
        for combo in self.combinations:
            out.append(model_id("raw", combo))
            out.extend(model_id(s, combo) for s in self.strategies)
        return out

    def reference_for(self, mid):
        if self.reference is None:
            return None
        kind, _ = parse_model_id(mid)
        return model_id(kind, self.reference)

    def to_dict(self):
        d = asdict(self)
        for k in ("start", "end"):
            d[k] = None if d[k] is None else d[k].isoformat()
        return d


# ---------------------------------------------------------------------------
# fitting


@dataclass
class ModelFit:
    """Rolling EMOS fits of one (combination, strategy).

    ``theta[l, s, t]`` holds the coefficients applied to station ``s`` on
    verification day ``days[t]`` at lead ``leads[l]`` (NaN where none).
    """

    model_id: str
    combination: tuple
    strategy: str
    mode: str
    leads: tuple
    days: np.ndarray
    theta: np.ndarray
    entries: list = field(default_factory=list)
    clusters: list = field(default_factory=list)
    events: list = field(default_factory=list)
    counts: dict = field(default_factory=dict)
    seconds: float = 0.0


def _pad(parts):
    width = max(1, max(p[0].size for p in parts))
    out = []
    for k in range(5):
        fill = False if k == 4 else np.nan
        arr = np.full((len(parts), width), fill, dtype=bool if k == 4 else float)
        for i, p in enumerate(parts):
            arr[i, : p[k].size] = p[k]
        out.append(arr)
    return out


def _entry(mid, day, lead, gid, mode, theta, objective, converged, status, n_cases):
    e = {"model_id": mid, "date": day.isoformat(), "lead_time": int(lead), "group_id": gid, "mode": mode}
    e.update({name: float(v) for name, v in zip(PARAM_NAMES, theta)})
    e["objective"] = None if objective is None else float(objective)
    e["converged"] = bool(converged)
    e["status"] = status
    e["n_cases"] = int(n_cases)
    return e


def fit_model(dataset, combination, strategy, spec):
    """Rolling fits for every verification day and lead of ``spec``.

    All groups and leads of one day form a single vectorized fit; each
    (lead, group) starts from its previous successful coefficients. A group
    with too few cases, or whose fit fails, reuses its most recent successful
    coefficients, else the regional fit of that day and lead.
    """
    t0 = time.perf_counter()
    sub = dataset.subset(*combination)
    mode = mode_for(*combination)
    mid = model_id(strategy, combination)
    leads = spec.lead_times(dataset)
    days = spec.days(dataset)
    plan = TrainingPlan(strategy, spec.window_days, spec.cluster_count, seed=spec.seed)
    arrays = {lead: lead_arrays(sub, lead) for lead in leads}
    default = EmosCoefficients.default(mode).as_vector()
    settings = spec.fit_settings
    theta = np.full((len(leads), dataset.n_stations, days.size, 5), np.nan)
    result = ModelFit(mid, combination, strategy, mode, leads, days, theta)
    counts = {"fitted": 0, "fallback_previous": 0, "fallback_regional": 0, "failed": 0}
    store = {}
    ids = dataset.station_ids

    for ti, t in enumerate(days):
        day = dataset.day(t)
        problems = []
        for li, lead in enumerate(leads):
            groups, assignment = station_groups(plan, sub, arrays[lead], int(t))
            if assignment is not None:
                for s, label in enumerate(assignment.labels):
                    result.clusters.append((mid, day.isoformat(), lead, ids[s], int(label)))
                for sid in assignment.flagged:
                    result.events.append(
                        {"event": "climatology_only_cluster", "date": day.isoformat(), "lead_time": lead, "station_id": sid}
                    )
            for gid, members in groups.items():
                problems.append((li, lead, gid, members))
        parts = [group_training(arrays[lead], members, int(t), spec.window_days) for _, lead, _, members in problems]
        mh, ml, s2, y, mask = _pad(parts)
        init = np.array([store.get((lead, gid), default) for _, lead, gid, _ in problems])
        fits = fit_batch(mh, ml, s2, y, mask, mode, init, settings)
        n_cases = mask.sum(axis=1)

        regional = {}
        need_regional = sorted(
            {li for p, (li, lead, gid, _) in enumerate(problems) if fits.status[p] != "ok" and (lead, gid) not in store}
        )
        if need_regional and strategy != "regional":
            all_st = np.arange(dataset.n_stations)
            rparts = [group_training(arrays[leads[li]], all_st, int(t), spec.window_days) for li in need_regional]
            rmh, rml, rs2, ry, rmask = _pad(rparts)
            rinit = np.array([store.get((leads[li], REGION_ID), default) for li in need_regional])
            rfit = fit_batch(rmh, rml, rs2, ry, rmask, mode, rinit, settings)
            for r, li in enumerate(need_regional):
                if rfit.status[r] == "ok":
                    regional[li] = (rfit.theta[r], rfit.objective[r], rfit.converged[r], int(rmask[r].sum()))

        for p, (li, lead, gid, members) in enumerate(problems):
            key = (lead, gid)
            if fits.status[p] == "ok":
                coef = fits.theta[p]
                store[key] = coef
                counts["fitted"] += 1
                result.entries.append(
                    _entry(mid, day, lead, gid, mode, coef, fits.objective[p], fits.converged[p], "fitted", n_cases[p])
                )
            else:
                reason = "too_few_cases" if fits.status[p] == "skipped" else "fit_failed"
                if key in store:
                    coef = store[key]
                    counts["fallback_previous"] += 1
                    status = "fallback_previous"
                    result.entries.append(_entry(mid, day, lead, gid, mode, coef, None, False, status, n_cases[p]))
                elif li in regional:
                    coef, obj, conv, n_reg = regional[li]
                    counts["fallback_regional"] += 1
                    status = "fallback_regional"
                    result.entries.append(_entry(mid, day, lead, gid, mode, coef, obj, conv, status, n_reg))
                else:
                    coef = None
                    counts["failed"] += 1
                    status = "failed"
                result.events.append(
                    {"event": status, "reason": reason, "date": day.isoformat(), "lead_time": lead,
                     "group_id": gid, "n_cases": int(n_cases[p])}
                )
                if coef is None:
                    continue
            theta[li, members, ti] = coef
    result.counts = counts
    result.seconds = time.perf_counter() - t0
    return result


def fit_models(dataset, spec):
    """Fit every (combination, strategy) of ``spec``; results follow the order of ``spec``."""
    spec.check_dataset(dataset)
    tasks = [(c, s) for c in spec.combinations for s in spec.strategies]
    run = lambda task: fit_model(dataset, task[0], task[1], spec)
    if spec.threads == 1 or len(tasks) == 1:
        return [run(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=spec.threads) as pool:
        return list(pool.map(run, tasks))


# ---------------------------------------------------------------------------
# predictions and scores


@dataclass
class ModelScores:
    """Scores of one model: ``values[metric][l, s, t]`` (NaN where not scored)."""

    model_id: str
    leads: tuple
    days: np.ndarray
    values: dict
    excluded: int = 0


def _empty_scores(dataset, leads, days):
    shape = (len(leads), dataset.n_stations, days.size)
    return {m: np.full(shape, np.nan) for m in METRICS}


def raw_members(dataset, combination, lead, days):
    """Pooled raw members ``(station, day, member)`` valid on ``days`` at ``lead``."""
    m_low, m_high = combination
    init = days - lead
    high = dataset.high[:, init, lead - 1, :m_high]
    low = dataset.low[:, init, lead - 1, :m_low]
    return np.concatenate([high, low], axis=-1)


def score_raw(dataset, combination, leads, days):
    """Scores of the raw ensemble of ``combination``."""
    values = _empty_scores(dataset, leads, days)
    excluded = 0
    for li, lead in enumerate(leads):
        members = raw_members(dataset, combination, lead, days)
        y = dataset.observations[:, days]
        ok = np.isfinite(y) & np.all(np.isfinite(members), axis=-1)
        excluded += int(np.sum(~ok))
        if not ok.any():
            continue
        res = score_all(members[ok], y[ok], BRIER_THRESHOLDS, PIPELINE_QUANTILES)
        for m, v in res.items():
            values[m][li][ok] = v
    return ModelScores(model_id("raw", combination), tuple(leads), days, values, excluded)


def predictive_params(dataset, fit):
    """Location and scale arrays ``(lead, station, day)`` of a model fit."""
    sub = dataset.subset(*fit.combination)
    shape = fit.theta.shape[:3]
    mu = np.full(shape, np.nan)
    sigma = np.full(shape, np.nan)
    for li, lead in enumerate(fit.leads):
        arr = lead_arrays(sub, lead)
        mh = np.nan_to_num(arr.mean_high[:, fit.days])
        ml = np.nan_to_num(arr.mean_low[:, fit.days])
        s2 = arr.s2[:, fit.days]
        th = fit.theta[li]
        mu[li] = th[..., 0] + th[..., 1] ** 2 * mh + th[..., 2] ** 2 * ml
        with np.errstate(invalid="ignore"):
            sigma[li] = np.sqrt(th[..., 3] ** 2 + th[..., 4] ** 2 * s2)
    return mu, sigma


def score_fit(dataset, fit):
    """Scores of the post-processed forecasts of ``fit``."""
    mu, sigma = predictive_params(dataset, fit)
    y = np.broadcast_to(dataset.observations[:, fit.days], mu.shape)
    ok = np.isfinite(mu) & np.isfinite(y) & (sigma > 0)
    values = _empty_scores(dataset, fit.leads, fit.days)
    if ok.any():
        res = score_all(TruncatedNormal(mu[ok], sigma[ok]), y[ok], BRIER_THRESHOLDS, PIPELINE_QUANTILES)
        for m, v in res.items():
            values[m][ok] = v
    return ModelScores(fit.model_id, fit.leads, fit.days, values, int(np.sum(~ok)))


# ---------------------------------------------------------------------------
# aggregation and skill


def _fsum_mean(v):
    v = v[np.isfinite(v)]
    return math.fsum(v.tolist()) / v.size if v.size else float("nan")


def aggregate_scores(scores):
    """Mean score per (metric, lead) and the daily spatial-mean series.

    Returns ``(means, daily)`` with ``means[metric]`` of shape ``(lead,)`` and
    ``daily[metric]`` of shape ``(lead, day)``; exactly rounded sums.
    """
    means, daily = {}, {}
    for m, arr in scores.values.items():
        means[m] = np.array([_fsum_mean(arr[li].ravel()) for li in range(arr.shape[0])])
        daily[m] = np.array(
            [[_fsum_mean(arr[li, :, ti]) for ti in range(arr.shape[2])] for li in range(arr.shape[0])]
        )
    return means, daily


def bootstrap_seed(master, mid, lead):
    """Bootstrap seed per (model, lead), shared by all metrics; independent of model order."""
    seq = np.random.SeedSequence([int(master), zlib.crc32(mid.encode()), int(lead)])
    return int(seq.generate_state(1)[0])


def summarize(spec, scored):
    """Summary table and a list of undefined-skill notes.

    ``scored`` maps model id to ``(ModelScores, means, daily)``. Skill compares
    each model with the model of the same kind on the reference combination;
    ``SE_mean`` skill is computed on root mean squared errors.
    """
    rows, notes = [], []
    for mid, (sc, means, daily) in scored.items():
        ref_id = spec.reference_for(mid)
        ref = scored.get(ref_id) if ref_id else None
        for m in METRICS:
            for li, lead in enumerate(sc.leads):
                skill = lo = hi = float("nan")
                if ref is not None:
                    a, b = daily[m][li], ref[2][m][li]
                    both = np.isfinite(a) & np.isfinite(b)
                    settings = BootstrapSettings(
                        spec.bootstrap_replicates, spec.confidence, seed=bootstrap_seed(spec.seed, mid, lead)
                    )
                    try:
                        s = skill_ci(a[both], b[both], settings, root=(m == "SE_mean"), metric=m, lead_time=lead)
                        skill, lo, hi = s.skill, s.ci_low, s.ci_high
                    except UndefinedSkillError:
                        notes.append({"model_id": mid, "metric": m, "lead_time": lead, "reason": "reference mean is zero"})
                    except InputError as exc:
                        notes.append({"model_id": mid, "metric": m, "lead_time": lead, "reason": str(exc)})
                rows.append((mid, m, lead, means[m][li], skill, lo, hi))
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS), notes


# ---------------------------------------------------------------------------
# files


def write_csv(df, path):
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def scores_frame(dataset, sc):
    """Long-format scores of one model (finite values only)."""
    frames = []
    ids = np.array(dataset.station_ids, dtype=object)
    dates = np.array([dataset.day(t).isoformat() for t in sc.days], dtype=object)
    names = np.array(METRICS, dtype=object)
    for li, lead in enumerate(sc.leads):
        # (day, station, metric): rows sorted by date, then station, then metric
        block = np.stack([sc.values[m][li].T for m in METRICS], axis=-1)
        ok = np.isfinite(block)
        t_i, s_i, m_i = np.nonzero(ok)
        frames.append(
            pd.DataFrame(
                {
                    "model_id": sc.model_id,
                    "station_id": ids[s_i],
                    "date": dates[t_i],
                    "lead_time": lead,
                    "metric": names[m_i],
                    "value": block[ok],
                }
            )
        )
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=SCORE_COLUMNS)


def write_fits(fits, out_dir):
    out = Path(out_dir)
    entries = [e for f in fits for e in f.entries]
    (out / "coefficients.json").write_text(json.dumps(entries, indent=1) + "\n")
    clusters = [c for f in fits for c in f.clusters]
    if clusters:
        write_csv(pd.DataFrame(clusters, columns=CLUSTER_COLUMNS), out / "clusters.csv")


def read_fits(dataset, spec, out_dir):
    """Rebuild model fits from ``coefficients.json`` (and ``clusters.csv``)."""
    out = Path(out_dir)
    path = out / "coefficients.json"
    try:
        entries = json.loads(path.read_text())
    except FileNotFoundError:
        raise InputError(f"{path} not found; run `fit` first") from None
    clusters = {}
    cpath = out / "clusters.csv"
    if cpath.exists():
        cdf = pd.read_csv(cpath, dtype={"station_id": str})
        for mid, d, lead, sid, label in cdf.itertuples(index=False):
            clusters.setdefault((mid, d, int(lead), f"c{int(label)}"), []).append(sid)
    leads = spec.lead_times(dataset)
    days = spec.days(dataset)
    day_index = {dataset.day(t).isoformat(): i for i, t in enumerate(days)}
    lead_index = {lead: i for i, lead in enumerate(leads)}
    station_index = {sid: i for i, sid in enumerate(dataset.station_ids)}
    fits = {}
    for e in entries:
        mid = e["model_id"]
        if mid not in fits:
            kind, combo = parse_model_id(mid)
            theta = np.full((len(leads), dataset.n_stations, days.size, 5), np.nan)
            fits[mid] = ModelFit(mid, combo, kind, e["mode"], leads, days, theta)
        ti = day_index.get(e["date"])
        li = lead_index.get(e["lead_time"])
        if ti is None or li is None:
            continue
        gid = e["group_id"]
        if gid == REGION_ID:
            members = np.arange(dataset.n_stations)
        elif gid in station_index:
            members = np.array([station_index[gid]])
        else:
            key = (mid, e["date"], e["lead_time"], gid)
            if key not in clusters:
                raise InputError(f"no cluster membership for group {gid} of {mid} on {e['date']}")
            members = np.array([station_index[s] for s in clusters[key]])
        fits[mid].theta[li, members, ti] = [e[name] for name in PARAM_NAMES]
    return [fits[k] for k in spec.model_ids() if k in fits]


@dataclass
class ExperimentResult:
    summary: pd.DataFrame
    scores: dict
    fits: list
    report: dict


def verify(dataset, spec, fits, out_dir=None, write_scores=True):
    """Score raw and post-processed forecasts, aggregate and summarize."""
    days = spec.check_dataset(dataset)
    leads = spec.lead_times(dataset)
    by_id = {f.model_id: f for f in fits}
    scored = {}
    missing = []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None and write_scores:
        scores_path = out / "scores.csv"
        scores_path.write_text(",".join(SCORE_COLUMNS) + "\n")
    for mid in spec.model_ids():
        kind, combo = parse_model_id(mid)
        if kind == "raw":
            sc = score_raw(dataset, combo, leads, days)
        elif mid in by_id:
            sc = score_fit(dataset, by_id[mid])
        else:
            missing.append(mid)
            continue
        if not any(np.isfinite(v).any() for v in sc.values.values()):
            missing.append(mid)
            continue
        means, daily = aggregate_scores(sc)
        scored[mid] = (sc, means, daily)
        if out is not None and write_scores:
            with open(scores_path, "a") as fh:
                scores_frame(dataset, sc).to_csv(
                    fh, index=False, header=False, float_format=FLOAT_FORMAT, lineterminator="\n"
                )
    summary, notes = summarize(spec, scored)
    if out is not None:
        write_csv(summary, out / "summary.csv")
    report = {
        "missing_models": missing,
        "undefined_skill": notes,
        "excluded_cells": {mid: v[0].excluded for mid, v in scored.items()},
    }
    return ExperimentResult(summary, {k: v[0] for k, v in scored.items()}, fits, report)


def run_report(spec, dataset, fits, verification, seconds):
    days = spec.days(dataset)
    models = []
    for f in fits:
        failed = [e for e in f.events if e["event"] == "failed"]
        models.append(
            {
                "model_id": f.model_id,
                "status": "failed" if f.counts.get("fitted", 0) == 0 else ("partial" if failed else "ok"),
                "counts": f.counts,
                "seconds": round(f.seconds, 3),
                "events": f.events,
            }
        )
    total_fail = bool(fits) and all(m["status"] == "failed" for m in models)
    return {
        "status": "failed" if total_fail else "ok",
        "spec": spec.to_dict(),
        "verification_period": {
            "first": dataset.day(days[0]).isoformat(),
            "last": dataset.day(days[-1]).isoformat(),
            "days": int(days.size),
        },
        "dropped_case_policy": "training cases with a missing observation or member are dropped",
        "models": models,
        "verification": verification,
        "seconds": round(seconds, 3),
    }


def run_experiment(spec, dataset, out_dir=None, write_scores=True, report=True):
    """Fit, verify and summarize; writes all output files when ``out_dir`` is given."""
    t0 = time.perf_counter()
    spec.check_dataset(dataset)
    fits = fit_models(dataset, spec)
    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_fits(fits, out)
    result = verify(dataset, spec, fits, out, write_scores)
    result.report = run_report(spec, dataset, fits, result.report, time.perf_counter() - t0)
    if out is not None:
        (out / "run_report.json").write_text(json.dumps(result.report, indent=1) + "\n")
        if report:
            from .report import write_report

            write_report(result.summary, out)
    return result
