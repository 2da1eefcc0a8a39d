"""Training-set assembly: rolling windows and regional, local and semi-local selection.

Semi-local training clusters stations with k-means on feature vectors made of
12 climatological quantiles of the observations and 12 quantiles of the
ensemble-mean error over the training window.
"""

import warnings
from dataclasses import dataclass, field
from datetime import timedelta

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.preprocessing import StandardScaler
from sklearn.utils.validation import check_array, check_is_fitted

from .emos import summary_arrays
from .exceptions import InputError

STRATEGIES = ("regional", "local", "semi_local")
REGION_ID = "region"


@dataclass(frozen=True)
class TrainingPlan:
    strategy: str = "local"
    window_days: int = 60
    cluster_count: int | None = None
    quantile_count: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise InputError(f"strategy must be one of {STRATEGIES}")
        if self.window_days < 1:
            raise InputError("window_days must be >= 1")
        if self.strategy == "semi_local":
            if self.cluster_count is None:
                raise InputError("semi_local training needs cluster_count")
            if self.cluster_count < 1:
                raise InputError("cluster_count must be >= 1")
        if self.quantile_count < 1:
            raise InputError("quantile_count must be >= 1")

    def check_stations(self, n_stations):
        if self.strategy == "semi_local" and self.cluster_count > n_stations:
            raise InputError(f"cluster_count {self.cluster_count} exceeds {n_stations} stations")


def quantile_levels(count=12):
    """Equidistant interior levels ``i / (count + 1)``, ``i = 1..count``."""
    return np.arange(1, count + 1) / (count + 1)


@dataclass(frozen=True)
class FeatureVector:
    station_id: str
    climatology_quantiles: np.ndarray
    error_quantiles: np.ndarray
    sufficient: bool = True

    def as_array(self):
        return np.concatenate([self.climatology_quantiles, self.error_quantiles])


# ---------------------------------------------------------------------------
# per-lead arrays indexed by verification day


@dataclass
class LeadArrays:
    """Ensemble summaries for one lead time, indexed ``[station, verification day]``.

    Days without a forecast for this lead hold NaN; ``usable`` marks cells with
    an observation and a complete ensemble.
    """

    lead: int
    mean_high: np.ndarray
    mean_low: np.ndarray
    s2: np.ndarray
    ens_mean: np.ndarray
    obs: np.ndarray
    usable: np.ndarray = field(init=False)

    def __post_init__(self):
        self.usable = np.isfinite(self.obs) & np.isfinite(self.s2) & np.isfinite(self.ens_mean)

    def window(self, target, window_days):
        """Verification-day slice of the training window for ``target``."""
        return slice(max(0, target - window_days), max(0, target))


def lead_arrays(dataset, lead):
    """Summaries of every forecast with lead time ``lead`` (days)."""
    if not 1 <= lead <= dataset.n_leads:
        raise InputError(f"lead time {lead} not in dataset")
    s, n_days = dataset.n_stations, dataset.n_days
    high = dataset.high[:, :, lead - 1, :]
    low = dataset.low[:, :, lead - 1, :]
    mh, ml, s2 = summary_arrays(low, high)
    m_h, m_l = high.shape[-1], low.shape[-1]
    ens = (np.nan_to_num(mh) * m_h + np.nan_to_num(ml) * m_l) / (m_h + m_l)
    # any missing member makes the summaries NaN
    bad = np.zeros(ens.shape, bool)
    if m_h:
        bad |= np.isnan(high).any(axis=-1)
    if m_l:
        bad |= np.isnan(low).any(axis=-1)
    s2 = np.where(bad, np.nan, s2)
    ens = np.where(bad, np.nan, ens)

    def place(v):
        out = np.full((s, n_days), np.nan)
        out[:, lead : lead + dataset.n_init] = v
        return out

    obs = np.full((s, n_days), np.nan)
    obs[:, lead : lead + dataset.n_init] = dataset.observations[:, lead : lead + dataset.n_init]
    return LeadArrays(lead, place(mh), place(ml), place(s2), place(ens), obs)


def rolling_window(dataset, target_date, lead_time, window_days, stations=None):
    """Forecast cases with lead ``lead_time`` verifying in the ``window_days``
    days strictly before ``target_date`` and having an observation.

    Cases are ordered by station, then verification date.
    """
    if window_days < 1:
        raise InputError("window_days must be >= 1")
    target = dataset.offset(target_date)
    idx = range(dataset.n_stations) if stations is None else stations
    cases = []
    for s in idx:
        for t in range(max(0, target - window_days), max(0, target)):
            d = t - lead_time
            if 0 <= d < dataset.n_init and not np.isnan(dataset.observations[s, t]):
                cases.append(dataset.case(s, d, lead_time))
    return cases


def group_training(arrays, stations, target, window_days):
    """Flattened training arrays (station-major, then date) for a station group."""
    sl = arrays.window(target, window_days)
    stations = np.asarray(stations)
    take = lambda v: v[stations, sl].reshape(-1)
    return (
        take(arrays.mean_high),
        take(arrays.mean_low),
        take(arrays.s2),
        take(arrays.obs),
        take(arrays.usable),
    )


# ---------------------------------------------------------------------------
# clustering features


def climatology_quantiles(observations, target, levels):
    """Quantiles of each station's observations before day ``target``; also returns counts."""
    hist = observations[:, : max(0, target)]
    counts = np.sum(np.isfinite(hist), axis=1)
    out = np.full((observations.shape[0], levels.size), np.nan)
    ok = counts > 0
    if ok.any():
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            out[ok] = np.nanquantile(hist[ok], levels, axis=1).T
    return out, counts


def station_features(dataset, arrays, target, window_days, quantile_count=12, min_history=24):
    """Raw (unstandardized) feature vectors for every station at day ``target``.

    A station is flagged insufficient when it has fewer than ``min_history``
    observations before ``target`` or no usable case in its training window.
    """
    levels = quantile_levels(quantile_count)
    clim, counts = climatology_quantiles(dataset.observations, target, levels)
    sl = arrays.window(target, window_days)
    err = arrays.ens_mean[:, sl] - arrays.obs[:, sl]
    err = np.where(arrays.usable[:, sl], err, np.nan)
    n_err = np.sum(np.isfinite(err), axis=1)
    err_q = np.full((dataset.n_stations, levels.size), np.nan)
    ok = n_err > 0
    if ok.any():
        err_q[ok] = np.nanquantile(err[ok], levels, axis=1).T
    feats = []
    for s, st in enumerate(dataset.stations):
        feats.append(
            FeatureVector(
                st.station_id, clim[s], err_q[s], bool(counts[s] >= min_history and n_err[s] > 0)
            )
        )
    return feats


def build_features(dataset, station, target_date, window_days, lead_time=1, quantile_count=12):
    """Unstandardized feature vector of one station (see :func:`station_features`)."""
    ids = dataset.station_ids
    s = ids.index(station) if isinstance(station, str) else int(station)
    arrays = lead_arrays(dataset, lead_time)
    return station_features(dataset, arrays, dataset.offset(target_date), window_days, quantile_count)[s]


# ---------------------------------------------------------------------------
# k-means


def _sq_dist(X, centers):
    return ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


class LloydKMeans(ClusterMixin, BaseEstimator):
    """Lloyd's k-means with k-means++ seeding.

    Ties between equidistant centroids go to the lowest cluster index. An
    empty cluster is re-seeded with the point farthest from its own centroid.
    Iteration stops when assignments no longer change or after ``max_iter``
    iterations. ``inertia_history_`` records the within-cluster sum of squares
    after every assignment step.
    """

    def __init__(self, n_clusters=8, max_iter=100, random_state=0):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.random_state = random_state

    def _init_centers(self, X, rng):
        n = X.shape[0]
        chosen = [int(rng.integers(n))]
        d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
        for _ in range(1, self.n_clusters):
            total = d2.sum()
            if total > 0:
                nxt = int(rng.choice(n, p=d2 / total))
            else:
                rest = np.setdiff1d(np.arange(n), chosen)
                nxt = int(rng.choice(rest))
            chosen.append(nxt)
            d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(axis=1))
        return X[chosen].copy()

    def fit(self, X, y=None):
        X = check_array(X)
        n = X.shape[0]
        k = self.n_clusters
        if k < 1:
            raise InputError("n_clusters must be >= 1")
        if k > n:
            raise InputError(f"n_clusters={k} exceeds the number of samples ({n})")
        rng = np.random.default_rng(self.random_state)
        centers = self._init_centers(X, rng)
        labels = None
        history = []
        n_iter = 0
        for n_iter in range(1, self.max_iter + 1):
            dist = _sq_dist(X, centers)
            new_labels = np.argmin(dist, axis=1)
            history.append(float(dist[np.arange(n), new_labels].sum()))
            if labels is not None and np.array_equal(new_labels, labels):
                break
            labels = new_labels
            point_cost = dist[np.arange(n), labels]
            used = set()
            for j in range(k):
                members = labels == j
                if members.any():
                    centers[j] = X[members].mean(axis=0)
            for j in range(k):
                if not (labels == j).any():
                    order = np.argsort(-point_cost, kind="stable")
                    far = next(int(i) for i in order if int(i) not in used)
                    used.add(far)
                    centers[j] = X[far]
        self.labels_ = labels if labels is not None else new_labels
        self.cluster_centers_ = centers
        self.inertia_history_ = history
        self.inertia_ = history[-1]
        self.n_iter_ = n_iter
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X)
        return np.argmin(_sq_dist(X, self.cluster_centers_), axis=1)


def standardize(matrix):
    """Per-coordinate z-scores across rows (population variance; constant columns map to 0)."""
    return StandardScaler().fit_transform(np.asarray(matrix, dtype=float))


def kmeans(features, k, seed=0, max_iter=100):
    """Cluster feature vectors; returns ``{station_id: cluster}``."""
    if k < 1 or k > len(features):
        raise InputError(f"k must lie in 1..{len(features)}")
    X = np.vstack([f.as_array() for f in features])
    model = LloydKMeans(n_clusters=k, max_iter=max_iter, random_state=seed).fit(X)
    return {f.station_id: int(c) for f, c in zip(features, model.labels_)}


@dataclass
class ClusterAssignment:
    labels: np.ndarray  # cluster index per station
    flagged: list  # station ids assigned by climatology only
    k_used: int


def cluster_stations(features, k, seed=0, max_iter=100):
    """Cluster stations from raw feature vectors.

    Sufficient stations are standardized and clustered on all coordinates.
    The others go to the nearest centroid on the climatology coordinates
    alone (cluster 0 if they have no history at all) and are flagged.
    """
    n = len(features)
    if k < 1 or k > n:
        raise InputError(f"cluster_count must lie in 1..{n}")
    labels = np.zeros(n, dtype=int)
    if k == 1:
        return ClusterAssignment(labels, [f.station_id for f in features if not f.sufficient], 1)
    good = np.array([f.sufficient for f in features])
    flagged = [f.station_id for f in features if not f.sufficient]
    if not good.any():
        return ClusterAssignment(labels, flagged, 1)
    X = np.vstack([features[i].as_array() for i in np.flatnonzero(good)])
    scaler = StandardScaler().fit(X)
    k_used = min(k, int(good.sum()))
    model = LloydKMeans(n_clusters=k_used, max_iter=max_iter, random_state=seed).fit(scaler.transform(X))
    labels[good] = model.labels_
    q = features[0].climatology_quantiles.size
    for i in np.flatnonzero(~good):
        clim = features[i].climatology_quantiles
        if np.all(np.isfinite(clim)):
            z = (clim - scaler.mean_[:q]) / scaler.scale_[:q]
            labels[i] = int(np.argmin(((model.cluster_centers_[:, :q] - z) ** 2).sum(axis=1)))
    return ClusterAssignment(labels, flagged, k_used)


# ---------------------------------------------------------------------------
# training-set selection


def station_groups(plan, dataset, arrays, target, seed=None):
    """Partition stations into training groups for one target day and lead.

    Returns ``(groups, assignment)`` where ``groups`` maps a group id to the
    sorted station indices sharing a training set, and ``assignment`` is the
    :class:`ClusterAssignment` for semi-local plans (else ``None``).
    """
    n = dataset.n_stations
    if plan.strategy == "regional":
        return {REGION_ID: np.arange(n)}, None
    if plan.strategy == "local":
        return {st.station_id: np.array([s]) for s, st in enumerate(dataset.stations)}, None
    plan.check_stations(n)
    feats = station_features(dataset, arrays, target, plan.window_days, plan.quantile_count)
    assignment = cluster_stations(feats, plan.cluster_count, plan.seed if seed is None else seed)
    groups = {}
    for label in np.unique(assignment.labels):
        groups[f"c{int(label)}"] = np.flatnonzero(assignment.labels == label)
    return groups, assignment


def select_training(plan, dataset, station, target_date, lead_time):
    """Training cases and group id for ``station`` on ``target_date``.

    Regional plans pool all stations, local plans use only the station, and
    semi-local plans pool the station's k-means cluster for this date.
    """
    s = dataset.station_ids.index(station) if isinstance(station, str) else int(station)
    target = dataset.offset(target_date)
    arrays = lead_arrays(dataset, lead_time) if plan.strategy == "semi_local" else None
    groups, _ = station_groups(plan, dataset, arrays, target)
    for gid, members in groups.items():
        if s in members:
            return rolling_window(dataset, target_date, lead_time, plan.window_days, stations=members), gid
    raise AssertionError("station missing from partition")


def verification_days(dataset, window_days, start=None, end=None):
    """Days with a forecast at every lead and ``window_days`` of history at every lead."""
    first = dataset.n_leads + window_days
    last = dataset.n_init
    if start is not None:
        first = max(first, dataset.offset(start))
    if end is not None:
        last = min(last, dataset.offset(end))
    return np.arange(first, last + 1)


def day_dates(dataset, days):
    return [dataset.start_date + timedelta(days=int(t)) for t in days]
