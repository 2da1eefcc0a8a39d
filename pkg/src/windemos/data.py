"""Dataset model, synthetic dual-resolution ensembles and CSV persistence.

A :class:`Dataset` stores everything as dense arrays:

* ``observations[s, t]`` is the wind speed at station ``s`` on day
  ``start_date + t`` (NaN when missing);
* ``high[s, d, l, m]`` / ``low[s, d, l, m]`` hold member ``m`` of the forecast
  initialized on day ``d`` for lead time ``l + 1`` days.

The forecast initialized on day ``d`` with lead ``l`` verifies on day ``d + l``.
"""

import json
from dataclasses import asdict, dataclass, field, fields
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import InputError, SchemaError

SCHEMA_VERSION = 1
MAX_LEAD = 15

STATION_COLUMNS = ["station_id", "latitude", "longitude", "site_scale"]
OBSERVATION_COLUMNS = ["station_id", "date", "wind_speed"]
FORECAST_COLUMNS = ["station_id", "init_date", "lead_time", "resolution", "member_index", "value"]


class DataValidationError(SchemaError):
    """A value violates a physical constraint (e.g. negative wind speed)."""


@dataclass(frozen=True)
class Station:
    station_id: str
    latitude: float
    longitude: float
    site_scale: float

    def __post_init__(self):
        if abs(self.latitude) > 90 or abs(self.longitude) > 180:
            raise InputError(f"station {self.station_id}: coordinates out of range")
        if not self.site_scale > 0:
            raise InputError(f"station {self.station_id}: site_scale must be positive")


@dataclass(frozen=True)
class ForecastCase:
    station_id: str
    init_date: date
    lead_time: int
    members_low: np.ndarray
    members_high: np.ndarray
    observation: float | None = None

    def __post_init__(self):
        if not 1 <= self.lead_time <= MAX_LEAD:
            raise InputError(f"lead time must lie in 1..{MAX_LEAD}")
        object.__setattr__(self, "members_low", np.asarray(self.members_low, dtype=float).reshape(-1))
        object.__setattr__(self, "members_high", np.asarray(self.members_high, dtype=float).reshape(-1))
        for arr in (self.members_low, self.members_high):
            if np.any(arr < 0):
                raise InputError("ensemble members must be non-negative")
        if self.observation is not None and not np.isnan(self.observation) and self.observation < 0:
            raise InputError("observation must be non-negative")

    @property
    def verification_date(self):
        return self.init_date + timedelta(days=self.lead_time)

    @property
    def has_observation(self):
        return self.observation is not None and not np.isnan(self.observation)

    @property
    def complete(self):
        """True when no member is missing."""
        return not (np.isnan(self.members_low).any() or np.isnan(self.members_high).any())


def subset_members(case, m_low, m_high, rng=None):
    """Keep ``m_low`` low- and ``m_high`` high-resolution members.

    By default the leading members are kept. Passing a numpy ``Generator`` as
    ``rng`` draws a random subset instead (member order preserved).
    """
    n_low, n_high = case.members_low.size, case.members_high.size
    if m_low < 0 or m_high < 0 or m_low + m_high < 1:
        raise InputError("need at least one member in the subset")
    if m_low > n_low or m_high > n_high:
        raise InputError(
            f"requested ({m_low}, {m_high}) members but only ({n_low}, {n_high}) are available"
        )
    if rng is None:
        low, high = case.members_low[:m_low], case.members_high[:m_high]
    else:
        low = case.members_low[np.sort(rng.choice(n_low, m_low, replace=False))]
        high = case.members_high[np.sort(rng.choice(n_high, m_high, replace=False))]
    return ForecastCase(case.station_id, case.init_date, case.lead_time, low, high, case.observation)


@dataclass
class Dataset:
    stations: list
    start_date: date
    observations: np.ndarray
    high: np.ndarray
    low: np.ndarray
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        s = len(self.stations)
        if self.high.ndim != 4 or self.low.ndim != 4:
            raise InputError("forecast arrays must be 4-d (station, init, lead, member)")
        if self.high.shape[:3] != self.low.shape[:3] or self.high.shape[0] != s:
            raise InputError("forecast array shapes disagree")
        if self.observations.shape != (s, self.n_days):
            raise InputError(f"observations must have shape {(s, self.n_days)}")
        ids = [st.station_id for st in self.stations]
        if len(set(ids)) != len(ids):
            raise InputError("station ids must be unique")

    @property
    def station_ids(self):
        return [st.station_id for st in self.stations]

    @property
    def n_stations(self):
        return len(self.stations)

    @property
    def n_init(self):
        return self.high.shape[1]

    @property
    def n_leads(self):
        return self.high.shape[2]

    @property
    def n_days(self):
        return self.n_init + self.n_leads

    @property
    def members_high(self):
        return self.high.shape[3]

    @property
    def members_low(self):
        return self.low.shape[3]

    def day(self, offset):
        return self.start_date + timedelta(days=int(offset))

    def offset(self, day):
        return (day - self.start_date).days

    def case(self, s, d, lead):
        obs = self.observations[s, d + lead]
        return ForecastCase(
            station_id=self.stations[s].station_id,
            init_date=self.day(d),
            lead_time=lead,
            members_low=self.low[s, d, lead - 1],
            members_high=self.high[s, d, lead - 1],
            observation=None if np.isnan(obs) else float(obs),
        )

    def cases(self, lead=None):
        leads = range(1, self.n_leads + 1) if lead is None else [lead]
        for s in range(self.n_stations):
            for d in range(self.n_init):
                for lt in leads:
                    yield self.case(s, d, lt)

    def subset(self, m_low, m_high):
        """Dataset restricted to the leading ``m_low``/``m_high`` members (views, no copy)."""
        if m_low + m_high < 1 or m_low < 0 or m_high < 0:
            raise InputError("need at least one member in the subset")
        if m_low > self.members_low or m_high > self.members_high:
            raise InputError(
                f"requested ({m_low}, {m_high}) members but only "
                f"({self.members_low}, {self.members_high}) are available"
            )
        return Dataset(
            self.stations, self.start_date, self.observations,
            self.high[..., :m_high], self.low[..., :m_low], self.manifest,
        )

    def equals(self, other):
        return (
            self.stations == other.stations
            and self.start_date == other.start_date
            and np.array_equal(self.observations, other.observations, equal_nan=True)
            and np.array_equal(self.high, other.high, equal_nan=True)
            and np.array_equal(self.low, other.low, equal_nan=True)
        )


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of the synthetic wind-speed generator.

    Error parameters are fractions of each station's ``site_scale`` and are
    given as ``(value at lead 1, increment per lead day)``.
    """

    station_count: int = 120
    date_count: int = 300
    lead_count: int = 15
    members_low_total: int = 100
    members_high_total: int = 50
    ar_coefficient: float = 0.7
    truth_cv: float = 0.35
    site_scale_range: tuple = (4.0, 10.0)
    obs_noise: float = 0.12
    bias_high: tuple = (0.02, 0.004)
    bias_low: tuple = (0.08, 0.008)
    shared_high: tuple = (0.02, 0.016)
    shared_low: tuple = (0.04, 0.022)
    spread_high: tuple = (0.04, 0.010)
    spread_low: tuple = (0.08, 0.018)
    missing_obs_fraction: float = 0.0
    start_date: str = "2023-01-01"
    seed: int = 20240531

    def __post_init__(self):
        for name in ("station_count", "date_count", "lead_count"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be >= 1")
        if not 1 <= self.lead_count <= MAX_LEAD:
            raise InputError(f"lead_count must lie in 1..{MAX_LEAD}")
        if self.members_low_total < 0 or self.members_high_total < 0:
            raise InputError("member counts must be non-negative")
        if self.members_low_total + self.members_high_total < 1:
            raise InputError("need at least one ensemble member")
        if not 0 <= self.ar_coefficient < 1:
            raise InputError("ar_coefficient must lie in [0, 1)")
        lo, hi = self.site_scale_range
        if not 0 < lo <= hi:
            raise InputError("site_scale_range must be positive and ordered")
        if self.truth_cv < 0 or self.obs_noise < 0:
            raise InputError("truth_cv and obs_noise must be non-negative")
        for name in ("shared_high", "shared_low", "spread_high", "spread_low"):
            base, slope = getattr(self, name)
            if base < 0 or base + slope * (self.lead_count - 1) < 0:
                raise InputError(f"{name} must be non-negative at every lead time")
        if not 0 <= self.missing_obs_fraction < 1:
            raise InputError("missing_obs_fraction must lie in [0, 1)")
        date.fromisoformat(self.start_date)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in names}
        return cls(**kwargs)


def _lead_profile(pair, leads):
    base, slope = pair
    return base + slope * (leads - 1)


def generate(config=SyntheticConfig(), return_truth=False):
    """Generate a synthetic dual-resolution dataset.

    The truth at each station is ``site_scale * (1 + truth_cv * z)`` with ``z``
    a unit-variance AR(1) process. Observations add Gaussian noise; members
    add a per-resolution bias, an error shared by all members of one
    resolution and independent member noise. Negative values are clamped to
    zero. Each station draws from its own stream spawned from ``config.seed``.

    Returns
    -------
    Dataset
        With ``manifest`` describing the configuration and seeds.
    truth : ndarray, shape (station_count, date_count + lead_count)
        The latent truth per station and day, only if ``return_truth``.
    """
    c = config
    n_days = c.date_count + c.lead_count
    leads = np.arange(1, c.lead_count + 1, dtype=float)
    root = np.random.SeedSequence(c.seed)
    meta_rng = np.random.default_rng(root.spawn(1)[0])
    lo, hi = c.site_scale_range
    site_scales = meta_rng.uniform(lo, hi, c.station_count)
    lats = meta_rng.uniform(35.0, 70.0, c.station_count)
    lons = meta_rng.uniform(-10.0, 30.0, c.station_count)
    width = max(3, len(str(c.station_count)))
    stations = [
        Station(f"S{i:0{width}d}", float(lats[i]), float(lons[i]), float(site_scales[i]))
        for i in range(c.station_count)
    ]

    profiles = {
        "high": [_lead_profile(getattr(c, f"{k}_high"), leads) for k in ("bias", "shared", "spread")],
        "low": [_lead_profile(getattr(c, f"{k}_low"), leads) for k in ("bias", "shared", "spread")],
    }
    counts = {"high": c.members_high_total, "low": c.members_low_total}
    obs = np.empty((c.station_count, n_days))
    truths = np.empty((c.station_count, n_days))
    arrays = {
        r: np.empty((c.station_count, c.date_count, c.lead_count, counts[r])) for r in ("high", "low")
    }
    station_seqs = root.spawn(c.station_count + 1)[1:]
    innov_scale = np.sqrt(1.0 - c.ar_coefficient**2)
    for s, seq in enumerate(station_seqs):
        rng = np.random.default_rng(seq)
        scale = site_scales[s]
        eps = rng.standard_normal(n_days)
        z = np.empty(n_days)
        z[0] = eps[0]
        for t in range(1, n_days):
            z[t] = c.ar_coefficient * z[t - 1] + innov_scale * eps[t]
        truth = scale * (1.0 + c.truth_cv * z)
        truths[s] = truth
        obs[s] = np.maximum(0.0, truth + scale * c.obs_noise * rng.standard_normal(n_days))
        if c.missing_obs_fraction > 0:
            obs[s, rng.random(n_days) < c.missing_obs_fraction] = np.nan
        # truth at the verification day of every (init, lead) cell
        verif = truth[np.arange(c.date_count)[:, None] + leads.astype(int)[None, :]]
        for r in ("high", "low"):
            bias, shared, spread = profiles[r]
            centre = verif + scale * (bias + shared * rng.standard_normal(verif.shape))
            noise = rng.standard_normal(verif.shape + (counts[r],))
            arrays[r][s] = np.maximum(0.0, centre[..., None] + scale * spread[None, :, None] * noise)

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "generator": "ar1-truth/shared-and-member-noise",
        "config": asdict(c),
        "seeds": {
            "master": c.seed,
            "metadata_stream": 0,
            "station_streams": "SeedSequence(master).spawn(station_count + 1)[1:]",
        },
        "nonnegativity": "values clamped with max(0, x)",
    }
    dataset = Dataset(stations, date.fromisoformat(c.start_date), obs, arrays["high"], arrays["low"], manifest)
    return (dataset, truths) if return_truth else dataset


def generate_emos_cases(a, b_high, b_low, c, d, n, seed=0, mean_range=(1.0, 12.0), variance_range=(0.1, 4.0)):
    """Draw ensemble summaries and observations from a known truncated-normal EMOS law.

    Summaries are sampled independently of the law; observations are drawn by
    ``scipy.stats.truncnorm``. Returns ``(X, y)`` with ``X`` columns
    ``[mean_high, mean_low, pooled_variance]``.
    """
    from scipy import stats

    rng = np.random.default_rng(seed)
    mean_high = rng.uniform(*mean_range, n)
    mean_low = np.clip(mean_high + rng.normal(0.0, 0.25 * (mean_range[1] - mean_range[0]), n), 0.0, None)
    s2 = rng.uniform(*variance_range, n)
    mu = a + b_high**2 * mean_high + b_low**2 * mean_low
    sigma = np.sqrt(c**2 + d**2 * s2)
    y = stats.truncnorm.rvs(-mu / sigma, np.inf, loc=mu, scale=sigma, random_state=rng)
    return np.column_stack([mean_high, mean_low, s2]), y


# ---------------------------------------------------------------------------
# persistence


def _fmt(x):
    return np.char.mod("%.17g", x)


def save(dataset, path):
    """Write ``stations.csv``, ``observations.csv``, ``forecasts.csv`` and ``manifest.json``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    ds = dataset
    pd.DataFrame(
        {
            "station_id": ds.station_ids,
            "latitude": _fmt([st.latitude for st in ds.stations]),
            "longitude": _fmt([st.longitude for st in ds.stations]),
            "site_scale": _fmt([st.site_scale for st in ds.stations]),
        }
    ).to_csv(path / "stations.csv", index=False)

    ids = np.asarray(ds.station_ids, dtype=object)
    days = np.asarray([ds.day(t).isoformat() for t in range(ds.n_days)], dtype=object)
    obs = ds.observations
    obs_text = np.where(np.isnan(obs), "", _fmt(np.nan_to_num(obs)))
    pd.DataFrame(
        {
            "station_id": np.repeat(ids, ds.n_days),
            "date": np.tile(days, ds.n_stations),
            "wind_speed": obs_text.reshape(-1),
        }
    ).to_csv(path / "observations.csv", index=False)

    with open(path / "forecasts.csv", "w", newline="") as fh:
        fh.write(",".join(FORECAST_COLUMNS) + "\n")
        for label, arr in (("H", ds.high), ("L", ds.low)):
            n_mem = arr.shape[3]
            if n_mem == 0:
                continue
            s_idx, d_idx, l_idx, m_idx = np.indices(arr.shape).reshape(4, -1)
            values = arr.reshape(-1)
            keep = ~np.isnan(values)
            frame = pd.DataFrame(
                {
                    "station_id": ids[s_idx[keep]],
                    "init_date": days[d_idx[keep]],
                    "lead_time": l_idx[keep] + 1,
                    "resolution": label,
                    "member_index": m_idx[keep],
                    "value": _fmt(values[keep]),
                }
            )
            frame.to_csv(fh, index=False, header=False)

    manifest = dict(ds.manifest)
    manifest.setdefault("schema_version", SCHEMA_VERSION)
    with open(path / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _read_csv(file, columns):
    if not file.exists():
        raise SchemaError("file not found", path=file)
    df = pd.read_csv(file, dtype=str, keep_default_na=False)
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise SchemaError(f"missing columns {missing}; expected {columns}", path=file, line=1)
    return df


def _numeric(df, column, file, allow_empty=False, integer=False):
    text = df[column].str.strip()
    try:
        # numpy parses correctly rounded, so %.17g text round-trips exactly
        values = text.where(text != "", "nan").to_numpy(dtype=str).astype(float)
    except ValueError:
        values = pd.to_numeric(text.where(text != "", np.nan), errors="coerce").to_numpy(dtype=float)
    bad = np.isnan(values) & ~((text == "").to_numpy() & allow_empty)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise SchemaError(f"column {column!r}: cannot parse {df[column].iloc[row]!r}", path=file, line=row + 2)
    if integer:
        frac = values != np.round(values)
        if frac.any():
            row = int(np.flatnonzero(frac)[0])
            raise SchemaError(f"column {column!r}: expected an integer", path=file, line=row + 2)
    return values


def _dates(df, column, file):
    try:
        return pd.to_datetime(df[column], format="%Y-%m-%d").dt.date.to_numpy()
    except (ValueError, TypeError):
        for row, text in enumerate(df[column]):
            try:
                date.fromisoformat(text)
            except ValueError:
                raise SchemaError(f"column {column!r}: invalid ISO date {text!r}", path=file, line=row + 2)
        raise


def _nonnegative(values, column, file):
    neg = values < 0
    if neg.any():
        row = int(np.flatnonzero(neg)[0])
        raise DataValidationError(
            f"column {column!r}: negative wind speed {values[row]!r}", path=file, line=row + 2
        )


def load(path):
    """Read a dataset written by :func:`save` (or any files following the same schemas)."""
    path = Path(path)
    st_file, obs_file, fc_file = path / "stations.csv", path / "observations.csv", path / "forecasts.csv"

    st = _read_csv(st_file, STATION_COLUMNS)
    lat = _numeric(st, "latitude", st_file)
    lon = _numeric(st, "longitude", st_file)
    scale = _numeric(st, "site_scale", st_file)
    stations = []
    for i, sid in enumerate(st["station_id"]):
        try:
            stations.append(Station(sid, float(lat[i]), float(lon[i]), float(scale[i])))
        except InputError as exc:
            raise SchemaError(str(exc), path=st_file, line=i + 2) from exc
    index = {sid: i for i, sid in enumerate(st["station_id"])}
    if len(index) != len(stations):
        raise SchemaError("duplicate station_id", path=st_file)

    obs_df = _read_csv(obs_file, OBSERVATION_COLUMNS)
    obs_dates = _dates(obs_df, "date", obs_file)
    obs_vals = _numeric(obs_df, "wind_speed", obs_file, allow_empty=True)
    _nonnegative(np.nan_to_num(obs_vals), "wind_speed", obs_file)

    fc = _read_csv(fc_file, FORECAST_COLUMNS)
    init_dates = _dates(fc, "init_date", fc_file)
    leads = _numeric(fc, "lead_time", fc_file, integer=True).astype(int)
    members = _numeric(fc, "member_index", fc_file, integer=True).astype(int)
    values = _numeric(fc, "value", fc_file)
    _nonnegative(values, "value", fc_file)
    res = fc["resolution"].to_numpy()
    bad = ~np.isin(res, ["H", "L"])
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise SchemaError(f"resolution must be H or L, got {res[row]!r}", path=fc_file, line=row + 2)
    bad = (leads < 1) | (leads > MAX_LEAD)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise SchemaError(f"lead_time must lie in 1..{MAX_LEAD}", path=fc_file, line=row + 2)
    if (members < 0).any():
        row = int(np.flatnonzero(members < 0)[0])
        raise SchemaError("member_index must be >= 0", path=fc_file, line=row + 2)

    def station_rows(df, file):
        ids = df["station_id"].map(index)
        if ids.isna().any():
            row = int(np.flatnonzero(ids.isna().to_numpy())[0])
            raise SchemaError(f"unknown station_id {df['station_id'].iloc[row]!r}", path=file, line=row + 2)
        return ids.to_numpy(dtype=int)

    fc_station = station_rows(fc, fc_file)
    obs_station = station_rows(obs_df, obs_file)

    candidates = list(init_dates) + list(obs_dates)
    if not candidates:
        raise SchemaError("no forecasts or observations", path=path)
    start = min(init_dates) if len(init_dates) else min(obs_dates)
    d_off = np.array([(d - start).days for d in init_dates], dtype=int)
    o_off = np.array([(d - start).days for d in obs_dates], dtype=int)
    if (o_off < 0).any():
        row = int(np.flatnonzero(o_off < 0)[0])
        raise SchemaError("observation precedes the first forecast initialization", path=obs_file, line=row + 2)
    n_init = int(d_off.max()) + 1 if d_off.size else 0
    n_leads = int(leads.max()) if leads.size else 1
    is_h = res == "H"
    m_high = int(members[is_h].max()) + 1 if is_h.any() else 0
    m_low = int(members[~is_h].max()) + 1 if (~is_h).any() else 0
    n_days = n_init + n_leads
    if o_off.size and o_off.max() >= n_days:
        row = int(np.argmax(o_off))
        raise SchemaError("observation beyond the last verification day", path=obs_file, line=row + 2)

    s = len(stations)
    high = np.full((s, n_init, n_leads, m_high), np.nan)
    low = np.full((s, n_init, n_leads, m_low), np.nan)
    high[fc_station[is_h], d_off[is_h], leads[is_h] - 1, members[is_h]] = values[is_h]
    low[fc_station[~is_h], d_off[~is_h], leads[~is_h] - 1, members[~is_h]] = values[~is_h]
    observations = np.full((s, n_days), np.nan)
    observations[obs_station, o_off] = obs_vals

    manifest = {}
    if (path / "manifest.json").exists():
        with open(path / "manifest.json") as fh:
            manifest = json.load(fh)
    return Dataset(stations, start, observations, high, low, manifest)


def save_manifest(config, path):
    """Write only ``manifest.json`` for a synthetic dataset; :func:`open_dataset` regenerates it."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "generator": "ar1-truth/shared-and-member-noise",
        "config": asdict(config),
        "stored": "manifest-only",
    }
    with open(path / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")


def open_dataset(path):
    """Load a dataset directory.

    Directories holding the three CSV files are read with :func:`load`. A
    directory with only a synthetic ``manifest.json`` is regenerated from the
    configuration it records.
    """
    path = Path(path)
    if (path / "forecasts.csv").exists():
        return load(path)
    manifest_file = path / "manifest.json"
    if not manifest_file.exists():
        raise InputError(f"{path} holds neither forecasts.csv nor manifest.json")
    with open(manifest_file) as fh:
        manifest = json.load(fh)
    if "config" not in manifest:
        raise SchemaError("manifest has no synthetic generator config", path=manifest_file)
    return generate(SyntheticConfig.from_dict(manifest["config"]))
