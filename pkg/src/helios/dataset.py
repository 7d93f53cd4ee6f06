"""Feature schema, CSV dataset format, windowing, splitting, batching.

The canonical dataset is a UTF-8, LF-terminated CSV with one hourly row
per location, grouped by location and hourly ascending. Timestamps use
a non-leap 365-day calendar. Floats are written with Python's shortest
round-trip repr, so identical data means identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    DataError,
    EncodingError,
    IntegrityError,
    ParameterError,
    SplitError,
)
from .rng import RngStream

CSV_HEADER = (
    "location_id,year,month,day,hour,temp_air_c,dni_wm2,dhi_wm2,sun_alt_deg,"
    "sun_azi_deg,wind_ms,rel_hum_pct,pm10_ugm3,g_eff_wm2,t_cell_c,vmp_v,imp_a,pmp_w"
)

_DAYS_IN_MONTH = (31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31)
_CUM_DAYS = tuple(sum(_DAYS_IN_MONTH[:i]) for i in range(12))  # days before month i+1


def month_day_from_doy(doy: int) -> tuple[int, int]:
    """(month, day) for a 1-based day of a non-leap year."""
    if not 1 <= doy <= 365:
        raise ParameterError(f"day of year must lie in [1, 365], got {doy}")
    for m in range(11, -1, -1):
        if doy > _CUM_DAYS[m]:
            return m + 1, doy - _CUM_DAYS[m]
    raise AssertionError("unreachable")


def day_of_year(month: int, day: int) -> int:
    return _CUM_DAYS[month - 1] + day


def absolute_hour(year: int, month: int, day: int, hour: int) -> int:
    """Hours since year 0 on the non-leap calendar."""
    return ((year * 365) + day_of_year(month, day) - 1) * 24 + hour


@dataclass
class WeatherRecord:
    """One hourly sample: ambient features plus operating-point labels."""

    location_id: str
    year: int
    month: int
    day: int
    hour: int
    temp_air: float  # degC
    dni: float  # W/m^2
    dhi: float  # W/m^2
    sun_alt: float  # degrees
    sun_azi: float  # degrees
    wind: float  # m/s
    rel_hum: float  # %
    pm10: float  # ug/m^3
    g_eff: float  # W/m^2 plane-of-array effective irradiance
    t_cell: float  # degC
    vmp: float  # V
    imp: float  # A
    pmp: float  # W

    def abs_hour(self) -> int:
        return absolute_hour(self.year, self.month, self.day, self.hour)

    def validate(self) -> None:
        for name in ("dni", "dhi", "g_eff", "pmp", "rel_hum", "pm10", "wind"):
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 1 <= self.month <= 12:
            raise DataError(f"month out of range: {self.month}")
        if not 0 <= self.hour <= 23:
            raise DataError(f"hour out of range: {self.hour}")
        if not -90.0 <= self.sun_alt <= 90.0:
            raise DataError(f"sun_alt out of range: {self.sun_alt}")
        prod = self.vmp * self.imp
        if abs(self.pmp - prod) > 1e-6 * max(1.0, abs(self.pmp)):
            raise DataError(f"pmp != vmp*imp: {self.pmp} vs {prod}")
        if self.g_eff < 1.0 and (self.vmp != 0.0 or self.imp != 0.0 or self.pmp != 0.0):
            raise DataError("night rows (g_eff < 1) must carry zero labels")


_NUM_FIELDS = [f.name for f in fields(WeatherRecord)][1:]  # all but location_id
_INT_FIELDS = {"year", "month", "day", "hour"}


def write_csv(records_by_location: dict[str, list[WeatherRecord]], path: str | Path) -> None:
    lines = [CSV_HEADER]
    for loc in records_by_location:
        for rec in records_by_location[loc]:
            vals = [rec.location_id]
            for name in _NUM_FIELDS:
                v = getattr(rec, name)
                vals.append(str(int(v)) if name in _INT_FIELDS else repr(float(v)))
            lines.append(",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_csv(path: str | Path) -> dict[str, list[WeatherRecord]]:
    """Parse the canonical CSV; rejects bad headers, interleaved location
    blocks, and non-monotone timestamps."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise DataError(f"{path}: missing or unexpected header")
    by_loc: dict[str, list[WeatherRecord]] = {}
    finished: set[str] = set()
    current = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 1 + len(_NUM_FIELDS):
            raise DataError(f"{path}:{lineno}: expected {1 + len(_NUM_FIELDS)} columns, got {len(parts)}")
        loc = parts[0]
        kwargs = {"location_id": loc}
        for name, raw in zip(_NUM_FIELDS, parts[1:]):
            kwargs[name] = int(raw) if name in _INT_FIELDS else float(raw)
        rec = WeatherRecord(**kwargs)
        if loc != current:
            if loc in finished:
                raise DataError(f"{path}:{lineno}: location {loc!r} appears in two blocks")
            if current is not None:
                finished.add(current)
            current = loc
            by_loc[loc] = []
        prev = by_loc[loc][-1] if by_loc[loc] else None
        if prev is not None and rec.abs_hour() <= prev.abs_hour():
            raise DataError(f"{path}:{lineno}: non-monotone timestamp for location {loc!r}")
        by_loc[loc].append(rec)
    return by_loc


# ---------------------------------------------------------------------------
# schema and normalization
# ---------------------------------------------------------------------------

CONTINUOUS_FEATURES = ("temp_air", "dni", "dhi", "sun_alt", "sun_azi", "wind", "rel_hum", "pm10")
CATEGORICAL_FEATURES = (("month", 12), ("hour", 24))


@dataclass(frozen=True)
class FeatureSchema:
    continuous: tuple = CONTINUOUS_FEATURES
    categorical: tuple = CATEGORICAL_FEATURES

    @property
    def n_cont(self) -> int:
        return len(self.continuous)

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(card for _, card in self.categorical)

    @property
    def n_onehot(self) -> int:
        """Total one-hot width: the sum of all cardinalities."""
        return sum(self.cardinalities)


SCHEMA = FeatureSchema()


@dataclass
class Normalizer:
    """Per-feature min/max fitted on training data, plus the target range."""

    lows: np.ndarray
    highs: np.ndarray
    y_min: float
    y_max: float

    @property
    def spans(self) -> np.ndarray:
        return self.highs - self.lows

    def constant_mask(self) -> np.ndarray:
        return self.spans == 0.0

    def transform_matrix(self, raw: np.ndarray) -> np.ndarray:
        spans = np.where(self.spans == 0.0, 1.0, self.spans)
        out = (raw - self.lows) / spans
        out[:, self.constant_mask()] = 0.0
        return out

    def inverse(self, normalized: np.ndarray) -> np.ndarray:
        return self.lows + normalized * self.spans


def _raw_matrix(records: list[WeatherRecord]) -> np.ndarray:
    return np.array(
        [[getattr(r, name) for name in CONTINUOUS_FEATURES] for r in records], dtype=np.float64
    ).reshape(len(records), len(CONTINUOUS_FEATURES))


def fit_normalizer(train: list[WeatherRecord]) -> Normalizer:
    if not train:
        raise DataError("cannot fit a normalizer on an empty training set")
    raw = _raw_matrix(train)
    vmp = np.array([r.vmp for r in train])
    return Normalizer(raw.min(axis=0), raw.max(axis=0), float(vmp.min()), float(vmp.max()))


def apply_normalizer(norm: Normalizer, rec: WeatherRecord) -> np.ndarray:
    """Min-max map of one record's continuous features; not clamped, so
    out-of-range test values extend affinely past [0, 1]."""
    return norm.transform_matrix(_raw_matrix([rec]))[0]


def encode_categorical(month: int, hour: int) -> np.ndarray:
    """One-hot [36]: positions 0-11 month, 12-35 hour."""
    if not 1 <= month <= 12:
        raise EncodingError(f"month out of range: {month}")
    if not 0 <= hour <= 23:
        raise EncodingError(f"hour out of range: {hour}")
    out = np.zeros(SCHEMA.n_onehot)
    out[month - 1] = 1.0
    out[12 + hour] = 1.0
    return out


# ---------------------------------------------------------------------------
# windows and batches
# ---------------------------------------------------------------------------


@dataclass
class WindowBatch:
    """Dense arrays for one batch of B windows of length T."""

    x_cont: np.ndarray  # [B, T, n_cont], normalized
    x_cat: np.ndarray  # [B, T, N] one-hot
    mask: np.ndarray  # [B, T] of {0, 1}
    target: np.ndarray  # [B] vmp at the final timestep, volts
    g_eff: np.ndarray  # [B] at final timestep
    t_cell: np.ndarray  # [B]
    pmp: np.ndarray  # [B]
    imp: np.ndarray  # [B]

    def __len__(self) -> int:
        return self.x_cont.shape[0]


class WindowSet:
    """All full windows over per-location contiguous hourly sequences.

    Feature rows are materialized once per location; batches are
    gathered through sliding-window views, so the per-window footprint
    is two integers.
    """

    def __init__(self, loc_feats, loc_vmp, loc_env, w_loc, w_end, t_window):
        self._feats = loc_feats  # list of [L, n_cont+N]
        self._vmp = loc_vmp  # list of [L]
        self._env = loc_env  # list of [L, 4]: g_eff, t_cell, pmp, imp
        self.w_loc = w_loc  # [n] location index per window
        self.w_end = w_end  # [n] final-record index per window
        self.t_window = t_window
        self._views = [
            sliding_window_view(f, t_window, axis=0) if f.shape[0] >= t_window else None
            for f in loc_feats
        ]

    def __len__(self) -> int:
        return len(self.w_loc)

    def select(self, indices: np.ndarray) -> "WindowSet":
        return WindowSet(
            self._feats, self._vmp, self._env, self.w_loc[indices], self.w_end[indices], self.t_window
        )

    def tail(self, k: int) -> "WindowSet":
        return self.select(np.arange(max(0, len(self) - k), len(self)))

    def targets(self) -> np.ndarray:
        out = np.empty(len(self))
        for i, (li, e) in enumerate(zip(self.w_loc, self.w_end)):
            out[i] = self._vmp[li][e]
        return out

    def env(self) -> np.ndarray:
        out = np.empty((len(self), 4))
        for i, (li, e) in enumerate(zip(self.w_loc, self.w_end)):
            out[i] = self._env[li][e]
        return out

    def gather(self, indices: np.ndarray) -> WindowBatch:
        n_feat = self._feats[0].shape[1] if self._feats else 0
        b = len(indices)
        t = self.t_window
        x = np.empty((b, t, n_feat))
        locs = self.w_loc[indices]
        ends = self.w_end[indices]
        for li in np.unique(locs):
            m = locs == li
            starts = ends[m] - t + 1
            x[m] = self._views[li][starts].transpose(0, 2, 1)
        n_cont = len(CONTINUOUS_FEATURES)
        vmp = np.array([self._vmp[li][e] for li, e in zip(locs, ends)])
        env = np.array([self._env[li][e] for li, e in zip(locs, ends)]).reshape(b, 4)
        return WindowBatch(
            x_cont=x[:, :, :n_cont],
            x_cat=x[:, :, n_cont:],
            mask=np.ones((b, t)),
            target=vmp,
            g_eff=env[:, 0],
            t_cell=env[:, 1],
            pmp=env[:, 2],
            imp=env[:, 3],
        )


def _check_contiguous(loc: str, records: list[WeatherRecord]) -> None:
    hours = [r.abs_hour() for r in records]
    for i in range(1, len(hours)):
        if hours[i] != hours[i - 1] + 1:
            raise IntegrityError(f"location {loc!r}: records {i - 1} and {i} are not consecutive hours")


def build_windows(
    by_location: dict[str, list[WeatherRecord]], t_window: int, normalizer: Normalizer
) -> WindowSet:
    """Every full window of t_window consecutive hours, per location.

    Locations shorter than t_window contribute nothing; no window spans
    two locations. Targets stay in volts.
    """
    if t_window < 1:
        raise ParameterError(f"t_window must be >= 1, got {t_window}")
    loc_feats, loc_vmp, loc_env = [], [], []
    w_loc, w_end = [], []
    for li, (loc, records) in enumerate(by_location.items()):
        _check_contiguous(loc, records)
        raw = _raw_matrix(records)
        cont = normalizer.transform_matrix(raw) if len(records) else raw
        onehot = np.array([encode_categorical(r.month, r.hour) for r in records]).reshape(
            len(records), SCHEMA.n_onehot
        )
        loc_feats.append(np.concatenate([cont, onehot], axis=1))
        loc_vmp.append(np.array([r.vmp for r in records]))
        loc_env.append(np.array([[r.g_eff, r.t_cell, r.pmp, r.imp] for r in records]).reshape(len(records), 4))
        for end in range(t_window - 1, len(records)):
            w_loc.append(li)
            w_end.append(end)
    return WindowSet(
        loc_feats,
        loc_vmp,
        loc_env,
        np.asarray(w_loc, dtype=np.int64),
        np.asarray(w_end, dtype=np.int64),
        t_window,
    )


def batches(windows: WindowSet, batch_size: int, shuffle_rng: RngStream | None = None):
    """Shuffle (when given an rng) then group; the final short batch is
    emitted as-is, so every window appears exactly once."""
    if batch_size < 1:
        raise ParameterError(f"batch_size must be >= 1, got {batch_size}")
    n = len(windows)
    order = shuffle_rng.permutation(n) if shuffle_rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield windows.gather(order[start : start + batch_size])


# ---------------------------------------------------------------------------
# train/test split
# ---------------------------------------------------------------------------


@dataclass
class Split:
    train: dict[str, list[WeatherRecord]]  # holdout rows removed
    test_location: str | None
    test_records: list[WeatherRecord]  # full test-location history
    holdout_hours: int


def split_train_test(
    by_location: dict[str, list[WeatherRecord]],
    seed: int,
    holdout_hours: int = 200,
    t_window: int = 50,
) -> Split:
    """Hold out the final hours of one seeded-uniform location.

    The held-out rows are excluded from training windows and from
    normalizer fitting; test windows may still reach back into earlier
    rows of the same location for history.
    """
    if holdout_hours == 0:
        return Split(train=dict(by_location), test_location=None, test_records=[], holdout_hours=0)
    eligible = [loc for loc, recs in by_location.items() if len(recs) >= holdout_hours + t_window]
    if not eligible:
        raise SplitError(f"no location has >= {holdout_hours + t_window} records")
    pick = eligible[int(RngStream(seed, stream_id=0).integers(0, len(eligible)))]
    train = {}
    for loc, recs in by_location.items():
        train[loc] = recs[: len(recs) - holdout_hours] if loc == pick else recs
    return Split(train=train, test_location=pick, test_records=list(by_location[pick]), holdout_hours=holdout_hours)


@dataclass
class PreparedData:
    """Window sets plus the train-fitted normalizer for one experiment."""

    normalizer: Normalizer
    train_windows: WindowSet
    val_windows: WindowSet
    test_windows: WindowSet
    test_location: str | None
    val_location: str | None


def prepare_data(
    by_location: dict[str, list[WeatherRecord]],
    seed: int,
    holdout_hours: int = 200,
    val_hours: int = 200,
    t_window: int = 50,
) -> PreparedData:
    """Split, fit the normalizer on training rows only, and window.

    Validation takes the final hours of a second seeded location (when
    one is long enough); its holdout is excluded from training windows
    and normalizer fitting as well, so it monitors without leaking.
    """
    split = split_train_test(by_location, seed, holdout_hours, t_window)
    train = split.train

    val_location = None
    val_records: list[WeatherRecord] = []
    if val_hours > 0:
        eligible = [
            loc
            for loc, recs in train.items()
            if loc != split.test_location and len(recs) >= val_hours + t_window
        ]
        if eligible:
            val_location = eligible[int(RngStream(seed, stream_id=1).integers(0, len(eligible)))]
            val_records = list(train[val_location])
            train = dict(train)
            train[val_location] = val_records[: len(val_records) - val_hours]

    train_flat = [r for recs in train.values() for r in recs]
    normalizer = fit_normalizer(train_flat)
    train_windows = build_windows(train, t_window, normalizer)

    def _holdout_windows(records, loc, hours):
        if not records:
            return build_windows({}, t_window, normalizer)
        full = build_windows({loc: records}, t_window, normalizer)
        return full.tail(hours)

    val_windows = _holdout_windows(val_records, val_location, val_hours)
    test_windows = _holdout_windows(split.test_records, split.test_location, holdout_hours)
    return PreparedData(
        normalizer=normalizer,
        train_windows=train_windows,
        val_windows=val_windows,
        test_windows=test_windows,
        test_location=split.test_location,
        val_location=val_location,
    )
