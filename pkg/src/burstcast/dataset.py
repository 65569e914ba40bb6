"""Feature engineering, chronological splits, train-only scaling and windowing."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .ingest import PanelSeries, WeekId

WARMUP_WEEKS = 52
SEASON = 52
DEGENERATE_STD = 1e-12
DEFAULT_FRACTIONS = (0.70, 0.15, 0.15)

GROUP_ORDER = ("lag", "rolling", "temporal", "casualty", "geography", "dummy")
TABLE4_GROUPS = frozenset({"lag", "rolling", "temporal", "casualty", "geography"})


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    """Which feature groups to build and how.

    ``temporal_style`` is ``"calendar"`` (year, ISO week, month, quarter,
    day-of-year: 5 columns) or ``"cyclic"`` (sin/cos of week-of-year and of
    month: 4 columns). The ``dummy`` group is a single all-zero column used as
    a null control in ablations.
    """

    groups: frozenset = TABLE4_GROUPS
    lag_set: tuple = (52,)
    rolling_windows: tuple = (4, 12, 52)
    temporal_style: str = "calendar"
    geography_encoding: str = "index"
    profile_name: str = "compact"

    def __post_init__(self) -> None:
        object.__setattr__(self, "groups", frozenset(self.groups))
        object.__setattr__(self, "lag_set", tuple(int(v) for v in self.lag_set))
        object.__setattr__(self, "rolling_windows", tuple(int(v) for v in self.rolling_windows))
        unknown = set(self.groups) - set(GROUP_ORDER)
        if unknown:
            raise DatasetError(f"unknown feature groups {sorted(unknown)}")
        if self.temporal_style not in ("calendar", "cyclic"):
            raise DatasetError(f"unknown temporal_style {self.temporal_style!r}")
        if self.geography_encoding not in ("index", "onehot"):
            raise DatasetError(f"unknown geography_encoding {self.geography_encoding!r}")
        if any(v < 1 for v in self.lag_set + self.rolling_windows):
            raise DatasetError("lags and rolling windows must be >= 1")
        if max(self.lag_set + self.rolling_windows, default=0) > WARMUP_WEEKS:
            raise DatasetError(f"lags and windows may not exceed the {WARMUP_WEEKS}-week warm-up")

    @classmethod
    def profile(cls, name: str = "compact", **overrides) -> FeatureConfig:
        if name == "compact":
            base = cls()
        elif name == "extended":
            base = cls(
                groups=frozenset({"lag", "rolling", "temporal", "geography"}),
                lag_set=(1, 2, 4, 12, 26, 52),
                temporal_style="cyclic",
                geography_encoding="onehot",
                profile_name="extended",
            )
        else:
            raise DatasetError(f"unknown feature profile {name!r}")
        return replace(base, **overrides) if overrides else base

    def without(self, group: str) -> FeatureConfig:
        if group not in GROUP_ORDER:
            raise DatasetError(f"unknown feature group {group!r}")
        return replace(self, groups=self.groups - {group})

    def feature_names(self, n_geos: int) -> list[str]:
        names: list[str] = []
        for group in GROUP_ORDER:
            if group not in self.groups:
                continue
            names.extend(_group_names(self, group, n_geos))
        return names

    def group_width(self, group: str, n_geos: int) -> int:
        return len(_group_names(self, group, n_geos))

    def width(self, n_geos: int) -> int:
        return len(self.feature_names(n_geos))

    def to_dict(self) -> dict:
        return {
            "profile_name": self.profile_name,
            "groups": [g for g in GROUP_ORDER if g in self.groups],
            "lag_set": list(self.lag_set),
            "rolling_windows": list(self.rolling_windows),
            "temporal_style": self.temporal_style,
            "geography_encoding": self.geography_encoding,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> FeatureConfig:
        doc = dict(doc)
        base = cls.profile(doc.pop("profile_name", doc.pop("profile", "compact")))
        if "groups" in doc:
            doc["groups"] = frozenset(doc["groups"])
        return replace(base, **doc)


def _group_names(cfg: FeatureConfig, group: str, n_geos: int) -> list[str]:
    if group == "lag":
        return [f"lag_{k}" for k in cfg.lag_set]
    if group == "rolling":
        return [f"roll{stat}_{w}" for w in cfg.rolling_windows for stat in ("mean", "std")]
    if group == "temporal":
        if cfg.temporal_style == "calendar":
            return ["year", "week", "month", "quarter", "day_of_year"]
        return ["week_sin", "week_cos", "month_sin", "month_cos"]
    if group == "casualty":
        return ["casualties_total", "killed", "wounded"]
    if group == "geography":
        if cfg.geography_encoding == "index":
            return ["geo_index"]
        return [f"geo_{i}" for i in range(n_geos)]
    if group == "dummy":
        return ["dummy_zero"]
    raise DatasetError(f"unknown feature group {group!r}")


def cyclic_encoding(position: float, period: float) -> tuple[float, float]:
    """(sin, cos) of ``2*pi*position/period``."""
    angle = 2.0 * math.pi * position / period
    return math.sin(angle), math.cos(angle)


def trailing_mean_std(y: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Population mean/std over ``y[..., t-window+1 : t+1]`` along the last axis.

    Positions with fewer than ``window`` observations are NaN.
    """
    y = np.asarray(y, dtype=np.float64)
    mean = np.full(y.shape, np.nan)
    std = np.full(y.shape, np.nan)
    if y.shape[-1] >= window:
        win = np.lib.stride_tricks.sliding_window_view(y, window, axis=-1)
        mean[..., window - 1 :] = win.mean(axis=-1)
        std[..., window - 1 :] = win.std(axis=-1)
    return mean, std


@dataclass
class FeatureMatrix:
    """Engineered features per geography and post-warm-up week.

    ``values[g, r]`` describes week ``weeks[r]`` (panel index ``offset + r``);
    ``target[g, r]`` is the raw count one week later and ``current[g, r]`` the
    count in week ``weeks[r]`` itself.
    """

    weeks: list[WeekId]
    geo_ids: list[int]
    values: np.ndarray
    target: np.ndarray
    current: np.ndarray
    feature_names: list[str]
    unscaled: np.ndarray
    offset: int = WARMUP_WEEKS
    config: FeatureConfig = field(default_factory=FeatureConfig)

    @property
    def n_rows(self) -> int:
        return len(self.weeks)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def to_csv(self, dest: str | Path) -> None:
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["geo_id", "iso_monday", *self.feature_names, "target"])
            for gi, geo in enumerate(self.geo_ids):
                for r, week in enumerate(self.weeks):
                    writer.writerow(
                        [geo, week.isoformat(), *(repr(float(v)) for v in self.values[gi, r]), int(self.target[gi, r])]
                    )


def build_features(panel: PanelSeries, config: FeatureConfig | None = None) -> FeatureMatrix:
    """Build the feature tensor; no column at week t reads any week after t."""
    config = config or FeatureConfig()
    n_t = panel.n_weeks
    min_len = WARMUP_WEEKS + 2
    if n_t < min_len:
        raise DatasetError(f"panel has {n_t} weeks; at least {min_len} are required ({WARMUP_WEEKS} warm-up + 2)")
    y = panel.counts.astype(np.float64)
    n_g = panel.n_geos
    rows = slice(WARMUP_WEEKS, n_t - 1)
    n_r = n_t - 1 - WARMUP_WEEKS
    mondays = [w.monday_date for w in panel.weeks[rows]]

    cols: list[np.ndarray] = []
    unscaled: list[bool] = []

    def add(col: np.ndarray, exempt: bool = False) -> None:
        cols.append(np.broadcast_to(col, (n_g, n_r)))
        unscaled.append(exempt)

    for group in GROUP_ORDER:
        if group not in config.groups:
            continue
        if group == "lag":
            for k in config.lag_set:
                add(y[:, WARMUP_WEEKS - k : n_t - 1 - k])
        elif group == "rolling":
            for w in config.rolling_windows:
                mean, std = trailing_mean_std(y, w)
                add(mean[:, rows])
                add(std[:, rows])
        elif group == "temporal":
            if config.temporal_style == "calendar":
                iso = [m.isocalendar() for m in mondays]
                add(np.array([(m.year - 2000) / 10.0 for m in mondays]))
                add(np.array([float(c[1]) for c in iso]))
                add(np.array([float(m.month) for m in mondays]))
                add(np.array([float((m.month - 1) // 3 + 1) for m in mondays]))
                add(np.array([float(m.timetuple().tm_yday) for m in mondays]))
            else:
                wk = [cyclic_encoding(m.isocalendar()[1], SEASON) for m in mondays]
                mo = [cyclic_encoding(m.month, 12) for m in mondays]
                add(np.array([s for s, _ in wk]))
                add(np.array([c for _, c in wk]))
                add(np.array([s for s, _ in mo]))
                add(np.array([c for _, c in mo]))
        elif group == "casualty":
            add(panel.casualties_total[:, rows])
            add(panel.killed[:, rows])
            add(panel.wounded[:, rows])
        elif group == "geography":
            if config.geography_encoding == "index":
                add(np.arange(n_g, dtype=np.float64)[:, None], exempt=True)
            else:
                for i in range(n_g):
                    onehot = np.zeros((n_g, 1))
                    onehot[i] = 1.0
                    add(onehot, exempt=True)
        elif group == "dummy":
            add(np.zeros(1))

    values = np.stack(cols, axis=-1) if cols else np.zeros((n_g, n_r, 0))
    names = config.feature_names(n_g)
    assert values.shape[-1] == len(names)
    return FeatureMatrix(
        weeks=list(panel.weeks[rows]),
        geo_ids=list(panel.geo_ids),
        values=np.ascontiguousarray(values, dtype=np.float64),
        target=panel.counts[:, WARMUP_WEEKS + 1 : n_t].astype(np.float64),
        current=y[:, rows].copy(),
        feature_names=names,
        unscaled=np.array(unscaled, dtype=bool),
        offset=WARMUP_WEEKS,
        config=config,
    )


@dataclass(frozen=True)
class SplitIndex:
    """Half-open row ranges over a feature matrix's week axis."""

    train: tuple[int, int]
    val: tuple[int, int]
    test: tuple[int, int]

    def __post_init__(self) -> None:
        if not (self.train[0] <= self.train[1] == self.val[0] <= self.val[1] == self.test[0] <= self.test[1]):
            raise DatasetError(f"split ranges are not contiguous and ordered: {self}")

    def part(self, name: str) -> tuple[int, int]:
        return getattr(self, name)

    def to_dict(self) -> dict:
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test)}


def chronological_split(n_weeks: int, fractions: Sequence[float] = DEFAULT_FRACTIONS) -> SplitIndex:
    """train = floor(f0*n), val = floor(f1*n), test = the remainder."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) <= 0:
        raise DatasetError(f"fractions must be three positive values summing to 1, got {fractions}")
    n_train = math.floor(fractions[0] * n_weeks + 1e-9)
    n_val = math.floor(fractions[1] * n_weeks + 1e-9)
    n_test = n_weeks - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise DatasetError(f"{n_weeks} weeks cannot give every partition at least one week")
    return SplitIndex((0, n_train), (n_train, n_train + n_val), (n_train + n_val, n_weeks))


@dataclass
class Scaler:
    means: np.ndarray
    stds: np.ndarray
    target_mean: float
    target_std: float

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.means) / self.stds

    def scale_target(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.target_mean) / self.target_std

    def unscale_target(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.target_std + self.target_mean

    def to_dict(self) -> dict:
        return {
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "target_mean": self.target_mean,
            "target_std": self.target_std,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> Scaler:
        return cls(
            means=np.asarray(doc["means"], dtype=np.float64),
            stds=np.asarray(doc["stds"], dtype=np.float64),
            target_mean=float(doc["target_mean"]),
            target_std=float(doc["target_std"]),
        )


def fit_scaler(features: FeatureMatrix, split: SplitIndex) -> Scaler:
    """Standardization statistics from training rows only.

    Target statistics come from the counts of the training weeks themselves,
    so the week following the last training row never contributes.
    """
    a, b = split.train
    if b <= a:
        raise DatasetError("empty training partition")
    rows = features.values[:, a:b, :].reshape(-1, features.n_features)
    means = rows.mean(axis=0)
    stds = rows.std(axis=0)
    stds = np.where(stds < DEGENERATE_STD, 1.0, stds)
    means = np.where(features.unscaled, 0.0, means)
    stds = np.where(features.unscaled, 1.0, stds)
    current = features.current[:, a:b]
    t_mean = float(current.mean())
    t_std = float(current.std())
    if t_std < DEGENERATE_STD:
        t_std = 1.0
    return Scaler(means=means, stds=stds, target_mean=t_mean, target_std=t_std)


@dataclass
class SequenceSet:
    """Sliding windows of ``lookback`` scaled feature rows and next-week targets."""

    inputs: np.ndarray
    targets: np.ndarray
    targets_scaled: np.ndarray
    geo_index: np.ndarray
    target_week: np.ndarray
    target_row: np.ndarray
    lookback: int

    def __len__(self) -> int:
        return int(self.targets.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.inputs.shape[-1])

    def keys(self) -> list[tuple[int, int]]:
        """(geo_index, target week ordinal) identifying each sample."""
        return list(zip(self.geo_index.tolist(), self.target_week.tolist()))

    def subset(self, mask: np.ndarray) -> SequenceSet:
        return SequenceSet(
            inputs=self.inputs[mask],
            targets=self.targets[mask],
            targets_scaled=self.targets_scaled[mask],
            geo_index=self.geo_index[mask],
            target_week=self.target_week[mask],
            target_row=self.target_row[mask],
            lookback=self.lookback,
        )


def _windows(
    scaled: np.ndarray, features: FeatureMatrix, scaler: Scaler, lo: int, hi: int, lookback: int
) -> SequenceSet:
    n_g = scaled.shape[0]
    n_per = hi - lo - lookback
    # window ends at row t in [lo+L-1, hi-2]; its target is the count of week t+1
    ends = np.arange(lo + lookback - 1, hi - 1)
    assert ends.size == n_per
    win = np.lib.stride_tricks.sliding_window_view(scaled[:, lo : hi - 1, :], lookback, axis=1)
    # (G, n_per, F, L) -> (G, n_per, L, F)
    inputs = np.ascontiguousarray(np.moveaxis(win, -1, 2)).reshape(n_g * n_per, lookback, -1)
    targets = features.target[:, ends].reshape(-1)
    ordinals = np.array([w.ordinal for w in features.weeks])
    # the week after row t is row t+1's week (the axis may skip 1993)
    target_rows = ends + 1
    target_week = np.tile(ordinals[target_rows], n_g)
    return SequenceSet(
        inputs=inputs,
        targets=targets.copy(),
        targets_scaled=scaler.scale_target(targets),
        geo_index=np.repeat(np.arange(n_g), n_per),
        target_week=target_week,
        target_row=np.tile(target_rows, n_g),
        lookback=lookback,
    )


def make_sequences(
    features: FeatureMatrix,
    scaler: Scaler,
    split: SplitIndex,
    lookback: int,
    parts: Sequence[str] = ("train", "val", "test"),
) -> dict[str, SequenceSet]:
    """Windows that never straddle a partition boundary.

    Each partition ``[lo, hi)`` yields ``hi - lo - lookback`` samples per
    geography: inputs are rows ``t-L+1..t`` and the target week ``t+1`` is
    itself a row of the same partition.
    """
    if lookback < 1:
        raise DatasetError("lookback must be >= 1")
    scaled = scaler.transform(features.values)
    out: dict[str, SequenceSet] = {}
    for name in parts:
        lo, hi = split.part(name)
        if hi - lo < lookback + 1:
            raise DatasetError(
                f"{name} partition has {hi - lo} weeks; lookback {lookback} needs at least {lookback + 1}"
            )
        out[name] = _windows(scaled, features, scaler, lo, hi, lookback)
    return out


def partition_rows(split: SplitIndex, name: str, lookback: int = 0) -> np.ndarray:
    """Target rows of a partition that a window of ``lookback`` rows can reach."""
    lo, hi = split.part(name)
    return np.arange(lo + max(lookback, 1), hi)


def stack_rows(features: FeatureMatrix, rows: Iterable[int]) -> np.ndarray:
    rows = np.asarray(list(rows))
    return features.values[:, rows, :].reshape(-1, features.n_features)
