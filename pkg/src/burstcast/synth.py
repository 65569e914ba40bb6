"""Seeded generator of sparse, bursty, seasonal weekly incident panels.

Each geography follows a discrete-time self-exciting count process:

    lambda_t = mu_g * (1 + a_g * sin(2 pi t / 52 + phase_g)) + x_t
    x_t      = rho * x_{t-1} + eta * y_{t-1}
    y_t      ~ Poisson(lambda_t)        (inverse transform on a seeded uniform)

Every event gets a date inside its week and geometric killed/wounded draws,
so the generator can also emit a raw incident CSV in the ingest schema.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from . import kernels
from .ingest import (
    DEFAULT_SCHEMA,
    WINSOR_QUANTILE,
    IncidentRecord,
    PanelSeries,
    WeekId,
    is_excluded_week,
    iso_week,
    winsorize,
)

SEASON = 52
DEFAULT_START = date(1970, 1, 5)


class SynthError(ValueError):
    pass


def _per_geo(value, n: int, name: str) -> list[float]:
    if isinstance(value, (int, float)):
        return [float(value)] * n
    out = [float(v) for v in value]
    if len(out) != n:
        raise SynthError(f"{name} has {len(out)} entries for {n} geographies")
    return out


def default_base_rates(n: int) -> list[float]:
    """Log-spaced rates from 0.3 to 8 events a week: a few busy regions, several quiet ones."""
    if n == 1:
        return [2.0]
    return [float(v) for v in np.round(np.geomspace(0.3, 8.0, n), 6)]


@dataclass(frozen=True)
class SynthConfig:
    n_geographies: int = 12
    n_weeks: int = 1200
    base_rate: float | tuple = None  # type: ignore[assignment]
    seasonal_amplitude: float | tuple = 0.5
    phase: float | tuple = None  # type: ignore[assignment]
    eta: float = 0.25
    rho: float = 0.5
    killed_mean: float = 1.5
    wounded_mean: float = 3.0
    overdispersion: float | None = None
    seed: int = 42
    start: date = DEFAULT_START

    def __post_init__(self) -> None:
        n = self.n_geographies
        if n < 1 or self.n_weeks < 1:
            raise SynthError("n_geographies and n_weeks must be positive")
        rates = default_base_rates(n) if self.base_rate is None else _per_geo(self.base_rate, n, "base_rate")
        phases = (
            [2 * math.pi * g / n for g in range(n)] if self.phase is None else _per_geo(self.phase, n, "phase")
        )
        amps = _per_geo(self.seasonal_amplitude, n, "seasonal_amplitude")
        object.__setattr__(self, "base_rate", tuple(rates))
        object.__setattr__(self, "phase", tuple(phases))
        object.__setattr__(self, "seasonal_amplitude", tuple(amps))
        if isinstance(self.start, str):
            object.__setattr__(self, "start", date.fromisoformat(self.start))
        if min(rates) < 0:
            raise SynthError("base rates must be >= 0")
        if min(amps) < 0 or max(amps) > 1:
            raise SynthError("seasonal amplitude must lie in [0, 1] so the intensity stays non-negative")
        if not 0.0 <= self.rho < 1.0:
            raise SynthError("rho must lie in [0, 1)")
        if self.eta < 0:
            raise SynthError("eta must be >= 0")
        if self.branching_ratio >= 1.0:
            raise SynthError(
                f"process is not subcritical: eta/(1-rho) = {self.branching_ratio:.4g} must be < 1"
            )
        if self.killed_mean < 0 or self.wounded_mean < 0:
            raise SynthError("casualty means must be >= 0")
        if self.overdispersion is not None and self.overdispersion <= 0:
            raise SynthError("overdispersion (negative-binomial shape) must be > 0")

    @property
    def branching_ratio(self) -> float:
        """Expected direct offspring per event, eta * sum rho^k."""
        return self.eta / (1.0 - self.rho)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["base_rate"] = list(self.base_rate)
        d["phase"] = list(self.phase)
        d["seasonal_amplitude"] = list(self.seasonal_amplitude)
        d["start"] = self.start.isoformat()
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> SynthConfig:
        doc = dict(doc)
        for key in ("base_rate", "phase", "seasonal_amplitude"):
            if isinstance(doc.get(key), list):
                doc[key] = tuple(doc[key])
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise SynthError(f"unknown synth keys: {sorted(unknown)}")
        return cls(**doc)


def synth_week_axis(start: date, n_weeks: int) -> list[WeekId]:
    """``n_weeks`` consecutive ISO weeks from the week containing ``start``, skipping 1993."""
    week = iso_week(start)
    out: list[WeekId] = []
    monday = week.monday_date
    while len(out) < n_weeks:
        w = WeekId.from_monday(monday)
        if not is_excluded_week(w):
            out.append(w)
        monday += timedelta(days=7)
    return out


@dataclass
class SynthResult:
    config: SynthConfig
    panel: PanelSeries
    records: list[IncidentRecord]
    intensity: np.ndarray = field(repr=False)

    def raw_csv(self) -> str:
        buf = io.StringIO()
        write_raw_csv(self.records, buf)
        return buf.getvalue()


RAW_COLUMNS = ("event_id", "year", "month", "day", "region", "country", "latitude", "longitude", "killed", "wounded", "doubt")


def write_raw_csv(records: list[IncidentRecord], dest) -> None:
    """Incident rows in the default ingest schema (GTD column names)."""
    close = False
    if isinstance(dest, (str, Path)):
        dest = open(dest, "w", encoding="utf-8", newline="")
        close = True
    try:
        writer = csv.writer(dest, lineterminator="\n")
        writer.writerow([DEFAULT_SCHEMA[c] for c in RAW_COLUMNS])
        for r in records:
            writer.writerow(
                [r.event_id, r.year, r.month, r.day, r.region_id, r.country_id, "", "", r.killed, r.wounded, 0]
            )
    finally:
        if close:
            dest.close()


def _geometric_counts(rng: np.random.Generator, mean: float, size: int) -> np.ndarray:
    # numpy's geometric starts at 1; shifting by one gives support 0.. with the requested mean
    if mean == 0 or size == 0:
        return np.zeros(size, dtype=np.int64)
    return rng.geometric(1.0 / (1.0 + mean), size=size).astype(np.int64) - 1


def _nb_counts(base: np.ndarray, cfg: SynthConfig, u: np.ndarray, mix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = base.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    lam = np.zeros(n)
    excite = 0.0
    prev = 0
    for t in range(n):
        if t > 0:
            excite = cfg.rho * excite + cfg.eta * prev
        lam[t] = (base[t] + excite) * mix[t]
        prev = kernels.poisson_inverse(lam[t], u[t])
        counts[t] = prev
    return counts, lam


def generate_panel(config: SynthConfig) -> SynthResult:
    """Generate counts, per-event records and the aggregated panel for ``config``."""
    n_g, n_t = config.n_geographies, config.n_weeks
    weeks = synth_week_axis(config.start, n_t)
    t = np.arange(n_t, dtype=np.float64)
    streams = np.random.SeedSequence(config.seed).spawn(n_g)
    geo_ids = list(range(1, n_g + 1))

    counts = np.zeros((n_g, n_t), dtype=np.int64)
    intensity = np.zeros((n_g, n_t))
    killed = np.zeros((n_g, n_t))
    wounded = np.zeros((n_g, n_t))
    records: list[IncidentRecord] = []
    for g in range(n_g):
        rng = np.random.default_rng(streams[g])
        u = rng.random(n_t)
        base = config.base_rate[g] * (1.0 + config.seasonal_amplitude[g] * np.sin(2 * np.pi * t / SEASON + config.phase[g]))
        try:
            if config.overdispersion is None:
                y, lam = kernels.hawkes_counts(base, config.eta, config.rho, u)
            else:
                k = config.overdispersion
                mix = rng.gamma(k, 1.0 / k, size=n_t)
                y, lam = _nb_counts(base, config, u, mix)
        except ValueError as exc:
            raise SynthError(f"geography {geo_ids[g]}: {exc}") from None
        counts[g] = y
        intensity[g] = lam
        total = int(y.sum())
        days = rng.integers(0, 7, size=total)
        k_draw = _geometric_counts(rng, config.killed_mean, total)
        w_draw = _geometric_counts(rng, config.wounded_mean, total)
        week_of_event = np.repeat(np.arange(n_t), y)
        np.add.at(killed[g], week_of_event, k_draw)
        np.add.at(wounded[g], week_of_event, w_draw)
        j_in_week = np.arange(total) - np.repeat(np.cumsum(y) - y, y)
        gid = geo_ids[g]
        for e in range(total):
            d = weeks[week_of_event[e]].monday_date + timedelta(days=int(days[e]))
            records.append(
                IncidentRecord(
                    event_id=f"{d:%Y%m%d}{gid:03d}{int(j_in_week[e]):04d}",
                    year=d.year,
                    month=d.month,
                    day=d.day,
                    region_id=gid,
                    country_id=gid * 10 + 1,
                    killed=int(k_draw[e]),
                    wounded=int(w_draw[e]),
                )
            )
    records.sort(key=lambda r: (r.year, r.month, r.day, r.region_id, r.event_id))
    panel = PanelSeries(
        grain="region",
        weeks=weeks,
        geo_ids=geo_ids,
        counts=counts,
        casualties_total=winsorize(killed + wounded, WINSOR_QUANTILE),
        killed=winsorize(killed, WINSOR_QUANTILE),
        wounded=winsorize(wounded, WINSOR_QUANTILE),
    )
    return SynthResult(config=config, panel=panel, records=records, intensity=intensity)
