"""Incident CSV parsing, cleaning and weekly panel aggregation."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

EXCLUDED_YEAR = 1993
N_REGIONS = 12
WINSOR_QUANTILE = 0.99

DEFAULT_SCHEMA: dict[str, str] = {
    "event_id": "eventid",
    "year": "iyear",
    "month": "imonth",
    "day": "iday",
    "region": "region",
    "country": "country",
    "latitude": "latitude",
    "longitude": "longitude",
    "killed": "nkill",
    "wounded": "nwound",
    "doubt": "doubtterr",
}
REQUIRED_FIELDS = ("event_id", "year", "month", "day", "region", "country")

PANEL_CSV_COLUMNS = ("geo_id", "iso_monday", "count", "casualties_total", "killed", "wounded")


class IngestError(ValueError):
    """Malformed input; ``row`` is the 1-based physical row (header = 1)."""

    def __init__(self, message: str, row: int | None = None) -> None:
        self.row = row
        prefix = f"row {row}: " if row is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class IncidentRecord:
    event_id: str
    year: int
    month: int
    day: int
    region_id: int
    country_id: int
    latitude: float | None = None
    longitude: float | None = None
    killed: int = 0
    wounded: int = 0
    passes_inclusion: bool = True

    def __post_init__(self) -> None:
        date(self.year, self.month, self.day)  # raises on an invalid calendar date
        if self.killed < 0 or self.wounded < 0:
            raise ValueError("casualty counts must be non-negative")

    @property
    def date(self) -> date:
        return date(self.year, self.month, self.day)


@dataclass(frozen=True, order=True)
class WeekId:
    monday_date: date
    ordinal: int

    @classmethod
    def from_monday(cls, monday: date) -> WeekId:
        if monday.weekday() != 0:
            raise ValueError(f"{monday} is not a Monday")
        # date(1, 1, 1) is a Monday with toordinal() == 1
        return cls(monday, (monday.toordinal() - 1) // 7)

    def isoformat(self) -> str:
        return self.monday_date.isoformat()


def iso_week(d: date) -> WeekId:
    """Week containing ``d``, identified by its ISO-8601 Monday."""
    return WeekId.from_monday(d - timedelta(days=d.weekday()))


@dataclass
class RejectionReport:
    total_rows: int = 0
    retained: int = 0
    reasons: Counter = field(default_factory=Counter)

    @property
    def rejected(self) -> int:
        return sum(self.reasons.values())

    def to_dict(self) -> dict:
        return {
            "total_rows": self.total_rows,
            "retained": self.retained,
            "rejected": self.rejected,
            "reasons": dict(sorted(self.reasons.items())),
        }


def _to_stream(raw: bytes | str | IO[bytes] | IO[str]) -> IO[str]:
    if isinstance(raw, bytes):
        return io.StringIO(raw.decode("utf-8-sig"))
    if isinstance(raw, str):
        return io.StringIO(raw)
    if isinstance(raw, io.TextIOBase):
        return raw
    return io.TextIOWrapper(raw, encoding="utf-8-sig", newline="")


def _parse_int(text: str, row: int, column: str) -> int | None:
    text = text.strip()
    if text == "":
        return None
    try:
        value = float(text)
    except ValueError:
        raise IngestError(f"column {column!r}: cannot parse {text!r} as a number", row) from None
    if not math.isfinite(value) or value != int(value):
        raise IngestError(f"column {column!r}: {text!r} is not an integer", row)
    return int(value)


def _parse_float(text: str, row: int, column: str) -> float | None:
    text = text.strip()
    if text == "":
        return None
    try:
        return float(text)
    except ValueError:
        raise IngestError(f"column {column!r}: cannot parse {text!r} as a number", row) from None


def _casualty(text: str | None, row: int, column: str) -> int:
    # missing or negative (GTD "unknown" codes) is imputed as zero
    if text is None:
        return 0
    value = _parse_float(text, row, column)
    if value is None or not math.isfinite(value) or value < 0:
        return 0
    return int(round(value))


def parse_incidents(
    raw_csv: bytes | str | IO[bytes] | IO[str],
    schema: dict[str, str] | None = None,
    delimiter: str = ",",
    doubt_keep: Sequence[int] = (0,),
) -> tuple[list[IncidentRecord], RejectionReport]:
    """Parse, validate and deduplicate incident rows.

    Rejected rows are tallied in the report under ``duplicate``,
    ``invalid_date``, ``missing_geo`` or ``failed_inclusion``. When the schema's
    doubt column is absent from the header every row passes inclusion.
    """
    cols = dict(DEFAULT_SCHEMA)
    if schema:
        cols.update(schema)
    reader = csv.reader(_to_stream(raw_csv), delimiter=delimiter)
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError("empty input: no header row") from None
    except csv.Error as exc:
        raise IngestError(f"malformed header: {exc}", 1) from None
    header = [h.strip() for h in header]
    if len(set(header)) != len(header):
        raise IngestError("malformed header: duplicate column names", 1)
    index = {name: i for i, name in enumerate(header)}
    missing = [cols[f] for f in REQUIRED_FIELDS if cols[f] not in index]
    if missing:
        raise IngestError(f"malformed header: missing required columns {missing}", 1)

    def get(values: list[str], fld: str) -> str | None:
        i = index.get(cols.get(fld, ""))
        return None if i is None else values[i]

    report = RejectionReport()
    records: list[IncidentRecord] = []
    seen: set[str] = set()
    row_no = 1
    while True:
        try:
            values = next(reader)
        except StopIteration:
            break
        except csv.Error as exc:
            raise IngestError(f"unparseable row: {exc}", row_no + 1) from None
        row_no += 1
        if not values or all(v.strip() == "" for v in values):
            continue
        if len(values) != len(header):
            raise IngestError(f"expected {len(header)} fields, found {len(values)}", row_no)
        report.total_rows += 1

        event_id = values[index[cols["event_id"]]].strip()
        if event_id in seen:
            report.reasons["duplicate"] += 1
            continue
        seen.add(event_id)

        year = _parse_int(values[index[cols["year"]]], row_no, cols["year"])
        month = _parse_int(values[index[cols["month"]]], row_no, cols["month"])
        day = _parse_int(values[index[cols["day"]]], row_no, cols["day"])
        try:
            date(year, month, day)  # type: ignore[arg-type]
        except (TypeError, ValueError):
            report.reasons["invalid_date"] += 1
            continue

        region = _parse_int(values[index[cols["region"]]], row_no, cols["region"])
        country = _parse_int(values[index[cols["country"]]], row_no, cols["country"])
        if region is None or country is None:
            report.reasons["missing_geo"] += 1
            continue

        doubt_text = get(values, "doubt")
        if doubt_text is not None:
            doubt = _parse_int(doubt_text, row_no, cols["doubt"])
            if doubt not in doubt_keep:
                report.reasons["failed_inclusion"] += 1
                continue

        lat_text = get(values, "latitude")
        lon_text = get(values, "longitude")
        records.append(
            IncidentRecord(
                event_id=event_id,
                year=year,  # type: ignore[arg-type]
                month=month,  # type: ignore[arg-type]
                day=day,  # type: ignore[arg-type]
                region_id=region,
                country_id=country,
                latitude=None if lat_text is None else _parse_float(lat_text, row_no, cols["latitude"]),
                longitude=None if lon_text is None else _parse_float(lon_text, row_no, cols["longitude"]),
                killed=_casualty(get(values, "killed"), row_no, cols["killed"]),
                wounded=_casualty(get(values, "wounded"), row_no, cols["wounded"]),
            )
        )
    if row_no == 1 and report.total_rows == 0:
        raise IngestError("empty input: header but no data rows")
    report.retained = len(records)
    return records, report


def winsorize(values: Sequence[float] | np.ndarray, upper_quantile: float = WINSOR_QUANTILE) -> np.ndarray:
    """Clamp values above the nearest-rank ``upper_quantile`` to it."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("winsorize needs a non-empty vector")
    if not 0.0 < upper_quantile <= 1.0:
        raise ValueError("upper_quantile must lie in (0, 1]")
    flat = np.sort(v, axis=None)
    rank = max(1, math.ceil(upper_quantile * flat.size - 1e-9))
    return np.minimum(v, flat[rank - 1])


def is_excluded_week(week: WeekId) -> bool:
    return week.monday_date.year == EXCLUDED_YEAR


def week_axis(first: WeekId, last: WeekId) -> list[WeekId]:
    """Contiguous Mondays from ``first`` to ``last`` with 1993 weeks removed."""
    return [
        WeekId.from_monday(first.monday_date + timedelta(weeks=k))
        for k in range(last.ordinal - first.ordinal + 1)
        if (first.monday_date + timedelta(weeks=k)).year != EXCLUDED_YEAR
    ]


@dataclass
class PanelSeries:
    """Per-geography weekly series on a shared week axis (rows = geographies)."""

    grain: str
    weeks: list[WeekId]
    geo_ids: list[int]
    counts: np.ndarray
    casualties_total: np.ndarray
    killed: np.ndarray
    wounded: np.ndarray

    def __post_init__(self) -> None:
        if self.grain not in ("region", "country"):
            raise ValueError(f"unknown grain {self.grain!r}")
        self.counts = np.asarray(self.counts, dtype=np.int64)
        shape = (len(self.geo_ids), len(self.weeks))
        for name in ("casualties_total", "killed", "wounded"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        for name in ("counts", "casualties_total", "killed", "wounded"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if (self.counts < 0).any():
            raise ValueError("counts must be non-negative")
        if any(is_excluded_week(w) for w in self.weeks):
            raise ValueError(f"week axis contains {EXCLUDED_YEAR} weeks")
        if any(b.ordinal <= a.ordinal for a, b in zip(self.weeks, self.weeks[1:])):
            raise ValueError("week axis must be strictly increasing")

    @property
    def n_geos(self) -> int:
        return len(self.geo_ids)

    @property
    def n_weeks(self) -> int:
        return len(self.weeks)

    def slice_weeks(self, start: int, stop: int | None = None) -> PanelSeries:
        sl = slice(start, stop)
        return PanelSeries(
            grain=self.grain,
            weeks=self.weeks[sl],
            geo_ids=list(self.geo_ids),
            counts=self.counts[:, sl].copy(),
            casualties_total=self.casualties_total[:, sl].copy(),
            killed=self.killed[:, sl].copy(),
            wounded=self.wounded[:, sl].copy(),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PanelSeries):
            return NotImplemented
        return (
            self.grain == other.grain
            and self.weeks == other.weeks
            and list(self.geo_ids) == list(other.geo_ids)
            and all(
                np.array_equal(getattr(self, n), getattr(other, n))
                for n in ("counts", "casualties_total", "killed", "wounded")
            )
        )

    # serialization -------------------------------------------------------

    def to_csv(self, dest: str | Path | IO[str]) -> None:
        def _write(fh: IO[str]) -> None:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(PANEL_CSV_COLUMNS)
            for gi, geo in enumerate(self.geo_ids):
                for ti, week in enumerate(self.weeks):
                    writer.writerow(
                        [
                            geo,
                            week.isoformat(),
                            int(self.counts[gi, ti]),
                            repr(float(self.casualties_total[gi, ti])),
                            repr(float(self.killed[gi, ti])),
                            repr(float(self.wounded[gi, ti])),
                        ]
                    )

        if isinstance(dest, (str, Path)):
            with open(dest, "w", encoding="utf-8", newline="") as fh:
                _write(fh)
        else:
            _write(dest)

    @classmethod
    def from_csv(cls, src: str | Path | IO[str], grain: str = "region") -> PanelSeries:
        if isinstance(src, (str, Path)):
            with open(src, encoding="utf-8", newline="") as fh:
                rows = list(csv.DictReader(fh))
        else:
            rows = list(csv.DictReader(src))
        if not rows:
            raise IngestError("panel CSV has no rows")
        geo_ids = sorted({int(r["geo_id"]) for r in rows})
        mondays = sorted({date.fromisoformat(r["iso_monday"]) for r in rows})
        weeks = [WeekId.from_monday(m) for m in mondays]
        gpos = {g: i for i, g in enumerate(geo_ids)}
        tpos = {w.monday_date: i for i, w in enumerate(weeks)}
        shape = (len(geo_ids), len(weeks))
        arrays = {n: np.zeros(shape) for n in PANEL_CSV_COLUMNS[2:]}
        for r in rows:
            i, j = gpos[int(r["geo_id"])], tpos[date.fromisoformat(r["iso_monday"])]
            for n in arrays:
                arrays[n][i, j] = float(r[n])
        return cls(
            grain=grain,
            weeks=weeks,
            geo_ids=geo_ids,
            counts=arrays["count"].astype(np.int64),
            casualties_total=arrays["casualties_total"],
            killed=arrays["killed"],
            wounded=arrays["wounded"],
        )

    def to_json_dict(self) -> dict:
        return {
            "format": "burstcast-panel",
            "version": 1,
            "grain": self.grain,
            "geo_ids": [int(g) for g in self.geo_ids],
            "weeks": [w.isoformat() for w in self.weeks],
            "counts": self.counts.tolist(),
            "casualties_total": self.casualties_total.tolist(),
            "killed": self.killed.tolist(),
            "wounded": self.wounded.tolist(),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> PanelSeries:
        if doc.get("format") != "burstcast-panel":
            raise IngestError("not a burstcast panel document")
        n_geo = len(doc["geo_ids"])
        n_week = len(doc["weeks"])

        def arr(key: str, dtype) -> np.ndarray:
            return np.asarray(doc[key], dtype=dtype).reshape(n_geo, n_week)

        return cls(
            grain=doc["grain"],
            weeks=[WeekId.from_monday(date.fromisoformat(s)) for s in doc["weeks"]],
            geo_ids=[int(g) for g in doc["geo_ids"]],
            counts=arr("counts", np.int64),
            casualties_total=arr("casualties_total", np.float64),
            killed=arr("killed", np.float64),
            wounded=arr("wounded", np.float64),
        )

    def to_json(self, dest: str | Path) -> None:
        Path(dest).write_text(json.dumps(self.to_json_dict(), separators=(",", ":")), encoding="utf-8")

    @classmethod
    def from_json(cls, src: str | Path) -> PanelSeries:
        return cls.from_json_dict(json.loads(Path(src).read_text(encoding="utf-8")))


def load_panel(path: str | Path, grain: str = "region") -> PanelSeries:
    """Load a panel from ``.json`` or ``.csv`` by extension."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        return PanelSeries.from_json(path)
    return PanelSeries.from_csv(path, grain=grain)


def count_excluded(records: Iterable[IncidentRecord]) -> int:
    """Number of records whose ISO week starts in the excluded year."""
    return sum(1 for r in records if is_excluded_week(iso_week(r.date)))


def aggregate_weekly(
    records: Sequence[IncidentRecord],
    grain: str = "region",
    geo_ids: Sequence[int] | None = None,
    week_range: tuple[date, date] | None = None,
    winsor_quantile: float = WINSOR_QUANTILE,
) -> PanelSeries:
    """Count incidents per geography and ISO week.

    The axis runs from the earliest to the latest event week (or over
    ``week_range`` when given) with every 1993 week removed. Region grain
    always includes regions 1..12; ``geo_ids`` fixes the geography set
    explicitly. Weekly casualty sums are winsorized panel-wide.
    """
    if grain not in ("region", "country"):
        raise ValueError(f"unknown grain {grain!r}")
    if not records:
        raise ValueError("aggregate_weekly needs at least one record")

    def geo_of(r: IncidentRecord) -> int:
        return r.region_id if grain == "region" else r.country_id

    kept = [(iso_week(r.date), r) for r in records]
    kept = [(w, r) for w, r in kept if not is_excluded_week(w)]
    if week_range is not None:
        first, last = iso_week(week_range[0]), iso_week(week_range[1])
        kept = [(w, r) for w, r in kept if first.ordinal <= w.ordinal <= last.ordinal]
    if not kept:
        raise ValueError("no records remain after excluding 1993 weeks")
    if week_range is None:
        first = min(w for w, _ in kept)
        last = max(w for w, _ in kept)
    weeks = week_axis(first, last)

    if geo_ids is None:
        observed = {geo_of(r) for _, r in kept}
        if grain == "region":
            observed |= set(range(1, N_REGIONS + 1))
        geos = sorted(observed)
    else:
        geos = list(geo_ids)
    gpos = {g: i for i, g in enumerate(geos)}
    tpos = {w.ordinal: i for i, w in enumerate(weeks)}

    shape = (len(geos), len(weeks))
    counts = np.zeros(shape, dtype=np.int64)
    killed = np.zeros(shape)
    wounded = np.zeros(shape)
    for w, r in kept:
        g = geo_of(r)
        if g not in gpos:
            continue
        i, j = gpos[g], tpos[w.ordinal]
        counts[i, j] += 1
        killed[i, j] += r.killed
        wounded[i, j] += r.wounded
    total = killed + wounded
    return PanelSeries(
        grain=grain,
        weeks=weeks,
        geo_ids=geos,
        counts=counts,
        casualties_total=winsorize(total, winsor_quantile),
        killed=winsorize(killed, winsor_quantile),
        wounded=winsorize(wounded, winsor_quantile),
    )
