import io
import math
import random
from datetime import date
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from burstcast.ingest import (
    IncidentRecord,
    IngestError,
    PanelSeries,
    aggregate_weekly,
    count_excluded,
    iso_week,
    load_panel,
    parse_incidents,
    winsorize,
)

HEADER = "eventid,iyear,imonth,iday,region,country,latitude,longitude,nkill,nwound,doubtterr\n"


def rec(eid, y, m, d, region=1, killed=0, wounded=0):
    return IncidentRecord(str(eid), y, m, d, region, region * 10, killed=killed, wounded=wounded)


def test_duplicate_event_ids_keep_first():
    csv = HEADER + "197001010001,1970,1,1,1,5,,,1,0,0\n197001010001,1970,1,2,2,5,,,3,0,0\n"
    records, report = parse_incidents(csv)
    assert len(records) == 1 and records[0].day == 1
    assert dict(report.reasons) == {"duplicate": 1}


def test_empty_killed_imputed_as_zero():
    records, _ = parse_incidents(HEADER + "1,1980,5,5,3,7,,,,2,0\n")
    assert records[0].killed == 0 and records[0].wounded == 2


def test_unknown_day_rejected():
    records, report = parse_incidents(HEADER + "1,1980,5,0,3,7,,,,,0\n2,1980,2,30,3,7,,,,,0\n")
    assert records == []
    assert report.reasons["invalid_date"] == 2


def test_missing_geo_and_doubt_rejected():
    csv = HEADER + "1,1980,5,5,,7,,,,,0\n2,1980,5,5,3,7,,,,,1\n3,1980,5,5,3,7,,,,,0\n"
    records, report = parse_incidents(csv)
    assert [r.event_id for r in records] == ["3"]
    assert report.reasons["missing_geo"] == 1 and report.reasons["failed_inclusion"] == 1


def test_no_doubt_column_keeps_everything():
    csv = "eventid,iyear,imonth,iday,region,country\n1,1980,5,5,3,7\n"
    records, _ = parse_incidents(csv)
    assert len(records) == 1


def test_custom_schema_map():
    csv = "id,y,m,d,reg,ctry\nA,1999,3,4,2,20\n"
    records, _ = parse_incidents(
        csv, schema={"event_id": "id", "year": "y", "month": "m", "day": "d", "region": "reg", "country": "ctry"}
    )
    assert records[0].region_id == 2 and records[0].event_id == "A"


def test_header_errors():
    with pytest.raises(IngestError):
        parse_incidents("")
    with pytest.raises(IngestError) as exc:
        parse_incidents("eventid,iyear\n1,2000\n")
    assert exc.value.row == 1


def test_unparseable_number_reports_row():
    with pytest.raises(IngestError) as exc:
        parse_incidents(HEADER + "1,1980,5,5,3,7,,,,,0\n2,nineteen,5,5,3,7,,,,,0\n")
    assert exc.value.row == 3


def test_winsorize_examples():
    assert winsorize([5, 5, 5, 5], 0.99).tolist() == [5, 5, 5, 5]
    out = winsorize(np.arange(1, 101), 0.99)
    assert out.max() == 99 and out[:99].tolist() == list(range(1, 100))
    assert winsorize([0, 1000], 0.5).tolist() == [0, 0]
    with pytest.raises(ValueError):
        winsorize([])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=60), st.sampled_from([0.01, 0.25, 0.5, 0.9, 0.95, 0.99, 1.0]))
def test_winsorize_idempotent_and_sort_oracle(values, q):
    once = winsorize(values, q)
    assert np.array_equal(winsorize(once, q), once)
    cap = sorted(values)[max(1, math.ceil(Fraction(str(q)) * len(values))) - 1]
    assert once.tolist() == [min(v, cap) for v in values]


def test_iso_week_examples():
    assert iso_week(date(1970, 1, 5)).monday_date == date(1970, 1, 5)
    assert iso_week(date(2015, 1, 1)).monday_date == date(2014, 12, 29)
    assert iso_week(date(2016, 1, 3)).monday_date == date(2015, 12, 28)
    for d in (date(2004, 2, 29), date(1999, 12, 31), date(2020, 6, 7)):
        iy, iw, _ = d.isocalendar()
        assert iso_week(d).monday_date == date.fromisocalendar(iy, iw, 1)


def test_week_ordinals_increase():
    a, b = iso_week(date(1970, 1, 5)), iso_week(date(1970, 1, 12))
    assert b.ordinal == a.ordinal + 1


def test_two_events_same_week():
    p = aggregate_weekly([rec(1, 1980, 5, 5), rec(2, 1980, 5, 7)])
    assert p.counts.sum() == 2 and p.counts[0, 0] == 2
    assert p.n_geos == 12 and p.counts[1:].sum() == 0


def test_1993_weeks_removed():
    p = aggregate_weekly([rec(1, 1993, 6, 15), rec(2, 1994, 6, 15), rec(3, 1992, 6, 15)])
    assert all(w.monday_date.year != 1993 for w in p.weeks)
    assert p.counts.sum() == 2
    assert count_excluded([rec(1, 1993, 6, 15), rec(2, 1994, 6, 15)]) == 1


def test_quiet_geography_is_all_zero():
    p = aggregate_weekly([rec(1, 1980, 1, 7, region=2), rec(2, 1980, 3, 3, region=2)])
    assert p.counts[0].tolist() == [0] * p.n_weeks
    assert p.n_weeks == 9


def test_empty_records_error():
    with pytest.raises(ValueError):
        aggregate_weekly([])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_aggregation_invariants(seed):
    rng = random.Random(seed)
    records = []
    for j in range(rng.randint(1, 80)):
        d = date(1990, 1, 1).toordinal() + rng.randint(0, 5 * 365)
        dd = date.fromordinal(d)
        records.append(rec(j, dd.year, dd.month, dd.day, region=rng.randint(1, 12), killed=rng.randint(0, 9)))
    kept = [r for r in records if iso_week(r.date).monday_date.year != 1993]
    if not kept:
        return
    p = aggregate_weekly(records)
    assert p.counts.sum() == len(kept)
    shuffled = records[:]
    rng.shuffle(shuffled)
    assert aggregate_weekly(shuffled) == p


def test_country_grain():
    p = aggregate_weekly([rec(1, 1980, 5, 5, region=3), rec(2, 1980, 5, 5, region=4)], grain="country")
    assert p.geo_ids == [30, 40]


def test_panel_csv_and_json_roundtrip(tmp_path):
    p = aggregate_weekly([rec(1, 1980, 5, 5, killed=2), rec(2, 1981, 1, 5, wounded=4)])
    p.to_csv(tmp_path / "p.csv")
    p.to_json(tmp_path / "p.json")
    assert load_panel(tmp_path / "p.csv") == p
    assert load_panel(tmp_path / "p.json") == p
    buf = io.StringIO()
    p.to_csv(buf)
    assert buf.getvalue().splitlines()[0] == "geo_id,iso_monday,count,casualties_total,killed,wounded"


def test_panel_rejects_1993_axis():
    p = aggregate_weekly([rec(1, 1992, 12, 20)])
    with pytest.raises(ValueError):
        PanelSeries(
            grain="region",
            weeks=[iso_week(date(1993, 3, 1))],
            geo_ids=p.geo_ids,
            counts=np.zeros((12, 1), dtype=np.int64),
            casualties_total=np.zeros((12, 1)),
            killed=np.zeros((12, 1)),
            wounded=np.zeros((12, 1)),
        )
