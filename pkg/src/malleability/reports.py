"""JSON and CSV report files.  Every write goes through a temp file and a rename."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import fields
from datetime import timedelta
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from .analytics import (
    Period, PeriodReport, TimeSeriesPoint, format_btc, format_utc,
)
from .conflict import ConflictSet, describe_classification

RATE_DIGITS = 4


def atomic_write(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def write_json(path: str | Path, payload) -> None:
    atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_csv(path: str | Path, header: Sequence[str], rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write(path, buf.getvalue())


def format_rate(rate: Fraction, digits: int = RATE_DIGITS) -> str:
    # exact half-up rounding on the fraction, no float detour
    scale = 10**digits
    scaled = (rate * scale * 2 + 1) // 2
    return f"{scaled // scale}.{scaled % scale:0{digits}d}"


def conflict_set_dict(cset: ConflictSet) -> dict:
    original = cset.original
    confirmed = cset.confirmed_member
    return {
        "key": str(cset.key),
        "first_seen": format_utc(cset.first_seen),
        "cardinality": len(cset.members),
        "value_satoshi": cset.value_satoshi,
        "value_btc": format_btc(cset.value_satoshi),
        "classification": describe_classification(cset.classification),
        "outcome": cset.outcome.value,
        "original_txid": str(original.txid) if original else None,
        "confirmed_txid": str(confirmed.txid) if confirmed else None,
        "members": [
            {"txid": str(m.txid), "first_seen": format_utc(m.first_seen),
             "confirmed_in": m.confirmed_in}
            for m in cset.members
        ],
    }


def total_report(reports: Sequence[PeriodReport]) -> PeriodReport:
    span = Period("all", min(r.period.start for r in reports), max(r.period.end for r in reports))
    total = PeriodReport(span)
    for f in fields(PeriodReport):
        if f.name != "period":
            setattr(total, f.name, sum(getattr(r, f.name) for r in reports))
    return total


def period_report_dict(r: PeriodReport) -> dict:
    return {
        "name": r.period.name,
        "start": format_utc(r.period.start),
        "end": format_utc(r.period.end),
        "attack_sets": r.attack_sets,
        "total_value_satoshi": r.total_value_satoshi,
        "total_value_btc": format_btc(r.total_value_satoshi),
        "successful": r.successful,
        "failed": r.failed,
        "unconfirmed": r.unconfirmed,
        "success_value_satoshi": r.success_value_satoshi,
        "success_value_btc": format_btc(r.success_value_satoshi),
        "success_rate_by_count": format_rate(r.success_rate_by_count),
        "success_rate_by_value": format_rate(r.success_rate_by_value),
        "success_rate_among_attack_sets": format_rate(r.success_rate_among_attack_sets),
        "re_sign_sets": r.re_sign_sets,
        "re_sign_value_satoshi": r.re_sign_value_satoshi,
        "unknown_sets": r.unknown_sets,
        "confirmed_sets": r.confirmed_sets,
        "confirmed_value_satoshi": r.confirmed_value_satoshi,
    }


PERIOD_CSV_COLUMNS = (
    "name", "start", "end", "attack_sets", "total_value_btc", "successful", "failed",
    "unconfirmed", "success_value_btc", "success_rate_by_count", "success_rate_by_value",
    "re_sign_sets", "unknown_sets", "confirmed_sets",
)


def write_period_reports(out_dir: Path, reports: Sequence[PeriodReport],
                         out_of_schedule: int) -> None:
    rows = [period_report_dict(r) for r in reports]
    totals = period_report_dict(total_report(reports)) if reports else None
    write_json(out_dir / "period_report.json",
               {"periods": rows, "totals": totals, "out_of_schedule": out_of_schedule})
    write_csv(out_dir / "period_report.csv", PERIOD_CSV_COLUMNS,
              ([row[c] for c in PERIOD_CSV_COLUMNS] for row in rows + ([totals] if totals else [])))


def write_cumulative(path: Path, points: Sequence[TimeSeriesPoint]) -> None:
    write_csv(path, ("t_iso8601", "cumulative_count", "cumulative_value_btc"),
              ((format_utc(p.t), p.cumulative_count, format_btc(p.cumulative_value_satoshi))
               for p in points))


def write_hourly(path: Path, buckets, window: timedelta) -> None:
    hours = int(window / timedelta(hours=1))
    write_csv(path, ("bucket_start_iso8601", "window_hours", "attacks_per_hour"),
              ((format_utc(t), hours, repr(rate)) for t, rate in buckets))
