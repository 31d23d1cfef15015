"""Per-period totals, hourly attack rates and cumulative series.

All value arithmetic is in integer satoshi; BTC only appears when formatting.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from decimal import Decimal
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import yaml

from .conflict import ConflictSet, GenuineReSign, MultiBroadcast, Outcome, Unknown

log = logging.getLogger(__name__)

SATOSHI_PER_BTC = 10**8


def btc(satoshi: int) -> Decimal:
    return Decimal(satoshi).scaleb(-8).quantize(Decimal("0.00000001"))


def format_btc(satoshi: int) -> str:
    sign = "-" if satoshi < 0 else ""
    whole, frac = divmod(abs(satoshi), SATOSHI_PER_BTC)
    return f"{sign}{whole}.{frac:08d}"


def parse_btc(text: str) -> int:
    """Inverse of :func:`format_btc`; exact."""
    value = Decimal(text) * SATOSHI_PER_BTC
    if value != value.to_integral_value():
        raise ValueError(f"{text} has sub-satoshi precision")
    return int(value)


def parse_utc(text: str) -> datetime:
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_utc(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


class OutOfSchedule(ValueError):
    pass


@dataclass(frozen=True)
class Period:
    name: str
    start: datetime
    end: datetime

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"period {self.name}: start must precede end")

    def __contains__(self, t: datetime) -> bool:
        return self.start <= t < self.end


def _utc(*args) -> datetime:
    return datetime(*args, tzinfo=timezone.utc)


def default_periods() -> list[Period]:
    return [
        Period("period1", _utc(2013, 1, 1), _utc(2014, 2, 8)),
        Period("period2", _utc(2014, 2, 8), _utc(2014, 2, 10)),
        Period("period3", _utc(2014, 2, 10), _utc(2014, 3, 1)),
    ]


def check_schedule(periods: Sequence[Period]) -> None:
    for a, b in zip(periods, periods[1:]):
        if b.start < a.end:
            raise ValueError(f"periods {a.name} and {b.name} overlap or are out of order")


def load_periods(path: str | Path) -> list[Period]:
    """Read a period schedule: a YAML/JSON list of ``{name, start, end}``."""
    text = Path(path).read_text()
    raw = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    if isinstance(raw, dict):
        raw = raw["periods"]
    periods = [Period(p["name"], parse_utc(str(p["start"])), parse_utc(str(p["end"])))
               for p in raw]
    check_schedule(periods)
    return periods


def period_of(t: datetime, periods: Sequence[Period]) -> Period | None:
    return next((p for p in periods if t in p), None)


@dataclass
class PeriodReport:
    period: Period
    attack_sets: int = 0
    total_value_satoshi: int = 0
    successful: int = 0
    failed: int = 0
    unconfirmed: int = 0
    success_value_satoshi: int = 0
    re_sign_sets: int = 0
    re_sign_value_satoshi: int = 0
    unknown_sets: int = 0
    # every conflict set with a confirmed member, attack or not
    confirmed_sets: int = 0
    confirmed_value_satoshi: int = 0

    @property
    def total_value_btc(self) -> Decimal:
        return btc(self.total_value_satoshi)

    @property
    def success_value_btc(self) -> Decimal:
        return btc(self.success_value_satoshi)

    @property
    def success_rate_by_count(self) -> Fraction:
        """Successful attacks over conflict sets that saw a confirmation."""
        return Fraction(self.successful, self.confirmed_sets or 1)

    @property
    def success_rate_by_value(self) -> Fraction:
        return Fraction(self.success_value_satoshi, self.confirmed_value_satoshi or 1)

    @property
    def success_rate_among_attack_sets(self) -> Fraction:
        return Fraction(self.successful, self.attack_sets or 1)

    def add(self, cset: ConflictSet) -> None:
        if cset.confirmed_member is not None:
            self.confirmed_sets += 1
            self.confirmed_value_satoshi += cset.value_satoshi
        if cset.is_attack:
            self.attack_sets += 1
            self.total_value_satoshi += cset.value_satoshi
            if cset.outcome is Outcome.SuccessfulAttack:
                self.successful += 1
                self.success_value_satoshi += cset.value_satoshi
            elif cset.outcome is Outcome.FailedAttack:
                self.failed += 1
            else:
                self.unconfirmed += 1
        elif isinstance(cset.classification, (GenuineReSign, MultiBroadcast)):
            self.re_sign_sets += 1
            self.re_sign_value_satoshi += cset.value_satoshi
        elif isinstance(cset.classification, Unknown):
            self.unknown_sets += 1


def out_of_schedule(sets: Iterable[ConflictSet], periods: Sequence[Period]) -> list[ConflictSet]:
    return [s for s in sets if period_of(s.first_seen, periods) is None]


def aggregate(sets: Iterable[ConflictSet], periods: Sequence[Period]) -> list[PeriodReport]:
    """One report per period; a set counts in the period holding its earliest sighting."""
    reports = {p.name: PeriodReport(p) for p in periods}
    for cset in sets:
        period = period_of(cset.first_seen, periods)
        if period is None:
            log.warning("conflict set %s at %s falls outside every period",
                        cset.key, format_utc(cset.first_seen))
            continue
        reports[period.name].add(cset)
    return list(reports.values())


def _floor_hour(t: datetime) -> datetime:
    return t.replace(minute=0, second=0, microsecond=0)


def hourly_rate(sets: Iterable[ConflictSet], window: timedelta = timedelta(hours=1),
                origin: datetime | None = None) -> list[tuple[datetime, float]]:
    """Attack sets per hour in consecutive ``window``-wide buckets.

    Buckets are dense from ``origin`` (default: the first attack's hour)
    through the last attack.
    """
    hours = window / timedelta(hours=1)
    if hours <= 0 or hours != int(hours):
        raise ValueError("window must be a positive whole number of hours")
    times = sorted(s.first_seen for s in sets if s.is_attack)
    if origin is not None:
        times = [t for t in times if t >= origin]
    if not times:
        return []
    start = origin if origin is not None else _floor_hour(times[0])
    n_buckets = int((times[-1] - start) // window) + 1
    counts = [0] * n_buckets
    for t in times:
        counts[int((t - start) // window)] += 1
    return [(start + i * window, c / hours) for i, c in enumerate(counts)]


@dataclass(frozen=True)
class TimeSeriesPoint:
    t: datetime
    cumulative_count: int
    cumulative_value_satoshi: int

    @property
    def cumulative_value_btc(self) -> Decimal:
        return btc(self.cumulative_value_satoshi)


def cumulative_series(sets: Iterable[ConflictSet]) -> list[TimeSeriesPoint]:
    attacks = sorted((s for s in sets if s.is_attack), key=lambda s: (s.first_seen, bytes(s.key)))
    points, count, value = [], 0, 0
    for s in attacks:
        count += 1
        value += s.value_satoshi
        points.append(TimeSeriesPoint(s.first_seen, count, value))
    return points
