"""Daily net-load series: CSV ingest, peak scaling and calendar windows."""

from __future__ import annotations

import calendar
import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

HOURS = 24
DEFAULT_PEAK_MW = 1083.0


@dataclass(frozen=True, eq=False)
class NetLoadSeries:
    date: date
    values: np.ndarray  # (24,) MW, hour h at index h-1

    def __post_init__(self):
        values = np.array(self.values, float).reshape(-1)
        if values.size != HOURS:
            raise ValueError(f"{self.date}: expected {HOURS} hourly values, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"{self.date}: non-finite net load")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, NetLoadSeries):
            return NotImplemented
        return self.date == other.date and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True)
class Dataset:
    series: tuple[NetLoadSeries, ...]
    peak_mw: float = DEFAULT_PEAK_MW
    dropped_days: int = field(default=0, compare=False)

    def __post_init__(self):
        series = tuple(self.series)
        object.__setattr__(self, "series", series)
        if not series:
            raise ValueError("a dataset needs at least one day")
        if not self.peak_mw > 0:
            raise ValueError(f"peak_mw must be positive, got {self.peak_mw!r}")
        for prev, cur in zip(series, series[1:]):
            if cur.date <= prev.date:
                raise ValueError(f"dates must be strictly increasing ({prev.date} then {cur.date})")

    def __len__(self) -> int:
        return len(self.series)

    @property
    def N(self) -> int:
        return len(self.series)

    @property
    def dates(self) -> list[date]:
        return [s.date for s in self.series]

    def matrix(self) -> np.ndarray:
        """(N, 24) array of the series, one row per day."""
        return np.vstack([s.values for s in self.series])

    @property
    def max(self) -> float:
        return float(max(s.values.max() for s in self.series))

    @classmethod
    def from_matrix(cls, dates, values, peak_mw: float = DEFAULT_PEAK_MW) -> "Dataset":
        values = np.asarray(values, float)
        return cls(tuple(NetLoadSeries(d, v) for d, v in zip(dates, values)), peak_mw)

    def to_csv(self, path: str | Path) -> Path:
        """Write hourly rows in the ingest format."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["timestamp", "net_load_mw"])
            for s in self.series:
                start = datetime.combine(s.date, datetime.min.time())
                for h, v in enumerate(s.values):
                    w.writerow([(start + timedelta(hours=h)).isoformat(), repr(float(v))])
        return path


def _parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1]
    ts = datetime.fromisoformat(text)
    # wall-clock time of the feed; the offset only tells us about DST
    return ts.replace(tzinfo=None)


def ingest_csv(path: str | Path, granularity: int = 60, peak_mw: float = DEFAULT_PEAK_MW) -> Dataset:
    """Read ``timestamp,net_load_mw`` rows and average them into complete days.

    A day is kept only if every hour holds exactly ``60 / granularity``
    distinct samples. DST transition days (23 or 25 wall-clock hours) fail
    that test and are dropped along with any other gap; the number dropped
    is stored in ``Dataset.dropped_days`` and logged.
    """
    if granularity <= 0 or 60 % granularity:
        raise ValueError(f"granularity must divide 60 minutes, got {granularity!r}")
    per_hour = 60 // granularity
    path = Path(path)
    samples: dict[date, dict[datetime, float]] = defaultdict(dict)
    spoiled: set[date] = set()
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        cols = [h.strip().lower() for h in header]
        try:
            i_ts, i_val = cols.index("timestamp"), cols.index("net_load_mw")
        except ValueError:
            raise ValueError(f"{path}:1: header must contain 'timestamp' and 'net_load_mw', got {header}") from None
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            try:
                ts = _parse_timestamp(row[i_ts])
                value = float(row[i_val])
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{line}: cannot parse row {row!r} ({exc})") from None
            if not math.isfinite(value):
                raise ValueError(f"{path}:{line}: non-finite value {row[i_val]!r}")
            day = samples[ts.date()]
            if ts in day:
                # repeated wall-clock stamp: the fall-back DST hour
                spoiled.add(ts.date())
            day[ts] = value
    series = []
    dropped = 0
    for d in sorted(samples):
        hourly = np.zeros(HOURS)
        counts = np.zeros(HOURS, int)
        for ts, v in samples[d].items():
            hourly[ts.hour] += v
            counts[ts.hour] += 1
        if d in spoiled or np.any(counts != per_hour):
            dropped += 1
            continue
        series.append(NetLoadSeries(d, hourly / per_hour))
    if dropped:
        log.warning("%s: dropped %d incomplete day(s)", path, dropped)
    if not series:
        raise ValueError(f"{path}: no complete days")
    return Dataset(tuple(series), peak_mw, dropped)


def scale_to_peak(d: Dataset, peak_mw: float = DEFAULT_PEAK_MW) -> Dataset:
    """Multiply every value by ``peak_mw / max``; the result peaks at exactly ``peak_mw``."""
    if not peak_mw > 0:
        raise ValueError(f"peak_mw must be positive, got {peak_mw!r}")
    top = d.max
    if not top > 0:
        raise ValueError(f"dataset maximum {top!r} is not positive; cannot scale to a peak")
    if top == peak_mw:
        return Dataset(d.series, peak_mw, d.dropped_days)
    factor = peak_mw / top
    # pin the maxima to the target and clip rounding residue elsewhere, so a
    # second pass sees max == peak and is a no-op
    series = []
    for s in d.series:
        values = np.minimum(s.values * factor, peak_mw)
        values[s.values == top] = peak_mw
        series.append(NetLoadSeries(s.date, values))
    return Dataset(tuple(series), peak_mw, d.dropped_days)


def add_months(start: date, months: int) -> date:
    y, m = divmod(start.month - 1 + months, 12)
    year, month = start.year + y, m + 1
    return date(year, month, min(start.day, calendar.monthrange(year, month)[1]))


def window(d: Dataset, start: date, months: int) -> Dataset:
    """Days in ``[start, start + months)``."""
    if months < 1:
        raise ValueError("months must be >= 1")
    dates = d.dates
    if not dates[0] <= start <= dates[-1]:
        raise ValueError(f"window start {start} outside the dataset range {dates[0]}..{dates[-1]}")
    end = add_months(start, months)
    kept = tuple(s for s in d.series if start <= s.date < end)
    if not kept:
        raise ValueError(f"window {start}..{end} holds no days")
    return Dataset(kept, d.peak_mw, d.dropped_days)


def synthetic_dataset(start: date = date(2018, 7, 1), end: date = date(2020, 10, 31),
                      seed: int = 0, peak_mw: float = DEFAULT_PEAK_MW) -> Dataset:
    """A net-load-like stand-in for a real feed, scaled to ``peak_mw``.

    Demand follows a seasonal double hump with a weekend dip. Solar output
    grows over the years and peaks in spring, carving the midday belly.
    Day-to-day weather enters through an AR(1) level shift plus hourly noise.
    """
    rng = np.random.default_rng(seed)
    n = (end - start).days + 1
    hours = np.arange(HOURS)
    days = [start + timedelta(days=i) for i in range(n)]
    level = 0.0
    rows = np.empty((n, HOURS))
    for i, d in enumerate(days):
        doy = d.timetuple().tm_yday
        summer = math.cos(2 * math.pi * (doy - 200) / 365.25)
        spring = math.cos(2 * math.pi * (doy - 110) / 365.25)
        years = (d - start).days / 365.25
        demand = (
            24000
            + 4500 * max(summer, 0.0)
            + 2500 * np.exp(-0.5 * ((hours - 18.5) / 2.2) ** 2)
            + 1800 * np.exp(-0.5 * ((hours - 9.0) / 2.5) ** 2)
            - 6000 * np.exp(-0.5 * ((hours - 3.5) / 3.0) ** 2)
            + 5000 * max(summer, 0.0) * np.exp(-0.5 * ((hours - 16.5) / 3.0) ** 2)
        )
        if d.weekday() >= 5:
            demand *= 0.92
        solar = (5000 + 2500 * years) * (1 + 0.35 * spring) * np.clip(np.sin(np.pi * (hours - 6.5) / 13.0), 0, None)
        cloud = rng.uniform(0.6, 1.0)
        level = 0.7 * level + rng.normal(0.0, 900.0)
        rows[i] = demand - cloud * solar + level + rng.normal(0.0, 250.0, HOURS)
    return scale_to_peak(Dataset.from_matrix(days, rows, peak_mw), peak_mw)
