"""Raw-data ingestion, per-day interval series and regression samples.

Three raw sources are understood:

* the UCI "individual household electric power consumption" text file
  (semicolon separated, minute-resolution kW readings, ``?`` for missing),
* a normalised meter CSV ``meter_id,iso8601_timestamp,kwh`` for 30-minute
  smart-meter data,
* a trace CSV ``user,iso8601_timestamp,lat,lon`` of position fixes.

Every source ends up as :class:`DaySeries` rows with 48 half-hour values, which
are exchanged between commands as the canonical CSV
``source_id,date,v1,...,v48``.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date, datetime
from itertools import groupby
from typing import Iterable, Iterator

import numpy as np

from tenet.metrics import moving_average
from tenet.numerics import SeededRng

log = logging.getLogger(__name__)

INTERVAL_MINUTES = 30
DAY_LEN = 24 * 60 // INTERVAL_MINUTES
EARTH_RADIUS_KM = 6371.0
HPC_HEADER = ["Date", "Time", "Global_active_power"]


class DataFormatError(ValueError):
    """A raw input file does not follow its documented layout."""

    def __init__(self, msg, line=None):
        super().__init__(f"line {line}: {msg}" if line is not None else msg)
        self.line = line


class InsufficientDataError(ValueError):
    pass


@dataclass
class ParseStats:
    rows: int = 0
    missing: int = 0
    rejected: int = 0
    duplicates: int = 0


@dataclass(frozen=True, slots=True)
class MeterRecord:
    source_id: str
    timestamp: datetime
    value: float | None  # None marks a missing reading


@dataclass(frozen=True, slots=True)
class PositionFix:
    user: str
    timestamp: datetime
    lat: float
    lon: float

    def __post_init__(self):
        if abs(self.lat) > 90 or abs(self.lon) > 180:
            raise ValueError(f"coordinates out of range: {self.lat}, {self.lon}")


@dataclass
class DaySeries:
    source_id: str
    date: date
    values: np.ndarray
    completeness: float = 1.0
    flags: tuple[str, ...] = ()

    @property
    def total(self) -> float:
        return float(self.values.sum())


@dataclass
class SampleSet:
    """Regression samples: rows of ``x`` are head segments, ``y`` full-day totals."""

    x: np.ndarray
    y: np.ndarray
    provenance: list = field(default_factory=list)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if self.x.ndim != 2 or self.x.shape[0] != self.y.shape[0]:
            raise ValueError(f"x {self.x.shape} and y {self.y.shape} do not line up")
        if not self.provenance:
            self.provenance = [("", None)] * len(self.y)

    def __len__(self):
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx, dtype=int)
        return SampleSet(self.x[idx], self.y[idx], [self.provenance[i] for i in idx])

    def concat(self, other: "SampleSet") -> "SampleSet":
        return SampleSet(
            np.vstack([self.x, other.x]),
            np.concatenate([self.y, other.y]),
            self.provenance + other.provenance,
        )


@dataclass
class Folds:
    train: SampleSet
    val: SampleSet
    test: SampleSet


# --------------------------------------------------------------------------- parsing


def parse_hpc_fr(path, stats: ParseStats | None = None) -> Iterator[MeterRecord]:
    """Stream records from the UCI household power file.

    The value is ``Global_active_power`` (kW, minute average); rows whose power
    is ``?`` come back with ``value=None``.
    """
    stats = stats if stats is not None else ParseStats()
    with open(path, newline="") as fh:
        header = fh.readline().strip().split(";")
        if header[:3] != HPC_HEADER:
            raise DataFormatError(f"unexpected header {header[:3]}", line=1)
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            cols = line.split(";")
            if len(cols) < 3:
                raise DataFormatError(f"expected >= 3 fields, got {len(cols)}", line=lineno)
            try:
                ts = datetime.strptime(f"{cols[0]} {cols[1]}", "%d/%m/%Y %H:%M:%S")
            except ValueError:
                raise DataFormatError(f"bad date/time {cols[0]!r} {cols[1]!r}", line=lineno)
            raw = cols[2].strip()
            stats.rows += 1
            if raw == "?":
                stats.missing += 1
                yield MeterRecord("hpc-fr", ts, None)
                continue
            try:
                value = float(raw)
            except ValueError:
                raise DataFormatError(f"bad power value {raw!r}", line=lineno)
            if value < 0 or not math.isfinite(value):
                raise DataFormatError(f"invalid power value {raw!r}", line=lineno)
            yield MeterRecord("hpc-fr", ts, value)


def parse_meter_csv(path, stats: ParseStats | None = None) -> list[MeterRecord]:
    """Read ``meter_id,iso8601_timestamp,kwh`` rows.

    Negative readings are rejected and counted; a repeated (meter, timestamp)
    keeps the last row.  An optional header line is skipped.
    """
    stats = stats if stats is not None else ParseStats()
    by_key: dict[tuple[str, datetime], MeterRecord] = {}
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            if lineno == 1 and row[0].strip().lower() in ("meter_id", "meter"):
                continue
            if len(row) != 3:
                raise DataFormatError(f"expected 3 fields, got {len(row)}", line=lineno)
            meter, ts_raw, kwh_raw = (c.strip() for c in row)
            try:
                ts = datetime.fromisoformat(ts_raw)
            except ValueError:
                raise DataFormatError(f"bad timestamp {ts_raw!r}", line=lineno)
            stats.rows += 1
            if kwh_raw in ("", "?"):
                stats.missing += 1
                continue
            try:
                kwh = float(kwh_raw)
            except ValueError:
                raise DataFormatError(f"bad kwh value {kwh_raw!r}", line=lineno)
            if kwh < 0 or not math.isfinite(kwh):
                stats.rejected += 1
                continue
            key = (meter, ts)
            if key in by_key:
                stats.duplicates += 1
                log.warning("line %d: duplicate reading for meter %s at %s, keeping last", lineno, meter, ts)
            by_key[key] = MeterRecord(meter, ts, kwh)
    return sorted(by_key.values(), key=lambda r: (r.source_id, r.timestamp))


def parse_traces(path, stats: ParseStats | None = None) -> list[PositionFix]:
    stats = stats if stats is not None else ParseStats()
    fixes = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if lineno == 1 and row[0].strip().lower() == "user":
                continue
            if len(row) != 4:
                raise DataFormatError(f"expected 4 fields, got {len(row)}", line=lineno)
            try:
                fix = PositionFix(
                    row[0].strip(), datetime.fromisoformat(row[1].strip()), float(row[2]), float(row[3])
                )
            except ValueError as exc:
                raise DataFormatError(str(exc), line=lineno)
            stats.rows += 1
            fixes.append(fix)
    fixes.sort(key=lambda f: (f.user, f.timestamp))
    return fixes


# ----------------------------------------------------------------------- aggregation


def _slot(ts: datetime, minutes: int = INTERVAL_MINUTES) -> int:
    return (ts.hour * 60 + ts.minute) // minutes


def aggregate_days(
    records: Iterable[MeterRecord],
    sample_minutes: int = 1,
    kind: str = "power",
    min_completeness: float = 0.95,
) -> tuple[list[DaySeries], int]:
    """Bin readings into 48 half-hour amounts per (source, day).

    ``kind="power"``: readings are kW averaged over ``sample_minutes``; each
    contributes ``kW * sample_minutes / 60`` kWh to its interval.
    ``kind="energy"``: readings are already interval amounts and are summed.

    Completeness is the share of expected readings present.  Days below
    ``min_completeness`` are dropped; missing readings inside a kept day count
    as zero.  Returns the kept days and the number dropped.
    """
    if kind not in ("power", "energy"):
        raise ValueError(f"unknown reading kind {kind!r}")
    per_day = 24 * 60 // sample_minutes
    scale = sample_minutes / 60.0 if kind == "power" else 1.0
    records = sorted(records, key=lambda r: (r.source_id, r.timestamp))
    days, dropped = [], 0
    for (src, day), group in groupby(records, key=lambda r: (r.source_id, r.timestamp.date())):
        values = np.zeros(DAY_LEN)
        seen = set()
        for r in group:
            if r.value is None:
                continue
            slot = (r.timestamp.hour * 60 + r.timestamp.minute) // sample_minutes
            if slot in seen:
                continue
            seen.add(slot)
            values[_slot(r.timestamp)] += r.value * scale
        completeness = len(seen) / per_day
        if completeness < min_completeness:
            dropped += 1
            continue
        days.append(DaySeries(src, day, values, completeness))
    return days, dropped


def haversine_km(lat1, lon1, lat2, lon2) -> float:
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp, dl = p2 - p1, math.radians(lon2 - lon1)
    h = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def mobility_day_series(
    fixes: Iterable[PositionFix], mode: str = "distance", travel_km: float = 0.5, window_minutes: int = 5
) -> list[DaySeries]:
    """Per-interval travel distance (km) or travel time (minutes) for each day.

    distance: each hop between consecutive fixes of the same day is added to
    the interval of the later fix.
    time: each ``window_minutes`` window whose first and last fix are more than
    ``travel_km`` apart adds ``window_minutes`` to its interval.
    Days with fewer than two fixes come back all zero and flagged.
    """
    if mode not in ("distance", "time"):
        raise ValueError(f"unknown mobility mode {mode!r}")
    fixes = sorted(fixes, key=lambda f: (f.user, f.timestamp))
    out = []
    for (user, day), group in groupby(fixes, key=lambda f: (f.user, f.timestamp.date())):
        group = list(group)
        values = np.zeros(DAY_LEN)
        covered = {_slot(f.timestamp) for f in group}
        flags = ()
        if len(group) < 2:
            flags = ("too_few_fixes",)
        elif mode == "distance":
            for prev, cur in zip(group, group[1:]):
                values[_slot(cur.timestamp)] += haversine_km(prev.lat, prev.lon, cur.lat, cur.lon)
        else:
            for _, win in groupby(group, key=lambda f: _slot(f.timestamp, window_minutes)):
                win = list(win)
                first, last = win[0], win[-1]
                if haversine_km(first.lat, first.lon, last.lat, last.lon) > travel_km:
                    values[_slot(first.timestamp)] += window_minutes
        out.append(DaySeries(user, day, values, len(covered) / DAY_LEN, flags))
    return out


# ------------------------------------------------------------------------- samples


def make_samples(days: Iterable[DaySeries], d_prime: int = 28, min_days: int = 150) -> SampleSet:
    """Head segment ``x'`` (first ``d_prime`` values) and full-day total per day.

    Sources with fewer than ``min_days`` days are left out; if none survive an
    :class:`InsufficientDataError` names every rejected source.
    """
    if not 1 <= d_prime <= DAY_LEN:
        raise ValueError(f"d_prime must be in 1..{DAY_LEN}, got {d_prime}")
    by_source: dict[str, list[DaySeries]] = defaultdict(list)
    for day in days:
        if day.values.size != DAY_LEN:
            raise ValueError(f"{day.source_id} {day.date}: day has {day.values.size} values")
        by_source[day.source_id].append(day)
    xs, ys, prov, reasons = [], [], [], []
    for src in sorted(by_source):
        src_days = by_source[src]
        if len(src_days) < min_days:
            reasons.append(f"source {src!r} has {len(src_days)} days, need at least {min_days}")
            log.warning(reasons[-1])
            continue
        for day in src_days:
            xs.append(day.values[:d_prime])
            ys.append(day.values.sum())
            prov.append((src, day.date))
    if not xs:
        raise InsufficientDataError("; ".join(reasons) or "no days supplied")
    return SampleSet(np.array(xs), np.array(ys), prov)


def split_folds(samples: SampleSet, seed: int) -> Folds:
    """Random equal thirds; the remainder of ``n / 3`` goes to training."""
    n = len(samples)
    if n < 3:
        raise InsufficientDataError(f"need at least 3 samples to split, got {n}")
    perm = SeededRng(seed).permutation(n)
    k = n // 3
    n_train = n - 2 * k
    return Folds(
        samples.subset(perm[:n_train]),
        samples.subset(perm[n_train : n_train + k]),
        samples.subset(perm[n_train + k :]),
    )


def repeat_splits(samples: SampleSet, seed: int, repetitions: int = 5) -> list[Folds]:
    return [split_folds(samples, seed + r) for r in range(repetitions)]


def shift_series(x, s: int) -> np.ndarray:
    """Shift right by ``s`` (left if negative) with zero fill."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    if s == 0:
        out[:] = x
    elif abs(s) < x.shape[-1]:
        if s > 0:
            out[..., s:] = x[..., :-s]
        else:
            out[..., :s] = x[..., -s:]
    return out


def highpass(x, width: int = 5) -> np.ndarray:
    """Series minus its centred moving average of ``width``."""
    x = np.atleast_2d(x)
    return np.array([row - moving_average(row, width) for row in x])


def preprocess(
    samples: SampleSet,
    shift_window: int = 0,
    denoise: str = "off",
    clamp_eps: float = 0.0,
    training: bool = False,
) -> SampleSet:
    """Optional denoising (all folds) and shift augmentation (training only).

    ``denoise``: ``off``, ``highpass`` (subtract width-5 moving average) or
    ``clamp`` (values below ``clamp_eps`` set to 0).  Augmentation appends,
    for every sample and every ``1 <= s <= shift_window``, its left and right
    zero-filled shifts with the same target.
    """
    x = samples.x
    if denoise == "highpass":
        x = highpass(x)
    elif denoise == "clamp":
        x = np.where(x < clamp_eps, 0.0, x)
    elif denoise != "off":
        raise ValueError(f"unknown denoise mode {denoise!r}")
    out = SampleSet(x.copy(), samples.y.copy(), list(samples.provenance))
    if training and shift_window > 0:
        xs, ys, prov = [out.x], [out.y], list(out.provenance)
        for s in range(1, shift_window + 1):
            for sgn in (-1, 1):
                xs.append(shift_series(out.x, sgn * s))
                ys.append(out.y)
                prov += out.provenance
        out = SampleSet(np.vstack(xs), np.concatenate(ys), prov)
    return out


# ------------------------------------------------------------------ canonical CSV


def _fmt(v: float) -> str:
    return repr(float(v))


def write_days(days: Iterable[DaySeries], path) -> int:
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source_id", "date"] + [f"v{i}" for i in range(1, DAY_LEN + 1)])
        for day in days:
            w.writerow([day.source_id, day.date.isoformat()] + [_fmt(v) for v in day.values])
            n += 1
    return n


def read_days(path) -> list[DaySeries]:
    days = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["source_id", "date"] or len(header) != DAY_LEN + 2:
            raise DataFormatError("not a day-series CSV (expected source_id,date,v1..v48)", line=1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != DAY_LEN + 2:
                raise DataFormatError(f"expected {DAY_LEN + 2} fields, got {len(row)}", line=lineno)
            try:
                values = np.array([float(v) for v in row[2:]])
                day = date.fromisoformat(row[1])
            except ValueError as exc:
                raise DataFormatError(str(exc), line=lineno)
            days.append(DaySeries(row[0], day, values))
    return days
