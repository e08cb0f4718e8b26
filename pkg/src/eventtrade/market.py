"""Minute bars, the trading calendar and per-article price labels.

Timestamps are UTC throughout. Internally bars are indexed by integer
minutes since the Unix epoch.
"""

from __future__ import annotations

import bisect
import csv
import enum
import logging
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import parse_timestamp
from .errors import CalendarExhausted, DataError

log = logging.getLogger(__name__)

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
HORIZONS = (1, 2, 3)


def to_minute(ts: datetime) -> int:
    return int((ts - _EPOCH) // timedelta(minutes=1))


def from_minute(m: int) -> datetime:
    return _EPOCH + timedelta(minutes=int(m))


class Session(str, enum.Enum):
    PRE = "PRE"
    REGULAR = "REGULAR"
    AFTER = "AFTER"


@dataclass(frozen=True)
class MinuteBar:
    ticker: str
    ts: datetime
    open: float
    high: float
    low: float
    close: float
    volume: int = 0
    session: Session = Session.REGULAR

    def __post_init__(self) -> None:
        for name in ("open", "high", "low", "close"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "session", Session(self.session))
        if min(self.open, self.high, self.low, self.close) <= 0:
            raise ValueError("prices must be positive")
        if not self.low <= min(self.open, self.close) <= max(self.open, self.close) <= self.high:
            raise ValueError(
                f"OHLC out of order: open={self.open} high={self.high} low={self.low} close={self.close}"
            )
        if self.ts.second or self.ts.microsecond:
            raise ValueError(f"bar timestamp {self.ts} is not minute-aligned")


class Series:
    """Sorted bars of one ticker held as parallel arrays."""

    __slots__ = ("ts", "open", "high", "low", "close", "volume", "session")

    def __init__(self, bars: Sequence[MinuteBar]):
        bars = sorted(bars, key=lambda b: b.ts)
        self.ts = np.array([to_minute(b.ts) for b in bars], dtype=np.int64)
        if len(self.ts) > 1 and np.any(np.diff(self.ts) == 0):
            dup = self.ts[np.flatnonzero(np.diff(self.ts) == 0)[0]]
            raise DataError(f"{bars[0].ticker}: duplicate bar at {from_minute(dup).isoformat()}")
        self.open = np.array([b.open for b in bars])
        self.high = np.array([b.high for b in bars])
        self.low = np.array([b.low for b in bars])
        self.close = np.array([b.close for b in bars])
        self.volume = np.array([b.volume for b in bars], dtype=np.int64)
        self.session = [b.session for b in bars]

    def __len__(self) -> int:
        return len(self.ts)

    def index_at(self, minute: int) -> int | None:
        i = int(np.searchsorted(self.ts, minute))
        return i if i < len(self.ts) and self.ts[i] == minute else None

    def range(self, lo: int, hi: int) -> slice:
        """Index slice of bars with ``lo <= ts <= hi``."""
        return slice(int(np.searchsorted(self.ts, lo, "left")), int(np.searchsorted(self.ts, hi, "right")))


class BarStore:
    def __init__(self, bars: Iterable[MinuteBar] = ()):
        grouped: dict[str, list[MinuteBar]] = {}
        for b in bars:
            grouped.setdefault(b.ticker, []).append(b)
        self.series = {t: Series(bs) for t, bs in grouped.items()}

    def __contains__(self, ticker: str) -> bool:
        return ticker in self.series

    def get(self, ticker: str, ts: datetime) -> MinuteBar | None:
        s = self.series.get(ticker)
        if s is None:
            return None
        i = s.index_at(to_minute(ts))
        if i is None:
            return None
        return MinuteBar(ticker, from_minute(s.ts[i]), s.open[i], s.high[i], s.low[i], s.close[i],
                         int(s.volume[i]), s.session[i])

    def tickers(self) -> list[str]:
        return sorted(self.series)


def load_bars(path: str | Path, strict: bool = False) -> BarStore:
    """Read ``ticker,ts,open,high,low,close,volume,session`` rows.

    Rows violating the OHLC ordering are skipped and logged (raised when ``strict``).
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"bars file not found: {path}")
    bars, rejected = [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            try:
                bars.append(MinuteBar(
                    ticker=row["ticker"].strip(),
                    ts=parse_timestamp(row["ts"]),
                    open=float(row["open"]),
                    high=float(row["high"]),
                    low=float(row["low"]),
                    close=float(row["close"]),
                    volume=int(float(row.get("volume") or 0)),
                    session=Session((row.get("session") or "REGULAR").strip().upper()),
                ))
            except (ValueError, KeyError, TypeError, AttributeError) as exc:
                rejected.append(f"{path}:{reader.line_num}: {exc}")
    for msg in rejected:
        log.warning("rejected bar row %s", msg)
    if rejected and strict:
        raise DataError("rejected bar rows:\n  " + "\n  ".join(rejected))
    store = BarStore(bars)
    store.rejected = rejected
    return store


def write_bars(path: str | Path, rows: Iterable[tuple]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["ticker", "ts", "open", "high", "low", "close", "volume", "session"])
        for tk, ts, o, h, lo, c, v, s in rows:
            w.writerow([tk, ts.strftime("%Y-%m-%dT%H:%MZ"), o, h, lo, c, v, s])


@dataclass(frozen=True)
class TradingDay:
    day: date
    pre_open: datetime
    reg_open: datetime
    reg_close: datetime
    after_close: datetime

    def __post_init__(self) -> None:
        if not self.pre_open <= self.reg_open < self.reg_close <= self.after_close:
            raise ValueError(f"{self.day}: session bounds out of order")


class TradingCalendar:
    def __init__(self, days: Sequence[TradingDay]):
        self.days = list(days)
        for a, b in zip(self.days, self.days[1:]):
            if not a.day < b.day or not a.after_close <= b.pre_open:
                raise ValueError(f"calendar days not strictly increasing at {a.day} -> {b.day}")
        self._after = [to_minute(d.after_close) for d in self.days]

    @classmethod
    def from_rows(cls, rows: Iterable[tuple]) -> "TradingCalendar":
        return cls([TradingDay(*r) for r in rows])

    def __len__(self) -> int:
        return len(self.days)

    def first_day_index(self, ts: datetime) -> int:
        """Index of the first trading day whose session has not ended at ``ts``."""
        i = bisect.bisect_left(self._after, to_minute(ts))
        if i >= len(self.days):
            raise CalendarExhausted(f"calendar ends before {ts.isoformat()}")
        return i

    def day(self, publish_ts: datetime, k: int) -> TradingDay:
        """The ``k``-th trading day counting the publish day as day 1."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        i = self.first_day_index(publish_ts) + k - 1
        if i >= len(self.days):
            raise CalendarExhausted(f"calendar has no trading day {k} after {publish_ts.isoformat()}")
        return self.days[i]


def load_calendar(path: str | Path) -> TradingCalendar:
    """Read ``date,pre_open,reg_open,reg_close,after_close``; times are UTC.

    Time columns accept a full ISO timestamp or a bare ``HH:MM`` on the row's
    date; a bound earlier than the previous one rolls to the next day.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"calendar file not found: {path}")
    days = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            try:
                d = date.fromisoformat(row["date"].strip())
                bounds, prev = [], None
                for col in ("pre_open", "reg_open", "reg_close", "after_close"):
                    val = row[col].strip()
                    if "T" in val:
                        ts = parse_timestamp(val)
                    else:
                        hh, mm = (int(x) for x in val.split(":")[:2])
                        ts = datetime(d.year, d.month, d.day, hh, mm, tzinfo=timezone.utc)
                        if prev is not None and ts < prev:
                            ts += timedelta(days=1)
                    bounds.append(ts)
                    prev = ts
                days.append(TradingDay(d, *bounds))
            except (ValueError, KeyError, AttributeError) as exc:
                raise DataError(f"{path}:{reader.line_num}: {exc}") from exc
    try:
        return TradingCalendar(days)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def write_calendar(path: str | Path, cal: TradingCalendar) -> None:
    fmt = "%Y-%m-%dT%H:%MZ"
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "pre_open", "reg_open", "reg_close", "after_close"])
        for d in cal.days:
            w.writerow([d.day.isoformat(), d.pre_open.strftime(fmt), d.reg_open.strftime(fmt),
                        d.reg_close.strftime(fmt), d.after_close.strftime(fmt)])


def first_tradable(
    ticker: str, publish_ts: datetime, store: BarStore, calendar: TradingCalendar | None = None
) -> tuple[datetime, float, float] | None:
    """The bar at the publish minute, in any session; ``None`` means skip the article."""
    bar = store.get(ticker, publish_ts)
    if bar is None:
        return None
    return bar.ts, bar.open, bar.close


def window_end(publish_ts: datetime, k: int, calendar: TradingCalendar) -> datetime:
    """After-hours close of the ``k``-th trading day (publish day is day 1 if it trades)."""
    return calendar.day(publish_ts, k).after_close


@dataclass(frozen=True)
class PriceLabels:
    first_minute_ts: datetime
    first_open: float
    first_close: float
    highest: dict[int, float]
    highest_ts: dict[int, datetime]
    lowest: dict[int, float]
    lowest_ts: dict[int, datetime]
    close: dict[int, float]
    close_ts: dict[int, datetime]

    def to_record(self) -> dict:
        fmt = "%Y-%m-%dT%H:%MZ"
        rec = {
            "first_minute_ts": self.first_minute_ts.strftime(fmt),
            "first_open": self.first_open,
            "first_close": self.first_close,
        }
        for k in sorted(self.highest):
            rec[f"highest_{k}"] = self.highest[k]
            rec[f"highest_{k}_ts"] = self.highest_ts[k].strftime(fmt)
            rec[f"lowest_{k}"] = self.lowest[k]
            rec[f"lowest_{k}_ts"] = self.lowest_ts[k].strftime(fmt)
            rec[f"close_{k}"] = self.close[k]
            rec[f"close_{k}_ts"] = self.close_ts[k].strftime(fmt)
        return rec


def compute_price_labels(
    ticker: str,
    publish_ts: datetime,
    store: BarStore,
    calendar: TradingCalendar,
    horizons: Sequence[int] = HORIZONS,
) -> PriceLabels | None:
    """Entry-minute prices plus extremes and closes over ``[entry, window_end(k)]``.

    Extremes record the earliest bar achieving them. ``None`` when there is no
    bar at the publish minute or the calendar cannot cover every horizon.
    """
    entry = first_tradable(ticker, publish_ts, store, calendar)
    if entry is None:
        return None
    s = store.series[ticker]
    lo = to_minute(entry[0])
    hi_, hi_ts, lw, lw_ts, cl, cl_ts = {}, {}, {}, {}, {}, {}
    for k in horizons:
        try:
            end = to_minute(window_end(publish_ts, k, calendar))
        except CalendarExhausted:
            log.info("calendar too short for %s at %s (k=%d)", ticker, publish_ts, k)
            return None
        sl = s.range(lo, end)
        i_hi = sl.start + int(np.argmax(s.high[sl]))
        i_lo = sl.start + int(np.argmin(s.low[sl]))
        i_cl = sl.stop - 1
        hi_[k], hi_ts[k] = float(s.high[i_hi]), from_minute(s.ts[i_hi])
        lw[k], lw_ts[k] = float(s.low[i_lo]), from_minute(s.ts[i_lo])
        cl[k], cl_ts[k] = float(s.close[i_cl]), from_minute(s.ts[i_cl])
    return PriceLabels(entry[0], entry[1], entry[2], hi_, hi_ts, lw, lw_ts, cl, cl_ts)
