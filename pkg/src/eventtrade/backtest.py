"""Event signals, Trade-At-End / Trade-At-Best execution and the cash ledger.

Transactions are built independently per signal (pure); the ledger then
replays entries and exits in timestamp order to size stakes and track cash.
Win/big-win/average metrics use gross returns; commission only touches cash.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import EventType, format_timestamp, parse_timestamp
from .errors import CalendarExhausted, ConfigError, DataError
from .market import BarStore, TradingCalendar, first_tradable, from_minute, to_minute, window_end

log = logging.getLogger(__name__)

BENCHMARK = "$BENCH"
SHORT_EVENTS = frozenset({EventType.RSS, EventType.DC})
IGNORED_EVENTS = frozenset({EventType.RD})


class Direction(str, enum.Enum):
    LONG = "LONG"
    SHORT = "SHORT"


class Policy(str, enum.Enum):
    TAE = "TAE"
    TAB = "TAB"


class ExitReason(str, enum.Enum):
    HORIZON = "HORIZON"
    STOP_LOSS = "STOP_LOSS"
    BEST = "BEST"


class EntryMode(str, enum.Enum):
    OPEN_MINUTE = "OPEN_MINUTE"
    CLOSE_MINUTE = "CLOSE_MINUTE"


@dataclass(frozen=True)
class Signal:
    article_id: str
    ticker: str
    direction: Direction
    trigger_events: frozenset
    publish_ts: datetime


@dataclass(frozen=True)
class Transaction:
    signal: Signal
    entry_ts: datetime
    entry_price: float
    exit_ts: datetime
    exit_price: float
    policy: Policy
    horizon_k: int
    exit_reason: ExitReason
    gross_return_pct: float
    stake: float = 0.0

    def to_record(self) -> dict:
        s = self.signal
        return {
            "article_id": s.article_id,
            "ticker": s.ticker,
            "direction": s.direction.value,
            "trigger_events": sorted(e.value for e in s.trigger_events),
            "publish_ts": format_timestamp(s.publish_ts),
            "entry_ts": format_timestamp(self.entry_ts),
            "entry_price": self.entry_price,
            "exit_ts": format_timestamp(self.exit_ts),
            "exit_price": self.exit_price,
            "policy": self.policy.value,
            "horizon_k": self.horizon_k,
            "exit_reason": self.exit_reason.value,
            "gross_return_pct": self.gross_return_pct,
            "stake": self.stake,
        }


def signal_from_events(events: Iterable[EventType]) -> Direction | None:
    """LONG for positive events, SHORT for RSS/DC; RD is ignored; mixed directions abstain."""
    tradable = {EventType(e) for e in events} - IGNORED_EVENTS
    if not tradable:
        return None
    dirs = {Direction.SHORT if e in SHORT_EVENTS else Direction.LONG for e in tradable}
    return dirs.pop() if len(dirs) == 1 else None


def make_signal(article_id: str, ticker: str, events: Iterable[EventType], publish_ts: datetime) -> Signal | None:
    events = frozenset(EventType(e) for e in events)
    direction = signal_from_events(events)
    if direction is None:
        return None
    return Signal(article_id, ticker, direction, events - IGNORED_EVENTS, publish_ts)


def signals_from_detections(records: Iterable[dict]) -> list[Signal]:
    """Signals from detection records carrying ``ticker`` and ``published_at``, sorted by time."""
    out = []
    for rec in records:
        if not rec.get("ticker") or not rec.get("final_events"):
            continue
        sig = make_signal(rec["id"], rec["ticker"], rec["final_events"], parse_timestamp(rec["published_at"]))
        if sig is not None:
            out.append(sig)
    out.sort(key=lambda s: (s.publish_ts, s.article_id))
    return out


def transaction_return(direction: Direction, entry_price: float, exit_price: float) -> float:
    """Gross return in percent; shorts are measured against the entry (sell) price."""
    if entry_price <= 0 or exit_price <= 0:
        raise ValueError(f"prices must be positive, got entry={entry_price} exit={exit_price}")
    if direction == Direction.LONG:
        return (exit_price - entry_price) / entry_price * 100.0
    return (entry_price - exit_price) / entry_price * 100.0


def trade_at_end(
    signal: Signal,
    store: BarStore,
    calendar: TradingCalendar,
    k: int = 1,
    stop_loss_pct: float = 0.2,
    entry_mode: EntryMode = EntryMode.OPEN_MINUTE,
) -> Transaction | None:
    """Hold until the regular close of trading day ``k`` unless the stop loss fires first.

    The exit bar is the last bar strictly before that day's regular close. If
    the entry is already past it (after-hours news on day ``k``), the exit is
    the last bar inside ``window_end(k)``. The entry bar is scanned for the
    stop only when entering at its open.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0 < stop_loss_pct < 1:
        raise ValueError("stop_loss_pct must be in (0, 1)")
    entry = first_tradable(signal.ticker, signal.publish_ts, store, calendar)
    if entry is None:
        return None
    try:
        day = calendar.day(signal.publish_ts, k)
    except CalendarExhausted:
        log.info("calendar too short for %s (k=%d)", signal.article_id, k)
        return None
    s = store.series[signal.ticker]
    i0 = s.index_at(to_minute(entry[0]))
    entry_price = entry[1] if EntryMode(entry_mode) == EntryMode.OPEN_MINUTE else entry[2]
    i_end = int(np.searchsorted(s.ts, to_minute(day.reg_close), "left")) - 1
    if i_end < i0:
        i_end = int(np.searchsorted(s.ts, to_minute(day.after_close), "right")) - 1
    first = i0 if EntryMode(entry_mode) == EntryMode.OPEN_MINUTE else i0 + 1

    long = signal.direction == Direction.LONG
    stop = entry_price * (1 - stop_loss_pct) if long else entry_price * (1 + stop_loss_pct)
    exit_i, exit_price, reason = i_end, float(s.close[i_end]), ExitReason.HORIZON
    for j in range(first, i_end + 1):
        if long:
            if s.open[j] <= stop:
                exit_i, exit_price, reason = j, float(s.open[j]), ExitReason.STOP_LOSS
                break
            if s.low[j] <= stop:
                exit_i, exit_price, reason = j, stop, ExitReason.STOP_LOSS
                break
        else:
            if s.open[j] >= stop:
                exit_i, exit_price, reason = j, float(s.open[j]), ExitReason.STOP_LOSS
                break
            if s.high[j] >= stop:
                exit_i, exit_price, reason = j, stop, ExitReason.STOP_LOSS
                break
    return Transaction(
        signal, entry[0], float(entry_price), from_minute(s.ts[exit_i]), float(exit_price), Policy.TAE, k,
        reason, transaction_return(signal.direction, entry_price, exit_price),
    )


def trade_at_best(signal: Signal, store: BarStore, calendar: TradingCalendar, k: int = 1) -> Transaction | None:
    """Enter at the publish-minute open, exit at the best price within ``k`` trading days."""
    if k < 1:
        raise ValueError("k must be >= 1")
    entry = first_tradable(signal.ticker, signal.publish_ts, store, calendar)
    if entry is None:
        return None
    try:
        end = window_end(signal.publish_ts, k, calendar)
    except CalendarExhausted:
        log.info("calendar too short for %s (k=%d)", signal.article_id, k)
        return None
    s = store.series[signal.ticker]
    sl = s.range(to_minute(entry[0]), to_minute(end))
    if signal.direction == Direction.LONG:
        i = sl.start + int(np.argmax(s.high[sl]))
        price = float(s.high[i])
    else:
        i = sl.start + int(np.argmin(s.low[sl]))
        price = float(s.low[i])
    return Transaction(
        signal, entry[0], float(entry[1]), from_minute(s.ts[i]), price, Policy.TAB, k,
        ExitReason.BEST, transaction_return(signal.direction, entry[1], price),
    )


@dataclass
class BacktestConfig:
    policy: Policy = Policy.TAE
    k: int = 1
    stop_loss_pct: float = 0.2
    entry_mode: EntryMode = EntryMode.OPEN_MINUTE
    initial_cash: float = 10000.0
    stake: float = 2000.0
    low_cash_fraction: float = 0.2
    commission: float = 0.003
    commission_per_side: bool = False
    benchmark: str | None = BENCHMARK
    span_start: datetime | None = None
    span_end: datetime | None = None

    def __post_init__(self) -> None:
        self.policy = Policy(self.policy)
        self.entry_mode = EntryMode(self.entry_mode)

    def validate(self) -> "BacktestConfig":
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if not 0 < self.stop_loss_pct < 1:
            raise ConfigError(f"stop_loss_pct must be in (0, 1), got {self.stop_loss_pct}")
        if self.initial_cash <= 0 or self.stake <= 0:
            raise ConfigError("initial_cash and stake must be positive")
        if not 0 < self.low_cash_fraction <= 1:
            raise ConfigError(f"low_cash_fraction must be in (0, 1], got {self.low_cash_fraction}")
        if not 0 <= self.commission < 1:
            raise ConfigError(f"commission must be in [0, 1), got {self.commission}")
        return self


def execute(signal: Signal, store: BarStore, calendar: TradingCalendar, config: BacktestConfig) -> Transaction | None:
    if signal.ticker not in store:
        return None
    if config.policy == Policy.TAB:
        return trade_at_best(signal, store, calendar, config.k)
    return trade_at_end(signal, store, calendar, config.k, config.stop_loss_pct, config.entry_mode)


@dataclass(frozen=True)
class EventStats:
    win_rate: float
    avg_return_pct: float
    count: int


@dataclass
class LedgerState:
    cash: float
    open_positions: dict[int, float] = field(default_factory=dict)
    equity: list[tuple[datetime, float]] = field(default_factory=list)

    def value(self) -> float:
        return self.cash + sum(self.open_positions.values())


@dataclass
class BacktestReport:
    transactions: list[Transaction]
    win_rate: float
    big_win_rate: float
    avg_return_pct: float
    total_return: float
    market_return: float
    excess_return: float
    final_cash: float
    per_event: dict[EventType, EventStats]
    equity: list[tuple[datetime, float]]
    skipped: int = 0

    def headline(self) -> dict:
        return {
            "transactions": len(self.transactions),
            "win_rate": self.win_rate,
            "big_win_rate": self.big_win_rate,
            "avg_return_pct": self.avg_return_pct,
            "total_return": self.total_return,
            "market_return": self.market_return,
            "excess_return": self.excess_return,
            "final_cash": self.final_cash,
        }

    def to_record(self, config: BacktestConfig | None = None) -> dict:
        rec = self.headline()
        rec["skipped_signals"] = self.skipped
        rec["per_event"] = {e.value: asdict(s) for e, s in sorted(self.per_event.items(), key=lambda x: x[0].value)}
        rec["transaction_list"] = [t.to_record() for t in self.transactions]
        if config is not None:
            cfg = asdict(config)
            for key in ("policy", "entry_mode"):
                cfg[key] = cfg[key].value
            for key in ("span_start", "span_end"):
                cfg[key] = format_timestamp(cfg[key]) if cfg[key] else None
            rec["config"] = cfg
        return rec


def rates(returns: Sequence[float]) -> tuple[float, float, float]:
    """(win rate, big-win rate, mean return) with wins at >= 0% and big wins at >= 1%."""
    n = len(returns)
    if n == 0:
        return 0.0, 0.0, 0.0
    wins = sum(r >= 0 for r in returns)
    big = sum(r >= 1.0 for r in returns)
    return wins / n, big / n, float(sum(returns) / n)


def per_event_breakdown(report_or_transactions) -> dict[EventType, EventStats]:
    txs = getattr(report_or_transactions, "transactions", report_or_transactions)
    buckets: dict[EventType, list[float]] = {}
    for t in txs:
        for e in t.signal.trigger_events:
            buckets.setdefault(e, []).append(t.gross_return_pct)
    out = {}
    for e in sorted(buckets, key=lambda x: x.value):
        wr, _, ar = rates(buckets[e])
        out[e] = EventStats(wr, ar, len(buckets[e]))
    return out


def market_return(store: BarStore, config: BacktestConfig) -> float:
    if config.benchmark is None:
        return 0.0
    if config.benchmark not in store:
        raise DataError(f"benchmark series {config.benchmark!r} not found in bars")
    s = store.series[config.benchmark]
    lo = to_minute(config.span_start) if config.span_start else int(s.ts[0])
    hi = to_minute(config.span_end) if config.span_end else int(s.ts[-1])
    sl = s.range(lo, hi)
    if sl.stop <= sl.start:
        raise DataError(f"benchmark series has no bars between {from_minute(lo)} and {from_minute(hi)}")
    p0, p1 = float(s.open[sl.start]), float(s.close[sl.stop - 1])
    return config.initial_cash * (p1 / p0 - 1.0)


def run_backtest(
    signals: Sequence[Signal], store: BarStore, calendar: TradingCalendar, config: BacktestConfig | None = None
) -> BacktestReport:
    """Size, execute and settle every signal, then compute the report metrics."""
    config = (config or BacktestConfig()).validate()
    for a, b in zip(signals, signals[1:]):
        if b.publish_ts < a.publish_ts:
            raise ValueError("signals must be sorted by publish_ts")
    mret = market_return(store, config)

    planned = []
    for sig in signals:
        tx = execute(sig, store, calendar, config)
        if tx is None:
            log.info("no transaction for %s (%s)", sig.article_id, sig.ticker)
        else:
            planned.append(tx)
    skipped = len(signals) - len(planned)

    # at a shared minute: earlier positions exit first so freed cash is
    # reusable, then entries, then round trips opened and closed that minute
    events = []
    for i, tx in enumerate(planned):
        events.append((tx.entry_ts, 1, i))
        events.append((tx.exit_ts, 0 if tx.exit_ts > tx.entry_ts else 2, i))
    events.sort()

    state = LedgerState(cash=float(config.initial_cash))
    stakes: dict[int, float] = {}
    for ts, kind, i in events:
        tx = planned[i]
        if kind == 1:
            stake = config.stake if state.cash >= config.stake else config.low_cash_fraction * state.cash
            if stake <= 0:
                skipped += 1
                continue
            state.cash -= stake
            state.open_positions[i] = stake
            stakes[i] = stake
        else:
            stake = state.open_positions.pop(i, None)
            if stake is None:  # entry was skipped at zero stake
                continue
            fee = stake * config.commission
            if config.commission_per_side:
                fee += stake * (1 + tx.gross_return_pct / 100.0) * config.commission
            state.cash += stake * (1 + tx.gross_return_pct / 100.0) - fee
        state.equity.append((ts, state.value()))

    assert not state.open_positions, "every reserved stake must return to cash"
    done = [replace(planned[i], stake=stakes[i]) for i in sorted(stakes)]
    wr, bwr, ar = rates([t.gross_return_pct for t in done])
    total = state.cash - config.initial_cash
    return BacktestReport(
        transactions=done,
        win_rate=wr,
        big_win_rate=bwr,
        avg_return_pct=ar,
        total_return=total,
        market_return=mret,
        excess_return=total - mret,
        final_cash=state.cash,
        per_event=per_event_breakdown(done),
        equity=state.equity,
        skipped=skipped,
    )


def write_report(report: BacktestReport, out_dir: str | Path, config: BacktestConfig | None = None) -> None:
    """``report.json``, ``summary.csv``, ``per_event.csv`` and ``equity.csv`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "report.json").open("w", encoding="utf-8") as fh:
        json.dump(report.to_record(config), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with (out / "summary.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        for key, val in report.headline().items():
            w.writerow([key, val])
    with (out / "per_event.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["event", "win_rate", "avg_return_pct", "count"])
        for e, st in report.per_event.items():
            w.writerow([e.value, st.win_rate, st.avg_return_pct, st.count])
    with (out / "equity.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ts", "value"])
        for ts, val in report.equity:
            w.writerow([format_timestamp(ts), val])


def _dollars(x: float) -> str:
    return f"-${-x:,.0f}" if x < 0 else f"${x:,.0f}"


def format_headline(report: BacktestReport, label: str = "") -> str:
    """One-row table: WR || BWR, average return, excess return, transaction count."""
    head = f"{'strategy':<14}{'WR||BWR':>18}{'AR':>10}{'ER':>14}{'#Tx':>7}"
    row = (
        f"{label:<14}"
        f"{f'{report.win_rate * 100:.2f}%||{report.big_win_rate * 100:.2f}%':>18}"
        f"{f'{report.avg_return_pct:.2f}%':>10}"
        f"{_dollars(report.excess_return):>14}"
        f"{len(report.transactions):>7}"
    )
    return head + "\n" + row
