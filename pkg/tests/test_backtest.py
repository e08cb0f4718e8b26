import csv
import json
import random
from datetime import date, timedelta

import pytest
from hypothesis import given, settings, strategies as st

from eventtrade import synthetic
from eventtrade.backtest import (
    BacktestConfig,
    Direction,
    EntryMode,
    ExitReason,
    Policy,
    Signal,
    Transaction,
    format_headline,
    make_signal,
    per_event_breakdown,
    rates,
    run_backtest,
    signal_from_events,
    signals_from_detections,
    trade_at_best,
    trade_at_end,
    transaction_return,
    write_report,
)
from eventtrade.corpus import EventType as E
from eventtrade.errors import ConfigError, DataError
from eventtrade.market import BarStore, MinuteBar, TradingCalendar

import oracles
from oracles import utc

ROWS = synthetic.weekday_calendar_rows(date(2020, 3, 2), 6)
CAL = TradingCalendar.from_rows(ROWS)
PUBLISH = utc(2020, 3, 2, 15, 0)


def regular_bars(prices=None, days=3, ticker="X"):
    """Half-hourly regular-session bars at a flat 100 unless overridden by ``prices[ts]``."""
    prices = prices or {}
    bars = []
    for row in ROWS[:days]:
        for m in range(0, 390, 30):
            ts = row[2] + timedelta(minutes=m)
            o, h, lo, c = prices.get(ts, (100.0, 100.0, 100.0, 100.0))
            bars.append(MinuteBar(ticker, ts, o, h, lo, c))
    return bars


def sig(direction=Direction.LONG, ts=PUBLISH, events=(E.NC,), ticker="X", id="s1"):
    return Signal(id, ticker, direction, frozenset(events), ts)


# -- signals and returns -------------------------------------------------------

@pytest.mark.parametrize("events, want", [
    ({E.NC}, Direction.LONG),
    ({E.RD}, None),
    ({E.DC, E.A}, None),
    ({E.RSS}, Direction.SHORT),
    ({E.DC, E.RSS}, Direction.SHORT),
    ({E.RD, E.SR}, Direction.LONG),
    (set(), None),
])
def test_signal_from_events(events, want):
    assert signal_from_events(events) == want


def test_make_signal_drops_ignored_events():
    s = make_signal("a", "X", {E.RD, E.SR}, PUBLISH)
    assert s.trigger_events == {E.SR}


def test_signals_from_detection_records_sorted():
    recs = [
        {"id": "b", "ticker": "X", "published_at": "2020-03-02T16:00Z", "final_events": ["NC"]},
        {"id": "a", "ticker": "Y", "published_at": "2020-03-02T15:00Z", "final_events": ["DC"]},
        {"id": "c", "ticker": None, "published_at": "2020-03-02T15:00Z", "final_events": ["NC"]},
        {"id": "d", "ticker": "Z", "published_at": "2020-03-02T15:00Z", "final_events": ["RD"]},
    ]
    out = signals_from_detections(recs)
    assert [(s.article_id, s.direction) for s in out] == [("a", Direction.SHORT), ("b", Direction.LONG)]


@pytest.mark.parametrize("direction, entry, exit_, want", [
    (Direction.LONG, 100, 101, 1.0),
    (Direction.SHORT, 100, 100, 0.0),
    (Direction.SHORT, 100, 90, 10.0),
    (Direction.LONG, 100, 80, -20.0),
])
def test_transaction_return(direction, entry, exit_, want):
    assert transaction_return(direction, entry, exit_) == pytest.approx(want, abs=1e-12)


def test_transaction_return_rejects_non_positive_prices():
    with pytest.raises(ValueError):
        transaction_return(Direction.LONG, 0, 1)


# -- trade at end --------------------------------------------------------------

def test_flat_series_exits_at_day_one_regular_close():
    tx = trade_at_end(sig(), BarStore(regular_bars()), CAL, k=1)
    assert tx.exit_reason is ExitReason.HORIZON
    assert tx.exit_ts == utc(2020, 3, 2, 20, 30)  # last bar before the 21:00 close
    assert tx.gross_return_pct == 0.0


def test_stop_loss_without_gap():
    store = BarStore(regular_bars({utc(2020, 3, 2, 15, 30): (95.0, 96.0, 75.0, 90.0)}))
    tx = trade_at_end(sig(), store, CAL, k=1, stop_loss_pct=0.2)
    assert (tx.exit_price, tx.exit_reason, tx.exit_ts) == (80.0, ExitReason.STOP_LOSS, utc(2020, 3, 2, 15, 30))
    assert tx.gross_return_pct == pytest.approx(-20.0, abs=1e-9)


def test_gap_through_stop_exits_at_open():
    store = BarStore(regular_bars({utc(2020, 3, 2, 15, 30): (70.0, 72.0, 68.0, 71.0)}))
    tx = trade_at_end(sig(), store, CAL, k=1)
    assert (tx.exit_price, tx.exit_reason) == (70.0, ExitReason.STOP_LOSS)
    assert tx.gross_return_pct == pytest.approx(-30.0, abs=1e-9)


def test_short_stop_is_above_entry():
    store = BarStore(regular_bars({utc(2020, 3, 2, 16, 0): (101.0, 125.0, 100.0, 110.0)}))
    tx = trade_at_end(sig(Direction.SHORT, events=(E.DC,)), store, CAL)
    assert tx.exit_price == pytest.approx(120.0) and tx.gross_return_pct == pytest.approx(-20.0)


def test_close_minute_entry_uses_close_and_skips_entry_bar_stop():
    store = BarStore(regular_bars({PUBLISH: (100.0, 100.0, 60.0, 70.0)}))
    opened = trade_at_end(sig(), store, CAL, entry_mode=EntryMode.OPEN_MINUTE)
    closed = trade_at_end(sig(), store, CAL, entry_mode=EntryMode.CLOSE_MINUTE)
    assert opened.exit_reason is ExitReason.STOP_LOSS and opened.exit_ts == PUBLISH
    assert closed.entry_price == 70.0 and closed.exit_reason is ExitReason.HORIZON


def test_longer_horizon_exits_later_day():
    tx = trade_at_end(sig(), BarStore(regular_bars()), CAL, k=3)
    assert tx.exit_ts == utc(2020, 3, 4, 20, 30) and tx.horizon_k == 3


def test_no_bar_or_short_calendar_means_no_trade():
    store = BarStore(regular_bars())
    assert trade_at_end(sig(ts=utc(2020, 3, 2, 15, 1)), store, CAL) is None
    assert trade_at_end(sig(), store, TradingCalendar.from_rows(ROWS[:1]), k=2) is None
    assert trade_at_best(sig(), store, TradingCalendar.from_rows(ROWS[:1]), k=2) is None


# -- trade at best -------------------------------------------------------------

def test_trade_at_best_example_and_nesting():
    store = BarStore(regular_bars({
        utc(2020, 3, 2, 17, 0): (100.0, 110.0, 99.0, 100.0),
        utc(2020, 3, 4, 15, 0): (100.0, 130.0, 99.0, 100.0),
    }))
    one = trade_at_best(sig(), store, CAL, k=1)
    three = trade_at_best(sig(), store, CAL, k=3)
    assert one.gross_return_pct == pytest.approx(10.0) and one.exit_reason is ExitReason.BEST
    assert three.gross_return_pct == pytest.approx(30.0)
    assert three.gross_return_pct >= one.gross_return_pct


def test_trade_at_best_short_takes_lowest_low():
    store = BarStore(regular_bars({utc(2020, 3, 2, 18, 0): (100.0, 100.0, 90.0, 95.0)}))
    tx = trade_at_best(sig(Direction.SHORT, events=(E.RSS,)), store, CAL)
    assert tx.exit_price == 90.0 and tx.gross_return_pct == pytest.approx(10.0)


@settings(max_examples=60)
@given(st.integers(0, 10**6), st.floats(0.01, 100.0))
def test_returns_are_invariant_to_price_scale(seed, scale):
    rng = random.Random(seed)
    rows, bars, store, cal = oracles.random_market(rng)
    scaled = BarStore(MinuteBar(t, ts, o * scale, h * scale, lo * scale, c * scale, v, s)
                      for t, ts, o, h, lo, c, v, s in bars)
    ts = oracles.random_publish_ts(rng, bars, "X")
    s = sig(rng.choice(list(Direction)), ts)
    for k in (1, 2):
        for a, b in ((trade_at_end(s, store, cal, k), trade_at_end(s, scaled, cal, k)),
                     (trade_at_best(s, store, cal, k), trade_at_best(s, scaled, cal, k))):
            assert (a is None) == (b is None)
            if a is not None:
                assert a.exit_ts == b.exit_ts
                assert a.gross_return_pct == pytest.approx(b.gross_return_pct, rel=1e-9, abs=1e-9)


# -- ledger and metrics --------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError):
        BacktestConfig(k=0).validate()
    with pytest.raises(ConfigError):
        BacktestConfig(stop_loss_pct=1.5).validate()
    with pytest.raises(ValueError):
        BacktestConfig(policy="TAX")


def with_bench(bars, start=100.0, end=110.0):
    bench = regular_bars(days=3, ticker="$BENCH")
    first, last = bench[0], bench[-1]
    bench[0] = MinuteBar("$BENCH", first.ts, start, start, start, start)
    bench[-1] = MinuteBar("$BENCH", last.ts, end, end, end, end)
    return BarStore(bars + bench)


def test_no_signals_excess_is_minus_market():
    rep = run_backtest([], with_bench(regular_bars()), CAL)
    assert rep.total_return == 0.0 and rep.final_cash == 10000.0
    assert rep.market_return == pytest.approx(1000.0)
    assert rep.excess_return == -rep.market_return


def test_single_long_ten_percent():
    store = BarStore(regular_bars({utc(2020, 3, 2, 20, 30): (110.0, 110.0, 110.0, 110.0)}))
    rep = run_backtest([sig()], store, CAL, BacktestConfig(benchmark=None))
    assert rep.transactions[0].gross_return_pct == pytest.approx(10.0)
    assert rep.final_cash == pytest.approx(10194.0, abs=1e-9)
    assert rep.transactions[0].stake == 2000.0


def test_per_side_commission_option():
    store = BarStore(regular_bars({utc(2020, 3, 2, 20, 30): (110.0, 110.0, 110.0, 110.0)}))
    rep = run_backtest([sig()], store, CAL, BacktestConfig(benchmark=None, commission_per_side=True))
    assert rep.final_cash == pytest.approx(10000 + 200 - 6 - 6.6, abs=1e-9)


def test_low_cash_stakes_a_fraction():
    # six overlapping positions: the sixth sees cash 0 and stakes nothing
    sigs = [sig(ts=PUBLISH + timedelta(minutes=30 * i), id=f"s{i}") for i in range(6)]
    rep = run_backtest(sigs, BarStore(regular_bars()), CAL, BacktestConfig(benchmark=None, initial_cash=9000))
    stakes = [t.stake for t in rep.transactions]
    assert stakes[:4] == [2000.0] * 4 and stakes[4] == pytest.approx(200.0) and stakes[5] == pytest.approx(160.0)


def test_unsorted_signals_raise():
    with pytest.raises(ValueError):
        run_backtest([sig(ts=PUBLISH + timedelta(hours=1)), sig()], BarStore(regular_bars()), CAL,
                     BacktestConfig(benchmark=None))


def test_missing_benchmark_is_data_error():
    with pytest.raises(DataError):
        run_backtest([], BarStore(regular_bars()), CAL)


def test_five_transactions_rates():
    wr, bwr, ar = rates([2.0, 0.5, 0.0, -0.1, 1.0])
    assert (wr, bwr) == (4 / 5, 2 / 5)
    assert ar == pytest.approx(3.4 / 5)
    assert rates([]) == (0.0, 0.0, 0.0)


def tx(events, ret):
    s = Signal("a", "X", Direction.LONG, frozenset(events), PUBLISH)
    return Transaction(s, PUBLISH, 100.0, PUBLISH, 100.0 + ret, Policy.TAE, 1, ExitReason.HORIZON, ret)


def test_per_event_single_event_equals_global():
    txs = [tx({E.NC}, r) for r in (1.0, -2.0, 3.0)]
    wr, _, ar = rates([t.gross_return_pct for t in txs])
    (stats,) = per_event_breakdown(txs).values()
    assert (stats.win_rate, stats.avg_return_pct, stats.count) == (wr, ar, 3)


def test_multi_event_transaction_counts_in_each_row():
    out = per_event_breakdown([tx({E.A, E.NC}, 1.0), tx({E.NC}, -1.0)])
    assert out[E.A].count == 1 and out[E.NC].count == 2


def test_per_event_empty():
    assert per_event_breakdown([]) == {}


# -- reporting -----------------------------------------------------------------

def test_write_report_files(tmp_path):
    store = with_bench(regular_bars({utc(2020, 3, 2, 20, 30): (110.0, 110.0, 110.0, 110.0)}))
    cfg = BacktestConfig()
    rep = run_backtest([sig()], store, CAL, cfg)
    write_report(rep, tmp_path, cfg)
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["transactions"] == 1 and data["config"]["policy"] == "TAE"
    assert data["transaction_list"][0]["exit_reason"] == "HORIZON"
    with (tmp_path / "per_event.csv").open() as fh:
        assert list(csv.DictReader(fh))[0]["event"] == "NC"
    assert (tmp_path / "summary.csv").read_text().startswith("metric,value\n")
    assert len((tmp_path / "equity.csv").read_text().splitlines()) == 3


def test_headline_formats_negative_dollars():
    rep = run_backtest([], with_bench(regular_bars()), CAL)
    text = format_headline(rep, "TAE(1)")
    assert "-$1,000" in text and "0.00%||0.00%" in text
