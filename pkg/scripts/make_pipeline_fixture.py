"""Regenerate the small end-to-end fixture under tests/fixtures/pipeline.

The fixture is a labeled training corpus, five unseen articles to trade on,
company-ticker pairs, a weekday calendar, five-minute bars and a config
small enough for the whole adapt/train/detect/backtest chain to run in
seconds.

    python scripts/make_pipeline_fixture.py [--out tests/fixtures/pipeline]
"""

import argparse
import csv
import json
import random
from datetime import date, datetime, timedelta, timezone
from pathlib import Path

from eventtrade import synthetic
from eventtrade.backtest import BENCHMARK
from eventtrade.corpus import Article, EventType, article_to_record
from eventtrade.market import TradingCalendar, write_bars, write_calendar

EVENTS = (EventType.SR, EventType.A, EventType.NC, EventType.DC)
START = date(2020, 3, 2)
N_DAYS = 12

CONFIG = """\
encoder:
  dim: 32
  window: 2
  vocab: 4096
  max_len: 64
  seed: 0
pretrain:
  epochs: 2
  batch_size: 16
  lr: 0.05
  seed: 0
detector:
  hidden: 64
  threshold: 0.5
  combine: union
  seed: 0
train:
  epochs: 15
  batch_size: 16
  lr: 0.01
  optimizer: adam
  seed: 0
trade:
  policy: TAE
  k: 1
  stop_loss_pct: 0.2
"""

# (calendar day index, UTC time) for each traded article: pre-market,
# regular, after-hours and a Friday late print rolling over the weekend
PUBLISH_SLOTS = [(0, (10, 5)), (1, (15, 30)), (2, (19, 45)), (3, (22, 10)), (4, (20, 55))]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="tests/fixtures/pipeline")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    train = synthetic.templated_corpus(160, 80, events=EVENTS, seed=11)
    with (out / "labeled.jsonl").open("w", encoding="utf-8") as fh:
        for la in train:
            fh.write(json.dumps(article_to_record(la), sort_keys=True) + "\n")
    with (out / "adapt.jsonl").open("w", encoding="utf-8") as fh:
        for la in train:
            fh.write(json.dumps(article_to_record(la.article), sort_keys=True) + "\n")

    rows = synthetic.weekday_calendar_rows(START, N_DAYS)
    pool = [la for la in synthetic.templated_corpus(40, 0, events=EVENTS, seed=12)]
    rng = random.Random(5)
    picked, seen = [], set()
    for la in pool:
        if la.article.ticker not in seen and len(picked) < len(PUBLISH_SLOTS):
            picked.append(la.article)
            seen.add(la.article.ticker)
    with (out / "articles.jsonl").open("w", encoding="utf-8") as fh:
        for art, (day_i, (hh, mm)) in zip(picked, PUBLISH_SLOTS):
            d = rows[day_i][0]
            ts = datetime(d.year, d.month, d.day, hh, mm, tzinfo=timezone.utc)
            rec = article_to_record(Article(art.id, art.title, art.text, ts))
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    with (out / "pairs.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["company_name", "ticker", "exchange"])
        for name, tk in synthetic.COMPANIES:
            w.writerow([name, tk, "NASDAQ"])

    write_calendar(out / "calendar.csv", TradingCalendar.from_rows(rows))
    bars = []
    for tk in sorted(seen) + [BENCHMARK]:
        extended = tk != BENCHMARK
        bars += synthetic.random_walk_bars(tk, rows, rng, start_price=rng.uniform(20, 200), step_minutes=5,
                                           vol=0.004, gap_prob=0.002, extended=extended)
    write_bars(out / "bars.csv", bars)
    (out / "config.yaml").write_text(CONFIG, encoding="utf-8")
    print(f"wrote fixture to {out} ({len(train)} training articles, {len(picked)} trading articles, {len(bars)} bars)")


if __name__ == "__main__":
    main()
