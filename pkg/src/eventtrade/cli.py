"""Command-line pipelines: adapt, train, detect, backtest, label-prices.

Settings come from an optional YAML file whose top-level sections mirror
:class:`RunConfig`; command-line flags override the file. Every command
writes fixed file names under ``--out``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import backtest as bt
from . import corpus, detector, encoder, market, ticker
from .detector import TrainConfig
from .encoder import PretrainConfig
from .errors import ConfigError, DataError, NumericError

log = logging.getLogger("eventtrade")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

ENCODER_FILE = "encoder.bin"
MODEL_FILE = "model.bin"
METRICS_FILE = "metrics.json"
DETECTIONS_FILE = "detections.jsonl"
PRICE_LABELS_FILE = "price_labels.jsonl"


@dataclass
class PathsConfig:
    articles: str | None = None
    pairs: str | None = None
    bars: str | None = None
    calendar: str | None = None
    encoder: str | None = None
    model: str | None = None
    detections: str | None = None
    out: str = "out"


@dataclass
class EncoderConfig:
    dim: int = 128
    window: int = 2
    vocab: int = 32768
    max_len: int = 256
    seed: int = 0


@dataclass
class DetectorConfig:
    hidden: int = 2048
    threshold: float = 0.5
    combine: str = "union"
    split_ratio: float = 0.8
    seed: int = 0


@dataclass
class TickerConfig:
    boost: float = 5.0
    prefix_window: int = 6


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ticker: TickerConfig = field(default_factory=TickerConfig)
    trade: bt.BacktestConfig = field(default_factory=bt.BacktestConfig)
    emit_all: bool = False

    def validate(self) -> "RunConfig":
        e, d = self.encoder, self.detector
        if min(e.dim, e.vocab, e.max_len) < 1 or e.window < 0:
            raise ConfigError("encoder dim, vocab and max_len must be positive; window non-negative")
        if d.hidden < 1:
            raise ConfigError("detector.hidden must be positive")
        if not 0 < d.threshold < 1:
            raise ConfigError(f"detector.threshold must be in (0, 1), got {d.threshold}")
        try:
            detector.Combine(d.combine)
        except ValueError:
            raise ConfigError(f"detector.combine must be one of {[c.value for c in detector.Combine]}") from None
        if not 0 < d.split_ratio < 1:
            raise ConfigError(f"detector.split_ratio must be in (0, 1), got {d.split_ratio}")
        for name, sec in (("pretrain", self.pretrain), ("train", self.train)):
            if sec.epochs < 1 or sec.batch_size < 1:
                raise ConfigError(f"{name}.epochs and {name}.batch_size must be >= 1")
            if sec.lr < 0:
                raise ConfigError(f"{name}.lr must be non-negative")
            if sec.optimizer not in ("sgd", "adam"):
                raise ConfigError(f"{name}.optimizer must be 'sgd' or 'adam'")
        if not 0 < self.pretrain.mask_rate < 1:
            raise ConfigError("pretrain.mask_rate must be in (0, 1)")
        if self.ticker.boost < 0 or self.ticker.prefix_window < 0:
            raise ConfigError("ticker.boost and ticker.prefix_window must be non-negative")
        self.trade.validate()
        return self


def _coerce(section, key: str, value):
    """Convert a YAML or command-line value to the type of the field's default."""
    current = getattr(section, key)
    if key in ("span_start", "span_end") and isinstance(value, str):
        return corpus.parse_timestamp(value)
    if value is None or current is None or isinstance(value, type(current)):
        return value
    if isinstance(current, bool):
        if isinstance(value, str):
            return value.strip().lower() in ("1", "true", "yes", "on")
        return bool(value)
    return type(current)(value)


def apply_overrides(cfg: RunConfig, values: dict, origin: str) -> None:
    for sec_name, body in values.items():
        if not hasattr(cfg, sec_name):
            raise ConfigError(f"{origin}: unknown section {sec_name!r}")
        if not isinstance(body, dict):
            if dataclasses.is_dataclass(getattr(cfg, sec_name)):
                raise ConfigError(f"{origin}: section {sec_name!r} must be a mapping")
            setattr(cfg, sec_name, body)
            continue
        section = getattr(cfg, sec_name)
        names = {f.name for f in dataclasses.fields(section)}
        for key, value in body.items():
            if key not in names:
                raise ConfigError(f"{origin}: unknown key {sec_name}.{key}")
            try:
                setattr(section, key, _coerce(section, key, value))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{origin}: bad value for {sec_name}.{key}: {exc}") from None
    # enum-typed trade fields are normalized on construction
    try:
        cfg.trade.policy = bt.Policy(cfg.trade.policy)
        cfg.trade.entry_mode = bt.EntryMode(cfg.trade.entry_mode)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        values = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: invalid YAML: {exc}") from None
    if not isinstance(values, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    apply_overrides(cfg, values, str(p))
    return cfg


# flag -> (section, key); ``None`` section means a top-level RunConfig field
FLAG_TARGETS = {
    "articles": ("paths", "articles"),
    "pairs": ("paths", "pairs"),
    "bars": ("paths", "bars"),
    "calendar": ("paths", "calendar"),
    "encoder": ("paths", "encoder"),
    "model": ("paths", "model"),
    "detections": ("paths", "detections"),
    "out": ("paths", "out"),
    "epochs": (None, "epochs"),
    "seed": (None, "seed"),
    "threshold": ("detector", "threshold"),
    "combine": ("detector", "combine"),
    "max_len": ("encoder", "max_len"),
    "policy": ("trade", "policy"),
    "k": ("trade", "k"),
    "stop_loss": ("trade", "stop_loss_pct"),
    "entry_mode": ("trade", "entry_mode"),
    "commission": ("trade", "commission"),
    "initial_cash": ("trade", "initial_cash"),
    "stake": ("trade", "stake"),
    "low_cash_fraction": ("trade", "low_cash_fraction"),
    "benchmark": ("trade", "benchmark"),
}


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    flags: dict[str, dict] = {}
    for flag, (sec, key) in FLAG_TARGETS.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if sec is None:
            # epochs and seed apply to whichever stage the command runs
            stage = "pretrain" if args.command == "adapt" else "train"
            flags.setdefault(stage, {})[key] = value
            if key == "seed":
                flags.setdefault("encoder", {})["seed"] = value
                flags.setdefault("detector", {})["seed"] = value
        else:
            flags.setdefault(sec, {})[key] = value
    for item in args.set or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        sec, key = lhs.split(".", 1)
        flags.setdefault(sec, {})[key] = yaml.safe_load(value)
    apply_overrides(cfg, flags, "command line")
    if getattr(args, "emit_all", False):
        cfg.emit_all = True
    return cfg.validate()


def _require(path: str | None, what: str) -> Path:
    if not path:
        raise ConfigError(f"no {what} path given")
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} not found: {p}")
    return p


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_jsonl(path: Path, records) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def cmd_adapt(cfg: RunConfig) -> int:
    src = _require(cfg.paths.articles, "articles file")
    docs = corpus.load_articles(src, allow_missing_timestamp=True)
    e = cfg.encoder
    if cfg.paths.encoder:
        params = encoder.EncoderParams.load(_require(cfg.paths.encoder, "encoder file"))
    else:
        params = encoder.EncoderParams.init(e.dim, e.window, e.vocab, e.max_len, seed=e.seed)
    params = encoder.pretrain(params, docs, cfg.pretrain,
                              on_epoch=lambda ep, loss: print(f"epoch {ep}: mlm loss {loss:.4f}"))
    dest = _out_dir(cfg) / ENCODER_FILE
    params.save(dest)
    print(f"wrote {dest}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    data = corpus.load_labeled(_require(cfg.paths.articles, "labeled articles file"), allow_missing_timestamp=True)
    if not data:
        raise DataError(f"no labeled articles in {cfg.paths.articles}")
    d, e = cfg.detector, cfg.encoder
    train_set, val_set = corpus.split_train_val(data, d.split_ratio, d.seed)
    if cfg.paths.encoder:
        enc = encoder.EncoderParams.load(_require(cfg.paths.encoder, "encoder file"))
    else:
        enc = encoder.EncoderParams.init(e.dim, e.window, e.vocab, e.max_len, seed=e.seed)
    model = detector.DetectorModel.init(enc, hidden=d.hidden, threshold=d.threshold, combine=d.combine, seed=d.seed)
    epochs = []

    def report(entry: detector.EpochLog) -> None:
        epochs.append(dataclasses.asdict(entry))
        f1 = "n/a" if entry.val_f1 is None else f"{entry.val_f1:.4f}"
        print(f"epoch {entry.epoch}: loss {entry.train_loss:.4f} "
              f"(low {entry.low_loss:.4f}, high {entry.high_loss:.4f}) val micro-F1 {f1}")

    model = detector.train(model, train_set, val_set, cfg.train, on_epoch=report)
    out = _out_dir(cfg)
    model.save(out / MODEL_FILE)
    metrics = {"epochs": epochs, "split": corpus.split_report(data, train_set),
               "n_train": len(train_set), "n_val": len(val_set)}
    if val_set:
        sc = detector.evaluate(model, val_set)
        metrics["val"] = {"precision": sc.precision, "recall": sc.recall, "f1": sc.f1, "per_event": sc.per_event}
        print(f"best checkpoint val micro-F1 {sc.f1:.4f}")
    _write_json(out / METRICS_FILE, metrics)
    print(f"wrote {out / MODEL_FILE} and {out / METRICS_FILE}")
    return EXIT_OK


def cmd_detect(cfg: RunConfig) -> int:
    model = detector.DetectorModel.load(_require(cfg.paths.model, "model file"))
    model.threshold = cfg.detector.threshold
    model.combine = detector.Combine(cfg.detector.combine)
    index = ticker.TickerIndex(ticker.load_pairs(_require(cfg.paths.pairs, "pairs file")))
    articles = corpus.load_articles(_require(cfg.paths.articles, "articles file"))
    records = []
    for art in articles:
        result = detector.decode(model, art)
        if not result.final_events and not cfg.emit_all:
            continue
        rec = detector.detection_record(art.id, result)
        match = ticker.recognize(art, index, cfg.ticker.boost, cfg.ticker.prefix_window)
        rec["ticker"] = match.ticker if match else None
        rec["published_at"] = corpus.format_timestamp(art.published_at)
        records.append(rec)
    dest = _out_dir(cfg) / DETECTIONS_FILE
    _write_jsonl(dest, records)
    print(f"wrote {len(records)} detection record(s) for {len(articles)} article(s) to {dest}")
    return EXIT_OK


def _read_jsonl(path: Path) -> list[dict]:
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{lineno}: {exc}") from None
    return out


def cmd_backtest(cfg: RunConfig) -> int:
    records = _read_jsonl(_require(cfg.paths.detections, "detections file"))
    store = market.load_bars(_require(cfg.paths.bars, "bars file"))
    cal = market.load_calendar(_require(cfg.paths.calendar, "calendar file"))
    try:
        signals = bt.signals_from_detections(records)
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed detection record: {exc}") from None
    report = bt.run_backtest(signals, store, cal, cfg.trade)
    out = _out_dir(cfg)
    bt.write_report(report, out, cfg.trade)
    label = f"{cfg.trade.policy.value}({cfg.trade.k})"
    print(bt.format_headline(report, label))
    return EXIT_OK


def cmd_label_prices(cfg: RunConfig) -> int:
    articles = corpus.load_articles(_require(cfg.paths.articles, "articles file"))
    store = market.load_bars(_require(cfg.paths.bars, "bars file"))
    cal = market.load_calendar(_require(cfg.paths.calendar, "calendar file"))
    index = ticker.TickerIndex(ticker.load_pairs(cfg.paths.pairs)) if cfg.paths.pairs else None
    records = []
    for art in articles:
        tk = art.ticker
        if tk is None and index is not None:
            match = ticker.recognize(art, index, cfg.ticker.boost, cfg.ticker.prefix_window)
            tk = match.ticker if match else None
        labels = market.compute_price_labels(tk, art.published_at, store, cal) if tk in store else None
        rec = {"id": art.id, "ticker": tk, "published_at": corpus.format_timestamp(art.published_at)}
        rec["labels"] = labels.to_record() if labels else None
        records.append(rec)
    dest = _out_dir(cfg) / PRICE_LABELS_FILE
    _write_jsonl(dest, records)
    n = sum(r["labels"] is not None for r in records)
    print(f"wrote price labels for {n} of {len(records)} article(s) to {dest}")
    return EXIT_OK


COMMANDS = {
    "adapt": cmd_adapt,
    "train": cmd_train,
    "detect": cmd_detect,
    "backtest": cmd_backtest,
    "label-prices": cmd_label_prices,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eventtrade", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file with RunConfig sections")
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override any config field (repeatable)")
    common.add_argument("--seed", type=int)

    p = sub.add_parser("adapt", parents=[common], help="masked-token pretraining of the encoder")
    p.add_argument("--articles", help="article JSONL used as the adaptation corpus")
    p.add_argument("--encoder", help="start from an existing encoder file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)

    p = sub.add_parser("train", parents=[common], help="train the event detector")
    p.add_argument("--articles", help="labeled article JSONL")
    p.add_argument("--encoder", help="adapted encoder file (random init when omitted)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--combine", choices=[c.value for c in detector.Combine])

    p = sub.add_parser("detect", parents=[common], help="detect events and tickers in articles")
    p.add_argument("--articles")
    p.add_argument("--model")
    p.add_argument("--pairs")
    p.add_argument("--threshold", type=float)
    p.add_argument("--combine", choices=[c.value for c in detector.Combine])
    p.add_argument("--emit-all", dest="emit_all", action="store_true",
                   help="also write records for articles without events")

    p = sub.add_parser("backtest", parents=[common], help="trade detected signals against minute bars")
    p.add_argument("--detections")
    p.add_argument("--bars")
    p.add_argument("--calendar")
    p.add_argument("--policy", choices=[x.value for x in bt.Policy])
    p.add_argument("--k", type=int)
    p.add_argument("--stop-loss", dest="stop_loss", type=float)
    p.add_argument("--entry-mode", dest="entry_mode", choices=[x.value for x in bt.EntryMode])
    p.add_argument("--commission", type=float)
    p.add_argument("--initial-cash", dest="initial_cash", type=float)
    p.add_argument("--stake", type=float)
    p.add_argument("--low-cash-fraction", dest="low_cash_fraction", type=float)
    p.add_argument("--benchmark")

    p = sub.add_parser("label-prices", parents=[common], help="write per-article price labels")
    p.add_argument("--articles")
    p.add_argument("--pairs", help="used for articles without a ticker field")
    p.add_argument("--bars")
    p.add_argument("--calendar")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
