"""Train the detector on a templated corpus and print validation F1 per epoch.

    python scripts/learning_curve.py --events 120 --distractors 60 --epochs 20
"""

import argparse
import logging

from eventtrade import detector, synthetic
from eventtrade.corpus import EventType, LabelSet, split_train_val
from eventtrade.encoder import EncoderParams


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--events", type=int, default=120, help="articles carrying an event")
    ap.add_argument("--distractors", type=int, default=60, help="near-miss articles without events")
    ap.add_argument("--types", default="SR,A,NC,DI", help="comma-separated event types")
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--hidden", type=int, default=128)
    ap.add_argument("--window", type=int, default=3)
    ap.add_argument("--batch-size", type=int, default=4)
    ap.add_argument("--lr", type=float, default=5e-3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    events = tuple(EventType(t) for t in args.types.split(","))
    data = synthetic.templated_corpus(args.events, args.distractors, events=events, seed=args.seed)
    train_set, val_set = split_train_val(data, 0.8, seed=args.seed)
    enc = EncoderParams.init(dim=args.dim, window=args.window, vocab=4096, max_len=96, seed=args.seed)
    model = detector.DetectorModel.init(enc, LabelSet(events), hidden=args.hidden, seed=args.seed)
    print(f"{len(train_set)} train / {len(val_set)} val articles, events {args.types}")
    print(f"{'epoch':>5} {'low':>8} {'high':>8} {'val F1':>7}")
    cfg = detector.TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed)
    best = detector.train(
        model, train_set, val_set, cfg,
        on_epoch=lambda e: print(f"{e.epoch:>5} {e.low_loss:>8.4f} {e.high_loss:>8.4f} {e.val_f1:>7.3f}"),
    )
    scores = detector.evaluate(best, val_set)
    print(f"best checkpoint: precision {scores.precision:.3f} recall {scores.recall:.3f} F1 {scores.f1:.3f}")
    for name, row in scores.per_event.items():
        print(f"  {name:<4} F1 {row['f1']:.3f} (support {row['support']})")


if __name__ == "__main__":
    main()
