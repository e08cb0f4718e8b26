"""Bi-level event detector.

The low-level head scores every token against the K events plus O. The
high-level head reads the whole padded score matrix (row-major, raw
scores) concatenated with the article vector and emits K independent
event logits. Both heads and the encoder train jointly on the sum of
the token-averaged cross-entropy and the summed per-event binary
cross-entropy.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import archive
from .corpus import (
    NOEVENT,
    Article,
    EventType,
    LabeledArticle,
    LabelSequence,
    LabelSet,
    TokenSeq,
    label_runs,
    project_labels,
    tokenize_article,
)
from . import optim
from .encoder import ENCODE_NAMES, EncoderOutput, EncoderParams, merge_grads, pack_sparse, step_grads
from .errors import DataError, NumericError

log = logging.getLogger(__name__)

FORMAT = "eventtrade-detector"
FORMAT_VERSION = 1
HEAD_NAMES = ("low_w1", "low_b1", "low_w2", "low_b2", "high_w1", "high_b1", "high_w2", "high_b2")


class Combine(str, enum.Enum):
    UNION = "union"
    HIGH = "high-only"
    LOW = "low-only"
    INTERSECTION = "intersection"


@dataclass
class ScoreMatrix:
    scores: np.ndarray  # (max_len, K+1); rows >= actual_len are zero
    actual_len: int

    @property
    def real(self) -> np.ndarray:
        return self.scores[: self.actual_len]


@dataclass
class DetectionResult:
    low_labels: LabelSequence
    low_events: frozenset[EventType]
    high_probs: dict[EventType, float]
    high_events: frozenset[EventType]
    final_events: frozenset[EventType]


@dataclass
class DetectorModel:
    encoder: EncoderParams
    label_set: LabelSet
    hidden: int = 2048
    threshold: float = 0.5
    combine: Combine = Combine.UNION
    heads: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not 0 < self.threshold < 1:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        self.combine = Combine(self.combine)

    @property
    def max_len(self) -> int:
        return self.encoder.max_len

    @property
    def high_in(self) -> int:
        return self.max_len * (self.label_set.k + 1) + self.encoder.dim

    @classmethod
    def init(
        cls,
        encoder: EncoderParams,
        label_set: LabelSet = LabelSet(),
        hidden: int = 2048,
        threshold: float = 0.5,
        combine: Combine | str = Combine.UNION,
        seed: int = 0,
    ) -> "DetectorModel":
        rng = np.random.default_rng(seed)
        d, k1, h = encoder.dim, label_set.k + 1, hidden
        model = cls(encoder, label_set, hidden, threshold, Combine(combine))
        n_in = model.high_in
        model.heads = {
            "low_w1": rng.normal(0.0, math.sqrt(2.0 / d), (d, h)),
            "low_b1": np.zeros(h),
            "low_w2": rng.normal(0.0, math.sqrt(1.0 / h), (h, k1)),
            "low_b2": np.zeros(k1),
            # fan-in counts only rows a typical article fills, not the padding
            "high_w1": rng.normal(0.0, math.sqrt(2.0 / (d + 32 * k1)), (n_in, h)),
            "high_b1": np.zeros(h),
            "high_w2": rng.normal(0.0, math.sqrt(1.0 / h), (h, label_set.k)),
            "high_b2": np.zeros(label_set.k),
        }
        return model

    def copy(self) -> "DetectorModel":
        return DetectorModel(
            self.encoder.copy(), self.label_set, self.hidden, self.threshold, self.combine,
            {k: v.copy() for k, v in self.heads.items()},
        )

    def params(self) -> dict[str, np.ndarray]:
        """All trainable arrays, encoder ones prefixed ``enc.``."""
        out = {f"enc.{k}": v for k, v in self.encoder.arrays.items()}
        out.update(self.heads)
        return out

    def save(self, path) -> None:
        meta = {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "encoder": {"format": "eventtrade-encoder", "version": 1, "hyper": self.encoder.hyper()},
            "label_set": self.label_set.to_list(),
            "hidden": self.hidden,
            "threshold": self.threshold,
            "combine": self.combine.value,
        }
        archive.save(path, meta, self.params())

    @classmethod
    def load(cls, path) -> "DetectorModel":
        meta, arrays = archive.load(path)
        if meta.get("format") != FORMAT or meta.get("version") != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported detector format {meta.get('format')!r} v{meta.get('version')}")
        enc = EncoderParams.from_archive(
            meta["encoder"], {k[4:]: v for k, v in arrays.items() if k.startswith("enc.")}
        )
        heads = {k: arrays[k] for k in HEAD_NAMES}
        return cls(enc, LabelSet.from_list(meta["label_set"]), meta["hidden"], meta["threshold"],
                   Combine(meta["combine"]), heads)


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _check_encoding(model: DetectorModel, enc_out: EncoderOutput) -> int:
    n, d = enc_out.token_reprs.shape
    if d != model.encoder.dim or enc_out.article_repr.shape != (model.encoder.dim,):
        raise ValueError(f"encoder output dim {d} does not match model dim {model.encoder.dim}")
    if n > model.max_len:
        raise ValueError(f"{n} token states exceed max length {model.max_len}")
    return n


def low_scores(model: DetectorModel, enc_out: EncoderOutput) -> ScoreMatrix:
    n = _check_encoding(model, enc_out)
    h = model.heads
    hidden = _relu(enc_out.token_reprs @ h["low_w1"] + h["low_b1"])
    scores = np.zeros((model.max_len, model.label_set.k + 1))
    scores[:n] = hidden @ h["low_w2"] + h["low_b2"]
    return ScoreMatrix(scores, n)


def low_loss(sm: ScoreMatrix, gold: LabelSequence | Sequence[int]) -> float:
    """Mean (K+1)-way softmax cross-entropy over the real tokens."""
    idx = gold.indices() if isinstance(gold, LabelSequence) else list(gold)
    if len(idx) != sm.actual_len:
        raise ValueError(f"gold length {len(idx)} != score rows {sm.actual_len}")
    logp = _log_softmax(sm.real)
    return float(-logp[np.arange(sm.actual_len), idx].mean())


def high_input(enc_out: EncoderOutput, sm: ScoreMatrix) -> np.ndarray:
    return np.concatenate([sm.scores.ravel(), enc_out.article_repr])


def high_logits(model: DetectorModel, enc_out: EncoderOutput, sm: ScoreMatrix) -> np.ndarray:
    _check_encoding(model, enc_out)
    if sm.scores.shape != (model.max_len, model.label_set.k + 1):
        raise ValueError(f"score matrix shape {sm.scores.shape} does not match model")
    h = model.heads
    hidden = _relu(high_input(enc_out, sm) @ h["high_w1"] + h["high_b1"])
    return hidden @ h["high_w2"] + h["high_b2"]


def high_loss(logits: np.ndarray, gold_vec: Sequence[float]) -> float:
    """Summed sigmoid binary cross-entropy over the K events."""
    y = np.asarray(gold_vec, dtype=float)
    logits = np.asarray(logits, dtype=float)
    if y.shape != logits.shape:
        raise ValueError(f"gold vector shape {y.shape} != logits shape {logits.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("gold vector entries must be 0 or 1")
    return float((_softplus(logits) - y * logits).sum())


def gold_vector(events, label_set: LabelSet) -> np.ndarray:
    y = np.zeros(label_set.k)
    for e in events:
        y[label_set.index(e)] = 1.0
    return y


@dataclass
class _Example:
    toks: TokenSeq  # truncated to max_len
    gold_idx: np.ndarray
    gold_vec: np.ndarray
    feats: tuple | None = None


def prepare(model: DetectorModel, la: LabeledArticle) -> _Example:
    toks = tokenize_article(la.article)
    labels = project_labels(la, toks, model.label_set)
    toks = toks.truncate(model.max_len)
    idx = np.asarray(labels.indices()[: len(toks)], dtype=np.int64)
    return _Example(toks, idx, gold_vector(la.events, model.label_set), model.encoder.featurize(toks.surfaces))


def total_loss(model: DetectorModel, labeled: LabeledArticle) -> float:
    ex = prepare(model, labeled)
    enc_out = model.encoder.forward(ex.toks)[0]
    sm = low_scores(model, enc_out)
    return low_loss(sm, ex.gold_idx) + high_loss(high_logits(model, enc_out, sm), ex.gold_vec)


def zero_grads(model: DetectorModel) -> dict:
    g = {f"enc.{k}": v for k, v in model.encoder.zero_grads(ENCODE_NAMES).items()}
    g.update({k: np.zeros_like(v) for k, v in model.heads.items()})
    return g


def _enc_view(grads: dict) -> dict:
    return {k[4:]: v for k, v in grads.items() if k.startswith("enc.")}


def batch_loss_and_grad(
    model: DetectorModel,
    batch: Sequence[_Example],
    low_weight: float = 1.0,
    high_weight: float = 1.0,
) -> tuple[float, float, dict]:
    """Mean low and high losses over the batch and the gradient of their weighted sum.

    The high head runs once on the stacked batch; encoder and low head run
    per article.
    """
    h = model.heads
    k1 = model.label_set.k + 1
    n_b = len(batch)
    fwd = []
    x = np.zeros((n_b, model.high_in))
    low_total = 0.0
    for b, ex in enumerate(batch):
        enc_out, cache = model.encoder.forward(ex.toks, ex.feats)
        n = enc_out.token_reprs.shape[0]
        hid = _relu(enc_out.token_reprs @ h["low_w1"] + h["low_b1"])
        s = hid @ h["low_w2"] + h["low_b2"]
        logp = _log_softmax(s)
        low_total += -logp[np.arange(n), ex.gold_idx].mean()
        fwd.append((enc_out, cache, hid, logp))
        x[b, : n * k1] = s.ravel()
        x[b, model.max_len * k1 :] = enc_out.article_repr
    y = np.stack([ex.gold_vec for ex in batch])
    pre = x @ h["high_w1"] + h["high_b1"]
    hid_hi = _relu(pre)
    logits = hid_hi @ h["high_w2"] + h["high_b2"]
    high_total = float((_softplus(logits) - y * logits).sum())

    grads = zero_grads(model)
    d_logits = high_weight * (_sigmoid(logits) - y) / n_b
    grads["high_w2"] = hid_hi.T @ d_logits
    grads["high_b2"] = d_logits.sum(axis=0)
    d_pre = (d_logits @ h["high_w2"].T) * (pre > 0)
    grads["high_w1"] = x.T @ d_pre
    grads["high_b1"] = d_pre.sum(axis=0)
    d_x = d_pre @ h["high_w1"].T

    enc_acc = _enc_view(grads)
    for b, (ex, (enc_out, cache, hid, logp)) in enumerate(zip(batch, fwd)):
        n = hid.shape[0]
        d_s = np.exp(logp)
        d_s[np.arange(n), ex.gold_idx] -= 1.0
        d_s *= low_weight / (n * n_b)
        d_s += d_x[b, : n * k1].reshape(n, k1)
        grads["low_w2"] += hid.T @ d_s
        grads["low_b2"] += d_s.sum(axis=0)
        d_hid = (d_s @ h["low_w2"].T) * (hid > 0)
        grads["low_w1"] += enc_out.token_reprs.T @ d_hid
        grads["low_b1"] += d_hid.sum(axis=0)
        d_tok = d_hid @ h["low_w1"].T
        d_art = d_x[b, model.max_len * k1 :]
        merge_grads(enc_acc, model.encoder.backward(cache, d_tok, d_art))
    enc_acc["emb"] = pack_sparse(enc_acc["emb"])
    grads.update({f"enc.{k}": v for k, v in enc_acc.items()})
    return low_total / n_b, high_total / n_b, grads


def detection_from_scores(
    sm: ScoreMatrix,
    logits: np.ndarray,
    label_set: LabelSet,
    threshold: float = 0.5,
    combine: Combine | str = Combine.UNION,
) -> DetectionResult:
    """Argmax token labels (ties prefer O, then lower event index) and thresholded probabilities."""
    real = sm.real
    # O moved to the front so argmax's first-maximum rule prefers it
    reordered = np.concatenate([real[:, -1:], real[:, :-1]], axis=1)
    best = np.argmax(reordered, axis=1) if len(real) else np.zeros(0, dtype=int)
    labels = tuple(NOEVENT if j == 0 else label_set.events[j - 1].value for j in best)
    low_seq = LabelSequence(labels, label_set)
    low_events = low_seq.events
    probs = _sigmoid(np.asarray(logits, dtype=float))
    high_probs = {e: float(p) for e, p in zip(label_set.events, probs)}
    high_events = frozenset(e for e, p in high_probs.items() if p > threshold)
    combine = Combine(combine)
    if combine is Combine.UNION:
        final = low_events | high_events
    elif combine is Combine.HIGH:
        final = high_events
    elif combine is Combine.LOW:
        final = low_events
    else:
        final = low_events & high_events
    return DetectionResult(low_seq, low_events, high_probs, high_events, frozenset(final))


def decode(model: DetectorModel, article: Article | TokenSeq) -> DetectionResult:
    toks = article if isinstance(article, TokenSeq) else tokenize_article(article)
    if len(toks) == 0:
        raise ValueError("cannot decode an empty article")
    enc_out = model.encoder.forward(toks.truncate(model.max_len))[0]
    sm = low_scores(model, enc_out)
    return detection_from_scores(sm, high_logits(model, enc_out, sm), model.label_set, model.threshold, model.combine)


def detection_record(article_id: str, result: DetectionResult) -> dict:
    return {
        "id": article_id,
        "low_spans": [[a, b, ev] for a, b, ev in label_runs(result.low_labels.labels)],
        "high_probs": {e.value: round(p, 6) for e, p in result.high_probs.items()},
        "final_events": sorted(e.value for e in result.final_events),
    }


@dataclass
class Scores:
    precision: float
    recall: float
    f1: float
    per_event: dict[str, dict[str, float]]


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 1.0
    r = tp / (tp + fn) if tp + fn else 1.0
    f = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 1.0
    return p, r, f


def micro_scores(pred: Sequence[frozenset], gold: Sequence[frozenset], events: Sequence[EventType]) -> Scores:
    counts = {e: [0, 0, 0] for e in events}
    for p, g in zip(pred, gold, strict=True):
        for e in events:
            c = counts[e]
            c[0] += e in p and e in g
            c[1] += e in p and e not in g
            c[2] += e not in p and e in g
    tp, fp, fn = (sum(c[i] for c in counts.values()) for i in range(3))
    p, r, f = _prf(tp, fp, fn)
    per_event = {}
    for e, (a, b, c) in counts.items():
        pe, re_, fe = _prf(a, b, c)
        per_event[e.value] = {"precision": pe, "recall": re_, "f1": fe, "support": a + c}
    return Scores(p, r, f, per_event)


def evaluate(model: DetectorModel, data: Sequence[LabeledArticle]) -> Scores:
    pred = [decode(model, la.article).final_events for la in data]
    return micro_scores(pred, [la.events for la in data], model.label_set.events)


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 32
    lr: float = 2e-3
    lr_decay: bool = True
    optimizer: str = "adam"
    weight_decay: float = 0.0
    clip_norm: float | None = 5.0
    seed: int = 0


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    low_loss: float
    high_loss: float
    val_f1: float | None


def train(
    model: DetectorModel,
    train_set: Sequence[LabeledArticle],
    val_set: Sequence[LabeledArticle] = (),
    config: TrainConfig = TrainConfig(),
    on_epoch: Callable[[EpochLog], None] | None = None,
) -> DetectorModel:
    """Joint mini-batch training of encoder and both heads; returns the best-validation checkpoint.

    Without a validation set the last epoch wins.
    """
    if not train_set:
        raise DataError("training set is empty")
    examples = [prepare(model, la) for la in train_set]
    model = model.copy()
    opt = optim.make(config.optimizer, config.weight_decay)
    rng = np.random.default_rng(config.seed)
    n_batches = math.ceil(len(examples) / config.batch_size)
    total_steps = max(1, config.epochs * n_batches)
    best, best_f1 = model.copy(), -1.0
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(examples))
        lows, highs = [], []
        for b in range(n_batches):
            batch = [examples[i] for i in order[b * config.batch_size : (b + 1) * config.batch_size]]
            lo, hi, grads = batch_loss_and_grad(model, batch)
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
            lows.append(lo * len(batch))
            highs.append(hi * len(batch))
            lr = config.lr * (1.0 - step / total_steps) if config.lr_decay else config.lr
            step_grads(opt, model.params(), grads, lr, config.clip_norm)
            step += 1
        low_mean = sum(lows) / len(examples)
        high_mean = sum(highs) / len(examples)
        val_f1 = evaluate(model, val_set).f1 if val_set else None
        entry = EpochLog(epoch, low_mean + high_mean, low_mean, high_mean, val_f1)
        log.info("epoch %d: loss %.4f (low %.4f, high %.4f) val micro-F1 %s",
                 epoch, entry.train_loss, low_mean, high_mean,
                 "n/a" if val_f1 is None else f"{val_f1:.4f}")
        if on_epoch is not None:
            on_epoch(entry)
        score = val_f1 if val_f1 is not None else float(epoch)
        if score > best_f1:
            best, best_f1 = model.copy(), score
    return best
