"""Framework-free text encoder and masked-token pretraining.

Each token is embedded as the mean of its hashed character 3..5-gram
vectors. Neighbouring token embeddings within a window are mixed with
per-offset weights, projected and squashed through tanh to give the
token states; the article state is a tanh transform of their mean.

Any object offering ``forward(toks) -> (EncoderOutput, cache)`` and
``backward(cache, d_tokens, d_article) -> grads`` (see :class:`TextEncoder`)
can stand in for :class:`EncoderParams` inside the detector.
"""

from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Protocol, Sequence

import numpy as np

from . import archive, optim
from .corpus import Article, Token, TokenSeq, tokenize_article
from .errors import DataError, NumericError

log = logging.getLogger(__name__)

MASK = "[MASK]"
FORMAT = "eventtrade-encoder"
FORMAT_VERSION = 1

ENCODE_NAMES = ("mix", "proj", "proj_b", "art", "art_b")
DENSE_NAMES = ENCODE_NAMES + ("mlm_w", "mlm_b")
PARAM_NAMES = ("emb",) + DENSE_NAMES


@dataclass
class EncoderOutput:
    article_repr: np.ndarray  # (d,)
    token_reprs: np.ndarray  # (n, d), n <= max_len


@dataclass
class MaskingPlan:
    positions: tuple[int, ...]
    originals: tuple[str, ...]
    rate: float


class TextEncoder(Protocol):
    dim: int
    max_len: int

    def forward(self, toks: TokenSeq) -> tuple[EncoderOutput, object]: ...

    def backward(self, cache: object, d_tokens: np.ndarray, d_article: np.ndarray | None) -> dict: ...


@lru_cache(maxsize=1 << 18)
def _ngram_ids(surface: str, vocab: int, lo: int, hi: int) -> tuple[int, ...]:
    if surface == MASK:
        return (zlib.crc32(b"\x00mask") % vocab,)
    marked = "<" + surface + ">"
    grams = [marked[i : i + n] for n in range(lo, hi + 1) for i in range(len(marked) - n + 1)]
    if not grams:
        grams = [marked]
    return tuple(zlib.crc32(g.encode("utf-8")) % vocab for g in grams)


def token_id(surface: str, vocab: int) -> int:
    """Hashed identity of a whole token (the MLM target class)."""
    return zlib.crc32(b"\x00tok:" + surface.encode("utf-8")) % vocab


@dataclass
class _Cache:
    ids: np.ndarray
    owner: np.ndarray
    weights: np.ndarray
    padded: np.ndarray  # (n + 2w, d) token embeddings with zero margins
    counts: np.ndarray  # (n,) neighbours inside the window
    mixed: np.ndarray
    states: np.ndarray
    mean_state: np.ndarray
    article: np.ndarray


@dataclass
class EncoderParams:
    dim: int = 128
    window: int = 2
    vocab: int = 32768
    max_len: int = 256
    ngram_min: int = 3
    ngram_max: int = 5
    arrays: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    @classmethod
    def init(
        cls,
        dim: int = 128,
        window: int = 2,
        vocab: int = 32768,
        max_len: int = 256,
        seed: int = 0,
        emb_scale: float = 4.0,
    ) -> "EncoderParams":
        if min(dim, vocab, max_len) < 1 or window < 0:
            raise ValueError("encoder sizes must be positive")
        rng = np.random.default_rng(seed)
        d = dim
        mix = np.ones((2 * window + 1, d))
        mix[window] = 2 * window + 1  # the token itself outweighs its neighbours
        arrays = {
            "emb": rng.normal(0.0, emb_scale, (vocab, d)),
            "mix": mix,
            "proj": rng.normal(0.0, math.sqrt(1.0 / d), (d, d)),
            "proj_b": np.zeros(d),
            "art": rng.normal(0.0, math.sqrt(1.0 / d), (d, d)),
            "art_b": np.zeros(d),
            "mlm_w": rng.normal(0.0, math.sqrt(1.0 / d), (d, vocab)),
            "mlm_b": np.zeros(vocab),
        }
        return cls(dim, window, vocab, max_len, arrays=arrays)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            self.dim, self.window, self.vocab, self.max_len, self.ngram_min, self.ngram_max,
            {k: v.copy() for k, v in self.arrays.items()},
        )

    def hyper(self) -> dict:
        return {
            "dim": self.dim,
            "window": self.window,
            "vocab": self.vocab,
            "max_len": self.max_len,
            "ngram_min": self.ngram_min,
            "ngram_max": self.ngram_max,
        }

    def featurize(self, surfaces: Sequence[str]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flat n-gram ids, owning token index and averaging weight per id."""
        ids: list[int] = []
        owner: list[int] = []
        weights: list[float] = []
        for i, s in enumerate(surfaces):
            g = _ngram_ids(s, self.vocab, self.ngram_min, self.ngram_max)
            ids.extend(g)
            owner.extend([i] * len(g))
            weights.extend([1.0 / len(g)] * len(g))
        return np.asarray(ids, dtype=np.int64), np.asarray(owner, dtype=np.int64), np.asarray(weights)

    def forward(self, toks: TokenSeq, feats: tuple | None = None) -> tuple[EncoderOutput, _Cache]:
        """Encode the first ``max_len`` tokens; ``feats`` may carry a cached :meth:`featurize` result."""
        if len(toks) == 0:
            raise ValueError("cannot encode an empty token sequence")
        surfaces = toks.surfaces[: self.max_len]
        n, w, a = len(surfaces), self.window, self.arrays
        ids, owner, weights = feats if feats is not None else self.featurize(surfaces)
        starts = np.flatnonzero(np.r_[True, owner[1:] != owner[:-1]])
        emb = np.add.reduceat(a["emb"][ids] * weights[:, None], starts, axis=0)
        padded = np.zeros((n + 2 * w, self.dim))
        padded[w : w + n] = emb
        idx = np.arange(n)
        counts = (np.minimum(idx + w, n - 1) - np.maximum(idx - w, 0) + 1).astype(float)
        mixed = np.zeros((n, self.dim))
        for o in range(2 * w + 1):
            mixed += a["mix"][o] * padded[o : o + n]
        mixed /= counts[:, None]
        states = np.tanh(mixed @ a["proj"] + a["proj_b"])
        mean_state = states.mean(axis=0)
        article = np.tanh(mean_state @ a["art"] + a["art_b"])
        cache = _Cache(ids, owner, weights, padded, counts, mixed, states, mean_state, article)
        return EncoderOutput(article, states), cache

    def backward(self, cache: _Cache, d_tokens: np.ndarray, d_article: np.ndarray | None) -> dict:
        """Gradients of a scalar loss given its gradients w.r.t. the outputs.

        ``emb`` is returned sparse as ``(row_ids, rows)`` with possible repeats.
        """
        a, w = self.arrays, self.window
        n = cache.states.shape[0]
        grads: dict = {}
        d_states = np.array(d_tokens, dtype=float, copy=True)
        if d_article is not None:
            d_za = d_article * (1.0 - cache.article**2)
            grads["art"] = np.outer(cache.mean_state, d_za)
            grads["art_b"] = d_za
            d_states += (a["art"] @ d_za) / n
        else:
            grads["art"] = np.zeros_like(a["art"])
            grads["art_b"] = np.zeros_like(a["art_b"])
        d_z = d_states * (1.0 - cache.states**2)
        grads["proj"] = cache.mixed.T @ d_z
        grads["proj_b"] = d_z.sum(axis=0)
        d_mixed = (d_z @ a["proj"].T) / cache.counts[:, None]
        d_padded = np.zeros_like(cache.padded)
        d_mix = np.empty_like(a["mix"])
        for o in range(2 * w + 1):
            d_mix[o] = (d_mixed * cache.padded[o : o + n]).sum(axis=0)
            d_padded[o : o + n] += a["mix"][o] * d_mixed
        grads["mix"] = d_mix
        d_emb_tok = d_padded[w : w + n]
        grads["emb"] = (cache.ids, d_emb_tok[cache.owner] * cache.weights[:, None])
        return grads

    def zero_grads(self, names: Sequence[str] = DENSE_NAMES) -> dict:
        """Accumulator for :func:`merge_grads`; finish with ``pack_sparse(g["emb"])``."""
        g = {k: np.zeros_like(self.arrays[k]) for k in names}
        g["emb"] = []
        return g

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.arrays.values())

    def save(self, path) -> None:
        meta = {"format": FORMAT, "version": FORMAT_VERSION, "hyper": self.hyper()}
        archive.save(path, meta, self.arrays)

    @classmethod
    def load(cls, path) -> "EncoderParams":
        meta, arrays = archive.load(path)
        return cls.from_archive(meta, arrays)

    @classmethod
    def from_archive(cls, meta: dict, arrays: dict) -> "EncoderParams":
        if meta.get("format") != FORMAT or meta.get("version") != FORMAT_VERSION:
            raise DataError(f"unsupported encoder format {meta.get('format')!r} v{meta.get('version')}")
        missing = set(PARAM_NAMES) - set(arrays)
        if missing:
            raise DataError(f"encoder file lacks arrays {sorted(missing)}")
        return cls(**meta["hyper"], arrays={k: arrays[k] for k in PARAM_NAMES})


def merge_grads(total: dict, g: dict, scale: float = 1.0) -> None:
    """Accumulate ``scale * g`` into ``total``.

    Dense arrays add in place; sparse ``emb`` parts are appended to the list
    ``total["emb"]`` and joined later by :func:`pack_sparse`.
    """
    for k, v in g.items():
        if k == "emb":
            total["emb"].append((v[0], scale * v[1] if scale != 1.0 else v[1]))
        else:
            total[k] += scale * v


def pack_sparse(parts: list[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    if not parts:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 0))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def step_grads(opt, params: dict, grads: dict, lr: float, clip_norm: float | None) -> None:
    """One optimizer step with optional global-norm clipping."""
    if lr == 0:
        return
    grads = optim.coalesce(grads)
    if clip_norm is not None:
        norm = optim.global_norm(grads)
        if norm > clip_norm:
            grads = {k: (v[0], v[1] * (clip_norm / norm)) if isinstance(v, tuple) else v * (clip_norm / norm)
                     for k, v in grads.items()}
    opt.step(params, grads, lr)


def encode(params: EncoderParams, toks: TokenSeq) -> EncoderOutput:
    return params.forward(toks)[0]


def mask_tokens(toks: TokenSeq, rate: float, rng: np.random.Generator) -> tuple[TokenSeq, MaskingPlan]:
    """Replace ``round(rate * n)`` (at least one) random tokens with :data:`MASK`."""
    if not 0 < rate <= 1:
        raise ValueError(f"mask rate must lie in (0, 1], got {rate}")
    n = len(toks)
    if n == 0:
        return toks, MaskingPlan((), (), rate)
    m = min(n, max(1, int(math.floor(rate * n + 0.5))))
    positions = tuple(sorted(int(p) for p in rng.choice(n, size=m, replace=False)))
    chosen = set(positions)
    masked = tuple(Token(MASK, t.start, t.end) if i in chosen else t for i, t in enumerate(toks.tokens))
    plan = MaskingPlan(positions, tuple(toks[p].surface for p in positions), rate)
    return TokenSeq(masked), plan


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _check_plan(params: EncoderParams, masked: TokenSeq, plan: MaskingPlan) -> int:
    if not plan.positions:
        raise ValueError("masking plan selects no positions")
    n = min(len(masked), params.max_len)
    if max(plan.positions) >= n:
        raise ValueError(f"masked position {max(plan.positions)} beyond truncated length {n}")
    return n


def mlm_logits(params: EncoderParams, states: np.ndarray, positions: Sequence[int]) -> np.ndarray:
    return states[list(positions)] @ params["mlm_w"] + params["mlm_b"]


def mlm_loss(params: EncoderParams, masked: TokenSeq, plan: MaskingPlan) -> float:
    """Mean cross-entropy of recovering each masked token's hashed identity."""
    _check_plan(params, masked, plan)
    out = encode(params, masked)
    logp = _log_softmax(mlm_logits(params, out.token_reprs, plan.positions))
    targets = [token_id(s, params.vocab) for s in plan.originals]
    return float(-logp[np.arange(len(targets)), targets].mean())


def mlm_loss_and_grad(params: EncoderParams, masked: TokenSeq, plan: MaskingPlan) -> tuple[float, dict]:
    _check_plan(params, masked, plan)
    out, cache = params.forward(masked)
    pos = list(plan.positions)
    targets = np.array([token_id(s, params.vocab) for s in plan.originals])
    m = len(pos)
    logp = _log_softmax(mlm_logits(params, out.token_reprs, pos))
    loss = float(-logp[np.arange(m), targets].mean())
    d_logits = np.exp(logp)
    d_logits[np.arange(m), targets] -= 1.0
    d_logits /= m
    hm = out.token_reprs[pos]
    d_states = np.zeros_like(out.token_reprs)
    d_states[pos] = d_logits @ params["mlm_w"].T
    grads = params.backward(cache, d_states, None)
    grads["mlm_w"] = hm.T @ d_logits
    grads["mlm_b"] = d_logits.sum(axis=0)
    return loss, grads


@dataclass
class PretrainConfig:
    epochs: int = 5
    batch_size: int = 32
    lr: float = 0.05
    mask_rate: float = 0.15
    optimizer: str = "sgd"
    clip_norm: float | None = None
    seed: int = 0


def pretrain(
    params: EncoderParams,
    corpus: Sequence[Article | TokenSeq],
    config: PretrainConfig = PretrainConfig(),
    on_epoch: Callable[[int, float], None] | None = None,
) -> EncoderParams:
    """Masked-token training; returns a new parameter set.

    Mini-batch gradient descent with the learning rate decayed linearly to zero.
    """
    if not corpus:
        raise DataError("pretraining corpus is empty")
    seqs = [doc if isinstance(doc, TokenSeq) else tokenize_article(doc) for doc in corpus]
    seqs = [s.truncate(params.max_len) for s in seqs if len(s)]
    params = params.copy()
    opt = optim.make(config.optimizer)
    rng = np.random.default_rng(config.seed)
    n_batches = math.ceil(len(seqs) / config.batch_size)
    total_steps = max(1, config.epochs * n_batches)
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(seqs))
        losses = []
        for b in range(n_batches):
            batch = order[b * config.batch_size : (b + 1) * config.batch_size]
            acc = params.zero_grads()
            for i in batch:
                masked, plan = mask_tokens(seqs[i], config.mask_rate, rng)
                loss, g = mlm_loss_and_grad(params, masked, plan)
                if not math.isfinite(loss):
                    raise NumericError(f"non-finite MLM loss at epoch {epoch}, batch {b}")
                losses.append(loss)
                merge_grads(acc, g, 1.0 / len(batch))
            acc["emb"] = pack_sparse(acc["emb"])
            step_grads(opt, params.arrays, acc, config.lr * (1.0 - step / total_steps), config.clip_norm)
            step += 1
        mean_loss = float(np.mean(losses))
        if not params.is_finite():
            raise NumericError(f"encoder parameters diverged at epoch {epoch}")
        log.info("pretrain epoch %d: mean MLM loss %.4f", epoch, mean_loss)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)
    return params
