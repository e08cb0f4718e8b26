"""First-order optimizers over named parameter arrays.

Gradients come as a dict keyed like the parameters. A value that is a
``(row_ids, rows)`` tuple is a sparse row gradient (repeats allowed) for
an embedding table; only those rows are touched.
"""

from __future__ import annotations

import math

import numpy as np


def sparse_sum(ids: np.ndarray, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Merge repeated row ids by summing their rows."""
    if len(ids) == 0:
        return ids, rows
    order = np.argsort(ids, kind="stable")
    ids, rows = ids[order], rows[order]
    starts = np.flatnonzero(np.r_[True, ids[1:] != ids[:-1]])
    return ids[starts], np.add.reduceat(rows, starts, axis=0)


def coalesce(grads: dict) -> dict:
    return {k: sparse_sum(*v) if isinstance(v, tuple) else v for k, v in grads.items()}


def global_norm(grads: dict) -> float:
    """L2 norm over all gradients; sparse ones must be coalesced first."""
    sq = 0.0
    for v in grads.values():
        rows = v[1] if isinstance(v, tuple) else v
        sq += float(np.vdot(rows, rows))
    return math.sqrt(sq)


class SGD:
    def step(self, params: dict[str, np.ndarray], grads: dict, lr: float) -> None:
        for k, g in grads.items():
            if isinstance(g, tuple):
                ids, rows = g
                params[k][ids] -= lr * rows
            else:
                params[k] -= lr * g


class Adam:
    """Adam with bias correction; sparse tables get lazy per-row moments."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        scale = lr * math.sqrt(1 - b2**self.t) / (1 - b1**self.t)
        for k, g in grads.items():
            p = params[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            m, v = self.m[k], self.v[k]
            if isinstance(g, tuple):
                ids, rows = g
                m[ids] = b1 * m[ids] + (1 - b1) * rows
                v[ids] = b2 * v[ids] + (1 - b2) * rows**2
                if self.weight_decay:
                    p[ids] -= lr * self.weight_decay * p[ids]
                p[ids] -= scale * m[ids] / (np.sqrt(v[ids]) + self.eps)
            else:
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g**2
                if self.weight_decay:
                    p -= lr * self.weight_decay * p
                p -= scale * m / (np.sqrt(v) + self.eps)


def make(name: str, weight_decay: float = 0.0):
    if name == "sgd":
        return SGD()
    if name == "adam":
        return Adam(weight_decay=weight_decay)
    raise ValueError(f"unknown optimizer {name!r}")
