"""Dual-head personalized classifier with hand-written backprop.

A dense ReLU extractor ``f`` feeds two linear heads: a global head trained on
plain cross-entropy and a personalized head trained on logit-adjusted
cross-entropy.  Only the extractor and the global head are shared with the
server; the personalized head never leaves the client.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

Layer = tuple[np.ndarray, np.ndarray]


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class Dims:
    input: int
    hidden: tuple[int, ...] = (64, 32)
    classes: int = 2

    @property
    def features(self) -> int:
        return self.hidden[-1] if self.hidden else self.input


@dataclass(frozen=True)
class ModelParams:
    dims: Dims
    extractor: tuple[Layer, ...]
    head_glob: Layer
    head_pers: Layer

    def __post_init__(self):
        sizes = (self.dims.input, *self.dims.hidden)
        if len(self.extractor) != len(self.dims.hidden):
            raise ValueError("extractor depth does not match dims.hidden")
        for (w, b), fan_in, fan_out in zip(self.extractor, sizes[:-1], sizes[1:]):
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise ValueError("extractor layer shape mismatch")
        for w, b in (self.head_glob, self.head_pers):
            if w.shape != (self.dims.features, self.dims.classes) or b.shape != (self.dims.classes,):
                raise ValueError("head shape mismatch")


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 0.001
    momentum: float = 0.9
    lambda_weight: float = 1.0
    tau: float = 1.0
    batch_size: int = 64
    local_epochs: int = 4

    def __post_init__(self):
        if self.lr < 0 or not 0 <= self.momentum < 1:
            raise ValueError("need lr >= 0 and 0 <= momentum < 1")
        if self.lambda_weight < 0 or self.tau < 0:
            raise ValueError("lambda_weight and tau must be non-negative")
        if self.batch_size < 1 or self.local_epochs < 0:
            raise ValueError("batch_size must be positive, local_epochs non-negative")


@dataclass(frozen=True)
class OptimizerState:
    velocity: np.ndarray


class LossReport(NamedTuple):
    ce: float
    la: float
    total: float


def init_params(dims: Dims, seed=None) -> ModelParams:
    rng = np.random.default_rng(seed)
    sizes = (dims.input, *dims.hidden)
    extractor = tuple(
        (rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b)), np.zeros(b))
        for a, b in zip(sizes[:-1], sizes[1:])
    )
    p, c = dims.features, dims.classes

    def head():
        return rng.normal(0.0, np.sqrt(1.0 / p), size=(p, c)), np.zeros(c)

    return ModelParams(dims, extractor, head(), head())


# Flat-vector views. Layout: extractor layers (W then b each), global head,
# personalized head.


def _flat(layers) -> np.ndarray:
    return np.concatenate([a.ravel() for layer in layers for a in layer])


def _unflat(vec: np.ndarray, like) -> tuple[Layer, ...]:
    out, i = [], 0
    for w, b in like:
        nw, nb = w.size, b.size
        out.append((vec[i:i + nw].reshape(w.shape).copy(), vec[i + nw:i + nw + nb].copy()))
        i += nw + nb
    if i != vec.size:
        raise ValueError("flat vector length does not match parameter layout")
    return tuple(out)


def to_vector(m: ModelParams) -> np.ndarray:
    return _flat((*m.extractor, m.head_glob, m.head_pers))


def from_vector(vec: np.ndarray, like: ModelParams) -> ModelParams:
    layers = _unflat(np.asarray(vec, dtype=np.float64), (*like.extractor, like.head_glob, like.head_pers))
    return ModelParams(like.dims, layers[:-2], layers[-2], layers[-1])


def global_vector(m: ModelParams) -> np.ndarray:
    """Shared part (extractor + global head) as one flat vector."""
    return _flat((*m.extractor, m.head_glob))


def with_global_vector(m: ModelParams, vec: np.ndarray) -> ModelParams:
    layers = _unflat(np.asarray(vec, dtype=np.float64), (*m.extractor, m.head_glob))
    return replace(m, extractor=layers[:-1], head_glob=layers[-1])


def global_size(m: ModelParams) -> int:
    return sum(a.size for layer in (*m.extractor, m.head_glob) for a in layer)


# Forward / losses


def _extract(m: ModelParams, x: np.ndarray) -> list[np.ndarray]:
    acts = [x]
    for w, b in m.extractor:
        acts.append(np.maximum(acts[-1] @ w + b, 0.0))
    return acts


def forward(m: ModelParams, x: np.ndarray):
    """Features and both heads' logits. ``x`` is one sample or a batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != m.dims.input:
        raise ValueError(f"expected {m.dims.input} input features, got {x.shape[-1]}")
    z = _extract(m, x)[-1]
    return z, z @ m.head_pers[0] + m.head_pers[1], z @ m.head_glob[0] + m.head_glob[1]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def ce_loss(logits, y) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim == 1:
        return float(-_log_softmax(logits)[y])
    y = np.asarray(y)
    return float(-_log_softmax(logits)[np.arange(len(y)), y].mean())


def batch_class_freqs(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty label batch")
    freqs = np.bincount(labels, minlength=num_classes)[:num_classes] / labels.size
    return np.maximum(freqs, 1.0 / (10 * labels.size))


def la_loss(logits, y, freqs, tau: float) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    return ce_loss(logits + tau * np.log(freqs), y)


# Backprop


@dataclass(frozen=True)
class Gradients:
    extractor: tuple[Layer, ...]
    head_glob: Layer
    head_pers: Layer
    loss: LossReport


def gradients(m: ModelParams, x: np.ndarray, y: np.ndarray, h: TrainHyper) -> Gradients:
    """Routed gradients for one mini-batch (mean loss over the batch).

    head_pers <- grad of L_LA, head_glob <- grad of L_CE,
    extractor <- grad of (L_CE + lambda * L_LA).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    n, c = len(y), m.dims.classes
    acts = _extract(m, x)
    z = acts[-1]
    logit_g = z @ m.head_glob[0] + m.head_glob[1]
    freqs = batch_class_freqs(y, c)
    logit_p = z @ m.head_pers[0] + m.head_pers[1] + h.tau * np.log(freqs)

    onehot = np.zeros((n, c))
    onehot[np.arange(n), y] = 1.0
    lsm_g, lsm_p = _log_softmax(logit_g), _log_softmax(logit_p)
    l_ce = float(-(lsm_g * onehot).sum() / n)
    l_la = float(-(lsm_p * onehot).sum() / n)
    report = LossReport(l_ce, l_la, l_ce + h.lambda_weight * l_la)
    if not np.isfinite(report.total):
        raise DivergenceError(f"non-finite loss {report.total}")

    d_g = (np.exp(lsm_g) - onehot) / n
    d_p = (np.exp(lsm_p) - onehot) / n
    g_glob = (z.T @ d_g, d_g.sum(axis=0))
    g_pers = (z.T @ d_p, d_p.sum(axis=0))

    dz = d_g @ m.head_glob[0].T + h.lambda_weight * (d_p @ m.head_pers[0].T)
    grads = []
    for i in range(len(m.extractor) - 1, -1, -1):
        w, _ = m.extractor[i]
        dz = dz * (acts[i + 1] > 0)
        grads.append((acts[i].T @ dz, dz.sum(axis=0)))
        dz = dz @ w.T
    return Gradients(tuple(reversed(grads)), g_glob, g_pers, report)


def grad_vector(g: Gradients) -> np.ndarray:
    return _flat((*g.extractor, g.head_glob, g.head_pers))


def init_optimizer(m: ModelParams) -> OptimizerState:
    return OptimizerState(np.zeros_like(to_vector(m)))


def train_step(m: ModelParams, opt: OptimizerState, batch, h: TrainHyper):
    """One momentum-SGD step: v <- momentum*v + g ; w <- w - lr*v."""
    x, y = batch
    if len(y) == 0:
        raise ValueError("empty batch")
    g = gradients(m, x, y, h)
    velocity = h.momentum * opt.velocity + grad_vector(g)
    new = from_vector(to_vector(m) - h.lr * velocity, m)
    return new, OptimizerState(velocity), g.loss


def local_train(m: ModelParams, data, h: TrainHyper, seed=None):
    """Run ``local_epochs`` of shuffled mini-batch training.

    Returns ``(delta, final_params, losses)`` where ``delta`` covers the
    shared parameters only (extractor + global head).
    """
    x, y = data
    if len(y) == 0:
        raise ValueError("empty shard")
    rng = np.random.default_rng(seed)
    before = global_vector(m)
    opt = init_optimizer(m)
    losses = []
    for _ in range(h.local_epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), h.batch_size):
            idx = order[start:start + h.batch_size]
            m, opt, rep = train_step(m, opt, (x[idx], y[idx]), h)
            losses.append(rep)
    return global_vector(m) - before, m, losses


def predict(m: ModelParams, x: np.ndarray, use_personalized: bool = False) -> np.ndarray:
    _, lp, lg = forward(m, x)
    return np.argmax(lp if use_personalized else lg, axis=-1)


def evaluate(m: ModelParams, data, use_personalized: bool = False) -> np.ndarray:
    """Confusion matrix, rows = true class, columns = predicted class."""
    x, y = data
    c = m.dims.classes
    conf = np.zeros((c, c), dtype=np.int64)
    if len(y):
        np.add.at(conf, (np.asarray(y), predict(m, x, use_personalized)), 1)
    return conf
