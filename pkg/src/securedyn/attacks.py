"""Poisoning behaviours for adversarial clients."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import BENIGN, Dataset

NONE = "none"
FLIP_BENIGN = "flip-benign"
FLIP_ATTACK = "flip-attack"
FLIP_BOTH = "flip-both"
MODEL_SCALING = "model-scaling"
SAME_MODEL = "same-model"
GRADIENT_DRIFT = "gradient-drift"

KINDS = (NONE, FLIP_BENIGN, FLIP_ATTACK, FLIP_BOTH, MODEL_SCALING, SAME_MODEL, GRADIENT_DRIFT)
LABEL_FLIPS = (FLIP_BENIGN, FLIP_ATTACK, FLIP_BOTH)
# Kinds whose success is measured on source->target misclassification.
TARGETED = LABEL_FLIPS + (SAME_MODEL,)


@dataclass(frozen=True)
class AttackConfig:
    kind: str = NONE
    ratio: float = 0.0
    scale_factor: float = -10.0
    drift_eps: float = 10.0
    source_class: int = 1
    target_class: int = 0
    # None -> per-kind default (see skips_conditioning).
    adversary_skips_conditioning: bool | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}; expected one of {KINDS}")
        if not 0 <= self.ratio <= 0.5:
            raise ValueError(f"attack ratio {self.ratio} outside [0, 0.5]")
        if self.scale_factor == 0:
            raise ValueError("scale_factor must be non-zero")

    @property
    def skips_conditioning(self) -> bool:
        if self.adversary_skips_conditioning is not None:
            return self.adversary_skips_conditioning
        return self.kind in (MODEL_SCALING, SAME_MODEL, GRADIENT_DRIFT)

    @property
    def targeted(self) -> bool:
        return self.kind in TARGETED


def select_adversaries(k: int, ratio: float, seed=None) -> frozenset[int]:
    count = math.floor(ratio * k + 1e-9)
    rng = np.random.default_rng(seed)
    return frozenset(int(i) for i in rng.choice(k, size=count, replace=False))


def flip_labels(shard: Dataset, mode: str, source_class: int = 1, target_class: int = 0) -> Dataset:
    """Relabel a shard.

    On binary data the three modes swap benign/attack labels.  On multi-class
    data they act on the (source, target) pair only; FLIP_BOTH then swaps the
    two classes in both directions.
    """
    y = shard.labels
    if shard.num_classes == 2:
        if mode == FLIP_BENIGN:
            new = np.where(y == BENIGN, 1, y)
        elif mode == FLIP_ATTACK:
            new = np.where(y != BENIGN, BENIGN, y)
        elif mode == FLIP_BOTH:
            new = 1 - y
        else:
            raise ValueError(f"not a label-flip mode: {mode!r}")
    else:
        if mode in (FLIP_BENIGN, FLIP_ATTACK):
            new = np.where(y == source_class, target_class, y)
        elif mode == FLIP_BOTH:
            new = np.where(y == source_class, target_class, np.where(y == target_class, source_class, y))
        else:
            raise ValueError(f"not a label-flip mode: {mode!r}")
    return shard.with_labels(new)


def targeted_flip(shard: Dataset, source_class: int, target_class: int) -> Dataset:
    """Move every ``source_class`` row to ``target_class``; nothing else changes."""
    return shard.with_labels(np.where(shard.labels == source_class, target_class, shard.labels))


def scale_update(update: np.ndarray, factor: float) -> np.ndarray:
    return np.asarray(update, dtype=np.float64) * factor


def same_model_update(poisoned: dict[int, np.ndarray], adversaries) -> dict[int, np.ndarray]:
    """Every adversary submits the lowest-index adversary's poisoned update."""
    order = sorted(adversaries)
    if not order:
        return {}
    shared = np.array(poisoned[order[0]], dtype=np.float64, copy=True)
    shared.setflags(write=False)
    return {i: shared for i in order}


def gradient_drift(w_t: np.ndarray, w_prev: np.ndarray | None, eps: float) -> np.ndarray | None:
    """Fake update ``-eps * (w_t - w_prev)``; ``None`` when no previous snapshot exists."""
    if w_prev is None:
        return None
    return -eps * (np.asarray(w_t, dtype=np.float64) - np.asarray(w_prev, dtype=np.float64))
