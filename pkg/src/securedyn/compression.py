"""Client-side update conditioning: pruning schedule, L1 pruning, mean-based
clipping and the stochastic K-level quantizer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PruneSchedule:
    p0: float = 0.1
    p_target: float = 0.5
    t_eff: int = 5
    t_target: int = 40

    def __post_init__(self):
        if not 0 <= self.p0 < self.p_target < 1:
            raise ValueError("need 0 <= p0 < p_target < 1")
        if self.t_eff >= self.t_target:
            raise ValueError("need t_eff < t_target")


@dataclass(frozen=True)
class ClipConfig:
    alpha: float = 2.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("clip alpha must be positive")


@dataclass(frozen=True)
class QuantizerConfig:
    r1: float
    r2: float
    levels: int = 255

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("need at least 2 quantization levels")
        if not self.r1 < self.r2:
            raise ValueError(f"empty quantization range [{self.r1}, {self.r2}]")

    @property
    def delta(self) -> float:
        return (self.r2 - self.r1) / (self.levels - 1)

    @classmethod
    def symmetric(cls, bound: float, levels: int = 255) -> "QuantizerConfig":
        return cls(-bound, bound, levels)


@dataclass(frozen=True)
class ConditionedUpdate:
    values: np.ndarray
    mask: np.ndarray
    levels: np.ndarray
    config: QuantizerConfig
    mu: float


def pruning_rate(s: PruneSchedule, t: int) -> float:
    frac = max(0.0, (t - s.t_eff) / (s.t_target - s.t_eff))
    return min(frac * (s.p_target - s.p0) + s.p0, s.p_target)


def prune(update: np.ndarray, rate: float) -> tuple[np.ndarray, np.ndarray]:
    """Zero the ``floor(rate * d)`` smallest-magnitude entries.

    Ties go to the lowest index (stable sort on ``|x|``).
    """
    if not 0 <= rate < 1:
        raise ValueError(f"pruning rate {rate} outside [0, 1)")
    update = np.asarray(update, dtype=np.float64)
    k = int(np.floor(rate * update.size))
    mask = np.ones(update.size, dtype=bool)
    if k:
        order = np.argsort(np.abs(update), kind="stable")
        mask[order[:k]] = False
    return np.where(mask, update, 0.0), mask


def clip_update(update: np.ndarray, cfg: ClipConfig) -> tuple[np.ndarray, float]:
    update = np.asarray(update, dtype=np.float64)
    if update.size == 0:
        raise ValueError("cannot clip an empty update")
    mu = float(np.mean(np.abs(update)))
    bound = cfg.alpha * mu
    return np.clip(update, -bound, bound), mu


def quantize(x, cfg: QuantizerConfig, rng) -> np.ndarray | int:
    """Stochastically round ``x`` to a level index, unbiased in value.

    Accepts a scalar or an array; ``rng`` is a ``numpy.random.Generator`` or a
    seed.  Values must already lie in ``[r1, r2]``.
    """
    rng = np.random.default_rng(rng)
    arr = np.asarray(x, dtype=np.float64)
    if np.any(arr < cfg.r1) or np.any(arr > cfg.r2) or not np.all(np.isfinite(arr)):
        raise ValueError(f"value out of quantizer range [{cfg.r1}, {cfg.r2}]")
    pos = (arr - cfg.r1) / cfg.delta
    low = np.minimum(np.floor(pos), cfg.levels - 1)
    frac = pos - low
    up = rng.random(arr.shape) < frac
    levels = np.minimum(low + up, cfg.levels - 1).astype(np.int64)
    return int(levels) if levels.ndim == 0 else levels


def dequantize(level, cfg: QuantizerConfig):
    arr = np.asarray(level)
    if np.any(arr < 0) or np.any(arr > cfg.levels - 1):
        raise ValueError(f"level outside [0, {cfg.levels - 1}]")
    # Interpolating between the endpoints keeps r1, r2 and (on a symmetric
    # grid with odd N) the zero level exact.
    top = cfg.levels - 1
    out = (cfg.r1 * (top - arr) + cfg.r2 * arr) / top
    return float(out) if out.ndim == 0 else out


def dequantize_weighted_sum(level_sum, weight_sum: int, cfg: QuantizerConfig):
    """``sum_i w_i * dequantize(l_i)`` from ``sum_i w_i * l_i`` and ``sum_i w_i``."""
    if weight_sum <= 0:
        raise ValueError("weight_sum must be positive")
    level_sum = np.asarray(level_sum, dtype=np.float64)
    top = cfg.levels - 1
    out = (cfg.r1 * (weight_sum * top - level_sum) + cfg.r2 * level_sum) / top
    return float(out) if out.ndim == 0 else out


def condition_update(
    update: np.ndarray,
    rate: float,
    clip: ClipConfig,
    qcfg: QuantizerConfig,
    rng,
    skip: bool = False,
) -> ConditionedUpdate:
    """prune -> clip -> clamp to the round grid -> quantize.

    ``skip=True`` bypasses pruning and clipping (adversaries that ignore the
    client-side protocol); clamping and quantization always happen because the
    server only accepts level indices on the shared grid.
    """
    update = np.asarray(update, dtype=np.float64)
    if skip:
        values, mask = update, np.ones(update.size, dtype=bool)
        mu = float(np.mean(np.abs(update))) if update.size else 0.0
    else:
        values, mask = prune(update, rate)
        values, mu = clip_update(values, clip)
    clamped = np.clip(values, qcfg.r1, qcfg.r2)
    return ConditionedUpdate(values, mask, quantize(clamped, qcfg, rng), qcfg, mu)
