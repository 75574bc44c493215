"""Experiment configuration.

Files are INI-style: ``[section]`` headers followed by ``key = value`` lines.
Every setting is addressable as ``section.key``, which is also the syntax of
command-line overrides (``--set train.lr=0.01``).  Lists are comma-separated.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
import logging
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

from .attacks import AttackConfig
from .audit import AuditConfig
from .compression import ClipConfig, PruneSchedule
from .crypto import SecurityParams
from .data import BENIGN_ATTACK_SPLIT, PartitionPlan
from .model import TrainHyper

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    # "synthetic", "preset:<name>" (synthetic with a named class mix) or a CSV path.
    source: str = "synthetic"
    label_column: str = "label"
    binary: bool = True
    normalize: bool = True
    synth_counts: tuple[int, ...] = (30000, 30000)
    synth_dim: int = 20
    separation: float = 6.0
    preset_total: int = 60000
    test_fraction: float = 0.3


@dataclass(frozen=True)
class ModelConfig:
    hidden: tuple[int, ...] = (64, 32)


@dataclass(frozen=True)
class QuantConfig:
    levels: int = 255
    initial_range: float = 0.05


@dataclass(frozen=True)
class CryptoConfig:
    plaintext_prime_bits: int = 16
    # 0 -> smallest size that satisfies the aggregation-depth bound.
    elgamal_prime_bits: int = 0


@dataclass(frozen=True)
class RunConfig:
    rounds: int = 50
    seed: int = 0
    server_lr: float = 1.0
    encrypt: bool = True
    audit: bool = True
    # Also run the same seed without attackers to score untargeted ASR.
    clean_baseline: bool = False
    out_dir: str = "runs/latest"


SECTIONS: dict[str, type] = {
    "data": DataConfig,
    "partition": PartitionPlan,
    "model": ModelConfig,
    "train": TrainHyper,
    "prune": PruneSchedule,
    "clip": ClipConfig,
    "quant": QuantConfig,
    "crypto": CryptoConfig,
    "attack": AttackConfig,
    "audit": AuditConfig,
    "run": RunConfig,
}


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    partition: PartitionPlan = field(default_factory=PartitionPlan)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainHyper = field(default_factory=TrainHyper)
    prune: PruneSchedule = field(default_factory=PruneSchedule)
    clip: ClipConfig = field(default_factory=ClipConfig)
    quant: QuantConfig = field(default_factory=QuantConfig)
    crypto: CryptoConfig = field(default_factory=CryptoConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    audit: AuditConfig = field(default_factory=AuditConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def __post_init__(self):
        validate(self)

    @property
    def max_client_weight(self) -> int:
        """Largest integer aggregation weight one client can carry."""
        size_w = 2 if self.partition.scenario == BENIGN_ATTACK_SPLIT else 1
        return 2 * size_w

    @property
    def aggregation_terms(self) -> int:
        return self.partition.clients * self.max_client_weight

    def security_params(self) -> SecurityParams:
        return SecurityParams(
            self.crypto.plaintext_prime_bits,
            self.crypto.elgamal_prime_bits or None,
            self.aggregation_terms,
        )

    def replace(self, **dotted) -> "ExperimentConfig":
        """Copy with ``section__key=value`` or ``{"section.key": value}`` overrides."""
        return apply_overrides(self, {k.replace("__", "."): v for k, v in dotted.items()})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def to_ini(self) -> str:
        lines = []
        for name in SECTIONS:
            lines.append(f"[{name}]")
            for f in fields(getattr(self, name)):
                lines.append(f"{f.name} = {_format(getattr(getattr(self, name), f.name))}")
            lines.append("")
        return "\n".join(lines)


def validate(cfg: ExperimentConfig) -> None:
    n_min = 1 << (2 * cfg.crypto.plaintext_prime_bits - 1)
    k = cfg.partition.clients
    n_lv = cfg.quant.levels
    worst = cfg.aggregation_terms * (n_lv - 1)
    if cfg.quant.levels < 2:
        raise ConfigError("quant.levels: need at least 2 levels")
    if not worst < n_min:
        raise ConfigError(
            "crypto.plaintext_prime_bits: plaintext space too small; need "
            f"K*(N-1)*{cfg.max_client_weight} < n, but {k}*{n_lv - 1}*{cfg.max_client_weight} = "
            f"{worst} while {cfg.crypto.plaintext_prime_bits}-bit primes only guarantee "
            f"n >= 2^{2 * cfg.crypto.plaintext_prime_bits - 1} = {n_min}"
        )
    if cfg.run.rounds < 0:
        raise ConfigError("run.rounds: must be non-negative")
    if cfg.quant.initial_range <= 0:
        raise ConfigError("quant.initial_range: must be positive")
    if not 0 < cfg.data.test_fraction < 1:
        raise ConfigError("data.test_fraction: must lie in (0, 1)")
    try:
        cfg.security_params()
    except ValueError as exc:
        raise ConfigError(f"crypto.elgamal_prime_bits: {exc}") from None


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if value is None:
        return "auto"
    return str(value)


def _coerce(raw, hint, key: str):
    if not isinstance(raw, str):
        return tuple(raw) if isinstance(raw, list) else raw
    text = raw.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if text.lower() in ("", "none", "auto", "default"):
            return None
        hint = next(a for a in args if a is not type(None))
        origin, args = typing.get_origin(hint), typing.get_args(hint)
    try:
        if origin is tuple:
            return tuple(_coerce(part, args[0], key) for part in text.split(",") if part.strip())
        if hint is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def _build(section: str, values: dict, base=None):
    cls = SECTIONS[section]
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    kwargs = dataclasses.asdict(base) if base is not None else {}
    for name, raw in values.items():
        if name not in known:
            raise ConfigError(f"{section}.{name}: unknown key (valid: {', '.join(sorted(known))})")
        kwargs[name] = _coerce(raw, hints[name], f"{section}.{name}")
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def apply_overrides(cfg: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    by_section: dict[str, dict] = {}
    for key, value in overrides.items():
        section, sep, name = key.partition(".")
        if not sep or section not in SECTIONS:
            raise ConfigError(f"{key}: expected section.key with section in {', '.join(SECTIONS)}")
        by_section.setdefault(section, {})[name] = value
    parts = {s: getattr(cfg, s) for s in SECTIONS}
    for section, values in by_section.items():
        parts[section] = _build(section, values, parts[section])
    try:
        return ExperimentConfig(**parts)
    except ConfigError:
        raise
    except ValueError as exc:  # pragma: no cover
        raise ConfigError(str(exc)) from None


def parse_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults <- file values <- overrides."""
    file_values: dict[str, str] = {}
    if path is not None:
        text = Path(path).read_text()
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            for name, value in parser.items(section):
                file_values[f"{section}.{name}"] = value
        if not file_values:
            log.warning("config %s is empty; using defaults for every setting", path)
    merged = {**file_values, **(overrides or {})}
    return apply_overrides(ExperimentConfig(), merged)
