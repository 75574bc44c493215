"""Round orchestration: local training, attacks, conditioning, encryption,
auditing, weighted homomorphic aggregation and the global step.

Randomness is split into independent per-purpose streams keyed on
``(master seed, purpose, round, client)`` so that switching encryption on or
off never perturbs training, quantization or auditing draws.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import random
import time
from dataclasses import dataclass, field
from functools import reduce
from pathlib import Path
from typing import Sequence

import numpy as np

from . import attacks as atk
from . import crypto, metrics
from .audit import Auditor, ClientAudit, Verdict, register_clients
from .compression import QuantizerConfig, condition_update, dequantize, dequantize_weighted_sum, pruning_rate
from .config import ExperimentConfig
from .data import BENIGN_ATTACK_SPLIT, Dataset, load_csv, partition, synth_generate, synth_preset, to_binary, train_test_split
from .model import Dims, ModelParams, ce_loss, evaluate, forward, global_vector, init_params, local_train, with_global_vector

# Integer aggregation weight per verdict (down_weight 0.5 becomes 1 of 2).
VERDICT_WEIGHT = {Verdict.ACCEPT: 2, Verdict.DOWNWEIGHT: 1, Verdict.REJECT: 0}

_PURPOSES = {"data": 1, "split": 2, "partition": 3, "adversaries": 4, "init": 5, "train": 6,
             "quant": 7, "audit": 8, "reference": 9, "keygen": 10, "register": 11}


def stream(seed: int, purpose: str, *keys: int) -> np.random.Generator:
    return np.random.default_rng([seed, _PURPOSES[purpose], *keys])


def _crypto_rng(seed: int, t: int, client: int) -> random.Random:
    return random.Random(f"securedyn/crypto/{seed}/{t}/{client}")


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    overall_acc: float
    attack_class_acc: float
    benign_class_acc: float
    f1: float
    asr: float
    auditor_auc: float
    auditor_roc_points: tuple[tuple[float, float], ...]
    accepted: int
    downweighted: int
    rejected: int
    all_rejected: bool
    wall_time: float = 0.0

    CSV_FIELDS = ("round", "overall_acc", "attack_class_acc", "benign_class_acc", "f1", "asr",
                  "auditor_auc", "accepted", "downweighted", "rejected", "all_rejected",
                  "auditor_roc_points")

    def csv_row(self) -> list[str]:
        roc = ";".join(f"{f!r}:{t!r}" for f, t in self.auditor_roc_points)
        return [str(self.round), *(repr(float(getattr(self, k))) for k in self.CSV_FIELDS[1:7]),
                str(self.accepted), str(self.downweighted), str(self.rejected),
                str(int(self.all_rejected)), roc]


@dataclass
class FederationState:
    cfg: ExperimentConfig
    global_params: ModelParams
    clients: list[ModelParams]
    shards: list[Dataset]
    test: Dataset
    reference: Dataset | None
    adversaries: frozenset[int]
    size_weights: list[int]
    key: crypto.KeyMaterial | None
    auditor: Auditor | None
    round: int = 0
    prev_global: np.ndarray | None = None
    mu_bar: float | None = None
    history: list[RoundMetrics] = field(default_factory=list)

    @property
    def seed(self) -> int:
        return self.cfg.run.seed


# Setup


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    d = cfg.data
    seed = stream(cfg.run.seed, "data")
    if d.source == "synthetic":
        ds = synth_generate(d.synth_counts, d.synth_dim, d.separation, seed, d.normalize)
    elif d.source.startswith("preset:"):
        ds = synth_preset(d.source.split(":", 1)[1], d.preset_total, d.synth_dim or None, d.separation, seed)
    else:
        ds = load_csv(d.source, d.label_column, d.normalize)
    return to_binary(ds) if d.binary else ds


def init_state(cfg: ExperimentConfig, dataset: Dataset | None = None) -> FederationState:
    """Registration, key generation, partitioning and model initialization."""
    ds = dataset if dataset is not None else load_dataset(cfg)
    seed = cfg.run.seed
    train, test = train_test_split(ds, cfg.data.test_fraction, stream(seed, "split"))

    reference = None
    if cfg.run.audit and cfg.audit.reference_samples > 0:
        rng = stream(seed, "reference")
        take = rng.choice(len(train), size=min(cfg.audit.reference_samples, len(train) // 10), replace=False)
        reference = train.subset(np.sort(take))
        train = train.subset(np.setdiff1d(np.arange(len(train)), take))

    part_seed = int(stream(seed, "partition", cfg.partition.seed).integers(2**63))
    shards = partition(train, dataclasses.replace(cfg.partition, seed=part_seed))
    k = cfg.partition.clients
    if cfg.partition.scenario == BENIGN_ATTACK_SPLIT:
        smallest = min(len(s) for s in shards)
        size_weights = [max(1, min(2, round(len(s) / smallest))) for s in shards]
    else:
        size_weights = [1] * k

    adversaries = atk.select_adversaries(k, cfg.attack.ratio, stream(seed, "adversaries"))
    if cfg.attack.kind == atk.NONE:
        adversaries = frozenset()
    if cfg.attack.kind in atk.LABEL_FLIPS:
        shards = [atk.flip_labels(s, cfg.attack.kind, cfg.attack.source_class, cfg.attack.target_class)
                  if i in adversaries else s for i, s in enumerate(shards)]

    dims = Dims(ds.dim, cfg.model.hidden, ds.num_classes)
    params = init_params(dims, stream(seed, "init"))
    key = None
    if cfg.run.encrypt:
        key = crypto.keygen(cfg.security_params(), random.Random(f"securedyn/keygen/{seed}"))
    auditor = None
    if cfg.run.audit:
        table = register_clients(k, stream(seed, "register"))
        auditor = Auditor(table, cfg.audit, seed=int(stream(seed, "audit").integers(2**63)))
    return FederationState(cfg, params, [params] * k, shards, test, reference, adversaries,
                           size_weights, key, auditor)


# Round


def _quant_header(cfg: ExperimentConfig, mu_bar: float | None) -> QuantizerConfig:
    bound = cfg.quant.initial_range if mu_bar is None or mu_bar <= 0 else cfg.clip.alpha * mu_bar
    return QuantizerConfig.symmetric(bound, cfg.quant.levels)


def _client_updates(state: FederationState, t: int, w_global: np.ndarray) -> dict[int, np.ndarray]:
    """Raw (pre-conditioning) updates, attacks applied."""
    cfg, a = state.cfg, state.cfg.attack
    updates: dict[int, np.ndarray] = {}
    honest_adv: dict[int, np.ndarray] = {}
    leader = min(state.adversaries) if a.kind == atk.SAME_MODEL and state.adversaries else None
    for i, shard in enumerate(state.shards):
        local = with_global_vector(state.clients[i], w_global)
        data = shard
        if i == leader:
            data = atk.flip_labels(shard, atk.FLIP_BOTH, a.source_class, a.target_class)
        elif a.kind == atk.SAME_MODEL and i in state.adversaries:
            continue  # copies the leader's update below
        delta, trained, _ = local_train(local, data.xy(), cfg.train, stream(state.seed, "train", t, i))
        state.clients[i] = trained
        if i in state.adversaries:
            honest_adv[i] = delta
        else:
            updates[i] = delta

    if a.kind == atk.SAME_MODEL and state.adversaries:
        updates.update(atk.same_model_update({leader: honest_adv[leader]}, state.adversaries))
    elif a.kind == atk.MODEL_SCALING:
        updates.update({i: atk.scale_update(u, a.scale_factor) for i, u in honest_adv.items()})
    elif a.kind == atk.GRADIENT_DRIFT:
        for i, u in honest_adv.items():
            fake = atk.gradient_drift(w_global, state.prev_global, a.drift_eps)
            updates[i] = atk.scale_update(u, a.scale_factor) if fake is None else fake
    else:
        updates.update(honest_adv)
    return updates


def _reference_update(state: FederationState, t: int, w_global: np.ndarray, rate: float,
                      qcfg: QuantizerConfig) -> np.ndarray | None:
    """Auditor's own clean update, conditioned like a benign client's."""
    if state.reference is None:
        return None
    local = with_global_vector(state.global_params, w_global)
    delta, _, _ = local_train(local, state.reference.xy(), state.cfg.train, stream(state.seed, "reference", t))
    cond = condition_update(delta, rate, state.cfg.clip, qcfg, stream(state.seed, "reference", t, 1))
    return dequantize(cond.levels, qcfg)


def _clean_loss(state: FederationState, w_global: np.ndarray):
    """Auditor-side utility: clean-data loss after applying a candidate update."""
    if state.reference is None:
        return None
    x, y = state.reference.xy()
    lr = state.cfg.run.server_lr

    def loss(update: np.ndarray) -> float:
        m = with_global_vector(state.global_params, w_global + lr * update)
        return ce_loss(forward(m, x)[2], y)

    return loss


def run_round(state: FederationState, clean_acc: float | None = None) -> tuple[FederationState, RoundMetrics]:
    """One full round; mutates and returns ``state``."""
    start = time.perf_counter()
    cfg = state.cfg
    t = state.round + 1
    k = cfg.partition.clients
    w_global = global_vector(state.global_params)
    qcfg = _quant_header(cfg, state.mu_bar)
    rate = pruning_rate(cfg.prune, t)

    raw = _client_updates(state, t, w_global)
    conditioned = {}
    for i in range(k):
        skip = i in state.adversaries and cfg.attack.skips_conditioning
        conditioned[i] = condition_update(raw[i], rate, cfg.clip, qcfg, stream(state.seed, "quant", t, i), skip)

    # Client -> server/auditor messages: ciphertexts or plain level vectors.
    if state.key is not None:
        cts = {i: crypto.encrypt_vector(state.key.public, c.levels, _crypto_rng(state.seed, t, i))
               for i, c in conditioned.items()}
    else:
        cts = None

    verdicts: dict[int, Verdict] = {i: Verdict.ACCEPT for i in range(k)}
    audits: list[ClientAudit] = []
    if state.auditor is not None:
        if cts is not None:
            seen = {i: np.array(crypto.decrypt_vector(state.key, cts[i]), dtype=np.int64) for i in range(k)}
        else:
            seen = {i: conditioned[i].levels for i in range(k)}
        values = {i: dequantize(seen[i], qcfg) for i in range(k)}
        ref = None
        if cfg.audit.direction == "reference":
            ref = _reference_update(state, t, w_global, rate, qcfg)
        direction = ref if ref is not None else (
            None if state.prev_global is None else w_global - state.prev_global)
        audits = state.auditor.audit_round(t, values, direction, _clean_loss(state, w_global),
                                           state.adversaries)
        verdicts = {a.client: a.verdict for a in audits}

    weights = [VERDICT_WEIGHT[verdicts[i]] * state.size_weights[i] for i in range(k)]
    g = reduce(math.gcd, weights)
    if g > 1:
        weights = [w // g for w in weights]
    weight_sum = sum(weights)

    all_rejected = weight_sum == 0
    if not all_rejected:
        if cts is not None:
            agg = crypto.weighted_sum_vector(state.key.public, [cts[i] for i in range(k)], weights)
            level_sum = np.array(crypto.decrypt_vector(state.key, agg), dtype=np.int64)
        else:
            level_sum = sum(w * conditioned[i].levels for i, w in enumerate(weights) if w)
        mean_update = dequantize_weighted_sum(level_sum, weight_sum, qcfg) / weight_sum
        new_global = w_global + cfg.run.server_lr * mean_update
        if not np.all(np.isfinite(new_global)):
            raise FloatingPointError(f"round {t}: non-finite global parameters")
        state.global_params = with_global_vector(state.global_params, new_global)
        kept = [conditioned[i].mu for i, w in enumerate(weights) if w]
        state.mu_bar = float(np.mean(kept))
        state.prev_global = w_global

    state.round = t
    conf = evaluate(state.global_params, state.test.xy())
    scores = {a.client: a.score for a in audits}
    m = compute_metrics(conf, state.adversaries, scores, cfg.attack, clean_acc, t,
                        [verdicts[i] for i in range(k)], all_rejected)
    m = dataclasses.replace(m, wall_time=time.perf_counter() - start)
    state.history.append(m)
    return state, m


# Metrics


def compute_metrics(conf: np.ndarray, adversaries: frozenset[int], scores: dict[int, float],
                    attack_cfg: atk.AttackConfig, clean_acc: float | None = None, round_: int = 0,
                    verdicts: Sequence[Verdict] = (), all_rejected: bool = False) -> RoundMetrics:
    acc = metrics.accuracy(conf)
    attack_acc, benign_acc = metrics.split_class_accuracy(conf, attack_cfg.source_class, attack_cfg.target_class)
    if attack_cfg.kind == atk.NONE:
        asr = 0.0
    elif attack_cfg.targeted:
        asr = metrics.targeted_asr(conf, attack_cfg.source_class, attack_cfg.target_class)
    else:
        asr = math.nan if clean_acc is None else metrics.untargeted_asr(acc, clean_acc)

    roc_pts: tuple = ()
    auc = math.nan
    if scores:
        clients = sorted(scores)
        labels = [c in adversaries for c in clients]
        if any(labels) and not all(labels):
            fpr, tpr = metrics.roc_curve([scores[c] for c in clients], labels)
            roc_pts = tuple(zip(fpr.tolist(), tpr.tolist()))
            auc = metrics.auc(fpr, tpr)
    counts = {v: sum(1 for x in verdicts if x is v) for v in Verdict}
    return RoundMetrics(round_, acc, attack_acc, benign_acc, metrics.macro_f1(conf), asr, auc, roc_pts,
                        counts[Verdict.ACCEPT], counts[Verdict.DOWNWEIGHT], counts[Verdict.REJECT],
                        all_rejected)


# Experiment


@dataclass
class ExperimentResult:
    cfg: ExperimentConfig
    initial: RoundMetrics
    rounds: list[RoundMetrics]
    state: FederationState
    clean_accs: list[float] | None = None

    @property
    def final(self) -> RoundMetrics:
        return self.rounds[-1] if self.rounds else self.initial

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        for line in provenance(self.cfg):
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RoundMetrics.CSV_FIELDS)
        for m in self.rounds:
            w.writerow(m.csv_row())
        return buf.getvalue()

    def timing_csv(self) -> str:
        lines = [f"# {line}" for line in provenance(self.cfg)] + ["round,wall_time"]
        lines += [f"{m.round},{m.wall_time!r}" for m in self.rounds]
        return "\n".join(lines) + "\n"

    def audit_csv(self) -> str:
        if self.state.auditor is None:
            return "".join(f"# {line}\n" for line in provenance(self.cfg)) + "# auditing disabled\n"
        return self.state.auditor.table.to_csv(provenance(self.cfg))

    def summary(self) -> str:
        s, f = self.state, self.final
        lines = [f"# {line}" for line in provenance(self.cfg)]
        lines += [
            "[summary]",
            f"rounds = {len(self.rounds)}",
            f"clients = {len(s.shards)}",
            f"adversaries = {','.join(map(str, sorted(s.adversaries))) or 'none'}",
            f"initial_overall_acc = {self.initial.overall_acc!r}",
            f"final_overall_acc = {f.overall_acc!r}",
            f"final_attack_class_acc = {f.attack_class_acc!r}",
            f"final_benign_class_acc = {f.benign_class_acc!r}",
            f"final_f1 = {f.f1!r}",
            f"final_asr = {f.asr!r}",
            f"mean_auditor_auc = {_nanmean([m.auditor_auc for m in self.rounds])!r}",
            f"total_accepted = {sum(m.accepted for m in self.rounds)}",
            f"total_downweighted = {sum(m.downweighted for m in self.rounds)}",
            f"total_rejected = {sum(m.rejected for m in self.rounds)}",
            f"all_rejected_rounds = {sum(m.all_rejected for m in self.rounds)}",
            f"encrypted = {s.key is not None}",
        ]
        if s.key is not None:
            lines += [f"elgamal_prime_bits = {s.key.p.bit_length()}",
                      f"plaintext_modulus_bits = {s.key.n.bit_length()}"]
        lines += ["", "# resolved configuration", self.cfg.to_ini()]
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(self.metrics_csv())
        (out / "audit.csv").write_text(self.audit_csv())
        (out / "summary.txt").write_text(self.summary())
        (out / "timing.csv").write_text(self.timing_csv())
        return out


def _nanmean(xs) -> float:
    xs = [x for x in xs if not math.isnan(x)]
    return float(np.mean(xs)) if xs else math.nan


def provenance(cfg: ExperimentConfig) -> list[str]:
    return [f"seed: {cfg.run.seed}", f"config: {cfg.to_json()}"]


def run_experiment(cfg: ExperimentConfig, dataset: Dataset | None = None, progress=None) -> ExperimentResult:
    """Set up, then run ``cfg.run.rounds`` rounds.

    Untargeted attacks need a clean reference accuracy per round; when
    ``cfg.run.clean_baseline`` is set, a twin run without attackers supplies it.
    """
    clean_accs = None
    if cfg.run.clean_baseline and not cfg.attack.targeted and cfg.attack.kind != atk.NONE:
        twin = cfg.replace(**{"attack.kind": atk.NONE, "attack.ratio": 0.0, "run.clean_baseline": False})
        clean_accs = [m.overall_acc for m in run_experiment(twin, dataset).rounds]

    state = init_state(cfg, dataset)
    conf = evaluate(state.global_params, state.test.xy())
    initial = compute_metrics(conf, state.adversaries, {}, cfg.attack, None, 0)
    for r in range(cfg.run.rounds):
        state, m = run_round(state, None if clean_accs is None else clean_accs[r])
        if progress is not None:
            progress(m)
    return ExperimentResult(cfg, initial, state.history, state, clean_accs)
