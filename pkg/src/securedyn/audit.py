"""Central auditor: registration table, GMM/Mahalanobis gradient auditing and
multi-threshold verdicts.

Per round the auditor turns every client's decrypted update into a small
feature vector, fits a Gaussian mixture (EM, component count by BIC) and
blends it into the running mixture.  Each client's Mahalanobis distance (MD)
to the *normal* component, the round-to-round change of that distance, and
the raw update norm are compared against three adaptive thresholds; the
number of violated thresholds decides Accept / DownWeight / Reject.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

FEATURE_NAMES = ("l2_norm", "l1_l2_ratio", "cosine", "signed_mean", "zero_fraction")

EPS_COV = 1e-4
EPS_THR = 1e-6


# Phase 1: registration


class RegistrationError(ValueError):
    pass


class Verdict(enum.Enum):
    ACCEPT = "accept"
    DOWNWEIGHT = "downweight"
    REJECT = "reject"


@dataclass(frozen=True)
class AuditEntry:
    tag_id: str
    client: int
    round: int
    features: tuple[float, ...]
    md: float
    dmd: float
    verdict: Verdict
    weight: float
    score: float
    component: int
    is_adversary: bool | None = None


@dataclass
class AuditTable:
    tags: dict[int, str] = field(default_factory=dict)
    entries: list[AuditEntry] = field(default_factory=list)

    def register(self, client: int, tag_id: str) -> None:
        if client in self.tags:
            raise RegistrationError(f"client {client} already registered")
        if tag_id in self.tags.values():
            raise RegistrationError(f"tag id {tag_id} already issued")
        self.tags[client] = tag_id

    def record(self, entry: AuditEntry) -> None:
        if any(e.client == entry.client and e.round == entry.round for e in self.entries[-len(self.tags) - 1:]):
            raise RegistrationError(f"duplicate entry for client {entry.client} round {entry.round}")
        self.entries.append(entry)

    def to_csv(self, header_comments: Sequence[str] = ()) -> str:
        buf = io.StringIO()
        for line in header_comments:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tag_id", "client", "round", *FEATURE_NAMES, "md", "dmd",
                    "verdict", "weight", "score", "component", "is_adversary"])
        for e in self.entries:
            w.writerow([e.tag_id, e.client, e.round, *(repr(float(f)) for f in e.features),
                        repr(e.md), repr(e.dmd), e.verdict.value, repr(e.weight),
                        repr(e.score), e.component,
                        "" if e.is_adversary is None else int(e.is_adversary)])
        return buf.getvalue()


def register_clients(k: int, seed=None) -> AuditTable:
    if k < 2:
        raise RegistrationError("need at least 2 clients")
    rng = np.random.default_rng(seed)
    table = AuditTable()
    for i in range(k):
        tag = rng.bytes(8).hex()
        while tag in table.tags.values():  # pragma: no cover
            tag = rng.bytes(8).hex()
        table.register(i, tag)
    return table


# Features


def extract_features(update: np.ndarray, global_direction: np.ndarray | None = None) -> np.ndarray:
    """[L2 norm, L1/L2, cosine to global direction, mean, fraction of zeros]."""
    u = np.asarray(update, dtype=np.float64)
    if u.size == 0:
        raise ValueError("empty update")
    l2 = float(np.linalg.norm(u))
    l1 = float(np.abs(u).sum())
    ratio = l1 / l2 if l2 > 0 else 0.0
    cos = 0.0
    if global_direction is not None:
        gd = np.asarray(global_direction, dtype=np.float64)
        gn = float(np.linalg.norm(gd))
        if l2 > 0 and gn > 0:
            cos = float(np.clip(u @ gd / (l2 * gn), -1.0, 1.0))
    return np.array([l2, ratio, cos, float(u.mean()), float(np.mean(u == 0))])


def audit_transform(features: np.ndarray, dim: int) -> np.ndarray:
    """Map raw features to O(1), scale-free coordinates for clustering.

    log-norm, L1/L2 divided by sqrt(dim), cosine, mean divided by RMS, zero
    fraction.
    """
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    l2 = f[:, 0]
    rms = l2 / math.sqrt(dim)
    out = np.column_stack([
        np.log(l2 + 1e-12),
        f[:, 1] / math.sqrt(dim),
        f[:, 2],
        np.divide(f[:, 3], rms, out=np.zeros_like(rms), where=rms > 0),
        f[:, 4],
    ])
    return out if np.ndim(features) > 1 else out[0]


# Gaussian mixture


@dataclass(frozen=True)
class GmmState:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    @property
    def G(self) -> int:
        return len(self.weights)

    @property
    def feature_dim(self) -> int:
        return self.means.shape[1]


class DegenerateData(ValueError):
    pass


def _regularize(cov: np.ndarray, eps: float) -> np.ndarray:
    cov = (cov + cov.T) / 2
    vals, vecs = np.linalg.eigh(cov)
    return (vecs * np.maximum(vals, eps)) @ vecs.T


def _log_gauss(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    chol = np.linalg.cholesky(cov)
    sol = np.linalg.solve(chol, (x - mean).T)
    logdet = 2 * np.log(np.diag(chol)).sum()
    return -0.5 * (sol * sol).sum(axis=0) - 0.5 * (logdet + len(mean) * math.log(2 * math.pi))


def _log_joint(x: np.ndarray, s: GmmState) -> np.ndarray:
    return np.column_stack([
        math.log(w) + _log_gauss(x, m, c) for w, m, c in zip(s.weights, s.means, s.covs)
    ])


def _logsumexp(a: np.ndarray) -> np.ndarray:
    top = a.max(axis=1, keepdims=True)
    return (top + np.log(np.exp(a - top).sum(axis=1, keepdims=True)))[:, 0]


def gmm_loglik(x: np.ndarray, s: GmmState) -> float:
    return float(_logsumexp(_log_joint(np.atleast_2d(x), s)).sum())


def responsibilities(x: np.ndarray, s: GmmState) -> np.ndarray:
    lj = _log_joint(np.atleast_2d(x), s)
    return np.exp(lj - _logsumexp(lj)[:, None])


def _kmeans_pp(x: np.ndarray, g: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    for _ in range(1, g):
        d2 = np.min([((x - c) ** 2).sum(axis=1) for c in centers], axis=0)
        total = d2.sum()
        idx = rng.integers(len(x)) if total == 0 else rng.choice(len(x), p=d2 / total)
        centers.append(x[idx])
    return np.array(centers)


def fit_gmm(x, G: int, seed=None, max_iters: int = 200, tol: float = 1e-6,
            eps_cov: float = EPS_COV) -> GmmState:
    """EM for a full-covariance mixture, seeded k-means++ style."""
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if n < G:
        raise ValueError(f"need at least G={G} rows, got {n}")
    if G == 1 or np.all(x == x[0]):
        cov = np.cov(x, rowvar=False, bias=True).reshape(d, d) if n > 1 else np.zeros((d, d))
        return GmmState(np.ones(1), x.mean(axis=0, keepdims=True), _regularize(cov, eps_cov)[None])

    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(x, G, rng)
    assign = np.argmin(((x[:, None, :] - centers[None]) ** 2).sum(axis=2), axis=1)
    resp = np.zeros((n, G))
    resp[np.arange(n), assign] = 1.0
    prev = -np.inf
    state = None
    for _ in range(max_iters):
        nk = resp.sum(axis=0) + 1e-12
        weights = nk / n
        means = (resp.T @ x) / nk[:, None]
        covs = np.empty((G, d, d))
        for g in range(G):
            diff = x - means[g]
            covs[g] = _regularize((resp[:, g, None] * diff).T @ diff / nk[g], eps_cov)
        # Drop empty components rather than carry a zero weight.
        keep = weights > 1e-10
        state = GmmState(weights[keep] / weights[keep].sum(), means[keep], covs[keep])
        lj = _log_joint(x, state)
        ll = float(_logsumexp(lj).sum())
        resp = np.exp(lj - _logsumexp(lj)[:, None])
        if ll - prev < tol:
            break
        prev = ll
        G = state.G
    return state


def n_parameters(G: int, d: int) -> int:
    return (G - 1) + G * d + G * d * (d + 1) // 2


def bic(x: np.ndarray, s: GmmState) -> float:
    x = np.atleast_2d(x)
    return -2 * gmm_loglik(x, s) + n_parameters(s.G, s.feature_dim) * math.log(len(x))


def select_g_bic(x, g_candidates: Sequence[int], seed=None, **fit_kw) -> tuple[int, GmmState]:
    """Fit every candidate G; return the BIC minimizer (ties -> smaller G)."""
    x = np.asarray(x, dtype=np.float64)
    best = None
    for g in sorted(set(g_candidates)):
        if g > len(x):
            continue
        s = fit_gmm(x, g, seed, **fit_kw)
        score = bic(x, s)
        if best is None or score < best[0] - 1e-9:
            best = (score, g, s)
    if best is None:
        raise ValueError("no candidate G fits the number of rows")
    return best[1], best[2]


def blend_gmm(prev: GmmState, new: GmmState, alpha: float, eps_cov: float = EPS_COV) -> GmmState:
    """Moment-matched ``alpha * prev + (1 - alpha) * new`` with nearest-mean pairing.

    A component-count change cannot be blended; the new fit is adopted.
    """
    if prev.feature_dim != new.feature_dim:
        raise ValueError("feature dimension mismatch")
    if prev.G != new.G:
        return new
    # Greedy pairing on mean distance.
    dist = ((prev.means[:, None, :] - new.means[None]) ** 2).sum(axis=2)
    pair = np.full(prev.G, -1)
    for _ in range(prev.G):
        i, j = np.unravel_index(np.argmin(dist), dist.shape)
        pair[i] = j
        dist[i, :] = np.inf
        dist[:, j] = np.inf
    w = alpha * prev.weights + (1 - alpha) * new.weights[pair]
    means = alpha * prev.means + (1 - alpha) * new.means[pair]
    # Moment matching: the spread between the two means joins the covariance,
    # so a population-wide drift widens a component instead of outrunning it.
    shift = prev.means - new.means[pair]
    covs = np.array([
        _regularize(alpha * prev.covs[g] + (1 - alpha) * new.covs[pair[g]]
                    + alpha * (1 - alpha) * np.outer(shift[g], shift[g]), eps_cov)
        for g in range(prev.G)
    ])
    return GmmState(w / w.sum(), means, covs)


def mahalanobis_to(x: np.ndarray, s: GmmState, g: int) -> float:
    diff = np.asarray(x, dtype=np.float64) - s.means[g]
    return float(math.sqrt(max(diff @ np.linalg.solve(s.covs[g], diff), 0.0)))


def mahalanobis(x: np.ndarray, s: GmmState) -> tuple[float, int]:
    """MD to the component with the highest posterior responsibility."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != s.feature_dim:
        raise ValueError("feature dimension mismatch")
    g = int(np.argmax(_log_joint(x[None], s)[0]))
    return mahalanobis_to(x, s, g), g


def trajectory_score(history: Sequence[float]) -> float:
    if len(history) < 2:
        return 0.0
    return abs(history[-1] - history[-2])


# Thresholds and verdicts


@dataclass(frozen=True)
class Thresholds:
    t_norm: float = math.inf
    t_md: float = math.inf
    t_traj: float = math.inf
    k: float = 6.0
    down_weight: float = 0.5

    @property
    def warm(self) -> bool:
        return math.isinf(self.t_md) and math.isinf(self.t_norm) and math.isinf(self.t_traj)


@dataclass(frozen=True)
class RoundStats:
    md: np.ndarray
    dmd: np.ndarray
    norms: np.ndarray


def update_thresholds(stats: RoundStats, k: float, quantile_traj: float = 0.95,
                      prev: Thresholds | None = None, warmup: bool = False,
                      down_weight: float = 0.5) -> Thresholds:
    if warmup:
        return Thresholds(k=k, down_weight=down_weight)
    if len(stats.md) < 3:
        return prev if prev is not None else Thresholds(k=k, down_weight=down_weight)
    norms = np.asarray(stats.norms, dtype=np.float64)
    med = float(np.median(norms))
    mad = float(np.median(np.abs(norms - med)))
    # sigma_normal is the RMS distance of normal members from their centre
    # (where MD is 0), not the spread of MDs about their own mean.
    sigma = float(np.sqrt(np.mean(np.square(stats.md))))
    return Thresholds(
        t_norm=max(med + k * mad, EPS_THR),
        t_md=max(k * sigma, EPS_THR),
        t_traj=max(float(np.quantile(stats.dmd, quantile_traj)), EPS_THR),
        k=k,
        down_weight=down_weight,
    )


def violations(md: float, dmd: float, norm: float, th: Thresholds) -> int:
    return int(md > th.t_md) + int(dmd > th.t_traj) + int(norm > th.t_norm)


def decide(md: float, dmd: float, norm: float, th: Thresholds) -> tuple[Verdict, float]:
    v = violations(md, dmd, norm, th)
    if v == 0:
        return Verdict.ACCEPT, 1.0
    if v == 1:
        return Verdict.DOWNWEIGHT, th.down_weight
    return Verdict.REJECT, 0.0


def anomaly_score(md: float, dmd: float, norm: float, th: Thresholds) -> float:
    """Largest metric/threshold ratio; 0 while thresholds are still infinite."""
    ratios = [v / t for v, t in ((md, th.t_md), (dmd, th.t_traj), (norm, th.t_norm)) if math.isfinite(t)]
    return max(ratios, default=0.0)


# Stateful auditor


@dataclass(frozen=True)
class AuditConfig:
    blend_alpha: float = 0.5
    k: float = 6.0
    quantile_traj: float = 0.95
    warmup_rounds: int = 3
    down_weight: float = 0.5
    g_candidates: tuple[int, ...] = (1, 2, 3)
    reference_samples: int = 200
    # Cosine feature target: the auditor's clean reference update, or the
    # previous global step ("global-step").
    direction: str = "global-step"

    def __post_init__(self):
        if self.direction not in ("reference", "global-step"):
            raise ValueError("direction must be 'reference' or 'global-step'")
        if not 0 <= self.blend_alpha <= 1:
            raise ValueError("blend_alpha must lie in [0, 1]")
        if not 0 < self.down_weight < 1:
            raise ValueError("down_weight must lie in (0, 1)")
        if self.k <= 0 or not 0 < self.quantile_traj <= 1:
            raise ValueError("need k > 0 and 0 < quantile_traj <= 1")


@dataclass(frozen=True)
class ClientAudit:
    client: int
    features: np.ndarray
    md: float
    dmd: float
    verdict: Verdict
    weight: float
    score: float
    component: int


class Auditor:
    """Round-by-round auditing state (GMM, MD histories, thresholds, table).

    ``utility`` in :meth:`audit_round` scores a candidate update on a small
    clean labelled set the auditor holds; the mixture component whose mean
    update scores best is treated as the benign one.  Without it the
    heaviest component is.
    """

    def __init__(self, table: AuditTable, cfg: AuditConfig = AuditConfig(), seed=None,
                 feature_fn: Callable[[np.ndarray, np.ndarray | None], np.ndarray] = extract_features):
        self.table = table
        self.cfg = cfg
        self.seed = seed
        self.feature_fn = feature_fn
        self.gmm: GmmState | None = None
        self.history: dict[int, list[float]] = {}
        self.thresholds = Thresholds(k=cfg.k, down_weight=cfg.down_weight)
        self.resets = 0

    def _normal_component(self, assigned: np.ndarray, updates: list[np.ndarray],
                          utility: Callable[[np.ndarray], float] | None) -> int:
        """Component whose mean update scores best under ``utility``.

        ``utility`` maps an update to the auditor's clean-data loss after
        applying it (lower is better).  Without one the heaviest component
        is taken as normal.
        """
        if utility is None or self.gmm.G == 1:
            return int(np.argmax(self.gmm.weights))
        best, best_loss = int(np.argmax(self.gmm.weights)), math.inf
        for g in range(self.gmm.G):
            members = np.flatnonzero(assigned == g)
            if members.size == 0:
                continue
            loss = float(utility(np.mean([updates[i] for i in members], axis=0)))
            if loss < best_loss - 1e-12:
                best, best_loss = g, loss
        return best

    def audit_round(self, t: int, updates: dict[int, np.ndarray], direction: np.ndarray | None = None,
                    utility: Callable[[np.ndarray], float] | None = None,
                    ground_truth: frozenset[int] | None = None) -> list[ClientAudit]:
        clients = sorted(updates)
        dim = len(next(iter(updates.values())))
        raw = np.array([self.feature_fn(updates[c], direction) for c in clients])
        x = audit_transform(raw, dim)

        g_seed = None if self.seed is None else (self.seed, t)
        cands = [g for g in self.cfg.g_candidates if g <= len(clients)]
        _, new = select_g_bic(x, cands, g_seed)
        if self.gmm is not None and self.gmm.G == new.G:
            self.gmm = blend_gmm(self.gmm, new, self.cfg.blend_alpha)
        else:
            if self.gmm is not None:
                self.resets += 1
            self.gmm = new

        assigned = np.argmax(_log_joint(x, self.gmm), axis=1)
        normal = self._normal_component(assigned, [updates[c] for c in clients], utility)

        th = self.thresholds
        results = []
        for i, c in enumerate(clients):
            md = mahalanobis_to(x[i], self.gmm, normal)
            hist = self.history.setdefault(c, [])
            hist.append(md)
            dmd = trajectory_score(hist)
            norm = float(raw[i, 0])
            verdict, weight = decide(md, dmd, norm, th)
            results.append(ClientAudit(c, raw[i], md, dmd, verdict, weight,
                                       anomaly_score(md, dmd, norm, th), int(assigned[i])))
            self.table.record(AuditEntry(
                self.table.tags.get(c, str(c)), c, t, tuple(raw[i]), md, dmd, verdict, weight,
                results[-1].score, int(assigned[i]),
                None if ground_truth is None else c in ground_truth,
            ))

        # Thresholds for the next round come from accepted clients that sit in
        # the benign component.
        # Widen the window when too few survive, otherwise one bad round would
        # freeze the thresholds and lock everybody out.
        members = [r for r, g in zip(results, assigned) if g == normal]
        window = [r for r in members if r.verdict is not Verdict.REJECT]
        if len(window) < 3:
            window = members
        stats = RoundStats(
            np.array([r.md for r in window]),
            np.array([r.dmd for r in window]),
            np.array([r.features[0] for r in window]),
        )
        self.thresholds = update_thresholds(
            stats, self.cfg.k, self.cfg.quantile_traj, prev=self.thresholds,
            warmup=t + 1 < self.cfg.warmup_rounds, down_weight=self.cfg.down_weight,
        )
        return results
