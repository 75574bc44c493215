import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.mixture import GaussianMixture

from securedyn import audit as AU
from securedyn.metrics import roc_auc


def spherical_state(means, var=1.0):
    means = np.atleast_2d(np.asarray(means, dtype=float))
    g, d = means.shape
    return AU.GmmState(np.full(g, 1 / g), means, np.stack([np.eye(d) * var] * g))


# registration and table


def test_registration():
    table = AU.register_clients(20, seed=0)
    assert len(set(table.tags.values())) == 20
    assert len(AU.register_clients(2, seed=0).tags) == 2
    before = dict(table.tags)
    with pytest.raises(AU.RegistrationError):
        table.register(3, "fresh")
    with pytest.raises(AU.RegistrationError):
        table.register(99, before[0])
    assert table.tags == before
    with pytest.raises(AU.RegistrationError):
        AU.register_clients(1)


def test_table_rejects_duplicate_round_entry_and_exports_csv():
    table = AU.register_clients(2, seed=1)
    entry = AU.AuditEntry(table.tags[0], 0, 4, (1.0, 2, 3, 4, 5), 0.5, 0.1, AU.Verdict.ACCEPT, 1.0, 0.2, 0)
    table.record(entry)
    with pytest.raises(AU.RegistrationError):
        table.record(entry)
    text = table.to_csv(["seed: 1"])
    lines = text.splitlines()
    assert lines[0] == "# seed: 1"
    assert lines[1].startswith("tag_id,client,round,l2_norm")
    assert lines[2].split(",")[:3] == [table.tags[0], "0", "4"]


# features


def test_feature_examples():
    assert AU.extract_features(np.zeros(4)).tolist() == [0, 0, 0, 0, 1]
    f = AU.extract_features(np.array([3.0, 4.0]))
    assert f.tolist() == [5.0, 7 / 5, 0.0, 3.5, 0.0]
    u = np.array([1.0, -2.0, 0.5])
    assert AU.extract_features(u, 3 * u)[2] == pytest.approx(1.0, abs=1e-12)
    assert AU.extract_features(u, -u)[2] == pytest.approx(-1.0, abs=1e-12)
    with pytest.raises(ValueError):
        AU.extract_features(np.array([]))


# mixture fitting


def two_blobs(seed, n=300, centers=((0, 0, 0), (8, 8, 8))):
    rng = np.random.default_rng(seed)
    return np.concatenate([rng.normal(size=(n, 3)) + np.array(c) for c in centers])


def test_fit_two_blobs_recovers_centers_and_matches_sklearn():
    x = two_blobs(0)
    s = AU.fit_gmm(x, 2, seed=1)
    order = np.argsort(s.means[:, 0])
    assert np.abs(s.means[order] - [[0, 0, 0], [8, 8, 8]]).max() < 0.15
    assert s.weights.sum() == pytest.approx(1, abs=1e-9)
    ref = GaussianMixture(2, covariance_type="full", reg_covar=AU.EPS_COV, random_state=0).fit(x)
    ref_means = ref.means_[np.argsort(ref.means_[:, 0])]
    assert np.abs(s.means[order] - ref_means).max() < 1e-3
    assert AU.gmm_loglik(x, s) / len(x) == pytest.approx(ref.score(x), abs=1e-4)


def test_single_component_is_closed_form():
    x = np.random.default_rng(2).normal(size=(50, 3))
    s = AU.fit_gmm(x, 1)
    assert np.allclose(s.means[0], x.mean(0))
    assert np.allclose(s.covs[0], np.cov(x, rowvar=False, bias=True), atol=AU.EPS_COV)


def test_fit_is_deterministic_and_handles_degenerate_rows():
    x = two_blobs(3, 40)
    a, b = AU.fit_gmm(x, 3, seed=5), AU.fit_gmm(x, 3, seed=5)
    assert all(np.array_equal(p, q) for p, q in zip((a.weights, a.means, a.covs), (b.weights, b.means, b.covs)))
    same = AU.fit_gmm(np.ones((6, 2)), 2, seed=0)
    assert same.G == 1 and np.linalg.eigvalsh(same.covs[0]).min() >= AU.EPS_COV - 1e-15
    with pytest.raises(ValueError):
        AU.fit_gmm(np.zeros((1, 2)), 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 3))
def test_gmm_state_invariants(seed, g):
    x = np.random.default_rng(seed).normal(size=(30, 4)) * [1, 2, 0.5, 3]
    s = AU.fit_gmm(x, g, seed=seed)
    assert np.all(s.weights > 0) and abs(s.weights.sum() - 1) < 1e-9
    for c in s.covs:
        assert np.array_equal(c, c.T) or np.abs(c - c.T).max() < 1e-12
        assert np.linalg.eigvalsh(c).min() >= AU.EPS_COV * (1 - 1e-9)


def test_bic_selection():
    blob = np.random.default_rng(4).normal(size=(300, 3))
    assert AU.select_g_bic(blob, [1, 2, 3], seed=0)[0] == 1
    assert AU.select_g_bic(two_blobs(4), [1, 2, 3], seed=0)[0] == 2
    assert AU.select_g_bic(blob, [2], seed=0)[0] == 2
    s = AU.fit_gmm(blob, 1)
    assert AU.bic(blob, s) == pytest.approx(-2 * AU.gmm_loglik(blob, s) + 9 * math.log(300))


# blending


def test_blend_examples():
    prev, new = spherical_state([[0.0, 0.0]]), spherical_state([[2.0, 0.0]])
    assert AU.blend_gmm(prev, new, 1.0).means.tolist() == [[0, 0]]
    assert AU.blend_gmm(prev, new, 0.0).means.tolist() == [[2, 0]]
    half = AU.blend_gmm(prev, new, 0.5)
    assert half.means.tolist() == [[1, 0]]
    # Moment matching adds alpha(1-alpha) * shift shift^T.
    assert half.covs[0].tolist() == [[2.0, 0], [0, 1.0]]
    three = spherical_state([[0.0, 0], [5, 5], [9, 0]])
    assert AU.blend_gmm(prev, three, 0.5) is three
    with pytest.raises(ValueError):
        AU.blend_gmm(prev, spherical_state([[0.0, 0, 0]]), 0.5)


def test_blend_pairs_components_by_nearest_mean():
    prev = spherical_state([[0.0, 0], [10, 10]])
    new = spherical_state([[10.0, 12], [0, 2]])
    out = AU.blend_gmm(prev, new, 0.5)
    assert out.means.tolist() == [[0, 1], [10, 11]]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.floats(0, 1))
def test_blend_fixed_point(seed, alpha):
    x = np.random.default_rng(seed).normal(size=(40, 3))
    s = AU.fit_gmm(x, 2, seed=seed)
    out = AU.blend_gmm(s, s, alpha)
    assert np.abs(out.weights - s.weights).max() < 1e-12
    assert np.abs(out.means - s.means).max() < 1e-12
    assert np.abs(out.covs - s.covs).max() < 1e-12


# distances


def test_mahalanobis_examples():
    s = spherical_state([[0.0, 0.0]])
    assert AU.mahalanobis(np.zeros(2), s) == (0.0, 0)
    assert AU.mahalanobis(np.array([3.0, 4.0]), s)[0] == pytest.approx(5.0)
    diag = AU.GmmState(np.ones(1), np.zeros((1, 2)), np.array([np.diag([4.0, 1.0])]))
    assert AU.mahalanobis(np.array([2.0, 0.0]), diag)[0] == pytest.approx(1.0)
    two = spherical_state([[0.0, 0], [10, 0]])
    assert AU.mahalanobis(np.array([9.0, 0]), two) == (pytest.approx(1.0), 1)
    with pytest.raises(ValueError):
        AU.mahalanobis(np.zeros(3), s)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31))
def test_mahalanobis_linear_invariance(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 6))
    a = rng.normal(size=(d, d)) + 3 * np.eye(d)
    root = rng.normal(size=(d, d))
    cov = root @ root.T + np.eye(d)
    mean, x = rng.normal(size=d), rng.normal(size=d) * 3
    s = AU.GmmState(np.ones(1), mean[None], cov[None])
    t = AU.GmmState(np.ones(1), (a @ mean)[None], (a @ cov @ a.T)[None])
    assert abs(AU.mahalanobis_to(x, s, 0) - AU.mahalanobis_to(a @ x, t, 0)) < 1e-9


def test_trajectory_examples():
    assert AU.trajectory_score([1.5, 2.0]) == 0.5
    assert AU.trajectory_score([2.0]) == 0.0
    assert AU.trajectory_score([3, 3, 3]) == 0.0


# thresholds and verdicts


def test_threshold_examples():
    stats = AU.RoundStats(np.full(4, 0.2), np.array([0.0, 0.1, 0.2, 0.3]), np.array([1.0, 1, 2, 3]))
    th = AU.update_thresholds(stats, k=3)
    assert th.t_md == pytest.approx(0.6)
    assert th.t_norm == pytest.approx(1.5 + 3 * 0.5)
    assert th.t_traj == pytest.approx(np.quantile([0, 0.1, 0.2, 0.3], 0.95))
    assert AU.update_thresholds(stats, 3, warmup=True).warm
    zero = AU.update_thresholds(AU.RoundStats(np.zeros(3), np.zeros(3), np.zeros(3)), 3)
    assert zero.t_md == zero.t_traj == zero.t_norm == AU.EPS_THR
    few = AU.RoundStats(np.ones(2), np.ones(2), np.ones(2))
    assert AU.update_thresholds(few, 3, prev=th) is th


def test_decide_examples():
    th = AU.Thresholds(t_norm=1.0, t_md=1.0, t_traj=1.0, down_weight=0.5)
    assert AU.decide(0.5, 0.5, 0.5, th) == (AU.Verdict.ACCEPT, 1.0)
    assert AU.decide(2.0, 0.5, 0.5, th) == (AU.Verdict.DOWNWEIGHT, 0.5)
    assert AU.decide(2.0, 0.5, 2.0, th) == (AU.Verdict.REJECT, 0.0)
    assert AU.decide(9, 9, 9, AU.Thresholds()) == (AU.Verdict.ACCEPT, 1.0)
    assert AU.anomaly_score(2.0, 0.5, 3.0, th) == 3.0
    assert AU.anomaly_score(2.0, 0.5, 3.0, AU.Thresholds()) == 0.0


def test_audit_config_validation():
    with pytest.raises(ValueError):
        AU.AuditConfig(direction="sideways")
    with pytest.raises(ValueError):
        AU.AuditConfig(down_weight=1.0)
    with pytest.raises(ValueError):
        AU.AuditConfig(blend_alpha=1.5)


# auditor over synthetic rounds


def synthetic_updates(rng, k, adversaries, dim=200, boost=10.0):
    """Benign updates scatter around a shared step; adversaries scale theirs."""
    base = rng.normal(0, 0.01, dim)
    spread = np.linalg.norm(base) / math.sqrt(dim) * 0.5
    return {c: (base + rng.normal(0, spread, dim)) * (boost if c in adversaries else 1.0) for c in range(k)}


def run_trial(seed, rounds=10, k=20, ratio=0.3):
    rng = np.random.default_rng(seed)
    adv = frozenset(rng.choice(k, int(ratio * k), replace=False).tolist())
    auditor = AU.Auditor(AU.register_clients(k, seed), AU.AuditConfig(), seed=seed)
    per_round = []
    for t in range(rounds):
        res = auditor.audit_round(t, synthetic_updates(rng, k, adv), ground_truth=adv)
        if t >= auditor.cfg.warmup_rounds:
            per_round.append(res)
    return adv, per_round, auditor


def test_auditor_is_deterministic():
    a = run_trial(7, rounds=6)[2].table.to_csv()
    b = run_trial(7, rounds=6)[2].table.to_csv()
    assert a == b


def test_warmup_accepts_everyone():
    adv, _, auditor = run_trial(1, rounds=3)
    assert all(e.verdict is AU.Verdict.ACCEPT for e in auditor.table.entries)
    assert len(auditor.table.entries) == 60
    assert {e.is_adversary for e in auditor.table.entries if e.client in adv} == {True}


def test_separation_power_over_twenty_trials():
    adv_rej, ben_rej = [], []
    for seed in range(20):
        adv, rounds, _ = run_trial(seed)
        verdicts = [(r.client in adv, r.verdict is AU.Verdict.REJECT) for res in rounds for r in res]
        adv_rej.append(np.mean([rej for is_adv, rej in verdicts if is_adv]))
        ben_rej.append(np.mean([rej for is_adv, rej in verdicts if not is_adv]))
    assert np.mean(adv_rej) >= 0.90
    assert np.mean(ben_rej) <= 0.05


def test_anomaly_score_roc_on_synthetic_rounds():
    aucs = []
    for seed in range(20):
        adv, rounds, _ = run_trial(seed)
        for res in rounds:
            aucs.append(roc_auc([r.score for r in res], [r.client in adv for r in res]))
    assert np.mean(aucs) >= 0.95


def test_utility_picks_normal_component():
    rng = np.random.default_rng(0)
    adv = frozenset(range(8))
    ups = synthetic_updates(rng, 20, adv, boost=1.0)
    for c in adv:
        ups[c] = -ups[c] * 5
    target = np.mean([ups[c] for c in range(8, 20)], axis=0)
    auditor = AU.Auditor(AU.register_clients(20, 0), AU.AuditConfig(), seed=0)
    res = auditor.audit_round(0, ups, utility=lambda u: float(np.linalg.norm(u - target)))
    normal_md = np.mean([r.md for r in res if r.client not in adv])
    adv_md = np.mean([r.md for r in res if r.client in adv])
    assert normal_md < adv_md
