import random
from functools import reduce

import pytest
from hypothesis import given, settings, strategies as st

from securedyn import crypto as C

from oracles import dlog_decrypt as dlog_oracle


@pytest.fixture(scope="module")
def tiny():
    # n = 15, max_terms chosen so p fits comfortably below the safe-prime cutoff.
    return C.keygen_from_primes(3, 5, elgamal_prime_bits=64, max_terms=6, seed=1)


@pytest.fixture(scope="module")
def key512():
    return C.keygen(C.SecurityParams(16, 512, 7), seed=2)


def test_small_instance_constants(tiny):
    assert (tiny.n, tiny.lam, tiny.g_p) == (15, 4, 16)
    assert pow(16, 4, 225) == 61 and (61 - 1) // 15 == 4
    assert tiny.lfunc_denominator_inverse == 4
    assert pow(tiny.g, tiny.x, tiny.p) == tiny.y
    assert tiny.p > 15 ** 12


def test_worked_decryption_of_seven(tiny):
    assert pow(16, 7, 225) == 106
    assert pow(106, 4, 225) == 196
    assert (196 - 1) // 15 * 4 % 15 == 7
    assert C.decrypt(tiny, C.encrypt(tiny, 7, seed=3)) == 7


def test_exhaustive_roundtrip_matches_oracle(tiny):
    rng = random.Random(0)
    for m in range(15):
        c = C.encrypt(tiny, m, rng)
        assert C.decrypt(tiny, c) == m == dlog_oracle(tiny, c)


def test_exhaustive_addition_and_scalar(tiny):
    rng = random.Random(1)
    for a in range(15):
        for b in range(15 - a):
            s = C.hom_add(tiny, C.encrypt(tiny, a, rng), C.encrypt(tiny, b, rng))
            assert C.decrypt(tiny, s) == a + b == dlog_oracle(tiny, s)
        for k in range(0, 4):
            if a * k < 15:
                c = C.scalar_mul(tiny, C.encrypt(tiny, a, rng), k, rng)
                assert C.decrypt(tiny, c) == a * k == dlog_oracle(tiny, c)


def test_zero_encryption_is_pure_mask(tiny):
    rng = random.Random(5)
    state = rng.getstate()
    c = C.encrypt(tiny, 0, rng)
    rng.setstate(state)
    r = rng.randrange(1, tiny.r_bound)
    assert c.c2 == pow(tiny.y, r, tiny.p)
    assert C.decrypt(tiny, c) == 0


def test_fresh_randomness_gives_distinct_ciphertexts(key512):
    a, b = C.encrypt(key512, 9, seed=1), C.encrypt(key512, 9, seed=2)
    assert (a.c1, a.c2) != (b.c1, b.c2)
    assert C.decrypt(key512, a) == C.decrypt(key512, b) == 9


def test_depth_tracking_and_limit(tiny):
    ones = [C.encrypt(tiny, 1, seed=i) for i in range(6)]
    total = reduce(lambda a, b: C.hom_add(tiny, a, b), ones)
    assert total.depth == 6 and C.decrypt(tiny, total) == 6
    with pytest.raises(C.DepthExceeded):
        C.hom_add(tiny, total, ones[0])
    with pytest.raises(C.DepthExceeded):
        C.scalar_mul(tiny, ones[0], 7)


def test_twenty_ones_fold(key512):
    key = C.keygen(C.SecurityParams(16, None, 20), seed=4)
    total = reduce(lambda a, b: C.hom_add(key, a, b), (C.encrypt(key, 1, seed=i) for i in range(20)))
    assert C.decrypt(key, total) == 20


def test_scalar_edge_cases(key512):
    c = C.encrypt(key512, 5, seed=0)
    assert C.decrypt(key512, C.scalar_mul(key512, c, 1)) == 5
    zero = C.scalar_mul(key512, c, 0, seed=1)
    assert C.decrypt(key512, zero) == 0 and zero.depth == 1
    with pytest.raises(ValueError):
        C.scalar_mul(key512, c, -1)


def test_plaintext_out_of_range(tiny):
    with pytest.raises(C.PlaintextOutOfRange):
        C.encrypt(tiny, 15, seed=0)
    with pytest.raises(C.PlaintextOutOfRange):
        C.encrypt(tiny, -1, seed=0)


def test_security_param_bounds():
    p = C.SecurityParams(16, None, 20)
    assert p.elgamal_prime_bits >= 2 * 32 * 20
    with pytest.raises(C.ParameterInfeasible):
        C.SecurityParams(16, 1000, 20)
    with pytest.raises(C.ParameterInfeasible):
        C.SecurityParams(7)
    with pytest.raises(C.ParameterInfeasible):
        C.keygen_from_primes(3, 5, 20, 6)


def test_keygen_is_deterministic_and_sized():
    params = C.SecurityParams(16, None, 4)
    a, b = C.keygen(params, seed=7), C.keygen(params, seed=7)
    assert a == b
    assert a.n.bit_length() == 32
    assert a.p.bit_length() == params.elgamal_prime_bits
    assert a.p > a.n ** 8


def test_key_and_ciphertext_text_roundtrip(key512):
    km = C.load_key(C.dump_key(key512))
    assert km == key512
    c = C.hom_add(key512, C.encrypt(key512, 3, seed=1), C.encrypt(key512, 4, seed=2))
    assert C.load_ciphertext(C.dump_ciphertext(c)) == c
    bad = C.dump_key(key512).replace(f"x = {key512.x}", f"x = {key512.x + 1}")
    with pytest.raises(ValueError):
        C.load_key(bad)


def test_weighted_sum_vector(key512):
    rng = random.Random(3)
    vecs = [[rng.randrange(100) for _ in range(4)] for _ in range(3)]
    weights = [2, 0, 1]
    cts = [C.encrypt_vector(key512, v, rng) for v in vecs]
    out = C.decrypt_vector(key512, C.weighted_sum_vector(key512, cts, weights))
    assert out == [sum(w * v[j] for w, v in zip(weights, vecs)) for j in range(4)]
    with pytest.raises(ValueError):
        C.weighted_sum_vector(key512, cts, [0, 0, 0])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 2000), min_size=1, max_size=7), st.randoms(use_true_random=False))
def test_fold_order_does_not_matter(key512, values, rnd):
    cts = [C.encrypt(key512, v, rnd) for v in values]
    shuffled = cts[:]
    rnd.shuffle(shuffled)
    left = reduce(lambda a, b: C.hom_add(key512, a, b), cts)
    right = reduce(lambda a, b: C.hom_add(key512, a, b), shuffled)
    assert C.decrypt(key512, left) == C.decrypt(key512, right) == sum(values)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**20), st.integers(0, 2**20), st.integers(0, 7), st.integers(0, 2**32))
def test_homomorphic_laws(key512, m1, m2, k, seed):
    rng = random.Random(seed)
    a, b = C.encrypt(key512, m1, rng), C.encrypt(key512, m2, rng)
    assert C.decrypt(key512, a) == m1
    assert C.decrypt(key512, C.hom_add(key512, a, b)) == m1 + m2
    assert C.decrypt(key512, C.scalar_mul(key512, a, k, rng)) == k * m1
