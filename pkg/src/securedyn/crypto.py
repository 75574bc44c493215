"""Additively homomorphic ElGamal over a Paillier-style plaintext encoding.

A plaintext level ``m`` in ``[0, n)`` is first mapped to ``g_p^m mod n^2``
and that residue is then ElGamal-encrypted modulo a much larger prime ``p``.
Multiplying ciphertexts multiplies the embedded residues, so as long as the
integer product of all embedded residues stays below ``p`` the product reduced
mod ``n^2`` equals ``g_p^(sum m) mod n^2`` and the sum is recovered with the
Paillier L-function.  Every ciphertext carries a ``depth`` (number of fresh
encryptions folded into it) and the key refuses any operation that would push
the depth beyond ``max_terms``; keygen picks ``p > n^(2 * max_terms)``.

Randomness is always injected by the caller: pass either an ``int`` seed or a
``random.Random`` instance.
"""

from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import gmpy2

__all__ = [
    "CryptoError",
    "ParameterInfeasible",
    "PrimeGenerationFailure",
    "PlaintextOutOfRange",
    "DepthExceeded",
    "LFunctionNotIntegral",
    "SecurityParams",
    "PublicKey",
    "KeyMaterial",
    "Ciphertext",
    "keygen",
    "keygen_from_primes",
    "encrypt",
    "hom_add",
    "scalar_mul",
    "decrypt",
    "encrypt_vector",
    "decrypt_vector",
    "weighted_sum_vector",
    "dump_key",
    "load_key",
    "dump_ciphertext",
    "load_ciphertext",
    "selftest",
    "bench",
]


class CryptoError(Exception):
    pass


class ParameterInfeasible(CryptoError):
    pass


class PrimeGenerationFailure(CryptoError):
    pass


class PlaintextOutOfRange(CryptoError):
    pass


class DepthExceeded(CryptoError):
    pass


class LFunctionNotIntegral(CryptoError):
    pass


# Below this size p is a safe prime and g generates all of Z_p^*.
_SMALL_GROUP_BITS = 200
_PRIME_RETRIES = 200_000


def _subgroup_bits(p_bits: int) -> int:
    if p_bits >= 3072:
        return 256
    if p_bits >= 2048:
        return 224
    return 160


@dataclass(frozen=True)
class SecurityParams:
    plaintext_prime_bits: int = 16
    elgamal_prime_bits: int | None = None
    max_aggregation_terms: int = 40

    def __post_init__(self):
        if self.plaintext_prime_bits < 8:
            raise ParameterInfeasible(
                f"plaintext_prime_bits must be >= 8, got {self.plaintext_prime_bits}"
            )
        if self.max_aggregation_terms < 1:
            raise ParameterInfeasible("max_aggregation_terms must be >= 1")
        if self.elgamal_prime_bits is None:
            object.__setattr__(self, "elgamal_prime_bits", self.required_elgamal_bits)
        elif self.elgamal_prime_bits < self.required_elgamal_bits:
            raise ParameterInfeasible(
                f"elgamal_prime_bits={self.elgamal_prime_bits} cannot satisfy "
                f"p > n^(2*{self.max_aggregation_terms}) with "
                f"{self.plaintext_prime_bits}-bit plaintext primes; need at least "
                f"{self.required_elgamal_bits} bits"
            )

    @property
    def required_elgamal_bits(self) -> int:
        # n has exactly 2b bits, so n^(2N) < 2^(4bN).
        return 4 * self.plaintext_prime_bits * self.max_aggregation_terms + 1

    @property
    def min_plaintext_modulus(self) -> int:
        """Smallest n that keygen can produce for these parameters."""
        b = self.plaintext_prime_bits
        return 1 << (2 * b - 1)


@dataclass(frozen=True)
class PublicKey:
    p: int
    g: int
    y: int
    n: int
    g_p: int
    max_terms: int
    # Exponent range for fresh randomness (order of g's subgroup, or p - 1).
    r_bound: int

    @property
    def n_squared(self) -> int:
        return self.n * self.n


@dataclass(frozen=True)
class KeyMaterial:
    p: int
    g: int
    x: int
    y: int
    n: int
    lam: int
    g_p: int
    lfunc_denominator_inverse: int
    max_terms: int
    r_bound: int
    p_p: int = field(repr=False, default=0)
    q_p: int = field(repr=False, default=0)

    @property
    def public(self) -> PublicKey:
        return PublicKey(
            p=self.p, g=self.g, y=self.y, n=self.n, g_p=self.g_p,
            max_terms=self.max_terms, r_bound=self.r_bound,
        )

    @property
    def n_squared(self) -> int:
        return self.n * self.n


@dataclass(frozen=True)
class Ciphertext:
    c1: int
    c2: int
    depth: int = 1


def _rng(seed) -> random.Random:
    if isinstance(seed, random.Random):
        return seed
    return random.Random(seed)


def _lfunc(u: int, n: int) -> int:
    if (u - 1) % n:
        raise LFunctionNotIntegral(
            "L-function argument is not 1 mod n; the aggregation depth bound or "
            "key parameters were violated"
        )
    return (u - 1) // n


def _random_prime(bits: int, rng: random.Random, top_two: bool = False) -> int:
    high = (3 if top_two else 1) << (bits - (2 if top_two else 1))
    for _ in range(_PRIME_RETRIES):
        cand = rng.getrandbits(bits) | high | 1
        if gmpy2.is_prime(cand, 30):
            return cand
    raise PrimeGenerationFailure(f"no {bits}-bit prime found")


def _safe_prime_group(bits: int, rng: random.Random) -> tuple[int, int, int]:
    """Safe prime p = 2q + 1 and a generator of Z_p^*."""
    for _ in range(_PRIME_RETRIES):
        q = rng.getrandbits(bits - 1) | (1 << (bits - 2)) | 1
        if not gmpy2.is_prime(q, 30):
            continue
        p = 2 * q + 1
        if not gmpy2.is_prime(p, 30):
            continue
        for _ in range(1000):
            g = rng.randrange(2, p - 1)
            if pow(g, 2, p) != 1 and pow(g, q, p) != 1:
                return p, g, p - 1
    raise PrimeGenerationFailure(f"no {bits}-bit safe prime found")


def _subgroup_group(bits: int, rng: random.Random) -> tuple[int, int, int]:
    """Prime p = 2*q*h + 1 with q prime; g generates the order-q subgroup."""
    q_bits = _subgroup_bits(bits)
    q = _random_prime(q_bits, rng)
    lo = ((1 << (bits - 1)) - 1) // (2 * q) + 1
    hi = ((1 << bits) - 2) // (2 * q)
    for _ in range(_PRIME_RETRIES):
        h = rng.randrange(lo, hi + 1)
        p = 2 * q * h + 1
        if p.bit_length() != bits or not gmpy2.is_prime(p, 30):
            continue
        cofactor = (p - 1) // q
        for _ in range(1000):
            g = pow(rng.randrange(2, p - 1), cofactor, p)
            if g != 1:
                return p, g, q
    raise PrimeGenerationFailure(f"no {bits}-bit prime with a {q_bits}-bit subgroup found")


def keygen_from_primes(
    p_p: int, q_p: int, elgamal_prime_bits: int, max_terms: int, seed=None
) -> KeyMaterial:
    """Build keys around given plaintext primes.

    Used directly by tests that need a tiny, enumerable plaintext space
    (e.g. ``p_p=3, q_p=5``); :func:`keygen` draws the primes itself.
    """
    rng = _rng(seed)
    if p_p == q_p:
        raise ParameterInfeasible("plaintext primes must be distinct")
    n = p_p * q_p
    n2 = n * n
    lam = math.lcm(p_p - 1, q_p - 1)
    g_p = n + 1
    denom = _lfunc(pow(g_p, lam, n2), n)
    if math.gcd(denom, n) != 1:
        raise ParameterInfeasible("gcd(L(g_p^lambda mod n^2), n) != 1")
    bound = n ** (2 * max_terms)
    needed = bound.bit_length() + 1
    if elgamal_prime_bits < needed:
        raise ParameterInfeasible(
            f"p > n^(2*{max_terms}) needs at least {needed} bits, "
            f"got elgamal_prime_bits={elgamal_prime_bits}"
        )
    if elgamal_prime_bits < _SMALL_GROUP_BITS:
        p, g, r_bound = _safe_prime_group(elgamal_prime_bits, rng)
    else:
        p, g, r_bound = _subgroup_group(elgamal_prime_bits, rng)
    assert p > bound
    x = rng.randrange(1, r_bound)
    return KeyMaterial(
        p=p, g=g, x=x, y=pow(g, x, p), n=n, lam=lam, g_p=g_p,
        lfunc_denominator_inverse=pow(denom, -1, n), max_terms=max_terms,
        r_bound=r_bound, p_p=p_p, q_p=q_p,
    )


def keygen(params: SecurityParams, seed=None) -> KeyMaterial:
    rng = _rng(seed)
    b = params.plaintext_prime_bits
    p_p = _random_prime(b, rng, top_two=True)
    for _ in range(_PRIME_RETRIES):
        q_p = _random_prime(b, rng, top_two=True)
        if q_p != p_p and math.gcd(p_p * q_p, (p_p - 1) * (q_p - 1)) == 1:
            break
    else:  # pragma: no cover
        raise PrimeGenerationFailure("could not find a distinct second plaintext prime")
    return keygen_from_primes(
        p_p, q_p, params.elgamal_prime_bits, params.max_aggregation_terms, rng
    )


class _FixedBase:
    """Windowed fixed-base exponentiation table (8-bit windows)."""

    __slots__ = ("p", "table")

    def __init__(self, base: int, p: int, exp_bits: int):
        self.p = gmpy2.mpz(p)
        self.table = []
        b = gmpy2.mpz(base)
        for _ in range((exp_bits + 7) // 8):
            row = [gmpy2.mpz(1)] * 256
            acc = gmpy2.mpz(1)
            for j in range(1, 256):
                acc = acc * b % self.p
                row[j] = acc
            self.table.append(row)
            b = acc * b % self.p
        # b is now base^(256^rows); unused.

    def pow(self, e: int):
        acc = gmpy2.mpz(1)
        i = 0
        while e:
            d = e & 0xFF
            if d:
                acc = acc * self.table[i][d] % self.p
            e >>= 8
            i += 1
        return acc


_FIXED_BASE_CACHE: dict[tuple[int, int, int], tuple[_FixedBase, _FixedBase]] = {}


def _tables(pk: PublicKey) -> tuple[_FixedBase, _FixedBase]:
    key = (pk.p, pk.g, pk.y)
    tabs = _FIXED_BASE_CACHE.get(key)
    if tabs is None:
        bits = pk.r_bound.bit_length()
        tabs = (_FixedBase(pk.g, pk.p, bits), _FixedBase(pk.y, pk.p, bits))
        if len(_FIXED_BASE_CACHE) > 16:
            _FIXED_BASE_CACHE.clear()
        _FIXED_BASE_CACHE[key] = tabs
    return tabs


def _as_public(key) -> PublicKey:
    return key.public if isinstance(key, KeyMaterial) else key


def encrypt(key, m: int, seed=None) -> Ciphertext:
    pk = _as_public(key)
    if not 0 <= m < pk.n:
        raise PlaintextOutOfRange(f"plaintext {m} outside [0, {pk.n})")
    rng = _rng(seed)
    r = rng.randrange(1, pk.r_bound)
    gt, yt = _tables(pk)
    # g_p = n + 1  =>  g_p^m mod n^2 = 1 + m*n
    encoded = (1 + m * pk.n) % pk.n_squared if pk.g_p == pk.n + 1 else pow(pk.g_p, m, pk.n_squared)
    return Ciphertext(int(gt.pow(r)), int(encoded * yt.pow(r) % pk.p), 1)


def hom_add(key, a: Ciphertext, b: Ciphertext) -> Ciphertext:
    pk = _as_public(key)
    depth = a.depth + b.depth
    if depth > pk.max_terms:
        raise DepthExceeded(f"depth {depth} exceeds max_terms={pk.max_terms}")
    return Ciphertext(a.c1 * b.c1 % pk.p, a.c2 * b.c2 % pk.p, depth)


def scalar_mul(key, a: Ciphertext, k: int, seed=None) -> Ciphertext:
    """Encryption of ``k * m``.  ``k = 0`` yields a fresh encryption of 0."""
    pk = _as_public(key)
    if k < 0:
        raise ValueError("scalar must be non-negative")
    if k == 0:
        return encrypt(pk, 0, seed)
    depth = a.depth * k
    if depth > pk.max_terms:
        raise DepthExceeded(f"depth {depth} exceeds max_terms={pk.max_terms}")
    return Ciphertext(
        int(gmpy2.powmod(a.c1, k, pk.p)), int(gmpy2.powmod(a.c2, k, pk.p)), depth
    )


def decrypt(km: KeyMaterial, c: Ciphertext) -> int:
    p = km.p
    shared = gmpy2.powmod(c.c1, km.x, p)
    m_prime = int(c.c2 * gmpy2.invert(shared, p) % p) % km.n_squared
    u = pow(m_prime, km.lam, km.n_squared)
    return _lfunc(u, km.n) * km.lfunc_denominator_inverse % km.n


# Vector helpers: one ciphertext per coordinate, same semantics as above.


def encrypt_vector(key, levels: Iterable[int], seed=None) -> list[Ciphertext]:
    rng = _rng(seed)
    return [encrypt(key, int(m), rng) for m in levels]


def decrypt_vector(km: KeyMaterial, cts: Sequence[Ciphertext]) -> list[int]:
    return [decrypt(km, c) for c in cts]


def weighted_sum_vector(
    key, vectors: Sequence[Sequence[Ciphertext]], weights: Sequence[int]
) -> list[Ciphertext]:
    """Coordinate-wise ``sum_i w_i * vec_i`` over ciphertexts.

    Zero-weight vectors are dropped instead of multiplied by 0 (equivalent
    plaintext, no extra encryption).  At least one weight must be positive.
    """
    pk = _as_public(key)
    terms = [(v, int(w)) for v, w in zip(vectors, weights) if w > 0]
    if not terms:
        raise ValueError("weighted sum needs at least one positive weight")
    out = None
    for vec, w in terms:
        scaled = vec if w == 1 else [scalar_mul(pk, c, w) for c in vec]
        out = scaled if out is None else [hom_add(pk, a, b) for a, b in zip(out, scaled)]
    return out


# Text formats: one "name = decimal" pair per line.

_KEY_FIELDS = ("p", "g", "x", "y", "n", "lam", "g_p", "lfunc_denominator_inverse",
               "max_terms", "r_bound", "p_p", "q_p")


def dump_key(km: KeyMaterial) -> str:
    return "".join(f"{name} = {getattr(km, name)}\n" for name in _KEY_FIELDS)


def _parse_kv(text: str) -> dict[str, int]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected 'name = value'")
        out[name.strip()] = int(value.strip())
    return out


def load_key(text: str) -> KeyMaterial:
    fields = _parse_kv(text)
    missing = [f for f in _KEY_FIELDS if f not in fields]
    if missing:
        raise ValueError(f"key text missing fields: {', '.join(missing)}")
    km = KeyMaterial(**{f: fields[f] for f in _KEY_FIELDS})
    if pow(km.g, km.x, km.p) != km.y:
        raise ValueError("inconsistent key: y != g^x mod p")
    return km


def dump_ciphertext(c: Ciphertext) -> str:
    return f"{c.c1} {c.c2} {c.depth}"


def load_ciphertext(text: str) -> Ciphertext:
    c1, c2, depth = text.split()
    return Ciphertext(int(c1), int(c2), int(depth))


# Diagnostics


def _dlog(km: KeyMaterial, c: Ciphertext) -> int:
    """Decrypt by unmasking and enumerating ``g_p^m mod n^2`` (tiny n only)."""
    n2 = km.n_squared
    m_prime = c.c2 * pow(pow(c.c1, km.x, km.p), -1, km.p) % km.p % n2
    hits = [m for m in range(km.n) if pow(km.g_p, m, n2) == m_prime]
    if len(hits) != 1:
        raise CryptoError(f"dlog oracle found {len(hits)} preimages")
    return hits[0]


def selftest(seed: int = 0) -> int:
    """Exhaustive checks on the n = 15 instance; returns the number of checks.

    Every result is compared against both the expected plaintext and a
    brute-force discrete log.  Raises ``CryptoError`` on the first mismatch.
    """
    km = keygen_from_primes(3, 5, elgamal_prime_bits=64, max_terms=6, seed=seed)
    rng = random.Random(seed)
    checks = 0

    def expect(c: Ciphertext, want: int, what: str) -> None:
        nonlocal checks
        got, oracle = decrypt(km, c), _dlog(km, c)
        if not got == oracle == want:
            raise CryptoError(f"{what}: decrypt={got} oracle={oracle} expected={want}")
        checks += 1

    for m in range(km.n):
        expect(encrypt(km, m, rng), m, f"roundtrip {m}")
    for a in range(km.n):
        for b in range(km.n - a):
            expect(hom_add(km, encrypt(km, a, rng), encrypt(km, b, rng)), a + b, f"{a} + {b}")
        for k in range(4):
            if a * k < km.n:
                expect(scalar_mul(km, encrypt(km, a, rng), k, rng), a * k, f"{k} * {a}")
    return checks


@dataclass(frozen=True)
class BenchRow:
    elgamal_bits: int
    plaintext_prime_bits: int
    keygen_seconds: float
    encrypt_per_sec: float
    add_per_sec: float
    scalar_per_sec: float
    decrypt_per_sec: float


def _throughput(fn, min_seconds: float) -> float:
    """Calls per second of ``fn(i)``, timed over at least ``min_seconds``."""
    done, start = 0, time.perf_counter()
    while True:
        for _ in range(32):
            fn(done)
            done += 1
        elapsed = time.perf_counter() - start
        if elapsed >= min_seconds:
            return done / elapsed


def bench(sizes: Sequence[int] = (128, 256, 512, 1024, 2048), min_seconds: float = 0.3,
          seed: int = 0) -> list[BenchRow]:
    """Throughput of each primitive per ElGamal prime size.

    Each size uses the largest plaintext primes that still admit two
    aggregation terms, so one addition or doubling is always legal.
    """
    rows = []
    for bits in sizes:
        b = (bits - 1) // 8
        start = time.perf_counter()
        km = keygen(SecurityParams(b, bits, 2), seed=seed)
        kg = time.perf_counter() - start
        rng = random.Random(seed)
        msgs = [rng.randrange(km.n // 2) for _ in range(64)]
        cts = [encrypt(km, m, rng) for m in msgs]  # also builds the fixed-base tables
        if decrypt_vector(km, cts) != msgs:
            raise CryptoError(f"{bits}-bit key failed its own roundtrip")
        rows.append(BenchRow(
            bits, b, kg,
            _throughput(lambda i: encrypt(km, msgs[i % 64], rng), min_seconds),
            _throughput(lambda i: hom_add(km, cts[i % 64], cts[(i + 1) % 64]), min_seconds),
            _throughput(lambda i: scalar_mul(km, cts[i % 64], 2), min_seconds),
            _throughput(lambda i: decrypt(km, cts[i % 64]), min_seconds),
        ))
    return rows
