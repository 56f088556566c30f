"""Shared randomness, noise primitives, hashing, Hadamard machinery and budget accounting.

Everything here is deterministic given a master seed: substreams are derived
with a keyed hash, so any participant (user or curator side of the simulator)
can re-derive the same values independently and in parallel.
"""

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

# Mersenne prime field used by the pairwise-independent hash family.
MERSENNE61 = (1 << 61) - 1


class BudgetExceeded(RuntimeError):
    """A user was charged beyond the privacy cap; signals a protocol composition bug."""


def next_pow2(x: int) -> int:
    """Smallest power of two >= x (and >= 1)."""
    if x <= 1:
        return 1
    return 1 << (int(x) - 1).bit_length()


def _digest(seed: int, path: tuple, size: int) -> bytes:
    h = hashlib.blake2s(digest_size=size)
    h.update(int(seed).to_bytes(16, "little", signed=True))
    for part in path:
        if isinstance(part, (int, np.integer)):
            h.update(b"i" + int(part).to_bytes(16, "little", signed=True))
        elif isinstance(part, str):
            h.update(b"s" + part.encode("utf-8"))
        elif isinstance(part, bytes):
            h.update(b"b" + part)
        else:
            raise TypeError(f"unsupported path element {part!r}")
        h.update(b"\x00")
    return h.digest()


def derive_words(seed: int, *path, count: int = 1) -> list[int]:
    """Deterministic 64-bit words keyed by (seed, *path)."""
    raw = _digest(seed, path, size=8 * count)
    return [int.from_bytes(raw[8 * i : 8 * (i + 1)], "little") for i in range(count)]


def substream(seed: int, *path) -> np.random.Generator:
    """Independent counter-based generator keyed by (seed, *path).

    Backed by Philox so that per-user/per-round substreams are cheap and a run
    is bit-reproducible regardless of evaluation order or worker count.
    """
    key = int.from_bytes(_digest(seed, path, size=16), "little")
    return np.random.Generator(np.random.Philox(key=key))


def laplace_sample(scale: float, rng: np.random.Generator) -> float:
    """One draw of scale * standard Laplace (mean 0, variance 2*scale^2)."""
    if scale < 0:
        raise ValueError("scale must be nonnegative")
    if scale == 0.0:
        return 0.0
    return float(rng.laplace(0.0, scale))


def rr_keep_probability(epsilon: float) -> float:
    """Probability e^eps / (e^eps + 1) of reporting a sign bit unchanged."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    # Stable for arbitrarily large epsilon.
    return 0.5 * (1.0 + math.tanh(epsilon / 2.0))


def randomized_response_sign(x: int, epsilon: float, rng: np.random.Generator) -> int:
    """Flip a +-1 bit with probability 1/(e^eps + 1)."""
    if x not in (-1, 1):
        raise ValueError("input must be -1 or +1")
    flip = 0.5 * (1.0 - math.tanh(epsilon / 2.0))
    return -x if rng.random() < flip else x


def rr_debias_factor(epsilon: float) -> float:
    """(e^eps + 1) / (e^eps - 1), the inverse attenuation of randomized response."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return 1.0 / math.tanh(epsilon / 2.0)


def hadamard_entry(k: int, r: int, c: int) -> int:
    """Sign of the (r, c) entry of the order-k Sylvester Hadamard matrix."""
    if k < 1 or (k & (k - 1)) != 0:
        raise ValueError(f"k must be a power of two, got {k}")
    if not (0 <= r < k and 0 <= c < k):
        raise ValueError("row/column out of range")
    return 1 - 2 * ((r & c).bit_count() & 1)


def hadamard_matrix(k: int) -> np.ndarray:
    """Dense order-k Sylvester Hadamard matrix with +-1 entries (int8)."""
    if k < 1 or (k & (k - 1)) != 0:
        raise ValueError(f"k must be a power of two, got {k}")
    idx = np.arange(k, dtype=np.uint64)
    anded = np.bitwise_and.outer(idx, idx)
    bits = np.zeros_like(anded)
    while anded.any():
        bits ^= anded & 1
        anded >>= 1
    return (1 - 2 * bits.astype(np.int8)).astype(np.int8)


def _prefix_key(prefix: str) -> int:
    # Distinct keys for prefixes of different lengths ("0" vs "00").
    if not prefix:
        raise ValueError("empty prefix")
    return (1 << len(prefix)) | int(prefix, 2)


@dataclass(frozen=True)
class HashPair:
    """A (bucket, sign) pair of pairwise-independent hashes over bit-string prefixes.

    Degree-1 polynomials over GF(2^61 - 1), reduced to [buckets] and {-1, +1}.
    """

    buckets: int
    a_bucket: int
    b_bucket: int
    a_sign: int
    b_sign: int

    def bucket(self, prefix: str) -> int:
        x = _prefix_key(prefix)
        return ((self.a_bucket * x + self.b_bucket) % MERSENNE61) % self.buckets

    def sign(self, prefix: str) -> int:
        x = _prefix_key(prefix)
        return 1 - 2 * (((self.a_sign * x + self.b_sign) % MERSENNE61) & 1)


def make_hash_pair(seed: int, k: int) -> HashPair:
    """Draw a deterministic HashPair with k buckets from the given seed."""
    if k < 2:
        raise ValueError("need at least 2 buckets")
    w = derive_words(seed, "hash-pair", count=4)
    return HashPair(
        buckets=k,
        a_bucket=1 + w[0] % (MERSENNE61 - 1),
        b_bucket=w[1] % MERSENNE61,
        a_sign=1 + w[2] % (MERSENNE61 - 1),
        b_sign=w[3] % MERSENNE61,
    )


class BudgetLedger:
    """Per-user cumulative privacy spend with a hard cap.

    Charging past the cap raises BudgetExceeded; a completed protocol run must
    leave every participating user at or below the cap.
    """

    def __init__(self, cap: float):
        if cap <= 0:
            raise ValueError("cap must be positive")
        self.cap = float(cap)
        self._consumed: dict[int, float] = {}

    def charge(self, user_id: int, amount: float) -> None:
        if amount < 0:
            raise ValueError("amount must be nonnegative")
        total = self._consumed.get(user_id, 0.0) + amount
        if total > self.cap + 1e-12:
            raise BudgetExceeded(
                f"user {user_id} charged {total:.12g} > cap {self.cap:.12g}"
            )
        self._consumed[user_id] = total

    def consumed(self, user_id: int) -> float:
        return self._consumed.get(user_id, 0.0)

    def max_consumed(self) -> float:
        return max(self._consumed.values(), default=0.0)

    def as_dict(self) -> dict[int, float]:
        return dict(self._consumed)

    def __len__(self) -> int:
        return len(self._consumed)


@dataclass(frozen=True)
class PublicRandomness:
    """Randomness shared between users and curator, all derived from one seed.

    Per-user values (level/hash assignments, Hadamard rows, vote columns) are
    pure functions of (master_seed, user_id, context), so the two sides of the
    protocol can derive them independently and always agree.
    """

    master_seed: int
    _hash_cache: dict = field(default_factory=dict, compare=False, repr=False)

    def words(self, *path, count: int = 1) -> list[int]:
        return derive_words(self.master_seed, *path, count=count)

    def stream(self, *path) -> np.random.Generator:
        return substream(self.master_seed, *path)

    def tree_assignment(self, user_id: int, n_levels: int, t: int, k: int) -> tuple[int, int, int]:
        """(level in 1..n_levels, hash index in 0..t-1, Hadamard row in 0..k-1)."""
        w = self.words("tree-assign", user_id, count=3)
        return 1 + w[0] % n_levels, w[1] % t, w[2] % k

    def hash_pair(self, j: int, k: int) -> HashPair:
        key = (j, k)
        if key not in self._hash_cache:
            seed = self.words("hash-seed", j, k)[0]
            self._hash_cache[key] = make_hash_pair(seed, k)
        return self._hash_cache[key]

    def vote_column(self, user_id: int, k: int, *tag) -> int:
        return self.words("vote-col", *tag, user_id)[0] % k

    def sign_vector(self, size: int, *tag) -> np.ndarray:
        rng = self.stream("signs", *tag)
        return rng.choice(np.array([-1.0, 1.0]), size=size)
