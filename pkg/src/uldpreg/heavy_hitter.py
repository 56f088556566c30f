"""Private aggregation of locally selected indices into a candidate set.

Each participating user sends a single randomized sign bit derived from a
Hadamard/hash sketch of a prefix of their value's binary encoding.  The
curator sweeps a binary prefix tree level by level, estimating prefix
frequencies from the sketch and keeping prefixes above a threshold.
"""

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .privacy import (
    PublicRandomness,
    hadamard_matrix,
    next_pow2,
    randomized_response_sign,
    rr_debias_factor,
)


class HHReport(NamedTuple):
    """One user's single-bit contribution to the sweep."""

    user_id: int
    bit: int


@dataclass(frozen=True)
class PrefixSet:
    """The prefixes surviving one level of the sweep; never empty past level 0."""

    level: int
    prefixes: tuple

    def __post_init__(self):
        if any(len(p) != self.level for p in self.prefixes):
            raise ValueError("every prefix must have exactly `level` bits")
        if self.level > 0 and not self.prefixes:
            raise ValueError("survivor set must be non-empty")


@dataclass
class FreqList:
    """Private frequency estimates for the candidate prefixes of one level."""

    level: int
    entries: list  # (prefix, estimated count)


@dataclass
class TreeSetup:
    """Dimensions and shared structures for one heavy-hitter run."""

    d: int
    n: int
    n_levels: int
    t: int
    k: int
    epsilon: float
    pub: PublicRandomness
    hadamard: np.ndarray = field(init=False)
    scale: float = field(init=False)

    def __post_init__(self):
        self.hadamard = hadamard_matrix(self.k)
        # Unbiased count scale: inverse cell-inclusion probability times the
        # randomized-response attenuation.
        self.scale = self.n_levels * self.t * rr_debias_factor(self.epsilon)


def default_hash_count(n: int) -> int:
    return max(1, math.ceil(3.0 * math.log(max(n, 2))))


def default_sketch_width(n: int) -> int:
    t = 3.0 * math.log(max(n, 2))
    return max(2, next_pow2(math.ceil(math.sqrt(max(n, 2) / t))))


def encode_index(v: int, d: int) -> str:
    """Big-endian binary of (v - 1), zero-padded to ceil(log2 d) bits; v is 1-based."""
    if not 1 <= v <= d:
        raise ValueError(f"index {v} out of range [1, {d}]")
    n_bits = max(1, (d - 1).bit_length())
    return format(v - 1, f"0{n_bits}b")


def decode_index(bits: str, d: int) -> int:
    """Inverse of encode_index."""
    n_bits = max(1, (d - 1).bit_length())
    if len(bits) != n_bits or any(c not in "01" for c in bits):
        raise ValueError(f"expected a {n_bits}-bit string, got {bits!r}")
    v = int(bits, 2) + 1
    if v > d:
        raise ValueError(f"{bits!r} decodes to {v} > d={d}")
    return v


def local_rnd(v, epsilon, pub, user_id, setup, rng, ledger=None, transcript=None) -> HHReport:
    """Produce one user's randomized sign bit for their assigned tree level.

    v is the user's selected index (0-based).  The report costs the user their
    full budget once and is reused for every candidate queried at that level.
    """
    level, j, row = pub.tree_assignment(user_id, setup.n_levels, setup.t, setup.k)
    prefix = encode_index(v + 1, setup.d)[:level]
    pair = pub.hash_pair(j, setup.k)
    x = pair.sign(prefix) * int(setup.hadamard[row, pair.bucket(prefix)])
    y = randomized_response_sign(x, epsilon, rng)
    if ledger is not None:
        ledger.charge(user_id, epsilon)
    if transcript is not None:
        transcript.add_bits(user_id, 1)
    return HHReport(user_id, y)


def _group_reports(reports, setup):
    """Cell (level, hash index) -> (sign bits, Hadamard rows) arrays."""
    cells: dict[tuple[int, int], list] = {}
    for rep in reports:
        level, j, row = setup.pub.tree_assignment(rep.user_id, setup.n_levels, setup.t, setup.k)
        cells.setdefault((level, j), []).append((rep.bit, row))
    packed = {}
    for key, items in cells.items():
        arr = np.asarray(items, dtype=np.int64)
        packed[key] = (arr[:, 0], arr[:, 1])
    return packed


def freq_oracle(level, candidates, cells, setup, diagnostics=None) -> FreqList:
    """Estimate the count of each candidate prefix at one tree level.

    For each of the t hash groups assigned to this level, debias the summed
    sketch correlations into a count estimate; the reported value is the lower
    median across hash groups.  Empty groups contribute a zero estimate.
    """
    t = setup.t
    entries = []
    pairs = [setup.pub.hash_pair(j, setup.k) for j in range(t)]
    for cand in candidates:
        estimates = np.zeros(t)
        for j in range(t):
            cell = cells.get((level, j))
            if cell is None:
                if diagnostics is not None:
                    diagnostics["empty_cells"] = diagnostics.get("empty_cells", 0) + 1
                continue
            bits, rows = cell
            s = pairs[j].sign(cand)
            col = pairs[j].bucket(cand)
            estimates[j] = setup.scale * s * float(
                np.dot(bits, setup.hadamard[rows, col].astype(np.int64))
            )
        estimates.sort()
        entries.append((cand, float(estimates[(t - 1) // 2])))
    return FreqList(level, entries)


def _viable(prefix, n_levels, d):
    # A prefix is viable if some index in [d] starts with it.
    return (int(prefix, 2) << (n_levels - len(prefix))) <= d - 1


def heavy_hitter(
    values,
    epsilon,
    threshold,
    d,
    pub,
    *,
    user_ids=None,
    t=None,
    k=None,
    max_survivors=None,
    ledger=None,
    transcript=None,
    diagnostics=None,
) -> list[int]:
    """Aggregate the users' indices (0-based) into a candidate list.

    threshold is the retention fraction: a prefix survives a level when its
    estimated count reaches threshold * len(values).  The best candidate is
    kept when none survive, so the output is never empty.  Each user is
    charged epsilon exactly once and contributes exactly one bit.
    """
    values = list(values)
    n = len(values)
    if n < 1:
        raise ValueError("need at least one participating user")
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    if d < 2:
        raise ValueError("need a domain of at least 2 indices")
    if user_ids is None:
        user_ids = list(range(n))
    n_levels = max(1, (d - 1).bit_length())
    setup = TreeSetup(
        d=d,
        n=n,
        n_levels=n_levels,
        t=t or default_hash_count(n),
        k=k or default_sketch_width(n),
        epsilon=epsilon,
        pub=pub,
    )
    if max_survivors is None:
        max_survivors = math.ceil(4.0 / threshold)

    reports = [
        local_rnd(v, epsilon, pub, uid, setup, pub.stream("hh-response", uid),
                  ledger=ledger, transcript=transcript)
        for uid, v in zip(user_ids, values)
    ]
    cells = _group_reports(reports, setup)

    surviving = PrefixSet(0, ("",))
    for level in range(1, n_levels + 1):
        candidates = []
        for p in surviving.prefixes:
            for child in (p + "0", p + "1"):
                if _viable(child, n_levels, d):
                    candidates.append(child)
        flist = freq_oracle(level, candidates, cells, setup, diagnostics=diagnostics)
        if transcript is not None:
            transcript.rounds += 1
        kept = [(c, f) for c, f in flist.entries if f >= threshold * n]
        if not kept:
            kept = [max(flist.entries, key=lambda cf: cf[1])]
        if len(kept) > max_survivors:
            kept.sort(key=lambda cf: -cf[1])
            kept = kept[:max_survivors]
        surviving = PrefixSet(level, tuple(sorted(c for c, _ in kept)))

    if diagnostics is not None:
        diagnostics["tree_params"] = {"t": setup.t, "k": setup.k, "levels": n_levels}
    return sorted(decode_index(p, d) - 1 for p in surviving.prefixes)
