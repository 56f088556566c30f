"""Two-stage private mean estimation of per-user coefficient vectors.

Stage one localizes each rotated coordinate with a private histogram vote
(one sign bit per user, decoded through a shared Hadamard column).  Stage two
clips the remaining users' values to the winning bin's neighborhood and adds
Laplace noise calibrated to the interval width.  A shared random rotation
flattens vector coordinates so per-coordinate clipping ranges stay small.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .privacy import hadamard_matrix, laplace_sample, next_pow2, rr_debias_factor


class ConcentrationInterval(NamedTuple):
    lo: float
    hi: float

    @property
    def width(self) -> float:
        return self.hi - self.lo


@dataclass
class BinGrid:
    """Uniform bins of width 2*radius tiling [-half_range, half_range]."""

    half_range: float
    radius: float
    centers: np.ndarray = field(init=False)
    k: int = field(init=False)
    k_pad: int = field(init=False)

    def __post_init__(self):
        if self.half_range <= 0 or self.radius <= 0:
            raise ValueError("half_range and radius must be positive")
        self.k = max(1, int(np.ceil(self.half_range / self.radius)))
        self.k_pad = next_pow2(self.k)
        j = np.arange(1, self.k + 1)
        self.centers = -self.half_range + (2 * j - 1) * self.radius

    def nearest(self, values: np.ndarray) -> np.ndarray:
        """Index of the closest bin center per value; boundary ties round up."""
        raw = np.floor((values + self.half_range) / (2 * self.radius)).astype(np.int64)
        return np.clip(raw, 0, self.k - 1)


@dataclass
class Rotation:
    """Orthonormal map U = H diag(w) / sqrt(k) with shared random signs w."""

    signs: np.ndarray

    def __post_init__(self):
        self.size = len(self.signs)
        if self.size != next_pow2(self.size):
            raise ValueError("rotation size must be a power of two")
        self._hadamard = hadamard_matrix(self.size).astype(np.float64)
        self._scale = 1.0 / np.sqrt(self.size)

    def apply(self, vecs: np.ndarray) -> np.ndarray:
        """Rotate row vectors (or one vector)."""
        return (vecs * self.signs) @ self._hadamard.T * self._scale

    def invert(self, vec: np.ndarray) -> np.ndarray:
        return self.signs * (self._hadamard.T @ vec) * self._scale

    def matrix(self) -> np.ndarray:
        return self._hadamard * self.signs[None, :] * self._scale


def range_scalar(values, radius, epsilon, half_range, pub, tag, *,
                 user_ids=None, ledger=None, transcript=None) -> ConcentrationInterval:
    """Locate where a population of scalars concentrates, privately.

    Each user snaps its value to the nearest bin center, then reports one
    randomized sign that correlates with the Hadamard column drawn from shared
    randomness.  The curator sums the decoded votes and returns the winning
    bin center widened to +-3*radius.  Charges epsilon per user.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        raise ValueError("the range vote needs at least 2 users")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if user_ids is None:
        user_ids = np.arange(values.size)

    grid = BinGrid(half_range, radius)
    H = hadamard_matrix(grid.k_pad).astype(np.float64)
    bins = grid.nearest(np.clip(values, -half_range, half_range))
    attenuation = 1.0 / rr_debias_factor(epsilon)  # (e^eps - 1)/(e^eps + 1)

    votes = np.zeros(grid.k_pad)
    for uid, b in zip(user_ids, bins):
        col = pub.vote_column(int(uid), grid.k_pad, *tag)
        p_plus = 0.5 * (1.0 + H[b, col] * attenuation)
        sign = 1.0 if pub.stream("range-response", *tag, int(uid)).random() < p_plus else -1.0
        votes += sign * H[:, col]
        if ledger is not None:
            ledger.charge(int(uid), epsilon)
        if transcript is not None:
            transcript.add_bits(int(uid), 1)

    winner = int(np.argmax(votes[: grid.k]))  # phantom pad bins never win
    center = grid.centers[winner]
    return ConcentrationInterval(center - 3 * radius, center + 3 * radius)


def mean_scalar(values, interval, epsilon, pub, tag, *,
                user_ids=None, ledger=None, transcript=None) -> float:
    """Average the values after projecting onto the interval and adding
    Laplace noise of scale width/epsilon per user.  Charges epsilon per user.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("mean of an empty group")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if user_ids is None:
        user_ids = np.arange(values.size)
    lo, hi = interval.lo, interval.hi
    scale = (hi - lo) / epsilon
    total = 0.0
    for uid, v in zip(user_ids, values):
        noisy = float(np.clip(v, lo, hi)) + laplace_sample(
            scale, pub.stream("mean-noise", *tag, int(uid))
        )
        total += noisy
        if ledger is not None:
            ledger.charge(int(uid), epsilon)
        if transcript is not None:
            transcript.add_bits(int(uid), 64)
    return total / values.size


def uldp_mean(group1, group2, radius, epsilon, half_range, pub, tag, *,
              user_ids1=None, user_ids2=None, ledger=None, transcript=None) -> np.ndarray:
    """Private mean of per-user vectors using two disjoint user groups.

    group1 votes on a concentration interval for every rotated coordinate
    (budget epsilon split evenly over coordinates); group2 users are assigned
    one coordinate each, round robin, and release a noisy clipped value at
    full budget.  Returns the de-rotated coordinate means, truncated back to
    the original dimension.
    """
    group1 = np.atleast_2d(np.asarray(group1, dtype=np.float64))
    group2 = np.atleast_2d(np.asarray(group2, dtype=np.float64))
    if group1.shape[1] != group2.shape[1]:
        raise ValueError("groups must share the vector dimension")
    s = group1.shape[1]
    s_pad = next_pow2(s)
    if user_ids1 is None:
        user_ids1 = np.arange(group1.shape[0])
    if user_ids2 is None:
        user_ids2 = np.arange(group1.shape[0], group1.shape[0] + group2.shape[0])
    if set(map(int, user_ids1)) & set(map(int, user_ids2)):
        raise ValueError("vote and mean groups must be disjoint")
    if group2.shape[0] < s_pad:
        raise ValueError(
            f"need at least {s_pad} users in the mean group, got {group2.shape[0]}"
        )

    rotation = Rotation(pub.sign_vector(s_pad, "rotation", *tag))
    pad1 = np.zeros((group1.shape[0], s_pad))
    pad1[:, :s] = group1
    pad2 = np.zeros((group2.shape[0], s_pad))
    pad2[:, :s] = group2
    rot1 = rotation.apply(pad1)
    rot2 = rotation.apply(pad2)

    intervals = []
    for coord in range(s_pad):
        intervals.append(
            range_scalar(
                rot1[:, coord], radius, epsilon / s_pad, half_range, pub,
                (*tag, "coord", coord),
                user_ids=user_ids1, ledger=ledger, transcript=transcript,
            )
        )
    if transcript is not None:
        transcript.rounds += 1  # all coordinate votes travel together

    coord_means = np.zeros(s_pad)
    assignment = np.arange(group2.shape[0]) % s_pad
    for coord in range(s_pad):
        members = np.flatnonzero(assignment == coord)
        coord_means[coord] = mean_scalar(
            rot2[members, coord], intervals[coord], epsilon, pub,
            (*tag, "coord", coord),
            user_ids=np.asarray(user_ids2)[members],
            ledger=ledger, transcript=transcript,
        )
    if transcript is not None:
        transcript.rounds += 1

    return rotation.invert(coord_means)[:s]
