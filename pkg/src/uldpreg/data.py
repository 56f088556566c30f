"""Synthetic and external datasets partitioned into per-user shards.

Synthetic generators draw the sparse linear model y = X beta* + noise with a
coefficient vector that has ``s_star`` nonzero entries of a fixed value.  Each
shard is produced from its own seed substream, so generation is deterministic
and order-independent.
"""

import csv
import functools
from dataclasses import dataclass, field

import numpy as np

from .privacy import substream


@dataclass(frozen=True)
class GroundTruth:
    """True coefficient vector behind a synthetic dataset."""

    beta_star: np.ndarray
    support: np.ndarray
    s_star: int
    a_min: float
    noise_std: float


@dataclass(frozen=True)
class UserShard:
    """One user's local sample block: m rows of features plus responses."""

    X: np.ndarray
    y: np.ndarray
    user_id: int

    def __post_init__(self):
        if self.X.ndim != 2 or self.y.ndim != 1:
            raise ValueError("X must be 2-d and y 1-d")
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X and y row counts differ")
        if self.X.shape[0] < 1:
            raise ValueError("shard needs at least one row")
        self.X.setflags(write=False)
        self.y.setflags(write=False)

    @property
    def m(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class Dataset:
    """A collection of user shards sharing one feature space."""

    shards: tuple
    d: int
    design: str
    ground_truth: GroundTruth | None = field(default=None, compare=False)

    def __post_init__(self):
        if any(s.X.shape[1] != self.d for s in self.shards):
            raise ValueError("all shards must share the same dimension")
        if self.design not in ("independent", "correlated", "external"):
            raise ValueError(f"unknown design {self.design!r}")

    @property
    def n(self) -> int:
        return len(self.shards)

    @property
    def min_m(self) -> int:
        return min(s.m for s in self.shards)


def _check_counts(n, m, d, s_star, coef_value):
    for name, v in (("n", n), ("m", m), ("d", d)):
        if v < 1:
            raise ValueError(f"{name} must be positive, got {v}")
    if s_star < 1:
        raise ValueError("s_star must be at least 1 (empty support is disallowed)")
    if s_star > d:
        raise ValueError(f"s_star={s_star} exceeds dimension d={d}")
    if not 0 < coef_value <= 1:
        raise ValueError(f"coef_value must lie in (0, 1], got {coef_value}")


def _make_truth(d, s_star, coef_value, noise_std, seed, within=None):
    hi = d if within is None else within
    support = np.sort(substream(seed, "support").choice(hi, size=s_star, replace=False))
    beta = np.zeros(d)
    beta[support] = coef_value
    beta.setflags(write=False)
    support.setflags(write=False)
    return GroundTruth(beta, support, s_star, float(coef_value), float(noise_std))


def generate_independent(n, m, d, s_star, coef_value, noise_std, seed):
    """Standard Gaussian design: X entries and noise i.i.d. N(0, 1).

    Returns (Dataset, GroundTruth).  The support is a uniformly random
    s_star-subset of the coordinates, each set to coef_value.
    """
    _check_counts(n, m, d, s_star, coef_value)
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    truth = _make_truth(d, s_star, coef_value, noise_std, seed)
    shards = []
    for i in range(n):
        rng = substream(seed, "shard", i)
        X = rng.standard_normal((m, d))
        y = X @ truth.beta_star + noise_std * rng.standard_normal(m)
        shards.append(UserShard(X, y, i))
    return Dataset(tuple(shards), d, "independent", ground_truth=truth), truth


@functools.lru_cache(maxsize=8)
def _decay_cholesky(corr_dims: int) -> np.ndarray:
    # Toeplitz covariance 2^{-|i-j|}; computed once per width.
    idx = np.arange(corr_dims)
    cov = np.power(2.0, -np.abs(idx[:, None] - idx[None, :]))
    chol = np.linalg.cholesky(cov)
    chol.setflags(write=False)
    return chol


def generate_correlated(n, m, d, s_star, coef_value, noise_std, corr_dims, seed):
    """Design with exponentially decaying correlation on the leading block.

    The first corr_dims coordinates have Cov(X^i, X^j) = 2^{-|i-j|}; the rest
    are i.i.d. standard Gaussian.  The support is drawn inside the correlated
    block.  Returns (Dataset, GroundTruth).
    """
    _check_counts(n, m, d, s_star, coef_value)
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    if corr_dims > d:
        raise ValueError("corr_dims cannot exceed d")
    if corr_dims < s_star:
        raise ValueError("corr_dims must be at least s_star (support lives there)")
    truth = _make_truth(d, s_star, coef_value, noise_std, seed, within=corr_dims)
    chol = _decay_cholesky(corr_dims)
    shards = []
    for i in range(n):
        rng = substream(seed, "shard", i)
        X = rng.standard_normal((m, d))
        X[:, :corr_dims] = X[:, :corr_dims] @ chol.T
        y = X @ truth.beta_star + noise_std * rng.standard_normal(m)
        shards.append(UserShard(X, y, i))
    return Dataset(tuple(shards), d, "correlated", ground_truth=truth), truth


def generate_sparse_mean(n, m, d, s_star, mean_value, noise_std, seed):
    """Feature-only data X ~ N(mu, I) with an s_star-sparse mean vector mu.

    The responses are all-zero placeholders; only X carries signal.  Used by
    the sparse mean estimation protocol.  Returns (Dataset, GroundTruth) with
    beta_star holding mu.
    """
    _check_counts(n, m, d, s_star, mean_value)
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    truth = _make_truth(d, s_star, mean_value, noise_std, seed)
    shards = []
    for i in range(n):
        rng = substream(seed, "shard", i)
        X = truth.beta_star + noise_std * rng.standard_normal((m, d))
        shards.append(UserShard(X, np.zeros(m), i))
    return Dataset(tuple(shards), d, "independent", ground_truth=truth), truth


def load_csv(path, target_column, user_column=None, group_size=None, seed=0):
    """Load a numeric CSV (header row, UTF-8) and shard it into users.

    Exactly one of user_column / group_size chooses the partition: rows are
    grouped by the user column's value, or shuffled and chunked into groups of
    group_size.  Continuous feature columns are standardized to zero mean and
    unit variance using full-file statistics; constant columns are dropped.
    """
    if (user_column is None) == (group_size is None):
        raise ValueError("supply exactly one of user_column / group_size")
    if group_size is not None and group_size < 2:
        raise ValueError(f"group_size must be at least 2, got {group_size}")

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no data rows")

    def col_index(name):
        try:
            return header.index(name)
        except ValueError:
            raise ValueError(f"{path}: no column named {name!r}") from None

    target_idx = col_index(target_column)
    user_idx = col_index(user_column) if user_column is not None else None
    feature_idx = [
        i for i in range(len(header)) if i != target_idx and i != user_idx
    ]
    if not feature_idx:
        raise ValueError(f"{path}: no feature columns besides target/user")

    n_cols = len(header)
    feats = np.empty((len(rows), len(feature_idx)))
    target = np.empty(len(rows))
    user_keys = []
    for r, row in enumerate(rows):
        if len(row) != n_cols:
            raise ValueError(f"{path}: row {r + 2} has {len(row)} cells, expected {n_cols}")
        try:
            target[r] = float(row[target_idx])
            for c, i in enumerate(feature_idx):
                feats[r, c] = float(row[i])
        except ValueError as exc:
            raise ValueError(f"{path}: row {r + 2}: non-numeric cell ({exc})") from None
        if user_idx is not None:
            user_keys.append(row[user_idx])

    # Standardize with full-file moments before sharding.
    mu = feats.mean(axis=0)
    sd = feats.std(axis=0)
    keep = sd > 1e-12
    if not keep.any():
        raise ValueError(f"{path}: every feature column is constant")
    feats = (feats[:, keep] - mu[keep]) / sd[keep]

    groups: list[np.ndarray] = []
    if user_column is not None:
        order: dict[str, int] = {}
        members: list[list[int]] = []
        for r, key in enumerate(user_keys):
            if key not in order:
                order[key] = len(members)
                members.append([])
            members[order[key]].append(r)
        groups = [np.asarray(g) for g in members]
    else:
        perm = substream(seed, "csv-shuffle").permutation(len(rows))
        n_groups = len(rows) // group_size
        if n_groups == 0:
            raise ValueError(f"{path}: fewer rows than group_size={group_size}")
        for g in range(n_groups):
            groups.append(perm[g * group_size : (g + 1) * group_size])
        leftover = perm[n_groups * group_size :]
        if leftover.size:
            groups[-1] = np.concatenate([groups[-1], leftover])

    shards = [
        UserShard(feats[idx].copy(), target[idx].copy(), uid)
        for uid, idx in enumerate(groups)
    ]
    return Dataset(tuple(shards), shards[0].X.shape[1], "external")
