"""End-to-end private estimators built from the selection and mean stages.

Two pipelines share the candidate-selection front end: the two-round variant
privately averages per-user least-squares fits on the candidate coordinates,
and the multi-round variant runs accelerated stochastic gradient descent with
privately aggregated minibatch gradients.
"""

import json
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, UserShard
from .heavy_hitter import heavy_hitter
from .privacy import BudgetLedger, PublicRandomness, next_pow2, substream
from .private_mean import uldp_mean
from .selectors import SelectorConfig, lasso_fit, select_one, universal_lambda


@dataclass
class ProtocolConfig:
    """Configuration shared by the private estimation protocols.

    None values are resolved at run time from the dataset dimensions:
    threshold defaults to 1 / (4 * s_target) (or alpha / (8 * s_target) when a
    selector quality alpha is supplied), the concentration radius to
    radius_scale * sqrt(s * log n / m), and the vote range half-width to 1.
    """

    epsilon: float = 4.0
    threshold: float | None = None
    alpha: float | None = None
    s_target: int = 8
    radius: float | None = None
    radius_scale: float = 1.0
    half_range: float | None = None
    selector: SelectorConfig = field(default_factory=SelectorConfig)
    local_fit: str = "ols"  # "ols" | "lasso_on_selected"
    iterations: int | None = None  # multi-round step count
    step_schedule: str = "power"  # "power" | "constant"
    step_scale: float = 0.1
    mixing_schedule: str = "accelerated"  # "accelerated" | "plain"
    grad_normalizer: float | None = None  # None -> 1.0 practical default
    theoretical_normalizer: bool = False
    tree_hashes: int | None = None
    tree_width: int | None = None
    record_iterates: bool = False

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.s_target < 1:
            raise ValueError("s_target must be at least 1")
        if self.local_fit not in ("ols", "lasso_on_selected"):
            raise ValueError(f"unknown local fit {self.local_fit!r}")
        if self.step_schedule not in ("power", "constant"):
            raise ValueError(f"unknown step schedule {self.step_schedule!r}")
        if self.mixing_schedule not in ("accelerated", "plain"):
            raise ValueError(f"unknown mixing schedule {self.mixing_schedule!r}")

    def resolved_threshold(self) -> float:
        if self.threshold is not None:
            return self.threshold
        if self.alpha is not None:
            return self.alpha / (8.0 * self.s_target)
        return 1.0 / (4.0 * self.s_target)


@dataclass
class ProtocolTranscript:
    """Communication and budget accounting for one protocol run."""

    rounds: int = 0
    bits: dict = field(default_factory=dict)
    budget: dict = field(default_factory=dict)
    stage_ms: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    events: list = field(default_factory=list)

    def add_bits(self, user_id: int, nbits: int) -> None:
        self.bits[user_id] = self.bits.get(user_id, 0) + nbits

    @property
    def bits_total(self) -> int:
        return sum(self.bits.values())

    @property
    def budget_max(self) -> float:
        return max(self.budget.values(), default=0.0)

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            ms = 1e3 * (time.perf_counter() - start)
            self.stage_ms[name] = self.stage_ms.get(name, 0.0) + ms
            self.events.append(
                {"stage": name, "ms": ms, "rounds_so_far": self.rounds}
            )

    def write_events(self, path) -> None:
        """Dump the stage events as JSON lines (debugging aid)."""
        with open(path, "w", encoding="utf-8") as fh:
            for event in self.events:
                fh.write(json.dumps(event) + "\n")

    def to_dict(self) -> dict:
        plain = {
            k: v for k, v in self.diagnostics.items()
            if isinstance(v, (int, float, str, bool, dict, list, type(None)))
        }
        return {
            "rounds": self.rounds,
            "bits_total": self.bits_total,
            "budget_max": self.budget_max,
            "stage_ms": dict(self.stage_ms),
            "diagnostics": plain,
        }


@dataclass
class Estimate:
    """A d-dimensional coefficient estimate, zero outside the candidate set."""

    beta: np.ndarray
    selected: list
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self, transcript: ProtocolTranscript | None = None) -> dict:
        out = {
            "beta": [float(b) for b in self.beta],
            "selected": [int(v) + 1 for v in self.selected],  # 1-based on the wire
        }
        if transcript is not None:
            out["transcript"] = transcript.to_dict()
        return out


def local_estimate(shard: UserShard, selected, method="ols", jitter=1e-8) -> np.ndarray:
    """One user's coefficient fit restricted to the selected columns.

    OLS needs m >= len(selected); a near-singular Gram matrix is ridge-jittered
    once and a still-singular system raises with its condition number.  The
    lasso variant reuses the universal penalty rule and tolerates m < s.
    """
    selected = np.asarray(selected, dtype=np.int64)
    if selected.size == 0:
        raise ValueError("no selected columns")
    Xs = shard.X[:, selected]
    if method == "lasso_on_selected":
        lam = universal_lambda(Xs, shard.y, shard.X.shape[1])
        return lasso_fit(Xs, shard.y, lam).coef
    if shard.m < selected.size:
        raise ValueError(
            f"OLS needs m >= {selected.size} selected columns, shard has m={shard.m}"
        )
    gram = Xs.T @ Xs
    rhs = Xs.T @ shard.y
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e10:
        gram = gram + jitter * np.trace(gram) / max(selected.size, 1) * np.eye(selected.size)
        cond = np.linalg.cond(gram)
        if not np.isfinite(cond) or cond > 1e14:
            raise np.linalg.LinAlgError(
                f"singular local Gram matrix (condition number {cond:.3g})"
            )
    return np.linalg.solve(gram, rhs)


def _split_groups(n: int) -> tuple[range, range, range]:
    # Selection half, then quarter/quarter for the vote and mean groups;
    # leftovers land in the last group.
    return range(0, n // 2), range(n // 2, (3 * n) // 4), range((3 * n) // 4, n)


def _run_selection(dataset, config, seed, pub, ledger, transcript, sel_ids):
    values = []
    with transcript.stage("selection"):
        for i in sel_ids:
            shard = dataset.shards[i]
            rng = substream(seed, "select", shard.user_id)
            values.append(select_one(shard, config.selector, rng))
        candidates = heavy_hitter(
            values,
            config.epsilon,
            config.resolved_threshold(),
            dataset.d,
            pub,
            user_ids=[dataset.shards[i].user_id for i in sel_ids],
            t=config.tree_hashes,
            k=config.tree_width,
            ledger=ledger,
            transcript=transcript,
            diagnostics=transcript.diagnostics,
        )
    return values, candidates


def _default_radius(config, s, n, m):
    if config.radius is not None:
        return config.radius
    return config.radius_scale * math.sqrt(max(s, 1) * math.log(max(n, 3)) / m)


def two_round_slr(dataset: Dataset, config: ProtocolConfig, seed: int = 0):
    """Candidate selection followed by one private vote round and one private
    mean round over per-user local fits.  Returns (Estimate, ProtocolTranscript).
    """
    n = dataset.n
    if n < 4:
        raise ValueError("need at least 4 users")
    ledger = BudgetLedger(config.epsilon)
    pub = PublicRandomness(seed)
    transcript = ProtocolTranscript()

    sel_ids, vote_ids, mean_ids = _split_groups(n)
    _, candidates = _run_selection(dataset, config, seed, pub, ledger, transcript, sel_ids)
    s = len(candidates)

    with transcript.stage("local_fit"):
        fits_vote = np.array(
            [local_estimate(dataset.shards[i], candidates, config.local_fit) for i in vote_ids]
        )
        fits_mean = np.array(
            [local_estimate(dataset.shards[i], candidates, config.local_fit) for i in mean_ids]
        )

    radius = _default_radius(config, s, n, dataset.min_m)
    half_range = config.half_range if config.half_range is not None else 1.0
    with transcript.stage("private_mean"):
        coef = uldp_mean(
            fits_vote,
            fits_mean,
            radius,
            config.epsilon,
            half_range,
            pub,
            ("final-mean",),
            user_ids1=[dataset.shards[i].user_id for i in vote_ids],
            user_ids2=[dataset.shards[i].user_id for i in mean_ids],
            ledger=ledger,
            transcript=transcript,
        )

    beta = np.zeros(dataset.d)
    beta[candidates] = coef
    transcript.budget = ledger.as_dict()
    transcript.diagnostics.update(
        {"s": s, "radius": radius, "threshold": config.resolved_threshold()}
    )
    estimate = Estimate(beta, list(candidates), dict(transcript.diagnostics))
    return estimate, transcript


def _step_size(t, config):
    if config.step_schedule == "constant":
        return config.step_scale
    return config.step_scale * ((1.0 + t) / 2.0) ** 0.2


def _mixing_weight(t, config):
    if config.mixing_schedule == "plain":
        return 1.0
    return 2.0 / (t + 1.0)


def theoretical_iterations(n: int, m: int, epsilon: float) -> int:
    """Step-count bound min(n, sqrt(n m eps^2)) for the multi-round protocol."""
    return max(1, math.ceil(min(n, math.sqrt(n * m * epsilon * epsilon))))


def uldp_sco(shards, selected, config: ProtocolConfig, seed=0, *,
             pub=None, ledger=None, transcript=None) -> np.ndarray:
    """Accelerated stochastic optimization of the squared loss on the selected
    coordinates, with gradients aggregated privately over fresh user batches.

    Every user lands in exactly one batch and is charged epsilon once.  The
    iterate stays inside the unit sup-norm box by coordinate clipping.
    """
    shards = list(shards)
    selected = np.asarray(selected, dtype=np.int64)
    n = len(shards)
    m = min(s.m for s in shards)
    s = selected.size
    s_pad = next_pow2(s)
    if pub is None:
        pub = PublicRandomness(seed)
    if ledger is None:
        ledger = BudgetLedger(config.epsilon)
    if transcript is None:
        transcript = ProtocolTranscript()

    batch_floor = max(s_pad, 2)  # mean stage needs s_pad users, the vote needs 2
    t_bound = theoretical_iterations(n, m, config.epsilon)
    t_feasible = n // (2 * batch_floor)
    if t_feasible < 1:
        raise ValueError(
            f"{n} users cannot form two batches of {batch_floor}; smaller candidate set needed"
        )
    if config.iterations is not None:
        T = config.iterations
        if n // (2 * T) < batch_floor:
            raise ValueError(
                f"{T} iterations leave batches of {n // (2 * T)} users; "
                f"need at least {batch_floor}, reduce the iteration count"
            )
    else:
        T = max(1, min(t_bound, t_feasible))
    transcript.diagnostics["sco_iterations"] = T
    transcript.diagnostics["sco_round_bound"] = t_bound

    L = config.grad_normalizer
    if L is None:
        L = 6.0 * s**3 * math.log(max(n, 3)) if config.theoretical_normalizer else 1.0
    if config.radius is not None:
        radius = config.radius
    else:
        radius = config.radius_scale * L * math.sqrt(
            math.log(max(n, 3)) * math.log(max(n, m, 3)) * math.log(max(T, 2)) / m
        )
    half_range = config.half_range if config.half_range is not None else 3.0

    n0 = n // (2 * T)
    beta = np.zeros(s)
    beta_ag = np.zeros(s)
    cursor = 0
    iterates = [] if config.record_iterates else None
    for t in range(1, T + 1):
        # Convex mixing of the gradient iterate and the averaged iterate; the
        # plain schedule (weight 1) collapses to projected gradient descent.
        w = _mixing_weight(t, config)
        beta_md = w * beta + (1.0 - w) * beta_ag

        batch1 = shards[cursor : cursor + n0]
        batch2 = shards[cursor + n0 : cursor + 2 * n0]
        cursor += 2 * n0

        def batch_grads(batch):
            out = np.empty((len(batch), s))
            for row, shard in enumerate(batch):
                Xs = shard.X[:, selected]
                out[row] = Xs.T @ (Xs @ beta_md - shard.y) / (shard.m * L)
            return out

        grad = uldp_mean(
            batch_grads(batch1),
            batch_grads(batch2),
            radius,
            config.epsilon,
            half_range,
            pub,
            ("sco", t),
            user_ids1=[sh.user_id for sh in batch1],
            user_ids2=[sh.user_id for sh in batch2],
            ledger=ledger,
            transcript=transcript,
        )
        beta = np.clip(beta_md - _step_size(t, config) * L * grad, -1.0, 1.0)
        beta_ag = w * beta + (1.0 - w) * beta_ag
        if iterates is not None:
            iterates.append(beta_ag.copy())
    if iterates is not None:
        transcript.diagnostics["sco_iterate_path"] = iterates
    return beta_ag


def multi_round_slr(dataset: Dataset, config: ProtocolConfig, seed: int = 0):
    """Candidate selection followed by private accelerated gradient descent.

    Returns (Estimate, ProtocolTranscript).
    """
    n = dataset.n
    if n < 4:
        raise ValueError("need at least 4 users")
    if config.half_range is None:
        config = replace(config, half_range=3.0)
    ledger = BudgetLedger(config.epsilon)
    pub = PublicRandomness(seed)
    transcript = ProtocolTranscript()

    sel_ids = range(0, n // 2)
    _, candidates = _run_selection(dataset, config, seed, pub, ledger, transcript, sel_ids)

    with transcript.stage("sco"):
        coef = uldp_sco(
            [dataset.shards[i] for i in range(n // 2, n)],
            candidates,
            config,
            seed,
            pub=pub,
            ledger=ledger,
            transcript=transcript,
        )

    beta = np.zeros(dataset.d)
    beta[candidates] = coef
    transcript.budget = ledger.as_dict()
    transcript.diagnostics.update(
        {"s": len(candidates), "threshold": config.resolved_threshold()}
    )
    estimate = Estimate(beta, list(candidates), dict(transcript.diagnostics))
    return estimate, transcript


def _mean_select_one(shard: UserShard, d: int, rng) -> int:
    # Candidate = uniform draw among coordinates whose sample mean clears the
    # universal noise threshold; falls back to the single largest coordinate.
    means = shard.X.mean(axis=0)
    sigma = float(np.median(shard.X.std(axis=0)))
    thr = sigma * math.sqrt(2.0 * math.log(max(d, 2)) / shard.m)
    big = np.flatnonzero(np.abs(means) > thr)
    if big.size == 0:
        big = np.array([int(np.argmax(np.abs(means)))])
    return int(big[rng.integers(big.size)])


def sparse_mean(dataset: Dataset, config: ProtocolConfig, seed: int = 0):
    """Private estimation of a sparse mean vector from feature-only shards.

    Same two-round structure as the regression protocol with the selector and
    local fit swapped for their mean-estimation counterparts.
    Returns (Estimate, ProtocolTranscript).
    """
    n = dataset.n
    if n < 4:
        raise ValueError("need at least 4 users")
    ledger = BudgetLedger(config.epsilon)
    pub = PublicRandomness(seed)
    transcript = ProtocolTranscript()

    sel_ids, vote_ids, mean_ids = _split_groups(n)
    with transcript.stage("selection"):
        values = [
            _mean_select_one(
                dataset.shards[i], dataset.d, substream(seed, "select", dataset.shards[i].user_id)
            )
            for i in sel_ids
        ]
        candidates = heavy_hitter(
            values,
            config.epsilon,
            config.resolved_threshold(),
            dataset.d,
            pub,
            user_ids=[dataset.shards[i].user_id for i in sel_ids],
            t=config.tree_hashes,
            k=config.tree_width,
            ledger=ledger,
            transcript=transcript,
            diagnostics=transcript.diagnostics,
        )
    s = len(candidates)

    with transcript.stage("local_fit"):
        fits_vote = np.array(
            [dataset.shards[i].X[:, candidates].mean(axis=0) for i in vote_ids]
        )
        fits_mean = np.array(
            [dataset.shards[i].X[:, candidates].mean(axis=0) for i in mean_ids]
        )

    radius = _default_radius(config, s, n, dataset.min_m)
    half_range = config.half_range if config.half_range is not None else 1.0
    with transcript.stage("private_mean"):
        coef = uldp_mean(
            fits_vote,
            fits_mean,
            radius,
            config.epsilon,
            half_range,
            pub,
            ("final-mean",),
            user_ids1=[dataset.shards[i].user_id for i in vote_ids],
            user_ids2=[dataset.shards[i].user_id for i in mean_ids],
            ledger=ledger,
            transcript=transcript,
        )

    beta = np.zeros(dataset.d)
    beta[candidates] = coef
    transcript.budget = ledger.as_dict()
    transcript.diagnostics.update(
        {"s": s, "radius": radius, "threshold": config.resolved_threshold()}
    )
    estimate = Estimate(beta, list(candidates), dict(transcript.diagnostics))
    return estimate, transcript
