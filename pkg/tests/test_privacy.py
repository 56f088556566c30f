import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from uldpreg.privacy import (
    BudgetExceeded,
    BudgetLedger,
    PublicRandomness,
    hadamard_entry,
    hadamard_matrix,
    laplace_sample,
    make_hash_pair,
    next_pow2,
    randomized_response_sign,
    rr_debias_factor,
    rr_keep_probability,
    substream,
)


def test_next_pow2():
    assert [next_pow2(x) for x in (0, 1, 2, 3, 4, 5, 9, 64, 65)] == [
        1, 1, 2, 4, 4, 8, 16, 64, 128,
    ]


def test_substream_deterministic_and_distinct():
    a = substream(7, "x", 1).random(4)
    b = substream(7, "x", 1).random(4)
    c = substream(7, "x", 2).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


class TestLaplace:
    def test_zero_scale_limit(self):
        assert laplace_sample(0.0, substream(0)) == 0.0

    def test_negative_scale_rejected(self):
        with pytest.raises(ValueError):
            laplace_sample(-1.0, substream(0))

    def test_moments(self):
        # Monte Carlo against the closed-form Laplace moments.
        rng = substream(42, "laplace-mc")
        draws = np.array([laplace_sample(1.0, rng) for _ in range(200_000)])
        assert abs(draws.mean()) < 0.01
        draws2 = 2.0 * draws  # scale 2 has variance 2 * 2^2 = 8
        assert abs(draws2.var() / 8.0 - 1.0) < 0.02


class TestRandomizedResponse:
    def test_keep_probability_at_ln3(self):
        # flip probability 1/(3+1)
        assert rr_keep_probability(math.log(3.0)) == pytest.approx(0.75, abs=1e-12)

    def test_huge_epsilon_never_flips(self):
        rng = substream(1)
        assert all(randomized_response_sign(1, 1e6, rng) == 1 for _ in range(1000))

    def test_rejects_non_sign_input(self):
        with pytest.raises(ValueError):
            randomized_response_sign(0, 1.0, substream(0))

    @pytest.mark.parametrize("eps", [0.1, 1.0, math.log(3), 4.0, 8.0])
    def test_likelihood_ratio_exactly_e_eps(self, eps):
        p = rr_keep_probability(eps)
        # Pr(out | x = out) / Pr(out | x = -out) for both outputs.
        ratio = p / (1.0 - p)
        assert ratio == pytest.approx(math.exp(eps), rel=1e-9)

    def test_empirical_flip_rate(self):
        eps = math.log(3.0)
        rng = substream(5)
        flips = sum(randomized_response_sign(1, eps, rng) == -1 for _ in range(100_000))
        assert abs(flips / 100_000 - 0.25) < 3 * math.sqrt(0.25 * 0.75 / 100_000)

    def test_debias_factor_inverts_attenuation(self):
        eps = 2.0
        p = rr_keep_probability(eps)
        assert rr_debias_factor(eps) * (2 * p - 1) == pytest.approx(1.0, rel=1e-12)


class TestHadamard:
    def test_order_one(self):
        assert hadamard_entry(1, 0, 0) == 1

    def test_order_two(self):
        H = hadamard_matrix(2)
        assert H.tolist() == [[1, 1], [1, -1]]

    def test_rejects_non_power_of_two(self):
        with pytest.raises(ValueError):
            hadamard_entry(6, 0, 0)
        with pytest.raises(ValueError):
            hadamard_matrix(12)

    def test_entry_matches_matrix(self):
        H = hadamard_matrix(16)
        for r in range(16):
            for c in range(16):
                assert hadamard_entry(16, r, c) == H[r, c]

    @pytest.mark.parametrize("k", [1, 2, 4, 8, 16, 32, 64, 128, 256])
    def test_orthogonality_brute_force(self, k):
        H = hadamard_matrix(k).astype(np.float64)
        assert np.max(np.abs(H @ H.T - k * np.eye(k))) < 1e-12

    def test_matches_reference_construction(self):
        for k in (1, 2, 8, 64):
            assert np.array_equal(hadamard_matrix(k), scipy.linalg.hadamard(k))


class TestHashPair:
    def test_same_seed_same_functions(self):
        a = make_hash_pair(11, 16)
        b = make_hash_pair(11, 16)
        prefixes = [format(i, "010b") for i in range(100)]
        assert [a.bucket(p) for p in prefixes] == [b.bucket(p) for p in prefixes]
        assert [a.sign(p) for p in prefixes] == [b.sign(p) for p in prefixes]

    def test_collision_rate_near_uniform(self):
        # pairwise independence: collision probability 1/k over distinct inputs
        k = 16
        rng = np.random.default_rng(0)
        hits = 0
        trials = 100_000
        for seed in range(10):
            pair = make_hash_pair(seed, k)
            for _ in range(trials // 10):
                i, j = rng.integers(0, 1 << 20, size=2)
                if i == j:
                    continue
                hits += pair.bucket(format(i, "021b")) == pair.bucket(format(j, "021b"))
        p = hits / trials
        se = math.sqrt((1 / k) * (1 - 1 / k) / trials)
        assert abs(p - 1 / k) < 3 * se

    def test_sign_balance(self):
        pair = make_hash_pair(3, 8)
        signs = [pair.sign(format(i, "017b")) for i in range(100_000)]
        assert abs(np.mean(signs)) < 0.02

    def test_too_few_buckets(self):
        with pytest.raises(ValueError):
            make_hash_pair(0, 1)


class TestBudgetLedger:
    def test_charge_then_zero(self):
        led = BudgetLedger(1.0)
        led.charge(0, 1.0)
        led.charge(0, 0.0)
        assert led.consumed(0) == 1.0

    def test_split_charges_sum_to_cap(self):
        led = BudgetLedger(4.0)
        for _ in range(8):
            led.charge(5, 4.0 / 8)
        assert abs(led.consumed(5) - 4.0) < 1e-12

    def test_over_cap_raises(self):
        led = BudgetLedger(1.0)
        led.charge(0, 1.0)
        with pytest.raises(BudgetExceeded):
            led.charge(0, 1.0)

    def test_negative_amount_rejected(self):
        with pytest.raises(ValueError):
            BudgetLedger(1.0).charge(0, -0.1)

    @given(st.lists(st.floats(0, 0.1), min_size=1, max_size=9))
    def test_never_exceeds_cap_silently(self, amounts):
        led = BudgetLedger(1.0)
        total = 0.0
        for a in amounts:
            total += a
            if total > 1.0 + 1e-12:
                with pytest.raises(BudgetExceeded):
                    led.charge(1, a)
                return
            led.charge(1, a)
        assert led.max_consumed() <= 1.0 + 1e-12


class TestPublicRandomness:
    @given(st.integers(0, 1000), st.integers(0, 10_000))
    @settings(max_examples=50)
    def test_two_sides_agree(self, seed, user_id):
        curator = PublicRandomness(seed)
        user = PublicRandomness(seed)
        assert curator.tree_assignment(user_id, 8, 20, 16) == user.tree_assignment(
            user_id, 8, 20, 16
        )
        assert curator.vote_column(user_id, 32, "tag", 3) == user.vote_column(
            user_id, 32, "tag", 3
        )

    def test_assignment_ranges(self):
        pub = PublicRandomness(0)
        for uid in range(500):
            lvl, j, r = pub.tree_assignment(uid, 8, 20, 16)
            assert 1 <= lvl <= 8 and 0 <= j < 20 and 0 <= r < 16

    def test_assignment_roughly_uniform_over_levels(self):
        pub = PublicRandomness(1)
        levels = [pub.tree_assignment(uid, 4, 5, 8)[0] for uid in range(8000)]
        counts = np.bincount(levels)[1:]
        assert counts.min() > 8000 / 4 * 0.85

    def test_sign_vector_is_pm_one(self):
        v = PublicRandomness(2).sign_vector(64, "rot")
        assert set(np.unique(v)) <= {-1.0, 1.0}
