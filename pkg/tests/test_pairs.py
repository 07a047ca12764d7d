"""Pair mining tests with brute-force oracles for sampling and labeling."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgefbg.pairs import (
    LabeledPair,
    PairThresholds,
    build_pair_epoch,
    chain_rmse,
    compute_thresholds,
    label_pairs,
    pairwise_rmse,
)


def random_chains(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    base = np.cumsum(rng.normal(0, 5, size=(n, 21, 3)), axis=1)
    return base.astype(np.float32)


def brute_force_rmse(a: np.ndarray, b: np.ndarray) -> float:
    # independent path: per-marker norms via np.linalg, mean of squares
    norms = np.linalg.norm(a.astype(np.float64) - b.astype(np.float64), axis=-1)
    return float(np.sqrt(np.mean(norms**2)))


class TestPairwiseRmse:
    def test_identical_shapes_rmse_zero(self):
        chains = np.repeat(random_chains(1, 0), 2, axis=0)
        pairs = pairwise_rmse(chains, budget=10)
        assert pairs.size == 1
        assert pairs.rmse[0] == 0.0

    def test_uniform_offset_rmse_is_the_offset(self):
        a = random_chains(1, 1)[0]
        chains = np.stack([a, a + np.array([1.0, 0.0, 0.0], dtype=np.float32)])
        pairs = pairwise_rmse(chains, budget=10)
        assert pairs.rmse[0] == pytest.approx(1.0, abs=1e-6)

    def test_full_enumeration_of_5_samples_gives_10_pairs(self):
        pairs = pairwise_rmse(random_chains(5, 2), budget=1000)
        assert pairs.size == 10
        seen = set(zip(pairs.index_a.tolist(), pairs.index_b.tolist()))
        assert seen == set(itertools.combinations(range(5), 2))

    def test_rmse_matches_brute_force(self):
        chains = random_chains(12, 3)
        pairs = pairwise_rmse(chains, budget=10**6)
        for a, b, r in zip(pairs.index_a, pairs.index_b, pairs.rmse):
            assert r == pytest.approx(brute_force_rmse(chains[a], chains[b]),
                                      rel=1e-12)

    def test_budget_caps_and_dedupes_sampling(self):
        chains = random_chains(40, 4)  # 780 possible pairs
        pairs = pairwise_rmse(chains, budget=200, seed=5)
        assert pairs.size == 200
        assert np.all(pairs.index_a < pairs.index_b)
        seen = set(zip(pairs.index_a.tolist(), pairs.index_b.tolist()))
        assert len(seen) == 200

    def test_sampling_deterministic_in_seed(self):
        chains = random_chains(40, 6)
        a = pairwise_rmse(chains, budget=150, seed=9)
        b = pairwise_rmse(chains, budget=150, seed=9)
        c = pairwise_rmse(chains, budget=150, seed=10)
        assert np.array_equal(a.index_a, b.index_a)
        assert np.array_equal(a.index_b, b.index_b)
        assert np.array_equal(a.rmse, b.rmse)
        assert not np.array_equal(a.index_a, c.index_a) or not np.array_equal(
            a.index_b, c.index_b)

    def test_chain_rmse_helper_agrees(self):
        chains = random_chains(2, 7)
        assert chain_rmse(chains[0], chains[1]) == pytest.approx(
            brute_force_rmse(chains[0], chains[1]), rel=1e-12)

    def test_errors(self):
        chains = random_chains(5, 8)
        with pytest.raises(ValueError):
            pairwise_rmse(chains, budget=0)
        with pytest.raises(ValueError):
            pairwise_rmse(chains[:1], budget=10)
        with pytest.raises(ValueError):
            pairwise_rmse(chains.reshape(5, 63), budget=10)

    @given(n=st.integers(2, 25), budget=st.integers(1, 400),
           seed=st.integers(0, 50))
    @settings(max_examples=40, deadline=None)
    def test_sampled_pairs_always_valid(self, n, budget, seed):
        chains = random_chains(n, 11)
        pairs = pairwise_rmse(chains, budget=budget, seed=seed)
        total = n * (n - 1) // 2
        assert pairs.size == min(budget, total)
        assert np.all(pairs.index_a < pairs.index_b)
        assert np.all(pairs.index_b < n)
        assert len(set(zip(pairs.index_a.tolist(), pairs.index_b.tolist()))) == pairs.size
        assert np.all(pairs.rmse >= 0.0)


class TestThresholds:
    def test_percentiles_of_1_to_100(self):
        values = np.arange(1.0, 101.0)
        thr = compute_thresholds(values)
        assert thr.t_low == pytest.approx(1.99, abs=1e-12)
        assert thr.t_high == pytest.approx(25.75, abs=1e-12)
        assert thr.band == 0.01

    def test_deterministic_given_values(self):
        values = np.random.default_rng(0).uniform(1, 50, size=500)
        assert compute_thresholds(values) == compute_thresholds(values)

    def test_all_equal_values_rejected(self):
        with pytest.raises(ValueError):
            compute_thresholds(np.full(200, 3.0))

    def test_too_few_values_rejected(self):
        with pytest.raises(ValueError):
            compute_thresholds(np.arange(1.0, 100.0)[:99])

    def test_threshold_invariants(self):
        with pytest.raises(ValueError):
            PairThresholds(t_low=2.0, t_high=1.0)
        with pytest.raises(ValueError):
            PairThresholds(t_low=0.0, t_high=1.0)
        with pytest.raises(ValueError):
            PairThresholds(t_low=1.0, t_high=2.0, band=0.0)


class TestLabeling:
    def make_pairs(self, rmse_values):
        chains = random_chains(len(rmse_values) + 1, 12)
        pairs = pairwise_rmse(chains, budget=10**9)
        keep = pairs.size >= len(rmse_values)
        assert keep
        sub = type(pairs)(
            index_a=pairs.index_a[: len(rmse_values)],
            index_b=pairs.index_b[: len(rmse_values)],
            rmse=np.asarray(rmse_values, dtype=np.float64),
        )
        return sub

    def test_rule_boundaries(self):
        thr = PairThresholds(t_low=2.0, t_high=10.0, band=0.01)
        rmse = [0.0, 1.999, 2.0, 5.0, 8.9, 9.9, 9.90001, 10.0, 10.1, 10.10001]
        labeled = label_pairs(self.make_pairs(rmse), thr)
        by_rmse = {}
        sub = self.make_pairs(rmse)
        for pair in labeled:
            mask = (sub.index_a == pair.index_a) & (sub.index_b == pair.index_b)
            by_rmse[float(sub.rmse[mask][0])] = pair.label
        assert by_rmse[0.0] == 0
        assert by_rmse[1.999] == 0
        assert 2.0 not in by_rmse  # strict < t_low, outside the band
        assert 5.0 not in by_rmse  # midway: discarded
        assert 8.9 not in by_rmse
        assert by_rmse[9.9] == 1  # exactly t_high - 1%
        assert by_rmse[9.90001] == 1
        assert by_rmse[10.0] == 1  # exactly t_high
        assert by_rmse[10.1] == 1  # exactly t_high + 1%
        assert 10.10001 not in by_rmse

    def test_labels_match_brute_force_oracle(self):
        chains = random_chains(120, 13)
        pairs = pairwise_rmse(chains, budget=10**9)
        thr = compute_thresholds(pairs)
        labeled = label_pairs(pairs, thr)
        got = {(p.index_a, p.index_b): p.label for p in labeled}
        expected = {}
        for a, b in itertools.combinations(range(len(chains)), 2):
            r = brute_force_rmse(chains[a], chains[b])
            if r < thr.t_low:
                expected[(a, b)] = 0
            elif abs(r - thr.t_high) <= thr.band * thr.t_high:
                expected[(a, b)] = 1
        assert got == expected

    def test_pair_validation(self):
        with pytest.raises(ValueError):
            LabeledPair(3, 3, 0)
        with pytest.raises(ValueError):
            LabeledPair(1, 2, 2)


class TestPairEpochs:
    def labeled(self, n_genuine, n_imposter):
        pairs = []
        k = 0
        for _ in range(n_genuine):
            pairs.append(LabeledPair(k, k + 1, 0))
            k += 2
        for _ in range(n_imposter):
            pairs.append(LabeledPair(k, k + 1, 1))
            k += 2
        return pairs

    def test_truncates_majority_to_balance(self):
        batches = build_pair_epoch(self.labeled(100, 300), seed=0, batch_size=64)
        total = sum(b.size for b in batches)
        assert total == 200
        for batch in batches:
            zeros = int((batch.labels == 0).sum())
            ones = int((batch.labels == 1).sum())
            assert zeros == ones

    def test_same_seed_same_batches(self):
        pairs = self.labeled(40, 55)
        a = build_pair_epoch(pairs, seed=3)
        b = build_pair_epoch(pairs, seed=3)
        c = build_pair_epoch(pairs, seed=4)
        assert len(a) == len(b)
        for ba, bb in zip(a, b):
            assert np.array_equal(ba.index_a, bb.index_a)
            assert np.array_equal(ba.index_b, bb.index_b)
            assert np.array_equal(ba.labels, bb.labels)
        assert any(not np.array_equal(ba.index_a, bc.index_a)
                   for ba, bc in zip(a, c))

    def test_labels_reverified_by_oracle_pass(self):
        chains = random_chains(80, 14)
        pairs = pairwise_rmse(chains, budget=10**9)
        thr = compute_thresholds(pairs)
        labeled = label_pairs(pairs, thr)
        batches = build_pair_epoch(labeled, seed=1, batch_size=16)
        for batch in batches:
            for a, b, label in zip(batch.index_a, batch.index_b, batch.labels):
                r = brute_force_rmse(chains[a], chains[b])
                if label == 0:
                    assert r < thr.t_low
                else:
                    assert abs(r - thr.t_high) <= thr.band * thr.t_high

    def test_empty_class_is_an_error(self):
        with pytest.raises(ValueError, match="pair budget"):
            build_pair_epoch(self.labeled(10, 0), seed=0)
        with pytest.raises(ValueError, match="pair budget"):
            build_pair_epoch(self.labeled(0, 10), seed=0)

    def test_batch_size_validation(self):
        with pytest.raises(ValueError):
            build_pair_epoch(self.labeled(4, 4), seed=0, batch_size=7)
