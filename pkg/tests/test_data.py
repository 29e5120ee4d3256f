import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.special import logsumexp

from distsgd.data import (
    DataError,
    Dataset,
    MinibatchSampler,
    draw_minibatch,
    fisher_yates,
    generate_synthetic,
    load_csv,
    partition_minibatch,
    save_csv,
)
from distsgd.numerics import MlpModel, loss


def oracle_first_minibatch(seed, n, size):
    """Independent SplitMix64 plus textbook Fisher-Yates, plain Python ints."""
    state = seed

    def next_u64():
        nonlocal state
        state = (state + 0x9E3779B97F4A7C15) & (2**64 - 1)
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & (2**64 - 1)
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & (2**64 - 1)
        return z ^ (z >> 31)

    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        j = next_u64() % (i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm[:size]


class TestSynthetic:
    def test_balanced_two_classes(self):
        ds = generate_synthetic(0, 100, 3, 2, 1.0)
        assert np.bincount(ds.labels).tolist() == [50, 50]

    @pytest.mark.parametrize("n,c", [(101, 3), (5000, 10), (7, 7)])
    def test_balance_within_one(self, n, c):
        counts = np.bincount(generate_synthetic(1, n, 2, c, 2.0).labels, minlength=c)
        assert counts.max() - counts.min() <= 1 and counts.sum() == n

    def test_deterministic(self):
        a = generate_synthetic(9, 200, 4, 3, 3.0)
        b = generate_synthetic(9, 200, 4, 3, 3.0)
        assert a.features.tobytes() == b.features.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()
        c = generate_synthetic(10, 200, 4, 3, 3.0)
        assert a.features.tobytes() != c.features.tobytes()

    def test_centres_sit_at_spread(self):
        ds = generate_synthetic(4, 20000, 3, 2, 6.0)
        for k in range(2):
            centre = ds.features[ds.labels == k].mean(axis=0)
            assert np.linalg.norm(centre) == pytest.approx(6.0, abs=0.1)

    @pytest.mark.parametrize("args", [(0, 1, 2, 2, 1.0), (0, 10, 2, 1, 1.0), (0, 10, 0, 2, 1.0),
                                      (0, 10, 2, 2, 0.0), (0, 10, 2, 2, -1.0)])
    def test_invalid(self, args):
        with pytest.raises(DataError):
            generate_synthetic(*args)

    def test_spread_ten_is_linearly_separable(self):
        ds = generate_synthetic(0, 1000, 5, 2, 10.0)
        model = MlpModel((5, 2))
        assert loss(model, np.zeros(model.n_params), ds.features, ds.labels) == pytest.approx(math.log(2))
        # Reference logistic regression fitted by scipy.
        x, y = ds.features, ds.labels

        def objective(theta):
            z = x @ theta[:5] + theta[5]
            logits = np.stack([np.zeros_like(z), z], axis=1)
            return np.mean(logsumexp(logits, axis=1) - logits[np.arange(len(y)), y])

        fit = minimize(objective, np.zeros(6), method="BFGS")
        assert fit.fun < 0.1
        # The same optimum expressed as our 5-2 model reaches the same loss.
        w = np.zeros(model.n_params)
        w[5:10] = fit.x[:5]
        w[11] = fit.x[5]
        assert loss(model, w, x, y) == pytest.approx(fit.fun, rel=1e-9)


class TestSampling:
    def test_oracle_seed_42(self):
        sampler = MinibatchSampler(8, 42)
        assert sampler.draw(4).tolist() == oracle_first_minibatch(42, 8, 4)

    @pytest.mark.parametrize("seed", [0, 1, 7, 123456789])
    def test_fisher_yates_matches_oracle(self, seed):
        from distsgd.numerics import Rng
        assert fisher_yates(50, Rng(seed)).tolist() == oracle_first_minibatch(seed, 50, 50)

    def test_full_size_is_permutation(self):
        ds = generate_synthetic(0, 30, 2, 3, 1.0)
        idx = draw_minibatch(ds, MinibatchSampler(30, 5), 30)
        assert sorted(idx.tolist()) == list(range(30))

    def test_two_draws_in_one_epoch_are_disjoint(self):
        s = MinibatchSampler(20, 3)
        a, b = s.draw(10), s.draw(10)
        assert not set(a.tolist()) & set(b.tolist())
        assert s.epoch == 0

    def test_epoch_refresh_and_tail_drop(self):
        s = MinibatchSampler(10, 3)
        s.draw(4)
        s.draw(4)
        assert s.epoch == 0
        third = s.draw(4)
        assert s.epoch == 1 and len(set(third.tolist())) == 4

    def test_too_large(self):
        ds = generate_synthetic(0, 10, 2, 2, 1.0)
        with pytest.raises(DataError):
            draw_minibatch(ds, MinibatchSampler(10, 0), 11)
        with pytest.raises(DataError):
            draw_minibatch(ds, MinibatchSampler(12, 0), 4)

    def test_with_replacement(self):
        s = MinibatchSampler(5, 1, replacement=True)
        draws = np.concatenate([s.draw(5) for _ in range(20)])
        assert draws.min() >= 0 and draws.max() < 5
        assert len(set(draws.tolist())) < len(draws)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**64 - 1), n_batches=st.integers(1, 10), size=st.integers(1, 9))
    def test_epoch_coverage(self, seed, n_batches, size):
        n = n_batches * size
        s = MinibatchSampler(n, seed)
        seen = np.concatenate([s.draw(size) for _ in range(n_batches)])
        assert sorted(seen.tolist()) == list(range(n))
        assert s.epoch == 0


class TestPartition:
    def test_contiguous(self):
        shards = partition_minibatch(list(range(8)), 4)
        assert [s.indices.tolist() for s in shards] == [[0, 1], [2, 3], [4, 5], [6, 7]]
        assert [s.owner for s in shards] == [0, 1, 2, 3]

    def test_single_worker_identity(self):
        (s,) = partition_minibatch([5, 3, 9], 1)
        assert s.indices.tolist() == [5, 3, 9]

    def test_not_divisible(self):
        with pytest.raises(DataError):
            partition_minibatch(list(range(6)), 4)
        with pytest.raises(DataError):
            partition_minibatch(list(range(6)), 0)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32), per=st.integers(1, 8), n=st.integers(1, 8))
    def test_partition_property(self, seed, per, n):
        m = MinibatchSampler(per * n + 3, seed).draw(per * n)
        shards = partition_minibatch(m, n)
        sets = [set(s.indices.tolist()) for s in shards]
        assert all(len(s.indices) == per for s in shards)
        assert set().union(*sets) == set(m.tolist())
        assert sum(len(s) for s in sets) == len(m)
        assert np.concatenate([s.indices for s in shards]).tolist() == m.tolist()


class TestCsv:
    def test_parse(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("1.0,2.0,0\n3.0,4.0,1\n")
        ds = load_csv(p)
        assert len(ds) == 2 and ds.n_features == 2 and ds.n_classes == 2
        assert ds.features.tolist() == [[1.0, 2.0], [3.0, 4.0]]
        assert ds.labels.tolist() == [0, 1]

    def test_bad_value_names_line(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("1.0,abc,0\n")
        with pytest.raises(DataError, match="line 1"):
            load_csv(p)

    def test_ragged_row_names_line(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("1.0,2.0,0\n1.0,1\n")
        with pytest.raises(DataError, match="line 2"):
            load_csv(p)

    def test_empty(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("")
        with pytest.raises(DataError):
            load_csv(p)

    def test_round_trip(self, tmp_path):
        ds = generate_synthetic(3, 57, 4, 3, 2.5)
        p = tmp_path / "d.csv"
        save_csv(ds, p)
        back = load_csv(p)
        assert back.features.tobytes() == ds.features.tobytes()
        assert back.labels.tolist() == ds.labels.tolist()
        assert back.n_classes == 3


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 2)), np.array([0, 2]), 2)
    with pytest.raises(DataError):
        Dataset(np.zeros((0, 2)), np.zeros(0, dtype=int), 2)
