import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetcp.core import (
    Dataset,
    Interval,
    Observation,
    RngStream,
    SplitSpec,
    finite_quantile,
    inflated_level,
    make_rng,
    read_csv,
    split_dataset,
    split_sizes,
    write_csv,
)
from hetcp.errors import ConfigError, DataError, EmptyCalibrationError

finite_floats = st.floats(-1e6, 1e6, allow_nan=False)


class TestFiniteQuantile:
    def test_examples(self):
        assert finite_quantile([1, 2, 3, 4, 5], 0.6) == 3
        assert finite_quantile([3.1], 0.5) == 3.1
        assert finite_quantile(range(1, 10), 0.8 * (1 + 1 / 9)) == 8
        assert finite_quantile([1, 2, 3], 1.2) == math.inf

    def test_edges(self):
        assert finite_quantile([4, 2, 9], 0.0) == 2
        assert finite_quantile([4, 2, 9], -1.0) == 2
        assert finite_quantile([4, 2, 9], 1.0) == 9

    def test_empty(self):
        with pytest.raises(EmptyCalibrationError, match="empty calibration"):
            finite_quantile([], 0.5)

    def test_rank_oracle(self):
        # the k-th order statistic with k = ceil(beta * n), computed with exact fractions
        from fractions import Fraction

        vals = np.arange(1, 21, dtype=float)
        for num in range(1, 20):
            beta = Fraction(num, 20) * Fraction(21, 20)
            k = math.ceil(beta * 20)
            expected = math.inf if k > 20 else vals[k - 1]
            assert finite_quantile(vals, float(beta)) == expected

    @given(st.lists(finite_floats, min_size=1, max_size=40), st.floats(0, 1.2), st.floats(0, 1.2), st.randoms())
    @settings(max_examples=200, deadline=None)
    def test_monotone_and_permutation_invariant(self, xs, b1, b2, rnd):
        lo, hi = sorted((b1, b2))
        assert finite_quantile(xs, lo) <= finite_quantile(xs, hi)
        ys = list(xs)
        rnd.shuffle(ys)
        assert finite_quantile(xs, hi) == finite_quantile(ys, hi)

    def test_inflated_level(self):
        assert inflated_level(0.1, 9) == pytest.approx(1.0)
        assert inflated_level(0.2, 4) == pytest.approx(1.0)


class TestSplit:
    def test_sizes(self):
        assert split_sizes(100, SplitSpec()) == (40, 40, 20)
        assert split_sizes(10, SplitSpec(test_fraction=0.2)) == (4, 4, 2)

    def test_partition_and_determinism(self):
        X = np.arange(200, dtype=float).reshape(100, 2)
        d = Dataset(X, np.arange(100, dtype=float))
        a = split_dataset(d, SplitSpec(seed=3))
        b = split_dataset(d, SplitSpec(seed=3))
        for p, q in zip(a, b):
            np.testing.assert_array_equal(p.y, q.y)
        ids = np.concatenate([p.y for p in a])
        assert sorted(ids.tolist()) == list(range(100))
        assert [len(p) for p in a] == [40, 40, 20]
        c = split_dataset(d, SplitSpec(seed=4))
        assert not np.array_equal(a[2].y, c[2].y)

    def test_too_small(self):
        d = Dataset(np.zeros((3, 1)), np.zeros(3))
        with pytest.raises(DataError):
            split_dataset(d)

    def test_bad_fraction(self):
        with pytest.raises(ConfigError):
            SplitSpec(test_fraction=1.0)


class TestTypes:
    def test_observation_finite(self):
        with pytest.raises(ValueError):
            Observation((1.0, math.nan), 0.0)
        with pytest.raises(ValueError):
            Observation((1.0,), math.inf)

    def test_dataset(self):
        d = Dataset.from_observations([Observation((1.0, 2.0), 3.0), Observation((4.0, 5.0), 6.0)])
        assert d.dim == 2 and len(d) == 2
        assert [o.y for o in d] == [3.0, 6.0]
        with pytest.raises(ValueError):
            d.X[0, 0] = 9.0
        with pytest.raises(DataError):
            Dataset(np.zeros((2, 1)), np.array([0.0, np.nan]))

    def test_interval(self):
        i = Interval(-1.0, 2.0)
        assert 0.0 in i and 3.0 not in i and i.width == 3.0
        assert Interval(-math.inf, math.inf).width == math.inf
        with pytest.raises(ValueError):
            Interval(2.0, 1.0)


class TestRng:
    def test_reproducible(self):
        a = make_rng(5, 1, 2).standard_normal(4)
        b = RngStream(5, 1, 2).generator().standard_normal(4)
        np.testing.assert_array_equal(a, b)
        c = make_rng(5, 1, 3).standard_normal(4)
        assert not np.array_equal(a, c)

    def test_named_generator(self):
        # independent construction from numpy primitives
        seq = np.random.SeedSequence(7, spawn_key=(0,))
        ref = np.random.Generator(np.random.Philox(seq)).random(3)
        np.testing.assert_array_equal(make_rng(7, 0).random(3), ref)

    def test_child(self):
        assert RngStream(1, 2).child(3).stream == (2, 3)
        with pytest.raises(ValueError):
            RngStream(-1)


class TestCsv:
    def test_roundtrip(self, tmp_path):
        rng = make_rng(0)
        d = Dataset(rng.normal(size=(5, 3)), rng.normal(size=5))
        p = tmp_path / "d.csv"
        write_csv(p, d, mu=np.zeros(5), sigma=np.ones(5))
        t = read_csv(p)
        np.testing.assert_array_equal(t.dataset.X, d.X)
        np.testing.assert_array_equal(t.dataset.y, d.y)
        np.testing.assert_array_equal(t.truth_sigma, np.ones(5))
        assert t.columns == ["x0", "x1", "x2", "y", "mu", "sigma"]

    @pytest.mark.parametrize("body,row", [("1,2\nnan,3\n", 3), ("1,2\nfoo,3\n", 3), ("1,2\n1\n", 3)])
    def test_bad_rows(self, tmp_path, body, row):
        p = tmp_path / "bad.csv"
        p.write_text("x0,y\n" + body)
        with pytest.raises(DataError, match=f"row {row}"):
            read_csv(p)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(DataError):
            read_csv(p)


def test_permutation_enumeration_small():
    # exchangeable continuous scores: every ordering of n+1 values equally likely
    for n in range(1, 6):
        for alpha in (0.1, 0.25, 0.4):
            hits = total = 0
            for perm in itertools.permutations(range(n + 1)):
                calib, test = perm[:n], perm[n]
                hits += test <= finite_quantile(calib, inflated_level(alpha, n))
                total += 1
            assert hits / total >= 1 - alpha
