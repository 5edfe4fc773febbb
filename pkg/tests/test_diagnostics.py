import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from hetcp.core import make_rng
from hetcp.diagnostics import (
    _bootstrap_hd,
    bootstrap_quantile_diff,
    ci_indices,
    diagnose_scores,
    ecdf_by_class,
    harrell_davis,
    hd_level,
    hd_weights,
    ks_statistic,
    ks_two_sample,
    regularized_incomplete_beta,
)
from hetcp.errors import ConfigError, DataError


class TestEcdf:
    def test_steps(self):
        t = ecdf_by_class([2.0, 1.0, 3.0], [0, 0, 0])
        v, p = t.groups[0]
        assert v.tolist() == [1, 2, 3]
        np.testing.assert_allclose(p, [1 / 3, 2 / 3, 1])
        assert t.to_csv().splitlines()[0] == "group,value,cum_prob"

    def test_ties_and_identical_classes(self):
        t = ecdf_by_class([1, 1, 2, 1, 1, 2], [0, 0, 0, 1, 1, 1])
        for g in ("marginal", 0, 1):
            np.testing.assert_allclose(t.groups[g][1], [2 / 3, 1])
        assert t.quantile(0, 0.5) == 1.0 and t.quantile(0, 0.9) == 2.0
        np.testing.assert_allclose(t.evaluate(0, [0.5, 1.0, 5.0]), [0, 2 / 3, 1])

    def test_empty_group(self):
        with pytest.raises(DataError):
            ecdf_by_class([1.0, 2.0], [0, 2])
        with pytest.raises(DataError):
            ecdf_by_class([1.0], [0], n_classes=2)


class TestIncompleteBeta:
    @pytest.mark.parametrize("a,b", [(2, 2), (0.5, 3.7), (55.5, 45.5), (9000.9, 1000.1), (1.01, 0.99)])
    def test_against_mpmath(self, a, b):
        for x in (1e-4, 0.1, 0.37, 0.5, 0.9, 0.9999):
            ref = float(mpmath.betainc(a, b, 0, x, regularized=True))
            got = float(regularized_incomplete_beta(x, a, b))
            assert got == pytest.approx(ref, rel=1e-10, abs=1e-300)

    def test_polynomial_case(self):
        # Beta(2, 2) CDF is 3x^2 - 2x^3
        x = np.linspace(0, 1, 11)
        np.testing.assert_allclose(regularized_incomplete_beta(x, 2, 2), 3 * x**2 - 2 * x**3, atol=1e-15)

    def test_bad_parameters(self):
        with pytest.raises(ConfigError):
            regularized_incomplete_beta(0.5, 0, 1)


class TestHarrellDavis:
    def test_hand_example(self):
        np.testing.assert_allclose(hd_weights(3, 0.5), [7 / 27, 13 / 27, 7 / 27], atol=1e-15)
        assert harrell_davis([1, 2, 3], 0.5) == pytest.approx(2.0, abs=1e-12)

    def test_constant_sample(self):
        assert harrell_davis([4.2] * 17, 0.3) == pytest.approx(4.2, abs=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 10, 1000, 10000])
    def test_weights_sum_to_one(self, n):
        for q in np.arange(0.01, 1.0, 0.07):
            assert abs(hd_weights(n, q).sum() - 1) < 1e-12

    def test_consistency_uniform(self):
        u = make_rng(3).uniform(size=10000)
        for q in (0.1, 0.5, 0.9):
            assert abs(harrell_davis(u, q) - np.quantile(u, q)) < 0.02

    @given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=60),
           st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.floats(0.1, 10), st.floats(-50, 50))
    @settings(max_examples=150, deadline=None)
    def test_monotone_and_affine(self, xs, q1, q2, a, b):
        lo, hi = sorted((q1, q2))
        tol = 1e-9 * (1 + max(abs(x) for x in xs))
        assert harrell_davis(xs, lo) <= harrell_davis(xs, hi) + tol
        ys = [a * x + b for x in xs]
        assert harrell_davis(ys, lo) == pytest.approx(a * harrell_davis(xs, lo) + b, abs=1e-7 * (a * 100 + abs(b) + 1))

    def test_errors(self):
        with pytest.raises(ConfigError):
            harrell_davis([1, 2], 1.0)
        with pytest.raises(DataError):
            harrell_davis([], 0.5)

    def test_level_clamped(self):
        assert hd_level(0.1, 5) == 1 - 1e-9
        assert hd_level(0.1, 99) == pytest.approx(0.909090909)


class TestBootstrap:
    def test_ci_indices(self):
        assert ci_indices(2000, 0.025) == (24, 1974)
        assert ci_indices(1000, 0.025) == (12, 986)

    def test_same_sample_no_rejection(self):
        s = make_rng(0).normal(size=300)
        r = bootstrap_quantile_diff(s, s, 0.1, 0.025, 1000, make_rng(1))
        assert not r.rejects and r.verdict == "no-evidence"
        assert r.ci[0] <= r.ci[1]

    def test_shift_rejects(self):
        s = make_rng(0).normal(size=300)
        r = bootstrap_quantile_diff(s, s + 100, 0.1, 0.025, 1000, make_rng(1))
        assert r.rejects and r.ci[1] < 0 and r.to_dict()["verdict"] == "reject"

    def test_antisymmetric_with_mirrored_streams(self):
        a, b = make_rng(0).normal(size=200), make_rng(1).normal(size=250) + 0.3
        r1 = bootstrap_quantile_diff(a, b, 0.1, 0.025, 2000, make_rng(5))
        # swapping the samples and the order of their resampling streams negates every d_i;
        # the CI endpoints are not mirror order statistics, so agreement is up to one rank
        g = make_rng(5)
        da = _bootstrap_hd(a, hd_level(0.1, a.size), 2000, g)
        db = _bootstrap_hd(b, hd_level(0.1, b.size), 2000, g)
        d = np.sort(db - da)
        i, j = ci_indices(2000, 0.025)
        assert d[i] == pytest.approx(-r1.ci[1], abs=0.01)
        assert d[j] == pytest.approx(-r1.ci[0], abs=0.01)
        # with independent streams the swap agrees up to resampling noise
        r2 = bootstrap_quantile_diff(b, a, 0.1, 0.025, 2000, make_rng(6))
        assert r2.ci[0] == pytest.approx(-r1.ci[1], abs=0.1)
        assert r2.ci[1] == pytest.approx(-r1.ci[0], abs=0.1)

    def test_preconditions(self):
        with pytest.raises(ConfigError):
            bootstrap_quantile_diff([1.0], [2.0], 0.1, B=50)
        with pytest.raises(DataError):
            bootstrap_quantile_diff([], [2.0], 0.1)


def kolmogorov_series(lam):
    if lam <= 0:
        return 1.0
    return float(2 * mpmath.nsum(lambda k: (-1) ** (k - 1) * mpmath.exp(-2 * k * k * lam * lam), [1, mpmath.inf]))


class TestKS:
    def test_trivial(self):
        assert ks_two_sample([1, 2, 3], [1, 2, 3])[0] == 0.0
        assert ks_two_sample([1, 2, 3], [1, 2, 3])[1] == 1.0
        assert ks_two_sample([1, 2], [5, 6, 7])[0] == 1.0

    def test_statistic_vs_scipy(self):
        rng = make_rng(2)
        for _ in range(20):
            a = rng.normal(size=rng.integers(5, 300))
            b = rng.normal(0.2, 1.3, size=rng.integers(5, 300))
            assert ks_statistic(a, b) == pytest.approx(stats.ks_2samp(a, b).statistic, abs=1e-15)

    def test_statistic_with_ties(self):
        a, b = [1, 1, 2, 2, 3], [1, 2, 2, 2]
        assert ks_statistic(a, b) == pytest.approx(stats.ks_2samp(a, b).statistic)

    def test_p_value_vs_series(self):
        rng = make_rng(3)
        for _ in range(10):
            a, b = rng.normal(size=400), rng.normal(0.1, size=300)
            d, p = ks_two_sample(a, b)
            lam = math.sqrt(400 * 300 / 700) * d
            assert p == pytest.approx(kolmogorov_series(lam), rel=1e-9, abs=1e-15)

    def test_calibration(self):
        rej = 0
        for r in range(200):
            g = make_rng(10, r)
            rej += ks_two_sample(g.normal(size=1000), g.normal(size=1000))[1] < 0.05
        # nominal 5%; binomial 3-sigma band
        assert abs(rej / 200 - 0.05) <= 3 * math.sqrt(0.05 * 0.95 / 200)


def test_diagnose_scores_report():
    rng = make_rng(0)
    s = np.r_[rng.normal(size=300), rng.normal(size=300) + 3]
    c = np.r_[np.zeros(300, int), np.ones(300, int)]
    rep = diagnose_scores(s, c, 0.1, B=200, rng=make_rng(1))
    assert rep.verdict == "reject" and rep.pair(0, 1).ks_verdict == "reject"
    d = rep.to_dict()
    assert d["class_sizes"] == {"0": 300, "1": 300} and d["pairs"][0]["bootstrap"]["verdict"] == "reject"
