import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from hetcp.core import make_rng
from hetcp.errors import ConfigError, DegenerateError
from hetcp.estimators import IntervalEstimate, MeanVarEstimate, mv_interval
from hetcp.nonconformity import Measure, interval_identity_check, invert, invert_one, prediction_for, score

reals = st.floats(-1e3, 1e3, allow_nan=False)
scales = st.floats(1e-3, 1e3, allow_nan=False)


def test_parse_names():
    assert Measure.parse("res").kind == "residual"
    assert Measure.parse("normalized").short == "norm"
    assert not Measure.parse("std").invertible
    with pytest.raises(ConfigError):
        Measure.parse("quantile")


def test_scores_by_hand():
    est = MeanVarEstimate(1.0, 2.0)
    assert score(Measure("residual"), est, 4.0) == 3.0
    assert score(Measure("normalized", 0.0), est, 4.0) == 1.5
    assert score(Measure("standardized", 0.0), est, -1.0) == -1.0
    iv = IntervalEstimate(0.0, 2.0)
    assert score(Measure("interval"), iv, 3.0) == 1.0
    assert score(Measure("interval"), iv, 1.0) == -1.0


def test_type_mismatch():
    with pytest.raises(TypeError):
        score(Measure("interval"), MeanVarEstimate(0.0, 1.0), 0.0)
    with pytest.raises(TypeError):
        score(Measure("residual"), IntervalEstimate(0.0, 1.0), 0.0)


def test_degenerate_difficulty():
    with pytest.raises(DegenerateError, match="degenerate difficulty"):
        score(Measure("normalized", 0.0), MeanVarEstimate(0.0, 0.0), 1.0)
    # the default epsilon keeps sigma_hat = 0 usable
    assert score(Measure("normalized"), MeanVarEstimate(0.0, 0.0), 1.0) == pytest.approx(1e8)


def test_standardized_not_invertible():
    with pytest.raises(ConfigError, match="diagnostic-only"):
        invert(Measure("standardized"), MeanVarEstimate(0.0, 1.0), 1.0)


def test_empty_and_infinite_sets():
    iv = IntervalEstimate(0.0, 2.0)
    assert invert_one(Measure("interval"), iv, -1.5) is None
    whole = invert_one(Measure("normalized"), MeanVarEstimate(0.0, 1.0), math.inf)
    assert whole.lower == -math.inf and whole.upper == math.inf


@given(st.sampled_from(["residual", "normalized", "interval"]), reals, scales, reals, st.floats(0, 50))
@settings(max_examples=300, deadline=None)
def test_inversion_is_sublevel_set(kind, mu, sigma, y, a):
    m = Measure(kind)
    pred = prediction_for(m, MeanVarEstimate(mu, sigma), 0.1)
    lo, hi = invert(m, pred, a)
    s = score(m, pred, y)
    inside = lo <= y <= hi
    # agree except within rounding of the boundary
    if abs(s - a) > 1e-9 * max(1.0, abs(a), abs(y) / sigma):
        assert inside == (s <= a)


def test_identity_vectorised():
    rng = make_rng(0)
    est = MeanVarEstimate(rng.normal(size=100), rng.uniform(0, 3, 100))
    y = rng.normal(size=100) * 3
    lhs, rhs = interval_identity_check(est, 0.1, y)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    z = special.ndtri(0.95)
    iv = mv_interval(est, 0.1)
    np.testing.assert_allclose(iv.y_plus - iv.y_minus, 2 * z * est.sigma)


def test_dict_roundtrip():
    m = Measure("normalized", 1e-6)
    assert Measure.from_dict(m.to_dict()) == m
