import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetcp.conformal import CalibratedPredictor, calibrate
from hetcp.core import Dataset, make_rng
from hetcp.errors import DataError
from hetcp.estimators import ConstantEstimator, OracleEstimator
from hetcp.metrics import aggregate, coverage_and_width, evaluate, report_from_arrays
from hetcp.nonconformity import Measure
from hetcp.synthetic import GeneratorSpec, SyntheticGenerator
from hetcp.taxonomy import Taxonomy


def fixed_predictor(a):
    return CalibratedPredictor(Measure("residual"), ConstantEstimator(0.0, 1.0), 0.1, critical=a)


def test_eight_of_ten():
    y = np.array([0.1, -0.2, 0.5, 0.9, -0.9, 0.0, 0.3, 0.4, 5.0, -5.0])
    X = np.c_[np.zeros(10), np.r_[np.full(5, 0.1), np.full(5, 0.5)]]
    r = evaluate(fixed_predictor(1.0), Dataset(X, y), Taxonomy.feature_threshold(1, 0.2))
    assert r.marginal_coverage == 0.8
    assert r.marginal_width == 2.0
    assert r.per_class[1].coverage == 1.0 and r.per_class[0].coverage == 0.6
    assert sum(c.count for c in r.per_class.values()) == r.n_test == 10


def test_infinite_intervals():
    d = Dataset(np.zeros((4, 2)), np.arange(4.0))
    r = evaluate(fixed_predictor(math.inf), d, Taxonomy.feature_threshold(1, 0.2))
    assert r.marginal_coverage == 1.0 and r.marginal_width == math.inf and r.n_infinite == 4
    assert json.loads(r.to_json())["marginal"]["width"] == "inf"


def test_empty_class_missing_and_empty_test():
    d = Dataset(np.c_[np.zeros(3), np.ones(3)], np.zeros(3))
    r = evaluate(fixed_predictor(1.0), d, Taxonomy.feature_threshold(1, 0.2))
    assert r.per_class[1].coverage is None and r.per_class[1].count == 0
    with pytest.raises(DataError):
        evaluate(fixed_predictor(1.0), Dataset(np.zeros((0, 2)), np.zeros(0)), Taxonomy.feature_threshold(1, 0.2))


def test_empty_set_width_zero():
    cov, w = coverage_and_width(np.array([1.0]), np.array([0.0]), np.array([0.5]))
    assert not cov[0] and w[0] == 0.0


@given(st.lists(st.tuples(st.booleans(), st.integers(0, 2)), min_size=1, max_size=100))
@settings(max_examples=100, deadline=None)
def test_marginal_is_count_weighted_mean(rows):
    covered = np.array([r[0] for r in rows])
    classes = np.array([r[1] for r in rows])
    rep = report_from_arrays(covered, np.ones(len(rows)), classes, 3, 0.1)
    total = sum(c.coverage * c.count for c in rep.per_class.values() if c.count)
    assert rep.marginal_coverage == pytest.approx(total / len(rows))
    perm = np.random.default_rng(0).permutation(len(rows))
    rep2 = report_from_arrays(covered[perm], np.ones(len(rows)), classes[perm], 3, 0.1)
    assert rep2.marginal_coverage == rep.marginal_coverage


def test_residual_widths_constant():
    gen = SyntheticGenerator(GeneratorSpec("type1"))
    est = OracleEstimator(gen)
    calib, _ = gen.sample(200, make_rng(0))
    test, _ = gen.sample(200, make_rng(1))
    p = calibrate(Measure("residual"), est, calib, 0.1)
    lo, hi = p.predict(test.X)
    assert np.ptp(hi - lo) < 1e-12


def test_aggregate():
    d = Dataset(np.c_[np.zeros(4), [0.1, 0.1, 0.5, 0.5]], np.array([0.0, 3.0, 0.0, 0.0]))
    t = Taxonomy.feature_threshold(1, 0.2)
    r = evaluate(fixed_predictor(1.0), d, t)
    agg = aggregate([r, r, r])
    assert agg.mean("marginal") == 0.75 and agg.std("marginal") == 0.0
    assert agg.mean(1) == 0.5 and agg.std(1, "width") == 0.0
    csv = agg.to_csv().splitlines()
    assert csv[0] == "class,metric,mean,std"
    assert "marginal,coverage,0.75,0.0" in csv
    with pytest.raises(ValueError):
        aggregate([r])
    other = evaluate(fixed_predictor(1.0), d, Taxonomy.fit_difficulty(OracleEstimator(
        SyntheticGenerator(GeneratorSpec("type1"))), make_rng(0).uniform(size=(30, 2)), 3))
    with pytest.raises(ValueError, match="mismatched"):
        aggregate([r, other])
