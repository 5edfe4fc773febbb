import json
import math

import numpy as np
import pytest

from hetcp.conformal import CalibratedPredictor, calibrate, calibrate_mondrian, critical_score
from hetcp.core import Dataset, make_rng
from hetcp.errors import ConfigError, EmptyCalibrationError
from hetcp.estimators import ConstantEstimator, EstimatorSpec, OracleEstimator
from hetcp.nonconformity import Measure
from hetcp.synthetic import GeneratorSpec, SyntheticGenerator
from hetcp.taxonomy import BinEdges, Taxonomy


def test_critical_by_hand():
    calib = Dataset(np.zeros((9, 1)), np.arange(1, 10, dtype=float))
    p = calibrate(Measure("residual"), ConstantEstimator(0.0, 1.0), calib, 0.2)
    # (1 - 0.2)(1 + 1/9) * 9 = 8
    assert p.critical == 8.0
    assert p.interval([0.0]).lower == -8.0
    assert critical_score([], 0.1) == math.inf


def test_too_few_points_gives_infinite_interval():
    calib = Dataset(np.zeros((5, 1)), np.arange(5, dtype=float))
    p = calibrate(Measure("residual"), ConstantEstimator(0.0, 1.0), calib, 0.1)
    assert p.critical == math.inf
    iv = p.interval([0.0])
    assert iv.lower == -math.inf and iv.upper == math.inf


def test_errors():
    est = ConstantEstimator(0.0, 1.0)
    empty = Dataset(np.zeros((0, 1)), np.zeros(0))
    with pytest.raises(EmptyCalibrationError, match="empty calibration"):
        calibrate(Measure("residual"), est, empty, 0.1)
    calib = Dataset(np.zeros((3, 1)), np.zeros(3))
    with pytest.raises(ConfigError, match="diagnostic-only"):
        calibrate(Measure("standardized"), est, calib, 0.1)
    with pytest.raises(ConfigError):
        calibrate(Measure("residual"), est, calib, 1.0)


def test_mondrian_empty_class_is_infinite():
    X = np.c_[np.zeros(50), np.linspace(0.3, 1, 50)]
    calib = Dataset(X, np.linspace(-1, 1, 50))
    t = Taxonomy.feature_threshold(1, 0.2)
    p = calibrate_mondrian(Measure("residual"), ConstantEstimator(0.0, 1.0), calib, 0.1, t)
    assert p.critical_by_class[1] == math.inf
    assert p.calib_sizes == {0: 50, 1: 0}
    lo, hi = p.predict(np.array([[0.0, 0.1], [0.0, 0.9]]))
    assert lo[0] == -math.inf and math.isfinite(lo[1])


def test_mondrian_equals_per_class_global():
    gen = SyntheticGenerator(GeneratorSpec("type3"))
    est = OracleEstimator(gen)
    calib, _ = gen.sample(600, make_rng(1))
    t = Taxonomy.fit_difficulty(est, calib.X, 3)
    p = calibrate_mondrian(Measure("residual"), est, calib, 0.1, t)
    cls = t.classify(calib.X)
    for c in range(3):
        g = calibrate(Measure("residual"), est, calib.subset(np.flatnonzero(cls == c)), 0.1)
        assert p.critical_by_class[c] == g.critical


def test_serialisation_roundtrip():
    gen = SyntheticGenerator(GeneratorSpec("type1"))
    est = OracleEstimator(gen)
    calib, _ = gen.sample(300, make_rng(2))
    t = Taxonomy.fit_difficulty(est, calib.X, 3)
    p = calibrate_mondrian(Measure("normalized"), est, calib, 0.1, t, EstimatorSpec("oracle"))
    d = json.loads(p.to_json())
    q = CalibratedPredictor.from_dict(d, est)
    X = make_rng(3).uniform(size=(20, 2))
    for a, b in zip(p.predict(X), q.predict(X)):
        np.testing.assert_array_equal(a, b)
    d["critical"]["0"] = "inf"
    assert CalibratedPredictor.from_dict(d, est).critical_by_class[0] == math.inf
    with pytest.raises(ConfigError):
        CalibratedPredictor.from_dict({"alpha": 0.1}, est)


def test_predictor_invariants():
    with pytest.raises(ConfigError):
        CalibratedPredictor(Measure("residual"), None, 0.1)
    with pytest.raises(ConfigError):
        CalibratedPredictor(Measure("residual"), None, 0.1, critical_by_class={0: 1.0})
    with pytest.raises(ConfigError):
        CalibratedPredictor(Measure("residual"), None, 0.1, critical=1.0).predict(np.zeros((1, 1)))


def test_marginal_coverage_monte_carlo():
    # quick check; the acceptance suite runs the full bound
    gen = SyntheticGenerator(GeneratorSpec("type2"))
    est = OracleEstimator(gen)
    hits = []
    for r in range(300):
        calib, _ = gen.sample(19, make_rng(4, r, 0))
        test, _ = gen.sample(1, make_rng(4, r, 1))
        p = calibrate(Measure("normalized"), est, calib, 0.1)
        lo, hi = p.predict(test.X)
        hits.append(lo[0] <= test.y[0] <= hi[0])
    # exact coverage 18/20 for n = 19
    assert abs(np.mean(hits) - 0.9) < 3 * math.sqrt(0.09 / 300)


def test_bins_reuse_sigma():
    # classification through the predictor agrees with the taxonomy itself
    gen = SyntheticGenerator(GeneratorSpec("type1"))
    est = OracleEstimator(gen)
    t = Taxonomy.difficulty_bins(est, BinEdges((1.1, 1.3), 3))
    calib, _ = gen.sample(200, make_rng(0))
    p = calibrate_mondrian(Measure("residual"), est, calib, 0.2, t)
    X = make_rng(1).uniform(size=(30, 2))
    np.testing.assert_array_equal(p.classes_of(X, est.predict(X)), t.classify(X))
