"""Inductive (split) conformal regression and its Mondrian variant."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, Interval, finite_quantile, inflated_level
from .errors import ConfigError, EmptyCalibrationError
from .estimators import Estimator, EstimatorSpec
from .nonconformity import Measure, invert, prediction_for, score
from .taxonomy import DIFFICULTY_BINS, Taxonomy


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")


def calibration_scores(measure: Measure, estimator: Estimator, data: Dataset, alpha: float) -> np.ndarray:
    est = estimator.predict(data.X)
    return np.asarray(score(measure, prediction_for(measure, est, alpha), data.y), dtype=float).reshape(-1)


def critical_score(scores, alpha: float) -> float:
    """Inflated empirical quantile of the calibration scores; ``+inf`` if none."""
    scores = np.asarray(scores, dtype=float).reshape(-1)
    if scores.size == 0:
        return math.inf
    return finite_quantile(scores, inflated_level(alpha, scores.size))


@dataclass(frozen=True, eq=False)
class CalibratedPredictor:
    """Critical score(s) plus everything needed to turn them into intervals.

    Exactly one of ``critical`` (global predictor) and ``critical_by_class``
    (Mondrian predictor, requires ``taxonomy``) is set.
    """

    measure: Measure
    estimator: Estimator | None
    alpha: float
    critical: float | None = None
    critical_by_class: dict[int, float] | None = None
    taxonomy: Taxonomy | None = None
    calib_sizes: dict[int, int] = field(default_factory=dict)
    estimator_spec: EstimatorSpec | None = None

    def __post_init__(self):
        _check_alpha(self.alpha)
        if (self.critical is None) == (self.critical_by_class is None):
            raise ConfigError("set exactly one of a global critical score or per-class scores")
        if self.critical_by_class is not None and self.taxonomy is None:
            raise ConfigError("a Mondrian predictor needs its taxonomy")

    @property
    def mondrian(self) -> bool:
        return self.critical_by_class is not None

    def classes_of(self, X, est=None) -> np.ndarray:
        t = self.taxonomy
        if est is not None and t.kind == DIFFICULTY_BINS and t.difficulty is self.estimator:
            return t.classify_difficulty(est.sigma)
        return t.classify(X)

    def critical_for(self, X, est=None):
        if not self.mondrian:
            return self.critical
        classes = self.classes_of(X, est)
        table = np.array([self.critical_by_class.get(c, math.inf) for c in range(self.taxonomy.n_classes)])
        return table[classes]

    def predict(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Interval bounds for every row of ``X``; empty sets have lower > upper."""
        if self.estimator is None:
            raise ConfigError("predictor has no estimator attached")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        est = self.estimator.predict(X)
        pred = prediction_for(self.measure, est, self.alpha)
        lo, hi = invert(self.measure, pred, self.critical_for(X, est))
        return np.broadcast_to(lo, (len(X),)).copy(), np.broadcast_to(hi, (len(X),)).copy()

    def interval(self, x) -> Interval | None:
        lo, hi = self.predict(np.asarray(x, dtype=float).reshape(1, -1))
        if lo[0] > hi[0]:
            return None
        return Interval(float(lo[0]), float(hi[0]))

    def with_estimator(self, estimator: Estimator) -> "CalibratedPredictor":
        taxonomy = self.taxonomy
        if taxonomy is not None and taxonomy.kind == DIFFICULTY_BINS:
            taxonomy = taxonomy.with_estimator(estimator)
        return CalibratedPredictor(
            self.measure, estimator, self.alpha, self.critical, self.critical_by_class,
            taxonomy, self.calib_sizes, self.estimator_spec,
        )

    # -- serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        d: dict = {
            "measure": self.measure.to_dict(),
            "alpha": self.alpha,
            "mondrian": self.mondrian,
            "calib_sizes": {str(k): v for k, v in self.calib_sizes.items()},
        }
        if self.mondrian:
            d["critical"] = {str(c): _enc(a) for c, a in self.critical_by_class.items()}
        else:
            d["critical"] = _enc(self.critical)
        if self.taxonomy is not None:
            d["taxonomy"] = self.taxonomy.to_dict()
        if self.estimator_spec is not None:
            d["estimator"] = self.estimator_spec.to_dict()
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict, estimator: Estimator | None = None) -> "CalibratedPredictor":
        try:
            measure = Measure.from_dict(d["measure"])
            taxonomy = Taxonomy.from_dict(d["taxonomy"], estimator) if "taxonomy" in d else None
            spec = EstimatorSpec.from_dict(d["estimator"]) if "estimator" in d else None
            sizes = {int(k): int(v) for k, v in d.get("calib_sizes", {}).items()}
            if d.get("mondrian"):
                crit = {int(c): _dec(a) for c, a in d["critical"].items()}
                return cls(measure, estimator, float(d["alpha"]), None, crit, taxonomy, sizes, spec)
            return cls(measure, estimator, float(d["alpha"]), _dec(d["critical"]), None, taxonomy, sizes, spec)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed predictor description: {exc}") from exc


def _enc(a: float):
    return "inf" if math.isinf(a) else a


def _dec(a) -> float:
    return math.inf if a in ("inf", "Infinity", None) else float(a)


def calibrate(
    measure: Measure,
    estimator: Estimator,
    calib: Dataset,
    alpha: float,
    estimator_spec: EstimatorSpec | None = None,
) -> CalibratedPredictor:
    """Global split-conformal predictor from a calibration set."""
    _check_alpha(alpha)
    if not measure.invertible:
        raise ConfigError("diagnostic-only measure")
    if len(calib) == 0:
        raise EmptyCalibrationError("empty calibration")
    a_star = critical_score(calibration_scores(measure, estimator, calib, alpha), alpha)
    return CalibratedPredictor(measure, estimator, alpha, critical=a_star,
                               calib_sizes={0: len(calib)}, estimator_spec=estimator_spec)


def calibrate_mondrian(
    measure: Measure,
    estimator: Estimator,
    calib: Dataset,
    alpha: float,
    taxonomy: Taxonomy,
    estimator_spec: EstimatorSpec | None = None,
) -> CalibratedPredictor:
    """One critical score per taxonomy class; empty classes get ``+inf``."""
    _check_alpha(alpha)
    if not measure.invertible:
        raise ConfigError("diagnostic-only measure")
    est = estimator.predict(calib.X)
    scores = np.asarray(score(measure, prediction_for(measure, est, alpha), calib.y)).reshape(-1)
    if taxonomy.kind == DIFFICULTY_BINS and taxonomy.difficulty is estimator:
        classes = taxonomy.classify_difficulty(est.sigma)
    else:
        classes = taxonomy.classify(calib.X)
    crit, sizes = {}, {}
    for c in range(taxonomy.n_classes):
        sc = scores[classes == c]
        sizes[c] = int(sc.size)
        crit[c] = critical_score(sc, alpha)
    return CalibratedPredictor(measure, estimator, alpha, critical_by_class=crit, taxonomy=taxonomy,
                               calib_sizes=sizes, estimator_spec=estimator_spec)


def predict(p: CalibratedPredictor, X) -> tuple[np.ndarray, np.ndarray]:
    return p.predict(X)
