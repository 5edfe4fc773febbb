"""Nonconformity measures and their inversion into prediction intervals.

Four measures are supported:

``residual``      ``|mu_hat - y|``
``interval``      ``max(y - y_plus, y_minus - y)`` for an interval predictor
``normalized``    ``|mu_hat - y| / (sigma_hat + eps)``
``standardized``  ``(y - mu_hat) / (sigma_hat + eps)`` (signed, diagnostics only)

All functions broadcast over numpy arrays. ``invert`` returns the set
``{y : score(y) <= a_star}`` as ``(lower, upper)``. For the interval measure
with a sufficiently negative critical score that set is empty, and it is
returned with ``lower > upper``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Interval
from .errors import ConfigError, DegenerateError
from .estimators import IntervalEstimate, MeanVarEstimate, mv_interval, normal_quantile_two_sided

DEFAULT_EPSILON = 1e-8

KINDS = ("residual", "interval", "normalized", "standardized")
SHORT_NAMES = {"res": "residual", "int": "interval", "norm": "normalized", "std": "standardized"}
_LONG_TO_SHORT = {v: k for k, v in SHORT_NAMES.items()}


@dataclass(frozen=True)
class Measure:
    kind: str
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown measure {self.kind!r}")
        if not np.isfinite(self.epsilon) or self.epsilon < 0:
            raise ConfigError("epsilon must be finite and >= 0")

    @classmethod
    def parse(cls, name: str, epsilon: float = DEFAULT_EPSILON) -> "Measure":
        kind = SHORT_NAMES.get(name, name)
        return cls(kind, epsilon)

    @property
    def short(self) -> str:
        return _LONG_TO_SHORT[self.kind]

    @property
    def needs_interval(self) -> bool:
        return self.kind == "interval"

    @property
    def invertible(self) -> bool:
        return self.kind != "standardized"

    def to_dict(self) -> dict:
        return {"kind": self.short, "epsilon": self.epsilon}

    @classmethod
    def from_dict(cls, d: dict) -> "Measure":
        return cls.parse(d["kind"], float(d.get("epsilon", DEFAULT_EPSILON)))


def _difficulty(m: Measure, est: MeanVarEstimate) -> np.ndarray:
    denom = np.asarray(est.sigma, dtype=float) + m.epsilon
    if (denom <= 0).any():
        raise DegenerateError("degenerate difficulty")
    return denom


def _check_pred(m: Measure, pred) -> None:
    if m.needs_interval and not isinstance(pred, IntervalEstimate):
        raise TypeError("the interval measure needs an IntervalEstimate")
    if not m.needs_interval and not isinstance(pred, MeanVarEstimate):
        raise TypeError(f"the {m.kind} measure needs a MeanVarEstimate")


def score(m: Measure, pred, y):
    """Nonconformity score of response(s) ``y`` under prediction ``pred``."""
    _check_pred(m, pred)
    y = np.asarray(y, dtype=float)
    if m.kind == "interval":
        out = np.maximum(y - np.asarray(pred.y_plus), np.asarray(pred.y_minus) - y)
    elif m.kind == "residual":
        out = np.abs(np.asarray(pred.mu) - y)
    elif m.kind == "normalized":
        out = np.abs(np.asarray(pred.mu) - y) / _difficulty(m, pred)
    else:
        out = (y - np.asarray(pred.mu)) / _difficulty(m, pred)
    return float(out) if np.ndim(out) == 0 else out


def invert(m: Measure, pred, a_star):
    """Bounds ``(lower, upper)`` of ``{y : score(m, pred, y) <= a_star}``.

    ``a_star`` may be a scalar or one value per prediction and may be
    ``+inf``, which yields the whole real line.
    """
    if not m.invertible:
        raise ConfigError("diagnostic-only measure")
    _check_pred(m, pred)
    a = np.asarray(a_star, dtype=float)
    if m.kind == "interval":
        lo = np.asarray(pred.y_minus, dtype=float) - a
        hi = np.asarray(pred.y_plus, dtype=float) + a
    else:
        mu = np.asarray(pred.mu, dtype=float)
        half = a if m.kind == "residual" else a * _difficulty(m, pred)
        # inf * 0 cannot occur: the difficulty is strictly positive
        lo, hi = mu - half, mu + half
    if np.ndim(lo) == 0:
        return float(lo), float(hi)
    return lo, hi


def invert_one(m: Measure, pred, a_star: float) -> Interval | None:
    """Scalar form of :func:`invert`; ``None`` stands for the empty set."""
    lo, hi = invert(m, pred, a_star)
    if lo > hi:
        return None
    return Interval(lo, hi)


def interval_identity_check(est: MeanVarEstimate, alpha: float, y):
    """Both sides of ``max(y_minus - y, y - y_plus) == |mu_hat - y| - z * sigma_hat``.

    The left side is the interval measure evaluated on the Gaussian interval
    of ``est``; the right side is the closed form.
    """
    lhs = score(Measure("interval"), mv_interval(est, alpha), y)
    z = normal_quantile_two_sided(alpha)
    rhs = np.abs(np.asarray(est.mu) - np.asarray(y, dtype=float)) - z * np.asarray(est.sigma)
    if np.ndim(rhs) == 0:
        rhs = float(rhs)
    return lhs, rhs


def prediction_for(m: Measure, est: MeanVarEstimate, alpha: float):
    """The object ``score``/``invert`` expect for measure ``m``."""
    return mv_interval(est, alpha) if m.needs_interval else est
