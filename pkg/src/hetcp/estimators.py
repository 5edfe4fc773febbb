"""Mean/standard-deviation estimators and misspecification wrappers.

Every estimator maps a feature matrix to a :class:`MeanVarEstimate`. The
oracle reads the generating process directly, ``ConstantEstimator`` returns a
fixed pair and ``KNNEstimator`` uses neighbourhood moments for CSV data.
:class:`MisspecifiedEstimator` perturbs any of them.

Noise injected by the misspecification wrappers is a deterministic function of
``(seed, wrapper position, feature vector)``. A misspecified estimator is
therefore still a function of ``x``: calibration and test points see the same
estimator, and repeated calls agree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Any, Protocol

import numpy as np
from scipy.special import ndtri

from .core import Dataset
from .errors import ConfigError, NotFittedError

DEFAULT_K = 50

_STD_NORMAL = NormalDist()


@dataclass(frozen=True)
class MeanVarEstimate:
    """Per-instance (mu_hat, sigma_hat); fields may be scalars or 1-d arrays."""

    mu: Any
    sigma: Any

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        if not (np.isfinite(mu).all() and np.isfinite(sigma).all()):
            raise ValueError("estimate must be finite")
        if (sigma < 0).any():
            raise ValueError("sigma_hat must be non-negative")

    def __len__(self) -> int:
        return np.size(self.mu)


@dataclass(frozen=True)
class IntervalEstimate:
    y_minus: Any
    y_plus: Any

    def __post_init__(self):
        if (np.asarray(self.y_minus) > np.asarray(self.y_plus)).any():
            raise ValueError("interval estimate with y_minus > y_plus")


def normal_quantile_two_sided(alpha: float) -> float:
    """``z`` such that ``[-z, z]`` holds ``1 - alpha`` of a standard normal."""
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    return _STD_NORMAL.inv_cdf(1.0 - alpha / 2.0)


def mv_interval(est: MeanVarEstimate, alpha: float) -> IntervalEstimate:
    """Gaussian interval ``mu_hat -/+ z * sigma_hat`` at significance ``alpha``."""
    z = normal_quantile_two_sided(alpha)
    mu = np.asarray(est.mu, dtype=float)
    half = z * np.asarray(est.sigma, dtype=float)
    lo, hi = mu - half, mu + half
    if lo.ndim == 0:
        return IntervalEstimate(float(lo), float(hi))
    return IntervalEstimate(lo, hi)


# --------------------------------------------------------------------------
# misspecification


MISSPEC_KINDS = ("sigma_shift", "sigma_scale", "mu_shift_const", "mu_shift_prop", "quadratic_sigma")


@dataclass(frozen=True)
class MisspecOp:
    """One deviation from the oracle.

    ``param`` is the noise level lambda for the shift kinds, the factor for
    ``sigma_scale`` and unused for ``quadratic_sigma``.
    """

    kind: str
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in MISSPEC_KINDS:
            raise ConfigError(f"unknown misspecification {self.kind!r}; expected one of {MISSPEC_KINDS}")
        if not math.isfinite(self.param):
            raise ConfigError("misspecification parameter must be finite")
        if self.kind == "quadratic_sigma":
            object.__setattr__(self, "param", 0.0)
        if self.kind == "sigma_scale" and self.param <= 0:
            raise ConfigError("sigma_scale factor must be > 0")
        if self.kind in ("sigma_shift", "mu_shift_const", "mu_shift_prop") and self.param < 0:
            raise ConfigError(f"{self.kind} lambda must be >= 0")

    @property
    def uses_noise(self) -> bool:
        return self.kind in ("sigma_shift", "mu_shift_const", "mu_shift_prop")

    def to_dict(self) -> dict:
        d: dict = {"op": self.kind}
        if self.kind == "sigma_scale":
            d["factor"] = self.param
        elif self.kind != "quadratic_sigma":
            d["lambda"] = self.param
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MisspecOp":
        kind = d.get("op", d.get("kind"))
        if kind == "sigma_scale":
            return cls(kind, float(d.get("factor", d.get("lambda", 5.0))))
        return cls(kind, float(d.get("lambda", 0.0)))


def apply_misspec(op: MisspecOp, est: MeanVarEstimate, rng=None) -> MeanVarEstimate:
    """Apply one misspecification to ``est``.

    ``rng`` supplies the standard-normal draws for the noisy kinds: either a
    ``numpy.random.Generator`` or an array of N(0, 1) values, one per point.
    Shifted standard deviations are clipped at zero.
    """
    mu = np.asarray(est.mu, dtype=float)
    sigma = np.asarray(est.sigma, dtype=float)
    if op.uses_noise:
        if rng is None:
            raise ValueError(f"{op.kind} needs a random source")
        z = rng.standard_normal(mu.shape) if isinstance(rng, np.random.Generator) else np.asarray(rng, dtype=float)
    lam = op.param
    if op.kind == "sigma_shift":
        sigma = np.maximum(sigma + lam * z, 0.0)
    elif op.kind == "sigma_scale":
        sigma = lam * sigma
    elif op.kind == "mu_shift_const":
        mu = mu + lam * z
    elif op.kind == "mu_shift_prop":
        mu = mu + lam * sigma * z
    else:
        sigma = np.sqrt(5.0 * (sigma**2 - 0.5) ** 2 + 0.5)
    if mu.ndim == 0:
        return MeanVarEstimate(float(mu), float(sigma))
    return MeanVarEstimate(mu, sigma)


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix64(z: np.ndarray) -> np.ndarray:
    # splitmix64 finaliser; uint64 arithmetic wraps modulo 2**64
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def point_noise(X: np.ndarray, seed: int, stream: int = 0) -> np.ndarray:
    """Standard-normal value per row of ``X``, a pure function of (seed, stream, row)."""
    X = np.ascontiguousarray(np.asarray(X, dtype=float).reshape(len(X), -1))
    bits = X.view(np.uint64)
    with np.errstate(over="ignore"):
        h = np.full(len(X), np.uint64(seed % 2**64), dtype=np.uint64)
        h = _mix64(h ^ (np.uint64(stream + 1) * _GOLDEN))
        for j in range(bits.shape[1]):
            h = _mix64(h ^ (bits[:, j] + np.uint64(j + 1) * _GOLDEN))
    u = ((h >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53
    return ndtri(u)


# --------------------------------------------------------------------------
# estimators


class TruthSource(Protocol):
    def truth(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


class Estimator:
    def predict(self, X) -> MeanVarEstimate:
        raise NotImplementedError

    def predict_interval(self, X, alpha: float) -> IntervalEstimate:
        return mv_interval(self.predict(X), alpha)


class OracleEstimator(Estimator):
    """Returns the generator's true conditional location and scale."""

    def __init__(self, source: TruthSource | None):
        self.source = source

    def predict(self, X) -> MeanVarEstimate:
        if self.source is None:
            raise NotFittedError("oracle estimator has no generator attached")
        mu, sigma = self.source.truth(np.asarray(X, dtype=float))
        return MeanVarEstimate(mu, sigma)


class ConstantEstimator(Estimator):
    def __init__(self, mu: float, sigma: float):
        if sigma < 0:
            raise ConfigError("constant sigma must be >= 0")
        self.mu = float(mu)
        self.sigma = float(sigma)

    def predict(self, X) -> MeanVarEstimate:
        X = np.asarray(X)
        n = X.shape[0] if X.ndim > 1 else 1
        return MeanVarEstimate(np.full(n, self.mu), np.full(n, self.sigma))


class KNNEstimator(Estimator):
    """k-nearest-neighbour mean and unbiased standard deviation of the response.

    Features are standardised with the training moments and compared with the
    Euclidean distance. Training rows are stored in lexicographic order, and
    distance ties are broken by position in that order, so predictions do not
    depend on the order in which training rows were supplied. With ``k == 1``
    the standard deviation is reported as 0.
    """

    def __init__(self, k: int = DEFAULT_K, chunk_elems: int = 4_000_000):
        if k < 1:
            raise ConfigError("k must be >= 1")
        self.k = int(k)
        self.chunk_elems = chunk_elems
        self._X = None

    def fit(self, train: Dataset) -> "KNNEstimator":
        if len(train) == 0:
            raise ConfigError("cannot fit k-NN on an empty training set")
        X, y = np.asarray(train.X, dtype=float), np.asarray(train.y, dtype=float)
        order = np.lexsort((y,) + tuple(X[:, j] for j in reversed(range(X.shape[1]))))
        X, y = X[order], y[order]
        self.center_ = X.mean(axis=0)
        scale = X.std(axis=0)
        self.scale_ = np.where(scale > 0, scale, 1.0)
        self._X = (X - self.center_) / self.scale_
        self._sq = np.einsum("ij,ij->i", self._X, self._X)
        self._y = y
        self.k_ = min(self.k, len(y))
        return self

    def predict(self, X) -> MeanVarEstimate:
        if self._X is None:
            raise NotFittedError("k-NN estimator is not fitted")
        Q = (np.asarray(X, dtype=float).reshape(-1, self._X.shape[1]) - self.center_) / self.scale_
        n_train = len(self._y)
        k = self.k_
        mu = np.empty(len(Q))
        sd = np.empty(len(Q))
        step = max(1, self.chunk_elems // n_train)
        for start in range(0, len(Q), step):
            q = Q[start : start + step]
            d = np.einsum("ij,ij->i", q, q)[:, None] + self._sq[None, :] - 2.0 * q @ self._X.T
            kth = np.partition(d, k - 1, axis=1)[:, k - 1 : k]
            below = d < kth
            tied = d == kth
            room = k - below.sum(axis=1, keepdims=True)
            mask = below | (tied & (np.cumsum(tied, axis=1) <= room))
            yy = np.where(mask, self._y[None, :], 0.0)
            m = yy.sum(axis=1) / k
            mu[start : start + step] = m
            if k > 1:
                dev = np.where(mask, self._y[None, :] - m[:, None], 0.0)
                sd[start : start + step] = np.sqrt((dev**2).sum(axis=1) / (k - 1))
            else:
                sd[start : start + step] = 0.0
        return MeanVarEstimate(mu, sd)


class MisspecifiedEstimator(Estimator):
    """Apply ``ops`` in order on top of ``base``."""

    def __init__(self, base: Estimator, ops, seed: int = 0):
        self.base = base
        self.ops = tuple(ops)
        self.seed = int(seed)

    def predict(self, X) -> MeanVarEstimate:
        X = np.asarray(X, dtype=float)
        est = self.base.predict(X)
        for pos, op in enumerate(self.ops):
            noise = point_noise(X, self.seed, pos) if op.uses_noise else None
            est = apply_misspec(op, est, noise)
        return est


# --------------------------------------------------------------------------
# configuration


ESTIMATOR_KINDS = ("oracle", "knn", "constant")


@dataclass(frozen=True)
class EstimatorSpec:
    kind: str = "oracle"
    k: int = DEFAULT_K
    mu: float = 0.0
    sigma: float = 1.0
    wrappers: tuple[MisspecOp, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in ESTIMATOR_KINDS:
            raise ConfigError(f"unknown estimator kind {self.kind!r}")
        if self.kind == "knn" and self.k < 1:
            raise ConfigError("k must be >= 1")
        object.__setattr__(self, "wrappers", tuple(self.wrappers))

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind == "knn":
            d["k"] = self.k
        elif self.kind == "constant":
            d.update(mu=self.mu, sigma=self.sigma)
        d["wrappers"] = [w.to_dict() for w in self.wrappers]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EstimatorSpec":
        try:
            return cls(
                kind=d.get("kind", "oracle"),
                k=int(d.get("k", DEFAULT_K)),
                mu=float(d.get("mu", 0.0)),
                sigma=float(d.get("sigma", 1.0)),
                wrappers=tuple(MisspecOp.from_dict(w) for w in d.get("wrappers", [])),
            )
        except (TypeError, AttributeError) as exc:
            raise ConfigError(f"malformed estimator spec {d!r}") from exc


def build_estimator(
    spec: EstimatorSpec,
    source: TruthSource | None = None,
    train: Dataset | None = None,
    seed: int = 0,
) -> Estimator:
    """Instantiate (and fit, for k-NN) the estimator described by ``spec``."""
    if spec.kind == "oracle":
        if source is None:
            raise ConfigError("oracle estimator needs a synthetic generator")
        base: Estimator = OracleEstimator(source)
    elif spec.kind == "constant":
        base = ConstantEstimator(spec.mu, spec.sigma)
    else:
        if train is None:
            raise ConfigError("k-NN estimator needs a training set")
        base = KNNEstimator(spec.k).fit(train)
    if spec.wrappers:
        return MisspecifiedEstimator(base, spec.wrappers, seed)
    return base


def predict_mean_var(estimator: Estimator, X) -> MeanVarEstimate:
    return estimator.predict(X)
