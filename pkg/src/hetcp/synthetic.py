"""Synthetic heteroskedastic regression data from location-scale families.

Responses are drawn as ``y = mu(x) + sigma(x) * e`` where ``e`` follows one of
the standardized pivot distributions below (mean 0, variance 1):

=============  ==============================================  =====================
family         density of e                                    support
=============  ==============================================  =====================
normal         exp(-e^2/2) / sqrt(2 pi)                        R
laplace        exp(-sqrt(2) |e|) / sqrt(2)                     R
uniform        1 / (2 sqrt(3))                                 [-sqrt(3), sqrt(3)]
triangular     (e + 2 sqrt(2)) / 9                             [-2 sqrt(2), sqrt(2)]
exponential    exp(-e - 1)                                     [-1, inf)
=============  ==============================================  =====================

The triangular pivot is the standardization of ``f(y) = 2y / lam^2`` on
``[0, lam]``, whose mean is ``2 lam / 3`` and standard deviation
``lam / (3 sqrt 2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import Dataset, make_rng
from .errors import ConfigError, DataError

FAMILIES = ("normal", "laplace", "uniform", "triangular", "exponential")

TYPES = (
    "type1_const_mean",
    "type2_functional",
    "type3_lowdim",
    "type4_bimodal",
    "example21",
    "toy_cv",
    "fig1_demo",
)
TYPE_ALIASES = {
    "type1": "type1_const_mean",
    "type2": "type2_functional",
    "type3": "type3_lowdim",
    "type4": "type4_bimodal",
}
_FAMILY_TYPES = ("type1_const_mean", "type2_functional", "type3_lowdim", "example21")

TOY_CV = 0.1  # coefficient of variation of the toy model
TYPE2_SCALE = 10.0
TYPE4_SCALE = 4.0
TYPE4_SPLIT = 2.0
FIG1_SIGMAS = (0.1, 0.5)
FIG1_XMAX = 10.0


def sample_pivot(family: str, rng: np.random.Generator, size=None):
    """Draw from the standardized pivot of ``family``."""
    if family == "normal":
        return rng.standard_normal(size)
    if family == "laplace":
        return rng.laplace(0.0, 1.0 / math.sqrt(2.0), size)
    if family == "uniform":
        return rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size)
    if family == "triangular":
        return standardize_triangular(triangular_raw(1.0, rng.uniform(size=size)), 1.0)
    if family == "exponential":
        return rng.standard_exponential(size) - 1.0
    raise ConfigError(f"unknown pivot family {family!r}")


def pivot_density(family: str, e):
    """Density of the standardized pivot; used as an integration oracle."""
    e = np.asarray(e, dtype=float)
    if family == "normal":
        return np.exp(-0.5 * e**2) / math.sqrt(2 * math.pi)
    if family == "laplace":
        return np.exp(-math.sqrt(2.0) * np.abs(e)) / math.sqrt(2.0)
    if family == "uniform":
        return np.where(np.abs(e) <= math.sqrt(3.0), 1.0 / (2 * math.sqrt(3.0)), 0.0)
    if family == "triangular":
        r2 = math.sqrt(2.0)
        return np.where((e >= -2 * r2) & (e <= r2), (e + 2 * r2) / 9.0, 0.0)
    if family == "exponential":
        return np.where(e >= -1.0, np.exp(-e - 1.0), 0.0)
    raise ConfigError(f"unknown pivot family {family!r}")


def pivot_support(family: str) -> tuple[float, float]:
    r2, r3 = math.sqrt(2.0), math.sqrt(3.0)
    return {
        "normal": (-math.inf, math.inf),
        "laplace": (-math.inf, math.inf),
        "uniform": (-r3, r3),
        "triangular": (-2 * r2, r2),
        "exponential": (-1.0, math.inf),
    }[family]


def triangular_raw(lam, u):
    """Inverse CDF of ``f(y) = 2y / lam^2`` on ``[0, lam]``: ``y = lam sqrt(u)``."""
    return np.asarray(lam) * np.sqrt(u)


def triangular_moments(lam: float) -> tuple[float, float]:
    """Mean and standard deviation of the triangular density with width ``lam``."""
    return 2.0 * lam / 3.0, lam / (3.0 * math.sqrt(2.0))


def standardize_triangular(y, lam):
    m, s = triangular_moments(lam)
    return (np.asarray(y) - m) / s


def moments_check(
    family: str,
    rng: np.random.Generator,
    n: int = 1_000_000,
    lam: float | None = None,
    mu: float = 0.0,
    sigma: float = 1.0,
) -> tuple[float, float]:
    """Monte Carlo (mean, variance) of ``n`` draws.

    For ``family="triangular"`` with ``lam`` given the raw triangular density
    is sampled; otherwise ``mu + sigma * pivot``.
    """
    if family == "triangular" and lam is not None:
        draws = triangular_raw(lam, rng.uniform(size=n))
    else:
        draws = mu + sigma * sample_pivot(family, rng, n)
    return float(draws.mean()), float(draws.var(ddof=1))


@dataclass(frozen=True)
class OracleTruth:
    mu: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True)
class GeneratorSpec:
    """Which process to sample, how much, and from which seed/stream.

    ``high`` is the upper bound of the uniform feature distribution; ``None``
    selects the type's default (100 for ``toy_cv``, 1 otherwise).
    """

    type: str = "type1_const_mean"
    family: str = "normal"
    dim: int | None = None
    n: int = 1000
    seed: int = 0
    stream: int = 0
    high: float | None = None
    scale: float = TYPE2_SCALE

    def __post_init__(self):
        t = TYPE_ALIASES.get(self.type, self.type)
        if t not in TYPES:
            raise ConfigError(f"unknown generator type {self.type!r}")
        object.__setattr__(self, "type", t)
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown pivot family {self.family!r}")
        if self.family != "normal" and t not in _FAMILY_TYPES:
            raise ConfigError(f"{t} is defined for normal noise only")
        dim = self.dim if self.dim is not None else default_dim(t)
        if t in ("example21", "fig1_demo") and dim != 2:
            raise ConfigError(f"{t} is two-dimensional")
        if t in ("type1_const_mean",) and dim < 2:
            raise ConfigError("type1 uses the second coordinate and needs dim >= 2")
        if dim < 1 or self.n < 1:
            raise ConfigError("dim and n must be >= 1")
        object.__setattr__(self, "dim", int(dim))
        if self.high is not None and not self.high > 0:
            raise ConfigError("feature upper bound must be > 0")

    @property
    def feature_high(self) -> float:
        if self.high is not None:
            return float(self.high)
        return 100.0 if self.type == "toy_cv" else 1.0

    def to_dict(self) -> dict:
        return {
            "type": self.type, "family": self.family, "dim": self.dim, "n": self.n,
            "seed": self.seed, "stream": self.stream, "high": self.high, "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        known = {k: d[k] for k in ("type", "family", "dim", "n", "seed", "stream", "high", "scale") if k in d}
        return cls(**known)

    def with_(self, **kw) -> "GeneratorSpec":
        return replace(self, **kw)


def default_dim(gen_type: str) -> int:
    return 20 if gen_type == "toy_cv" else 2


class SyntheticGenerator:
    """Sampling process described by a :class:`GeneratorSpec`.

    Also acts as the truth source of the oracle estimator: :meth:`truth`
    evaluates the true location and scale at arbitrary feature rows.
    """

    def __init__(self, spec: GeneratorSpec):
        self.spec = spec

    def truth(self, X) -> tuple[np.ndarray, np.ndarray]:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        t = self.spec.type
        if t == "type1_const_mean":
            return np.zeros(len(X)), 1.0 + np.abs(X[:, 1] - 0.5)
        if t == "type2_functional":
            mu = self.spec.scale * X.mean(axis=1)
            return mu, TOY_CV * np.abs(mu)
        if t == "type3_lowdim":
            return X.sum(axis=1), 1.0 + np.abs(X[:, 0] - 0.5)
        if t == "type4_bimodal":
            mu = TYPE4_SCALE * X.mean(axis=1)
            return mu, TOY_CV * np.abs(mu)
        if t == "example21":
            return X[:, 0] + X[:, 1], np.sqrt(1.0 + np.abs(X[:, 1] - 0.5))
        if t == "toy_cv":
            mu = X.mean(axis=1)
            if (mu <= 0).any():
                raise DataError("toy model needs mean(x) > 0 so that sigma > 0")
            return mu, TOY_CV * mu
        # fig1_demo: features (x, s)
        s = X[:, 1]
        return 0.1 * X[:, 0] + 2.0 * s, np.where(s > 0.5, FIG1_SIGMAS[1], FIG1_SIGMAS[0])

    def sample_features(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.spec.type == "fig1_demo":
            x = rng.uniform(0.0, FIG1_XMAX, n)
            s = rng.integers(0, 2, n).astype(float)
            return np.column_stack([x, s])
        return rng.uniform(0.0, self.spec.feature_high, (n, self.spec.dim))

    def sample_response(self, X, rng: np.random.Generator) -> np.ndarray:
        mu, sigma = self.truth(X)
        if self.spec.type == "type4_bimodal":
            loc = np.where(mu <= TYPE4_SPLIT, mu - 1.0, mu + 1.0)
            return loc + sigma * rng.standard_normal(len(mu))
        return mu + sigma * sample_pivot(self.spec.family, rng, len(mu))

    def sample(self, n: int, rng: np.random.Generator) -> tuple[Dataset, OracleTruth]:
        X = self.sample_features(rng, n)
        y = self.sample_response(X, rng)
        mu, sigma = self.truth(X)
        return Dataset(X, y), OracleTruth(mu, sigma)


def type4_component(mu: float) -> tuple[float, float]:
    """(mean, std) of the mixture component selected at location ``mu``."""
    loc = mu - 1.0 if mu <= TYPE4_SPLIT else mu + 1.0
    return loc, TOY_CV * abs(mu)


def generate(spec: GeneratorSpec) -> tuple[Dataset, OracleTruth]:
    """Sample ``spec.n`` observations; fully determined by (seed, stream)."""
    return SyntheticGenerator(spec).sample(spec.n, make_rng(spec.seed, spec.stream))
