"""Taxonomy functions: feature thresholds and binned difficulty estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Dataset
from .errors import ConfigError, DegenerateError

FEATURE_THRESHOLD = "feature_threshold"
DIFFICULTY_BINS = "difficulty_bins"


@dataclass(frozen=True)
class BinEdges:
    """Interior edges of ``n_bins`` half-open cells.

    Cells are ``(-inf, e1), [e1, e2), ..., [e_{k-1}, inf)``.
    """

    edges: tuple[float, ...]
    n_bins: int

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges)
        object.__setattr__(self, "edges", edges)
        if self.n_bins < 1:
            raise ConfigError("n_bins must be >= 1")
        if len(edges) != self.n_bins - 1:
            raise ConfigError(f"{self.n_bins} bins need {self.n_bins - 1} edges, got {len(edges)}")
        if not all(math.isfinite(e) for e in edges):
            raise ConfigError("bin edges must be finite")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise DegenerateError("degenerate binning: edges are not strictly ascending")

    def assign(self, values) -> np.ndarray:
        return np.searchsorted(np.asarray(self.edges), np.asarray(values, dtype=float), side="right")


def fit_equal_frequency_bins(values, n_bins: int) -> BinEdges:
    """Edges splitting ``values`` into ``n_bins`` near-equal populations.

    The j-th edge is the midpoint between the ``ceil(j n / n_bins)``-th
    order statistic and the next strictly larger value. Distinct values end
    up in classes whose sizes differ by at most one; tied values always share
    a class, which may unbalance the sizes.
    """
    v = np.sort(np.asarray(values, dtype=float).reshape(-1))
    n = v.size
    if n_bins < 1:
        raise ConfigError("n_bins must be >= 1")
    if n < n_bins:
        raise DegenerateError(f"degenerate binning: {n} values for {n_bins} bins")
    if not np.isfinite(v).all():
        raise ConfigError("cannot bin non-finite values")
    if n_bins == 1:
        return BinEdges((), 1)
    if np.unique(v).size < n_bins:
        raise DegenerateError("degenerate binning: fewer distinct values than bins")
    edges = []
    for j in range(1, n_bins):
        k = math.ceil(j * n / n_bins - 1e-9)
        nxt = np.searchsorted(v, v[k - 1], side="right")
        if nxt == n:
            raise DegenerateError("degenerate binning: upper bins would be empty")
        edges.append(0.5 * (v[k - 1] + v[nxt]))
    be = BinEdges(tuple(edges), n_bins)
    if (np.bincount(be.assign(v), minlength=n_bins) == 0).any():
        raise DegenerateError("degenerate binning: a bin is empty on the fitted values")
    return be


@dataclass(frozen=True)
class Taxonomy:
    """Feature-dependent map from instances to class ids ``0..n_classes-1``.

    ``feature_threshold`` puts ``x`` in class 1 when ``0 <= x[dim] <= xi``
    and in class 0 otherwise. ``difficulty_bins`` bins the difficulty
    ``sigma_hat(x)`` of an attached estimator.
    """

    kind: str
    dim: int = 1
    xi: float = 0.2
    edges: BinEdges | None = None
    difficulty: object | None = None

    def __post_init__(self):
        if self.kind == FEATURE_THRESHOLD:
            if self.dim < 0:
                raise ConfigError("threshold dimension must be >= 0")
        elif self.kind == DIFFICULTY_BINS:
            if self.edges is None:
                raise ConfigError("difficulty taxonomy needs fitted bin edges")
        else:
            raise ConfigError(f"unknown taxonomy kind {self.kind!r}")

    @classmethod
    def feature_threshold(cls, dim: int, xi: float) -> "Taxonomy":
        return cls(FEATURE_THRESHOLD, dim=dim, xi=xi)

    @classmethod
    def difficulty_bins(cls, estimator, edges: BinEdges) -> "Taxonomy":
        return cls(DIFFICULTY_BINS, edges=edges, difficulty=estimator)

    @classmethod
    def fit_difficulty(cls, estimator, X, n_bins: int) -> "Taxonomy":
        """Equal-frequency bins of ``sigma_hat`` over the feature rows ``X``."""
        delta = np.asarray(estimator.predict(X).sigma, dtype=float)
        return cls.difficulty_bins(estimator, fit_equal_frequency_bins(delta, n_bins))

    @property
    def n_classes(self) -> int:
        return 2 if self.kind == FEATURE_THRESHOLD else self.edges.n_bins

    def classify(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if self.kind == FEATURE_THRESHOLD:
            col = X[:, self.dim]
            return ((col >= 0.0) & (col <= self.xi)).astype(np.intp)
        if self.difficulty is None:
            raise ConfigError("difficulty taxonomy has no estimator attached")
        return self.classify_difficulty(self.difficulty.predict(X).sigma)

    def classify_difficulty(self, delta) -> np.ndarray:
        """Bin precomputed difficulty values (avoids a second estimator pass)."""
        return self.edges.assign(delta).astype(np.intp)

    def classify_one(self, x) -> int:
        return int(self.classify(np.asarray(x, dtype=float).reshape(1, -1))[0])

    def with_estimator(self, estimator) -> "Taxonomy":
        return Taxonomy(self.kind, self.dim, self.xi, self.edges, estimator)

    def to_dict(self) -> dict:
        if self.kind == FEATURE_THRESHOLD:
            return {"kind": FEATURE_THRESHOLD, "dim": self.dim, "xi": self.xi}
        return {"kind": DIFFICULTY_BINS, "n_bins": self.edges.n_bins, "edges": list(self.edges.edges)}

    @classmethod
    def from_dict(cls, d: dict, estimator=None) -> "Taxonomy":
        kind = d.get("kind")
        if kind == FEATURE_THRESHOLD:
            return cls.feature_threshold(int(d.get("dim", 1)), float(d.get("xi", 0.2)))
        if kind == DIFFICULTY_BINS:
            if "edges" not in d:
                raise ConfigError("difficulty taxonomy dict has no fitted edges")
            edges = BinEdges(tuple(d["edges"]), int(d.get("n_bins", len(d["edges"]) + 1)))
            return cls.difficulty_bins(estimator, edges)
        raise ConfigError(f"unknown taxonomy kind {kind!r}")


@dataclass(frozen=True)
class TaxonomyConfig:
    """Unfitted taxonomy description as it appears in run configs."""

    kind: str = DIFFICULTY_BINS
    n_bins: int = 3
    dim: int = 1
    xi: float = 0.2

    @classmethod
    def from_dict(cls, d: dict) -> "TaxonomyConfig":
        kind = d.get("kind", DIFFICULTY_BINS)
        if kind not in (FEATURE_THRESHOLD, DIFFICULTY_BINS):
            raise ConfigError(f"unknown taxonomy kind {kind!r}")
        return cls(kind, int(d.get("n_bins", 3)), int(d.get("dim", 1)), float(d.get("xi", 0.2)))

    def to_dict(self) -> dict:
        if self.kind == FEATURE_THRESHOLD:
            return {"kind": self.kind, "dim": self.dim, "xi": self.xi}
        return {"kind": self.kind, "n_bins": self.n_bins}

    def fit(self, estimator, X) -> Taxonomy:
        if self.kind == FEATURE_THRESHOLD:
            return Taxonomy.feature_threshold(self.dim, self.xi)
        return Taxonomy.fit_difficulty(estimator, X, self.n_bins)


def classify(t: Taxonomy, x) -> int:
    return t.classify_one(x)


def class_histogram(t: Taxonomy, d: Dataset) -> np.ndarray:
    if len(d) == 0:
        return np.zeros(t.n_classes, dtype=np.intp)
    return np.bincount(t.classify(d.X), minlength=t.n_classes)
