"""Pre-deployment checks for conditional validity of a marginal predictor.

Three tools, all operating on calibration nonconformity scores split by
taxonomy class:

* per-class empirical CDFs (:func:`ecdf_by_class`) for visual comparison,
* a bootstrap confidence interval for the difference of Harrell-Davis
  quantiles between two classes (:func:`bootstrap_quantile_diff`),
* the two-sample Kolmogorov-Smirnov test (:func:`ks_two_sample`).

If the scores of all classes share one distribution, a single global
critical score is conditionally valid and Mondrian calibration buys nothing.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import special

from .core import inflated_level
from .errors import ConfigError, DataError

DEFAULT_B = 2000
DEFAULT_BETA = 0.025
DEFAULT_KS_LEVEL = 0.01
MAX_LEVEL = 1.0 - 1e-9
_CHUNK_ELEMENTS = 2_000_000

REJECT = "reject"
NO_EVIDENCE = "no-evidence"


def _sample(values, name: str = "sample") -> np.ndarray:
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        raise DataError(f"{name} is empty")
    if not np.isfinite(v).all():
        raise DataError(f"{name} contains non-finite values")
    return v


# -- empirical CDFs ---------------------------------------------------------


@dataclass(frozen=True)
class EcdfTable:
    """Step functions per group; ``groups[g] = (values, cum_prob)``.

    ``values`` are the distinct sorted scores of group ``g`` and ``cum_prob``
    the fraction of the group at or below each of them.
    """

    groups: dict

    def quantile(self, group, q: float) -> float:
        """Left-continuous inverse of the group's ECDF."""
        values, probs = self.groups[group]
        i = int(np.searchsorted(probs, q - 1e-12, side="left"))
        return float(values[min(i, len(values) - 1)])

    def evaluate(self, group, t) -> np.ndarray:
        values, probs = self.groups[group]
        i = np.searchsorted(values, np.asarray(t, dtype=float), side="right")
        return np.concatenate([[0.0], probs])[i]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group", "value", "cum_prob"])
        for g, (values, probs) in self.groups.items():
            for v, p in zip(values, probs):
                w.writerow([g, repr(float(v)), repr(float(p))])
        return buf.getvalue()


def _ecdf(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    uniq, counts = np.unique(values, return_counts=True)
    return uniq, np.cumsum(counts) / values.size


def ecdf_by_class(scores, classes, n_classes: int | None = None) -> EcdfTable:
    """Marginal ECDF plus one per class.

    Every class in ``0..n_classes-1`` must be populated; ``n_classes``
    defaults to one more than the largest class id.
    """
    s = _sample(scores, "scores")
    c = np.asarray(classes).reshape(-1)
    if c.shape != s.shape:
        raise DataError("scores and classes differ in length")
    k = int(c.max()) + 1 if n_classes is None else n_classes
    groups = {"marginal": _ecdf(s)}
    for j in range(k):
        sel = s[c == j]
        if sel.size == 0:
            raise DataError(f"class {j} has no scores")
        groups[j] = _ecdf(sel)
    return EcdfTable(groups)


# -- Harrell-Davis ----------------------------------------------------------


def regularized_incomplete_beta(x, a: float, b: float):
    """``I_x(a, b)``; thin wrapper that validates the parameters."""
    if not (a > 0 and b > 0):
        raise ConfigError("incomplete beta needs a, b > 0")
    return special.betainc(a, b, np.clip(x, 0.0, 1.0))


@lru_cache(maxsize=256)
def _hd_weights_cached(n: int, q: float) -> np.ndarray:
    a = (n + 1) * q
    b = (n + 1) * (1.0 - q)
    cdf = regularized_incomplete_beta(np.arange(n + 1) / n, a, b)
    w = np.diff(cdf)
    w.flags.writeable = False
    return w


def hd_weights(n: int, q: float) -> np.ndarray:
    """Weights on the order statistics ``x_(1) <= ... <= x_(n)``."""
    if n < 1:
        raise DataError("sample is empty")
    if not 0.0 < q < 1.0:
        raise ConfigError(f"quantile level must lie in (0, 1), got {q}")
    return _hd_weights_cached(int(n), float(q))


def harrell_davis(sample, q: float) -> float:
    """Harrell-Davis estimate of the ``q``-quantile of ``sample``.

    Examples
    --------
    >>> round(harrell_davis([3, 1, 2], 0.5), 12)
    2.0
    """
    x = np.sort(_sample(sample))
    return float(hd_weights(x.size, q) @ x)


def hd_level(alpha: float, n: int) -> float:
    """Inflated level ``(1 - alpha)(1 + 1/n)`` clamped below one."""
    return min(inflated_level(alpha, n), MAX_LEVEL)


# -- bootstrap quantile difference ------------------------------------------


@dataclass(frozen=True)
class BootstrapQuantileReport:
    pair: tuple
    B: int
    beta: float
    alpha: float
    ci: tuple[float, float]
    estimate: float

    @property
    def rejects(self) -> bool:
        return not (self.ci[0] <= 0.0 <= self.ci[1])

    @property
    def verdict(self) -> str:
        return REJECT if self.rejects else NO_EVIDENCE

    def to_dict(self) -> dict:
        return {
            "pair": list(self.pair), "B": self.B, "beta": self.beta, "alpha": self.alpha,
            "ci": list(self.ci), "estimate": self.estimate, "verdict": self.verdict,
        }


def _bootstrap_hd(s: np.ndarray, q: float, B: int, rng: np.random.Generator) -> np.ndarray:
    n = s.size
    w = hd_weights(n, q)
    out = np.empty(B)
    step = max(1, _CHUNK_ELEMENTS // n)
    for start in range(0, B, step):
        m = min(step, B - start)
        res = np.sort(s[rng.integers(0, n, (m, n))], axis=1)
        out[start:start + m] = res @ w
    return out


def ci_indices(B: int, beta: float) -> tuple[int, int]:
    """Zero-based positions of ``d_(ceil(B beta/2))`` and ``d_(floor(B - B beta/2))``."""
    lo = math.ceil(B * beta / 2 - 1e-9)
    hi = math.floor(B - B * beta / 2 + 1e-9)
    return max(lo, 1) - 1, min(hi, B) - 1


def bootstrap_quantile_diff(
    s1,
    s2,
    alpha: float,
    beta: float = DEFAULT_BETA,
    B: int = DEFAULT_B,
    rng: np.random.Generator | None = None,
    pair: tuple = (0, 1),
) -> BootstrapQuantileReport:
    """Percentile bootstrap CI of ``HD(s1) - HD(s2)`` at the inflated level.

    Each sample is resampled independently; each uses its own size in the
    inflated level.
    """
    a = _sample(s1, "first sample")
    b = _sample(s2, "second sample")
    if B < 100:
        raise ConfigError("B must be >= 100")
    if not 0.0 < beta < 1.0:
        raise ConfigError("beta must lie in (0, 1)")
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must lie in (0, 1)")
    if rng is None:
        rng = np.random.default_rng(0)
    qa, qb = hd_level(alpha, a.size), hd_level(alpha, b.size)
    d = np.sort(_bootstrap_hd(a, qa, B, rng) - _bootstrap_hd(b, qb, B, rng))
    i, j = ci_indices(B, beta)
    est = harrell_davis(a, qa) - harrell_davis(b, qb)
    return BootstrapQuantileReport(tuple(pair), B, beta, alpha, (float(d[i]), float(d[j])), est)


# -- Kolmogorov-Smirnov -----------------------------------------------------


def ks_statistic(s1, s2) -> float:
    a = np.sort(_sample(s1, "first sample"))
    b = np.sort(_sample(s2, "second sample"))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.abs(fa - fb).max())


def ks_two_sample(s1, s2) -> tuple[float, float]:
    """``(D, p)`` with ``p`` from the limiting Kolmogorov distribution.

    The p-value uses ``sqrt(n1 n2 / (n1 + n2)) * D`` and is only
    approximate for samples smaller than about 30.
    """
    d = ks_statistic(s1, s2)
    n1, n2 = np.size(s1), np.size(s2)
    lam = math.sqrt(n1 * n2 / (n1 + n2)) * d
    return d, float(special.kolmogorov(lam))


# -- combined report --------------------------------------------------------


@dataclass(frozen=True)
class PairVerdict:
    pair: tuple
    bootstrap: BootstrapQuantileReport
    ks_statistic: float
    ks_p_value: float
    ks_level: float

    @property
    def ks_verdict(self) -> str:
        return REJECT if self.ks_p_value < self.ks_level else NO_EVIDENCE

    def to_dict(self) -> dict:
        return {
            "pair": list(self.pair),
            "bootstrap": self.bootstrap.to_dict(),
            "ks": {"statistic": self.ks_statistic, "p_value": self.ks_p_value,
                   "level": self.ks_level, "verdict": self.ks_verdict},
        }


@dataclass(frozen=True)
class DiagnosticReport:
    measure: str
    alpha: float
    class_sizes: dict
    pairs: list = field(default_factory=list)
    ecdf: EcdfTable | None = None

    @property
    def verdict(self) -> str:
        """``reject`` if the bootstrap test rejects for any class pair."""
        return REJECT if any(p.bootstrap.rejects for p in self.pairs) else NO_EVIDENCE

    def pair(self, c1, c2) -> PairVerdict:
        for p in self.pairs:
            if p.pair == (c1, c2):
                return p
        raise KeyError((c1, c2))

    def to_dict(self) -> dict:
        return {
            "measure": self.measure, "alpha": self.alpha, "verdict": self.verdict,
            "class_sizes": {str(k): v for k, v in self.class_sizes.items()},
            "pairs": [p.to_dict() for p in self.pairs],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def diagnose_scores(
    scores,
    classes,
    alpha: float,
    n_classes: int | None = None,
    measure: str = "",
    B: int = DEFAULT_B,
    beta: float = DEFAULT_BETA,
    ks_level: float = DEFAULT_KS_LEVEL,
    rng: np.random.Generator | None = None,
) -> DiagnosticReport:
    """ECDFs plus bootstrap and KS verdicts for every pair of classes."""
    table = ecdf_by_class(scores, classes, n_classes)
    s = np.asarray(scores, dtype=float).reshape(-1)
    c = np.asarray(classes).reshape(-1)
    labels = [g for g in table.groups if g != "marginal"]
    rng = np.random.default_rng(0) if rng is None else rng
    pairs = []
    for c1, c2 in itertools.combinations(labels, 2):
        a, b = s[c == c1], s[c == c2]
        boot = bootstrap_quantile_diff(a, b, alpha, beta, B, rng, pair=(c1, c2))
        d, p = ks_two_sample(a, b)
        pairs.append(PairVerdict((c1, c2), boot, d, p, ks_level))
    sizes = {g: int((c == g).sum()) for g in labels}
    return DiagnosticReport(measure, alpha, sizes, pairs, table)
