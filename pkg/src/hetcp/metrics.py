"""Empirical coverage and width, marginally and per taxonomy class."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .conformal import CalibratedPredictor
from .core import Dataset
from .errors import DataError
from .taxonomy import Taxonomy

METRICS = ("coverage", "width", "count", "n_infinite")


@dataclass(frozen=True)
class ClassCell:
    coverage: float | None
    width: float | None
    count: int
    n_infinite: int = 0


@dataclass(frozen=True)
class EvalReport:
    marginal_coverage: float
    marginal_width: float
    per_class: dict[int, ClassCell]
    n_test: int
    alpha: float
    n_infinite: int = 0

    def cell(self, label) -> ClassCell:
        if label == "marginal":
            return ClassCell(self.marginal_coverage, self.marginal_width, self.n_test, self.n_infinite)
        return self.per_class[label]

    @property
    def labels(self) -> list:
        return ["marginal"] + sorted(self.per_class)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "n_test": self.n_test,
            "marginal": _cell_dict(self.cell("marginal")),
            "per_class": {str(c): _cell_dict(v) for c, v in sorted(self.per_class.items())},
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def to_csv(self) -> str:
        rows = []
        for label in self.labels:
            cell = self.cell(label)
            for m in METRICS:
                rows.append((label, m, getattr(cell, m), ""))
        return _long_csv(rows)


def _num(v):
    if v is None:
        return None
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return v


def _cell_dict(cell: ClassCell) -> dict:
    return {m: _num(getattr(cell, m)) for m in METRICS}


def _long_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "metric", "mean", "std"])
    for label, metric, mean, std in rows:
        w.writerow([label, metric, "" if mean is None else mean, "" if std is None else std])
    return buf.getvalue()


def coverage_and_width(lo, hi, y) -> tuple[np.ndarray, np.ndarray]:
    """Per-point coverage indicator and width (empty sets have width 0)."""
    lo, hi, y = np.asarray(lo), np.asarray(hi), np.asarray(y)
    covered = (lo <= y) & (y <= hi)
    with np.errstate(invalid="ignore"):
        width = np.where(lo > hi, 0.0, hi - lo)
    return covered, width


def _summary(covered, width) -> ClassCell:
    n = int(covered.size)
    if n == 0:
        return ClassCell(None, None, 0, 0)
    n_inf = int(np.isinf(width).sum())
    w = math.inf if n_inf else float(width.mean())
    return ClassCell(float(covered.mean()), w, n, n_inf)


def report_from_arrays(covered, width, classes, n_classes: int, alpha: float) -> EvalReport:
    covered = np.asarray(covered, dtype=bool)
    width = np.asarray(width, dtype=float)
    classes = np.asarray(classes)
    if covered.size == 0:
        raise DataError("empty test set")
    marg = _summary(covered, width)
    per_class = {c: _summary(covered[classes == c], width[classes == c]) for c in range(n_classes)}
    return EvalReport(marg.coverage, marg.width, per_class, marg.count, alpha, marg.n_infinite)


def evaluate(p: CalibratedPredictor, test: Dataset, t: Taxonomy) -> EvalReport:
    """Coverage and width of ``p`` on ``test``, split by the classes of ``t``."""
    if len(test) == 0:
        raise DataError("empty test set")
    lo, hi = p.predict(test.X)
    covered, width = coverage_and_width(lo, hi, test.y)
    return report_from_arrays(covered, width, t.classify(test.X), t.n_classes, p.alpha)


@dataclass(frozen=True)
class AggregateReport:
    """Mean and sample standard deviation of every (class, metric) cell."""

    alpha: float
    n_reports: int
    cells: dict = field(default_factory=dict)  # (label, metric) -> (mean, std)

    def mean(self, label, metric: str = "coverage") -> float:
        return self.cells[(label, metric)][0]

    def std(self, label, metric: str = "coverage") -> float:
        return self.cells[(label, metric)][1]

    @property
    def labels(self) -> list:
        seen = []
        for label, _ in self.cells:
            if label not in seen:
                seen.append(label)
        return seen

    def to_dict(self) -> dict:
        out: dict = {"alpha": self.alpha, "n_reports": self.n_reports, "cells": {}}
        for (label, metric), (m, s) in self.cells.items():
            out["cells"].setdefault(str(label), {})[metric] = {"mean": _num(m), "std": _num(s)}
        return out

    def to_csv(self) -> str:
        return _long_csv((label, metric, _num(m), _num(s)) for (label, metric), (m, s) in self.cells.items())


def _mean_std(values: list) -> tuple[float | None, float | None]:
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    arr = np.asarray(vals, dtype=float)
    if np.isinf(arr).any():
        return math.inf, math.nan
    std = float(arr.std(ddof=1)) if arr.size > 1 else math.nan
    return float(arr.mean()), std


def aggregate(reports: list[EvalReport]) -> AggregateReport:
    """Mean and std over repeated evaluations of the same configuration."""
    if len(reports) < 2:
        raise ValueError("aggregate needs at least two reports")
    labels = reports[0].labels
    alpha = reports[0].alpha
    for r in reports[1:]:
        if r.labels != labels:
            raise ValueError(f"mismatched class sets {r.labels} vs {labels}")
        if r.alpha != alpha:
            raise ValueError("reports were produced at different alpha levels")
    cells = {}
    for label in labels:
        for metric in METRICS:
            cells[(label, metric)] = _mean_std([getattr(r.cell(label), metric) for r in reports])
    return AggregateReport(alpha, len(reports), cells)
