"""Data containers, seeded randomness, splitting and the finite-set quantile."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, EmptyCalibrationError

# Slack used when turning beta * n into an order-statistic rank, so that
# products such as 0.8 * (1 + 1/9) * 9 land on 8 and not 9.
_RANK_SLACK = 1e-9


class RngStream:
    """Named random stream: Philox keyed by ``(seed, *stream)``.

    Philox is counter based, so a given key reproduces the same sequence on
    every platform. Distinct stream ids give statistically independent
    streams and are used for parallel repetitions.
    """

    __slots__ = ("seed", "stream")

    def __init__(self, seed: int, *stream: int):
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.stream = tuple(int(s) for s in stream)

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        return np.random.Generator(np.random.Philox(seq))

    def child(self, *stream: int) -> "RngStream":
        return RngStream(self.seed, *self.stream, *stream)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream={self.stream})"


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Shorthand for ``RngStream(seed, *stream).generator()``."""
    return RngStream(seed, *stream).generator()


@dataclass(frozen=True)
class Observation:
    x: tuple[float, ...]
    y: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.x) or not math.isfinite(self.y):
            raise DataError("observation has non-finite coordinates")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix ``X`` of shape (n, dim) with responses ``y`` of shape (n,).

    Arrays are copied, validated for finiteness and made read-only.
    """

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=float, copy=True)
        y = np.array(self.y, dtype=float, copy=True).reshape(-1)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DataError(f"shape mismatch: X {X.shape}, y {y.shape}")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise DataError("dataset contains non-finite values")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_observations(cls, observations: Sequence[Observation]) -> "Dataset":
        if not observations:
            raise DataError("empty dataset")
        dims = {len(o.x) for o in observations}
        if len(dims) != 1:
            raise DataError(f"observations have mixed dimensions {sorted(dims)}")
        return cls(np.array([o.x for o in observations]), np.array([o.y for o in observations]))

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.y.shape[0]

    def __iter__(self) -> Iterable[Observation]:
        for xi, yi in zip(self.X, self.y):
            yield Observation(tuple(float(v) for v in xi), float(yi))

    def subset(self, index) -> "Dataset":
        return Dataset(self.X[index], self.y[index])


@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float

    def __post_init__(self):
        if math.isnan(self.lower) or math.isnan(self.upper) or self.lower > self.upper:
            raise ValueError(f"invalid interval [{self.lower}, {self.upper}]")

    def __contains__(self, y: float) -> bool:
        return self.lower <= y <= self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    calibration_fraction_of_train: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("test_fraction", "calibration_fraction_of_train"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must lie strictly inside (0, 1), got {v}")


def finite_quantile(scores, beta: float) -> float:
    """Order-statistic quantile of a finite multiset.

    Returns the k-th smallest score with ``k = ceil(beta * n)``. ``beta <= 0``
    gives the minimum and ``beta > 1`` gives ``+inf``, the conservative answer
    when the calibration set is too small for the requested level.
    """
    a = np.asarray(scores, dtype=float).reshape(-1)
    n = a.size
    if n == 0:
        raise EmptyCalibrationError("empty calibration")
    if beta <= 0:
        return float(a.min())
    if beta > 1 + 1e-12:
        return math.inf
    k = min(max(math.ceil(beta * n - _RANK_SLACK), 1), n)
    return float(np.partition(a, k - 1)[k - 1])


def inflated_level(alpha: float, n: int) -> float:
    """The ``(1 - alpha)(1 + 1/n)`` level used for conformal critical scores."""
    return (1.0 - alpha) * (1.0 + 1.0 / n)


def split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    n_test = int(round(spec.test_fraction * n))
    n_rest = n - n_test
    n_calib = int(round(spec.calibration_fraction_of_train * n_rest))
    return n_rest - n_calib, n_calib, n_test


def split_dataset(d: Dataset, spec: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset, Dataset]:
    """Shuffle and split into (train, calibration, test).

    The test part takes ``test_fraction`` of the data and the calibration part
    takes ``calibration_fraction_of_train`` of what remains.
    """
    n = len(d)
    if n < 4:
        raise DataError(f"dataset too small to split ({n} rows, need at least 4)")
    sizes = split_sizes(n, spec)
    if min(sizes) < 1:
        raise DataError(f"split of {n} rows leaves an empty part {sizes}")
    train, calib, test = split_indices(n, spec)
    return d.subset(train), d.subset(calib), d.subset(test)


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n_train, n_calib, _ = split_sizes(n, spec)
    perm = make_rng(spec.seed).permutation(n)
    return (
        np.sort(perm[:n_train]),
        np.sort(perm[n_train : n_train + n_calib]),
        np.sort(perm[n_train + n_calib :]),
    )


@dataclass
class CsvTable:
    dataset: Dataset
    truth_mu: np.ndarray | None = None
    truth_sigma: np.ndarray | None = None
    columns: list[str] = field(default_factory=list)


def read_csv(path: str | Path) -> CsvTable:
    """Read ``x0..x{d-1},y`` (optionally followed by ``mu,sigma``) from UTF-8 CSV."""
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        xcols = [h for h in header if h.startswith("x")]
        expected = [f"x{i}" for i in range(len(xcols))]
        if not xcols or xcols != header[: len(xcols)] or xcols != expected or "y" not in header:
            raise DataError(f"{path}: header must be x0..x{{d-1}},y[,mu,sigma], got {header}")
        iy = header.index("y")
        imu = header.index("mu") if "mu" in header else None
        isig = header.index("sigma") if "sigma" in header else None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise DataError(f"{path}: row {lineno} is not numeric") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}: row {lineno} has non-finite values")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.array(rows)
    ds = Dataset(arr[:, : len(xcols)], arr[:, iy])
    return CsvTable(
        ds,
        arr[:, imu] if imu is not None else None,
        arr[:, isig] if isig is not None else None,
        header,
    )


def write_csv(path: str | Path, d: Dataset, mu=None, sigma=None) -> None:
    header = [f"x{i}" for i in range(d.dim)] + ["y"]
    cols = [d.X, d.y[:, None]]
    if mu is not None and sigma is not None:
        header += ["mu", "sigma"]
        cols += [np.asarray(mu)[:, None], np.asarray(sigma)[:, None]]
    table = np.hstack(cols)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in table:
            w.writerow([repr(float(v)) for v in row])
