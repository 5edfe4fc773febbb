"""Run configurations and the experiment protocols behind the CLI.

Every protocol draws its data from named Philox streams keyed by the run
seed, so results depend only on the configuration and not on worker count
or scheduling.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .conformal import CalibratedPredictor, calibrate, calibrate_mondrian, calibration_scores
from .core import Dataset, SplitSpec, make_rng, read_csv, split_dataset
from .diagnostics import DEFAULT_B, DEFAULT_BETA, DEFAULT_KS_LEVEL, DiagnosticReport, diagnose_scores
from .errors import ConfigError
from .estimators import Estimator, EstimatorSpec, MisspecOp, build_estimator
from .metrics import AggregateReport, EvalReport, aggregate, evaluate
from .nonconformity import Measure
from .synthetic import GeneratorSpec, SyntheticGenerator
from .taxonomy import Taxonomy, TaxonomyConfig

# Toy-model protocol for the coverage tables. The feature range puts the
# median of sigma^2 near 0.5, the fixed point of the quadratic misspecification.
TABLE_DIM = 15
TABLE_HIGH = 10.0 * math.sqrt(2.0)
TABLE_CALIB = 2000
QUADRATIC = MisspecOp("quadratic_sigma")

# stream ids under the run seed
_S_TRAIN, _S_CALIB, _S_TEST = 0, 1, 2

SWEEP_TYPES = ("type1_const_mean", "type2_functional", "type3_lowdim", "type4_bimodal")
SWEEP_COLUMNS: tuple[tuple[str, tuple[MisspecOp, ...]], ...] = (
    ("oracle", ()),
    ("sigma_shift_0.01", (MisspecOp("sigma_shift", 0.01),)),
    ("sigma_shift_0.1", (MisspecOp("sigma_shift", 0.1),)),
    ("sigma_shift_1", (MisspecOp("sigma_shift", 1.0),)),
    ("sigma_scale_5", (MisspecOp("sigma_scale", 5.0),)),
    ("mu_shift_const_1", (MisspecOp("mu_shift_const", 1.0),)),
    ("mu_shift_prop_1", (MisspecOp("mu_shift_prop", 1.0),)),
)
SWEEP_MEASURES = ("res", "int", "norm")


def class_names(n_classes: int) -> tuple:
    if n_classes == 3:
        return ("low", "medium", "high")
    return tuple(f"c{j}" for j in range(n_classes))


def pmap(fn, items, workers: int = 1) -> list:
    """Ordered map, optionally over a process pool."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# --------------------------------------------------------------------------
# generic run configuration


@dataclass(frozen=True)
class RunConfig:
    """One calibration/evaluation run.

    Exactly one of ``generator`` and ``csv`` names the data. Synthetic data
    are drawn fresh per part (``n_train``, ``n_calib``, ``n_test``); CSV data
    are shuffled and split according to ``split``.
    """

    generator: GeneratorSpec | None = None
    csv: str | None = None
    estimator: EstimatorSpec = field(default_factory=EstimatorSpec)
    measures: tuple[str, ...] = ("norm",)
    alpha: float = 0.1
    taxonomy: TaxonomyConfig = field(default_factory=TaxonomyConfig)
    mondrian: bool = False
    n_repetitions: int = 1
    n_train: int = 2000
    n_calib: int = 2000
    n_test: int = 1000
    seed: int = 0
    output_dir: str | None = None
    split: SplitSpec = field(default_factory=SplitSpec)

    def __post_init__(self):
        if (self.generator is None) == (self.csv is None):
            raise ConfigError("exactly one data source (generator or csv) is required")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        for name in ("n_repetitions", "n_train", "n_calib", "n_test"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        object.__setattr__(self, "measures", tuple(Measure.parse(m).short for m in self.measures))
        if self.csv is not None and self.estimator.kind == "oracle":
            raise ConfigError("the oracle estimator needs a synthetic generator, not a CSV file")

    def to_dict(self) -> dict:
        d = {
            "estimator": self.estimator.to_dict(), "measures": list(self.measures), "alpha": self.alpha,
            "taxonomy": self.taxonomy.to_dict(), "mondrian": self.mondrian,
            "n_repetitions": self.n_repetitions, "n_train": self.n_train, "n_calib": self.n_calib,
            "n_test": self.n_test, "seed": self.seed,
            "split": {"test_fraction": self.split.test_fraction,
                      "calibration_fraction_of_train": self.split.calibration_fraction_of_train},
        }
        if self.generator is not None:
            d["generator"] = self.generator.to_dict()
        else:
            d["csv"] = self.csv
        if self.output_dir is not None:
            d["output_dir"] = self.output_dir
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        try:
            split = d.get("split", {})
            seed = int(d.get("seed", 0))
            return cls(
                generator=GeneratorSpec.from_dict(d["generator"]) if d.get("generator") else None,
                csv=d.get("csv"),
                estimator=EstimatorSpec.from_dict(d.get("estimator", {})),
                measures=tuple(d.get("measures", ("norm",))),
                alpha=float(d.get("alpha", 0.1)),
                taxonomy=TaxonomyConfig.from_dict(d.get("taxonomy", {})),
                mondrian=bool(d.get("mondrian", False)),
                n_repetitions=int(d.get("n_repetitions", 1)),
                n_train=int(d.get("n_train", 2000)),
                n_calib=int(d.get("n_calib", 2000)),
                n_test=int(d.get("n_test", 1000)),
                seed=seed,
                output_dir=d.get("output_dir"),
                split=SplitSpec(float(split.get("test_fraction", 0.2)),
                                float(split.get("calibration_fraction_of_train", 0.5))),
            )
        except (TypeError, ValueError, AttributeError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed run config: {exc}") from exc


@dataclass
class RunData:
    train: Dataset | None
    calib: Dataset
    tests: list[Dataset]
    source: SyntheticGenerator | None


def load_data(cfg: RunConfig) -> RunData:
    """Materialise the training, calibration and test data of a run."""
    if cfg.csv is not None:
        table = read_csv(cfg.csv)
        train, calib, test = split_dataset(table.dataset, replace(cfg.split, seed=cfg.seed))
        return RunData(train, calib, [test], None)
    spec = cfg.generator.with_(seed=cfg.seed)
    gen = SyntheticGenerator(spec)
    train = None
    if cfg.estimator.kind == "knn":
        train, _ = gen.sample(cfg.n_train, make_rng(cfg.seed, spec.stream, _S_TRAIN))
    calib, _ = gen.sample(cfg.n_calib, make_rng(cfg.seed, spec.stream, _S_CALIB))
    tests = [gen.sample(cfg.n_test, make_rng(cfg.seed, spec.stream, _S_TEST, r))[0]
             for r in range(cfg.n_repetitions)]
    return RunData(train, calib, tests, gen)


def estimator_for(cfg: RunConfig, data: RunData) -> Estimator:
    return build_estimator(cfg.estimator, source=data.source, train=data.train, seed=cfg.seed)


def fit_predictor(cfg: RunConfig, measure: str, estimator: Estimator, calib: Dataset) -> CalibratedPredictor:
    m = Measure.parse(measure)
    taxonomy = cfg.taxonomy.fit(estimator, calib.X)
    if cfg.mondrian:
        return calibrate_mondrian(m, estimator, calib, cfg.alpha, taxonomy, cfg.estimator)
    p = calibrate(m, estimator, calib, cfg.alpha, cfg.estimator)
    # keep the taxonomy with a global predictor so evaluation can split by class
    return replace(p, taxonomy=taxonomy)


def rebuild_estimator(cfg: RunConfig) -> Estimator:
    """Re-create the estimator of a saved run (refits k-NN on the same split)."""
    return estimator_for(cfg, load_data(replace(cfg, n_repetitions=1)))


@dataclass(frozen=True)
class RunResult:
    predictors: dict
    reports: dict  # measure -> list[EvalReport]

    def summary(self, measure: str) -> EvalReport | AggregateReport:
        reps = self.reports[measure]
        return reps[0] if len(reps) == 1 else aggregate(reps)


def run(cfg: RunConfig) -> RunResult:
    """Calibrate one predictor per measure and evaluate it on every test set."""
    data = load_data(cfg)
    est = estimator_for(cfg, data)
    predictors, reports = {}, {}
    for m in cfg.measures:
        p = fit_predictor(cfg, m, est, data.calib)
        predictors[m] = p
        reports[m] = [evaluate(p, t, p.taxonomy) for t in data.tests]
    return RunResult(predictors, reports)


# --------------------------------------------------------------------------
# coverage tables on the toy model


@dataclass(frozen=True)
class TableConfig:
    alpha: float = 0.1
    misspec: str | None = None  # None or "quadratic"
    measures: tuple[str, ...] = ("res", "norm")
    mondrian: bool = False
    repetitions: int = 20
    n_test: int = 1000
    n_calib: int = TABLE_CALIB
    n_bins: int = 3
    dim: int = TABLE_DIM
    high: float = TABLE_HIGH
    seed: int = 0

    def __post_init__(self):
        if self.misspec not in (None, "quadratic"):
            raise ConfigError(f"unknown table misspecification {self.misspec!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.repetitions < 2:
            raise ConfigError("a table needs at least two repetitions")
        object.__setattr__(self, "measures", tuple(Measure.parse(m).short for m in self.measures))


@dataclass(frozen=True)
class TableResult:
    config: TableConfig
    rows: dict  # (measure, mondrian) -> AggregateReport
    edges: tuple

    def row(self, measure: str, mondrian: bool = False) -> AggregateReport:
        return self.rows[(Measure.parse(measure).short, mondrian)]

    def coverage(self, measure: str, mondrian: bool = False) -> dict:
        """``{"marginal": m, "low": ..., ...}`` of mean coverages."""
        agg = self.row(measure, mondrian)
        names = class_names(self.config.n_bins)
        out = {"marginal": agg.mean("marginal")}
        for j, name in enumerate(names):
            out[name] = agg.mean(j)
        return out

    def to_csv(self) -> str:
        names = class_names(self.config.n_bins)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["measure", "mondrian", "class", "metric", "mean", "std"])
        for (measure, mondrian), agg in self.rows.items():
            for (label, metric), (mean, std) in agg.cells.items():
                cls = label if label == "marginal" else names[label]
                w.writerow([measure, int(mondrian), cls, metric, _fmt(mean), _fmt(std)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        out = {"alpha": self.config.alpha, "misspec": self.config.misspec, "edges": list(self.edges), "rows": []}
        for (measure, mondrian), agg in self.rows.items():
            out["rows"].append({"measure": measure, "mondrian": mondrian, **agg.to_dict()})
        return out

    def format(self) -> str:
        names = class_names(self.config.n_bins)
        head = f"{'row':<20}" + "".join(f"{c:>16}" for c in ("marginal",) + names)
        lines = [head]
        for (measure, mondrian), agg in self.rows.items():
            label = f"A_{measure}" + (" (mondrian)" if mondrian else "")
            cells = [("marginal",)] + [(j,) for j in range(len(names))]
            text = "".join(f"{agg.mean(c[0]):>9.3f}±{agg.std(c[0]):<6.3f}" for c in cells)
            lines.append(f"{label:<20}{text}")
        return "\n".join(lines)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return repr(v)


def table_generator(cfg: TableConfig) -> SyntheticGenerator:
    return SyntheticGenerator(GeneratorSpec("toy_cv", dim=cfg.dim, high=cfg.high, seed=cfg.seed))


def run_table(cfg: TableConfig = TableConfig()) -> TableResult:
    """Coverage of the toy model over repeated calibration/test draws.

    Each repetition draws a fresh calibration set and a fresh test set.
    Variance classes are equal-frequency bins of the (possibly misspecified)
    sigma estimate on that repetition's calibration set.
    """
    gen = table_generator(cfg)
    wrappers = (QUADRATIC,) if cfg.misspec == "quadratic" else ()
    spec = EstimatorSpec("oracle", wrappers=wrappers)
    est = build_estimator(spec, source=gen, seed=cfg.seed)
    keys = [(Measure.parse(m).short, mond) for m in cfg.measures for mond in ((False, True) if cfg.mondrian else (False,))]
    reports: dict = {k: [] for k in keys}
    edges = []
    for r in range(cfg.repetitions):
        calib, _ = gen.sample(cfg.n_calib, make_rng(cfg.seed, _S_CALIB, r))
        test, _ = gen.sample(cfg.n_test, make_rng(cfg.seed, _S_TEST, r))
        taxonomy = Taxonomy.fit_difficulty(est, calib.X, cfg.n_bins)
        edges.append(taxonomy.edges.edges)
        for measure, mondrian in keys:
            m = Measure.parse(measure)
            if mondrian:
                p = calibrate_mondrian(m, est, calib, cfg.alpha, taxonomy, spec)
            else:
                p = replace(calibrate(m, est, calib, cfg.alpha, spec), taxonomy=taxonomy)
            reports[(measure, mondrian)].append(evaluate(p, test, taxonomy))
    rows = {k: aggregate(v) for k, v in reports.items()}
    return TableResult(cfg, rows, tuple(float(e) for e in np.mean(edges, axis=0)))


# --------------------------------------------------------------------------
# misspecification sweep over the synthetic data types


@dataclass(frozen=True)
class SweepConfig:
    types: tuple[str, ...] = SWEEP_TYPES
    columns: tuple[str, ...] = tuple(name for name, _ in SWEEP_COLUMNS)
    measures: tuple[str, ...] = SWEEP_MEASURES
    alpha: float = 0.1
    n_calib: int = 3000
    n_test: int = 3000
    repetitions: int = 5
    n_bins: int = 3
    dim: int | None = None
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        known = dict(SWEEP_COLUMNS)
        for c in self.columns:
            if c not in known:
                raise ConfigError(f"unknown sweep column {c!r}; expected one of {tuple(known)}")
        object.__setattr__(self, "types", tuple(GeneratorSpec(t).type for t in self.types))
        object.__setattr__(self, "measures", tuple(Measure.parse(m).short for m in self.measures))
        if self.repetitions < 2:
            raise ConfigError("a sweep needs at least two repetitions")


@dataclass(frozen=True)
class SweepCell:
    type: str
    column: str
    measure: str
    mondrian: bool
    report: AggregateReport


def _sweep_job(args) -> list[SweepCell]:
    cfg, type_index, gen_type, column = args
    ops = dict(SWEEP_COLUMNS)[column]
    gen = SyntheticGenerator(GeneratorSpec(gen_type, dim=cfg.dim, seed=cfg.seed))
    spec = EstimatorSpec("oracle", wrappers=ops)
    est = build_estimator(spec, source=gen, seed=cfg.seed)
    # common random numbers: every column of a type sees the same data
    reports: dict = {}
    for r in range(cfg.repetitions):
        calib, _ = gen.sample(cfg.n_calib, make_rng(cfg.seed, type_index, _S_CALIB, r))
        test, _ = gen.sample(cfg.n_test, make_rng(cfg.seed, type_index, _S_TEST, r))
        taxonomy = Taxonomy.fit_difficulty(est, calib.X, cfg.n_bins)
        for m in cfg.measures:
            measure = Measure.parse(m)
            glob = replace(calibrate(measure, est, calib, cfg.alpha, spec), taxonomy=taxonomy)
            mond = calibrate_mondrian(measure, est, calib, cfg.alpha, taxonomy, spec)
            for mondrian, p in ((False, glob), (True, mond)):
                reports.setdefault((measure.short, mondrian), []).append(evaluate(p, test, taxonomy))
    cells = [SweepCell(gen_type, column, m, mondrian, aggregate(reps)) for (m, mondrian), reps in reports.items()]
    return cells


@dataclass(frozen=True)
class SweepResult:
    config: SweepConfig
    cells: list

    def cell(self, gen_type: str, column: str, measure: str, mondrian: bool = False) -> AggregateReport:
        gen_type = GeneratorSpec(gen_type).type
        measure = Measure.parse(measure).short
        for c in self.cells:
            if (c.type, c.column, c.measure, c.mondrian) == (gen_type, column, measure, mondrian):
                return c.report
        raise KeyError((gen_type, column, measure, mondrian))

    def class_coverages(self, gen_type: str, column: str, measure: str, mondrian: bool = False) -> list[float]:
        agg = self.cell(gen_type, column, measure, mondrian)
        return [agg.mean(j) for j in range(self.config.n_bins)]

    def to_csv(self) -> str:
        names = class_names(self.config.n_bins)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["type", "misspec", "measure", "mondrian", "class", "metric", "mean", "std"])
        for c in self.cells:
            for (label, metric), (mean, std) in c.report.cells.items():
                cls = label if label == "marginal" else names[label]
                w.writerow([c.type, c.column, c.measure, int(c.mondrian), cls, metric, _fmt(mean), _fmt(std)])
        return buf.getvalue()


def run_sweep(cfg: SweepConfig = SweepConfig()) -> SweepResult:
    jobs = [(cfg, i, t, col) for i, t in enumerate(cfg.types) for col in cfg.columns]
    cells = [c for batch in pmap(_sweep_job, jobs, cfg.workers) for c in batch]
    return SweepResult(cfg, cells)


# --------------------------------------------------------------------------
# diagnostics on calibration scores


@dataclass(frozen=True)
class DiagnoseConfig:
    measures: tuple[str, ...] = ("res", "norm")
    misspec: str | None = None
    alpha: float = 0.1
    n_calib: int = TABLE_CALIB
    n_bins: int = 3
    dim: int = TABLE_DIM
    high: float = TABLE_HIGH
    B: int = DEFAULT_B
    beta: float = DEFAULT_BETA
    ks_level: float = DEFAULT_KS_LEVEL
    seed: int = 0

    def __post_init__(self):
        if self.misspec not in (None, "quadratic"):
            raise ConfigError(f"unknown misspecification {self.misspec!r}")
        object.__setattr__(self, "measures", tuple(Measure.parse(m).short for m in self.measures))


def run_diagnose(cfg: DiagnoseConfig = DiagnoseConfig()) -> dict[str, DiagnosticReport]:
    """Per-measure diagnostic reports on toy-model calibration scores."""
    gen = SyntheticGenerator(GeneratorSpec("toy_cv", dim=cfg.dim, high=cfg.high, seed=cfg.seed))
    wrappers = (QUADRATIC,) if cfg.misspec == "quadratic" else ()
    est = build_estimator(EstimatorSpec("oracle", wrappers=wrappers), source=gen, seed=cfg.seed)
    calib, _ = gen.sample(cfg.n_calib, make_rng(cfg.seed, _S_CALIB))
    taxonomy = Taxonomy.fit_difficulty(est, calib.X, cfg.n_bins)
    classes = taxonomy.classify(calib.X)
    out = {}
    for i, m in enumerate(cfg.measures):
        measure = Measure.parse(m)
        scores = calibration_scores(measure, est, calib, cfg.alpha)
        out[measure.short] = diagnose_scores(
            scores, classes, cfg.alpha, cfg.n_bins, measure.short,
            cfg.B, cfg.beta, cfg.ks_level, make_rng(cfg.seed, 3, i),
        )
    return out


def diagnose_run(cfg: RunConfig, B: int = DEFAULT_B, beta: float = DEFAULT_BETA,
                 ks_level: float = DEFAULT_KS_LEVEL) -> dict[str, DiagnosticReport]:
    """Diagnostics on the calibration scores of a general run config."""
    data = load_data(replace(cfg, n_repetitions=1))
    est = estimator_for(cfg, data)
    taxonomy = cfg.taxonomy.fit(est, data.calib.X)
    classes = taxonomy.classify(data.calib.X)
    out = {}
    for i, m in enumerate(cfg.measures):
        measure = Measure.parse(m)
        scores = calibration_scores(measure, est, data.calib, cfg.alpha)
        out[measure.short] = diagnose_scores(
            scores, classes, cfg.alpha, taxonomy.n_classes, measure.short,
            B, beta, ks_level, make_rng(cfg.seed, 3, i),
        )
    return out

