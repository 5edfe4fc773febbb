"""Split and Mondrian conformal prediction for heteroskedastic regression."""

from .conformal import CalibratedPredictor, calibrate, calibrate_mondrian, critical_score, predict
from .core import (
    Dataset,
    Interval,
    Observation,
    RngStream,
    SplitSpec,
    finite_quantile,
    inflated_level,
    make_rng,
    read_csv,
    split_dataset,
    write_csv,
)
from .diagnostics import (
    BootstrapQuantileReport,
    EcdfTable,
    bootstrap_quantile_diff,
    ecdf_by_class,
    harrell_davis,
    ks_two_sample,
)
from .errors import ConfigError, DataError, DegenerateError, EmptyCalibrationError, HetcpError, NotFittedError
from .estimators import (
    ConstantEstimator,
    EstimatorSpec,
    IntervalEstimate,
    KNNEstimator,
    MeanVarEstimate,
    MisspecifiedEstimator,
    MisspecOp,
    OracleEstimator,
    apply_misspec,
    build_estimator,
    mv_interval,
)
from .metrics import AggregateReport, EvalReport, aggregate, evaluate
from .nonconformity import Measure, invert, score
from .synthetic import GeneratorSpec, SyntheticGenerator, generate
from .taxonomy import BinEdges, Taxonomy, TaxonomyConfig, classify, fit_equal_frequency_bins

__version__ = "0.1.0"
