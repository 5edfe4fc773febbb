"""Command-line front end.

Every subcommand accepts ``--config FILE.json``; keys in the file use the
long flag names with dashes replaced by underscores, and flags given on the
command line win. Output files go to ``--output-dir``, which defaults to
``$HETCP_OUTPUT_DIR`` or the working directory.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .conformal import CalibratedPredictor
from .core import make_rng, read_csv, write_csv
from .diagnostics import DEFAULT_B, DEFAULT_BETA, DEFAULT_KS_LEVEL, diagnose_scores
from .errors import ConfigError, DataError, DegenerateError, HetcpError
from .estimators import EstimatorSpec, MisspecOp
from .experiments import (
    SWEEP_COLUMNS,
    SWEEP_MEASURES,
    SWEEP_TYPES,
    TABLE_CALIB,
    TABLE_DIM,
    TABLE_HIGH,
    DiagnoseConfig,
    RunConfig,
    SweepConfig,
    TableConfig,
    diagnose_run,
    estimator_for,
    fit_predictor,
    load_data,
    rebuild_estimator,
    run_diagnose,
    run_sweep,
    run_table,
)
from .metrics import aggregate, evaluate
from .synthetic import FAMILIES, GeneratorSpec, generate
from .taxonomy import DIFFICULTY_BINS, FEATURE_THRESHOLD, TaxonomyConfig

ENV_OUTPUT_DIR = "HETCP_OUTPUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


# --------------------------------------------------------------------------
# helpers


def _output_dir(opts: dict) -> Path:
    d = Path(opts.get("output_dir") or os.environ.get(ENV_OUTPUT_DIR) or ".")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _out_path(opts: dict, key: str, default_name: str) -> Path:
    if opts.get(key):
        p = Path(opts[key])
        p.parent.mkdir(parents=True, exist_ok=True)
        return p
    return _output_dir(opts) / default_name


def _emit(opts: dict, payload: dict, text: str) -> None:
    if opts.get("json"):
        print(json.dumps(payload, indent=2, sort_keys=False, default=_json_default))
    else:
        print(text)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _parse_misspec(text: str) -> MisspecOp:
    kind, _, param = text.partition(":")
    if kind == "quadratic":
        kind = "quadratic_sigma"
    try:
        if not param:
            return MisspecOp(kind, 5.0 if kind == "sigma_scale" else 0.0)
        return MisspecOp(kind, float(param))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad misspecification {text!r}; use kind[:param]") from exc


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigError("config file must hold a JSON object")
    return d


def _merge(args: argparse.Namespace) -> dict:
    """Config-file values overridden by flags that were given explicitly."""
    opts = _load_config(getattr(args, "config", None))
    opts = {k.replace("-", "_"): v for k, v in opts.items()}
    for k, v in vars(args).items():
        if v is not None and k not in ("func", "config"):
            opts[k] = v
    return opts


def _seed(opts: dict) -> int:
    seed = int(opts.get("seed", 0))
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    return seed


def _csv_list(v) -> tuple:
    if v is None:
        return ()
    if isinstance(v, str):
        return tuple(s.strip() for s in v.split(",") if s.strip())
    return tuple(v)


def _generator_spec(opts: dict) -> GeneratorSpec:
    return GeneratorSpec(
        type=opts.get("type", "type1_const_mean"),
        family=opts.get("family", "normal"),
        dim=opts.get("dim"),
        n=int(opts.get("n", 1000)),
        seed=_seed(opts),
        high=opts.get("feature_high"),
    )


def _run_config(opts: dict) -> RunConfig:
    if "run" in opts and isinstance(opts["run"], dict):
        base = dict(opts["run"])
    else:
        base = {}
    data = opts.get("data")
    gen = None
    if not data and (opts.get("type") or "generator" in base):
        gen = _generator_spec(opts).to_dict() if opts.get("type") else base["generator"]
    wrappers = [_parse_misspec(m).to_dict() for m in _csv_list(opts.get("misspec"))]
    est = dict(base.get("estimator", {}))
    if opts.get("estimator"):
        est = {"kind": opts["estimator"]} if isinstance(opts["estimator"], str) else dict(opts["estimator"])
    if "k" in opts:
        est["k"] = int(opts["k"])
    if wrappers:
        est["wrappers"] = wrappers
    est.setdefault("kind", "knn" if data else "oracle")
    tax = dict(base.get("taxonomy", {}))
    if opts.get("taxonomy"):
        tax["kind"] = FEATURE_THRESHOLD if opts["taxonomy"] in ("feature", FEATURE_THRESHOLD) else DIFFICULTY_BINS
    for key, dest in (("bins", "n_bins"), ("xi", "xi"), ("tax_dim", "dim")):
        if key in opts:
            tax[dest] = opts[key]
    d = dict(base)
    d.update(
        generator=gen if not data else None,
        csv=data or (base.get("csv") if gen is None else None),
        estimator=est,
        taxonomy=tax,
    )
    measures = _csv_list(opts.get("measure") or opts.get("measures")) or tuple(base.get("measures", ("norm",)))
    d["measures"] = measures
    for key in ("alpha", "n_calib", "n_train", "n_test", "n_repetitions", "seed", "output_dir"):
        if key in opts:
            d[key] = opts[key]
    if opts.get("mondrian"):
        d["mondrian"] = True
    if "test_fraction" in opts or "calib_fraction" in opts:
        d["split"] = {"test_fraction": opts.get("test_fraction", 0.2),
                      "calibration_fraction_of_train": opts.get("calib_fraction", 0.5)}
    return RunConfig.from_dict(d)


def _read_features(path: str) -> np.ndarray:
    """Feature columns ``x0..`` of a CSV file; other columns are ignored."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        idx = [i for i, h in enumerate(header) if h.startswith("x")]
        if not idx or [header[i] for i in idx] != [f"x{j}" for j in range(len(idx))]:
            raise DataError(f"{path}: expected feature columns x0..x{{d-1}}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                vals = [float(row[i]) for i in idx]
            except (ValueError, IndexError):
                raise DataError(f"{path}: row {lineno} is malformed") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}: row {lineno} has non-finite values")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.array(rows)


def _load_predictor(path: str) -> tuple[CalibratedPredictor, RunConfig]:
    d = _load_config(path)
    if "run" not in d:
        raise ConfigError(f"{path} is not a predictor file written by 'calibrate'")
    cfg = RunConfig.from_dict(d["run"])
    est = rebuild_estimator(cfg)
    return CalibratedPredictor.from_dict(d, est), cfg


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(opts: dict) -> int:
    spec = _generator_spec(opts)
    data, truth = generate(spec)
    path = _out_path(opts, "out", f"synth_{spec.type}_{spec.family}_seed{spec.seed}.csv")
    write_csv(path, data, truth.mu, truth.sigma)
    payload = {"path": str(path), "n": len(data), "dim": data.dim, "spec": spec.to_dict(),
               "y_mean": float(data.y.mean()), "y_std": float(data.y.std())}
    _emit(opts, payload, f"wrote {len(data)} rows (dim {data.dim}, {spec.type}/{spec.family}) to {path}")
    return EXIT_OK


def cmd_calibrate(opts: dict) -> int:
    cfg = _run_config(opts)
    data = load_data(replace(cfg, n_repetitions=1))
    est = estimator_for(cfg, data)
    measure = cfg.measures[0]
    p = fit_predictor(cfg, measure, est, data.calib)
    d = p.to_dict()
    d["run"] = replace(cfg, measures=(measure,)).to_dict()
    path = _out_path(opts, "out", f"predictor_{measure}{'_mondrian' if cfg.mondrian else ''}.json")
    path.write_text(json.dumps(d, indent=2) + "\n", encoding="utf-8")
    crit = d["critical"]
    _emit(opts, {"path": str(path), "predictor": d},
          f"calibrated {measure} predictor on {len(data.calib)} points; critical score {crit}; wrote {path}")
    return EXIT_OK


def cmd_predict(opts: dict) -> int:
    if not opts.get("predictor") or not opts.get("data"):
        raise ConfigError("predict needs --predictor and --data")
    p, _ = _load_predictor(opts["predictor"])
    X = _read_features(opts["data"])
    lo, hi = p.predict(X)
    path = _out_path(opts, "out", "predictions.csv")
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j}" for j in range(X.shape[1])] + ["lower", "upper"])
        for row, a, b in zip(X, lo, hi):
            w.writerow([repr(float(v)) for v in row] + [repr(float(a)), repr(float(b))])
    _emit(opts, {"path": str(path), "n": len(X)}, f"wrote {len(X)} intervals to {path}")
    return EXIT_OK


def cmd_evaluate(opts: dict) -> int:
    if not opts.get("predictor"):
        raise ConfigError("evaluate needs --predictor")
    p, cfg = _load_predictor(opts["predictor"])
    if opts.get("data"):
        tests = [read_csv(opts["data"]).dataset]
    else:
        tests = load_data(cfg).tests
    reports = [evaluate(p, t, p.taxonomy) for t in tests]
    summary = reports[0] if len(reports) == 1 else aggregate(reports)
    path = _out_path(opts, "out", "evaluation.csv")
    path.write_text(summary.to_csv(), encoding="utf-8")
    payload = summary.to_dict()
    text = summary.to_csv() if len(reports) > 1 else (
        f"marginal coverage {reports[0].marginal_coverage:.4f}, width {reports[0].marginal_width:.4f}\n"
        + "\n".join(f"class {c}: coverage {v.coverage}, width {v.width}, n={v.count}"
                    for c, v in sorted(reports[0].per_class.items()))
    )
    _emit(opts, payload, text)
    return EXIT_OK


def cmd_table(opts: dict) -> int:
    cfg = TableConfig(
        alpha=float(opts.get("alpha", 0.1)),
        misspec=opts.get("misspec") or None,
        measures=_csv_list(opts.get("measures")) or ("res", "norm"),
        mondrian=bool(opts.get("mondrian", False)),
        repetitions=int(opts.get("repetitions", 20)),
        n_test=int(opts.get("n_test", 1000)),
        n_calib=int(opts.get("n_calib", TABLE_CALIB)),
        n_bins=int(opts.get("bins", 3)),
        dim=int(opts.get("dim", TABLE_DIM)),
        high=float(opts.get("feature_high", TABLE_HIGH)),
        seed=_seed(opts),
    )
    res = run_table(cfg)
    name = f"table_{'quadratic' if cfg.misspec else 'oracle'}_seed{cfg.seed}.csv"
    path = _out_path(opts, "out", name)
    path.write_text(res.to_csv(), encoding="utf-8")
    _emit(opts, {"path": str(path), **res.to_dict()}, res.format() + f"\nwrote {path}")
    return EXIT_OK


def cmd_sweep(opts: dict) -> int:
    cfg = SweepConfig(
        types=_csv_list(opts.get("types")) or SWEEP_TYPES,
        columns=_csv_list(opts.get("columns")) or tuple(n for n, _ in SWEEP_COLUMNS),
        measures=_csv_list(opts.get("measures")) or SWEEP_MEASURES,
        alpha=float(opts.get("alpha", 0.1)),
        n_calib=int(opts.get("n_calib", 3000)),
        n_test=int(opts.get("n_test", 3000)),
        repetitions=int(opts.get("repetitions", 5)),
        n_bins=int(opts.get("bins", 3)),
        dim=opts.get("dim"),
        seed=_seed(opts),
        workers=int(opts.get("workers", 1)),
    )
    res = run_sweep(cfg)
    path = _out_path(opts, "out", f"sweep_seed{cfg.seed}.csv")
    path.write_text(res.to_csv(), encoding="utf-8")
    _emit(opts, {"path": str(path), "cells": len(res.cells)}, f"wrote {len(res.cells)} sweep cells to {path}")
    return EXIT_OK


def _read_scores(path: str) -> tuple[np.ndarray, np.ndarray]:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"score", "class"} <= set(reader.fieldnames):
            raise DataError(f"{path}: score file needs columns score,class")
        scores, classes = [], []
        for lineno, row in enumerate(reader, start=2):
            try:
                s, c = float(row["score"]), int(row["class"])
            except (TypeError, ValueError):
                raise DataError(f"{path}: row {lineno} is malformed") from None
            if not math.isfinite(s) or c < 0:
                raise DataError(f"{path}: row {lineno} has an invalid score or class")
            scores.append(s)
            classes.append(c)
    if not scores:
        raise DataError(f"{path}: no scores")
    return np.array(scores), np.array(classes)


def cmd_diagnose(opts: dict) -> int:
    B = int(opts.get("B", DEFAULT_B))
    beta = float(opts.get("beta", DEFAULT_BETA))
    ks_level = float(opts.get("ks_level", DEFAULT_KS_LEVEL))
    alpha = float(opts.get("alpha", 0.1))
    seed = _seed(opts)
    if opts.get("scores"):
        s, c = _read_scores(opts["scores"])
        reports = {"scores": diagnose_scores(s, c, alpha, None, "scores", B, beta, ks_level, make_rng(seed, 3))}
    elif opts.get("data") or opts.get("type") or "run" in opts:
        reports = diagnose_run(_run_config(opts), B, beta, ks_level)
    else:
        cfg = DiagnoseConfig(
            measures=_csv_list(opts.get("measures")) or ("res", "norm"),
            misspec=opts.get("misspec") or None,
            alpha=alpha,
            n_calib=int(opts.get("n_calib", TABLE_CALIB)),
            n_bins=int(opts.get("bins", 3)),
            dim=int(opts.get("dim", TABLE_DIM)),
            high=float(opts.get("feature_high", TABLE_HIGH)),
            B=B, beta=beta, ks_level=ks_level, seed=seed,
        )
        reports = run_diagnose(cfg)
    out_dir = _output_dir(opts)
    files = []
    for name, rep in reports.items():
        p = out_dir / f"ecdf_{name}.csv"
        p.write_text(rep.ecdf.to_csv(), encoding="utf-8")
        files.append(str(p))
    verdicts = {name: rep.to_dict() for name, rep in reports.items()}
    vpath = out_dir / "diagnostics.json"
    vpath.write_text(json.dumps(verdicts, indent=2) + "\n", encoding="utf-8")
    lines = []
    for name, rep in reports.items():
        for pv in rep.pairs:
            lines.append(f"{name} {pv.pair}: bootstrap {pv.bootstrap.verdict} "
                         f"ci=({pv.bootstrap.ci[0]:.4g}, {pv.bootstrap.ci[1]:.4g}); "
                         f"ks {pv.ks_verdict} p={pv.ks_p_value:.3g}")
    _emit(opts, {"ecdf_files": files, "verdicts_file": str(vpath), "reports": verdicts}, "\n".join(lines))
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with default values for the flags")
    p.add_argument("--seed", type=int)
    p.add_argument("--json", action="store_const", const=True, help="machine-readable output on stdout")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--out", help="output file (default: a name inside the output directory)")


def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="CSV file with columns x0..x{d-1},y")
    p.add_argument("--type", help="synthetic generator type (instead of --data)")
    p.add_argument("--family", choices=FAMILIES)
    p.add_argument("--dim", type=int)
    p.add_argument("--feature-high", dest="feature_high", type=float)
    p.add_argument("--estimator", choices=("oracle", "knn", "constant"))
    p.add_argument("--k", type=int)
    p.add_argument("--misspec", action="append", help="kind[:param], repeatable")
    p.add_argument("--measure", help="res, int or norm")
    p.add_argument("--alpha", type=float)
    p.add_argument("--mondrian", action="store_const", const=True)
    p.add_argument("--taxonomy", choices=("difficulty", "feature"))
    p.add_argument("--bins", type=int)
    p.add_argument("--xi", type=float)
    p.add_argument("--tax-dim", dest="tax_dim", type=int)
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--n-calib", dest="n_calib", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--n-repetitions", dest="n_repetitions", type=int)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    p.add_argument("--calib-fraction", dest="calib_fraction", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hetcp", description="Conformal prediction intervals for heteroskedastic regression.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="sample a synthetic dataset to CSV")
    _common(p)
    p.add_argument("--type")
    p.add_argument("--family", choices=FAMILIES)
    p.add_argument("--dim", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--feature-high", dest="feature_high", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", help="calibrate a predictor and save it as JSON")
    _common(p)
    _data_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("predict", help="prediction intervals for the rows of a CSV file")
    _common(p)
    p.add_argument("--predictor")
    p.add_argument("--data")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="coverage and width of a saved predictor")
    _common(p)
    p.add_argument("--predictor")
    p.add_argument("--data", help="test CSV (default: the held-out part of the calibration run)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("table", help="toy-model coverage table")
    _common(p)
    p.add_argument("--misspec", choices=("quadratic",))
    p.add_argument("--alpha", type=float)
    p.add_argument("--measures")
    p.add_argument("--mondrian", action="store_const", const=True)
    p.add_argument("--repetitions", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--n-calib", dest="n_calib", type=int)
    p.add_argument("--bins", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--feature-high", dest="feature_high", type=float)
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("sweep", help="per-class coverage under misspecification")
    _common(p)
    p.add_argument("--types")
    p.add_argument("--columns")
    p.add_argument("--measures")
    p.add_argument("--alpha", type=float)
    p.add_argument("--n-calib", dest="n_calib", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--repetitions", type=int)
    p.add_argument("--bins", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("diagnose", help="ECDFs and class-pair tests on calibration scores")
    _common(p)
    _data_flags(p)
    p.add_argument("--scores", help="CSV with columns score,class")
    p.add_argument("--measures")
    p.add_argument("--B", dest="B", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--ks-level", dest="ks_level", type=float)
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = _merge(args)
        if args.func is cmd_diagnose and opts.get("misspec") and not (opts.get("data") or opts.get("type")):
            # the toy-model diagnose protocol takes a single named misspecification
            ms = _csv_list(opts["misspec"])
            opts["misspec"] = "quadratic" if ms and ms[0] in ("quadratic", "quadratic_sigma") else ms[0]
        return args.func(opts)
    except (DataError, DegenerateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, HetcpError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
