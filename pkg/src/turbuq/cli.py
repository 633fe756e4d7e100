"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure. Any
nonzero exit writes a one-line JSON error object to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._io import DataError, atomic_write_text, write_csv
from .dataset import (
    SYNTHETIC_KINDS,
    align_by_point_id,
    compute_labels,
    generate_synthetic_case,
    load_case,
    read_flow_csv,
    read_labels_csv,
    write_case,
    write_labels_csv,
)
from .evaluation import (
    ScenarioConfig,
    render_table_csv,
    render_table_text,
    rmse,
    run_scenario,
    scenario_table,
    write_report,
)
from .features import (
    FEATURE_NAMES,
    FeatureScaler,
    extract_features,
    read_feature_csv,
    resolve_features,
    write_feature_csv,
)
from .forest import ForestHyperparameters, ModelFormatError, load_model, permutation_importance
from .forest import predict as forest_predict
from .forest import save_model, train_forest
from .kde import build_kde, evaluate as kde_evaluate
from .realizability import ConvergenceError, RealizabilityError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
THREADS_ENV = "TURBUQ_THREADS"
DEFAULT_KDE_FEATURES = "q8,q3,q7,q2,q1"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    return code


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        if n < 1:
            raise UsageError(f"{THREADS_ENV} must be >= 1")
        return n
    return 1


def _positive(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _add_threads(p):
    p.add_argument(
        "--threads", type=_positive, default=None,
        help=f"worker threads (default: ${THREADS_ENV} or 1); results do not depend on it",
    )


def _add_hyperparameters(p):
    p.add_argument("--n-trees", type=_positive, default=30, help="number of trees (default 30)")
    p.add_argument("--max-depth", type=_positive, default=15, help="maximum tree depth (default 15)")
    p.add_argument(
        "--min-samples-split", type=int, default=10,
        help="minimum samples required to split a node (default 10)",
    )
    p.add_argument(
        "--max-features", type=_positive, default=7,
        help="candidate features drawn per split (default 7)",
    )
    p.add_argument("--seed", type=int, default=42, help="random seed (default 42)")


def _hyperparameters(args) -> ForestHyperparameters:
    try:
        return ForestHyperparameters(
            n_trees=args.n_trees,
            max_depth=args.max_depth,
            min_samples_split=args.min_samples_split,
            max_split_features=args.max_features,
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _labeled(features_path, labels_path):
    ids, X = read_feature_csv(features_path)
    lab_ids, p = read_labels_csv(labels_path)
    return ids, X, p[align_by_point_id(ids, lab_ids)]


def cmd_extract(args) -> int:
    table = read_flow_csv(args.input)
    write_feature_csv(args.output, table.point_id, extract_features(table))
    return EXIT_OK


def cmd_label(args) -> int:
    case = load_case("input", args.rans, args.hifi)
    write_labels_csv(args.output, case.records.point_id, compute_labels(case))
    return EXIT_OK


def cmd_train(args) -> int:
    hp = _hyperparameters(args)
    _, X, y = _labeled(args.features, args.labels)
    model = train_forest(X, y, hp, FEATURE_NAMES, threads=_threads(args))
    save_model(model, args.model)
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.model)
    ids, X = read_feature_csv(args.features)
    p = forest_predict(model, X, _threads(args))
    write_csv(args.output, ["point_id", "p_pred"], ([int(i), float(v)] for i, v in zip(ids, p)))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    ids, X, y = _labeled(args.features, args.labels)
    p = forest_predict(model, X, _threads(args))
    err = np.abs(p - y)
    metrics = {"rmse": rmse(p, y), "mae": float(np.mean(err)), "max_error": float(err.max()), "n": int(len(y))}
    atomic_write_text(args.output, json.dumps(metrics, indent=1) + "\n")
    if args.points:
        write_csv(
            args.points,
            ["point_id", "p_true", "p_pred", "abs_error"],
            ([int(i), float(a), float(b), float(c)] for i, a, b, c in zip(ids, y, p, err)),
        )
    return EXIT_OK


def cmd_kde(args) -> int:
    _, X_tr = read_feature_csv(args.train)
    ids, X_te = read_feature_csv(args.test)
    try:
        subset = resolve_features(args.features)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None
    if not subset:
        raise UsageError("--features must name at least one feature")
    scaler = load_model(args.model).scaler if args.model else FeatureScaler.fit(X_tr)
    kde = build_kde(X_tr, subset, scaler=scaler, feature_names=FEATURE_NAMES)
    res = kde_evaluate(kde, X_te, subset)
    write_csv(
        args.out,
        ["point_id", "f_kde", "d_kde"],
        ([int(i), float(f), float(d)] for i, f, d in zip(ids, res.f_kde, res.d_kde)),
    )
    return EXIT_OK


def cmd_importance(args) -> int:
    model = load_model(args.model)
    _, X, y = _labeled(args.features, args.labels)
    ranking = permutation_importance(model, X, y, args.repeats, args.seed, _threads(args))
    write_csv(
        args.output,
        ["rank", "feature", "importance"],
        ([r, name, float(v)] for r, (name, v) in enumerate(ranking, start=1)),
    )
    return EXIT_OK


def cmd_scenario(args) -> int:
    out_dir = Path(args.out_dir)
    reports = []
    for cfg_path in args.config:
        try:
            cfg = ScenarioConfig.from_json(cfg_path)
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise DataError(f"{cfg_path}: invalid scenario config ({exc})") from exc
        report = run_scenario(cfg, threads=_threads(args))
        write_report(report, out_dir, include_runtime=args.timing)
        reports.append(report)
    rows = scenario_table(reports)
    stem = args.table_name
    atomic_write_text(out_dir / f"{stem}.csv", render_table_csv(rows))
    atomic_write_text(out_dir / f"{stem}.txt", render_table_text(rows))
    return EXIT_OK


def cmd_synth(args) -> int:
    out_dir = Path(args.out_dir)
    kinds = list(SYNTHETIC_KINDS) if args.kind == "all" else [args.kind]
    profile = {"amplitude": args.amplitude, "target": args.target}
    written = {}
    for kind in kinds:
        case = generate_synthetic_case(kind, args.n_points, args.seed, profile)
        written[kind] = write_case(case, out_dir)
    if args.scenario_config:
        test_kind = args.test_kind
        if test_kind not in written:
            raise UsageError(f"--test-kind {test_kind!r} was not generated")
        cfg_path = Path(args.scenario_config)
        cfg = {
            "scenario": args.scenario_name,
            "seed": args.seed,
            "hyperparameters": {},
            "kde_features": DEFAULT_KDE_FEATURES.split(","),
            "cases": [
                {
                    "name": kind,
                    "rans": os.path.relpath(paths["rans"], cfg_path.parent),
                    "hifi": os.path.relpath(paths["hifi"], cfg_path.parent),
                    "role": "test" if kind == test_kind else "train",
                }
                for kind, paths in written.items()
            ],
        }
        atomic_write_text(cfg_path, json.dumps(cfg, indent=1) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="turbuq",
        description="Data-driven eigenvalue-perturbation strength for RANS uncertainty estimates.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", help="flow CSV -> 56-column feature CSV")
    p.add_argument("--input", required=True, help="RANS flow CSV")
    p.add_argument("--output", required=True, help="feature CSV to write")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("label", help="RANS + high-fidelity CSVs -> perturbation-strength labels")
    p.add_argument("--rans", required=True, help="RANS flow CSV")
    p.add_argument("--hifi", required=True, help="high-fidelity Reynolds-stress CSV")
    p.add_argument("--output", required=True, help="labels CSV to write (point_id,p_true)")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="train a random forest on features and labels")
    p.add_argument("--features", required=True, help="feature CSV")
    p.add_argument("--labels", required=True, help="labels CSV")
    p.add_argument("--model", required=True, help="model JSON to write")
    _add_hyperparameters(p)
    _add_threads(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict perturbation strength")
    p.add_argument("--model", required=True, help="model JSON")
    p.add_argument("--features", required=True, help="feature CSV")
    p.add_argument("--output", required=True, help="prediction CSV to write (point_id,p_pred)")
    _add_threads(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="RMSE of a model against labels")
    p.add_argument("--model", required=True, help="model JSON")
    p.add_argument("--features", required=True, help="feature CSV")
    p.add_argument("--labels", required=True, help="labels CSV")
    p.add_argument("--output", required=True, help="metrics JSON to write")
    p.add_argument("--points", default=None, help="optional per-point error CSV")
    _add_threads(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("kde", help="KDE extrapolation metric of test points")
    p.add_argument("--train", required=True, help="training feature CSV")
    p.add_argument("--test", required=True, help="test feature CSV")
    p.add_argument(
        "--features", default=DEFAULT_KDE_FEATURES,
        help=f"comma-separated feature names (default {DEFAULT_KDE_FEATURES})",
    )
    p.add_argument("--model", default=None, help="take the scaler from this model instead of refitting")
    p.add_argument("--out", required=True, help="CSV to write (point_id,f_kde,d_kde)")
    p.set_defaults(func=cmd_kde)

    p = sub.add_parser("importance", help="permutation feature importance")
    p.add_argument("--model", required=True, help="model JSON")
    p.add_argument("--features", required=True, help="feature CSV of the evaluation fold")
    p.add_argument("--labels", required=True, help="labels CSV")
    p.add_argument("--repeats", type=_positive, default=10, help="shuffles per feature (default 10)")
    p.add_argument("--seed", type=int, default=42, help="shuffle seed (default 42)")
    p.add_argument("--output", required=True, help="ranking CSV to write")
    _add_threads(p)
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("scenario", help="run train/test scenarios from JSON configs")
    p.add_argument("--config", required=True, action="append", help="scenario JSON (repeatable)")
    p.add_argument("--out-dir", required=True, help="directory for reports and tables")
    p.add_argument("--table-name", default="scenario_table", help="stem of the table files")
    p.add_argument("--timing", action="store_true", help="include runtime metadata in reports")
    _add_threads(p)
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("synth", help="generate synthetic flow cases with closed-form labels")
    p.add_argument("--kind", choices=list(SYNTHETIC_KINDS) + ["all"], default="all")
    p.add_argument("--n-points", type=int, default=400, help="points per case (default 400)")
    p.add_argument("--seed", type=int, default=42, help="random seed (default 42)")
    p.add_argument("--amplitude", type=float, default=0.6, help="discrepancy amplitude (default 0.6)")
    p.add_argument("--target", choices=["1C", "2C", "3C"], default="1C", help="vertex the data state leans toward")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.add_argument("--scenario-config", default=None, help="also write a scenario JSON here")
    p.add_argument("--scenario-name", default="I", help="scenario id for --scenario-config")
    p.add_argument("--test-kind", default="convdiv-like", help="evaluation case for --scenario-config")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except (DataError, ModelFormatError, RealizabilityError, FileNotFoundError) as exc:
        return _fail(EXIT_DATA, "data", str(exc))
    except (ConvergenceError, ArithmeticError) as exc:
        return _fail(EXIT_NUMERIC, "numeric", str(exc))
    except ValueError as exc:
        return _fail(EXIT_DATA, "data", str(exc))


if __name__ == "__main__":
    raise SystemExit(main())
