"""Scenario runs, error metrics and leave-one-case-out hyperparameter search."""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._io import DataError, atomic_write_text, write_csv
from .dataset import LabeledDataset, align_by_point_id, labeled_dataset, load_case, read_labels_csv
from .features import FEATURE_NAMES, FeatureScaler, resolve_features
from .forest import ForestHyperparameters, permutation_importance, predict, train_forest
from .kde import build_kde, evaluate as kde_evaluate

ROLES = ("train", "test", "both")
DEFAULT_KDE_TOP = 5
POINT_COLUMNS = ["point_id", "x", "y", "p_true", "p_pred", "abs_error", "d_kde"]


class ConstantInputError(ValueError):
    """Correlation is undefined for a constant series."""


class ScenarioError(RuntimeError):
    pass


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("rmse of empty arrays")
    return math.sqrt(float(np.mean((pred - truth) ** 2)))


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size < 2:
        raise ValueError("pearson needs at least two points")
    da = a - a.mean()
    db = b - b.mean()
    sa = math.sqrt(float(np.dot(da, da)))
    sb = math.sqrt(float(np.dot(db, db)))
    if sa == 0.0 or sb == 0.0:
        raise ConstantInputError("correlation undefined for constant input")
    return max(-1.0, min(1.0, float(np.dot(da, db)) / (sa * sb)))


@dataclass
class CaseSpec:
    name: str
    rans: str
    hifi: str
    role: str
    labels: str | None = None
    reynolds_tag: str = ""

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"case {self.name!r}: role must be one of {ROLES}, got {self.role!r}")


@dataclass
class ScenarioConfig:
    scenario: str
    cases: list[CaseSpec]
    hyperparameters: ForestHyperparameters = field(default_factory=ForestHyperparameters)
    kde_features: list[str] | None = None
    seed: int = 42
    importance_repeats: int = 10
    importance_fold: str = "test"
    base_dir: str = "."

    def __post_init__(self):
        if not any(c.role in ("train", "both") for c in self.cases):
            raise ValueError(f"scenario {self.scenario!r} has no training case")
        if not any(c.role in ("test", "both") for c in self.cases):
            raise ValueError(f"scenario {self.scenario!r} has no evaluation case")
        if self.importance_fold not in ("train", "test"):
            raise ValueError("importance_fold must be 'train' or 'test'")
        names = [c.name for c in self.cases]
        if len(set(names)) != len(names):
            raise ValueError(f"scenario {self.scenario!r} lists a case twice")

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "ScenarioConfig":
        hp = dict(d.get("hyperparameters", {}))
        seed = int(d.get("seed", 42))
        hp.setdefault("seed", seed)
        return cls(
            scenario=str(d["scenario"]),
            cases=[CaseSpec(**c) for c in d["cases"]],
            hyperparameters=ForestHyperparameters(**hp),
            kde_features=list(d["kde_features"]) if d.get("kde_features") else None,
            seed=seed,
            importance_repeats=int(d.get("importance_repeats", 10)),
            importance_fold=str(d.get("importance_fold", "test")),
            base_dir=str(base_dir),
        )

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), base_dir=path.parent)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "hyperparameters": asdict(self.hyperparameters),
            "kde_features": self.kde_features,
            "importance_repeats": self.importance_repeats,
            "importance_fold": self.importance_fold,
            "cases": [asdict(c) for c in self.cases],
        }

    @property
    def roles(self) -> dict[str, str]:
        return {c.name: c.role for c in self.cases}


@dataclass
class EvaluationReport:
    scenario: str
    rmse: float
    baseline_rmse: float
    pearson_r: float | None
    roles: dict[str, str]
    points: dict[str, list]  # column name -> values, POINT_COLUMNS plus "case"
    importance: list[tuple[str, float]]
    kde_features: list[str]
    hyperparameters: dict
    runtime: dict = field(default_factory=dict)

    def to_dict(self, include_runtime: bool = True) -> dict:
        d = {
            "scenario": self.scenario,
            "rmse": self.rmse,
            "baseline_rmse": self.baseline_rmse,
            "pearson_r": self.pearson_r,
            "roles": self.roles,
            "hyperparameters": self.hyperparameters,
            "kde_features": self.kde_features,
            "importance": [[n, v] for n, v in self.importance],
            "points": self.points,
        }
        if include_runtime:
            d["runtime"] = self.runtime
        return d

    def to_json(self, include_runtime: bool = True) -> str:
        return json.dumps(self.to_dict(include_runtime), indent=1, allow_nan=False)

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        return cls(
            scenario=d["scenario"],
            rmse=d["rmse"],
            baseline_rmse=d["baseline_rmse"],
            pearson_r=d["pearson_r"],
            roles=dict(d["roles"]),
            points={k: list(v) for k, v in d["points"].items()},
            importance=[(n, v) for n, v in d["importance"]],
            kde_features=list(d["kde_features"]),
            hyperparameters=dict(d["hyperparameters"]),
            runtime=dict(d.get("runtime", {})),
        )

    @classmethod
    def from_json(cls, text: str) -> "EvaluationReport":
        return cls.from_dict(json.loads(text))

    def point_rows(self, case: str | None = None):
        cols = [self.points[c] for c in POINT_COLUMNS]
        for i, row in enumerate(zip(*cols)):
            if case is None or self.points["case"][i] == case:
                yield list(row)


def _resolve(base_dir, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else Path(base_dir) / p


def load_labeled_case(spec: CaseSpec, base_dir=".") -> LabeledDataset:
    case = load_case(
        spec.name, _resolve(base_dir, spec.rans), _resolve(base_dir, spec.hifi), spec.reynolds_tag
    )
    return labeled_dataset(case, role=spec.role)


def _stack(datasets):
    return (
        np.vstack([d.features for d in datasets]),
        np.concatenate([d.targets for d in datasets]),
    )


def run_datasets(
    scenario: str,
    datasets: list[LabeledDataset],
    hp: ForestHyperparameters,
    kde_features=None,
    importance_repeats: int = 10,
    importance_fold: str = "test",
    seed: int = 42,
    threads: int = 1,
) -> EvaluationReport:
    """Core of :func:`run_scenario` on already-loaded labeled datasets."""
    t0 = time.perf_counter()
    train = [d for d in datasets if d.role in ("train", "both")]
    test = [d for d in datasets if d.role in ("test", "both")]
    X_tr, y_tr = _stack(train)
    X_te, y_te = _stack(test)

    scaler = FeatureScaler.fit(X_tr)
    model = train_forest(X_tr, y_tr, hp, FEATURE_NAMES, scaler=scaler, threads=threads)
    p_pred = predict(model, X_te, threads)
    err = np.abs(p_pred - y_te)
    score = rmse(p_pred, y_te)
    baseline = rmse(np.full_like(y_te, float(np.mean(y_tr))), y_te)

    X_imp, y_imp = (X_te, y_te) if importance_fold == "test" else (X_tr, y_tr)
    importance = permutation_importance(model, X_imp, y_imp, importance_repeats, seed, threads)

    if kde_features:
        kde_names = list(kde_features)
    else:
        kde_names = [n for n, _ in importance[:DEFAULT_KDE_TOP]]
    subset = resolve_features(kde_names)
    kde = build_kde(X_tr, subset, scaler=scaler, feature_names=FEATURE_NAMES)
    d_kde = kde_evaluate(kde, X_te, subset).d_kde
    try:
        r = pearson(d_kde, err)
    except ConstantInputError:
        r = None

    points = {
        "case": [d.case_name for d in test for _ in range(len(d))],
        "point_id": [int(i) for d in test for i in d.point_id],
        "x": [float(v) for d in test for v in d.position[:, 0]],
        "y": [float(v) for d in test for v in d.position[:, 1]],
        "p_true": [float(v) for v in y_te],
        "p_pred": [float(v) for v in p_pred],
        "abs_error": [float(v) for v in err],
        "d_kde": [float(v) for v in d_kde],
    }
    return EvaluationReport(
        scenario=scenario,
        rmse=score,
        baseline_rmse=baseline,
        pearson_r=r,
        roles={d.case_name: d.role for d in datasets},
        points=points,
        importance=importance,
        kde_features=kde_names,
        hyperparameters=asdict(hp),
        runtime={
            "seconds": time.perf_counter() - t0,
            "version": __version__,
            "n_train": int(len(y_tr)),
            "n_test": int(len(y_te)),
        },
    )


def run_scenario(cfg: ScenarioConfig, threads: int = 1) -> EvaluationReport:
    """Load cases, train on train/both roles, evaluate on test/both roles."""
    datasets = []
    for spec in cfg.cases:
        try:
            ds = load_labeled_case(spec, cfg.base_dir)
            if spec.labels:
                ids, p = read_labels_csv(_resolve(cfg.base_dir, spec.labels))
                ds.targets = p[align_by_point_id(ds.point_id, ids)]
        except DataError as exc:
            raise DataError(f"scenario {cfg.scenario}, case {spec.name}: {exc}") from exc
        datasets.append(ds)
    return run_datasets(
        cfg.scenario,
        datasets,
        cfg.hyperparameters,
        cfg.kde_features,
        cfg.importance_repeats,
        cfg.importance_fold,
        cfg.seed,
        threads,
    )


def write_report(report: EvaluationReport, out_dir, include_runtime: bool = False) -> dict:
    """Report JSON plus one plot-ready point CSV per evaluated case."""
    out_dir = Path(out_dir)
    paths = {"report": out_dir / f"{report.scenario}_report.json"}
    atomic_write_text(paths["report"], report.to_json(include_runtime))
    for case in dict.fromkeys(report.points["case"]):
        p = out_dir / f"{report.scenario}_{case}_points.csv"
        write_csv(p, POINT_COLUMNS, report.point_rows(case))
        paths[f"points:{case}"] = p
    return {k: str(v) for k, v in paths.items()}


_CELL = {"train": "x", "test": "(o)", "both": "(x)"}


def scenario_table(reports, case_order=None) -> list[list[str]]:
    """Case-by-scenario membership grid with a closing RMSE row.

    ``x`` marks training data, ``(o)`` an evaluation case outside the
    training set and ``(x)`` an evaluation case that is also trained on.
    Rows follow ``case_order`` when given, otherwise first appearance.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("scenario_table needs at least one report")
    cases = list(dict.fromkeys(c for r in reports for c in r.roles))
    if case_order is not None:
        order = list(case_order)
        cases = [c for c in order if c in cases] + [c for c in cases if c not in order]
    rows = [["case"] + [r.scenario for r in reports]]
    for c in cases:
        rows.append([c] + [_CELL.get(r.roles.get(c, ""), "") for r in reports])
    rows.append(["RMSE"] + ["%.3f" % r.rmse for r in reports])
    return rows


def render_table_text(rows) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for j, row in enumerate(rows):
        cells = [row[0].ljust(widths[0])] + [c.center(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
        if j == 0 or j == len(rows) - 2:
            lines.append("-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def render_table_csv(rows) -> str:
    return "".join(",".join(r) + "\n" for r in rows)


@dataclass
class GridResult:
    hyperparameters: ForestHyperparameters
    fold_rmse: list[float]

    @property
    def mean_rmse(self) -> float:
        return math.fsum(self.fold_rmse) / len(self.fold_rmse)


def loco_grid_search(cases: list[LabeledDataset], grid: dict, seed: int = 42, threads: int = 1):
    """Leave-one-case-out search over a hyperparameter grid.

    ``grid`` maps :class:`ForestHyperparameters` field names to candidate
    lists. Returns ``(best, results)``; ties go to fewer trees, then the
    shallower depth.
    """
    if len(cases) < 2:
        raise ValueError("leave-one-case-out needs at least two cases")
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("grid must be non-empty")
    keys = sorted(grid)
    results = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        params = dict(zip(keys, combo))
        params.setdefault("seed", seed)
        hp = ForestHyperparameters(**params)
        folds = []
        for i, held in enumerate(cases):
            X, y = _stack([c for j, c in enumerate(cases) if j != i])
            model = train_forest(X, y, hp, threads=threads)
            folds.append(rmse(predict(model, held.features, threads), held.targets))
        results.append(GridResult(hp, folds))
    best = min(
        results,
        key=lambda r: (r.mean_rmse, r.hyperparameters.n_trees, r.hyperparameters.max_depth),
    )
    return best.hyperparameters, results
