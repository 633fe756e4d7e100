"""Random-forest regression built from bagged CART trees.

Trees split on the candidate (feature, midpoint threshold) pair with the
lowest total children sum of squared errors. Every tree draws from its own
RNG stream derived from ``(seed, tree index)``, so training is reproducible
bit-for-bit and independent of how trees are scheduled on threads.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ._io import atomic_write_text
from .features import FEATURE_NAMES, FeatureScaler

MODEL_FORMAT_VERSION = 1
SSE_RTOL = 1e-12


class ModelFormatError(ValueError):
    pass


@dataclass
class ForestHyperparameters:
    n_trees: int = 30
    max_depth: int = 15
    min_samples_split: int = 10
    max_split_features: int = 7
    seed: int = 42
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.max_split_features < 1:
            raise ValueError("max_split_features must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(tree_index,)))


def best_split(X, y, features):
    """Best ``(feature, threshold, sse)`` over ``features``, or ``None``.

    The split minimizes the children's total SSE. Candidates within a
    relative ``SSE_RTOL`` of the minimum count as ties and go to the lower
    feature index, then the lower threshold. ``None`` means no split lowers
    the parent SSE by more than that tolerance.
    """
    n = len(y)
    total = float(np.sum(y))
    total_sq = float(np.sum(y * y))
    parent_sse = max(total_sq - total * total / n, 0.0)
    tol = SSE_RTOL * max(total_sq, 1.0)
    per_feature = []
    for f in sorted(set(int(f) for f in features)):
        xs = X[:, f]
        order = np.argsort(xs, kind="stable")
        xs_sorted = xs[order]
        ys = y[order]
        # cut after sorted position i wherever the value changes
        cuts = np.nonzero(xs_sorted[1:] > xs_sorted[:-1])[0]
        if len(cuts) == 0:
            continue
        csum = np.cumsum(ys)
        csum_sq = np.cumsum(ys * ys)
        n_left = cuts + 1.0
        n_right = n - n_left
        s_left = csum[cuts]
        s_right = total - s_left
        sq_left = csum_sq[cuts]
        sse = (sq_left - s_left**2 / n_left) + ((total_sq - sq_left) - s_right**2 / n_right)
        per_feature.append((f, xs_sorted, cuts, np.maximum(sse, 0.0)))
    if not per_feature:
        return None
    best_sse = min(float(c[3].min()) for c in per_feature)
    if best_sse >= parent_sse - tol:
        return None
    for f, xs_sorted, cuts, sse in per_feature:
        hits = np.nonzero(sse <= best_sse + tol)[0]
        if len(hits):
            i = int(hits[0])
            lo, hi = xs_sorted[cuts[i]], xs_sorted[cuts[i] + 1]
            thr = 0.5 * (lo + hi)
            if not lo <= thr < hi:
                thr = lo
            return f, float(thr), float(sse[i])


@dataclass
class RegressionTree:
    """Flat-array binary tree. ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    @classmethod
    def grow(cls, X, y, max_depth, min_samples_split, max_split_features, rng=None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        n_features = X.shape[1]
        m = min(max_split_features, n_features)
        nodes: list[list] = []

        # nodes are numbered depth-first, left child first
        def build(idx, depth):
            node = len(nodes)
            nodes.append([-1, 0.0, -1, -1, math.fsum(y[idx]) / len(idx), len(idx)])
            if len(idx) < min_samples_split or depth >= max_depth:
                return node
            if m < n_features:
                cand = rng.choice(n_features, size=m, replace=False)
            else:
                cand = range(n_features)
            split = best_split(X[idx], y[idx], cand)
            if split is None:
                return node
            f, thr, _ = split
            go_left = X[idx, f] <= thr
            nodes[node][0] = f
            nodes[node][1] = thr
            nodes[node][2] = build(idx[go_left], depth + 1)
            nodes[node][3] = build(idx[~go_left], depth + 1)
            return node

        build(np.arange(len(y)), 0)
        cols = list(zip(*nodes))
        return cls(
            feature=np.array(cols[0], dtype=np.int64),
            threshold=np.array(cols[1], dtype=float),
            left=np.array(cols[2], dtype=np.int64),
            right=np.array(cols[3], dtype=np.int64),
            value=np.array(cols[4], dtype=float),
            n_samples=np.array(cols[5], dtype=np.int64),
        )

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by each row of ``X``."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            active = f >= 0
            if not active.any():
                return node
            r = rows[active]
            nd = node[active]
            go_left = X[r, f[active]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self, i: int = 0) -> dict:
        # nested node objects
        if self.feature[i] < 0:
            return {"value": float(self.value[i]), "n_samples": int(self.n_samples[i])}
        return {
            "feature": int(self.feature[i]),
            "threshold": float(self.threshold[i]),
            "n_samples": int(self.n_samples[i]),
            "value": float(self.value[i]),
            "left": self.to_dict(int(self.left[i])),
            "right": self.to_dict(int(self.right[i])),
        }

    @classmethod
    def from_dict(cls, root: dict) -> "RegressionTree":
        nodes: list[list] = []

        def walk(d):
            node = len(nodes)
            nodes.append([-1, 0.0, -1, -1, float(d["value"]), int(d["n_samples"])])
            if "feature" in d:
                nodes[node][0] = int(d["feature"])
                nodes[node][1] = float(d["threshold"])
                nodes[node][2] = walk(d["left"])
                nodes[node][3] = walk(d["right"])
            return node

        walk(root)
        cols = list(zip(*nodes))
        return cls(
            feature=np.array(cols[0], dtype=np.int64),
            threshold=np.array(cols[1], dtype=float),
            left=np.array(cols[2], dtype=np.int64),
            right=np.array(cols[3], dtype=np.int64),
            value=np.array(cols[4], dtype=float),
            n_samples=np.array(cols[5], dtype=np.int64),
        )


@dataclass
class ForestModel:
    hyperparameters: ForestHyperparameters
    trees: list[RegressionTree]
    feature_names: list[str]
    scaler: FeatureScaler
    metadata: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def predict(self, X) -> np.ndarray:
        return predict(self, X)

    def to_dict(self) -> dict:
        return {
            "version": MODEL_FORMAT_VERSION,
            "hyperparameters": asdict(self.hyperparameters),
            "feature_names": list(self.feature_names),
            "scaler": self.scaler.to_dict(),
            "metadata": self.metadata,
            "trees": [t.to_dict() for t in self.trees],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"), allow_nan=False)

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        if not isinstance(d, dict):
            raise ModelFormatError("model file must hold a JSON object")
        version = d.get("version")
        if version != MODEL_FORMAT_VERSION:
            raise ModelFormatError(
                f"unsupported model format version {version!r} (expected {MODEL_FORMAT_VERSION})"
            )
        try:
            hp = ForestHyperparameters(**d["hyperparameters"])
            model = cls(
                hyperparameters=hp,
                trees=[RegressionTree.from_dict(t) for t in d["trees"]],
                feature_names=[str(n) for n in d["feature_names"]],
                scaler=FeatureScaler.from_dict(d["scaler"]),
                metadata=dict(d.get("metadata", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"malformed model file: {exc!r}") from exc
        if len(model.trees) != hp.n_trees:
            raise ModelFormatError(f"model declares {hp.n_trees} trees but holds {len(model.trees)}")
        if len(model.scaler.mean) != model.n_features:
            raise ModelFormatError("scaler length does not match feature_names")
        return model

    @classmethod
    def from_json(cls, text: str) -> "ForestModel":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"model file is not valid JSON: {exc}") from exc
        return cls.from_dict(d)


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("training table is empty")
    if len(X) != len(y):
        raise ValueError(f"{len(X)} feature rows but {len(y)} targets")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets must be finite")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    return X, y


def _grow_one(Xs, y, hp: ForestHyperparameters, tree_index: int) -> RegressionTree:
    rng = tree_rng(hp.seed, tree_index)
    if hp.bootstrap:
        idx = rng.integers(0, len(y), size=len(y))
        Xb, yb = Xs[idx], y[idx]
    else:
        Xb, yb = Xs, y
    return RegressionTree.grow(
        Xb, yb, hp.max_depth, hp.min_samples_split, hp.max_split_features, rng
    )


def train_forest(
    X,
    y,
    hp: ForestHyperparameters | None = None,
    feature_names=None,
    scaler: FeatureScaler | None = None,
    threads: int = 1,
) -> ForestModel:
    """Fit a forest on raw features ``X``.

    Features are standardized with ``scaler`` (fitted on ``X`` when not
    given); the scaler is stored with the model and reapplied by
    :func:`predict`.
    """
    hp = hp or ForestHyperparameters()
    X, y = _check_xy(X, y)
    if len(y) < 2:
        raise ValueError("need at least two training points")
    if feature_names is None:
        feature_names = FEATURE_NAMES if X.shape[1] == len(FEATURE_NAMES) else [
            f"f{i}" for i in range(X.shape[1])
        ]
    if len(feature_names) != X.shape[1]:
        raise ValueError("feature_names length does not match the feature dimension")
    scaler = scaler or FeatureScaler.fit(X)
    Xs = scaler.transform(X)

    if threads > 1 and hp.n_trees > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = list(pool.map(lambda i: _grow_one(Xs, y, hp, i), range(hp.n_trees)))
    else:
        trees = [_grow_one(Xs, y, hp, i) for i in range(hp.n_trees)]
    return ForestModel(hp, trees, list(feature_names), scaler, {"n_train": int(len(y))})


def predict(model: ForestModel, X, threads: int = 1) -> np.ndarray:
    """Ensemble mean over trees (fixed order), clamped to [0, 1]."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.n_features:
        raise ValueError(f"model expects {model.n_features} features, got {X.shape[1]}")
    Xs = model.scaler.transform(X)
    if threads > 1 and len(model.trees) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_tree = list(pool.map(lambda t: t.predict(Xs), model.trees))
    else:
        per_tree = [t.predict(Xs) for t in model.trees]
    acc = np.zeros(len(X))
    for p in per_tree:
        acc += p
    return np.clip(acc / len(model.trees), 0.0, 1.0)


def _rmse(a, b) -> float:
    return math.sqrt(float(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def permutation_importance(model: ForestModel, X, y, repeats: int = 10, seed: int = 42, threads: int = 1):
    """Mean RMSE increase when each feature column is shuffled.

    Returns ``[(feature_name, mean_delta_rmse), ...]`` sorted descending, ties
    broken by feature index.
    """
    X, y = _check_xy(X, y)
    if len(y) < 2:
        raise ValueError("need at least two points")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    base = _rmse(predict(model, X), y)

    # each feature owns its shuffle stream, so the result ignores scheduling
    def score(j):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(j,)))
        deltas = []
        Xp = X.copy()
        for _ in range(repeats):
            Xp[:, j] = X[rng.permutation(len(y)), j]
            deltas.append(_rmse(predict(model, Xp), y) - base)
        return math.fsum(deltas) / repeats

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = list(pool.map(score, range(X.shape[1])))
    else:
        scores = [score(j) for j in range(X.shape[1])]
    order = sorted(range(len(scores)), key=lambda j: (-scores[j], j))
    return [(model.feature_names[j], scores[j]) for j in order]


def save_model(model: ForestModel, path) -> None:
    atomic_write_text(path, model.to_json())


def load_model(path) -> ForestModel:
    with open(path, encoding="utf-8") as fh:
        return ForestModel.from_json(fh.read())
