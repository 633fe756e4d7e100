"""Kernel-density extrapolation metric.

The training feature cloud is summarized by a Gaussian product-kernel
density with Scott's bandwidth. A test point's density is compared with
that of a uniform distribution over the training bounding box::

    d_kde = 1 - f / (f + 1/A)

so ``d_kde`` is near 0 inside densely sampled regions and near 1 far away
from the training data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureScaler

RANGE_FLOOR = 1e-12
SUBSAMPLE_CAP = 200_000
_CHUNK_ELEMS = 2_000_000


@dataclass
class KdeTrainingSet:
    points: np.ndarray  # (n, d) in kernel space
    bandwidth: float
    box_volume: float
    feature_subset: list = field(default_factory=list)
    scaler: FeatureScaler | None = None  # maps raw subset columns to kernel space

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def prepare(self, x) -> np.ndarray:
        """Bring raw subset columns into kernel space."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.d:
            raise ValueError(f"expected {self.d} features, got {x.shape[1]}")
        return self.scaler.transform(x) if self.scaler is not None else x


@dataclass
class KdeResult:
    f_kde: np.ndarray
    d_kde: np.ndarray


def scott_bandwidth(n: int, d: int) -> float:
    """Scott's factor for unit-variance data."""
    return n ** (-1.0 / (d + 4))


def build_kde(
    training_features,
    subset=None,
    scaler: FeatureScaler | None = None,
    feature_names=None,
    max_points: int | None = None,
    seed: int = 0,
) -> KdeTrainingSet:
    """Build the KDE reference set from training features.

    ``subset`` selects columns of ``training_features``; ``scaler`` (a
    full-width scaler fitted on the training data) standardizes them. Without
    a scaler the columns are used as given. ``max_points`` enables seeded
    uniform subsampling of very large training sets.
    """
    x = np.asarray(training_features, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if subset is None:
        subset = list(range(x.shape[1]))
    subset = list(subset)
    if not subset:
        raise ValueError("feature subset is empty")
    if x.shape[0] < 2:
        raise ValueError("need at least two training points")
    sub_scaler = scaler.subset(subset) if scaler is not None else None
    m = x[:, subset]
    if sub_scaler is not None:
        m = sub_scaler.transform(m)
    if max_points is not None and len(m) > max_points:
        rng = np.random.default_rng(seed)
        m = m[np.sort(rng.choice(len(m), size=max_points, replace=False))]
    names = [feature_names[i] for i in subset] if feature_names is not None else subset
    return _make_set(m, names, sub_scaler)


def _make_set(m, names=None, scaler=None) -> KdeTrainingSet:
    m = np.ascontiguousarray(m, dtype=float)
    n, d = m.shape
    ranges = m.max(axis=0) - m.min(axis=0)
    ranges = np.where(ranges == 0.0, RANGE_FLOOR, ranges)
    return KdeTrainingSet(
        points=m,
        bandwidth=scott_bandwidth(n, d),
        box_volume=float(np.prod(ranges)),
        feature_subset=list(names) if names is not None else list(range(d)),
        scaler=scaler,
    )


def kde_density(kde: KdeTrainingSet, m_tilde, prepared: bool = True) -> np.ndarray | float:
    """Gaussian product-kernel density at each test point.

    ``m_tilde`` is in kernel space unless ``prepared`` is False. The sum over
    training points is exactly rounded (``math.fsum``), which makes the result
    independent of the order of the training points.
    """
    x = np.asarray(m_tilde, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x) if prepared else kde.prepare(x)
    if x.shape[1] != kde.d:
        raise ValueError(f"expected {kde.d} features, got {x.shape[1]}")
    sigma = kde.bandwidth
    norm = 1.0 / (kde.n * sigma**kde.d * (2.0 * math.pi) ** (kde.d / 2.0))
    pts = kde.points / sigma
    xs = x / sigma
    out = np.empty(len(x))
    chunk = max(1, _CHUNK_ELEMS // max(1, kde.n * kde.d))
    for start in range(0, len(x), chunk):
        block = xs[start : start + chunk]
        diff = block[:, None, :] - pts[None, :, :]
        kern = np.exp(-0.5 * np.einsum("mnd,mnd->mn", diff, diff))
        for i, row in enumerate(kern):
            out[start + i] = math.fsum(row)
    out *= norm
    return float(out[0]) if single else out


def kde_distance_from_density(f, box_volume: float):
    f = np.asarray(f, dtype=float)
    inv_a = 1.0 / box_volume
    d = 1.0 - f / (f + inv_a)
    d = np.clip(d, 0.0, 1.0)
    return float(d) if d.ndim == 0 else d


def kde_distance(kde: KdeTrainingSet, m_tilde, prepared: bool = True):
    return kde_distance_from_density(kde_density(kde, m_tilde, prepared), kde.box_volume)


def evaluate(kde: KdeTrainingSet, test_features, subset=None) -> KdeResult:
    """Density and distance for raw test features (full-width if ``subset`` given)."""
    x = np.asarray(test_features, dtype=float)
    if subset is not None:
        x = x[:, list(subset)]
    f = np.atleast_1d(kde_density(kde, kde.prepare(x)))
    return KdeResult(f, np.atleast_1d(kde_distance_from_density(f, kde.box_volume)))
