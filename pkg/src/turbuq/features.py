"""Input features for the perturbation-strength regressor.

Each mesh point yields 56 numbers: 47 traces from the integrity basis of the
normalized strain rate, rotation rate, pressure gradient and TKE gradient,
followed by the nine physical features q1..q9.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from ._io import DataError, check_unique_ids, parse_columns, read_csv, write_csv

NORM_EPS = 1e-300
CONSTANT_STD = 1e-12
TENSOR_TOL = 1e-10

N_INVARIANTS = 47
N_PHYSICAL = 9
N_FEATURES = N_INVARIANTS + N_PHYSICAL
INVARIANT_NAMES = [f"inv_{i}" for i in range(1, N_INVARIANTS + 1)]
PHYSICAL_NAMES = [f"q{i}" for i in range(1, N_PHYSICAL + 1)]
FEATURE_NAMES = INVARIANT_NAMES + PHYSICAL_NAMES


def _invariant_terms() -> list[tuple[str, ...]]:
    """Canonical ordering of the 47 trace products.

    Each entry is a sequence of factor names drawn from ``S, S2, W1, W2, W3,
    W1s, W2s, W3s`` (``Wis`` is ``Wi @ Wi``, ``S2`` is ``S @ S``).
    """
    terms: list[tuple[str, ...]] = [("S2",), ("S2", "S")]
    w = ("W1", "W2", "W3")
    terms += [(f"{wi}s",) for wi in w]
    for wi in w:
        terms += [(f"{wi}s", "S"), (f"{wi}s", "S2"), (f"{wi}s", "S", wi, "S2")]
    pairs = [(0, 1), (0, 2), (1, 2)]
    terms += [(w[i], w[j]) for i, j in pairs]
    for i, j in pairs:
        wi, wj = w[i], w[j]
        terms += [
            (wi, wj, "S"),
            (wi, wj, "S2"),
            (f"{wi}s", wj, "S"),
            (f"{wi}s", wj, "S2"),
            (f"{wj}s", wi, "S"),
            (f"{wj}s", wi, "S2"),
            (f"{wi}s", "S", wj, "S2"),
            (f"{wj}s", "S", wi, "S2"),
        ]
    terms += [
        ("W1", "W2", "W3"),
        ("W1", "W2", "W3", "S"),
        ("W1", "W3", "W2", "S"),
        ("W1", "W2", "W3", "S2"),
        ("W1", "W3", "W2", "S2"),
        ("W1", "W2", "S", "W3", "S2"),
    ]
    return terms


INVARIANT_TERMS = _invariant_terms()
assert len(INVARIANT_TERMS) == N_INVARIANTS


@dataclass
class FlowRecord:
    """RANS state at one mesh point. ``grad_u[i, j]`` is dU_i/dx_j."""

    point_id: int
    position: np.ndarray
    rho: float
    velocity: np.ndarray
    grad_u: np.ndarray
    p: float
    grad_p: np.ndarray
    k: float
    grad_k: np.ndarray
    omega: float
    mu: float
    mu_t: float
    d_wall: float
    mach: float
    tau_model: np.ndarray

    @property
    def nu(self) -> float:
        return self.mu / self.rho


@dataclass
class FlowTable:
    """Column-oriented table of :class:`FlowRecord` rows."""

    point_id: np.ndarray  # (n,) int
    position: np.ndarray  # (n, 3)
    rho: np.ndarray
    velocity: np.ndarray  # (n, 3)
    grad_u: np.ndarray  # (n, 3, 3)
    p: np.ndarray
    grad_p: np.ndarray  # (n, 3)
    k: np.ndarray
    grad_k: np.ndarray  # (n, 3)
    omega: np.ndarray
    mu: np.ndarray
    mu_t: np.ndarray
    d_wall: np.ndarray
    mach: np.ndarray
    tau_model: np.ndarray = field(repr=False)  # (n, 3, 3)

    def __post_init__(self):
        n = len(self.point_id)
        for f in fields(self):
            arr = getattr(self, f.name)
            dtype = np.int64 if f.name == "point_id" else float
            arr = np.asarray(arr, dtype=dtype)
            if len(arr) != n:
                raise ValueError(f"column {f.name!r} has {len(arr)} rows, expected {n}")
            setattr(self, f.name, arr)

    def __len__(self) -> int:
        return len(self.point_id)

    @property
    def nu(self) -> np.ndarray:
        return self.mu / self.rho

    def record(self, i: int) -> FlowRecord:
        return FlowRecord(**{f.name: getattr(self, f.name)[i] for f in fields(self)})

    def records(self):
        for i in range(len(self)):
            yield self.record(i)

    @classmethod
    def from_records(cls, records) -> "FlowTable":
        records = list(records)
        return cls(
            **{f.name: np.array([getattr(r, f.name) for r in records]) for f in fields(cls)}
        )

    def take(self, idx) -> "FlowTable":
        return FlowTable(**{f.name: getattr(self, f.name)[idx] for f in fields(self)})

    def equals(self, other: "FlowTable") -> bool:
        return all(np.array_equal(getattr(self, f.name), getattr(other, f.name)) for f in fields(self))


def _as_table(data) -> FlowTable:
    if isinstance(data, FlowTable):
        return data
    if isinstance(data, FlowRecord):
        return FlowTable.from_records([data])
    return FlowTable.from_records(data)


def normalize_element(alpha, beta):
    """Bounded normalization ``alpha / (|alpha| + |beta|)``, element-wise.

    Returns 0 where the denominator vanishes.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    denom = np.abs(alpha) + np.abs(beta)
    small = denom < NORM_EPS
    out = alpha / np.where(small, 1.0, denom)
    out = np.where(small, 0.0, out)
    return out if out.ndim else float(out)


def antisymmetric_from_vector(v) -> np.ndarray:
    """Dual map ``A_ij = -eps_ijk v_k`` for ``(..., 3)`` input."""
    v = np.asarray(v, dtype=float)
    a = np.zeros(v.shape[:-1] + (3, 3))
    a[..., 0, 1] = -v[..., 2]
    a[..., 1, 0] = v[..., 2]
    a[..., 0, 2] = v[..., 1]
    a[..., 2, 0] = -v[..., 1]
    a[..., 1, 2] = -v[..., 0]
    a[..., 2, 1] = v[..., 0]
    return a


def _fro(m) -> np.ndarray:
    return np.sqrt(np.sum(m * m, axis=(-2, -1)))


def strain_and_rotation(grad_u) -> tuple[np.ndarray, np.ndarray]:
    g = np.asarray(grad_u, dtype=float)
    gt = np.swapaxes(g, -1, -2)
    return 0.5 * (g + gt), 0.5 * (g - gt)


def build_normalized_tensors(data):
    """Normalized ``(S_hat, Omega_hat, Ap_hat, Ak_hat)`` for a record or table.

    Returns ``(3, 3)`` arrays for a single :class:`FlowRecord`, otherwise
    ``(n, 3, 3)`` stacks.
    """
    single = isinstance(data, FlowRecord)
    t = _as_table(data)
    s, w = strain_and_rotation(t.grad_u)
    s_hat = normalize_element(s, t.omega[:, None, None])
    w_hat = normalize_element(w, _fro(w)[:, None, None])

    convective = np.einsum("nij,nj->ni", t.grad_u, t.velocity)
    beta_p = t.rho * np.linalg.norm(convective, axis=1)
    gp_hat = normalize_element(t.grad_p, beta_p[:, None])

    beta_k = t.omega * np.sqrt(np.maximum(t.k, 0.0))
    gk_hat = normalize_element(t.grad_k, beta_k[:, None])

    out = (
        np.asarray(s_hat),
        np.asarray(w_hat),
        antisymmetric_from_vector(gp_hat),
        antisymmetric_from_vector(gk_hat),
    )
    if single:
        return tuple(o[0] for o in out)
    return out


def integrity_invariants(s, w1, w2, w3) -> np.ndarray:
    """Traces of the 47 integrity-basis products, in :data:`INVARIANT_TERMS` order.

    Accepts single ``(3, 3)`` tensors or ``(n, 3, 3)`` stacks.
    """
    s, w1, w2, w3 = (np.asarray(x, dtype=float) for x in (s, w1, w2, w3))
    single = s.ndim == 2
    if single:
        s, w1, w2, w3 = (x[None] for x in (s, w1, w2, w3))
    if np.max(np.abs(s - np.swapaxes(s, -1, -2)), initial=0.0) > TENSOR_TOL:
        raise ValueError("S must be symmetric")
    for name, wi in (("W1", w1), ("W2", w2), ("W3", w3)):
        if np.max(np.abs(wi + np.swapaxes(wi, -1, -2)), initial=0.0) > TENSOR_TOL:
            raise ValueError(f"{name} must be antisymmetric")

    factors = {"S": s, "S2": s @ s, "W1": w1, "W2": w2, "W3": w3}
    for name in ("W1", "W2", "W3"):
        factors[f"{name}s"] = factors[name] @ factors[name]

    out = np.empty((s.shape[0], N_INVARIANTS))
    for col, term in enumerate(INVARIANT_TERMS):
        prod = factors[term[0]]
        for name in term[1:]:
            prod = prod @ factors[name]
        out[:, col] = np.trace(prod, axis1=-2, axis2=-1)
    return out[0] if single else out


def physical_features(data) -> np.ndarray:
    """The nine physical features q1..q9 for a record (``(9,)``) or table (``(n, 9)``)."""
    single = isinstance(data, FlowRecord)
    t = _as_table(data)
    s, w = strain_and_rotation(t.grad_u)
    s_norm2 = np.sum(s * s, axis=(1, 2))
    w_norm2 = np.sum(w * w, axis=(1, 2))
    uu = np.sum(t.velocity**2, axis=1)
    k = np.maximum(t.k, 0.0)

    q = np.empty((len(t), N_PHYSICAL))
    q[:, 0] = normalize_element(0.5 * (w_norm2 - s_norm2), s_norm2)
    q[:, 1] = normalize_element(k, 0.5 * uu)
    q[:, 2] = np.minimum(np.sqrt(k) * t.d_wall / (50.0 * t.nu), 2.0)
    q[:, 3] = normalize_element(
        np.sum(t.velocity * t.grad_p, axis=1),
        np.sqrt(np.sum(t.grad_p**2, axis=1) * uu),
    )
    # (1/omega) / (1/omega + 1/|S|) rewritten to stay finite for |S| -> 0
    s_norm = np.sqrt(s_norm2)
    omega = np.abs(t.omega)
    tiny = omega < NORM_EPS
    q[:, 4] = np.where(tiny, 1.0, s_norm / np.where(tiny, 1.0, s_norm + omega))
    div_u = np.trace(t.grad_u, axis1=1, axis2=2)
    prod_k = 2.0 * (t.mu_t / t.rho) * s_norm2 - (2.0 / 3.0) * k * div_u
    q[:, 5] = normalize_element(prod_k, k * t.omega)
    q[:, 6] = t.mach
    q[:, 7] = normalize_element(t.mu_t, t.mu)
    q[:, 8] = normalize_element(_fro(t.tau_model), k)
    return q[0] if single else q


def extract_features(data) -> np.ndarray:
    """Raw (unscaled) 56-column feature matrix, rows in table order."""
    single = isinstance(data, FlowRecord)
    t = _as_table(data)
    inv = integrity_invariants(*build_normalized_tensors(t))
    out = np.hstack([inv, physical_features(t)])
    return out[0] if single else out


@dataclass
class FeatureScaler:
    """Per-feature standardization fitted on training data."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.asarray(self.std, dtype=float)

    @classmethod
    def fit(cls, x) -> "FeatureScaler":
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[0] == 0:
            raise ValueError("cannot fit a scaler on an empty table")
        n = x.shape[0]
        mean = np.array([math.fsum(col) / n for col in x.T])
        # one refinement pass removes the rounding left in the first mean
        mean += np.array([math.fsum(col) / n for col in (x - mean).T])
        std = np.sqrt(np.array([math.fsum(col) / n for col in ((x - mean) ** 2).T]))
        return cls(mean, std)

    @property
    def constant(self) -> np.ndarray:
        return self.std < CONSTANT_STD

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != len(self.mean):
            raise ValueError(f"expected {len(self.mean)} features, got {x.shape[-1]}")
        return x

    def transform(self, x) -> np.ndarray:
        x = self._check(x)
        scale = np.where(self.constant, 1.0, self.std)
        return np.where(self.constant, 0.0, (x - self.mean) / scale)

    def inverse_transform(self, z) -> np.ndarray:
        z = self._check(z)
        return np.where(self.constant, self.mean, z * self.std + self.mean)

    def subset(self, idx) -> "FeatureScaler":
        idx = list(idx)
        return FeatureScaler(self.mean[idx], self.std[idx])

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "FeatureScaler":
        return cls(np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float))


def fit_scaler(features) -> FeatureScaler:
    return FeatureScaler.fit(features)


def apply_scaler(scaler: FeatureScaler, features) -> np.ndarray:
    return scaler.transform(features)


def resolve_features(names, available=FEATURE_NAMES) -> list[int]:
    """Indices for a list (or comma-separated string) of feature names."""
    if isinstance(names, str):
        names = [n.strip() for n in names.split(",") if n.strip()]
    index = {n: i for i, n in enumerate(available)}
    missing = [n for n in names if n not in index]
    if missing:
        raise KeyError(f"unknown feature name(s): {', '.join(missing)}")
    return [index[n] for n in names]


def write_feature_csv(path, point_id, features) -> None:
    features = np.asarray(features, dtype=float)
    rows = ([int(i)] + row.tolist() for i, row in zip(point_id, features))
    write_csv(path, ["point_id"] + FEATURE_NAMES, rows)


def read_feature_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(point_id, features)`` from a 57-column feature table."""
    cols = ["point_id"] + FEATURE_NAMES
    header, rows = read_csv(path, cols)
    if not rows:
        raise DataError(f"{path}: no data rows")
    parsed = parse_columns(path, header, rows, cols, int_columns=("point_id",))
    check_unique_ids(path, parsed["point_id"])
    x = np.column_stack([parsed[c] for c in FEATURE_NAMES])
    return np.array(parsed["point_id"], dtype=np.int64), x
