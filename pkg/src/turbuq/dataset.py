"""Flow-table ingestion, perturbation-strength labels and synthetic cases."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import realizability as rz
from ._io import DataError, check_unique_ids, parse_columns, read_csv, write_csv
from .features import FlowTable, extract_features, physical_features

TAU_COLUMNS = ["tau_xx", "tau_yy", "tau_zz", "tau_xy", "tau_xz", "tau_yz"]
FLOW_COLUMNS = [
    "point_id",
    "x", "y", "z",
    "rho",
    "u", "v", "w",
    "dudx", "dudy", "dudz", "dvdx", "dvdy", "dvdz", "dwdx", "dwdy", "dwdz",
    "p", "dpdx", "dpdy", "dpdz",
    "k", "dkdx", "dkdy", "dkdz",
    "omega", "mu", "mu_t", "d_wall", "mach",
] + TAU_COLUMNS
HIFI_COLUMNS = ["point_id"] + TAU_COLUMNS
LABEL_COLUMNS = ["point_id", "p_true"]

SYNTHETIC_KINDS = ("channel-like", "hill-like", "wavy-like", "convdiv-like")


@dataclass
class FlowCase:
    name: str
    records: FlowTable
    hifi_stress: np.ndarray  # (n, 3, 3), aligned with records.point_id
    hifi_point_id: np.ndarray | None = None
    reynolds_tag: str = ""
    rans_path: str | None = None
    hifi_path: str | None = None
    p_exact: np.ndarray | None = None  # closed-form labels of synthetic cases

    def __post_init__(self):
        if self.hifi_point_id is None:
            self.hifi_point_id = self.records.point_id.copy()


@dataclass
class LabeledDataset:
    point_id: np.ndarray
    features: np.ndarray
    targets: np.ndarray
    position: np.ndarray
    case_name: str = ""
    role: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.features) != len(self.targets):
            raise ValueError("features and targets differ in length")

    def __len__(self) -> int:
        return len(self.targets)


def read_flow_csv(path) -> FlowTable:
    header, rows = read_csv(path, FLOW_COLUMNS)
    if not rows:
        raise DataError(f"{path}: no data rows")
    cols = parse_columns(path, header, rows, FLOW_COLUMNS, int_columns=("point_id",))
    check_unique_ids(path, cols["point_id"])
    c = {k: np.array(v) for k, v in cols.items()}
    n = len(rows)
    grad_u = np.stack(
        [c[n_] for n_ in ("dudx", "dudy", "dudz", "dvdx", "dvdy", "dvdz", "dwdx", "dwdy", "dwdz")],
        axis=1,
    ).reshape(n, 3, 3)
    return FlowTable(
        point_id=c["point_id"],
        position=np.column_stack([c["x"], c["y"], c["z"]]),
        rho=c["rho"],
        velocity=np.column_stack([c["u"], c["v"], c["w"]]),
        grad_u=grad_u,
        p=c["p"],
        grad_p=np.column_stack([c["dpdx"], c["dpdy"], c["dpdz"]]),
        k=c["k"],
        grad_k=np.column_stack([c["dkdx"], c["dkdy"], c["dkdz"]]),
        omega=c["omega"],
        mu=c["mu"],
        mu_t=c["mu_t"],
        d_wall=c["d_wall"],
        mach=c["mach"],
        tau_model=rz.components_to_matrix(np.column_stack([c[t] for t in TAU_COLUMNS])),
    )


def write_flow_csv(path, table: FlowTable) -> None:
    n = len(table)
    cols = np.column_stack(
        [
            table.position,
            table.rho,
            table.velocity,
            table.grad_u.reshape(n, 9),
            table.p,
            table.grad_p,
            table.k,
            table.grad_k,
            table.omega,
            table.mu,
            table.mu_t,
            table.d_wall,
            table.mach,
            rz.matrix_to_components(table.tau_model),
        ]
    )
    rows = ([int(pid)] + [float(v) for v in row] for pid, row in zip(table.point_id, cols))
    write_csv(path, FLOW_COLUMNS, rows)


def read_hifi_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(point_id, tau)`` with ``tau`` of shape ``(n, 3, 3)``."""
    header, rows = read_csv(path, HIFI_COLUMNS)
    if not rows:
        raise DataError(f"{path}: no data rows")
    cols = parse_columns(path, header, rows, HIFI_COLUMNS, int_columns=("point_id",))
    check_unique_ids(path, cols["point_id"])
    tau = rz.components_to_matrix(np.column_stack([cols[t] for t in TAU_COLUMNS]))
    return np.array(cols["point_id"], dtype=np.int64), tau


def write_hifi_csv(path, point_id, tau) -> None:
    comps = rz.matrix_to_components(tau)
    write_csv(path, HIFI_COLUMNS, ([int(i)] + row.tolist() for i, row in zip(point_id, comps)))


def read_labels_csv(path) -> tuple[np.ndarray, np.ndarray]:
    header, rows = read_csv(path, LABEL_COLUMNS)
    if not rows:
        raise DataError(f"{path}: no data rows")
    cols = parse_columns(path, header, rows, LABEL_COLUMNS, int_columns=("point_id",))
    check_unique_ids(path, cols["point_id"])
    return np.array(cols["point_id"], dtype=np.int64), np.array(cols["p_true"])


def write_labels_csv(path, point_id, p) -> None:
    write_csv(path, LABEL_COLUMNS, ([int(i), float(v)] for i, v in zip(point_id, p)))


def load_case(name: str, rans_path, hifi_path, reynolds_tag: str = "") -> FlowCase:
    records = read_flow_csv(rans_path)
    hifi_id, hifi_tau = read_hifi_csv(hifi_path)
    case = FlowCase(
        name=name,
        records=records,
        hifi_stress=hifi_tau,
        hifi_point_id=hifi_id,
        reynolds_tag=reynolds_tag,
        rans_path=str(rans_path),
        hifi_path=str(hifi_path),
    )
    return case


def align_by_point_id(ids_a, ids_b) -> np.ndarray:
    """Index into ``ids_b`` for every entry of ``ids_a``; both sets must match."""
    ids_a = np.asarray(ids_a)
    ids_b = np.asarray(ids_b)
    pos = {int(v): i for i, v in enumerate(ids_b)}
    missing_b = sorted(set(int(v) for v in ids_a) - pos.keys())
    missing_a = sorted(pos.keys() - set(int(v) for v in ids_a))
    if missing_a or missing_b:
        parts = []
        if missing_b:
            parts.append(f"absent from high-fidelity data: {_short(missing_b)}")
        if missing_a:
            parts.append(f"absent from RANS data: {_short(missing_a)}")
        raise DataError("unmatched point_id(s); " + "; ".join(parts))
    return np.array([pos[int(v)] for v in ids_a], dtype=np.int64)


def _short(ids, limit=10) -> str:
    s = ", ".join(str(i) for i in ids[:limit])
    return s + (f", ... ({len(ids)} total)" if len(ids) > limit else "")


def _barycentric_or_raise(tau, pid, source):
    try:
        return rz.barycentric_from_stress(tau)
    except (rz.RealizabilityError, ValueError) as exc:
        raise DataError(f"point_id {pid}: unphysical {source} stress ({exc})") from None


def compute_labels(case: FlowCase) -> np.ndarray:
    """Perturbation strength per RANS point, in ``case.records`` order."""
    idx = align_by_point_id(case.records.point_id, case.hifi_point_id)
    hifi = case.hifi_stress[idx]
    out = np.empty(len(case.records))
    for i, pid in enumerate(case.records.point_id):
        x_rans = _barycentric_or_raise(case.records.tau_model[i], pid, "modeled")
        x_data = _barycentric_or_raise(hifi[i], pid, "high-fidelity")
        if not (x_rans.is_realizable and x_data.is_realizable):
            raise DataError(f"point_id {pid}: stress outside the realizability triangle")
        out[i] = rz.perturbation_strength(x_data, x_rans)
    bad = np.nonzero(~((out >= 0.0) & (out <= 1.0)))[0]
    if len(bad):
        raise DataError(f"label outside [0, 1] at point_id {case.records.point_id[bad[0]]}")
    return out


def labeled_dataset(case: FlowCase, role: str = "", labels=None) -> LabeledDataset:
    targets = compute_labels(case) if labels is None else np.asarray(labels, dtype=float)
    return LabeledDataset(
        point_id=case.records.point_id.copy(),
        features=extract_features(case.records),
        targets=targets,
        position=case.records.position.copy(),
        case_name=case.name,
        role=role,
        meta={"reynolds_tag": case.reynolds_tag},
    )


# --- synthetic cases ---------------------------------------------------------

_KIND_PARAMS = {
    # lower-wall shape, bulk speed, molecular viscosity, height
    "channel-like": dict(wall="flat", amp=0.0, u0=40.0, nu=0.04, height=2.0, ti=0.05),
    "hill-like": dict(wall="hill", amp=0.45, u0=30.0, nu=0.06, height=2.0, ti=0.07),
    "wavy-like": dict(wall="wave", amp=0.12, u0=55.0, nu=0.03, height=2.0, ti=0.04),
    "convdiv-like": dict(wall="bump", amp=0.3, u0=45.0, nu=0.05, height=2.0, ti=0.06),
}
_REYNOLDS_TAGS = {
    "channel-like": "Re_tau=550",
    "hill-like": "ReH=5600",
    "wavy-like": "ReH=6850",
    "convdiv-like": "Re_tau=617",
}
DEFAULT_PROFILE = {"amplitude": 0.6, "target": "1C", "data_equals_rans": False}
SOUND_SPEED = 340.0
LENGTH = 4.0


def _wall(kind_p, x):
    amp = kind_p["amp"]
    shape = kind_p["wall"]
    if shape == "flat":
        return np.zeros_like(x)
    if shape == "hill":
        return amp * 0.5 * (1.0 + np.cos(2.0 * np.pi * x / LENGTH))
    if shape == "wave":
        return amp * np.sin(2.0 * np.pi * x / (0.5 * LENGTH)) + amp
    return amp * np.exp(-(((x - 0.5 * LENGTH) / 0.5) ** 2))


def _fields(kind_p, x, y):
    """Analytic mean fields (u, v, p, k) on the lower-wall-following domain."""
    rho = 1.2
    h_top = kind_p["height"]
    yw = _wall(kind_p, x)
    h = h_top - yw
    ub = kind_p["u0"] * h_top / h
    eta = np.clip((y - yw) / h, 0.0, 1.0)  # 0 at lower wall, 1 at upper
    wall_dist = np.minimum(eta, 1.0 - eta) * h
    zeta = 2.0 * wall_dist / h  # 0 at walls, 1 at center
    phi = np.tanh(6.0 * zeta) / np.tanh(6.0)
    u = ub * phi
    v = u * (1.0 - eta) * _wall_slope(kind_p, x)
    speed2 = u * u + v * v
    p = 1.0e5 - 0.5 * rho * ub * ub
    k = kind_p["ti"] * ub * ub * (0.3 + 0.7 * np.exp(-zeta / 0.25)) * (0.2 + 0.8 * np.tanh(20.0 * zeta))
    return u, v, p, k, speed2, wall_dist


def _wall_slope(kind_p, x, eps=1e-6):
    return (_wall(kind_p, x + eps) - _wall(kind_p, x - eps)) / (2.0 * eps)


def _central_diff(fn, x, y, eps=1e-6):
    fxp, fxm = fn(x + eps, y), fn(x - eps, y)
    fyp, fym = fn(x, y + eps), fn(x, y - eps)
    return [(a - b) / (2.0 * eps) for a, b in zip(fxp, fxm)], [
        (a - b) / (2.0 * eps) for a, b in zip(fyp, fym)
    ]


def _rotation_z(theta):
    c, s = np.cos(theta), np.sin(theta)
    r = np.zeros(theta.shape + (3, 3))
    r[..., 0, 0] = c
    r[..., 0, 1] = -s
    r[..., 1, 0] = s
    r[..., 1, 1] = c
    r[..., 2, 2] = 1.0
    return r


def synthetic_states(q, profile=None):
    """Closed-form (RANS, data) barycentric weights and labels from features q1..q9.

    Returns ``(w_rans, w_data, p)`` with weights of shape ``(n, 3)``.
    """
    prof = dict(DEFAULT_PROFILE)
    prof.update(profile or {})
    q = np.asarray(q, dtype=float)
    xi = q[:, 2] / 2.0  # wall-distance Reynolds number, scaled to [0, 1]
    r = q[:, 7]  # eddy-viscosity ratio
    q1 = q[:, 0]
    w3 = 0.2 + 0.65 * xi
    w1 = (1.0 - w3) * (0.3 + 0.2 * q[:, 1])
    w2 = 1.0 - w3 - w1
    w_rans = np.column_stack([w1, w2, w3])

    if prof["data_equals_rans"]:
        delta = np.zeros(len(q))
    else:
        amp = float(prof["amplitude"])
        delta = amp * r * (1.0 - 0.6 * xi) * (0.65 - 0.35 * q1)
        delta = np.clip(delta, 0.0, 1.0)
    target = np.zeros(3)
    target[{"1C": 0, "2C": 1, "3C": 2}[prof["target"]]] = 1.0
    w_data = (1.0 - delta)[:, None] * w_rans + delta[:, None] * target

    verts = np.array([rz.X_1C, rz.X_2C, rz.X_3C])
    x_r = w_rans @ verts
    x_t = target @ verts
    p = delta * np.hypot(*(x_t - x_r).T)
    return w_rans, w_data, p


def _stress_from_weights(k, w, theta):
    w1, w2, w3 = w.T
    l3 = 2.0 * (w3 - 1.0) / 3.0
    l2 = w2 + l3
    l1 = 2.0 * w1 + l2
    lam = np.column_stack([l1, l2, l3])
    v = _rotation_z(theta)
    a = np.einsum("nij,nj,nkj->nik", v, lam, v)
    tau = k[:, None, None] * (a + (2.0 / 3.0) * np.eye(3))
    return 0.5 * (tau + np.swapaxes(tau, 1, 2))


def generate_synthetic_case(
    kind: str, n_points: int = 400, seed: int = 42, anisotropy_profile_params=None
) -> FlowCase:
    """Deterministic 2-D synthetic flow with closed-form perturbation strength."""
    if kind not in _KIND_PARAMS:
        raise ValueError(f"unknown kind {kind!r}; expected one of {', '.join(SYNTHETIC_KINDS)}")
    if n_points < 10:
        raise ValueError("n_points must be >= 10")
    kp = _KIND_PARAMS[kind]
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(SYNTHETIC_KINDS.index(kind),)))
    x = rng.uniform(0.0, LENGTH, n_points)
    yw = _wall(kp, x)
    # cluster points toward the walls like a RANS mesh
    s = rng.uniform(0.0, 1.0, n_points)
    eta = 0.5 * (1.0 - np.cos(np.pi * s))
    eta = np.clip(eta, 1e-3, 1.0 - 1e-3)
    y = yw + eta * (kp["height"] - yw)

    rho = np.full(n_points, 1.2)
    mu = rho * kp["nu"]
    u, v, p, k, speed2, d_wall = _fields(kp, x, y)
    gx, gy = _central_diff(lambda a, b: _fields(kp, a, b)[:4], x, y)
    dudx, dvdx, dpdx, dkdx = gx
    dudy, dvdy, dpdy, dkdy = gy
    zeros = np.zeros(n_points)
    grad_u = np.stack(
        [
            np.column_stack([dudx, dudy, zeros]),
            np.column_stack([dvdx, dvdy, zeros]),
            np.zeros((n_points, 3)),
        ],
        axis=1,
    )
    kappa_d = 0.41 * 0.09**0.25 * (d_wall + 0.002 * kp["height"])
    omega = np.sqrt(k) / kappa_d
    mu_t = rho * k / omega
    mach = np.sqrt(speed2) / SOUND_SPEED

    table = FlowTable(
        point_id=np.arange(1, n_points + 1),
        position=np.column_stack([x, y, zeros]),
        rho=rho,
        velocity=np.column_stack([u, v, zeros]),
        grad_u=grad_u,
        p=p,
        grad_p=np.column_stack([dpdx, dpdy, zeros]),
        k=k,
        grad_k=np.column_stack([dkdx, dkdy, zeros]),
        omega=omega,
        mu=mu,
        mu_t=mu_t,
        d_wall=d_wall,
        mach=mach,
        tau_model=np.zeros((n_points, 3, 3)),
    )
    q = physical_features(table)
    w_rans, w_data, p_exact = synthetic_states(q, anisotropy_profile_params)

    # principal axes follow the local shear direction; the data frame is tilted
    shear = np.arctan2(dudy, np.abs(dudx) + 1.0)
    theta_rans = 0.25 * np.pi * np.sign(shear) + 0.1 * np.sin(2.0 * np.pi * x / LENGTH)
    theta_data = theta_rans + 0.15 * np.cos(np.pi * y / kp["height"])
    k_data = k * (1.0 + 0.2 * np.sin(np.pi * x / LENGTH))
    table.tau_model = _stress_from_weights(k, w_rans, theta_rans)
    hifi = _stress_from_weights(k_data, w_data, theta_data)
    return FlowCase(
        name=kind,
        records=table,
        hifi_stress=hifi,
        reynolds_tag=_REYNOLDS_TAGS[kind],
        p_exact=p_exact,
    )


def write_case(case: FlowCase, out_dir, stem: str | None = None) -> dict:
    """Write RANS, high-fidelity and (when known) label CSVs; return their paths."""
    out_dir = Path(out_dir)
    stem = stem or case.name
    paths = {
        "rans": out_dir / f"{stem}_rans.csv",
        "hifi": out_dir / f"{stem}_hifi.csv",
    }
    write_flow_csv(paths["rans"], case.records)
    write_hifi_csv(paths["hifi"], case.hifi_point_id, case.hifi_stress)
    if case.p_exact is not None:
        paths["labels"] = out_dir / f"{stem}_labels.csv"
        write_labels_csv(paths["labels"], case.records.point_id, case.p_exact)
    return {k: str(v) for k, v in paths.items()}


__all__ = [
    "FLOW_COLUMNS",
    "HIFI_COLUMNS",
    "LABEL_COLUMNS",
    "SYNTHETIC_KINDS",
    "FlowCase",
    "LabeledDataset",
    "compute_labels",
    "generate_synthetic_case",
    "labeled_dataset",
    "load_case",
    "read_flow_csv",
    "read_hifi_csv",
    "read_labels_csv",
    "write_case",
    "write_flow_csv",
    "write_hifi_csv",
    "write_labels_csv",
]
