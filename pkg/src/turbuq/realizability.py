"""Reynolds-stress anisotropy, the barycentric realizability map and
eigenvalue perturbations toward the limiting states of turbulence.

All functions are pure and work on plain ``(3, 3)`` numpy arrays; the
:class:`SymmetricTensor3` container is only used at I/O boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

K_FLOOR = 1e-10
REALIZABILITY_TOL = 1e-12
TRACE_TOL = 1e-10
JACOBI_TOL = 1e-13
JACOBI_MAX_SWEEPS = 100

SQRT3_2 = math.sqrt(3.0) / 2.0

# vertices of the unit-edge barycentric triangle
X_1C = (1.0, 0.0)
X_2C = (0.0, 0.0)
X_3C = (0.5, SQRT3_2)
VERTICES = {"1C": X_1C, "2C": X_2C, "3C": X_3C}
_VERTEX_INDEX = {"1C": 0, "2C": 1, "3C": 2}

COMPONENT_ORDER = ("xx", "yy", "zz", "xy", "xz", "yz")


class RealizabilityError(ValueError):
    """Raised for states outside the physically realizable set."""


class ConvergenceError(ArithmeticError):
    """Raised when the Jacobi eigensolver exceeds its sweep budget."""


@dataclass(frozen=True)
class SymmetricTensor3:
    xx: float
    yy: float
    zz: float
    xy: float
    xz: float
    yz: float

    @classmethod
    def from_matrix(cls, m) -> "SymmetricTensor3":
        m = np.asarray(m, dtype=float)
        return cls(m[0, 0], m[1, 1], m[2, 2], m[0, 1], m[0, 2], m[1, 2])

    @classmethod
    def from_components(cls, comps) -> "SymmetricTensor3":
        return cls(*(float(c) for c in comps))

    def components(self) -> tuple[float, ...]:
        return (self.xx, self.yy, self.zz, self.xy, self.xz, self.yz)

    def as_matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.xx, self.xy, self.xz],
                [self.xy, self.yy, self.yz],
                [self.xz, self.yz, self.zz],
            ]
        )

    @property
    def trace(self) -> float:
        return self.xx + self.yy + self.zz


def components_to_matrix(comps) -> np.ndarray:
    """Stack ``(..., 6)`` components (xx, yy, zz, xy, xz, yz) into ``(..., 3, 3)``."""
    c = np.asarray(comps, dtype=float)
    m = np.empty(c.shape[:-1] + (3, 3))
    m[..., 0, 0] = c[..., 0]
    m[..., 1, 1] = c[..., 1]
    m[..., 2, 2] = c[..., 2]
    m[..., 0, 1] = m[..., 1, 0] = c[..., 3]
    m[..., 0, 2] = m[..., 2, 0] = c[..., 4]
    m[..., 1, 2] = m[..., 2, 1] = c[..., 5]
    return m


def matrix_to_components(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return np.stack(
        [m[..., 0, 0], m[..., 1, 1], m[..., 2, 2], m[..., 0, 1], m[..., 0, 2], m[..., 1, 2]],
        axis=-1,
    )


def _as_matrix(t) -> np.ndarray:
    if isinstance(t, SymmetricTensor3):
        return t.as_matrix()
    m = np.asarray(t, dtype=float)
    if m.shape == (6,):
        return components_to_matrix(m)
    if m.shape != (3, 3):
        raise ValueError(f"expected a 3x3 tensor or 6 components, got shape {m.shape}")
    return m


class EigenDecomposition(NamedTuple):
    eigenvalues: np.ndarray  # (3,), descending
    eigenvectors: np.ndarray  # (3, 3), column i pairs with eigenvalues[i]


@dataclass(frozen=True)
class BarycentricPoint:
    """A point of the realizability triangle: cartesian coordinates plus the
    weights of the 1C, 2C and 3C vertices."""

    x: float
    y: float
    weights: tuple[float, float, float]

    @property
    def cartesian(self) -> tuple[float, float]:
        return (self.x, self.y)

    @classmethod
    def from_weights(cls, w1: float, w2: float, w3: float) -> "BarycentricPoint":
        w = _clamp_weights((w1, w2, w3))
        x = w[0] * X_1C[0] + w[1] * X_2C[0] + w[2] * X_3C[0]
        y = w[0] * X_1C[1] + w[1] * X_2C[1] + w[2] * X_3C[1]
        return cls(x, y, w)

    @classmethod
    def from_cartesian(cls, x: float, y: float) -> "BarycentricPoint":
        w3 = y / SQRT3_2
        w1 = x - 0.5 * w3
        w2 = 1.0 - w1 - w3
        return cls(float(x), float(y), (w1, w2, w3))

    @property
    def is_realizable(self) -> bool:
        return min(self.weights) >= -REALIZABILITY_TOL


def _clamp_weights(w) -> tuple[float, float, float]:
    # floating-point noise just below zero is snapped to the boundary
    return tuple(0.0 if -REALIZABILITY_TOL <= wi < 0.0 else float(wi) for wi in w)


def turbulent_kinetic_energy(tau) -> float:
    return 0.5 * float(np.trace(_as_matrix(tau)))


def anisotropy_from_stress(tau, k_floor: float = K_FLOOR) -> np.ndarray:
    """Return ``a = tau/k - 2/3 I`` with ``k = tr(tau)/2``.

    Below ``k_floor`` the state is treated as isotropic and the zero tensor
    is returned.
    """
    m = _as_matrix(tau)
    tr = float(np.trace(m))
    if tr < -REALIZABILITY_TOL:
        raise RealizabilityError(f"negative turbulent kinetic energy (trace {tr:g})")
    k = 0.5 * tr
    if k < k_floor:
        return np.zeros((3, 3))
    a = 0.5 * (m + m.T) / k
    a[np.diag_indices(3)] -= 2.0 / 3.0
    # remove the O(eps) trace left over from the division
    a[np.diag_indices(3)] -= np.trace(a) / 3.0
    return a


def _jacobi(a: list[list[float]], tol: float) -> tuple[list[float], list[list[float]]]:
    """Cyclic Jacobi on a 3x3 symmetric matrix given as nested lists (modified in place)."""
    v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    scale = max(1.0, max(abs(a[i][j]) for i in range(3) for j in range(3)))
    thresh = tol * scale
    for _ in range(JACOBI_MAX_SWEEPS):
        off = max(abs(a[0][1]), abs(a[0][2]), abs(a[1][2]))
        if off <= thresh:
            return [a[0][0], a[1][1], a[2][2]], v
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = a[p][q]
            if apq == 0.0:
                continue
            theta = (a[q][q] - a[p][p]) / (2.0 * apq)
            t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
            c = 1.0 / math.sqrt(t * t + 1.0)
            s = t * c
            for r in range(3):
                arp, arq = a[r][p], a[r][q]
                a[r][p] = c * arp - s * arq
                a[r][q] = s * arp + c * arq
            for r in range(3):
                apr, aqr = a[p][r], a[q][r]
                a[p][r] = c * apr - s * aqr
                a[q][r] = s * apr + c * aqr
            a[p][q] = a[q][p] = 0.0
            for r in range(3):
                vrp, vrq = v[r][p], v[r][q]
                v[r][p] = c * vrp - s * vrq
                v[r][q] = s * vrp + c * vrq
    raise ConvergenceError(f"Jacobi iteration did not converge in {JACOBI_MAX_SWEEPS} sweeps")


def eigendecompose(a, tol: float = JACOBI_TOL) -> EigenDecomposition:
    """Eigen-decomposition of a symmetric 3x3 tensor by cyclic Jacobi rotations.

    Eigenvalues come back sorted descending. Each eigenvector is oriented so
    its first component with magnitude above 1e-8 is nonnegative.
    """
    m = _as_matrix(a)
    m = 0.5 * (m + m.T)
    lam, v = _jacobi(m.tolist(), tol)
    order = sorted(range(3), key=lambda i: -lam[i])
    vals = np.array([lam[i] for i in order])
    vecs = np.array(v)[:, order]
    for j in range(3):
        col = vecs[:, j]
        lead = next((c for c in col if abs(c) > 1e-8), 0.0)
        if lead < 0.0:
            vecs[:, j] = -col
    return EigenDecomposition(vals, vecs)


def _check_eigenvalues(lam) -> tuple[float, float, float]:
    l1, l2, l3 = (float(x) for x in lam)
    if not (l1 >= l2 - REALIZABILITY_TOL and l2 >= l3 - REALIZABILITY_TOL):
        raise ValueError(f"eigenvalues must be sorted descending, got {(l1, l2, l3)}")
    if abs(l1 + l2 + l3) > TRACE_TOL:
        raise ValueError(f"anisotropy eigenvalues must sum to zero, got {l1 + l2 + l3:g}")
    return l1, l2, l3


def to_barycentric(lam) -> BarycentricPoint:
    """Map descending anisotropy eigenvalues to the realizability triangle."""
    l1, l2, l3 = _check_eigenvalues(lam)
    return BarycentricPoint.from_weights(0.5 * (l1 - l2), l2 - l3, 1.5 * l3 + 1.0)


def from_barycentric(point: BarycentricPoint) -> np.ndarray:
    """Inverse of :func:`to_barycentric`: eigenvalues from vertex weights."""
    w1, w2, w3 = point.weights
    if min(point.weights) < -REALIZABILITY_TOL:
        raise RealizabilityError(f"point {point.cartesian} lies outside the triangle")
    l3 = 2.0 * (w3 - 1.0) / 3.0
    l2 = w2 + l3
    l1 = 2.0 * w1 + l2
    return np.array([l1, l2, l3])


def barycentric_from_stress(tau, k_floor: float = K_FLOOR) -> BarycentricPoint:
    """Stress -> anisotropy -> eigenvalues -> triangle, in one call."""
    lam = eigendecompose(anisotropy_from_stress(tau, k_floor)).eigenvalues
    # the Jacobi trace is exact only to rounding; re-center before mapping
    lam = lam - lam.sum() / 3.0
    return to_barycentric(lam)


def perturb_toward_vertex(point: BarycentricPoint, target: str, delta_b: float) -> BarycentricPoint:
    """Shift ``point`` a relative distance ``delta_b`` toward a limiting state.

    ``target`` is one of ``"1C"``, ``"2C"``, ``"3C"``.
    """
    if not 0.0 <= delta_b <= 1.0:
        raise ValueError(f"delta_b must lie in [0, 1], got {delta_b}")
    if target not in VERTICES:
        raise ValueError(f"unknown vertex {target!r}; expected one of {sorted(VERTICES)}")
    if not point.is_realizable:
        raise RealizabilityError(f"point {point.cartesian} lies outside the triangle")
    xt, yt = VERTICES[target]
    e = [0.0, 0.0, 0.0]
    e[_VERTEX_INDEX[target]] = 1.0
    keep = 1.0 - delta_b
    w = _clamp_weights([keep * wi + delta_b * ei for wi, ei in zip(point.weights, e)])
    return BarycentricPoint(keep * point.x + delta_b * xt, keep * point.y + delta_b * yt, w)


def perturbation_strength(x_data: BarycentricPoint, x_rans: BarycentricPoint) -> float:
    """Euclidean distance between two triangle points; lies in [0, 1]."""
    return min(math.hypot(x_data.x - x_rans.x, x_data.y - x_rans.y), 1.0)


def reconstruct_perturbed_stress(k: float, v, lambda_star) -> np.ndarray:
    """Rebuild ``tau* = k (v diag(lambda*) v^T + 2/3 I)``."""
    if k < 0.0:
        raise ValueError(f"turbulent kinetic energy must be nonnegative, got {k}")
    lam = np.asarray(lambda_star, dtype=float)
    point = to_barycentric(lam)
    if not point.is_realizable:
        raise RealizabilityError(f"eigenvalues {tuple(lam)} are not realizable")
    v = np.asarray(v, dtype=float)
    a = (v * lam) @ v.T
    tau = k * (a + (2.0 / 3.0) * np.eye(3))
    return 0.5 * (tau + tau.T)


def perturbed_stress(tau, target: str, delta_b: float, k_floor: float = K_FLOOR) -> np.ndarray:
    """Eigenvalue-perturbed Reynolds stress for one point.

    Keeps ``k`` and the eigenvectors of ``tau`` and moves its anisotropy state
    toward ``target`` by ``delta_b``.
    """
    m = _as_matrix(tau)
    k = turbulent_kinetic_energy(m)
    dec = eigendecompose(anisotropy_from_stress(m, k_floor))
    lam = dec.eigenvalues - dec.eigenvalues.sum() / 3.0
    moved = perturb_toward_vertex(to_barycentric(lam), target, delta_b)
    return reconstruct_perturbed_stress(k, dec.eigenvectors, from_barycentric(moved))
