import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from turbuq import realizability as rz

SQ3 = math.sqrt(3.0)


def random_stress(rng):
    """Realizable Reynolds stress from a random rotation and weights."""
    w = rng.dirichlet([1.0, 1.0, 1.0])
    lam = rz.from_barycentric(rz.BarycentricPoint.from_weights(*w))
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    k = rng.uniform(0.1, 5.0)
    return k * ((q * lam) @ q.T + 2.0 / 3.0 * np.eye(3))


weights = st.tuples(
    st.floats(0, 1), st.floats(0, 1), st.floats(0, 1)
).filter(lambda w: sum(w) > 1e-3).map(lambda w: tuple(x / sum(w) for x in w))


class TestAnisotropy:
    def test_isotropic(self):
        a = rz.anisotropy_from_stress(np.diag([2 / 3, 2 / 3, 2 / 3]))
        assert np.allclose(a, 0.0, atol=1e-15)

    def test_one_component(self):
        a = rz.anisotropy_from_stress(np.diag([2.0, 0.0, 0.0]))
        assert np.allclose(a, np.diag([4 / 3, -2 / 3, -2 / 3]), atol=1e-15)

    def test_degenerate_k(self):
        assert np.all(rz.anisotropy_from_stress(np.diag([1e-14, 0, 0])) == 0.0)

    def test_negative_energy_rejected(self):
        with pytest.raises(rz.RealizabilityError):
            rz.anisotropy_from_stress(np.diag([-1.0, 0.0, 0.0]))

    def test_traceless(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            assert abs(np.trace(rz.anisotropy_from_stress(random_stress(rng)))) < 1e-12

    def test_accepts_components(self):
        t = rz.SymmetricTensor3(2.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        assert np.allclose(rz.anisotropy_from_stress(t), np.diag([4 / 3, -2 / 3, -2 / 3]))
        assert np.allclose(rz.anisotropy_from_stress(t.components()), rz.anisotropy_from_stress(t))


class TestEigendecompose:
    def test_diagonal(self):
        dec = rz.eigendecompose(np.diag([0.5, 0.0, -0.5]))
        assert np.array_equal(dec.eigenvalues, [0.5, 0.0, -0.5])
        assert np.allclose(np.abs(dec.eigenvectors), np.eye(3))

    def test_unsorted_diagonal(self):
        dec = rz.eigendecompose(np.diag([-0.5, 0.5, 0.0]))
        assert list(dec.eigenvalues) == [0.5, 0.0, -0.5]

    def test_zero(self):
        dec = rz.eigendecompose(np.zeros((3, 3)))
        assert np.all(dec.eigenvalues == 0.0)
        assert np.allclose(dec.eigenvectors.T @ dec.eigenvectors, np.eye(3))

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=6, max_size=6))
    def test_reconstruction_property(self, c):
        a = rz.components_to_matrix(c)
        dec = rz.eigendecompose(a)
        v, lam = dec.eigenvectors, dec.eigenvalues
        scale = max(1.0, np.abs(a).max())
        assert np.abs(v.T @ v - np.eye(3)).max() < 1e-10
        assert np.abs((v * lam) @ v.T - a).max() < 1e-10 * scale
        assert lam[0] >= lam[1] >= lam[2]

    def test_matches_lapack(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            a = rng.normal(size=(3, 3))
            a = a + a.T
            lam = rz.eigendecompose(a).eigenvalues
            assert np.allclose(lam, np.linalg.eigvalsh(a)[::-1], atol=1e-12)

    def test_sign_convention(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            a = rng.normal(size=(3, 3))
            v = rz.eigendecompose(a + a.T).eigenvectors
            for j in range(3):
                lead = next(c for c in v[:, j] if abs(c) > 1e-8)
                assert lead > 0

    def test_degenerate_eigenvalues(self):
        q, _ = np.linalg.qr(np.random.default_rng(2).normal(size=(3, 3)))
        a = (q * [1 / 3, 1 / 3, -2 / 3]) @ q.T
        dec = rz.eigendecompose(a)
        assert np.abs((dec.eigenvectors * dec.eigenvalues) @ dec.eigenvectors.T - a).max() < 1e-12


class TestBarycentric:
    def test_triangle_is_unit_equilateral(self):
        v = [np.array(p) for p in (rz.X_1C, rz.X_2C, rz.X_3C)]
        for i in range(3):
            for j in range(i + 1, 3):
                assert abs(np.linalg.norm(v[i] - v[j]) - 1.0) < 1e-15

    @pytest.mark.parametrize(
        "lam, xy",
        [
            ((0.0, 0.0, 0.0), (0.5, SQ3 / 2)),
            ((4 / 3, -2 / 3, -2 / 3), (1.0, 0.0)),
            ((1 / 3, 1 / 3, -2 / 3), (0.0, 0.0)),
        ],
    )
    def test_vertices(self, lam, xy):
        pt = rz.to_barycentric(lam)
        assert abs(pt.x - xy[0]) < 1e-12 and abs(pt.y - xy[1]) < 1e-12

    def test_hand_example(self):
        pt = rz.to_barycentric((1 / 3, 0.0, -1 / 3))
        assert np.allclose(pt.weights, (1 / 6, 1 / 3, 1 / 2), atol=1e-15)
        assert abs(pt.x - 5 / 12) < 1e-15
        assert abs(pt.y - SQ3 / 4) < 1e-15

    def test_inverse_hand_example(self):
        lam = rz.from_barycentric(rz.BarycentricPoint.from_cartesian(5 / 12, SQ3 / 4))
        assert np.allclose(lam, (1 / 3, 0.0, -1 / 3), atol=1e-15)

    def test_inverse_vertices(self):
        assert np.allclose(rz.from_barycentric(rz.BarycentricPoint.from_weights(0, 0, 1)), 0.0)
        assert np.allclose(rz.from_barycentric(rz.BarycentricPoint.from_weights(1, 0, 0)), (4 / 3, -2 / 3, -2 / 3))

    def test_rejects_unordered(self):
        with pytest.raises(ValueError):
            rz.to_barycentric((0.0, 1 / 3, -1 / 3))

    def test_rejects_trace(self):
        with pytest.raises(ValueError):
            rz.to_barycentric((0.5, 0.0, 0.0))

    def test_rejects_outside(self):
        with pytest.raises(rz.RealizabilityError):
            rz.from_barycentric(rz.BarycentricPoint.from_cartesian(0.5, -0.1))

    @settings(max_examples=300)
    @given(weights)
    def test_point_invariants(self, w):
        pt = rz.BarycentricPoint.from_weights(*w)
        assert abs(sum(pt.weights) - 1.0) < 1e-12
        verts = np.array([rz.X_1C, rz.X_2C, rz.X_3C])
        assert np.allclose(np.array(pt.weights) @ verts, pt.cartesian, atol=1e-12)
        back = rz.BarycentricPoint.from_cartesian(pt.x, pt.y)
        assert np.allclose(back.weights, pt.weights, atol=1e-12)

    @settings(max_examples=300)
    @given(weights)
    def test_roundtrip(self, w):
        pt = rz.BarycentricPoint.from_weights(*w)
        lam = rz.from_barycentric(pt)
        assert abs(lam.sum()) < 1e-12
        assert lam[0] >= lam[1] >= lam[2]
        again = rz.to_barycentric(lam)
        assert np.allclose(again.weights, pt.weights, atol=1e-10)
        assert np.allclose(rz.from_barycentric(again), lam, atol=1e-10)


class TestPerturbation:
    def test_midpoint(self):
        pt = rz.BarycentricPoint.from_cartesian(0.5, 0.2)
        out = rz.perturb_toward_vertex(pt, "1C", 0.5)
        assert np.allclose(out.cartesian, (0.75, 0.1), atol=1e-15)

    @pytest.mark.parametrize("target", ["1C", "2C", "3C"])
    def test_limits(self, target):
        pt = rz.BarycentricPoint.from_weights(0.2, 0.3, 0.5)
        assert rz.perturb_toward_vertex(pt, target, 0.0) == pt
        end = rz.perturb_toward_vertex(pt, target, 1.0)
        assert end.cartesian == rz.VERTICES[target]

    @pytest.mark.parametrize("bad", [-0.1, 1.1])
    def test_rejects_delta(self, bad):
        with pytest.raises(ValueError):
            rz.perturb_toward_vertex(rz.BarycentricPoint.from_weights(0, 0, 1), "1C", bad)

    @settings(max_examples=300)
    @given(weights, st.sampled_from(["1C", "2C", "3C"]), st.floats(0, 1))
    def test_convexity(self, w, target, delta):
        out = rz.perturb_toward_vertex(rz.BarycentricPoint.from_weights(*w), target, delta)
        assert min(out.weights) >= -1e-12
        assert abs(sum(out.weights) - 1.0) < 1e-12


class TestStrength:
    def test_examples(self):
        a = rz.BarycentricPoint.from_cartesian(0.3, 0.1)
        b = rz.BarycentricPoint.from_cartesian(0.6, 0.5)
        assert rz.perturbation_strength(a, a) == 0.0
        assert abs(rz.perturbation_strength(a, b) - 0.5) < 1e-15
        v1 = rz.BarycentricPoint.from_weights(1, 0, 0)
        v2 = rz.BarycentricPoint.from_weights(0, 1, 0)
        assert rz.perturbation_strength(v1, v2) == 1.0

    @given(weights, weights, weights)
    def test_metric(self, a, b, c):
        pa, pb, pc = (rz.BarycentricPoint.from_weights(*w) for w in (a, b, c))
        d = rz.perturbation_strength
        assert d(pa, pb) == d(pb, pa)
        assert 0.0 <= d(pa, pb) <= 1.0
        assert d(pa, pc) <= d(pa, pb) + d(pb, pc) + 1e-15


class TestReconstruct:
    def test_isotropic(self):
        assert np.allclose(rz.reconstruct_perturbed_stress(1.0, np.eye(3), (0, 0, 0)), 2 / 3 * np.eye(3))

    def test_zero_k(self):
        assert np.all(rz.reconstruct_perturbed_stress(0.0, np.eye(3), (0, 0, 0)) == 0.0)

    def test_one_component(self):
        tau = rz.reconstruct_perturbed_stress(1.0, np.eye(3), (4 / 3, -2 / 3, -2 / 3))
        assert np.allclose(tau, np.diag([2.0, 0.0, 0.0]), atol=1e-15)

    def test_rejects_nonrealizable(self):
        with pytest.raises(rz.RealizabilityError):
            rz.reconstruct_perturbed_stress(1.0, np.eye(3), (1.0, 0.5, -1.5))

    @settings(max_examples=200)
    @given(weights, st.floats(0, 10), st.integers(0, 2**32 - 1))
    def test_trace_and_psd(self, w, k, seed):
        q, _ = np.linalg.qr(np.random.default_rng(seed).normal(size=(3, 3)))
        lam = rz.from_barycentric(rz.BarycentricPoint.from_weights(*w))
        tau = rz.reconstruct_perturbed_stress(k, q, lam)
        assert abs(np.trace(tau) - 2 * k) < 1e-10 * max(1.0, k)
        assert np.linalg.eigvalsh(tau).min() >= -1e-12 * max(1.0, k)

    def test_full_chain_roundtrip(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            tau = random_stress(rng)
            assert np.abs(rz.perturbed_stress(tau, "1C", 0.0) - tau).max() < 1e-9

    def test_full_chain_vertex(self):
        tau = random_stress(np.random.default_rng(5))
        out = rz.perturbed_stress(tau, "3C", 1.0)
        k = 0.5 * np.trace(tau)
        assert np.allclose(out, 2 / 3 * k * np.eye(3), atol=1e-12)
