import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from nharm.fem import (
    harmonic_extension,
    mass_matrix,
    p_energy,
    p_energy_gradient,
    p_energy_hessian,
    pcg,
    stiffness_matrix,
    tangent_bases,
)
from nharm.geometry import build_ball_mesh


@pytest.fixture(scope="module")
def tiny():
    return build_ball_mesh(3, 0.45)


def random_field(dom, rng):
    return dom.vertices + 0.2 * rng.normal(size=dom.vertices.shape)


@pytest.mark.parametrize("p,eps", [(3.0, 0.0), (3.1, 0.0), (4.0, 1e-2), (2.0, 0.0)])
def test_gradient_matches_finite_differences(tiny, rng, p, eps):
    U = random_field(tiny, rng)
    E, g = p_energy_gradient(tiny, U, p, eps)
    assert E == pytest.approx(p_energy(tiny, U, p, eps))
    V = rng.normal(size=U.shape)
    h = 1e-6
    fd = (p_energy(tiny, U + h * V, p, eps) - p_energy(tiny, U - h * V, p, eps)) / (2 * h)
    assert np.sum(g * V) == pytest.approx(fd, rel=1e-6)


@pytest.mark.parametrize("p,eps", [(3.0, 0.0), (3.1, 1e-3)])
def test_hessian_matches_finite_differences(tiny, rng, p, eps):
    U = random_field(tiny, rng)
    H = p_energy_hessian(tiny, U, p, eps)
    assert abs(H - H.T).max() < 1e-10 * abs(H).max()
    V = rng.normal(size=U.shape)
    h = 1e-6
    g1 = p_energy_gradient(tiny, U + h * V, p, eps)[1]
    g0 = p_energy_gradient(tiny, U - h * V, p, eps)[1]
    fd = ((g1 - g0) / (2 * h)).ravel()
    assert np.allclose(H @ V.ravel(), fd, rtol=1e-5, atol=1e-6 * np.abs(fd).max())


def test_stiffness_and_mass(coarse_ball):
    K = stiffness_matrix(coarse_ball)
    M = mass_matrix(coarse_ball)
    ones = np.ones(coarse_ball.num_vertices)
    assert np.abs(K @ ones).max() < 1e-12
    assert ones @ M @ ones == pytest.approx(coarse_ball.total_volume)
    x = coarse_ball.vertices[:, 0]
    # Dirichlet energy of a linear function is |grad|^2 times the volume
    assert x @ K @ x == pytest.approx(coarse_ball.total_volume)


def test_harmonic_extension_reproduces_linear(coarse_ball, rng):
    A = rng.normal(size=(3, 3))
    b = coarse_ball.boundary_vertex_ids
    U = harmonic_extension(coarse_ball)(coarse_ball.vertices[b] @ A.T)
    assert np.allclose(U, coarse_ball.vertices @ A.T, atol=1e-10)
    assert harmonic_extension(coarse_ball) is harmonic_extension(coarse_ball)


class TestPCG:
    def test_solves_spd(self, rng):
        B = rng.normal(size=(40, 40))
        A = B @ B.T + 40 * np.eye(40)
        b = rng.normal(size=40)
        res = pcg(A, b, lambda r: r / np.diag(A), rtol=1e-12)
        assert res.converged and not res.negative_curvature
        assert np.allclose(A @ res.x, b, atol=1e-9)

    def test_matches_sparse_direct(self, coarse_ball, rng):
        A = (stiffness_matrix(coarse_ball) + mass_matrix(coarse_ball)).tocsr()
        b = rng.normal(size=A.shape[0])
        res = pcg(A, b, lambda r: r, rtol=1e-12, maxiter=5000)
        ref = sp.linalg.spsolve(A.tocsc(), b)
        assert np.allclose(res.x, ref, atol=1e-8)

    def test_reports_negative_curvature(self):
        A = np.diag([1.0, -1.0, 2.0])
        res = pcg(A, np.ones(3), lambda r: r)
        assert res.negative_curvature and not res.converged

    def test_zero_rhs(self):
        res = pcg(np.eye(3), np.zeros(3), lambda r: r)
        assert res.converged and res.iterations == 0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_tangent_bases_orthonormal_and_perpendicular(v):
    u = np.array(v) / np.linalg.norm(v)
    T = tangent_bases(u[None])[0]
    assert np.allclose(T.T @ T, np.eye(2), atol=1e-12)
    assert np.allclose(u @ T, 0.0, atol=1e-12)


def test_tangent_bases_at_north_pole():
    for u in (np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, -1.0])):
        T = tangent_bases(u[None])[0]
        assert np.allclose(np.abs(T), np.eye(3)[:, :2])
