import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nharm.errors import PreconditionError
from nharm.geometry import build_diffeomorphism
from nharm.mobius import (
    MobiusMap,
    almost_mobius,
    almost_mobius_map,
    cap_energy,
    concentration_report,
    mobius_energy,
    orientation_fix,
    psi,
)
from nharm.quadrature import sphere_rule

GROUND = 4.0 * np.sqrt(3.0) * np.pi
# independent value: axisymmetric double integral of a finite-difference |dM|^3.1
# over the unit ball in x (scipy dblquad, tolerance 1e-10)
P31_AT_03 = 23.26290199219


def centres(n=3, max_norm=0.95):
    return st.lists(st.floats(-1, 1), min_size=n, max_size=n).map(np.array).filter(
        lambda v: 1e-3 < np.linalg.norm(v) < max_norm
    )


def naive_mobius(a, x):
    """M_a = psi_a / |psi_a|^2 straight from the definition."""
    q = psi(a, x)
    return q / np.sum(q * q, axis=-1, keepdims=True)


class TestMobiusMap:
    @settings(max_examples=40, deadline=None)
    @given(centres())
    def test_closed_form_matches_definition(self, a):
        x = np.array([[0.1, -0.2, 0.3], [0.5, 0.5, -0.1], [0.0, 0.0, -0.9]])
        x = x[np.linalg.norm(x - a, axis=1) > 1e-3]
        m = MobiusMap(a, np.eye(3))
        assert np.allclose(m.apply(x), naive_mobius(a, x), atol=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(centres())
    def test_sends_centre_to_origin_and_sphere_to_sphere(self, a):
        m = MobiusMap.centred(a)
        assert np.allclose(m.apply(a[None]), 0.0, atol=1e-12)
        X, _ = sphere_rule(3, 6)
        assert np.allclose(np.linalg.norm(m.apply(X), axis=1), 1.0, atol=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(centres(max_norm=0.9))
    def test_differential_is_conformal_and_matches_fd(self, a):
        m = MobiusMap.centred(a)
        x = np.array([[0.2, 0.1, -0.3], [-0.4, 0.3, 0.2]])
        D = m.differential(x)
        lam = m.conformal_factor(x)
        for k in range(len(x)):
            assert np.allclose(D[k].T @ D[k], lam[k] ** 2 * np.eye(3), rtol=1e-9, atol=1e-9)
        h = 1e-6
        for j, e in enumerate(np.eye(3)):
            fd = (m.apply(x + h * e) - m.apply(x - h * e)) / (2 * h)
            assert np.allclose(D[:, :, j], fd, rtol=1e-5, atol=1e-6 * lam.max())

    @settings(max_examples=40, deadline=None)
    @given(centres())
    def test_inverse(self, a):
        m = MobiusMap.centred(a)
        x = np.array([[0.1, 0.2, 0.3], [-0.5, 0.1, 0.4]])
        assert np.allclose(m.inverse(m.apply(x)), x, atol=1e-9)
        assert np.allclose(m.inverse_conformal_factor(m.apply(x)) * m.conformal_factor(x), 1.0)

    def test_orientation_fix_makes_degree_one(self):
        for n in (2, 3):
            m = MobiusMap.centred(np.full(n, 0.2))
            assert m.degree_sign == 1
            assert np.linalg.det(m.differential(np.zeros((1, n)))[0]) > 0
        assert np.allclose(orientation_fix(3), np.diag([-1.0, 1.0, 1.0]))
        assert np.allclose(MobiusMap.centred(np.zeros(3)).apply(np.array([[0.2, 0.3, 0.1]])), [[0.2, -0.3, -0.1]])

    def test_rejects_centre_outside_ball(self):
        with pytest.raises(PreconditionError):
            MobiusMap.centred(np.array([1.0, 0.0, 0.0]))

    def test_psi_singular_at_centre(self):
        a = np.array([0.1, 0.0, 0.0])
        with pytest.raises(PreconditionError):
            psi(a, a[None])


class TestMobiusEnergy:
    @settings(max_examples=30, deadline=None)
    @given(centres(max_norm=0.999))
    def test_conformal_energy_is_invariant(self, a):
        e = mobius_energy(MobiusMap.centred(a))
        assert abs(e.value - GROUND) < 1e-10

    def test_p_energy_against_independent_quadrature(self):
        e = mobius_energy(MobiusMap.centred(np.array([0.0, 0.0, 0.3])), p=3.1)
        assert e.value == pytest.approx(P31_AT_03, rel=1e-9)

    def test_mesh_energy_close_to_ground(self, ball):
        e = mobius_energy(MobiusMap.centred(np.array([0.5, 0.0, 0.0])), dom=ball)
        assert abs(e.value - GROUND) / GROUND < 5e-3
        assert not e.warnings

    def test_mesh_energy_warns_near_boundary(self, coarse_ball):
        with pytest.warns(RuntimeWarning, match="under-resolved"):
            e = mobius_energy(MobiusMap.centred(np.array([0.0, 0.0, 0.9])), dom=coarse_ball)
        assert e.warnings

    def test_p_energy_grows_with_concentration(self):
        vals = [mobius_energy(MobiusMap.centred(np.array([0, 0, s])), p=3.1).value for s in (0.0, 0.5, 0.9, 0.99)]
        assert np.all(np.diff(vals) > 0)

    def test_low_exponent_rejected(self):
        with pytest.raises(PreconditionError):
            mobius_energy(MobiusMap.centred(np.zeros(3)), p=2.0)


class TestConcentration:
    def test_whole_ball_cap(self):
        m = MobiusMap.centred(np.array([0.0, 0.0, 0.6]))
        assert cap_energy(m, np.zeros(3), 1.0) == pytest.approx(GROUND, rel=1e-12)

    def test_cap_energy_against_sampling(self):
        # fraction of image volume: Monte Carlo in the target variable
        m = MobiusMap.centred(np.array([0.0, 0.0, 0.7]))
        rng = np.random.default_rng(0)
        z = rng.uniform(-1, 1, size=(400_000, 3))
        z = z[np.sum(z * z, axis=1) < 1]
        x = m.inverse(z)
        frac = np.mean(np.linalg.norm(x - np.array([0, 0, 1.0]), axis=1) < 0.5)
        assert cap_energy(m, np.array([0, 0, 1.0]), 0.5) == pytest.approx(frac * GROUND, abs=0.05)

    def test_energy_concentrates_as_r_shrinks(self):
        a = np.array([0.0, 0.0, 1.0])
        reports = [concentration_report(a, r) for r in (0.4, 0.2, 0.1)]
        inside = [rep.energy_in_cap for rep in reports]
        l1 = [rep.l1_distance_to_constant for rep in reports]
        assert np.all(np.diff(inside) > 0)
        assert np.all(np.diff(l1) < 0)
        for rep in reports:
            assert rep.total_energy == pytest.approx(GROUND)

    def test_rejects_interior_anchor(self):
        with pytest.raises(PreconditionError):
            concentration_report(np.array([0.0, 0.0, 0.5]), 0.1)


class TestAlmostMobius:
    def test_on_ball_equals_mobius(self):
        phi = build_diffeomorphism(3, 0.0)
        a = np.array([0.0, 0.0, 1.0])
        u = almost_mobius_map(0.2, a, phi)
        m = MobiusMap.centred(0.8 * a)
        x = np.array([[0.1, 0.2, 0.3]])
        assert np.allclose(u(x), m.apply(x))
        assert u.energy(3.0) == pytest.approx(GROUND, rel=1e-12)

    def test_perturbed_energy_close_to_ground(self):
        phi = build_diffeomorphism(3, 0.05)
        a = phi.project_to_boundary(np.array([0.0, 0.0, 1.0]))
        u = almost_mobius_map(0.05, a, phi)
        # small r concentrates near a, where the conformal correction is exact to first order
        assert abs(u.energy(3.0) - GROUND) / GROUND < 0.02

    def test_differential_matches_fd(self):
        phi = build_diffeomorphism(3, 0.05)
        a = phi.project_to_boundary(np.array([1.0, 0.0, 0.0]))
        u = almost_mobius_map(0.3, a, phi)
        x = np.array([[0.1, -0.2, 0.2]])
        h = 1e-6
        D = u.differential(x)[0]
        fd = np.column_stack([(u(x + h * e) - u(x - h * e))[0] / (2 * h) for e in np.eye(3)])
        assert np.allclose(D, fd, atol=1e-6)

    def test_nodal_field_has_unit_boundary(self, coarse_ball):
        phi = coarse_ball.phi
        v = almost_mobius(0.3, np.array([0.0, 0.0, 1.0]), phi, None, coarse_ball)
        b = coarse_ball.boundary_flags
        assert np.allclose(np.linalg.norm(v.values[b], axis=1), 1.0)
        assert v.claimed_degree == 1

    def test_r_range(self):
        with pytest.raises(PreconditionError):
            almost_mobius_map(1.5, np.array([0.0, 0.0, 1.0]), build_diffeomorphism(3, 0.0))
