import numpy as np
import pytest

from nharm.errors import PreconditionError
from nharm.geometry import build_diffeomorphism
from nharm.minmax import (
    BarycenterMap,
    Filling,
    barycenter_zero,
    boundary_anchors,
    c1_level,
    canonical_filling,
    fibonacci_sphere,
    filling_upper_bound,
    interior_anchors,
    path_energy,
)
from nharm.mobius import MobiusMap, almost_mobius_map, mobius_energy

GROUND = 4 * np.sqrt(3) * np.pi


@pytest.fixture(scope="module")
def perturbed():
    return build_diffeomorphism(3, 0.05)


@pytest.fixture(scope="module")
def ball_phi():
    return build_diffeomorphism(3, 0.0)


class TestAnchors:
    @pytest.mark.parametrize("n", [2, 3])
    def test_fibonacci_points_on_sphere(self, n):
        X = fibonacci_sphere(50, n)
        assert X.shape == (50, n)
        assert np.allclose(np.linalg.norm(X, axis=1), 1.0)
        assert np.linalg.norm(X.mean(axis=0)) < 0.05

    def test_boundary_anchors_on_boundary(self, perturbed):
        A = boundary_anchors(perturbed, 20)
        assert np.max(np.abs(perturbed.level_set(A))) < 1e-10

    def test_interior_anchors_inside(self, perturbed):
        A = interior_anchors(perturbed, 17)
        assert len(A) == 17
        assert np.all(perturbed.level_set(A) > 0)
        assert np.allclose(A[0], perturbed.inverse(np.zeros((1, 3)))[0])

    def test_count_validation(self):
        with pytest.raises(PreconditionError):
            fibonacci_sphere(0)


class TestC1:
    def test_ball_path_at_alpha_zero_is_ground(self, ball_phi):
        lvl = c1_level(0.2, 0.0, 10, ball_phi, h=None)
        assert np.allclose(lvl.table.energies, GROUND, rtol=1e-12)

    def test_ball_path_is_constant_in_the_anchor(self, ball_phi):
        lvl = c1_level(0.2, 0.1, 10, ball_phi, h=None)
        E = lvl.table.energies
        # the tensor rule is not rotation invariant, so off-axis anchors differ at quadrature level
        assert np.ptp(E) < 1e-8 * E.mean()
        ref = mobius_energy(MobiusMap.centred(np.array([0.0, 0.0, 0.8])), p=3.1, n_radial=16, n_angular=20).value
        assert lvl.c1 == pytest.approx(ref, rel=1e-8)

    def test_perturbed_path_is_above_ground(self, perturbed):
        lvl = c1_level(0.1, 0.0, 6, perturbed, h=None)
        assert lvl.c1 > GROUND
        assert len(lvl.table.rows()) == 6

    def test_c1_grows_with_alpha(self, perturbed):
        a = boundary_anchors(perturbed, 4)
        e = [path_energy(0.1, a[0], perturbed, alpha) for alpha in (0.0, 0.05, 0.1)]
        assert np.all(np.diff(e) > 0)

    def test_warns_when_unresolved(self, ball_phi):
        with pytest.warns(RuntimeWarning, match="2h"):
            lvl = c1_level(0.1, 0.1, 4, ball_phi, h=0.15)
        assert lvl.warnings

    @pytest.mark.parametrize("r,alpha", [(0.6, 0.1), (0.1, 0.3), (0.1, -0.1)])
    def test_parameter_ranges(self, ball_phi, r, alpha):
        with pytest.raises(PreconditionError):
            c1_level(r, alpha, 4, ball_phi, h=None)


class TestFilling:
    def test_upper_bound_dominates_boundary_members(self, perturbed):
        ub = filling_upper_bound(canonical_filling(perturbed, 0.1), 0.1, 0.1, 5, 6)
        assert ub.value >= ub.boundary_max >= ub.boundary.energies.min()
        lvl = c1_level(0.1, 0.1, 6, perturbed, h=None)
        # same boundary anchors, same maps: the boundary part of the bound is c1
        assert ub.boundary_max == pytest.approx(lvl.c1, rel=1e-12)

    def test_rejects_filling_with_wrong_boundary(self, perturbed):
        def shifted(a):
            return almost_mobius_map(0.15, a, perturbed)

        bad = Filling(perturbed, 0.1, core=shifted, name="shifted")
        with pytest.raises(PreconditionError, match="disagrees"):
            filling_upper_bound(bad, 0.1, 0.1, 5, 4)

    def test_rejects_mismatched_r(self, perturbed):
        with pytest.raises(PreconditionError):
            filling_upper_bound(canonical_filling(perturbed, 0.1), 0.2, 0.1, 5, 4)


class TestBarycenter:
    def test_boundary_values_follow_the_domain(self, ball_phi):
        G = BarycenterMap(canonical_filling(ball_phi, 0.05))
        a = np.array([0.0, 0.6, 0.8])
        g = G(a)
        # a concentrated member is nearly the constant a, so its average is close to a
        assert np.dot(g, a) > 0.7
        assert G.evaluations == 1
        G(a)
        assert G.evaluations == 1

    def test_ball_zero_is_the_centre(self, ball_phi):
        z = barycenter_zero(canonical_filling(ball_phi, 0.1), resolution=1e-2, max_levels=2)
        assert z.boundary_degree == 1
        assert z.norm <= 1e-2
        assert np.linalg.norm(z.anchor) < 0.05
