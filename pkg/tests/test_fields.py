import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nharm.errors import DegreeAmbiguousError, PreconditionError
from nharm.fields import (
    MapField,
    boundary_degree,
    brezis_lieb_jacobian_defect,
    conformality_defect,
    degree_estimates,
    energy,
    hadamard_gap,
    jacobian_integral,
    transfer,
)
from nharm.geometry import uniform_refinement
from nharm.mobius import MobiusMap


def bump(dom, scale=0.3):
    """Smooth perturbation vanishing at boundary vertices."""
    x = dom.vertices
    w = (1.0 - np.sum(x * x, axis=1))[:, None] * np.sin(3.0 * x[:, ::-1] + 0.5)
    w[dom.boundary_flags] = 0.0
    return scale * w


class TestEnergy:
    @pytest.mark.parametrize("p", [3.0, 3.1, 4.0])
    def test_identity_energy_is_scaled_volume(self, coarse_ball, p):
        e = energy(MapField.identity(coarse_ball), p)
        assert e.value == pytest.approx(3 ** (p / 2) * coarse_ball.total_volume, rel=1e-13)
        assert e.error_estimate > 0

    def test_linear_field_energy(self, coarse_ball, rng):
        A = rng.normal(size=(3, 3))
        u = MapField(coarse_ball, coarse_ball.vertices @ A.T)
        assert energy(u, 3.0).value == pytest.approx(np.linalg.norm(A) ** 3 * coarse_ball.total_volume, rel=1e-12)

    def test_constant_has_zero_energy(self, coarse_ball):
        u = MapField.constant(coarse_ball, [0.0, 0.0, 1.0])
        assert energy(u, 3.0).value < 1e-30

    def test_rejects_small_exponent(self, coarse_ball):
        with pytest.raises(PreconditionError):
            energy(MapField.identity(coarse_ball), 1.5)


class TestDegree:
    def test_identity(self, coarse_ball):
        r = degree_estimates(MapField.identity(coarse_ball))
        assert r.degree == 1
        assert abs(r.pullback_estimate - 1.0) < 1e-10
        assert abs(r.jacobian_estimate - 1.0) < 0.1

    def test_constant_is_degree_zero(self, coarse_ball):
        assert boundary_degree(MapField.constant(coarse_ball, [1.0, 0.0, 0.0])) == 0

    def test_reflection_is_degree_minus_one(self, coarse_ball):
        u = MapField.from_function(coarse_ball, lambda x: x * np.array([-1.0, 1.0, 1.0]), normalize_boundary=True)
        assert boundary_degree(u) == -1

    def test_disk_rotation_twice(self, disk):
        def square(x):
            z = (x[:, 0] + 1j * x[:, 1]) ** 2
            return np.column_stack([z.real, z.imag])

        u = MapField.from_function(disk, square, normalize_boundary=True)
        assert boundary_degree(u) == 2

    def test_mobius_degree_one(self, ball):
        m = MobiusMap.centred(np.array([0.0, 0.4, 0.0]))
        u = MapField.from_function(ball, m.apply, normalize_boundary=True)
        assert boundary_degree(u) == 1

    def test_ambiguous_degree_raises(self, disk):
        # z^20 winds twenty times, but the flat image polygon of the coarse
        # boundary covers far less area, so the two estimates disagree
        def power(x):
            z = (x[:, 0] + 1j * x[:, 1]) ** 20
            return np.column_stack([z.real, z.imag])

        u = MapField.from_function(disk, power, normalize_boundary=True)
        with pytest.raises(DegreeAmbiguousError):
            degree_estimates(u)

    def test_needs_unit_boundary(self, coarse_ball):
        u = MapField(coarse_ball, 2.0 * coarse_ball.vertices)
        with pytest.raises(PreconditionError):
            degree_estimates(u)


class TestJacobianIdentities:
    def test_hadamard_slack_zero_for_identity(self, coarse_ball):
        g = hadamard_gap(MapField.identity(coarse_ball))
        assert abs(g.slack) < 1e-12 * g.energy

    @settings(max_examples=15, deadline=None)
    @given(st.floats(0.05, 0.5))
    def test_hadamard_inequality(self, scale):
        from nharm.geometry import build_ball_mesh

        dom = build_ball_mesh(3, 0.3)
        u = MapField(dom, dom.vertices + bump(dom, scale))
        assert hadamard_gap(u).slack >= -1e-12

    def test_jacobian_integral_boundary_determined(self, coarse_ball):
        u = MapField.identity(coarse_ball)
        v = MapField(coarse_ball, coarse_ball.vertices + bump(coarse_ball))
        assert jacobian_integral(v) == pytest.approx(jacobian_integral(u), rel=1e-12)

    @pytest.mark.parametrize("which", ["disk", "coarse_ball"])
    def test_brezis_lieb_defect_vanishes_for_compact_perturbations(self, which, request):
        dom = request.getfixturevalue(which)
        u = MapField.identity(dom)
        seq = [MapField(dom, dom.vertices + bump(dom, s)) for s in (0.5, 0.2, 0.1)]
        assert max(brezis_lieb_jacobian_defect(seq, u)) < 1e-12

    def test_brezis_lieb_needs_common_mesh(self, coarse_ball, disk):
        with pytest.raises(PreconditionError):
            brezis_lieb_jacobian_defect([MapField.identity(disk)], MapField.identity(coarse_ball))


class TestConformality:
    def test_identity_and_mobius(self, ball):
        assert conformality_defect(MapField.identity(ball)) < 1e-24
        m = MobiusMap.centred(np.array([0.3, 0.0, 0.0]))
        u = MapField.from_function(ball, m.apply)
        assert conformality_defect(u) < 1e-2

    def test_stretch_is_not_conformal(self, coarse_ball):
        u = MapField(coarse_ball, coarse_ball.vertices * np.array([2.0, 1.0, 1.0]))
        assert conformality_defect(u) > 0.05


def test_transfer_preserves_linear_fields(coarse_ball, rng):
    fine = uniform_refinement(coarse_ball)
    A = rng.normal(size=(3, 3))
    u = MapField(coarse_ball, coarse_ball.vertices @ A.T)
    v = transfer(u, fine)
    assert np.allclose(v.values, fine.vertices @ A.T, atol=1e-10)


def test_evaluate_interpolates(coarse_ball, rng):
    u = MapField.identity(coarse_ball)
    x = rng.uniform(-0.4, 0.4, size=(30, 3))
    assert np.allclose(u.evaluate(x), x, atol=1e-12)


def test_shape_validation(coarse_ball):
    with pytest.raises(PreconditionError):
        MapField(coarse_ball, np.zeros((3, 3)))
