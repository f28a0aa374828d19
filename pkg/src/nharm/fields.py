"""Piecewise-linear maps on a mesh: energies, Jacobians and the topological degree."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegreeAmbiguousError, PreconditionError
from .quadrature import unit_ball_volume, unit_sphere_area

DEGREE_TOL = 0.2


@dataclass(frozen=True, eq=False)
class MapField:
    """Nodal values of a map u: Omega -> R^n, linear on each simplex."""

    dom: object
    values: np.ndarray
    claimed_degree: int | None = None
    boundary_unit_norm: bool = False

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.shape != (self.dom.num_vertices, self.dom.n):
            raise PreconditionError(f"field must have shape {(self.dom.num_vertices, self.dom.n)}, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise PreconditionError("field values must be finite")
        if self.boundary_unit_norm:
            dev = np.abs(np.linalg.norm(vals[self.dom.boundary_flags], axis=1) - 1.0)
            if dev.size and dev.max() > 1e-10:
                raise PreconditionError(f"boundary values leave the unit sphere by {dev.max():.3g}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.dom.n

    @classmethod
    def from_function(cls, dom, f, claimed_degree=None, normalize_boundary: bool = False) -> "MapField":
        vals = np.asarray(f(dom.vertices), dtype=float)
        if normalize_boundary:
            vals = vals.copy()
            b = dom.boundary_flags
            vals[b] /= np.linalg.norm(vals[b], axis=1, keepdims=True)
        return cls(dom, vals, claimed_degree, normalize_boundary)

    @classmethod
    def identity(cls, dom) -> "MapField":
        vals = dom.vertices if dom.phi.is_identity else dom.phi.forward(dom.vertices)
        return cls.from_function(dom, lambda x: vals, 1, normalize_boundary=True)

    @classmethod
    def constant(cls, dom, c) -> "MapField":
        c = np.asarray(c, dtype=float)
        unit = abs(np.linalg.norm(c) - 1.0) <= 1e-12
        return cls(dom, np.broadcast_to(c, (dom.num_vertices, dom.n)), 0 if unit else None, bool(unit))

    def with_values(self, values, claimed_degree=None, boundary_unit_norm=None) -> "MapField":
        bun = self.boundary_unit_norm if boundary_unit_norm is None else boundary_unit_norm
        return MapField(self.dom, values, claimed_degree, bun)

    def gradients(self) -> np.ndarray:
        """Piecewise-constant differential, shape (S, n, n): G[s, c, d] = d u_c / d x_d."""
        U = self.values[self.dom.simplices]  # (S, n+1, n)
        return np.einsum("sic,sid->scd", U, self.dom.barycentric_gradients)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Linear interpolation (extrapolation just outside the mesh) at arbitrary points."""
        simp, bary = self.dom.locate(points)
        return np.einsum("pk,pkc->pc", bary, self.values[self.dom.simplices[simp]])

    def boundary_values(self) -> np.ndarray:
        return self.values[self.dom.boundary_flags]


@dataclass
class EnergyReport:
    p: float
    value: float
    breakdown: np.ndarray = field(repr=False)
    error_estimate: float = 0.0


def energy(u: MapField, p: float, eps: float = 0.0) -> EnergyReport:
    """Exact integral of |du|^p over the mesh for the piecewise-linear field.

    The error estimate is the energy the boundary simplices would carry over
    the curved layer the flat mesh misses (zero for polygonal domains).
    """
    if p < 2:
        raise PreconditionError(f"exponent must be at least 2, got {p}")
    G = u.gradients()
    dens = (np.sum(G * G, axis=(1, 2)) + eps * eps) ** (p / 2.0)
    parts = u.dom.volumes * dens
    total = float(np.sum(parts))
    return EnergyReport(float(p), total, parts, _curved_layer_error(u.dom, dens))


def _curved_layer_error(dom, density: np.ndarray) -> float:
    from .integrate import sliver_quadrature

    ball = dom.vertices if dom.phi.is_identity else dom.phi.forward(dom.vertices)
    _, w = sliver_quadrature(dom, 1, ball)
    missing = float(np.sum(w))
    touching = np.any(dom.boundary_flags[dom.simplices], axis=1)
    if not np.any(touching):
        return 0.0
    return missing * float(np.mean(density[touching]))


def jacobian_integral(u: MapField) -> float:
    """Integral of det du: exact per-simplex determinant times volume."""
    return float(np.sum(u.dom.volumes * np.linalg.det(u.gradients())))


def _boundary_pullback_degree(u: MapField) -> float:
    """Degree of the boundary trace as the signed area it sweeps on the sphere.

    Each boundary face is sent to the geodesic simplex spanned by the
    normalized images of its vertices; its signed angle (n = 2) or solid angle
    (n = 3) is summed and divided by the area of the sphere.
    """
    dom = u.dom
    W = u.values[dom.boundary_faces]
    W = W / np.linalg.norm(W, axis=-1, keepdims=True)
    if dom.n == 2:
        a, b = W[:, 0], W[:, 1]
        ang = np.arctan2(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0], np.sum(a * b, axis=1))
        return float(np.sum(ang) / (2.0 * np.pi))
    a, b, c = W[:, 0], W[:, 1], W[:, 2]
    num = np.einsum("ij,ij->i", a, np.cross(b, c))
    den = 1.0 + np.sum(a * b, axis=1) + np.sum(b * c, axis=1) + np.sum(c * a, axis=1)
    return float(np.sum(2.0 * np.arctan2(num, den)) / unit_sphere_area(3))


@dataclass
class DegreeReport:
    degree: int
    jacobian_estimate: float
    pullback_estimate: float


def degree_estimates(u: MapField) -> DegreeReport:
    """Both raw degree estimates and the agreed integer (raises when ambiguous)."""
    if not u.boundary_unit_norm:
        raise PreconditionError("the degree is defined for fields with unit boundary norm")
    jac = jacobian_integral(u) / unit_ball_volume(u.n)
    pull = _boundary_pullback_degree(u)
    dj, dp = int(round(jac)), int(round(pull))
    if abs(jac - dj) > DEGREE_TOL or abs(pull - dp) > DEGREE_TOL or dj != dp:
        raise DegreeAmbiguousError(
            f"degree ambiguous: Jacobian estimate {jac:.4f}, boundary pullback estimate {pull:.4f}"
        )
    return DegreeReport(dj, jac, pull)


def boundary_degree(u: MapField) -> int:
    return degree_estimates(u).degree


@dataclass
class HadamardGap:
    energy: float
    n_to_n2_times_abs_jac: float
    slack: float


def hadamard_gap(u: MapField) -> HadamardGap:
    """Slack in E_n(u) >= n^{n/2} |int Jac u|."""
    n = u.n
    E = energy(u, n).value
    J = n ** (n / 2.0) * abs(jacobian_integral(u))
    return HadamardGap(E, J, E - J)


def conformality_defect(u: MapField) -> float:
    """int ||du^T du - |det du|^{2/n} I||^2 divided by int |du|^4."""
    n = u.n
    G = u.gradients()
    C = np.einsum("sci,scj->sij", G, G)
    s = np.abs(np.linalg.det(G)) ** (2.0 / n)
    dev = C - s[:, None, None] * np.eye(n)
    vol = u.dom.volumes
    num = float(np.sum(vol * np.sum(dev * dev, axis=(1, 2))))
    den = float(np.sum(vol * np.sum(G * G, axis=(1, 2)) ** 2))
    return 0.0 if den == 0.0 else num / den


def brezis_lieb_jacobian_defect(u_seq: list[MapField], u_limit: MapField) -> list[float]:
    """|int Jac(u_k - u) - int Jac u_k + int Jac u| along a sequence."""
    out = []
    Ju = jacobian_integral(u_limit)
    for uk in u_seq:
        if uk.dom is not u_limit.dom:
            raise PreconditionError("all fields must live on the same domain")
        diff = MapField(uk.dom, uk.values - u_limit.values)
        out.append(abs(jacobian_integral(diff) - jacobian_integral(uk) + Ju))
    return out


def transfer(u: MapField, dom) -> MapField:
    """Interpolate u onto another mesh of the same domain (boundary values renormalized)."""
    vals = u.evaluate(dom.vertices)
    if u.boundary_unit_norm:
        b = dom.boundary_flags
        vals[b] /= np.linalg.norm(vals[b], axis=1, keepdims=True)
    return MapField(dom, vals, u.claimed_degree, u.boundary_unit_norm)
