"""Möbius transformations of the unit ball and the almost-Möbius maps.

``M_a = psi_a / |psi_a|^2`` with ``psi_a(x) = a + (1 - |a|^2)(a - x)/|a - x|^2``
is a conformal bijection of the closed ball sending ``a`` to the origin.  In
closed form ``M_a(x) = N / D`` with

    N = |v|^2 a + c v,   D = |a|^2 |v|^2 + c^2 + 2 c a.v,   v = a - x,  c = 1 - |a|^2,

and its conformal factor is ``lambda(x) = c / D``.

Energies of concentrated maps are computed in the target variable
``z = M(y)``.  There ``|dM|^n dy = n^{n/2} dz`` and the only remaining weight
is a power of the conformal factor of ``M^{-1}``, which stays bounded, so a
fixed tensor rule on the ball resolves any concentration scale.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import acos, pi, sqrt

import numpy as np

from .errors import NumericalError, PreconditionError
from .geometry.conformal import ConformalizedDiffeo, conformalize_at
from .geometry.shapes import Diffeomorphism
from .integrate import domain_quadrature
from .quadrature import ball_product_rule, unit_ball_volume


def psi(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """The inversion-like map psi_a(x) = a + (1 - |a|^2)(a - x)/|a - x|^2."""
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    if float(a @ a) >= 1.0:
        raise PreconditionError("centre must lie in the open unit ball")
    v = a - x
    d2 = np.sum(v * v, axis=-1)
    if np.any(d2 <= 1e-28):
        raise PreconditionError("psi_a is singular at x = a")
    return a + (1.0 - a @ a) * v / d2[..., None]


def orientation_fix(n: int) -> np.ndarray:
    """Reflection making R M_a orientation preserving (M_a has degree (-1)^n)."""
    R = np.eye(n)
    if n % 2 == 1:
        R[0, 0] = -1.0
    return R


def _raw(a: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    c = 1.0 - a @ a
    v = a - x
    v2 = np.sum(v * v, axis=-1)
    N = v2[..., None] * a + c * v
    D = (a @ a) * v2 + c * c + 2.0 * c * (v @ a)
    return N, D, v


@dataclass(frozen=True, eq=False)
class MobiusMap:
    """The map x -> R M_a(x)."""

    a: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        R = np.asarray(self.R, dtype=float)
        if float(a @ a) >= 1.0:
            raise PreconditionError(f"Möbius centre must satisfy |a| < 1, got |a| = {np.linalg.norm(a):.6g}")
        if np.abs(R.T @ R - np.eye(len(a))).max() > 1e-12:
            raise PreconditionError("rotation factor is not orthogonal")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "R", R)

    @classmethod
    def centred(cls, a, normalize: bool = True) -> "MobiusMap":
        """M_a composed with the orientation fix so that the degree is +1."""
        a = np.asarray(a, dtype=float)
        R = orientation_fix(len(a)) if normalize else np.eye(len(a))
        return cls(a, R)

    @property
    def n(self) -> int:
        return len(self.a)

    @property
    def c(self) -> float:
        return float(1.0 - self.a @ self.a)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        N, D, _ = _raw(self.a, x)
        if np.any(D < 0.25 * self.c**2):
            raise PreconditionError("point outside the closed ball where the Möbius formula is regular")
        return (N / D[..., None]) @ self.R.T

    def conformal_factor(self, x: np.ndarray) -> np.ndarray:
        _, D, _ = _raw(self.a, np.asarray(x, dtype=float))
        return self.c / D

    def differential(self, x: np.ndarray) -> np.ndarray:
        """Analytic dM = -(c/D) (I - 2 e e^T)(I - 2 w w^T) with w = v/|v|, e = N/|N|."""
        x = np.asarray(x, dtype=float)
        N, D, v = _raw(self.a, x)
        n = self.n
        eye = np.eye(n)
        vn = np.linalg.norm(v, axis=-1, keepdims=True)
        Nn = np.linalg.norm(N, axis=-1, keepdims=True)
        at_centre = vn[..., 0] <= 1e-14
        w = np.where(at_centre[..., None], 0.0, v / np.where(vn > 0, vn, 1.0))
        e = np.where(at_centre[..., None], 0.0, N / np.where(Nn > 0, Nn, 1.0))
        Hv = eye - 2.0 * w[..., :, None] * w[..., None, :]
        He = eye - 2.0 * e[..., :, None] * e[..., None, :]
        dM = -(self.c / D)[..., None, None] * (He @ Hv)
        return self.R @ dM

    def inverse(self, z: np.ndarray) -> np.ndarray:
        """Closed-form inverse: M_a^{-1}(z) = a - c (z - a|z|^2) / (1 - 2 a.z + |a|^2 |z|^2)."""
        z = np.asarray(z, dtype=float) @ self.R
        a = self.a
        z2 = np.sum(z * z, axis=-1)
        den = 1.0 - 2.0 * (z @ a) + (a @ a) * z2
        return a - self.c * (z - z2[..., None] * a) / den[..., None]

    def inverse_conformal_factor(self, z: np.ndarray) -> np.ndarray:
        """Conformal factor of M^{-1} at z, equal to 1 / lambda(M^{-1}(z))."""
        z = np.asarray(z, dtype=float) @ self.R
        a = self.a
        den = 1.0 - 2.0 * (z @ a) + (a @ a) * np.sum(z * z, axis=-1)
        return self.c / den

    @property
    def degree_sign(self) -> int:
        return int(round(np.sign(np.linalg.det(self.R)) * (-1) ** self.n))


@dataclass
class EnergyEstimate:
    value: float
    error_estimate: float
    warnings: list[str] = field(default_factory=list)


def _ball_energy(m: MobiusMap, p: float, n_radial: int, n_angular: int) -> float:
    z, w = ball_product_rule(m.n, n_radial, n_angular)
    mu = m.inverse_conformal_factor(z)
    return float(m.n ** (p / 2.0) * np.sum(w * mu ** (m.n - p)))


def mobius_energy(m: MobiusMap, dom=None, p: float | None = None, npts: int = 3, n_radial: int = 24, n_angular: int = 32) -> EnergyEstimate:
    """Integral of |dM|^p over the unit ball.

    With a Domain the integral is a per-simplex quadrature of order five on the
    mesh plus radial slivers for the curved boundary layer; the error estimate
    is the change against the order-three rule.  Without a domain it is a
    tensor rule in the target variable (exact for p = n) whose error estimate is
    the change against a coarser tensor rule.
    """
    n = m.n
    p = float(n if p is None else p)
    if p < n - 0.5:
        raise PreconditionError(f"exponent must be at least n - 0.5, got {p}")
    notes: list[str] = []
    if dom is None:
        fine = _ball_energy(m, p, n_radial, n_angular)
        coarse = _ball_energy(m, p, n_radial // 2, n_angular // 2)
        return EnergyEstimate(fine, abs(fine - coarse), notes)
    if not dom.phi.is_identity:
        raise PreconditionError("Möbius energies are integrals over the unit ball; pass a ball mesh")
    h = dom.max_edge_length
    if 1.0 - np.linalg.norm(m.a) < 2.0 * h:
        msg = f"centre is within 2h = {2 * h:.3g} of the boundary; concentration is under-resolved"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)

    def quad(k):
        x, w = domain_quadrature(dom, k)
        return float(np.sum(w * (m.n ** 0.5 * m.conformal_factor(x)) ** p))

    fine = quad(npts)
    coarse = quad(max(1, npts - 1))
    return EnergyEstimate(fine, abs(fine - coarse), notes)


# ----------------------------------------------------------------------
# Concentration
# ----------------------------------------------------------------------
def _ball_intersection(n: int, d: float, rho: float) -> float:
    """Volume of B(0,1) intersected with B(d e, rho)."""
    R = 1.0
    if d >= R + rho:
        return 0.0
    if d <= abs(R - rho) + 1e-12:
        return unit_ball_volume(n) * min(R, rho) ** n
    if n == 2:
        t1 = rho**2 * acos((d * d + rho * rho - R * R) / (2 * d * rho))
        t2 = R**2 * acos((d * d + R * R - rho * rho) / (2 * d * R))
        t3 = 0.5 * sqrt((-d + rho + R) * (d + rho - R) * (d - rho + R) * (d + rho + R))
        return t1 + t2 - t3
    return pi * (R + rho - d) ** 2 * (d * d + 2 * d * rho - 3 * rho * rho + 2 * d * R + 6 * rho * R - 3 * R * R) / (12 * d)


@dataclass
class ConcentrationReport:
    r: float
    l1_distance_to_constant: float
    energy_in_cap: float
    energy_outside_cap: float
    warnings: list[str] = field(default_factory=list)

    @property
    def total_energy(self) -> float:
        return self.energy_in_cap + self.energy_outside_cap


def cap_energy(m: MobiusMap, centre: np.ndarray, radius: float) -> float:
    """n-energy of m over the unit ball intersected with B(centre, radius), centre on the axis of m.

    The image of a sphere under a Möbius map is a sphere, and the n-energy of
    a conformal map is n^{n/2} times the volume of the image.
    """
    n = m.n
    a = m.a
    ahat = a / np.linalg.norm(a)
    centre = np.asarray(centre, dtype=float)
    if np.linalg.norm(np.cross(np.pad(ahat, (0, 3 - n)), np.pad(centre, (0, 3 - n)))) > 1e-12:
        raise PreconditionError("cap centre must lie on the axis through the Möbius centre")
    ends = np.array([centre - radius * ahat, centre + radius * ahat])
    N, D, _ = _raw(a, ends)
    s = (N / D[:, None]) @ ahat
    rho = 0.5 * abs(s[1] - s[0])
    d = abs(0.5 * (s[0] + s[1]))
    inside = _ball_intersection(n, d, rho)
    pole = a / (a @ a)  # psi_a vanishes here, M_a sends it to infinity
    if np.linalg.norm(pole - centre) < radius:
        inside = unit_ball_volume(n) - inside
    return float(n ** (n / 2.0) * inside)


def concentration_report(a_boundary: np.ndarray, r: float, dom=None, hmin_factor: float = 0.25) -> ConcentrationReport:
    """L1 distance of M_{(1-r)a} to the constant a, and its n-energy inside and outside B(a, sqrt r)."""
    from .geometry.mesh import build_ball_mesh
    from .geometry.refine import refine_near

    a = np.asarray(a_boundary, dtype=float)
    if abs(np.linalg.norm(a) - 1.0) > 1e-10:
        raise PreconditionError("anchor must lie on the unit sphere")
    if not 0.0 < r <= 0.5:
        raise PreconditionError(f"r must lie in (0, 0.5], got {r}")
    n = len(a)
    m = MobiusMap.centred((1.0 - r) * a)
    notes: list[str] = []
    if dom is None:
        dom = refine_near(build_ball_mesh(n, 0.3), a, hmin_factor * r)
    if dom.simplex_diameters[np.argmin(np.linalg.norm(dom.vertices[dom.simplices].mean(axis=1) - a, axis=1))] > r:
        msg = "mesh does not resolve the concentration scale r near the anchor"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    x, w = domain_quadrature(dom, 3)
    raw = MobiusMap(m.a, np.eye(n))
    l1 = float(np.sum(w * np.linalg.norm(raw.apply(x) - a, axis=-1)))
    total = n ** (n / 2.0) * unit_ball_volume(n)
    e_in = cap_energy(m, a, sqrt(r))
    return ConcentrationReport(r, l1, e_in, total - e_in, notes)


# ----------------------------------------------------------------------
# Almost-Möbius maps
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class AlmostMobius:
    """The map x -> M(Phi_a(x)) with M = R M_{(1-r)Phi(a)}."""

    mobius: MobiusMap
    phi_a: Diffeomorphism
    r: float
    anchor: np.ndarray

    @property
    def n(self) -> int:
        return self.mobius.n

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.mobius.apply(self.phi_a.forward(x))

    def differential(self, x: np.ndarray) -> np.ndarray:
        y = self.phi_a.forward(x)
        return self.mobius.differential(y) @ self.phi_a.differential(x)

    def energy(self, p: float, n_radial: int = 16, n_angular: int = 20) -> float:
        """Integral of |du|^p over the domain, in the target variable z = M(Phi_a(x)).

        With B = dPhi_a at x = Phi_a^{-1}(M^{-1}(z)) and mu the conformal factor
        of M^{-1}, the integrand is mu^{n-p} |B|^p / det B.
        """
        n = self.n
        z, w = ball_product_rule(n, n_radial, n_angular)
        mu = self.mobius.inverse_conformal_factor(z)
        if self.phi_a.is_identity:
            return float(n ** (p / 2.0) * np.sum(w * mu ** (n - p)))
        y = self.mobius.inverse(z)
        x = self.phi_a.inverse(y)
        B = self.phi_a.differential(x)
        fro = np.linalg.norm(B, axis=(-2, -1))
        det = np.linalg.det(B)
        return float(np.sum(w * mu ** (n - p) * fro**p / det))


def almost_mobius_map(r: float, a: np.ndarray, phi: Diffeomorphism, phi_a: ConformalizedDiffeo | None = None) -> AlmostMobius:
    """chi_r(a) = M_{(1-r)Phi(a)} o Phi_a as an analytic map (degree +1 normalized)."""
    if not 0.0 < r < 1.0:
        raise PreconditionError(f"r must lie in (0, 1), got {r}")
    a = np.asarray(a, dtype=float)
    if phi_a is None:
        phi_a = conformalize_at(phi, a)
    centre = (1.0 - r) * phi.forward(a)
    return AlmostMobius(MobiusMap.centred(centre), phi_a, r, a)


def almost_mobius(r: float, a: np.ndarray, phi: Diffeomorphism, phi_a: ConformalizedDiffeo | None, dom):
    """Nodal sample of chi_r(a) on ``dom`` as a MapField with unit boundary norm."""
    from .fields import MapField

    u = almost_mobius_map(r, a, phi, phi_a)
    vals = u(dom.vertices)
    b = dom.boundary_flags
    norms = np.linalg.norm(vals[b], axis=1, keepdims=True)
    if np.any(np.abs(norms - 1.0) > 1e-8):
        raise NumericalError("almost-Möbius map does not send the mesh boundary to the sphere")
    vals[b] /= norms
    return MapField(dom, vals, claimed_degree=1, boundary_unit_norm=True)
