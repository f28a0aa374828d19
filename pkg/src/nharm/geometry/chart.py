"""Rotations adapted to a direction and charts that flatten the boundary.

A chart at a boundary point ``a`` keeps the tangential displacement
``P (x - a)`` and replaces the normal coordinate by the boundary level set,

    f_a(x) = (P (x - a), rho(x) / |grad rho(a)|),

so the boundary is sent into the hyperplane ``y_n = 0`` and the domain into
``y_n > 0``.  At ``a`` the differential is the rotation ``O_a`` with
``O_a nu(a) = -e_n``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericalError, PreconditionError
from .shapes import Diffeomorphism


def frame(v: np.ndarray) -> np.ndarray:
    """A rotation F (det +1) with F v/|v| = e_n.

    Uses the rotation in the plane spanned by v and e_n.  When v points into
    the lower half-space the vector is first flipped by diag(-1, 1, ..., 1, -1)
    so the plane rotation never approaches the antipodal singularity.
    """
    v = np.asarray(v, dtype=float)
    n = len(v)
    v = v / np.linalg.norm(v)
    D = np.eye(n)
    if v[-1] < 0.0:
        D[0, 0] = D[-1, -1] = -1.0
        v = D @ v
    e = np.zeros(n)
    e[-1] = 1.0
    c = float(v @ e)
    K = np.outer(e, v) - np.outer(v, e)
    F = np.eye(n) + K + (K @ K) / (1.0 + c)
    return F @ D


@dataclass(frozen=True, eq=False)
class BoundaryChart:
    """The straightening chart f_a of a boundary point of the domain of ``phi``."""

    phi: Diffeomorphism
    anchor: np.ndarray
    rotation: np.ndarray  # O_a
    grad_norm: float  # |grad rho(a)|
    radius: float = 0.6  # the chart is used on B(a, radius) only

    @property
    def n(self) -> int:
        return len(self.anchor)

    @property
    def normal(self) -> np.ndarray:
        return -self.rotation[-1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        P = self.rotation[:-1]
        tang = (x - self.anchor) @ P.T
        height = self.phi.level_set(x) / self.grad_norm
        return np.concatenate([tang, height[..., None]], axis=-1)

    def differential(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        g = self.phi.level_set_gradient(x) / self.grad_norm
        P = np.broadcast_to(self.rotation[:-1], x.shape[:-1] + (self.n - 1, self.n))
        return np.concatenate([P, g[..., None, :]], axis=-2)

    def inverse(self, y: np.ndarray, tol: float = 1e-14, maxiter: int = 50) -> np.ndarray:
        """Solve f_a(x) = y along the normal line through a + P^T y'."""
        y = np.asarray(y, dtype=float)
        nu = self.normal
        base = self.anchor + y[..., :-1] @ self.rotation[:-1]
        target = y[..., -1] * self.grad_norm
        s = y[..., -1].copy()
        for _ in range(maxiter):
            x = base - s[..., None] * nu
            f = self.phi.level_set(x) - target
            df = -np.einsum("...j,j->...", self.phi.level_set_gradient(x), nu)
            if np.any(np.abs(df) < 1e-8):
                raise NumericalError("straightening chart is singular: level set tangent to the normal line")
            step = f / df
            s = s - step
            if np.all(np.abs(step) <= tol):
                break
        return base - s[..., None] * nu

    def inverse_differential(self, y: np.ndarray) -> np.ndarray:
        return np.linalg.inv(self.differential(self.inverse(y)))


def distance_to_boundary(phi: Diffeomorphism, x: np.ndarray) -> np.ndarray:
    """First-order distance estimate rho / |grad rho| (exact on the ball)."""
    return phi.level_set(x) / np.linalg.norm(phi.level_set_gradient(x), axis=-1)


def chart_at(phi: Diffeomorphism, a: np.ndarray, radius: float = 0.6) -> BoundaryChart:
    """Chart at the boundary point ``a`` (projected onto the boundary first)."""
    a = phi.project_to_boundary(np.asarray(a, dtype=float))
    g = phi.level_set_gradient(a)
    gn = float(np.linalg.norm(g))
    nu = -g / gn
    return BoundaryChart(phi, a, frame(-nu), gn, radius)


def straighten_boundary(dom, a: np.ndarray) -> BoundaryChart:
    """Chart f_a flattening the boundary of ``dom`` near the boundary point ``a``.

    Raises PreconditionError when ``a`` is farther than one mesh size from the
    boundary.
    """
    a = np.asarray(a, dtype=float)
    if a.shape != (dom.n,):
        raise PreconditionError(f"anchor must be a point of R^{dom.n}")
    with np.errstate(invalid="ignore", divide="ignore"):
        dist = abs(float(distance_to_boundary(dom.phi, a)))
    if not dist <= dom.max_edge_length:
        raise PreconditionError(f"point is {dist:.3g} away from the boundary, more than the mesh size")
    return chart_at(dom.phi, a)
