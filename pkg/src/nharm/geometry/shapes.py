"""Diffeomorphisms from a domain onto the unit ball.

Every built-in domain is the image of the unit ball under an explicit map
``Psi``; the diffeomorphism ``Phi = Psi^{-1}`` sends the domain back onto the
ball.  The boundary of the domain is then the zero set of
``rho(x) = 1 - |Phi(x)|``, which is what the straightening chart uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import PreconditionError
from ..quadrature import ball_product_rule


class Diffeomorphism:
    """Base class: a map Phi from the closure of a domain onto the closed unit ball."""

    n: int

    def forward(self, x: np.ndarray) -> np.ndarray:  # Phi
        raise NotImplementedError

    def differential(self, x: np.ndarray) -> np.ndarray:  # dPhi, shape (..., n, n)
        raise NotImplementedError

    def inverse(self, y: np.ndarray) -> np.ndarray:  # Psi = Phi^{-1}
        raise NotImplementedError

    def inverse_differential(self, y: np.ndarray) -> np.ndarray:  # dPsi at y
        raise NotImplementedError

    @property
    def is_identity(self) -> bool:
        return False

    # Boundary description -------------------------------------------------
    def level_set(self, x: np.ndarray) -> np.ndarray:
        """rho(x) = 1 - |Phi(x)|: positive inside, zero on the boundary."""
        return 1.0 - np.linalg.norm(self.forward(x), axis=-1)

    def level_set_gradient(self, x: np.ndarray) -> np.ndarray:
        y = self.forward(x)
        D = self.differential(x)
        r = np.linalg.norm(y, axis=-1, keepdims=True)
        return -np.einsum("...ij,...i->...j", D, y / r)

    def project_to_boundary(self, x: np.ndarray) -> np.ndarray:
        """Continuous projection onto the boundary along the rays of the ball chart."""
        y = self.forward(x)
        y = y / np.linalg.norm(y, axis=-1, keepdims=True)
        return self.inverse(y)

    def outward_normal(self, x: np.ndarray) -> np.ndarray:
        g = self.level_set_gradient(x)
        return -g / np.linalg.norm(g, axis=-1, keepdims=True)

    def c1_distance_to_identity(self, npts: int = 12) -> float:
        """max(sup|Phi - Id|, sup||dPhi - Id||_2) sampled on a quadrature grid of the domain."""
        ys, _ = ball_product_rule(self.n, npts, npts)
        xs = self.inverse(np.vstack([ys, _sphere_points(self.n, npts)]))
        d0 = np.max(np.linalg.norm(self.forward(xs) - xs, axis=-1))
        d1 = np.max(np.linalg.norm(self.differential(xs) - np.eye(self.n), ord=2, axis=(-2, -1)))
        return float(max(d0, d1))


def _sphere_points(n: int, npts: int) -> np.ndarray:
    from ..quadrature import sphere_rule

    return sphere_rule(n, npts)[0]


@dataclass(frozen=True)
class IdentityDiffeo(Diffeomorphism):
    """The unit ball itself."""

    n: int

    def forward(self, x):
        return np.array(x, dtype=float, copy=True)

    def differential(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.eye(self.n), x.shape[:-1] + (self.n, self.n)).copy()

    def inverse(self, y):
        return np.array(y, dtype=float, copy=True)

    def inverse_differential(self, y):
        return self.differential(y)

    @property
    def is_identity(self) -> bool:
        return True

    def level_set(self, x):
        return 1.0 - np.linalg.norm(x, axis=-1)

    def project_to_boundary(self, x):
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    def c1_distance_to_identity(self, npts: int = 12) -> float:
        return 0.0


def default_bump(n: int) -> np.ndarray:
    """Sectoral degree-2 harmonic x1^2 - x2^2, with range [-1, 1] on the sphere."""
    Q = np.zeros((n, n))
    Q[0, 0], Q[1, 1] = 1.0, -1.0
    return Q


@dataclass(frozen=True)
class RadialBumpDiffeo(Diffeomorphism):
    """Phi for the domain Psi(B^n), Psi(y) = y (1 + L0 * y^T Q y).

    Psi preserves rays, so the boundary is the radial graph r = 1 + L0 q(theta)
    with q the quadratic form of Q restricted to the sphere.  Inverting Psi is a
    scalar cubic solve along each ray.
    """

    n: int
    amplitude: float
    Q: np.ndarray = field(repr=False)

    def _q(self, y):
        return np.einsum("...i,ij,...j->...", y, self.Q, y)

    def inverse(self, y):
        y = np.asarray(y, dtype=float)
        return y * (1.0 + self.amplitude * self._q(y))[..., None]

    def inverse_differential(self, y):
        y = np.asarray(y, dtype=float)
        g = 1.0 + self.amplitude * self._q(y)
        Qy = y @ self.Q.T
        eye = np.eye(self.n)
        return g[..., None, None] * eye + 2.0 * self.amplitude * y[..., :, None] * Qy[..., None, :]

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        safe = np.where(r > 0, r, 1.0)
        d = x / safe[..., None]
        c = self.amplitude * self._q(d)
        s = r.copy()
        for _ in range(60):
            f = s + c * s**3 - r
            step = f / (1.0 + 3.0 * c * s**2)
            s = s - step
            if np.all(np.abs(step) <= 1e-15 * np.maximum(1.0, np.abs(s))):
                break
        return d * s[..., None]

    def differential(self, x):
        y = self.forward(x)
        return np.linalg.inv(self.inverse_differential(y))


def build_diffeomorphism(n: int, amplitude: float, shape: np.ndarray | None = None) -> Diffeomorphism:
    """Validated constructor for the perturbed-ball diffeomorphism."""
    if amplitude == 0.0:
        return IdentityDiffeo(n)
    Q = default_bump(n) if shape is None else np.asarray(shape, dtype=float)
    Q = 0.5 * (Q + Q.T)
    phi = RadialBumpDiffeo(n, float(amplitude), Q)
    ys, _ = ball_product_rule(n, 10, 16)
    from ..quadrature import sphere_rule

    ys = np.vstack([ys, sphere_rule(n, 24)[0]])
    det = np.linalg.det(phi.inverse_differential(ys))
    if np.min(det) <= 0.0:
        raise PreconditionError(
            f"non-positive Jacobian: perturbation amplitude {amplitude} is too large (min det {np.min(det):.3g})"
        )
    if abs(amplitude) >= 0.3:
        raise PreconditionError(f"perturbation amplitude must be below 0.3, got {amplitude}")
    return phi
