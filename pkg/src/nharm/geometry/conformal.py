"""Diffeomorphisms corrected to be conformal at a chosen point.

Given ``Phi`` close to the identity and a boundary point ``a``, the corrected
map ``Phi_a = Phi o f^{-1} o psi o f`` differs from ``Phi`` only through the
time-one flow ``psi`` of a compactly supported linear vector field written in
the straightening chart ``f`` at ``a``.  The field is chosen so that
``dPhi_a(a)`` is a positive multiple of a rotation while ``Phi_a(a) = Phi(a)``
and the boundary is still mapped onto the sphere.

For interior points close to the boundary the same field, built at the
boundary point ``Pi(a)`` and re-centred at ``a``, is scaled down by a cutoff
of the distance to the boundary, so the family is continuous in ``a`` and
equals ``Phi`` away from a collar of width ``eta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericalError, PreconditionError
from .chart import BoundaryChart, chart_at, frame
from .shapes import Diffeomorphism


# ----------------------------------------------------------------------
# Small dense linear algebra
# ----------------------------------------------------------------------
def polar_decomposition(A: np.ndarray, tol: float = 1e-14, maxiter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """A = R S with R orthogonal and S symmetric positive definite (Newton iteration)."""
    A = np.asarray(A, dtype=float)
    smin = np.linalg.svd(A, compute_uv=False).min()
    if smin < 1e-6:
        raise NumericalError(f"polar decomposition is ill-conditioned (smallest singular value {smin:.3g})")
    R = A.copy()
    for _ in range(maxiter):
        R_next = 0.5 * (R + np.linalg.inv(R).T)
        done = np.linalg.norm(R_next - R, ord=1) <= tol * np.linalg.norm(R_next, ord=1)
        R = R_next
        if done:
            break
    S = R.T @ A
    return R, 0.5 * (S + S.T)


def matrix_log_near_identity(M: np.ndarray, radius: float = 0.5) -> np.ndarray:
    """Principal logarithm of a matrix with ||M - I||_2 < radius.

    Inverse scaling and squaring: repeated Denman-Beavers square roots bring the
    matrix within 0.05 of the identity, a Mercator series with a bounded tail
    finishes the job, and the result is scaled back by 2^k.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    eye = np.eye(n)
    if np.linalg.norm(M - eye, ord=2) >= radius:
        raise PreconditionError(f"matrix is outside the convergence ball ||M - I|| < {radius}")
    k = 0
    X = M.copy()
    while np.linalg.norm(X - eye, ord=2) > 0.05:
        X = _sqrtm_db(X)
        k += 1
    E = X - eye
    q = np.linalg.norm(E, ord=2)
    out = np.zeros_like(E)
    term = eye.copy()
    j = 0
    while True:
        j += 1
        term = term @ E
        out += ((-1.0) ** (j + 1) / j) * term
        if q ** (j + 1) / ((j + 1) * (1.0 - q)) < 1e-18:
            break
    return out * 2.0**k


def _sqrtm_db(A: np.ndarray, tol: float = 1e-15, maxiter: int = 50) -> np.ndarray:
    Y, Z = A.copy(), np.eye(len(A))
    for _ in range(maxiter):
        Yn = 0.5 * (Y + np.linalg.inv(Z))
        Zn = 0.5 * (Z + np.linalg.inv(Y))
        done = np.linalg.norm(Yn - Y, ord=1) <= tol * np.linalg.norm(Yn, ord=1)
        Y, Z = Yn, Zn
        if done:
            break
    return Y


# ----------------------------------------------------------------------
# Cutoffs
# ----------------------------------------------------------------------
def smoothstep5(t: np.ndarray) -> np.ndarray:
    """C^2 quintic ramp from 0 (t <= 0) to 1 (t >= 1)."""
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10.0 - 15.0 * t + 6.0 * t**2)


def smoothstep5_derivative(t: np.ndarray) -> np.ndarray:
    inside = (t > 0.0) & (t < 1.0)
    t = np.clip(t, 0.0, 1.0)
    return np.where(inside, 30.0 * t**2 * (1.0 - t) ** 2, 0.0)


@dataclass(frozen=True)
class CutoffParams:
    """Support radius of the chart bump and width of the boundary collar."""

    support: float = 0.45  # chi = 0 for |y| >= support, chi = 1 for |y| <= support / 2
    collar: float = 0.2  # eta: lambda = 1 below eta / 2, 0 above eta
    steps: int = 64

    def chi(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Bump value and gradient at chart points y."""
        r = np.linalg.norm(y, axis=-1)
        t = (r / self.support - 0.5) / 0.5
        val = 1.0 - smoothstep5(t)
        dval = -smoothstep5_derivative(t) * 2.0 / self.support
        safe = np.where(r > 0, r, 1.0)
        grad = (dval / safe)[..., None] * y
        return val, grad

    def collar_weight(self, dist: float) -> float:
        return float(1.0 - smoothstep5((dist - 0.5 * self.collar) / (0.5 * self.collar)))


# ----------------------------------------------------------------------
# Corrected diffeomorphism
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class ConformalizedDiffeo(Diffeomorphism):
    """Phi_a = Phi o f^{-1} o psi o f near the anchor and Phi elsewhere."""

    base: Diffeomorphism
    anchor: np.ndarray
    beta: float
    rotation: np.ndarray  # R_a, so that dPhi_a(a) = beta R_a at boundary anchors
    chart: BoundaryChart | None = None
    generator: np.ndarray | None = None  # K, the flow is y' = w chi(y) K (y - c)
    centre: np.ndarray | None = None
    weight: float = 0.0
    params: CutoffParams = field(default_factory=CutoffParams)

    @property
    def n(self) -> int:  # type: ignore[override]
        return self.base.n

    @property
    def is_trivial(self) -> bool:
        return self.chart is None or self.weight == 0.0 or not np.any(self.generator)

    @property
    def is_identity(self) -> bool:
        return self.base.is_identity and self.is_trivial

    # -- flow ----------------------------------------------------------
    def _field(self, y):
        chi, dchi = self.params.chi(y)
        lin = (y - self.centre) @ self.generator.T
        X = self.weight * chi[..., None] * lin
        dX = self.weight * (chi[..., None, None] * self.generator + lin[..., :, None] * dchi[..., None, :])
        return X, dX

    def _flow(self, y, direction: float = 1.0, with_jacobian: bool = True):
        steps = self.params.steps
        dt = direction / steps
        y = y.copy()
        J = np.broadcast_to(np.eye(self.n), y.shape + (self.n,)).copy() if with_jacobian else None
        for _ in range(steps):
            k1, d1 = self._field(y)
            k2, d2 = self._field(y + 0.5 * dt * k1)
            k3, d3 = self._field(y + 0.5 * dt * k2)
            k4, d4 = self._field(y + dt * k3)
            if with_jacobian:
                j1 = d1 @ J
                j2 = d2 @ (J + 0.5 * dt * j1)
                j3 = d3 @ (J + 0.5 * dt * j2)
                j4 = d4 @ (J + dt * j3)
                J = J + dt / 6.0 * (j1 + 2 * j2 + 2 * j3 + j4)
            y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        return y, J

    def _active(self, x):
        near = np.linalg.norm(x - self.chart.anchor, axis=-1) < self.chart.radius
        idx = np.flatnonzero(near)
        if len(idx) == 0:
            return idx, None
        y = self.chart.forward(x[idx])
        inside = np.linalg.norm(y, axis=-1) < self.params.support
        return idx[inside], y[inside]

    def _moved(self, x):
        """Points of the domain moved by the correction: Phi_a(x) = Phi(moved(x))."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = x.copy()
        J = np.broadcast_to(np.eye(self.n), x.shape + (self.n,)).copy()
        if self.is_trivial:
            return out, J
        idx, y = self._active(x)
        if len(idx) == 0:
            return out, J
        z, Jf = self._flow(y)
        xm = self.chart.inverse(z)
        out[idx] = xm
        J[idx] = np.linalg.inv(self.chart.differential(xm)) @ Jf @ self.chart.differential(x[idx])
        return out, J

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        xm, _ = self._moved(x.reshape(-1, self.n))
        return self.base.forward(xm).reshape(x.shape)

    def differential(self, x):
        x = np.asarray(x, dtype=float)
        xm, J = self._moved(x.reshape(-1, self.n))
        D = self.base.differential(xm) @ J
        return D.reshape(x.shape + (self.n,))

    def inverse(self, y):
        y = np.asarray(y, dtype=float)
        x = self.base.inverse(y.reshape(-1, self.n))
        if not self.is_trivial:
            near = np.linalg.norm(x - self.chart.anchor, axis=-1) < self.chart.radius
            idx = np.flatnonzero(near)
            if len(idx):
                z = self.chart.forward(x[idx])
                inside = np.linalg.norm(z, axis=-1) < self.params.support
                idx, z = idx[inside], z[inside]
                if len(idx):
                    w, _ = self._flow(z, -1.0, with_jacobian=False)
                    x[idx] = self.chart.inverse(w)
        return x.reshape(y.shape)

    def inverse_differential(self, y):
        return np.linalg.inv(self.differential(self.inverse(y)))

    def level_set(self, x):
        return self.base.level_set(np.asarray(x, dtype=float))

    def level_set_gradient(self, x):
        return self.base.level_set_gradient(np.asarray(x, dtype=float))

    def project_to_boundary(self, x):
        return self.base.project_to_boundary(x)


def _correction(phi: Diffeomorphism, chart: BoundaryChart) -> tuple[np.ndarray, float, np.ndarray]:
    """Generator K, scale beta and rotation R_a for the boundary anchor of ``chart``."""
    n = phi.n
    a = chart.anchor
    target = phi.forward(a)
    W = frame(-target).T  # orthonormal basis whose last vector is the inward normal at Phi(a)
    O = chart.rotation
    M = W.T @ phi.differential(a) @ O.T
    beta = float(M[-1, -1])
    if beta <= 0.0:
        raise NumericalError("normal derivative of the diffeomorphism is not positive at the anchor")
    A, B = M[:-1, :-1], M[:-1, -1]
    R, S = polar_decomposition(A)
    G = np.eye(n)
    G[:-1, :-1] = beta * np.linalg.inv(S)
    G[:-1, -1] = -np.linalg.solve(A, B)
    K = matrix_log_near_identity(G)
    K[-1, :] = 0.0
    Rfull = np.eye(n)
    Rfull[:-1, :-1] = R
    return K, beta, W @ Rfull @ O


def conformalize_at(phi: Diffeomorphism, a: np.ndarray, params: CutoffParams | None = None) -> ConformalizedDiffeo:
    """Corrected diffeomorphism Phi_a, conformal at ``a`` when ``a`` is on the boundary.

    Anchors with ``rho(a) <= 1e-12`` are treated as boundary points.  Interior
    anchors in the collar ``rho(a) < eta`` reuse the correction built at the
    radial projection of ``a`` with the flow re-centred at ``a`` and damped by
    the collar cutoff; deeper anchors get ``Phi`` itself.
    """
    params = params or CutoffParams()
    a = np.asarray(a, dtype=float)
    n = phi.n
    if phi.is_identity:
        return ConformalizedDiffeo(phi, a, 1.0, np.eye(n), params=params)
    rho = float(phi.level_set(a))
    if rho < -1e-10:
        raise PreconditionError("anchor lies outside the domain")
    if rho <= 1e-12:
        chart = chart_at(phi, a)
        K, beta, Ra = _correction(phi, chart)
        return ConformalizedDiffeo(phi, chart.anchor, beta, Ra, chart, K, np.zeros(n), 1.0, params)
    weight = params.collar_weight(rho)
    if weight > 0.0:
        chart = chart_at(phi, a)
        K, _, _ = _correction(phi, chart)
        centre = chart.forward(a)
        out = ConformalizedDiffeo(phi, a, 1.0, np.eye(n), chart, K, centre, weight, params)
    else:
        out = ConformalizedDiffeo(phi, a, 1.0, np.eye(n), params=params)
    D = out.differential(a[None])[0]
    R, S = polar_decomposition(D)
    beta = float(abs(np.linalg.det(D)) ** (1.0 / n))
    return ConformalizedDiffeo(out.base, a, beta, R, out.chart, out.generator, out.centre, out.weight, params)
