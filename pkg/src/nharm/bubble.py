"""Raising or lowering the degree of a field by gluing in a boundary bubble.

In the straightening chart y = f(x) at the boundary point x0 (with the target
rotated so that u(x0) = e_n) the new field is

* ``pi_s(y) = P(I_s(y))`` on |y| < s, where ``I_s(y) = s^2 y/|y|^2`` is the
  inversion in the sphere of radius s and ``P`` is the conformal map of the
  upper half-space onto the ball,
  ``P(x) = (-2x', 1 - |x|^2) / (|x'|^2 + (1 + x_n)^2)``;
* on s <= |y| <= t, with ``t = s + s^{1 + 1/(2(n-1))}``, the radial blend of
  ``pi_s(s theta)`` and ``u(t theta)`` renormalized so that its length is the
  blend of the two lengths (this keeps boundary values on the sphere);
* u itself outside |y| > t.

``pi_s`` sweeps the whole ball once while shrinking to e_n on |y| = s, so
the degree goes up by one; the energy it adds is concentrated at scale s^2.
Composing ``pi_s`` with a reflection that fixes the normal direction gives
the lowering variant.
"""

from __future__ import annotations

import numpy as np

from .errors import PreconditionError
from .fields import MapField, transfer
from .geometry.chart import chart_at, frame
from .geometry.refine import refine_near


def half_space_to_ball(x: np.ndarray) -> np.ndarray:
    """P(x) = (-2x', 1 - |x|^2) / (|x'|^2 + (1 + x_n)^2)."""
    x = np.asarray(x, dtype=float)
    xp = x[..., :-1]
    xn = x[..., -1]
    den = np.sum(xp * xp, axis=-1) + (1.0 + xn) ** 2
    top = np.concatenate([-2.0 * xp, (1.0 - np.sum(x * x, axis=-1))[..., None]], axis=-1)
    return top / den[..., None]


def bubble(y: np.ndarray, sigma: float, reverse: bool = False) -> np.ndarray:
    """pi_sigma = P o I_sigma in chart coordinates; the point y = 0 goes to -e_n."""
    y = np.array(y, dtype=float)
    if reverse:
        y[..., 0] *= -1.0
    r2 = np.sum(y * y, axis=-1)
    out = np.empty_like(y)
    zero = r2 == 0.0
    out[zero] = 0.0
    out[zero, -1] = -1.0
    inv = sigma**2 * y[~zero] / r2[~zero][:, None]
    out[~zero] = half_space_to_ball(inv)
    return out


def collar_radius(sigma: float, n: int) -> float:
    return sigma + sigma ** (1.0 + 1.0 / (2.0 * (n - 1)))


def _glued_orientation(chart, Q: np.ndarray, sigma: float) -> float:
    """Sign of det d(bubble o chart) composed with Q, at a point of the core."""
    n = Q.shape[0]
    y = np.zeros(n)
    y[-1] = 0.5 * sigma
    x = chart.inverse(y[None])[0]
    Dc = chart.differential(x[None])[0]
    h = 1e-6 * sigma
    Db = np.column_stack([(bubble(y + h * e, sigma) - bubble(y - h * e, sigma)) / (2 * h) for e in np.eye(n)])
    return float(np.sign(np.linalg.det(Db @ Dc) * np.linalg.det(Q)))


def bubble_mesh(dom, x0: np.ndarray, sigma: float, grade: float = 0.35):
    """Local refinement around x0 resolving the bubble core of size sigma^2."""
    return refine_near(dom, x0, 0.25 * sigma**2, grade)


def degree_raiser(u: MapField, x0: np.ndarray, sigma: float, reverse: bool = False, refine: bool = True) -> MapField:
    """Field of degree deg(u) + 1 (or - 1 when ``reverse``) equal to u away from x0."""
    if not u.boundary_unit_norm:
        raise PreconditionError("degree_raiser needs a field with unit boundary norm")
    dom = u.dom
    n = dom.n
    phi = dom.phi
    x0 = phi.project_to_boundary(np.asarray(x0, dtype=float))
    chart = chart_at(phi, x0, radius=0.6)
    tau = collar_radius(sigma, n)
    if tau >= 0.75 * chart.radius:
        raise PreconditionError("sigma too large: the collar leaves the straightening chart")
    if refine:
        dom = bubble_mesh(dom, x0, sigma)
        u = transfer(u, dom)
    # the core |y| < sigma^2 must be resolved by about eight cells across
    near = np.linalg.norm(dom.vertices[dom.simplices].mean(axis=1) - x0, axis=1) < 2.0 * sigma**2
    if not np.any(near) or dom.simplex_diameters[near].max() > 0.5 * sigma**2:
        raise PreconditionError("mesh too coarse: the bubble core is not resolved")

    lowering = reverse
    u0 = u.evaluate(x0[None])[0]
    Q = frame(u0)  # Q u(x0) = e_n
    # the chart and the frame may reverse orientation; the glued bubble must
    # carry degree +1 (or -1) as a map of the domain, so fix the sign here
    if _glued_orientation(chart, Q, sigma) < 0:
        reverse = not reverse
    X = dom.vertices
    vals = u.values.copy()
    close = np.flatnonzero(np.linalg.norm(X - x0, axis=1) < chart.radius)
    y = chart.forward(X[close])
    r = np.linalg.norm(y, axis=1)

    core = r < sigma
    vals[close[core]] = bubble(y[core], sigma, reverse) @ Q

    ring = (r >= sigma) & (r <= tau)
    if np.any(ring):
        yr, rr = y[ring], r[ring]
        theta = yr / rr[:, None]
        theta[:, -1] = np.maximum(theta[:, -1], 0.0)
        outer = u.evaluate(chart.inverse(tau * theta)) @ Q.T
        inner = bubble(sigma * theta, sigma, reverse)
        s = ((rr - sigma) / (tau - sigma))[:, None]
        V = s * outer + (1.0 - s) * inner
        vn = np.linalg.norm(V, axis=1)
        if np.min(vn) < 0.5:
            raise PreconditionError(f"sigma too large: interpolation denominator {np.min(vn):.3g} < 0.5")
        length = s[:, 0] * np.linalg.norm(outer, axis=1) + (1.0 - s[:, 0]) * np.linalg.norm(inner, axis=1)
        vals[close[ring]] = (length / vn)[:, None] * V @ Q

    b = dom.boundary_flags
    vals[b] /= np.linalg.norm(vals[b], axis=1, keepdims=True)
    claimed = None if u.claimed_degree is None else u.claimed_degree + (-1 if lowering else 1)
    return MapField(dom, vals, claimed, True)
