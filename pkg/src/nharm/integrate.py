"""Quadrature over meshed domains.

``mesh_quadrature`` integrates over the union of the (flat) simplices.
``domain_quadrature`` integrates over the exact curved domain: the mesh is
pulled back to the unit ball by ``Phi``, the thin gaps between flat boundary
faces and the sphere are covered by radial slivers, and the result is pushed
forward by ``Psi = Phi^{-1}`` with its Jacobian.
"""

from __future__ import annotations

import numpy as np

from .quadrature import gauss_interval, simplex_rule


def mesh_quadrature(dom, npts: int = 3, vertices: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Points (S*q, n), weights (S*q,) and owning simplex index for every point."""
    V = dom.vertices if vertices is None else vertices
    bary, w = simplex_rule(dom.n, npts)
    X = V[dom.simplices]  # (S, n+1, n)
    pts = np.einsum("qk,skd->sqd", bary, X).reshape(-1, dom.n)
    E = X[:, 1:, :] - X[:, :1, :]
    fact = 2.0 if dom.n == 2 else 6.0
    vol = np.abs(np.linalg.det(E)) / fact
    wts = (vol[:, None] * w[None, :]).ravel()
    owner = np.repeat(np.arange(len(X)), len(w))
    return pts, wts, owner


def sliver_quadrature(dom, npts: int = 3, vertices: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature on the region between the flat boundary faces and the unit sphere.

    Each face point y is joined radially to y/|y|; with x = t y the volume
    element is t^(n-1) (nu_f . y) dA dt.
    """
    V = dom.vertices if vertices is None else vertices
    n = dom.n
    bary, w = simplex_rule(n - 1, npts)
    F = V[dom.boundary_faces]  # (B, n, n)
    if n == 2:
        t = F[:, 1] - F[:, 0]
        area = np.linalg.norm(t, axis=1)
        normal = np.column_stack([t[:, 1], -t[:, 0]]) / area[:, None]
    else:
        cr = np.cross(F[:, 1] - F[:, 0], F[:, 2] - F[:, 0])
        area = 0.5 * np.linalg.norm(cr, axis=1)
        normal = cr / (2.0 * area[:, None])
    y = np.einsum("qk,bkd->bqd", bary, F)  # (B, q, n)
    height = np.abs(np.einsum("bd,bd->b", normal, F[:, 0]))
    top = 1.0 / np.linalg.norm(y, axis=-1)  # (B, q)
    tt, wt = gauss_interval(npts, np.ones_like(top), top)  # (B, q, m)
    pts = tt[..., None] * y[:, :, None, :]
    wts = (area * height)[:, None, None] * w[None, :, None] * wt * tt ** (n - 1)
    return pts.reshape(-1, n), wts.ravel()


def domain_quadrature(dom, npts: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Points and weights integrating over the exact domain described by ``dom.phi``."""
    phi = dom.phi
    ball_vertices = dom.vertices if phi.is_identity else phi.forward(dom.vertices)
    p1, w1, _ = mesh_quadrature(dom, npts, ball_vertices)
    p2, w2 = sliver_quadrature(dom, npts, ball_vertices)
    y = np.vstack([p1, p2])
    w = np.concatenate([w1, w2])
    if phi.is_identity:
        return y, w
    jac = np.abs(np.linalg.det(phi.inverse_differential(y)))
    return phi.inverse(y), w * jac
