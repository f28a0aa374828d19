"""Quadrature rules on simplices, on the unit ball and on the unit sphere.

Simplex rules are collapsed (Duffy) tensor products of Gauss-Jacobi rules.
They have positive weights and are exact for polynomials of total degree
``2 * npts - 1``.  ``simplex_rule(dim, 3)`` is exact to degree 5, which covers
the order-4 requirement with one degree to spare.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


def _jacobi01(npts: int, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss rule on [0, 1] for the weight (1 - t)**alpha."""
    x, w = roots_jacobi(npts, alpha, 0.0)
    t = 0.5 * (x + 1.0)
    return t, w / 2.0 ** (alpha + 1.0)


@lru_cache(maxsize=None)
def simplex_rule(dim: int, npts: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points (q, dim+1) and weights summing to one on the reference simplex."""
    if dim == 0:
        return np.ones((1, 1)), np.ones(1)
    if dim == 1:
        t, w = _jacobi01(npts, 0.0)
        return np.column_stack([1.0 - t, t]), w
    if dim == 2:
        u, wu = _jacobi01(npts, 1.0)
        v, wv = _jacobi01(npts, 0.0)
        U, V = np.meshgrid(u, v, indexing="ij")
        W = np.outer(wu, wv)
        x1 = U
        x2 = V * (1.0 - U)
        pts = np.column_stack([1.0 - x1.ravel() - x2.ravel(), x1.ravel(), x2.ravel()])
        return pts, 2.0 * W.ravel()
    if dim == 3:
        u, wu = _jacobi01(npts, 2.0)
        v, wv = _jacobi01(npts, 1.0)
        s, ws = _jacobi01(npts, 0.0)
        U, V, S = np.meshgrid(u, v, s, indexing="ij")
        W = wu[:, None, None] * wv[None, :, None] * ws[None, None, :]
        x1 = U
        x2 = V * (1.0 - U)
        x3 = S * (1.0 - U) * (1.0 - V)
        pts = np.column_stack(
            [1.0 - x1.ravel() - x2.ravel() - x3.ravel(), x1.ravel(), x2.ravel(), x3.ravel()]
        )
        return pts, 6.0 * W.ravel()
    raise ValueError(f"unsupported simplex dimension {dim}")


def gauss_interval(npts: int, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [a, b]; a and b may be arrays (broadcast)."""
    x, w = roots_legendre(npts)
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    nodes = 0.5 * (a + b) + 0.5 * (b - a) * x
    weights = 0.5 * (b - a) * w
    return nodes, weights


@lru_cache(maxsize=None)
def ball_product_rule(n: int, n_radial: int = 16, n_angular: int = 24) -> tuple[np.ndarray, np.ndarray]:
    """Tensor quadrature on the unit ball: Gauss in r (weight r^(n-1)) times a sphere rule."""
    r, wr = _radial_rule(n, n_radial)
    theta, wt = sphere_rule(n, n_angular)
    pts = (r[:, None, None] * theta[None, :, :]).reshape(-1, n)
    wts = (wr[:, None] * wt[None, :]).ravel()
    return pts, wts


def _radial_rule(n: int, npts: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = roots_jacobi(npts, 0.0, float(n - 1))
    r = 0.5 * (x + 1.0)
    return r, w / 2.0**n


@lru_cache(maxsize=None)
def sphere_rule(n: int, n_angular: int = 24) -> tuple[np.ndarray, np.ndarray]:
    """Points on the unit sphere S^(n-1) and weights summing to its area."""
    if n == 2:
        m = 2 * n_angular
        phi = 2.0 * np.pi * (np.arange(m) + 0.5) / m
        return np.column_stack([np.cos(phi), np.sin(phi)]), np.full(m, 2.0 * np.pi / m)
    if n == 3:
        z, wz = roots_legendre(n_angular)
        m = 2 * n_angular
        phi = 2.0 * np.pi * (np.arange(m) + 0.5) / m
        Z, P = np.meshgrid(z, phi, indexing="ij")
        s = np.sqrt(1.0 - Z**2)
        pts = np.column_stack([(s * np.cos(P)).ravel(), (s * np.sin(P)).ravel(), Z.ravel()])
        wts = (wz[:, None] * np.full(m, 2.0 * np.pi / m)[None, :]).ravel()
        return pts, wts
    raise ValueError(f"unsupported dimension {n}")


def unit_ball_volume(n: int) -> float:
    """|B^n| for n = 2, 3 (and the general formula otherwise)."""
    from math import gamma, pi

    return pi ** (n / 2.0) / gamma(n / 2.0 + 1.0)


def unit_sphere_area(n: int) -> float:
    """|S^(n-1)|."""
    return n * unit_ball_volume(n)


def conformal_energy_constant(n: int) -> float:
    """n^(n/2) |B^n|, the n-energy of any conformal diffeomorphism onto the ball."""
    return n ** (n / 2.0) * unit_ball_volume(n)
