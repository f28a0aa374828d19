"""Linear finite elements for vector fields: the p-energy, its gradient and Hessian.

The discrete energy of nodal values U (shape (N, n)) is

    E(U) = sum_s vol_s (|G_s|^2 + eps^2)^(p/2),   G_s = sum_i U[s_i] (x) D_s,i

with D_s,i the gradient of the i-th barycentric coordinate.  Degrees of
freedom are numbered ``node * n + component``.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalError


def _densities(G: np.ndarray, p: float, eps: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """t = |G|^2 + eps^2, first coefficient p t^(p/2-1), second p(p-2) t^(p/2-2)."""
    t = np.sum(G * G, axis=(1, 2)) + eps * eps
    safe = np.where(t > 0.0, t, 1.0)
    a = np.where(t > 0.0, p * safe ** (p / 2.0 - 1.0), 0.0 if p > 2 else p)
    b = np.where(t > 0.0, p * (p - 2.0) * safe ** (p / 2.0 - 2.0), 0.0)
    return t, a, b


def field_gradients(dom, U: np.ndarray) -> np.ndarray:
    return np.einsum("sic,sid->scd", U[dom.simplices], dom.barycentric_gradients)


def p_energy(dom, U: np.ndarray, p: float, eps: float = 0.0) -> float:
    G = field_gradients(dom, U)
    t = np.sum(G * G, axis=(1, 2)) + eps * eps
    return float(np.sum(dom.volumes * t ** (p / 2.0)))


def p_energy_gradient(dom, U: np.ndarray, p: float, eps: float = 0.0) -> tuple[float, np.ndarray]:
    """Energy and its Euclidean gradient with respect to the nodal values, shape (N, n)."""
    D = dom.barycentric_gradients
    G = field_gradients(dom, U)
    t, a, _ = _densities(G, p, eps)
    E = float(np.sum(dom.volumes * t ** (p / 2.0)))
    local = (dom.volumes * a)[:, None, None] * np.einsum("scd,sid->sic", G, D)  # (S, n+1, n)
    grad = np.zeros_like(U, dtype=float)
    np.add.at(grad, dom.simplices, local)
    return E, grad


def p_energy_hessian(dom, U: np.ndarray, p: float, eps: float = 0.0) -> sp.csr_matrix:
    """Sparse Hessian of the discrete energy, size (N n) x (N n)."""
    n = dom.n
    k = n + 1
    D = dom.barycentric_gradients
    G = field_gradients(dom, U)
    _, a, b = _densities(G, p, eps)
    vol = dom.volumes
    K = np.einsum("sid,sjd->sij", D, D)  # (S, k, k)
    W = np.einsum("scd,sid->sic", G, D)  # (S, k, n)
    eye = np.eye(n)
    loc = (vol * a)[:, None, None, None, None] * K[:, :, None, :, None] * eye[None, None, :, None, :]
    loc = loc + (vol * b)[:, None, None, None, None] * W[:, :, :, None, None] * W[:, None, None, :, :]
    dof = (dom.simplices[:, :, None] * n + np.arange(n)[None, None, :]).reshape(len(vol), k * n)
    rows = np.repeat(dof, k * n, axis=1).ravel()
    cols = np.tile(dof, (1, k * n)).ravel()
    N = dom.num_vertices * n
    H = sp.coo_matrix((loc.reshape(-1), (rows, cols)), shape=(N, N)).tocsr()
    H.sum_duplicates()
    return H


def stiffness_matrix(dom) -> sp.csr_matrix:
    """Scalar P1 stiffness matrix int grad phi_i . grad phi_j."""
    D = dom.barycentric_gradients
    K = dom.volumes[:, None, None] * np.einsum("sid,sjd->sij", D, D)
    S = dom.simplices
    k = S.shape[1]
    rows = np.repeat(S, k, axis=1).ravel()
    cols = np.tile(S, (1, k)).ravel()
    N = dom.num_vertices
    return sp.coo_matrix((K.ravel(), (rows, cols)), shape=(N, N)).tocsr()


def mass_matrix(dom) -> sp.csr_matrix:
    """Scalar P1 mass matrix (consistent)."""
    n = dom.n
    k = n + 1
    local = (np.ones((k, k)) + np.eye(k)) / ((k) * (k + 1))
    M = dom.volumes[:, None, None] * local[None]
    S = dom.simplices
    rows = np.repeat(S, k, axis=1).ravel()
    cols = np.tile(S, (1, k)).ravel()
    N = dom.num_vertices
    return sp.coo_matrix((M.ravel(), (rows, cols)), shape=(N, N)).tocsr()


def vector_operator(A: sp.spmatrix, n: int) -> sp.csr_matrix:
    """Scalar operator acting on each of the n components (node-major numbering)."""
    return sp.kron(A, sp.identity(n), format="csr")


class DomainOperators:
    """Scalar matrices of a domain and their factorizations, built on first use.

    The interior stiffness factorization serves both the harmonic extension
    and, applied to each component, as the preconditioner of Dirichlet Newton
    systems; the full H^1 Gram factorization preconditions the tangent systems
    of the constrained descent.
    """

    def __init__(self, dom):
        self.dom = dom
        self.interior = dom.interior_vertex_ids
        self.boundary = dom.boundary_vertex_ids
        self._cache: dict = {}

    def _get(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    @property
    def stiffness(self) -> sp.csr_matrix:
        return self._get("K", lambda: stiffness_matrix(self.dom))

    @property
    def mass(self) -> sp.csr_matrix:
        return self._get("M", lambda: mass_matrix(self.dom))

    @property
    def interior_stiffness_lu(self):
        return self._get("Kff", lambda: spla.splu(self.stiffness[self.interior][:, self.interior].tocsc()))

    @property
    def h1_lu(self):
        return self._get("KM", lambda: spla.splu((self.stiffness + self.mass).tocsc()))

    def componentwise(self, lu, n: int):
        """Apply a scalar factorization to each component of a node-major vector."""

        def apply(x):
            X = np.asarray(x).reshape(-1, n)
            return np.column_stack([lu.solve(np.ascontiguousarray(X[:, j])) for j in range(n)]).ravel()

        return apply


_OPERATORS: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def operators(dom) -> DomainOperators:
    ops = _OPERATORS.get(dom)
    if ops is None:
        ops = DomainOperators(dom)
        _OPERATORS[dom] = ops
    return ops


class HarmonicExtension:
    """Discrete harmonic extension of boundary values, factorized once per domain."""

    def __init__(self, dom):
        self.dom = dom
        ops = operators(dom)
        self.interior = dom.interior_vertex_ids
        self.boundary = dom.boundary_vertex_ids
        self._Kib = ops.stiffness.tocsc()[self.interior][:, self.boundary]
        self._solve = ops.interior_stiffness_lu.solve if len(self.interior) else None

    def __call__(self, boundary_values: np.ndarray) -> np.ndarray:
        """Nodal field with the given boundary values (one row per boundary node)."""
        bv = np.asarray(boundary_values, dtype=float)
        out = np.zeros((self.dom.num_vertices,) + bv.shape[1:])
        out[self.boundary] = bv
        if self._solve is not None:
            rhs = -(self._Kib @ bv.reshape(len(self.boundary), -1))
            sol = np.column_stack([self._solve(np.ascontiguousarray(rhs[:, j])) for j in range(rhs.shape[1])])
            out[self.interior] = sol.reshape((len(self.interior),) + bv.shape[1:])
        return out


_EXTENSIONS: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def harmonic_extension(dom) -> HarmonicExtension:
    ext = _EXTENSIONS.get(dom)
    if ext is None:
        ext = HarmonicExtension(dom)
        _EXTENSIONS[dom] = ext
    return ext


def tangent_bases(U: np.ndarray) -> np.ndarray:
    """Orthonormal bases of the tangent spaces u^perp, shape (N, n, n-1).

    Built from the Householder reflection exchanging e_n and u (or -u,
    whichever keeps w = u -+ e_n away from cancellation), so column j is the
    image of e_j.
    """
    U = np.asarray(U, dtype=float)
    N, n = U.shape
    w = U.copy()
    w[:, -1] += np.where(U[:, -1] >= 0.0, 1.0, -1.0)
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    H = np.eye(n)[None] - 2.0 * w[:, :, None] * w[:, None, :]
    return H[:, :, : n - 1]


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    converged: bool
    negative_curvature: bool


def pcg(A, b: np.ndarray, precond, rtol: float = 1e-10, maxiter: int = 1000) -> CGResult:
    """Preconditioned conjugate gradients that stops on negative curvature.

    ``A`` is anything supporting ``A @ x``; ``precond`` applies an
    approximation of A^{-1}.  When a search direction with p^T A p <= 0
    appears the iteration stops and reports it, so callers can shift an
    indefinite system.
    """
    x = np.zeros_like(b)
    r = b.copy()
    z = precond(r)
    d = z.copy()
    rz = float(r @ z)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return CGResult(x, 0, True, False)
    for it in range(1, maxiter + 1):
        Ad = A @ d
        curv = float(d @ Ad)
        if not curv > 0.0:
            return CGResult(x, it, False, True)
        step = rz / curv
        x += step * d
        r -= step * Ad
        if np.linalg.norm(r) <= rtol * bnorm:
            return CGResult(x, it, True, False)
        z = precond(r)
        rz_new = float(r @ z)
        d = z + (rz_new / rz) * d
        rz = rz_new
    return CGResult(x, maxiter, False, False)


def sparse_solve(A: sp.spmatrix, b: np.ndarray) -> np.ndarray:
    """Direct sparse solve that reports singular systems as numerical failures."""
    try:
        lu = spla.splu(sp.csc_matrix(A))
    except RuntimeError as exc:  # "Factor is exactly singular"
        raise NumericalError(f"singular linear system: {exc}") from exc
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise NumericalError("linear solve produced non-finite values")
    return x
