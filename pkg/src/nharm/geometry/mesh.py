"""Simplicial domains and the structured ball mesher."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import permutations, product
from math import ceil

import numpy as np
from scipy.spatial import ConvexHull, cKDTree

from ..errors import PreconditionError
from .shapes import Diffeomorphism, IdentityDiffeo, build_diffeomorphism

VERTEX_BUDGET = 400_000


@dataclass(frozen=True, eq=False)
class Domain:
    """A conforming, positively oriented simplicial mesh of a domain in R^n.

    ``phi`` describes the exact domain the mesh approximates (the unit ball when
    it is the identity).  It supplies the boundary level set used by the
    straightening chart and the projection used when refining boundary edges.
    """

    n: int
    vertices: np.ndarray
    simplices: np.ndarray
    boundary_faces: np.ndarray
    face_normals: np.ndarray
    boundary_flags: np.ndarray
    phi: Diffeomorphism

    @classmethod
    def from_simplices(cls, n: int, vertices: np.ndarray, simplices: np.ndarray, phi: Diffeomorphism | None = None) -> "Domain":
        vertices = np.ascontiguousarray(vertices, dtype=float)
        simplices = np.ascontiguousarray(simplices, dtype=np.int64)
        vol = _signed_volumes(vertices, simplices)
        flip = vol < 0
        if np.any(flip):
            simplices = simplices.copy()
            simplices[flip, 0], simplices[flip, 1] = simplices[flip, 1], simplices[flip, 0].copy()
        faces, normals = _boundary_faces(vertices, simplices)
        flags = np.zeros(len(vertices), dtype=bool)
        flags[faces.ravel()] = True
        return cls(n, vertices, simplices, faces, normals, flags, phi if phi is not None else IdentityDiffeo(n))

    # ------------------------------------------------------------------
    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @cached_property
    def volumes(self) -> np.ndarray:
        return _signed_volumes(self.vertices, self.simplices)

    @cached_property
    def total_volume(self) -> float:
        return float(np.sum(self.volumes))

    @cached_property
    def barycentric_gradients(self) -> np.ndarray:
        """Gradients of the P1 hat functions, shape (S, n+1, n)."""
        X = self.vertices[self.simplices]
        E = X[:, 1:, :] - X[:, :1, :]
        Einv = np.linalg.inv(E)  # rows of E^{-T} are the gradients of lambda_1..lambda_n
        g = np.transpose(Einv, (0, 2, 1))
        g0 = -np.sum(g, axis=1, keepdims=True)
        return np.concatenate([g0, g], axis=1)

    @cached_property
    def edges(self) -> np.ndarray:
        k = self.n + 1
        pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
        e = np.concatenate([self.simplices[:, [i, j]] for i, j in pairs])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def max_edge_length(self) -> float:
        e = self.edges
        return float(np.max(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)))

    @cached_property
    def simplex_diameters(self) -> np.ndarray:
        X = self.vertices[self.simplices]
        k = self.n + 1
        d = np.zeros(len(X))
        for i in range(k):
            for j in range(i + 1, k):
                d = np.maximum(d, np.linalg.norm(X[:, i] - X[:, j], axis=1))
        return d

    @cached_property
    def face_areas(self) -> np.ndarray:
        X = self.vertices[self.boundary_faces]
        if self.n == 2:
            return np.linalg.norm(X[:, 1] - X[:, 0], axis=1)
        return 0.5 * np.linalg.norm(np.cross(X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]), axis=1)

    @cached_property
    def boundary_vertex_ids(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_flags)

    @cached_property
    def interior_vertex_ids(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_flags)

    @cached_property
    def boundary_lumped_areas(self) -> np.ndarray:
        """Boundary mass lumped to vertices (zero at interior vertices)."""
        w = np.zeros(self.num_vertices)
        np.add.at(w, self.boundary_faces.ravel(), np.repeat(self.face_areas / self.n, self.n))
        return w

    @cached_property
    def lumped_mass(self) -> np.ndarray:
        w = np.zeros(self.num_vertices)
        np.add.at(w, self.simplices.ravel(), np.repeat(self.volumes / (self.n + 1), self.n + 1))
        return w

    @cached_property
    def boundary_edges(self) -> set[tuple[int, int]]:
        out: set[tuple[int, int]] = set()
        for f in self.boundary_faces:
            for i in range(len(f)):
                for j in range(i + 1, len(f)):
                    a, b = int(f[i]), int(f[j])
                    out.add((min(a, b), max(a, b)))
        return out

    @cached_property
    def boundary_face_owner(self) -> np.ndarray:
        """Index of the simplex each boundary face belongs to."""
        k = self.n + 1
        faces = np.sort(_all_faces(self.simplices), axis=1)
        owner = np.tile(np.arange(len(self.simplices)), k)
        bkeys = np.sort(self.boundary_faces, axis=1)
        allk = np.concatenate([faces, bkeys])
        _, inv = np.unique(allk, axis=0, return_inverse=True)
        inv = inv.ravel()
        slot = np.full(inv.max() + 1, -1, dtype=np.int64)
        slot[inv[: len(faces)]] = owner
        return slot[inv[len(faces):]]

    @cached_property
    def _outer_corners(self) -> np.ndarray:
        """(S, n+1) flags: the face opposite local vertex j lies on the boundary."""
        flags = np.zeros(self.simplices.shape, dtype=bool)
        owner = self.boundary_face_owner
        for s_id, f in zip(owner, self.boundary_faces):
            flags[s_id] = flags[s_id] | ~np.isin(self.simplices[s_id], f)
        return flags

    @cached_property
    def _centroid_tree(self) -> cKDTree:
        return cKDTree(self.vertices[self.simplices].mean(axis=1))

    def locate(self, points: np.ndarray, candidates: int = 12) -> tuple[np.ndarray, np.ndarray]:
        """Containing simplex and barycentric coordinates for each point.

        Points outside the mesh (for example on the curved boundary beyond a flat
        face) are assigned to the nearby simplex with the least negative
        coordinate, which amounts to linear extrapolation.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        simp, bary = self._locate_among(points, candidates)
        # nearest centroids can miss the containing simplex next to long slivers
        k = candidates
        while k < len(self.simplices):
            # a point beyond a boundary face of its best simplex lies outside the mesh
            worst = np.argmin(bary, axis=1)
            outside = self._outer_corners[simp, worst]
            miss = np.flatnonzero((bary.min(axis=1) < -1e-12) & ~outside)
            if len(miss) == 0:
                break
            k = min(4 * k, len(self.simplices), 768)
            s2, b2 = self._locate_among(points[miss], k)
            better = b2.min(axis=1) > bary[miss].min(axis=1)
            simp[miss[better]] = s2[better]
            bary[miss[better]] = b2[better]
            if k == 768:
                break
        return simp, bary

    def _locate_among(self, points: np.ndarray, candidates: int) -> tuple[np.ndarray, np.ndarray]:
        k = min(candidates, len(self.simplices))
        _, idx = self._centroid_tree.query(points, k=k)
        idx = np.atleast_2d(idx).reshape(len(points), k)
        X = self.vertices[self.simplices[idx]]  # (P, k, n+1, n)
        E = X[:, :, 1:, :] - X[:, :, :1, :]
        rhs = points[:, None, :] - X[:, :, 0, :]
        lam = np.linalg.solve(np.transpose(E, (0, 1, 3, 2)), rhs[..., None])[..., 0]
        bary = np.concatenate([1.0 - lam.sum(axis=-1, keepdims=True), lam], axis=-1)
        best = np.argmax(bary.min(axis=-1), axis=1)
        rows = np.arange(len(points))
        return idx[rows, best], bary[rows, best]

    def stats(self) -> dict:
        return {
            "n": self.n,
            "vertices": int(self.num_vertices),
            "simplices": int(len(self.simplices)),
            "boundary_faces": int(len(self.boundary_faces)),
            "max_edge_length": self.max_edge_length,
            "volume": self.total_volume,
        }

    def check_invariants(self, tol: float = 1e-12) -> None:
        """Raise AssertionError if a structural invariant fails."""
        assert np.all(self.volumes > 0), "non-positive simplex volume"
        assert np.allclose(np.linalg.norm(self.face_normals, axis=1), 1.0, atol=tol)
        faces = _all_faces(self.simplices)
        _, counts = np.unique(np.sort(faces, axis=1), axis=0, return_counts=True)
        assert counts.max() <= 2, "non-conforming mesh"


def _signed_volumes(vertices: np.ndarray, simplices: np.ndarray) -> np.ndarray:
    X = vertices[simplices]
    E = X[:, 1:, :] - X[:, :1, :]
    n = vertices.shape[1]
    fact = 2.0 if n == 2 else 6.0
    return np.linalg.det(E) / fact


def _all_faces(simplices: np.ndarray) -> np.ndarray:
    k = simplices.shape[1]
    return np.concatenate([np.delete(simplices, i, axis=1) for i in range(k)])


def _boundary_faces(vertices: np.ndarray, simplices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    k = simplices.shape[1]
    S = len(simplices)
    faces = _all_faces(simplices)
    opposite = np.concatenate([simplices[:, i] for i in range(k)])
    key = np.sort(faces, axis=1)
    _, first, counts = np.unique(key, axis=0, return_index=True, return_counts=True)
    if counts.max() > 2:
        raise ValueError("non-conforming mesh: a face is shared by more than two simplices")
    sel = first[counts == 1]
    sel.sort()
    bf = faces[sel].copy()
    opp = vertices[opposite[sel]]
    X = vertices[bf]
    n = vertices.shape[1]
    if n == 2:
        t = X[:, 1] - X[:, 0]
        nr = np.column_stack([t[:, 1], -t[:, 0]])
    else:
        nr = np.cross(X[:, 1] - X[:, 0], X[:, 2] - X[:, 0])
    out = np.einsum("ij,ij->i", nr, X.mean(axis=1) - opp) < 0
    bf[out, 0], bf[out, 1] = bf[out, 1], bf[out, 0].copy()
    nr[out] *= -1.0
    nr /= np.linalg.norm(nr, axis=1, keepdims=True)
    del S
    return bf, nr


# ----------------------------------------------------------------------
# Structured ball mesher
# ----------------------------------------------------------------------
def _coarse_boundary(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Vertices on the unit sphere and outward-oriented facets of a coarse polytope."""
    if n == 2:
        ang = np.pi / 3.0 * np.arange(6)
        P = np.column_stack([np.cos(ang), np.sin(ang)])
        F = np.array([[i, (i + 1) % 6] for i in range(6)])
        return P, F
    g = (1.0 + 5.0**0.5) / 2.0
    P = []
    for s1 in (-1.0, 1.0):
        for s2 in (-1.0, 1.0):
            P += [(0.0, s1, s2 * g), (s1, s2 * g, 0.0), (s2 * g, 0.0, s1)]
    P = np.array(P)
    P /= np.linalg.norm(P, axis=1, keepdims=True)
    return P, ConvexHull(P).simplices


def _kuhn_staircase(d: int, m: int) -> np.ndarray:
    """Integer vertices of the Freudenthal subdivision of the staircase simplex."""
    base = np.array(list(product(range(m), repeat=d)), dtype=np.int64)
    out = []
    for perm in permutations(range(d)):
        verts = [base.copy()]
        cur = base.copy()
        for p in perm:
            cur = cur.copy()
            cur[:, p] += 1
            verts.append(cur)
        V = np.stack(verts, axis=1)  # (B, d+1, d)
        ok = np.all(V[..., 0] <= m, axis=1) & np.all(V[..., -1] >= 0, axis=1)
        for j in range(d - 1):
            ok &= np.all(V[..., j] >= V[..., j + 1], axis=1)
        out.append(V[ok])
    return np.concatenate(out)


def _ball_lattice(n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    P, F = _coarse_boundary(n)
    kuhn = _kuhn_staircase(n, m)
    # integer barycentric weights w.r.t. (center, face vertices)
    X = kuhn
    lam = np.empty(X.shape[:-1] + (n + 1,), dtype=np.int64)
    lam[..., 0] = m - X[..., 0]
    for j in range(1, n):
        lam[..., j] = X[..., j - 1] - X[..., j]
    lam[..., n] = X[..., n - 1]
    pts, inverse = np.unique(lam.reshape(-1, n + 1), axis=0, return_inverse=True)
    inverse = inverse.reshape(lam.shape[:2])
    keys: dict[tuple, int] = {}
    coords: list[np.ndarray] = []
    simplices = []
    for face in F:
        gid = [0] + [int(g) + 1 for g in face]
        local = np.empty(len(pts), dtype=np.int64)
        for i, w in enumerate(pts):
            key = tuple(sorted((gid[j], int(w[j])) for j in range(n + 1) if w[j] > 0))
            idx = keys.get(key)
            if idx is None:
                idx = len(coords)
                keys[key] = idx
                coords.append(_lattice_point(key, P, m))
            local[i] = idx
        simplices.append(local[inverse])
    return np.array(coords), np.concatenate(simplices)


def _lattice_point(key: tuple, P: np.ndarray, m: int) -> np.ndarray:
    n = P.shape[1]
    total = sum(w for g, w in key if g > 0)
    if total == 0:
        return np.zeros(n)
    d = np.zeros(n)
    for g, w in key:
        if g > 0:
            d += w * P[g - 1]
    d /= total
    return (total / m) * d / np.linalg.norm(d)


def ball_mesh_divisions(n: int, h: float) -> int:
    P, F = _coarse_boundary(n)
    edge = float(np.linalg.norm(P[F[0][0]] - P[F[0][1]]))
    return max(1, ceil(edge / h - 1e-9))


def build_ball_mesh(n: int, h: float, divisions: int | None = None, vertex_budget: int = VERTEX_BUDGET) -> Domain:
    """Mesh of the unit ball by radial layering of a subdivided coarse polytope.

    The ball is split into cones over the facets of an icosahedron (a hexagon
    for n = 2).  Each cone is cut into m^n congruent simplices by the Freudenthal
    lattice, and every lattice point at level rho is pushed radially onto the
    sphere of radius rho.  Outer vertices land exactly on the unit sphere.
    """
    if n not in (2, 3):
        raise PreconditionError(f"dimension must be 2 or 3, got {n}")
    if divisions is None and not (0.0 < h <= 0.5):
        raise PreconditionError(f"target edge length must lie in (0, 0.5], got {h}")
    m = divisions if divisions is not None else ball_mesh_divisions(n, h)
    while True:
        facets = 6 if n == 2 else 20
        estimate = facets * (m + 1) ** n / (2 if n == 2 else 6) + 1
        if estimate > vertex_budget:
            raise PreconditionError(f"mesh with {int(estimate)} vertices exceeds the vertex budget {vertex_budget}")
        coords, simplices = _ball_lattice(n, m)
        dom = Domain.from_simplices(n, coords, simplices, IdentityDiffeo(n))
        if divisions is not None or dom.max_edge_length <= 1.5 * h:
            return dom
        m += 1


def uniform_refinement(dom: Domain) -> Domain:
    """The structured mesh with twice as many divisions (same family)."""
    m = _divisions_of(dom)
    base = build_ball_mesh(dom.n, 0.5, divisions=2 * m)
    if dom.phi.is_identity:
        return base
    return Domain.from_simplices(dom.n, dom.phi.inverse(base.vertices), base.simplices, dom.phi)


def _divisions_of(dom: Domain) -> int:
    facets = 6 if dom.n == 2 else 20
    return int(round((len(dom.simplices) / facets) ** (1.0 / dom.n)))


def build_perturbed_ball(n: int, h: float, amplitude: float, shape: np.ndarray | None = None, divisions: int | None = None) -> tuple[Domain, Diffeomorphism]:
    """Mesh of Psi(B^n) for the radial-bump map and the diffeomorphism Phi onto the ball."""
    phi = build_diffeomorphism(n, amplitude, shape)
    ball = build_ball_mesh(n, h, divisions=divisions)
    if phi.is_identity:
        return ball, phi
    verts = phi.inverse(ball.vertices)
    return Domain.from_simplices(n, verts, ball.simplices, phi), phi


def mesh_for(phi: Diffeomorphism, h: float, divisions: int | None = None) -> Domain:
    """Mesh of Phi^{-1}(B^n) for a given diffeomorphism (the ball mesh itself when Phi = Id)."""
    ball = build_ball_mesh(phi.n, h, divisions=divisions)
    if phi.is_identity:
        return ball
    return Domain.from_simplices(phi.n, phi.inverse(ball.vertices), ball.simplices, phi)
