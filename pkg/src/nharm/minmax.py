"""The mountain-pass experiment on a (perturbed) ball.

The boundary path a -> chi_r(a) = M_{(1-r)Phi(a)} o Phi_a gives the level
c1(alpha, r), the largest (n+alpha)-energy along the path.  A filling extends
the path to all anchors of the closed domain; the largest energy over a
filling bounds the min-max level c(alpha, r) from above.  Descent runs seeded
at the filling's most energetic anchor produce the critical points whose
energies are compared with both numbers.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DegreeAmbiguousError, NumericalError, PreconditionError
from .fields import MapField, degree_estimates, energy
from .geometry.conformal import conformalize_at
from .geometry.mesh import build_ball_mesh, mesh_for
from .geometry.refine import refine_near
from .geometry.shapes import IdentityDiffeo
from .mobius import almost_mobius, almost_mobius_map, orientation_fix
from .quadrature import conformal_energy_constant
from .solver import SolverConfig, free_boundary_descent, p_laplacian_dirichlet

BOUNDARY_AGREEMENT_TOL = 1e-8


def fibonacci_sphere(count: int, n: int = 3) -> np.ndarray:
    """Quasi-uniform deterministic points on the unit sphere (equal angles when n = 2)."""
    if count < 1:
        raise PreconditionError("need at least one anchor")
    if n == 2:
        t = 2.0 * np.pi * (np.arange(count) + 0.5) / count
        return np.column_stack([np.cos(t), np.sin(t)])
    k = np.arange(count) + 0.5
    z = 1.0 - 2.0 * k / count
    theta = np.pi * (1.0 + np.sqrt(5.0)) * k
    rad = np.sqrt(1.0 - z * z)
    return np.column_stack([rad * np.cos(theta), rad * np.sin(theta), z])


def boundary_anchors(phi, count: int) -> np.ndarray:
    return phi.inverse(fibonacci_sphere(count, phi.n))


def interior_anchors(phi, count: int, shells=(0.35, 0.65, 0.9)) -> np.ndarray:
    """The centre plus quasi-uniform points on radial shells (counts grow like radius^(n-1)), pushed by Phi^{-1}."""
    n = phi.n
    if count < 1:
        raise PreconditionError("need at least one interior anchor")
    weights = np.array(shells) ** (n - 1)
    per = np.floor((count - 1) * weights / weights.sum()).astype(int)
    per[-1] += count - 1 - per.sum()
    pts = [np.zeros((1, n))]
    for s, m in zip(shells, per):
        if m > 0:
            pts.append(s * fibonacci_sphere(int(m), n))
    return phi.inverse(np.vstack(pts))


# ----------------------------------------------------------------------
# The boundary path
# ----------------------------------------------------------------------
@dataclass
class PathSample:
    anchors: np.ndarray
    r: float
    alpha: float
    energies: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.energies)) or np.any(self.energies <= 0):
            raise NumericalError("path energies must be finite and positive")

    def rows(self) -> list[dict]:
        return [
            {"index": i, **{f"a{j}": float(v) for j, v in enumerate(a)}, "energy": float(e)}
            for i, (a, e) in enumerate(zip(self.anchors, self.energies))
        ]


@dataclass
class C1Level:
    c1: float
    argmax_anchor: np.ndarray
    table: PathSample
    warnings: list[str] = field(default_factory=list)


def path_energy(r: float, a: np.ndarray, phi, alpha: float, quadrature: tuple[int, int] = (16, 20)) -> float:
    """E_{n+alpha}(chi_r(a)) by the target-variable quadrature of the analytic map."""
    u = almost_mobius_map(r, a, phi)
    return u.energy(phi.n + alpha, *quadrature)


def c1_level(r: float, alpha: float, anchor_count: int, phi=None, n: int = 3, h: float | None = 0.15,
             anchors: np.ndarray | None = None, quadrature: tuple[int, int] = (16, 20)) -> C1Level:
    """Largest (n+alpha)-energy along the boundary path over quasi-uniform anchors."""
    phi = phi if phi is not None else IdentityDiffeo(n)
    if not 0.0 < r < 0.5:
        raise PreconditionError(f"r must lie in (0, 0.5), got {r}")
    if not 0.0 <= alpha <= 0.2:
        raise PreconditionError(f"alpha must lie in [0, 0.2], got {alpha}")
    notes = []
    if h is not None and r < 2.0 * h:
        msg = f"r = {r} is below 2h = {2 * h:.3g}: a mesh of this size would not resolve the path maps"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    A = boundary_anchors(phi, anchor_count) if anchors is None else np.asarray(anchors, dtype=float)
    E = np.array([path_energy(r, a, phi, alpha, quadrature) for a in A])
    k = int(np.argmax(E))
    return C1Level(float(E[k]), A[k], PathSample(A, r, alpha, E), notes)


# ----------------------------------------------------------------------
# Fillings
# ----------------------------------------------------------------------
@dataclass
class Filling:
    """A family a -> F(a) over the closed domain that restricts to chi_r on the boundary.

    ``core`` overrides the canonical member chi_r(a); leaving it unset gives
    the canonical filling.  ``core`` may return any callable map with an
    ``energy(p)`` method (an AlmostMobius, for example).
    """

    phi: object
    r: float
    core: Callable | None = None
    name: str = "canonical"

    @property
    def n(self) -> int:
        return self.phi.n

    def at(self, a: np.ndarray):
        a = np.asarray(a, dtype=float)
        if self.core is not None:
            return self.core(a)
        return almost_mobius_map(self.r, a, self.phi)

    def field(self, a: np.ndarray, dom) -> MapField:
        """Nodal sample of F(a) on ``dom``, boundary values renormalized."""
        u = self.at(a)
        vals = u(dom.vertices)
        b = dom.boundary_flags
        vals[b] /= np.linalg.norm(vals[b], axis=1, keepdims=True)
        return MapField(dom, vals, None, True)

    def validate(self, check_dom, boundary_sample: np.ndarray, interior_sample: np.ndarray) -> None:
        """Boundary agreement with chi_r to 1e-8 and unit-norm, degree-one boundary traces."""
        X = check_dom.vertices
        for a in boundary_sample:
            got = self.at(a)(X)
            ref = almost_mobius_map(self.r, a, self.phi)(X)
            dev = float(np.max(np.abs(got - ref)))
            if dev > BOUNDARY_AGREEMENT_TOL:
                raise PreconditionError(
                    f"filling {self.name!r} disagrees with the boundary path at anchor {np.round(a, 4)} by {dev:.3g}"
                )
        S, faces = _sphere_triangulation(self.n)
        for a in np.vstack([boundary_sample, interior_sample]):
            # boundary points spread evenly in the image of the reference path map,
            # so the degree is read off a triangulation that resolves the concentration
            ref = almost_mobius_map(self.r, a, self.phi)
            pts = ref.phi_a.inverse(ref.mobius.inverse(S))
            vals = self.at(a)(pts)
            dev = float(np.max(np.abs(np.linalg.norm(vals, axis=1) - 1.0)))
            if dev > BOUNDARY_AGREEMENT_TOL:
                raise PreconditionError(f"filling member at {np.round(a, 4)} leaves the sphere on the boundary by {dev:.3g}")
            deg = _image_degree(vals, faces)
            if abs(deg - 1.0) > 1e-6:
                raise PreconditionError(f"filling member at {np.round(a, 4)} has boundary degree {deg:.4f}, not 1")


def canonical_filling(phi, r: float) -> Filling:
    return Filling(phi, r)


@dataclass
class FillingBound:
    value: float
    argmax_anchor: np.ndarray
    interior_max: float
    boundary_max: float
    interior: PathSample
    boundary: PathSample


def filling_upper_bound(filling: Filling, r: float, alpha: float, interior_anchor_count: int,
                        boundary_anchor_count: int = 12, check_dom=None, quadrature: tuple[int, int] = (16, 20)) -> FillingBound:
    """Largest (n+alpha)-energy of the filling over sampled anchors of the closed domain."""
    if abs(filling.r - r) > 0:
        raise PreconditionError(f"filling was built for r = {filling.r}, not {r}")
    phi = filling.phi
    n = phi.n
    Ab = boundary_anchors(phi, boundary_anchor_count)
    Ai = interior_anchors(phi, interior_anchor_count)
    if check_dom is None:
        check_dom = _check_mesh(phi)
    filling.validate(check_dom, Ab, Ai[:: max(1, len(Ai) // 6)])
    p = n + alpha
    Ei = np.array([filling.at(a).energy(p, *quadrature) for a in Ai])
    Eb = np.array([filling.at(a).energy(p, *quadrature) for a in Ab])
    allA = np.vstack([Ai, Ab])
    allE = np.concatenate([Ei, Eb])
    k = int(np.argmax(allE))
    return FillingBound(float(allE[k]), allA[k], float(Ei.max()), float(Eb.max()),
                        PathSample(Ai, r, alpha, Ei), PathSample(Ab, r, alpha, Eb))


def _check_mesh(phi, h: float = 0.5):
    return mesh_for(phi, h)


# ----------------------------------------------------------------------
# Barycenter zero
# ----------------------------------------------------------------------
@dataclass
class BarycenterZero:
    anchor: np.ndarray
    value: np.ndarray
    boundary_degree: int
    evaluations: int
    extension_exponent: float
    notes: list[str] = field(default_factory=list)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.value))


class BarycenterMap:
    """G_r(a): the average over the domain of the p-harmonic extension of the trace of F(a).

    The members of a filling carry the orientation fix R of the Möbius
    factor (a reflection when n is odd).  The extension commutes with
    orthogonal maps, so the average is reported in the frame of the
    unreflected family, R^T times the raw average.  This does not move the
    zero and makes G_r close to Phi on the boundary.
    """

    def __init__(self, filling: Filling, dom=None, p: float | None = None, h: float = 0.3):
        self.filling = filling
        self.phi = filling.phi
        self.dom = dom if dom is not None else _check_mesh(self.phi, h)
        self.p = float(self.phi.n if p is None else p)
        self._frame = orientation_fix(self.phi.n)
        self._cache: dict = {}

    def __call__(self, a: np.ndarray) -> np.ndarray:
        key = tuple(np.round(np.asarray(a, dtype=float), 14))
        if key not in self._cache:
            dom = self.dom
            b = dom.boundary_vertex_ids
            tr = self.filling.at(np.asarray(key))(dom.vertices[b])
            tr /= np.linalg.norm(tr, axis=1, keepdims=True)
            u = p_laplacian_dirichlet(dom, tr, self.p)
            w = dom.lumped_mass
            self._cache[key] = self._frame.T @ ((w @ u.values) / w.sum())
        return self._cache[key]

    @property
    def evaluations(self) -> int:
        return len(self._cache)


def _sphere_triangulation(n: int):
    """Boundary triangulation of a coarse ball mesh: unit vectors and faces (segments when n = 2)."""
    dom = build_ball_mesh(n, 0.5)
    ids = np.unique(dom.boundary_faces)
    remap = -np.ones(dom.num_vertices, dtype=int)
    remap[ids] = np.arange(len(ids))
    return dom.vertices[ids], remap[dom.boundary_faces]


def _image_degree(values: np.ndarray, faces: np.ndarray) -> float:
    """Degree of the piecewise-geodesic map given by normalized values on an oriented closed surface."""
    W = values / np.linalg.norm(values, axis=1, keepdims=True)
    if values.shape[1] == 2:
        a, b = W[faces[:, 0]], W[faces[:, 1]]
        return float(np.sum(np.arctan2(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0], np.sum(a * b, axis=1))) / (2 * np.pi))
    a, b, c = W[faces[:, 0]], W[faces[:, 1]], W[faces[:, 2]]
    num = np.einsum("ij,ij->i", a, np.cross(b, c))
    den = 1.0 + np.sum(a * b, axis=1) + np.sum(b * c, axis=1) + np.sum(c * a, axis=1)
    return float(np.sum(2.0 * np.arctan2(num, den)) / (4 * np.pi))


def _cube_surface(centre: np.ndarray, half: float, k: int):
    """Outward-oriented triangulation of the surface of a cube (square when n = 2) with k cells per edge."""
    n = len(centre)
    t = np.linspace(-1.0, 1.0, k + 1)
    pts, faces = [], []
    if n == 2:
        loop = np.vstack([np.column_stack([t, -np.ones_like(t)])[:-1], np.column_stack([np.ones_like(t), t])[:-1],
                          np.column_stack([-t, np.ones_like(t)])[:-1], np.column_stack([-np.ones_like(t), -t])[:-1]])
        m = len(loop)
        return centre + half * loop, np.column_stack([np.arange(m), (np.arange(m) + 1) % m])
    index: dict = {}

    def vid(p):
        key = tuple(np.round(p, 12))
        if key not in index:
            index[key] = len(pts)
            pts.append(p)
        return index[key]

    for axis in range(3):
        for sign in (-1.0, 1.0):
            u_ax, v_ax = [d for d in range(3) if d != axis]
            for i in range(k):
                for j in range(k):
                    quad = []
                    for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        p = np.zeros(3)
                        p[axis] = sign
                        p[u_ax] = t[i + di]
                        p[v_ax] = t[j + dj]
                        quad.append(vid(p))
                    for tri in ((quad[0], quad[1], quad[2]), (quad[0], quad[2], quad[3])):
                        P = np.array([pts[q] for q in tri])
                        nrm = np.cross(P[1] - P[0], P[2] - P[0])
                        faces.append(tri if nrm[axis] * sign > 0 else (tri[0], tri[2], tri[1]))
    return centre + half * np.array(pts), np.array(faces)


def barycenter_zero(filling: Filling, resolution: float = 1e-3, dom=None, p: float | None = None,
                    harmonic_fallback: bool = False, max_levels: int = 4, cells: int = 2) -> BarycenterZero:
    """Zero of G_r located by degree-guided bisection of cubes in ball coordinates, then polished by Newton.

    The degree of G_r / |G_r| over the domain boundary must be one; each
    bisection keeps the sub-cube whose boundary carries non-zero degree.
    """
    phi = filling.phi
    n = phi.n
    p_ext = 2.0 if harmonic_fallback else (float(n) if p is None else p)
    G = BarycenterMap(filling, dom, p_ext)
    notes = ["p = 2 extension used in place of p = n"] if harmonic_fallback else []

    def G_ball(bpt):
        return G(phi.inverse(np.asarray(bpt)[None])[0])

    S, F = _sphere_triangulation(n)
    Ab = phi.inverse(S)
    vals = np.array([G(a) for a in Ab])
    deg = _image_degree(vals, F)
    bdeg = int(round(deg))
    if abs(deg - bdeg) > 1e-6 or bdeg != 1:
        raise NumericalError(f"no zero found: the boundary degree of G_r is {deg:.4f}, not 1 (r too large?)")

    half = 0.98 / np.sqrt(n)
    centre = np.zeros(n)
    for _ in range(max_levels):
        best = None
        for corner in np.array(np.meshgrid(*[[-1, 1]] * n, indexing="ij")).reshape(n, -1).T:
            c = centre + 0.5 * half * corner
            P, Fc = _cube_surface(c, 0.5 * half, cells)
            d = _image_degree(np.array([G_ball(q) for q in P]), Fc)
            if abs(d) > 0.5:
                best = c
                break
        if best is None:
            # the zero sits on a shared face; keep the child whose centre is closest to it
            kids = [centre + 0.5 * half * corner for corner in np.array(np.meshgrid(*[[-1, 1]] * n, indexing="ij")).reshape(n, -1).T]
            best = min(kids, key=lambda c: np.linalg.norm(G_ball(c)))
        centre, half = best, 0.5 * half
        if np.linalg.norm(G_ball(centre)) <= resolution:
            break

    # Newton polish with a central-difference Jacobian in ball coordinates
    x = centre.copy()
    step = 1e-4
    for _ in range(20):
        gx = G_ball(x)
        if np.linalg.norm(gx) <= 0.1 * resolution:
            break
        J = np.column_stack([(G_ball(x + step * e) - G_ball(x - step * e)) / (2 * step) for e in np.eye(n)])
        dx = np.linalg.solve(J, -gx)
        t = 1.0
        while np.linalg.norm(x + t * dx) >= 1.0 or np.linalg.norm(G_ball(x + t * dx)) > np.linalg.norm(gx):
            t *= 0.5
            if t < 1e-6:
                break
        if t < 1e-6:
            break
        x = x + t * dx
    a = phi.inverse(x[None])[0]
    value = G(a)
    if np.linalg.norm(value) > resolution:
        notes.append(f"best zero found has |G_r| = {np.linalg.norm(value):.3g} above the requested resolution")
    return BarycenterZero(a, value, bdeg, G.evaluations, p_ext, notes)


# ----------------------------------------------------------------------
# The experiment
# ----------------------------------------------------------------------
@dataclass
class DescentSummary:
    alpha: float
    seed_anchor: np.ndarray
    seed_energy: float
    energy: float
    residual: float
    degree: int | None
    status: str
    iterations: int
    mesh: dict


@dataclass
class MountainPassReport:
    domain: dict
    r: float
    alphas: list
    c1: dict
    upper_bound: dict
    anchors: dict
    descents: list
    chain_holds: dict
    flags: list
    ground_state: float

    def to_json(self) -> dict:
        def conv(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, (np.floating, np.integer)):
                return v.item()
            if isinstance(v, dict):
                return {str(k): conv(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [conv(x) for x in v]
            if hasattr(v, "__dataclass_fields__"):
                return {k: conv(getattr(v, k)) for k in v.__dataclass_fields__}
            return v

        return conv(self)


def seed_mesh(phi, anchor: np.ndarray, r: float, h: float = 0.15, base=None):
    """Mesh of the domain refined near ``anchor`` so that chi_r(anchor) is resolved."""
    if base is None:
        base = mesh_for(phi, h)
    depth = float(phi.level_set(anchor[None])[0]) if not phi.is_identity else 1.0 - float(np.linalg.norm(anchor))
    if depth > 0.5:
        return base
    target = phi.project_to_boundary(anchor[None])[0] if depth < r else anchor
    return refine_near(base, target, 0.25 * r)


def mountain_pass_experiment(phi, r: float, alphas, h: float = 0.15, anchor_count: int = 16,
                             interior_anchor_count: int = 16, cfg_overrides: dict | None = None,
                             base_mesh=None, quadrature: tuple[int, int] = (16, 20)) -> MountainPassReport:
    """c1, the filling bound and a seeded descent for each alpha in the schedule."""
    n = phi.n
    ground = conformal_energy_constant(n)
    flags = []
    if phi.is_identity:
        flags.append("ball: no strict gap expected")
    filling = canonical_filling(phi, r)
    if base_mesh is None:
        base_mesh = mesh_for(phi, h)
    c1s, ubs, descents, chain, anchors = {}, {}, [], {}, {}
    for alpha in alphas:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            lvl = c1_level(r, alpha, anchor_count, phi, h=h, quadrature=quadrature)
        ub = filling_upper_bound(filling, r, alpha, interior_anchor_count, anchor_count, quadrature=quadrature)
        c1s[alpha] = lvl.c1
        ubs[alpha] = ub.value
        chain[alpha] = bool(lvl.c1 <= ub.value * (1 + 1e-12))
        anchors[alpha] = {"c1_argmax": lvl.argmax_anchor, "filling_argmax": ub.argmax_anchor}
        seed_a = ub.argmax_anchor
        dom = seed_mesh(phi, seed_a, r, h, base_mesh)
        u0 = almost_mobius(r, seed_a, phi, conformalize_at(phi, seed_a), dom)
        cfg = SolverConfig(p=n + alpha, **(cfg_overrides or {}))
        u, tr = free_boundary_descent(dom, u0, cfg)
        try:
            deg = degree_estimates(u).degree
        except DegreeAmbiguousError:
            deg = None
        descents.append(DescentSummary(alpha, seed_a, energy(u0, n + alpha).value, tr.energy[-1], tr.residual[-1],
                                       deg, tr.status, tr.iterations, dom.stats()))
        if tr.status == "degree_changed":
            flags.append(f"alpha={alpha}: degree changed during descent (observed compactness failure)")
    domain = {"n": n, "ball": bool(phi.is_identity), "amplitude": float(getattr(phi, "amplitude", 0.0)),
              "h": h, "c1_distance": float(phi.c1_distance_to_identity())}
    return MountainPassReport(domain, r, list(alphas), c1s, ubs, anchors, descents, chain, flags, ground)
