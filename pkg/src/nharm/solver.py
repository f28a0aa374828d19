"""p-Laplacian Dirichlet solves and sphere-constrained descent for free-boundary maps.

Fields with unit boundary norm form a product of spheres at the boundary
nodes.  Tangent vectors are parametrized by free values at interior nodes and
by n-1 coordinates in an orthonormal basis of u_i^perp at every boundary node
i; steps are retracted back onto the constraint by renormalizing boundary
values.  Search directions come from the Riemannian Newton system

    (B^T H B - diag(<g_i, u_i>)) d = -B^T g,

shifted towards the H^1 Gram matrix when it is not positive definite, with a
backtracking Armijo line search on the energy.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DegreeAmbiguousError, NumericalError, PreconditionError
from .fem import (
    field_gradients,
    harmonic_extension,
    operators,
    p_energy,
    p_energy_gradient,
    p_energy_hessian,
    pcg,
    tangent_bases,
    vector_operator,
)
from .fields import MapField, degree_estimates
from .integrate import mesh_quadrature

DIRICHLET_CONTINUATION = (1e-2, 1e-4)
BOUNDARY_MODES = ("retract",)
DIRECTION_MODES = ("newton", "sobolev")


@dataclass
class SolverConfig:
    p: float
    eps_reg: float = 0.0
    max_iters: int = 200
    energy_tol: float = 1e-13
    residual_tol: float = 1e-7
    backtrack: float = 0.5
    initial_step: float = 1.0
    armijo: float = 1e-4
    boundary_mode: str = "retract"
    direction: str = "newton"

    def __post_init__(self):
        if not self.p >= 2:
            raise ConfigError(f"exponent p must be at least 2, got {self.p}")
        if self.eps_reg < 0:
            raise ConfigError("eps_reg must be non-negative")
        if self.energy_tol <= 0 or self.residual_tol <= 0:
            raise ConfigError("tolerances must be positive")
        if not 0 < self.backtrack < 1:
            raise ConfigError("backtracking factor must lie in (0, 1)")
        if self.initial_step <= 0 or self.max_iters < 1:
            raise ConfigError("initial step and iteration cap must be positive")
        if self.boundary_mode not in BOUNDARY_MODES:
            raise ConfigError(f"unknown boundary mode {self.boundary_mode!r}; choose from {BOUNDARY_MODES}")
        if self.direction not in DIRECTION_MODES:
            raise ConfigError(f"unknown direction {self.direction!r}; choose from {DIRECTION_MODES}")

    @classmethod
    def from_mapping(cls, data: dict) -> "SolverConfig":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in data.items():
            if key not in known:
                raise ConfigError(f"unknown solver setting {key!r}")
            if key in ("boundary_mode", "direction"):
                kwargs[key] = str(raw)
            elif key == "max_iters":
                kwargs[key] = int(raw)
            else:
                try:
                    kwargs[key] = float(raw)
                except ValueError as exc:
                    raise ConfigError(f"setting {key!r} needs a number, got {raw!r}") from exc
        if "p" not in kwargs:
            raise ConfigError("solver config needs the exponent p")
        return cls(**kwargs)


@dataclass
class DescentTrace:
    energy: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    degree: list = field(default_factory=list)
    step: list = field(default_factory=list)
    status: str = "max_iters"

    def record(self, energy: float, residual: float, degree: int, step: float) -> None:
        self.energy.append(float(energy))
        self.residual.append(float(residual))
        self.degree.append(int(degree))
        self.step.append(float(step))

    @property
    def iterations(self) -> int:
        return len(self.energy)

    def rows(self) -> list[dict]:
        return [
            {"iteration": i, "energy": e, "residual": r, "degree": d, "step": s}
            for i, (e, r, d, s) in enumerate(zip(self.energy, self.residual, self.degree, self.step))
        ]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["iteration", "energy", "residual", "degree", "step"])
            w.writeheader()
            for row in self.rows():
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})

    def summary(self) -> dict:
        return {
            "status": self.status,
            "iterations": self.iterations,
            "energy": self.energy[-1] if self.energy else None,
            "residual": self.residual[-1] if self.residual else None,
            "degree": self.degree[-1] if self.degree else None,
        }


# ----------------------------------------------------------------------
# Dirichlet problem
# ----------------------------------------------------------------------
@dataclass
class DirichletInfo:
    iterations: int
    residual: float
    energy: float
    stages: list


def _boundary_data(dom, g) -> np.ndarray:
    b = dom.boundary_vertex_ids
    if isinstance(g, MapField):
        return g.values[b].copy()
    if callable(g):
        return np.asarray(g(dom.vertices[b]), dtype=float)
    g = np.asarray(g, dtype=float)
    if g.shape == (dom.num_vertices, dom.n):
        return g[b].copy()
    if g.shape == (len(b), dom.n):
        return g.copy()
    raise PreconditionError(f"boundary data must have shape {(len(b), dom.n)}, got {g.shape}")


def _newton_dirichlet(dom, U, free, p, eps, tol, max_iters, backtrack, armijo):
    n = dom.n
    dofs = (free[:, None] * n + np.arange(n)).ravel()
    precond = operators(dom).componentwise(operators(dom).interior_stiffness_lu, n)
    it = 0
    res = np.inf
    for it in range(1, max_iters + 1):
        E, g = p_energy_gradient(dom, U, p, eps)
        gf = g.ravel()[dofs]
        res = float(np.linalg.norm(gf))
        if res <= tol:
            return U, it - 1, res
        H = p_energy_hessian(dom, U, p, eps)[dofs][:, dofs]
        sol = pcg(H, -gf, precond, rtol=1e-10, maxiter=2000)
        d = sol.x
        slope = float(gf @ d)
        if sol.negative_curvature or not slope < 0:
            # the regularized Hessian is singular here; use the harmonic preconditioner as the metric
            d = -precond(gf)
            slope = float(gf @ d)
        if -slope <= 1e-15 * max(E, 1e-300):
            # Newton decrement below double-precision resolution of the energy
            return U, it, res
        t = 1.0
        while True:
            V = U.copy()
            V.reshape(-1)[dofs] += t * d
            Et = p_energy(dom, V, p, eps)
            if Et <= E + armijo * t * slope:
                break
            t *= backtrack
            if t < 1e-14:
                # no decrease representable in floating point: the iterate is converged
                return U, it, res
        U = V
    E, g = p_energy_gradient(dom, U, p, eps)
    return U, max_iters, float(np.linalg.norm(g.ravel()[dofs]))


def solve_dirichlet(dom, g, p: float, cfg: SolverConfig | None = None) -> tuple[MapField, DirichletInfo]:
    """Minimize the discrete p-energy with prescribed boundary values.

    The initial guess is the harmonic extension; Newton runs on the
    regularized energy with eps continued through ``DIRICHLET_CONTINUATION``
    down to ``cfg.eps_reg``.
    """
    if p < 2:
        raise PreconditionError(f"exponent must be at least 2, got {p}")
    cfg = cfg or SolverConfig(p=p)
    gb = _boundary_data(dom, g)
    U = harmonic_extension(dom)(gb)
    free = dom.interior_vertex_ids
    scale = float(np.sum(dom.lumped_mass)) * max(1.0, float(np.max(np.abs(gb)))) ** max(p - 1.0, 1.0)
    tol = 1e-11 * scale
    stages = []
    total = 0
    res = 0.0
    if p != 2 and len(free):
        for eps in [e for e in DIRICHLET_CONTINUATION if e > cfg.eps_reg] + [cfg.eps_reg]:
            U, its, res = _newton_dirichlet(dom, U, free, p, eps, tol, cfg.max_iters, cfg.backtrack, cfg.armijo)
            stages.append({"eps": eps, "iterations": its, "residual": res})
            total += its
        if res > 1e-6 * scale:
            raise NumericalError(f"p-Laplacian Newton did not converge: final residual {res:.3g}")
    unit = bool(np.all(np.abs(np.linalg.norm(gb, axis=1) - 1.0) <= 1e-10))
    u = MapField(dom, U, None, unit)
    return u, DirichletInfo(total, res, p_energy(dom, U, p, cfg.eps_reg), stages)


def p_laplacian_dirichlet(dom, g, p: float, cfg: SolverConfig | None = None) -> MapField:
    return solve_dirichlet(dom, g, p, cfg)[0]


# ----------------------------------------------------------------------
# Stability of the extension
# ----------------------------------------------------------------------
def gagliardo_seminorm(dom, values: np.ndarray, s: float | None = None, q: float | None = None) -> float:
    """Double-sum surrogate of the W^{s,q} seminorm over boundary nodes (defaults s = 1 - 1/n, q = n).

    [g]^q = sum_{i != j} |g_i - g_j|^q / |x_i - x_j|^{(n-1) + s q} w_i w_j
    with lumped boundary weights w.
    """
    n = dom.n
    q = float(n) if q is None else q
    s = 1.0 - 1.0 / n if s is None else s
    b = dom.boundary_vertex_ids
    X = dom.vertices[b]
    g = np.asarray(values, dtype=float)
    if g.shape[0] == dom.num_vertices:
        g = g[b]
    w = dom.boundary_lumped_areas[b]
    total = 0.0
    expo = (n - 1) + s * q
    for start in range(0, len(b), 512):
        sl = slice(start, start + 512)
        dx = np.linalg.norm(X[sl, None, :] - X[None, :, :], axis=-1)
        dg = np.linalg.norm(g[sl, None, :] - g[None, :, :], axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            kern = np.where(dx > 0, dg**q / dx**expo, 0.0)
        total += float(w[sl] @ kern @ w)
    return total ** (1.0 / q)


@dataclass
class ExtensionStability:
    l1_boundary_distance: float
    l1_interior_distance: float
    seminorms: tuple
    ratio: float


def _l1_boundary(dom, diff: np.ndarray) -> float:
    # exact for the piecewise-linear trace up to a 3-point face rule
    from .quadrature import simplex_rule

    bary, w = simplex_rule(dom.n - 1, 3)
    vals = np.einsum("qk,fkc->fqc", bary, diff[dom.boundary_faces])
    return float(np.sum(dom.face_areas[:, None] * w[None, :] * np.linalg.norm(vals, axis=-1)))


def _l1_interior(dom, diff: np.ndarray) -> float:
    from .quadrature import simplex_rule

    bary, w = simplex_rule(dom.n, 3)
    vals = np.einsum("qk,skc->sqc", bary, diff[dom.simplices])
    return float(np.sum(dom.volumes[:, None] * w[None, :] * np.linalg.norm(vals, axis=-1)))


def extension_l1_stability(dom, g1, g2, p: float | None = None, bound: float | None = None) -> ExtensionStability:
    """L1 distances of two traces and of their p-harmonic extensions (default p = n)."""
    p = float(dom.n) if p is None else p
    b1 = _boundary_data(dom, g1)
    b2 = _boundary_data(dom, g2)
    semis = (gagliardo_seminorm(dom, b1), gagliardo_seminorm(dom, b2))
    if bound is not None and max(semis) > bound:
        raise PreconditionError(f"trace seminorm {max(semis):.4g} exceeds the bound {bound:.4g}")
    if np.array_equal(b1, b2):
        return ExtensionStability(0.0, 0.0, semis, 0.0)
    u1 = p_laplacian_dirichlet(dom, b1, p).values
    u2 = p_laplacian_dirichlet(dom, b2, p).values
    full = np.zeros_like(u1)
    full[dom.boundary_vertex_ids] = b1 - b2
    lb = _l1_boundary(dom, full)
    li = _l1_interior(dom, u1 - u2)
    return ExtensionStability(lb, li, semis, li / lb if lb > 0 else 0.0)


# ----------------------------------------------------------------------
# Tangential projection and criticality
# ----------------------------------------------------------------------
def tangential_projection(u: MapField, v) -> MapField:
    """w = v - H(<u, v> u restricted to the boundary), H the discrete harmonic extension."""
    if not u.boundary_unit_norm:
        raise PreconditionError("tangential projection needs a field with unit boundary norm")
    dom = u.dom
    V = v.values if isinstance(v, MapField) else np.asarray(v, dtype=float)
    b = dom.boundary_vertex_ids
    ub = u.values[b]
    normal_part = np.sum(ub * V[b], axis=1)[:, None] * ub
    W = V - harmonic_extension(dom)(normal_part)
    # the extension reproduces the boundary values only up to the solver's
    # rounding; set them exactly so the trace is tangential to machine precision
    W[b] = V[b] - normal_part
    return MapField(dom, W)


def tangent_map(dom, U: np.ndarray) -> sp.csr_matrix:
    """Sparse B mapping tangent coordinates to nodal displacements (N n rows)."""
    n = dom.n
    b = dom.boundary_vertex_ids
    free = dom.interior_vertex_ids
    T = tangent_bases(U[b])  # (Nb, n, n-1)
    rows_i = (free[:, None] * n + np.arange(n)).ravel()
    cols_i = np.arange(len(rows_i))
    off = len(rows_i)
    rows_b = np.repeat((b[:, None] * n + np.arange(n))[:, :, None], n - 1, axis=2).ravel()
    cols_b = off + np.repeat((np.arange(len(b))[:, None] * (n - 1) + np.arange(n - 1))[:, None, :], n, axis=1).ravel()
    rows = np.concatenate([rows_i, rows_b])
    cols = np.concatenate([cols_i, cols_b])
    vals = np.concatenate([np.ones(off), T.ravel()])
    return sp.csr_matrix((vals, (rows, cols)), shape=(dom.num_vertices * n, off + len(b) * (n - 1)))


class TangentSpace:
    """Tangent coordinates at U with the H^1 metric and its preconditioner."""

    def __init__(self, dom, U: np.ndarray):
        ops = operators(dom)
        self.dom = dom
        self.B = tangent_map(dom, U)
        gram = vector_operator(ops.stiffness + ops.mass, dom.n)
        self.gram = (self.B.T @ gram @ self.B).tocsr()
        full = ops.componentwise(ops.h1_lu, dom.n)
        self.precond = lambda x: self.B.T @ full(self.B @ x)

    def riesz(self, gT: np.ndarray) -> np.ndarray:
        """Gram^{-1} g: the Sobolev gradient in tangent coordinates."""
        sol = pcg(self.gram, gT, self.precond, rtol=1e-12, maxiter=2000)
        if not sol.converged:
            raise NumericalError("H^1 Gram solve did not converge")
        return sol.x

    def dual_norm(self, gT: np.ndarray) -> float:
        if not np.any(gT):
            return 0.0
        return float(np.sqrt(max(gT @ self.riesz(gT), 0.0)))


@dataclass
class CriticalityResidual:
    residual: float
    boundary_defect: float

    def __float__(self) -> float:
        return self.residual


def boundary_wedge_defect(u: MapField, p: float) -> float:
    """Integral over boundary faces of | |du|^{p-2} d_nu u  wedge  u |."""
    dom = u.dom
    G = field_gradients(dom, u.values)[dom.boundary_face_owner]  # (F, n, n)
    dnu = np.einsum("fcd,fd->fc", G, dom.face_normals)
    lam = np.sum(G * G, axis=(1, 2)) ** ((p - 2.0) / 2.0)
    from .quadrature import simplex_rule

    bary, w = simplex_rule(dom.n - 1, 3)
    uq = np.einsum("qk,fkc->fqc", bary, u.values[dom.boundary_faces])
    a2 = np.sum(dnu * dnu, axis=1)[:, None]
    b2 = np.sum(uq * uq, axis=2)
    ab = np.einsum("fc,fqc->fq", dnu, uq)
    wedge = np.sqrt(np.maximum(a2 * b2 - ab * ab, 0.0))
    return float(np.sum(dom.face_areas[:, None] * w[None, :] * lam[:, None] * wedge))


def _tangent_state(dom, U, p, eps):
    E, g = p_energy_gradient(dom, U, p, eps)
    ts = TangentSpace(dom, U)
    return E, g, ts, ts.B.T @ g.ravel()


def criticality_residual(u: MapField, p: float, eps: float = 0.0) -> CriticalityResidual:
    """H^1-dual norm of the constrained gradient over tangential test fields."""
    if not u.boundary_unit_norm:
        raise PreconditionError("criticality is defined for fields with unit boundary norm")
    _, _, ts, gT = _tangent_state(u.dom, u.values, p, eps)
    return CriticalityResidual(ts.dual_norm(gT), boundary_wedge_defect(u, p))


def _retract(dom, U, B, step_vec):
    V = U + (B @ step_vec).reshape(U.shape)
    b = dom.boundary_vertex_ids
    V[b] /= np.linalg.norm(V[b], axis=1, keepdims=True)
    return V


def _curvature_shift(dom, U, g) -> np.ndarray:
    """Diagonal Weingarten term <g_i, u_i> on the boundary tangent coordinates."""
    n = dom.n
    b = dom.boundary_vertex_ids
    out = np.zeros(len(dom.interior_vertex_ids) * n + len(b) * (n - 1))
    s = np.sum(g[b] * U[b], axis=1)
    out[len(dom.interior_vertex_ids) * n :] = np.repeat(s, n - 1)
    return out


def _safe_degree(u: MapField) -> int | None:
    try:
        return degree_estimates(u).degree
    except DegreeAmbiguousError:
        return None


def free_boundary_descent(dom, u0: MapField, cfg: SolverConfig, callback=None) -> tuple[MapField, DescentTrace]:
    """Descend E_p from u0 among fields with unit boundary norm (p = n + alpha, alpha > 0)."""
    if u0.dom is not dom:
        raise PreconditionError("the initial field lives on a different domain")
    if not u0.boundary_unit_norm:
        raise PreconditionError("the initial field must have unit boundary norm")
    if not cfg.p > dom.n:
        raise PreconditionError(f"descent needs p = n + alpha with alpha > 0, got p = {cfg.p} for n = {dom.n}")
    p, eps = cfg.p, cfg.eps_reg
    deg0 = _safe_degree(u0)
    if deg0 is None:
        raise PreconditionError("the initial field has an ambiguous degree")
    trace = DescentTrace()
    U = u0.values.copy()
    step = 0.0
    mu = 0.0
    prev = None  # (last tangent step, gradient change) for the Barzilai-Borwein step
    E, g, ts, gT = _tangent_state(dom, U, p, eps)
    for it in range(cfg.max_iters + 1):
        res = ts.dual_norm(gT)
        trace.record(E, res, deg0, step)
        if callback is not None:
            callback(it, E, res)
        if res <= cfg.residual_tol:
            trace.status = "converged"
            break
        if it == cfg.max_iters:
            trace.status = "max_iters"
            break
        if cfg.direction == "newton":
            H = ts.B.T @ p_energy_hessian(dom, U, p, eps) @ ts.B
            H = (H - sp.diags(_curvature_shift(dom, U, g))).tocsr()
            d, mu = _shifted_newton(H, ts, gT, mu)
            t = cfg.initial_step
        else:
            d = -ts.riesz(gT)
            t = cfg.initial_step
            if prev is not None:
                s_prev, y_prev = prev
                sy = float(s_prev @ y_prev)
                if sy > 0:
                    t = float(s_prev @ (ts.gram @ s_prev)) / sy
        slope = float(gT @ d)
        while True:
            V = _retract(dom, U, ts.B, t * d)
            Et = p_energy(dom, V, p, eps)
            if Et <= E + cfg.armijo * t * slope:
                break
            t *= cfg.backtrack
            if t < 1e-14:
                break
        if t < 1e-14:
            trace.status = "stalled"
            break
        deg = _safe_degree(MapField(dom, V, None, True))
        E_new, g_new, ts_new, gT_new = _tangent_state(dom, V, p, eps)
        if cfg.direction == "sobolev":
            prev = (t * d, gT_new - gT)
        U, E, g, ts, gT, step = V, E_new, g_new, ts_new, gT_new, t
        if deg != deg0:
            trace.record(E, ts.dual_norm(gT), -1 if deg is None else deg, step)
            trace.status = "degree_changed"
            break
        if abs(trace.energy[-1] - E) <= cfg.energy_tol * max(abs(E), 1e-300):
            # energy no longer moves at double precision; record the final state
            res = ts.dual_norm(gT)
            trace.record(E, res, deg0, step)
            trace.status = "converged" if res <= cfg.residual_tol else "stalled"
            break
    claimed = deg0 if trace.status != "degree_changed" else None
    return MapField(dom, U, claimed, True), trace


def _shifted_newton(H, ts: TangentSpace, gT: np.ndarray, mu: float) -> tuple[np.ndarray, float]:
    """Solve (H + mu Gram) d = -g, raising mu until CG sees no negative curvature."""
    scale = float(np.mean(np.abs(H.diagonal()))) / float(np.mean(ts.gram.diagonal()))
    mu = mu / 10.0 if mu > 1e-6 * scale else 0.0
    for _ in range(30):
        M = H + mu * ts.gram if mu > 0 else H
        sol = pcg(M, -gT, ts.precond, rtol=1e-10, maxiter=2000)
        if not sol.negative_curvature and float(gT @ sol.x) < 0:
            return sol.x, mu
        mu = max(10.0 * mu, 1e-3 * scale)
    raise NumericalError("could not find a descent direction for the shifted Newton system")
