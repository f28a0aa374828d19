"""Counter-checks on computed maps: Pohozaev balance, neck energy, the Price
inequality along sequences, energy-gap scans and distance to the Möbius family.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import roots_legendre

from .errors import NharmError, NumericalError, PreconditionError
from .fields import MapField, conformality_defect, degree_estimates, energy
from .geometry.chart import straighten_boundary
from .geometry.shapes import IdentityDiffeo
from .mobius import MobiusMap, almost_mobius_map
from .quadrature import conformal_energy_constant, sphere_rule
from .solver import SolverConfig, free_boundary_descent


# ----------------------------------------------------------------------
# Quadrature on spheres and caps around a point
# ----------------------------------------------------------------------
def _perp_frame(e: np.ndarray) -> np.ndarray:
    """Rows completing the unit vector e to an orthonormal basis."""
    n = len(e)
    Q, _ = np.linalg.qr(np.column_stack([e, np.eye(n)]))
    return Q[:, 1:n].T


def _cap_rule(axis: np.ndarray, cos_min: float, n_polar: int, n_azimuth: int):
    """Unit vectors theta with theta.axis > cos_min and their surface weights (n = 2, 3)."""
    n = len(axis)
    c = float(np.clip(cos_min, -1.0, 1.0))
    t0 = np.arccos(c)
    if t0 <= 0.0:
        return np.zeros((0, n)), np.zeros(0)
    x, w = roots_legendre(n_polar)
    E = _perp_frame(axis)
    if n == 2:
        t = t0 * x  # symmetric interval (-t0, t0)
        pts = np.cos(t)[:, None] * axis + np.sin(t)[:, None] * E[0]
        return pts, t0 * w
    if n != 3:
        raise PreconditionError("sphere caps are implemented for n = 2 and n = 3")
    t = 0.5 * t0 * (x + 1.0)
    wt = 0.5 * t0 * w * np.sin(t)
    s = 2.0 * np.pi * np.arange(n_azimuth) / n_azimuth
    ring = np.cos(s)[:, None] * E[0] + np.sin(s)[:, None] * E[1]
    pts = np.cos(t)[:, None, None] * axis + np.sin(t)[:, None, None] * ring[None]
    wts = np.repeat(wt, n_azimuth) * (2.0 * np.pi / n_azimuth)
    return pts.reshape(-1, 3), wts


class _Shells:
    """Point evaluation of du and quadrature over S_rho(x0) cap Omega and dOmega cap B(x0, r).

    ``u`` is a MapField (piecewise-constant differential located on its mesh)
    or an analytic map with a ``differential`` method, in which case ``phi``
    describes the domain (for an almost-Möbius map its own conformalized
    diffeomorphism is used).
    """

    def __init__(self, u, x0: np.ndarray, n_polar: int = 48, n_azimuth: int = 96, phi=None):
        self.u = u
        self.x0 = np.asarray(x0, dtype=float)
        self.n_polar, self.n_azimuth = n_polar, n_azimuth
        self.mesh = isinstance(u, MapField)
        if self.mesh:
            self.dom = u.dom
            self.phi = u.dom.phi
            self.G = u.gradients()
        else:
            self.dom = None
            self.phi = phi if phi is not None else getattr(u, "phi_a", None) or IdentityDiffeo(len(self.x0))
        self.n = len(self.x0)
        self.ball = bool(self.phi.is_identity)

    def du(self, pts: np.ndarray):
        if not self.mesh:
            return self.u.differential(pts), None
        simp, _ = self.dom.locate(pts)
        return self.G[simp], simp

    def sphere(self, rho: float):
        """(points, unit radial directions, weights) on S_rho(x0) inside the domain."""
        x0 = self.x0
        if self.ball:
            m = float(np.linalg.norm(x0))
            if m < 1e-14:
                theta, w = sphere_rule(self.n, self.n_polar) if rho < 1.0 else (np.zeros((0, self.n)), np.zeros(0))
            else:
                cos_min = (rho * rho + m * m - 1.0) / (2.0 * rho * m)
                theta, w = _cap_rule(-x0 / m, cos_min, self.n_polar, self.n_azimuth)
        else:
            theta, w = sphere_rule(self.n, self.n_polar)
            inside = self.phi.level_set(x0 + rho * theta) > 0.0
            theta, w = theta[inside], w[inside]
        return x0 + rho * theta, theta, w * rho ** (self.n - 1)

    def boundary(self, r: float):
        """(points, unit outer normals, weights) on the boundary inside B(x0, r)."""
        x0 = self.x0
        if self.ball:
            m = float(np.linalg.norm(x0))
            if m < 1e-14:
                return np.zeros((0, self.n)), np.zeros((0, self.n)), np.zeros(0)
            cos_min = (1.0 + m * m - r * r) / (2.0 * m)
            xi, w = _cap_rule(x0 / m, cos_min, self.n_polar, self.n_azimuth)
            return xi, xi, w
        psi = self.phi
        xi, w = sphere_rule(self.n, self.n_polar)
        X = psi.inverse(xi)
        keep = np.linalg.norm(X - x0, axis=1) < r
        xi, w, X = xi[keep], w[keep], X[keep]
        dPsi = psi.inverse_differential(xi)
        cof = np.linalg.solve(np.swapaxes(dPsi, -1, -2), xi[..., None])[..., 0]  # dPsi^{-T} xi
        nrm = np.linalg.norm(cof, axis=1)
        area = np.abs(np.linalg.det(dPsi)) * nrm
        return X, cof / nrm[:, None], w * area

    def local_size(self, pts: np.ndarray) -> float:
        if len(pts) == 0 or not self.mesh:
            return 0.0
        _, simp = self.du(pts)
        return float(np.max(self.dom.simplex_diameters[simp]))


def _radial_flux(S: _Shells, rho: float, p: float) -> float:
    """int over S_rho(x0) cap Omega of |du|^(p-2) (|d_r u|^2 - |du|^2/p)."""
    pts, theta, w = S.sphere(rho)
    if len(w) == 0:
        return 0.0
    G, _ = S.du(pts)
    g2 = np.sum(G * G, axis=(1, 2))
    dr = np.einsum("pcd,pd->pc", G, theta)
    val = g2 ** ((p - 2.0) / 2.0) * (np.sum(dr * dr, axis=1) - g2 / p)
    return float(w @ val)


def _ball_energy(S: _Shells, r: float, p: float, n_radial: int = 24) -> float:
    """int over B(x0, r) cap Omega of |du|^p by radial Gauss of sphere integrals."""
    x, wr = roots_legendre(n_radial)
    rho = 0.5 * r * (x + 1.0)
    total = 0.0
    for rk, wk in zip(rho, 0.5 * r * wr):
        pts, _, w = S.sphere(rk)
        if len(w):
            G, _ = S.du(pts)
            total += wk * float(w @ np.sum(G * G, axis=(1, 2)) ** (p / 2.0))
    return total


def _boundary_flux(S: _Shells, r: float, p: float) -> float:
    """int over dOmega cap B(x0, r) of (X.nu) |du|^(p-2) (|du|^2 - p |d_nu u|^2), X = x - x0."""
    X, nu, w = S.boundary(r)
    if len(w) == 0:
        return 0.0
    G, _ = S.du(X)
    g2 = np.sum(G * G, axis=(1, 2))
    dn = np.einsum("pcd,pd->pc", G, nu)
    Xn = np.sum((X - S.x0) * nu, axis=1)
    return float(w @ (Xn * g2 ** ((p - 2.0) / 2.0) * (g2 - p * np.sum(dn * dn, axis=1))))


@dataclass
class PohozaevRow:
    radius: float
    sphere_term: float
    boundary_term: float
    volume_term: float
    residual: float


def pohozaev_residual(u, p: float, x0, radii, n_polar: int = 48, n_azimuth: int = 96,
                      n_radial: int = 24, phi=None) -> list[PohozaevRow]:
    """Balance of the Pohozaev identity on B(x0, r) cap Omega at each radius.

    With X = x - x0 the identity for a free-boundary critical point reads

        int_{S_r cap Omega} |du|^(p-2)(|d_r u|^2 - |du|^2/p)
          - 1/(p r) int_{dOmega cap B_r} (X.nu)|du|^(p-2)(|du|^2 - p|d_nu u|^2)
        = (p - n)/(p r) int_{B_r cap Omega} |du|^p.

    The boundary integral vanishes on a flat boundary and accounts for the
    curvature of dOmega otherwise.  Every integrand vanishes pointwise for the
    identity map at p = n.
    """
    x0 = np.asarray(x0, dtype=float)
    if isinstance(u, MapField):
        straighten_boundary(u.dom, x0)
    S = _Shells(u, x0, n_polar, n_azimuth, phi)
    n = len(x0)
    rows = []
    for r in radii:
        r = float(r)
        if not 0 < r < 1:
            raise PreconditionError(f"radius must lie in (0, 1), got {r}")
        sph = _radial_flux(S, r, p)
        bnd = _boundary_flux(S, r, p) / (p * r)
        vol = (p - n) / (p * r) * _ball_energy(S, r, p, n_radial) if p != n else 0.0
        rows.append(PohozaevRow(r, sph, bnd, vol, abs(sph - bnd - vol)))
    return rows


def neck_energy(u, x0, lam: float, delta: float, p: float, n_radial: int = 24,
                n_polar: int = 48, n_azimuth: int = 96, phi=None) -> float:
    """int over (B(x0, delta) minus B(x0, lam)) cap Omega of |du|^(p-2)(|d_r u|^2 - |du|^2/p).

    For a MapField the mesh must resolve the inner radius: simplices met by
    the inner sphere larger than lambda raise NumericalError.
    """
    if not 0 < lam < delta:
        raise PreconditionError(f"need 0 < lambda < delta, got {lam}, {delta}")
    S = _Shells(u, np.asarray(x0, dtype=float), n_polar, n_azimuth, phi)
    inner, _, _ = S.sphere(lam)
    size = S.local_size(inner)
    if size > lam:
        raise NumericalError(f"annulus under-resolved: simplices of size {size:.3g} at inner radius {lam:.3g}")
    x, w = roots_legendre(n_radial)
    rho = lam + 0.5 * (delta - lam) * (x + 1.0)
    return float(sum(0.5 * (delta - lam) * wk * _radial_flux(S, rk, p) for rk, wk in zip(rho, w)))


# ----------------------------------------------------------------------
# Price inequality along sequences
# ----------------------------------------------------------------------
@dataclass
class PriceRow:
    k: int
    energy: float
    limit_energy: float
    degree: int
    limit_degree: int
    degree_drop: int
    margin: float


@dataclass
class PriceLedger:
    family: str
    ell: int
    scale: float
    rows: list
    burn_in: int

    def margins(self) -> np.ndarray:
        return np.array([r.margin for r in self.rows])

    def min_margin(self) -> float:
        return float(self.margins()[self.burn_in:].min())

    def monotone_after_burn_in(self) -> bool:
        m = self.margins()[self.burn_in:]
        return bool(np.all(np.diff(m) <= 0.0))

    def table(self) -> list[dict]:
        return [asdict(r) for r in self.rows]


PRICE_FAMILIES = ("concentrating", "fixed", "perturbation")


def price_test(ell: int, family: str, ks=None, n: int = 3, phi=None, dom=None, anchor=None,
               burn_in: int = 0, seed: int = 0) -> PriceLedger:
    """E_n(u_k) - E_n(u) - n^{n/2}|B^n| |deg(u) - ell| along a built-in sequence.

    ``concentrating``: u_k = chi_{1/k}(a) on the domain ``phi`` (energies in the
    target variable), limit a constant, ell = 1.  ``fixed``: u_k = Id on
    ``dom``.  ``perturbation``: u_k = c + w/k on ``dom`` with a seeded smooth
    w, limit the constant c, ell = 0.
    """
    if family not in PRICE_FAMILIES:
        raise PreconditionError(f"unknown sequence family {family!r}; choose from {PRICE_FAMILIES}")
    scale = conformal_energy_constant(n)
    rows = []
    if family == "concentrating":
        if phi is None:
            phi = IdentityDiffeo(n)
        ks = list(ks or range(3, 21))
        a = np.eye(n)[-1] if anchor is None else np.asarray(anchor, dtype=float)
        a = phi.project_to_boundary(a)
        for k in ks:
            if k < 3:
                raise PreconditionError("concentration radius 1/k needs k >= 3")
            Ek = almost_mobius_map(1.0 / k, a, phi).energy(n)
            rows.append(PriceRow(int(k), Ek, 0.0, 1, 0, 1, Ek - scale * abs(0 - ell)))
    else:
        if dom is None:
            raise PreconditionError(f"family {family!r} needs a mesh")
        ks = list(ks or range(1, 11))
        if family == "fixed":
            u = MapField.identity(dom)
            E = energy(u, n).value
            d = degree_estimates(u).degree
            for k in ks:
                rows.append(PriceRow(int(k), E, E, d, d, 0, E - E - scale * abs(d - ell)))
        else:
            rng = np.random.default_rng(seed)
            c = np.eye(n)[0]
            A = rng.normal(size=(n, n))
            B = rng.normal(size=(n, n))
            X = dom.vertices
            w = X @ A.T + np.sin(X @ B.T)
            for k in ks:
                uk = MapField(dom, c + w / k)
                Ek = energy(uk, n).value
                rows.append(PriceRow(int(k), Ek, 0.0, 0, 0, 0, Ek - scale * abs(0 - ell)))
    return PriceLedger(family, int(ell), scale, rows, burn_in)


# ----------------------------------------------------------------------
# Möbius fitting
# ----------------------------------------------------------------------
@dataclass
class MobiusFit:
    a: np.ndarray
    R: np.ndarray
    l2_distance: float
    normalized_distance: float
    evaluations: int
    converged: bool


def _procrustes(U: np.ndarray, V: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Orthogonal Q minimizing sum w |U - V Q^T|^2: the polar factor of sum w U V^T."""
    C = (w[:, None] * U).T @ V
    P, _, Qt = np.linalg.svd(C)
    return P @ Qt


def mobius_fit(u: MapField, rounds: int = 3, grid: int = 7, polish: bool = True) -> MobiusFit:
    """min over a in the ball and orthogonal Q of int |u - Q M_a|^2 (lumped mass).

    M_a carries the orientation fix, so the identity map is fitted by a = 0
    with the rotation Q = -R.  Q is closed-form for each a; a runs over a
    shrinking grid for ``rounds`` rounds and is then polished by Nelder-Mead.
    """
    dom = u.dom
    if not dom.phi.is_identity:
        raise PreconditionError("Möbius fitting is defined on the unit ball")
    deg = degree_estimates(u).degree
    if deg != 1:
        raise PreconditionError(f"Möbius fitting needs a degree-1 field, got degree {deg}")
    X, U, w = dom.vertices, u.values, dom.lumped_mass
    n = dom.n
    norm2 = float(w @ np.sum(U * U, axis=1))
    count = [0]

    def objective(a):
        a = np.asarray(a, dtype=float)
        if a @ a >= 0.98:
            return np.inf, None
        count[0] += 1
        V = MobiusMap.centred(a).apply(X)
        Q = _procrustes(U, V, w)
        D = U - V @ Q.T
        return float(w @ np.sum(D * D, axis=1)), Q

    best_a, (best_val, best_Q) = np.zeros(n), objective(np.zeros(n))
    half = 0.9
    centre = np.zeros(n)
    for _ in range(rounds):
        axes = np.linspace(-half, half, grid)
        for cand in np.stack(np.meshgrid(*([axes] * n), indexing="ij"), -1).reshape(-1, n):
            a = centre + cand
            val, Q = objective(a)
            if val < best_val:
                best_a, best_val, best_Q = a, val, Q
        centre = best_a
        half *= 2.0 / (grid - 1)
    converged = True
    if polish:
        res = minimize(lambda a: objective(a)[0], best_a, method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-30, "maxiter": 4000, "maxfev": 8000})
        if res.fun <= best_val:
            best_a = res.x
            best_val, best_Q = objective(best_a)
        converged = bool(res.success)
    d = float(np.sqrt(max(best_val, 0.0)))
    return MobiusFit(np.asarray(best_a), best_Q, d, d / np.sqrt(norm2) if norm2 > 0 else 0.0, count[0], converged)


# ----------------------------------------------------------------------
# Gap scans
# ----------------------------------------------------------------------
@dataclass
class GapEntry:
    seed: int
    kind: str
    status: str
    energy: float
    n_energy: float
    residual: float
    degree: int | None
    conformality_defect: float
    mobius_distance: float | None
    iterations: int
    error: str | None = None


@dataclass
class GapScanReport:
    p: float
    entries: list
    constant_threshold: float
    void: tuple
    ground_band: float
    ground_cluster: list
    histogram: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "p": self.p,
            "entries": [asdict(e) for e in self.entries],
            "constant_threshold": self.constant_threshold,
            "void": list(self.void),
            "ground_band": self.ground_band,
            "ground_cluster": self.ground_cluster,
            "histogram": self.histogram,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def gap_seed(dom, seed: int, kind: str) -> MapField:
    """Deterministic initial field: a perturbed constant (degree 0) or a perturbed Möbius map (degree 1)."""
    rng = np.random.default_rng([seed, 0 if kind == "degree0" else 1])
    n = dom.n
    X = dom.vertices
    A = rng.normal(size=(n, n))
    B = rng.normal(size=(n, n))
    if kind == "degree0":
        c = rng.normal(size=n)
        c /= np.linalg.norm(c)
        amp = 0.05 * rng.uniform(0.2, 1.0)
        vals = c + amp * (X @ A.T + 0.5 * np.sin(2.0 * X @ B.T))
    elif kind == "degree1":
        a = rng.normal(size=n)
        a *= rng.uniform(0.0, 0.5) / np.linalg.norm(a)
        Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
        if np.linalg.det(Q) < 0:
            Q[:, 0] *= -1.0
        base = MobiusMap.centred(a).apply(X) @ Q.T
        vals = base + 0.05 * rng.uniform(0.2, 1.0) * np.sin(2.0 * X @ B.T) * (1.0 - np.sum(X * X, axis=1))[:, None]
        vals = vals + 0.05 * (X @ A.T) * (1.0 - np.sum(X * X, axis=1))[:, None]
    else:
        raise PreconditionError(f"unknown seed kind {kind!r}")
    return MapField.from_function(dom, lambda _: vals, normalize_boundary=True)


def _run_seed(dom, seed: int, kind: str, cfg: SolverConfig, fit: bool) -> GapEntry:
    n = dom.n
    try:
        u0 = gap_seed(dom, seed, kind)
        u, trace = free_boundary_descent(dom, u0, cfg)
    except NharmError as exc:
        return GapEntry(seed, kind, "failed", np.nan, np.nan, np.nan, None, np.nan, None, 0, str(exc))
    try:
        deg = degree_estimates(u).degree
    except NumericalError:
        deg = None
    dist = None
    if fit and deg == 1 and dom.phi.is_identity:
        dist = mobius_fit(u).normalized_distance
    return GapEntry(seed, kind, trace.status, trace.energy[-1], energy(u, n).value, trace.residual[-1], deg,
                    conformality_defect(u), dist, trace.iterations)


def gap_scan(dom, p: float, seed_count: int, alpha_schedule=None, constant_tol: float = 1e-6,
             band: float = 0.02, threads: int = 1, max_iters: int = 200, bins: int = 40) -> GapScanReport:
    """Descend from ``seed_count`` deterministic seeds and summarize the critical energies found.

    Seeds alternate between degree 0 and degree 1.  When an alpha schedule is
    given, p runs through n + alpha for each alpha in turn, each stage starting
    from the previous result; the last stage is reported.  Seeds whose degree
    changes are recorded and left out of the clusters.
    """
    n = dom.n
    if seed_count < 1:
        raise PreconditionError("need at least one seed")
    ps = [n + float(a) for a in alpha_schedule] if alpha_schedule else [float(p)]
    if any(q <= n for q in ps):
        raise PreconditionError("gap scans need p > n")

    def run(seed):
        kind = "degree0" if seed % 2 == 0 else "degree1"
        if len(ps) == 1:
            return _run_seed(dom, seed, kind, SolverConfig(p=ps[0], max_iters=max_iters), True)
        return _run_schedule(dom, seed, kind, ps, max_iters)

    seeds = list(range(seed_count))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            entries = list(pool.map(run, seeds))
    else:
        entries = [run(s) for s in seeds]
    return _summarize(ps[-1], entries, constant_tol, band, n, bins)


def _run_schedule(dom, seed, kind, ps, max_iters):
    u = gap_seed(dom, seed, kind)
    for q in ps:
        cfg = SolverConfig(p=q, max_iters=max_iters)
        try:
            u, trace = free_boundary_descent(dom, u, cfg)
        except NharmError as exc:
            return GapEntry(seed, kind, "failed", np.nan, np.nan, np.nan, None, np.nan, None, 0, str(exc))
        if trace.status == "degree_changed":
            break
    n = dom.n
    try:
        deg = degree_estimates(u).degree
    except NumericalError:
        deg = None
    dist = mobius_fit(u).normalized_distance if deg == 1 and dom.phi.is_identity else None
    return GapEntry(seed, kind, trace.status, trace.energy[-1], energy(u, n).value, trace.residual[-1], deg,
                    conformality_defect(u), dist, trace.iterations)


def _summarize(p, entries, constant_tol, band, n, bins) -> GapScanReport:
    ok = [e for e in entries if e.status not in ("failed", "degree_changed")]
    nonconst = sorted(e.n_energy for e in ok if e.n_energy > constant_tol)
    void = (constant_tol, nonconst[0] if nonconst else float("inf"))
    ground = conformal_energy_constant(n)
    cluster = [e.seed for e in ok if e.degree == 1 and abs(e.n_energy - ground) <= band * ground]
    energies = np.array([e.n_energy for e in ok]) if ok else np.zeros(0)
    hist = []
    if len(energies):
        top = max(float(energies.max()), ground) * 1.05
        counts, edges = np.histogram(energies, bins=bins, range=(0.0, top))
        hist = [{"lower": float(lo), "upper": float(hi), "count": int(c)} for lo, hi, c in zip(edges[:-1], edges[1:], counts)]
    return GapScanReport(float(p), entries, constant_tol, void, band, cluster, hist)
