"""Radial energies of spherical-harmonic modes and the trace inequality built on them.

A field on the unit ball expands as u(r theta) = sum_{k,l} f_{k,l}(r) Y_{k,l}(theta)
with real orthonormal harmonics Y_{k,l} of degree k.  Its Dirichlet energy
splits into the one-dimensional energies

    E_{n,k}(f) = int_0^1 ( f'(r)^2 + k(k+n-2) f(r)^2 / r^2 ) r^(n-1) dr,

and r^k minimizes E_{n,k} under f(1) = 1 with value k.  Summing E_{n,k} >= k f(1)^2
over modes gives  int_{S^{n-1}} |u|^2 <= sum_k (1/k) sum_l E_{n,k}(f_{k,l})
for fields whose boundary mean vanishes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import roots_legendre, sph_harm_y

from .errors import PreconditionError
from .quadrature import sphere_rule

GRADING = 1.5
ANGULAR = 24


# ----------------------------------------------------------------------
# Radial profiles
# ----------------------------------------------------------------------
def graded_grid(cells: int, gamma: float = GRADING) -> np.ndarray:
    """r_j = (j / cells)^gamma, j = 0..cells."""
    if cells < 1:
        raise PreconditionError("need at least one cell")
    return (np.arange(cells + 1) / cells) ** gamma


@dataclass(frozen=True)
class RadialProfile:
    r: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        f = np.asarray(self.f, dtype=float)
        if r.ndim != 1 or r.shape != f.shape or len(r) < 2:
            raise PreconditionError("profile needs matching one-dimensional grid and samples")
        if r[0] != 0.0 or r[-1] != 1.0 or np.any(np.diff(r) <= 0):
            raise PreconditionError("grid must increase strictly from 0 to 1")
        if not np.all(np.isfinite(f)):
            raise PreconditionError("profile samples must be finite")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "f", f)

    @classmethod
    def from_function(cls, func, cells: int = 2000, gamma: float = GRADING) -> "RadialProfile":
        r = graded_grid(cells, gamma)
        return cls(r, np.asarray(func(r), dtype=float))

    def scaled(self, c: float) -> "RadialProfile":
        return RadialProfile(self.r, c * self.f)


def _element_matrices(r: np.ndarray, n: int, k: int, npts: int = 6) -> tuple[np.ndarray, np.ndarray]:
    """Per-element 2x2 matrices of int phi_i' phi_j' r^(n-1) and int phi_i phi_j r^(n-3)."""
    x, w = roots_legendre(npts)
    a, b = r[:-1], r[1:]
    h = b - a
    t = 0.5 * (x + 1.0)  # (q,)
    rq = a[:, None] + h[:, None] * t[None, :]
    wq = 0.5 * h[:, None] * w[None, :]
    phi = np.stack([1.0 - t, t])  # (2, q)
    dphi = np.array([-1.0, 1.0])[:, None] / h[None, :]  # (2, E)
    s1 = np.sum(wq * rq ** (n - 1), axis=1)
    stiff = dphi.T[:, :, None] * dphi.T[:, None, :] * s1[:, None, None]
    mass = np.einsum("eq,iq,jq->eij", wq * rq ** (n - 3.0), phi, phi)
    return stiff, mass


def radial_energy(f: RadialProfile, n: int, k: int) -> float:
    """E_{n,k}(f) for the piecewise-linear interpolant of the samples (6-point Gauss per cell)."""
    if n < 2 or k < 0:
        raise PreconditionError("need n >= 2 and k >= 0")
    if k >= 1 and f.f[0] != 0.0:
        warnings.warn("E_{n,k} diverges when f(0) != 0 and k >= 1", RuntimeWarning, stacklevel=2)
        return float("inf")
    stiff, mass = _element_matrices(f.r, n, k)
    loc = np.stack([f.f[:-1], f.f[1:]], axis=1)
    c = k * (k + n - 2)
    e = np.einsum("ei,eij,ej->e", loc, stiff, loc)
    if c:
        e = e + c * np.einsum("ei,eij,ej->e", loc, mass, loc)
    return float(np.sum(e))


@dataclass
class RadialMinimizer:
    n: int
    k: int
    profile: RadialProfile
    value: float
    sup_distance_to_power: float
    competitor_value: float | None


def inverse_power_energy(n: int, k: int) -> float:
    """E_{n,k}(r^{-k}) = k(2k+n-2)/(n-2-2k), finite only when k < (n-2)/2."""
    if not 2 * k < n - 2:
        return float("inf")
    return k * (2 * k + n - 2) / (n - 2 - 2 * k)


def minimize_radial(n: int, k: int, cells: int = 2000, gamma: float = GRADING) -> RadialMinimizer:
    """Piecewise-linear minimizer of E_{n,k} with f(0) = 0 and f(1) = 1."""
    if k < 1:
        raise PreconditionError("minimize_radial needs k >= 1")
    r = graded_grid(cells, gamma)
    stiff, mass = _element_matrices(r, n, k)
    A = stiff + k * (k + n - 2) * mass  # (E, 2, 2)
    N = cells + 1
    diag = np.zeros(N)
    off = np.zeros(N - 1)
    np.add.at(diag, np.arange(cells), A[:, 0, 0])
    np.add.at(diag, np.arange(1, N), A[:, 1, 1])
    off[:] = A[:, 0, 1]
    # unknowns 1..N-2; f_0 = 0 and f_{N-1} = 1
    m = N - 2
    ab = np.zeros((3, m))
    ab[0, 1:] = off[1 : m]
    ab[1, :] = diag[1 : N - 1]
    ab[2, :-1] = off[1 : m]
    rhs = np.zeros(m)
    rhs[-1] = -off[N - 2]
    f = np.zeros(N)
    f[-1] = 1.0
    f[1:-1] = solve_banded((1, 1), ab, rhs)
    prof = RadialProfile(r, f)
    value = radial_energy(prof, n, k)
    comp = inverse_power_energy(n, k) if 2 * k < n - 2 else None
    return RadialMinimizer(n, k, prof, value, float(np.max(np.abs(f - r**k))), comp)


# ----------------------------------------------------------------------
# Spherical harmonics
# ----------------------------------------------------------------------
def harmonic_modes(n: int, k_max: int) -> list[tuple[int, int]]:
    if n == 2:
        return [(0, 0)] + [(k, l) for k in range(1, k_max + 1) for l in range(2)]
    if n == 3:
        return [(k, l) for k in range(k_max + 1) for l in range(2 * k + 1)]
    raise PreconditionError("spherical harmonics are implemented for n = 2 and n = 3")


def real_harmonics(points: np.ndarray, k_max: int) -> np.ndarray:
    """Orthonormal real harmonics at unit vectors, shape (P, modes), ordered as ``harmonic_modes``.

    n = 3 uses Y_{k,l} with l = m + k: sqrt2 (-1)^m Re Y_k^m for m > 0,
    sqrt2 (-1)^m Im Y_k^|m| for m < 0, Y_k^0 for m = 0.  n = 2 uses
    Fourier modes 1/sqrt(2 pi), cos(k t)/sqrt(pi), sin(k t)/sqrt(pi).
    """
    X = np.asarray(points, dtype=float)
    n = X.shape[1]
    if n == 2:
        t = np.arctan2(X[:, 1], X[:, 0])
        cols = [np.full(len(X), 1.0 / np.sqrt(2 * np.pi))]
        for k in range(1, k_max + 1):
            cols += [np.cos(k * t) / np.sqrt(np.pi), np.sin(k * t) / np.sqrt(np.pi)]
        return np.column_stack(cols)
    if n != 3:
        raise PreconditionError("spherical harmonics are implemented for n = 2 and n = 3")
    theta = np.arccos(np.clip(X[:, 2], -1.0, 1.0))
    phi = np.arctan2(X[:, 1], X[:, 0])
    cols = []
    for k in range(k_max + 1):
        for m in range(-k, k + 1):
            Y = sph_harm_y(k, abs(m), theta, phi)
            if m > 0:
                cols.append(np.sqrt(2.0) * (-1) ** m * Y.real)
            elif m < 0:
                cols.append(np.sqrt(2.0) * (-1) ** m * Y.imag)
            else:
                cols.append(Y.real)
    return np.column_stack(cols)


@dataclass
class BoundaryTrace:
    points: np.ndarray
    values: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_field(cls, u) -> "BoundaryTrace":
        dom = u.dom
        b = dom.boundary_vertex_ids
        X = dom.vertices[b]
        return cls(X / np.linalg.norm(X, axis=1, keepdims=True), u.values[b], dom.boundary_lumped_areas[b])

    @classmethod
    def from_function(cls, func, n: int = 3, n_angular: int = 24) -> "BoundaryTrace":
        X, w = sphere_rule(n, n_angular)
        vals = np.asarray(func(X), dtype=float)
        return cls(X, vals.reshape(len(X), -1), w)


@dataclass
class SphereDecomposition:
    modes: list
    coefficients: np.ndarray  # (modes, components)
    residual_l2: float
    norm_l2_squared: float
    parseval_defect: float
    gram_defect: float

    def degree_mass(self) -> np.ndarray:
        """Sum of squared coefficients per degree k."""
        kmax = max(k for k, _ in self.modes)
        out = np.zeros(kmax + 1)
        for (k, _), c in zip(self.modes, self.coefficients):
            out[k] += float(np.sum(c * c))
        return out

    def rows(self) -> list[dict]:
        return [
            {"k": k, "l": l, "component": j, "value": float(self.coefficients[i, j])}
            for i, (k, l) in enumerate(self.modes)
            for j in range(self.coefficients.shape[1])
        ]


def sphere_decompose(trace: BoundaryTrace, k_max: int, max_condition: float = 1e8) -> SphereDecomposition:
    """Weighted least-squares coefficients of a sampled trace against the real harmonics up to degree k_max."""
    X = np.asarray(trace.points, dtype=float)
    n = X.shape[1]
    if k_max < 0:
        raise PreconditionError("k_max must be non-negative")
    modes = harmonic_modes(n, k_max)
    if 2 * len(modes) > len(X):
        raise PreconditionError(
            f"ill-conditioned: {len(modes)} modes up to degree {k_max} exceed half of the {len(X)} sample points"
        )
    F = np.asarray(trace.values, dtype=float).reshape(len(X), -1)
    w = np.asarray(trace.weights, dtype=float)
    Y = real_harmonics(X, k_max)
    sw = np.sqrt(w)[:, None]
    A = sw * Y
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= 0 or s[0] / s[-1] > max_condition:
        raise PreconditionError(f"ill-conditioned: harmonic design condition number {s[0] / max(s[-1], 1e-300):.3g}")
    C, *_ = np.linalg.lstsq(A, sw * F, rcond=None)
    res = F - Y @ C
    total = float(np.sum(w[:, None] * F * F))
    gram = Y.T @ (w[:, None] * Y)
    return SphereDecomposition(
        modes,
        C,
        float(np.sum(w[:, None] * res * res)),
        total,
        abs(total - float(np.sum(C * C))),
        float(np.linalg.norm(gram - np.eye(len(modes)), 2)),
    )


# ----------------------------------------------------------------------
# Trace inequality
# ----------------------------------------------------------------------
def _evaluator(u):
    """(values, differential) evaluators for a MapField or a vectorized map of R^n."""
    if hasattr(u, "dom"):
        if not u.dom.phi.is_identity:
            raise PreconditionError("the trace inequality is checked on the unit ball")
        G = u.gradients()

        def val(x):
            return u.evaluate(x)

        def diff(x):
            simp, _ = u.dom.locate(x)
            return G[simp]

        return u.n, val, diff
    func = u
    n = int(getattr(u, "n", 3))

    def val(x):
        return np.asarray(func(x), dtype=float)

    def diff(x, step=1e-5):
        cols = [(val(x + step * e) - val(x - step * e)) / (2 * step) for e in np.eye(x.shape[1])]
        return np.stack(cols, axis=-1)

    return n, val, diff


def _angular(k_max: int) -> int:
    return max(2 * k_max + 4, ANGULAR)


def boundary_mean(u, n_angular: int = 0) -> np.ndarray:
    """Average of u over the unit sphere with the rule used by the trace check (default for k_max <= 10)."""
    n, val, _ = _evaluator(u)
    n_angular = n_angular or ANGULAR
    X, w = sphere_rule(n, n_angular)
    return (w @ val(X)) / w.sum()


@dataclass
class TraceInequality:
    lhs: float
    rhs: float
    slack: float
    per_degree: list
    dirichlet_energy: float
    spectral_energy: float
    notes: list = field(default_factory=list)


def _shell_profiles(u, k_max: int, cells: int, n_angular: int):
    n, val, diff = _evaluator(u)
    r = graded_grid(cells)
    X, w = sphere_rule(n, n_angular)
    Y = real_harmonics(X, k_max)
    P = (r[:, None, None] * X[None]).reshape(-1, n)
    V = val(P).reshape(len(r), len(X), -1)
    coef = np.einsum("q,qm,rqc->rmc", w, Y, V)  # (radii, modes, components)
    D = diff(P).reshape(len(r), len(X), -1)
    dens = np.einsum("q,rqc->r", w, D * D)
    # int_B |du|^2 over the shells: lumped weights int phi_i r^(n-1) dr of the hat functions
    x, wq = roots_legendre(6)
    t = 0.5 * (x + 1.0)
    seg = np.diff(r)
    rq = r[:-1, None] + seg[:, None] * t[None, :]
    ww = 0.5 * seg[:, None] * wq[None, :] * rq ** (n - 1)
    lump = np.zeros(len(r))
    lump[:-1] += ww @ (1.0 - t)
    lump[1:] += ww @ t
    return n, r, coef, float(lump @ dens)


def spectral_dirichlet_energy(u, k_max: int, cells: int = 400, n_angular: int | None = None) -> tuple[float, float]:
    """(volumetric int |du|^2, sum over modes of E_{n,k}(f_{k,l})) on the unit ball."""
    n_angular = n_angular or _angular(k_max)
    n, r, coef, vol = _shell_profiles(u, k_max, cells, n_angular)
    modes = harmonic_modes(n, k_max)
    total = 0.0
    for i, (k, _) in enumerate(modes):
        for c in range(coef.shape[2]):
            prof = coef[:, i, c].copy()
            if k >= 1:
                prof[0] = 0.0
            total += radial_energy(RadialProfile(r, prof), n, k)
    return vol, total


def trace_inequality_check(u, k_max: int, cells: int = 400, n_angular: int | None = None,
                           mean_tol: float = 1e-8, project_tol: float = 1e-4) -> TraceInequality:
    """Compare int_S |u|^2 with sum_k (1/k) sum_l E_{n,k}(f_{k,l}) for a field with zero boundary mean.

    Modes above k_max enter through their total Dirichlet energy with the
    factor 1/(k_max + 1), so the right side stays an upper bound for fields
    that are not band-limited.
    """
    if k_max < 1:
        raise PreconditionError("k_max must be at least 1")
    n_angular = n_angular or _angular(k_max)
    notes = []
    mean = boundary_mean(u, n_angular)
    dev = float(np.linalg.norm(mean))
    if dev > project_tol:
        raise PreconditionError(f"boundary mean {dev:.3g} is not zero")
    if dev > mean_tol:
        notes.append(f"boundary mean {dev:.3g} projected out")
        u = _shifted(u, mean)
    n, r, coef, vol = _shell_profiles(u, k_max, cells, n_angular)
    modes = harmonic_modes(n, k_max)
    per_k = {}
    spectral = 0.0
    lhs_low = 0.0
    for i, (k, _) in enumerate(modes):
        for c in range(coef.shape[2]):
            prof = coef[:, i, c].copy()
            if k >= 1:
                prof[0] = 0.0
            e = radial_energy(RadialProfile(r, prof), n, k)
            spectral += e
            if k >= 1:
                d = per_k.setdefault(k, {"k": k, "energy": 0.0, "trace": 0.0})
                d["energy"] += e
                d["trace"] += float(coef[-1, i, c] ** 2)
                lhs_low += float(coef[-1, i, c] ** 2)
    X, w = sphere_rule(n, n_angular)
    _, val, _ = _evaluator(u)
    lhs = float(np.sum(w * np.sum(val(X) ** 2, axis=1)))
    tail = max(vol - spectral, 0.0)
    rhs = sum(d["energy"] / k for k, d in per_k.items()) + tail / (k_max + 1)
    per = [{**d, "bound": d["energy"] / d["k"], "slack": d["energy"] / d["k"] - d["trace"]} for d in per_k.values()]
    if lhs - lhs_low > 1e-10 * max(lhs, 1.0):
        notes.append(f"trace mass above degree {k_max}: {lhs - lhs_low:.3g}")
    return TraceInequality(lhs, rhs, rhs - lhs, per, vol, spectral, notes)


def _shifted(u, c):
    if hasattr(u, "dom"):
        return u.with_values(u.values - c, None, False)
    return lambda x: np.asarray(u(x), dtype=float) - c
