"""The computations behind each CLI subcommand.

Every task receives the parsed parameters and a ``RunContext`` that records
stage timings and writes artifacts; it returns the JSON-ready results.
"""

from __future__ import annotations

import hashlib
import time
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .bubble import degree_raiser
from .diagnostics import gap_scan, mobius_fit, neck_energy, pohozaev_residual, price_test
from .errors import PreconditionError
from .fields import MapField, degree_estimates, energy, hadamard_gap
from .geometry import build_ball_mesh, build_diffeomorphism, uniform_refinement
from .geometry.conformal import conformalize_at
from .geometry.mesh import mesh_for
from .geometry.shapes import IdentityDiffeo
from .harmonics import BoundaryTrace, minimize_radial, sphere_decompose
from .minmax import (
    barycenter_zero,
    c1_level,
    canonical_filling,
    filling_upper_bound,
    mountain_pass_experiment,
    seed_mesh,
)
from .mobius import MobiusMap, almost_mobius, almost_mobius_map, mobius_energy
from .quadrature import conformal_energy_constant
from .solver import SolverConfig, criticality_residual, extension_l1_stability, free_boundary_descent, p_laplacian_dirichlet


@dataclass
class RunContext:
    out: Path
    threads: int = 1
    timings: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    meshes: dict = field(default_factory=dict)

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0

    def _path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts.append(name)
        return self.out / name

    def table(self, name: str, rows: list[dict], fieldnames=None) -> None:
        io.write_csv(self._path(name), rows, fieldnames)

    def mesh(self, name: str, dom, u=None, metadata=None) -> None:
        self.meshes[name] = dom.stats()
        io.write_mesh(dom, self._path(name), u, metadata)

    def json(self, name: str, doc) -> None:
        io.write_json(self._path(name), doc)

    def note(self, caught) -> None:
        for w in caught:
            msg = str(w.message)
            if msg not in self.warnings:
                self.warnings.append(msg)

    def digests(self) -> dict:
        return {name: hashlib.sha256((self.out / name).read_bytes()).hexdigest() for name in self.artifacts
                if (self.out / name).exists()}


# ----------------------------------------------------------------------
# Shared builders
# ----------------------------------------------------------------------
def _phi(p):
    if p.get("domain", "ball") == "ball":
        return IdentityDiffeo(p["n"])
    return build_diffeomorphism(p["n"], p["L0"])


def _domain(p, ctx):
    with ctx.stage("mesh"):
        phi = _phi(p)
        dom = build_ball_mesh(p["n"], p["h"]) if phi.is_identity else mesh_for(phi, p["h"])
    ctx.meshes["domain"] = dom.stats()
    return phi, dom


def _vec(v, n, default):
    return np.asarray(default if v is None else v, dtype=float).reshape(n)


def _north(n):
    return np.eye(n)[-1]


def _field(kind, dom, p, ctx):
    n = dom.n
    if kind == "identity":
        return MapField.identity(dom)
    if kind == "mobius":
        m = MobiusMap.centred(_vec(p.get("a"), n, 0.3 * np.eye(n)[0]))
        return MapField.from_function(dom, m.apply, claimed_degree=1, normalize_boundary=True)
    if kind == "constant":
        return MapField.constant(dom, np.eye(n)[0])
    if kind == "raised":
        return degree_raiser(MapField.identity(dom), _north(n), p.get("sigma", 0.2))
    if kind == "critical":
        alpha = p.get("alpha", 0.1)
        with ctx.stage("descent"):
            u, trace = free_boundary_descent(dom, MapField.identity(dom), SolverConfig(p=n + alpha))
        ctx.table("descent.csv", trace.rows())
        return u
    raise PreconditionError(f"unknown field {kind!r}")


def _boundary_vertex(dom, x0):
    b = dom.boundary_vertex_ids
    target = _north(dom.n) if x0 is None else np.asarray(x0, dtype=float)
    return dom.vertices[b[np.argmin(np.linalg.norm(dom.vertices[b] - target, axis=1))]]


# ----------------------------------------------------------------------
# Tasks
# ----------------------------------------------------------------------
def task_mesh(p, ctx):
    _, dom = _domain(p, ctx)
    dom.check_invariants()
    ctx.mesh("mesh.txt", dom)
    return {"stats": dom.stats()}


def task_mobius_energy(p, ctx):
    n = p["n"]
    a = _vec(p["a"], n, np.zeros(n))
    expo = p["p"] or n
    m = MobiusMap.centred(a)
    with ctx.stage("mesh"):
        dom = build_ball_mesh(n, p["h"])
        if p["refine"]:
            dom = uniform_refinement(dom)
    ctx.meshes["domain"] = dom.stats()
    with ctx.stage("quadrature"), warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        est = mobius_energy(m, dom, expo)
        exact = mobius_energy(m, None, expo)
    ctx.note(caught)
    ref = conformal_energy_constant(n)
    return {"energy": est.value, "error_estimate": est.error_estimate, "target_variable_energy": exact.value,
            "conformal_constant": ref, "relative_deviation": est.value / ref - 1.0, "notes": est.warnings}


def task_degree(p, ctx):
    p = dict(p, domain="ball")
    _, dom = _domain(p, ctx)
    u = _field(p["field"], dom, p, ctx)
    rep = degree_estimates(u)
    gap = hadamard_gap(u)
    return {"degree": rep.degree, "jacobian_estimate": rep.jacobian_estimate,
            "pullback_estimate": rep.pullback_estimate, "hadamard": gap}


def task_raise_degree(p, ctx):
    p = dict(p, domain="ball")
    _, dom = _domain(p, ctx)
    u = _field(p["field"], dom, p, ctx)
    x0 = _vec(p["x0"], dom.n, _north(dom.n))
    with ctx.stage("bubble"):
        v = degree_raiser(u, x0, p["sigma"], p["reverse"])
    before, after = degree_estimates(u), degree_estimates(v)
    ctx.mesh("raised.txt", v.dom, v, {"sigma": p["sigma"]})
    n = dom.n
    return {"degree_before": before, "degree_after": after, "energy_before": energy(u, n).value,
            "energy_after": energy(v, n).value}


def task_solve(p, ctx):
    phi, dom = _domain(p, ctx)
    n = p["n"]
    if p["seed"] == "almost-mobius":
        a = phi.project_to_boundary(_vec(p["a"], n, _north(n))[None])[0]
        with ctx.stage("mesh"):
            dom = seed_mesh(phi, a, p["r"], p["h"], dom)
        ctx.meshes["seed"] = dom.stats()
        u0 = almost_mobius(p["r"], a, phi, conformalize_at(phi, a), dom)
    elif p["seed"] == "mobius":
        if not phi.is_identity:
            raise PreconditionError("the Möbius seed needs the ball")
        u0 = _field("mobius", dom, p, ctx)
    else:
        u0 = MapField.identity(dom)
    cfg = SolverConfig(p=n + p["alpha"], max_iters=p["max_iters"], direction=p["direction"])
    with ctx.stage("descent"):
        u, trace = free_boundary_descent(dom, u0, cfg)
    ctx.table("trace.csv", trace.rows(), ["iteration", "energy", "residual", "degree", "step"])
    ctx.mesh("field.txt", dom, u, {"p": cfg.p, "status": trace.status})
    res = criticality_residual(u, cfg.p)
    return {"trace": trace.summary(), "residual": float(res.residual), "boundary_defect": res.boundary_defect,
            "n_energy": energy(u, n).value}


def task_extension(p, ctx):
    p = dict(p, domain="ball")
    _, dom = _domain(p, ctx)
    n = dom.n
    expo = p["p"] or n
    ma = MobiusMap.centred(_vec(p["a"], n, 0.3 * np.eye(n)[0]))
    mb = MobiusMap.centred(_vec(p["b"], n, 0.35 * np.eye(n)[0]))
    with ctx.stage("solve"):
        rows = []
        for name, g in (("identity", lambda x: x), ("mobius_a", ma.apply)):
            u = p_laplacian_dirichlet(dom, g, expo)
            err = float(np.max(np.abs(u.values - g(dom.vertices))))
            rows.append({"trace": name, "max_nodal_error": err, "h": dom.max_edge_length})
        stab = extension_l1_stability(dom, ma.apply, mb.apply, expo)
    ctx.table("extension.csv", rows)
    return {"errors": rows, "stability": stab}


def task_c1(p, ctx):
    phi = _phi(p)
    with ctx.stage("path"), warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        lvl = c1_level(p["r"], p["alpha"], p["anchors"], phi, h=p["h"])
    ctx.note(caught)
    ctx.table("c1_path.csv", lvl.table.rows())
    return {"c1": lvl.c1, "argmax_anchor": lvl.argmax_anchor, "conformal_constant": conformal_energy_constant(phi.n),
            "notes": lvl.warnings}


def task_filling_bound(p, ctx):
    phi = _phi(p)
    with ctx.stage("filling"):
        ub = filling_upper_bound(canonical_filling(phi, p["r"]), p["r"], p["alpha"], p["interior_anchors"],
                                 p["anchors"])
    ctx.table("filling_interior.csv", ub.interior.rows())
    ctx.table("filling_boundary.csv", ub.boundary.rows())
    return {"upper_bound": ub.value, "argmax_anchor": ub.argmax_anchor, "interior_max": ub.interior_max,
            "boundary_max": ub.boundary_max}


def task_barycenter(p, ctx):
    phi = _phi(p)
    with ctx.stage("search"):
        z = barycenter_zero(canonical_filling(phi, p["r"]), p["resolution"])
    return {"anchor": z.anchor, "value": z.value, "norm": z.norm, "boundary_degree": z.boundary_degree,
            "evaluations": z.evaluations, "notes": z.notes}


def task_minmax(p, ctx):
    phi = _phi(p)
    with ctx.stage("experiment"):
        rep = mountain_pass_experiment(phi, p["r"], p["alphas"], p["h"], p["anchors"], p["interior_anchors"])
    doc = rep.to_json()
    ctx.json("experiment.json", doc)
    ctx.table("descents.csv", [
        {"alpha": d.alpha, "seed_energy": d.seed_energy, "energy": d.energy, "residual": d.residual,
         "degree": d.degree, "status": d.status, "iterations": d.iterations} for d in rep.descents])
    ctx.table("levels.csv", [{"alpha": a, "c1": rep.c1[a], "upper_bound": rep.upper_bound[a]} for a in rep.alphas])
    ctx.warnings.extend(rep.flags)
    return doc


def task_trace_const(p, ctx):
    rows = []
    with ctx.stage("radial"):
        for k in p["k"]:
            m = minimize_radial(p["n"], k, p["cells"])
            rows.append({"k": k, "value": m.value, "expected": float(k), "sup_distance_to_power": m.sup_distance_to_power,
                         "competitor": m.competitor_value if m.competitor_value is not None else ""})
    ctx.table("trace_constants.csv", rows)
    return {"rows": rows}


def task_sphere_decompose(p, ctx):
    p = dict(p, domain="ball")
    _, dom = _domain(p, ctx)
    u = _field(p["field"], dom, p, ctx)
    with ctx.stage("decompose"):
        dec = sphere_decompose(BoundaryTrace.from_field(u), p["k_max"])
    ctx.table("coefficients.csv", dec.rows(), ["k", "l", "component", "value"])
    return {"residual_l2": dec.residual_l2, "norm_l2_squared": dec.norm_l2_squared,
            "parseval_defect": dec.parseval_defect, "gram_defect": dec.gram_defect, "degree_mass": dec.degree_mass()}


def task_pohozaev(p, ctx):
    p = dict(p, domain="ball")
    _, dom = _domain(p, ctx)
    n = dom.n
    u = _field(p["field"], dom, p, ctx)
    expo = p["p"] or (n + p["alpha"] if p["field"] == "critical" else n)
    x0 = _boundary_vertex(dom, p["x0"])
    with ctx.stage("pohozaev"):
        rows = pohozaev_residual(u, expo, x0, p["radii"])
    ctx.table("pohozaev.csv", [io.to_jsonable(r) for r in rows])
    return {"p": expo, "x0": x0, "max_residual": max(r.residual for r in rows)}


def task_neck(p, ctx):
    phi = _phi(p)
    n = p["n"]
    expo = p["p"] or n
    a = phi.project_to_boundary(_vec(p["x0"], n, _north(n))[None])[0]
    phi_a = conformalize_at(phi, a)
    rows = []
    for r in p["r"]:
        u = almost_mobius_map(r, a, phi, phi_a)
        with ctx.stage("neck"):
            val = neck_energy(u, a, r, float(np.sqrt(r)), expo)
        rows.append({"r": r, "lambda": r, "delta": float(np.sqrt(r)), "neck_energy": val})
    ctx.table("neck.csv", rows)
    return {"rows": rows}


def task_price(p, ctx):
    dom = None
    phi = None
    if p["family"] == "concentrating":
        phi = build_diffeomorphism(p["n"], p["L0"])
    else:
        with ctx.stage("mesh"):
            dom = build_ball_mesh(p["n"], p["h"])
    with ctx.stage("sequence"):
        led = price_test(p["ell"], p["family"], p["k"], p["n"], phi, dom, burn_in=p["burn_in"], seed=p["seed"])
    ctx.table("price.csv", led.table())
    return {"family": led.family, "ell": led.ell, "scale": led.scale, "min_margin": led.min_margin(),
            "monotone_after_burn_in": led.monotone_after_burn_in()}


def task_gap_scan(p, ctx):
    p = dict(p, domain="ball")
    _, dom = _domain(p, ctx)
    with ctx.stage("scan"):
        rep = gap_scan(dom, dom.n + p["alpha"], p["seeds"], p["alphas"], threads=ctx.threads, max_iters=p["max_iters"])
    doc = rep.to_json()
    ctx.json("gap_scan.json", doc)
    ctx.table("gap_entries.csv", doc["entries"])
    ctx.table("gap_histogram.csv", rep.histogram, ["lower", "upper", "count"])
    return {"void": rep.void, "ground_cluster": rep.ground_cluster, "constant_threshold": rep.constant_threshold,
            "seeds": len(rep.entries)}


def task_mobius_fit(p, ctx):
    p = dict(p, domain="ball")
    _, dom = _domain(p, ctx)
    u = _field(p["field"], dom, p, ctx)
    with ctx.stage("fit"):
        fit = mobius_fit(u)
    return fit


TASKS = {
    "mesh": task_mesh,
    "mobius-energy": task_mobius_energy,
    "degree": task_degree,
    "raise-degree": task_raise_degree,
    "solve": task_solve,
    "extension": task_extension,
    "c1": task_c1,
    "filling-bound": task_filling_bound,
    "barycenter": task_barycenter,
    "minmax": task_minmax,
    "trace-const": task_trace_const,
    "sphere-decompose": task_sphere_decompose,
    "pohozaev": task_pohozaev,
    "neck": task_neck,
    "price": task_price,
    "gap-scan": task_gap_scan,
    "mobius-fit": task_mobius_fit,
}
