"""Acceptance criteria, one test each.

Every test records a pass/fail line (printed in the terminal summary) before
asserting, so a failing criterion still reports its measured values.
"""

import json
import time

import numpy as np
import pytest
from conftest import record_criterion

from nharm.bubble import degree_raiser
from nharm.cli import main
from nharm.diagnostics import gap_scan, pohozaev_residual, price_test
from nharm.fields import MapField, degree_estimates, hadamard_gap
from nharm.geometry import build_ball_mesh, build_diffeomorphism, uniform_refinement
from nharm.harmonics import inverse_power_energy, minimize_radial
from nharm.minmax import c1_level, mountain_pass_experiment
from nharm.mobius import MobiusMap, mobius_energy
from nharm.solver import SolverConfig, free_boundary_descent, p_laplacian_dirichlet

GROUND = 4 * np.sqrt(3) * np.pi

pytestmark = pytest.mark.slow


def random_centres(rng, count, radius):
    a = rng.normal(size=(count, 3))
    return a * (rng.uniform(0.0, radius, size=count) / np.linalg.norm(a, axis=1))[:, None]


def mobius_field(dom, a):
    return MapField.from_function(dom, MobiusMap.centred(np.asarray(a, dtype=float)).apply, normalize_boundary=True)


@pytest.fixture(scope="module")
def refined(ball):
    return uniform_refinement(ball)


def test_criterion_1_mobius_ground_state(ball, refined):
    centres = [np.zeros(3), [0.3, 0, 0], [0, 0, 0.6], [0.6, 0, 0], [0.2, -0.3, 0.45], np.full(3, 0.6 / np.sqrt(3))]
    worst = {"ref": 0.0, "refined": 0.0}
    slowest = 0.0
    with pytest.warns(RuntimeWarning):  # |a| = 0.6 lies within 2h of the boundary on the reference mesh
        for a in centres:
            m = MobiusMap.centred(np.asarray(a, dtype=float))
            for key, dom in (("ref", ball), ("refined", refined)):
                t0 = time.perf_counter()
                value = mobius_energy(m, dom, 3.0).value
                slowest = max(slowest, time.perf_counter() - t0)
                worst[key] = max(worst[key], abs(value / GROUND - 1.0))
    ok = worst["ref"] <= 1e-2 and worst["refined"] <= 2e-3 and slowest <= 60.0
    record_criterion(1, ok, f"max rel error {worst['ref']:.2e} (h=0.15), {worst['refined']:.2e} (refined), "
                            f"slowest {slowest:.2f} s")
    assert ok


def test_criterion_2_degree_suite(coarse_ball):
    dom = coarse_ball
    rng = np.random.default_rng(2024)
    north = np.array([0.0, 0.0, 1.0])
    cases = [("identity", MapField.identity(dom), 1)]
    cases += [(f"mobius {a.round(3)}", mobius_field(dom, a), 1) for a in random_centres(rng, 35, 0.7)]
    for c in rng.normal(size=(10, 3)):
        cases.append(("constant", MapField.constant(dom, c / np.linalg.norm(c)), 0))
    bases = [MapField.identity(dom), mobius_field(dom, [0.3, 0, 0]), mobius_field(dom, [0, -0.2, 0.2]),
             mobius_field(dom, [0.1, 0.25, -0.1])]
    targets = [north, north, np.array([0, -1.0, 0]), np.array([0, 1.0, 0])]
    for u, x0 in zip(bases, targets):
        cases.append(("raised", degree_raiser(u, x0, 0.2), 2))
    assert len(cases) == 50
    failures = []
    for name, u, expected in cases:
        rep = degree_estimates(u)
        agree = round(rep.jacobian_estimate) == round(rep.pullback_estimate) == expected == rep.degree
        if not agree:
            failures.append((name, rep.jacobian_estimate, rep.pullback_estimate))
    ok = not failures
    record_criterion(2, ok, f"{50 - len(failures)}/50 cases with both estimators on the expected degree")
    assert ok, failures


def test_criterion_3_hadamard_bound(refined):
    dom = build_ball_mesh(3, 0.45)
    rng = np.random.default_rng(7)
    X = dom.vertices
    worst = np.inf
    for i in range(1000):
        kind = i % 4
        if kind == 0:
            vals = rng.normal(size=X.shape)
        elif kind == 1:
            vals = X @ rng.normal(size=(3, 3)).T + rng.normal(size=3)
        elif kind == 2:
            vals = np.sin(X @ rng.normal(scale=2.0, size=(3, 3)).T)
        else:
            a = random_centres(rng, 1, 0.8)[0]
            vals = MobiusMap.centred(a).apply(X) + 0.3 * rng.normal(size=X.shape)
        g = hadamard_gap(MapField(dom, vals))
        worst = min(worst, g.slack / g.energy)
    equality = []
    for a in random_centres(np.random.default_rng(8), 6, 0.6):
        g = hadamard_gap(mobius_field(refined, a))
        equality.append(g.slack / g.energy)
    ok = worst >= -1e-8 and max(equality) <= 1e-2
    record_criterion(3, ok, f"min slack/energy {worst:.3e} over 1000 fields; Möbius slack/energy <= {max(equality):.2e}")
    assert ok


def test_criterion_4_trace_constants():
    values = {k: minimize_radial(3, k, cells=2000).value for k in range(1, 6)}
    err = max(abs(v - k) for k, v in values.items())
    m6 = minimize_radial(6, 1, cells=2000)
    competitor_exact = inverse_power_energy(6, 1) == 3.0 and m6.competitor_value == 3.0
    ok = err <= 1e-3 and competitor_exact and m6.value >= 1 - 1e-3
    record_criterion(4, ok, f"max |value - k| {err:.2e}; n=6 competitor {m6.competitor_value}, minimized {m6.value:.6f}")
    assert ok


def test_criterion_5_pohozaev(coarse_ball, ball):
    north = np.array([0.0, 0.0, 1.0])
    radii = [0.2, 0.3, 0.4, 0.5]
    ident = max(r.residual for p in (3.0, 3.1)
                for r in pohozaev_residual(MapField.identity(ball), p, north, radii))
    crit = []
    for dom in (coarse_ball, uniform_refinement(coarse_ball)):
        u, trace = free_boundary_descent(dom, MapField.identity(dom), SolverConfig(p=3.1))
        assert trace.status == "converged"
        b = dom.boundary_vertex_ids
        x0 = dom.vertices[b[np.argmin(np.linalg.norm(dom.vertices[b] - north, axis=1))]]
        crit.append(max(r.residual for r in pohozaev_residual(u, 3.1, x0, radii)))
    ratio = crit[0] / crit[1]
    ok = ident <= 1e-10 and ratio >= 2.0
    record_criterion(5, ok, f"identity {ident:.1e}; critical point {crit[0]:.3e} -> {crit[1]:.3e} (ratio {ratio:.2f})")
    assert ok


def test_criterion_6_solver_oracles(coarse_ball, ball):
    ident = p_laplacian_dirichlet(ball, lambda x: x, 3.0)
    id_err = float(np.max(np.abs(ident.values - ball.vertices)))
    m = MobiusMap.centred(np.array([0.3, 0.0, 0.0]))
    errs, hs = [], []
    for dom in (coarse_ball, ball):
        u = p_laplacian_dirichlet(dom, m.apply, 3.0)
        errs.append(float(np.max(np.abs(u.values - m.apply(dom.vertices)))))
        hs.append(dom.max_edge_length)
    order = np.log(errs[0] / errs[1]) / np.log(hs[0] / hs[1])
    ok = id_err <= 1e-6 and order >= 1.0
    record_criterion(6, ok, f"identity nodal error {id_err:.1e}; Möbius errors {errs[0]:.2e} -> {errs[1]:.2e}, "
                            f"order {order:.2f}")
    assert ok


def test_criterion_7_mountain_pass_shadow():
    phi = build_diffeomorphism(3, 0.05)
    t0 = time.perf_counter()
    rep = mountain_pass_experiment(phi, 0.1, [0.1], h=0.15)
    elapsed = time.perf_counter() - t0
    d = rep.descents[0]
    ub = rep.upper_bound[0.1]
    energy_ok = GROUND * 0.99 < d.energy < ub * 1.01
    margins = [c1_level(r, 0.0, 16, phi, h=None).c1 - GROUND for r in (0.1, 0.05)]
    ok = (d.degree == 1 and d.residual <= 1e-4 and energy_ok and rep.c1[0.1] > GROUND
          and margins[0] > margins[1] > 0 and elapsed <= 1800)
    record_criterion(7, ok, f"degree {d.degree}, residual {d.residual:.1e}, energy {d.energy:.4f} in "
                            f"({GROUND * 0.99:.4f}, {ub * 1.01:.4f}); c1 {rep.c1[0.1]:.4f}; "
                            f"alpha=0 margins {margins[0]:.2e} (r=0.1) > {margins[1]:.2e} (r=0.05); {elapsed:.0f} s")
    assert ok


def test_criterion_8_price(coarse_ball):
    perturbed = build_diffeomorphism(3, 0.05)
    ledgers = [
        price_test(1, "concentrating", ks=range(3, 21), phi=perturbed),
        price_test(1, "concentrating", ks=range(3, 21)),
        price_test(1, "fixed", dom=coarse_ball),
        price_test(0, "perturbation", dom=coarse_ball, seed=0),
        price_test(0, "perturbation", dom=coarse_ball, seed=1),
    ]
    worst = min(led.min_margin() / led.scale for led in ledgers)
    conc = ledgers[0].margins()
    tends = conc[-1] < 0.05 * conc[0]
    ok = worst >= -1e-6 and ledgers[0].monotone_after_burn_in() and tends
    record_criterion(8, ok, f"min margin/scale {worst:.2e}; concentrating margins {conc[0]:.2e} -> {conc[-1]:.2e}, "
                            f"monotone {ledgers[0].monotone_after_burn_in()}")
    assert ok


def test_criterion_9_gap_shadow(ball):
    rep = gap_scan(ball, 3.1, 50)
    threshold = rep.void[1]
    ok_entries = [e for e in rep.entries if e.status not in ("failed", "degree_changed")]
    in_void = [e.seed for e in ok_entries if rep.constant_threshold < e.n_energy < threshold]
    near = [e for e in ok_entries if e.degree == 1 and abs(e.n_energy - GROUND) <= 0.02 * GROUND]
    far = [e.seed for e in near if e.mobius_distance is None or e.mobius_distance > 1e-2]
    dist = max((e.mobius_distance for e in near), default=float("nan"))
    ok = not in_void and not far
    record_criterion(9, ok, f"{len(ok_entries)}/50 seeds settled; void ({rep.constant_threshold:.0e}, {threshold:.4f}); "
                            f"{len(near)} degree-1 near ground, max Möbius distance {dist:.2e}")
    assert ok


DETERMINISM_RUNS = [
    ["trace-const", "--k", "1..3", "--cells", "400"],
    ["solve", "--h", "0.3", "--max-iters", "4"],
    ["gap-scan", "--h", "0.3", "--seeds", "3", "--threads", "2"],
    ["c1", "--domain", "perturbed", "--anchors", "6"],
    ["price", "--family", "perturbation", "--k", "1..5"],
    ["sphere-decompose", "--h", "0.3"],
    ["mesh", "--domain", "perturbed", "--h", "0.3"],
]


def test_criterion_10_determinism(tmp_path):
    mismatched = []
    for i, args in enumerate(DETERMINISM_RUNS):
        outs = [tmp_path / f"{i}-{k}" for k in range(2)]
        for out in outs:
            assert main([*args, "--out", str(out)]) == 0, args
        names = sorted(p.name for p in outs[0].iterdir() if p.name != "manifest.json")
        if names != sorted(p.name for p in outs[1].iterdir() if p.name != "manifest.json"):
            mismatched.append((args[0], "file set"))
        for name in names:
            if (outs[0] / name).read_bytes() != (outs[1] / name).read_bytes():
                mismatched.append((args[0], name))
        digests = [json.loads((out / "manifest.json").read_text())["artifacts"] for out in outs]
        if digests[0] != digests[1]:
            mismatched.append((args[0], "manifest digests"))
    ok = not mismatched
    record_criterion(10, ok, f"{len(DETERMINISM_RUNS)} subcommands run twice, mismatches: {mismatched or 'none'}")
    assert ok
