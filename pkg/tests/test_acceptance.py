"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""

import math
import time
from pathlib import Path

import numpy as np
from scipy import special

from stochlab.cli import main
from stochlab.graphs import (Lattice, default_truncations, graph_triple_verdicts,
                             heat_kernel_suite, parabolicity_from_fluxes, z2_chain)
from stochlab.immersion_lab import (composition_refinement, geodesic_slice, golden_patches,
                                    horosphere_patch, radial_power, supersolution_chain_check)
from stochlab.montecarlo import RadialSDEConfig, explosion_probability, feynman_kac_crosscheck
from stochlab.radial_solver import ExteriorProblem, khasminskii_solution, minimal_solution
from stochlab.submersion_lab import (HConvention, ProductSubmersion, WarpedPatch2D,
                                     counterexample_suite, discrete_hyperbolic,
                                     discrete_si_model, equivalence_suite,
                                     golden_equivalence_cases, lemma1_warped_check, SI_HORIZON)
from stochlab.verdicts import (Outcome, Property, feller_verdict, parabolicity_verdict,
                               stochastic_completeness_verdict)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def timed(fn, *args, **kw):
    t = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t


def test_observations(report, e2, e3):
    checks = []
    v, dt = timed(parabolicity_verdict, e2)
    checks.append(("R2", v.outcome is Outcome.HOLDS and dt < 10, v.outcome.value, dt))
    v, dt = timed(parabolicity_verdict, e3)
    checks.append(("R3", v.outcome is Outcome.FAILS and dt < 10, v.outcome.value, dt))
    v, dt = timed(graph_triple_verdicts, Lattice(2), horizon=64, flux_terms=1000)
    v = v[Property.PARABOLIC]
    checks.append(("Z2", v.outcome is Outcome.HOLDS and dt < 10, v.outcome.value, dt))
    v, dt = timed(parabolicity_from_fluxes, Lattice(3).layer_fluxes(1000))
    checks.append(("Z3", v.outcome is Outcome.FAILS and dt < 10, v.outcome.value, dt))
    ok = all(c[1] for c in checks)
    report("observations", ok, ", ".join(f"{n} {o} ({t:.2f}s)" for n, _, o, t in checks))
    assert ok


def test_counterexamples(report):
    rep = counterexample_suite()
    detail = "; ".join(f"{case} {prop.value} base {ob.value} total {ot.value}"
                       for case, prop, ob, ot, _, _ in rep.rows)
    report("counterexample suite", rep.passed, detail + (f" {rep.failures}" if rep.failures else ""))
    assert rep.passed


def test_equivalence(report):
    t0 = time.perf_counter()
    reports = [equivalence_suite(base, fiber, horizon=H, inner=inner, name=name)
               for name, base, fiber, H, inner in golden_equivalence_cases()]
    dt = time.perf_counter() - t0
    ok = all(r.passed and r.flux_exact and r.lift_error <= 1e-12 for r in reports) and dt < 120
    fibers = {r.name: r.fiber_volume for r in reports}
    report("compact-fiber equivalence", ok,
           f"{len(reports)} cases, max lift error "
           f"{max(r.lift_error for r in reports):.2g}, vol(F) {fibers}, {dt:.1f}s")
    assert len(reports) >= 3
    assert ok


def test_bessel_oracle(report, e2):
    t0 = time.perf_counter()
    sol = minimal_solution(ExteriorProblem(e2, 1.0, 1.0))
    r = np.linspace(1.0, 10.0, 2001)
    k_err = float(np.max(np.abs(sol(r) - special.k0(r) / special.k0(1.0))))
    est = khasminskii_solution(e2, 1.0)
    r = np.linspace(0.0, 4.0, 401)
    i_err = float(np.max(np.abs(est(r) / special.i0(r) - 1.0)))
    dt = time.perf_counter() - t0
    ok = k_err <= 1e-4 and i_err <= 1e-4 and dt < 5
    report("Bessel oracle", ok, f"K0 sup error {k_err:.2e}, I0 rel error {i_err:.2e}, {dt:.2f}s")
    assert ok


def test_feynman_kac(report, e2, h2):
    t0 = time.perf_counter()
    rows = []
    for model, r0 in ((e2, 2.0), (h2, 4.0)):
        chk = feynman_kac_crosscheck(RadialSDEConfig(model, seed=2024),
                                     ExteriorProblem(model, 1.0, 1.0), r0, 100_000)
        rows.append((model.name, r0, chk))
    dt = time.perf_counter() - t0
    ok = all(abs(c.z_score) <= 3 for *_, c in rows) and dt < 180
    ok = ok and abs(rows[0][2].bvp - 0.2705) < 1e-3
    report("Feynman-Kac triangle", ok,
           "; ".join(f"{n} r0={r0:g} mc {c.mc.mean:.5f}+-{c.mc.stderr:.5f} bvp {c.bvp:.5f}"
                     f" z {c.z_score:.2f}" for n, r0, c in rows) + f", {dt:.1f}s")
    assert ok


def test_stochastic_incompleteness(report, polyexp):
    v = stochastic_completeness_verdict(polyexp, 1.0)
    cert = v.evidence["certificate"]
    ex = explosion_probability(RadialSDEConfig(polyexp, seed=3), 1.0, 1.0, 10_000)
    est = ex.estimate
    ok = (v.outcome is Outcome.FAILS and cert.certifies and cert.error <= 1e-6
          and est.mean > 3 * est.stderr and est.mean > 0 and not ex.threshold_dependent)
    report("stochastic incompleteness", ok,
           f"SC {v.outcome.value}, inf Delta u {cert.inf_laplacian:.8f} vs "
           f"{cert.expected:.8f} (error {cert.error:.1e}), explosion {est.mean:.4f}"
           f"+-{est.stderr:.4f}, doubled {ex.doubled.mean:.4f}")
    assert ok


def test_feller_pair(report, h2, cusp):
    vh = feller_verdict(h2, 1.0, 1.0)
    slope = vh.evidence["log_slope"]
    target = (-1 - math.sqrt(5)) / 2
    vc = feller_verdict(cusp, 1.0, 1.0)
    tail, prev = vc.value, vc.evidence["previous_tail"]
    ok = (vh.outcome is Outcome.HOLDS and abs(slope / target - 1) <= 0.05
          and vc.outcome is Outcome.FAILS and abs(tail - prev) <= 0.1 * prev)
    report("Feller pair", ok,
           f"H2 {vh.outcome.value} slope {slope:.5f} (target {target:.5f}); "
           f"Cusp {vc.outcome.value} tail {tail:.5f} previous {prev:.5f}")
    assert ok


def golden_graphs():
    out = [("Z2", Lattice(2).build(40)), ("Z3", Lattice(3).build(12)),
           ("Z2-chain", z2_chain().build(256)),
           ("discrete H2", discrete_hyperbolic().build(128)),
           ("discrete SI", discrete_si_model().build(SI_HORIZON))]
    for name, base, fiber, H, _ in golden_equivalence_cases():
        out.append((name, ProductSubmersion.build(base.build(H), fiber).total))
    return out


def test_heat_kernel_suite(report):
    worst = dict(symmetry=0.0, ck=0.0, mass=0.0, gap=0.0)
    ok = True
    for name, g in golden_graphs():
        top = int(g.layer.max()) - 1
        props, masses, gap = heat_kernel_suite(g, default_truncations(top))
        for p in props:
            ok &= p.symmetry <= 1e-10 and p.chapman_kolmogorov <= 1e-8
            ok &= p.mass_min > 0 and p.mass_max <= 1 + 1e-10
            worst["symmetry"] = max(worst["symmetry"], p.symmetry)
            worst["ck"] = max(worst["ck"], p.chapman_kolmogorov)
            worst["mass"] = max(worst["mass"], p.mass_max)
        ok &= gap <= 1e-12
        worst["gap"] = max(worst["gap"], gap)
    report("heat-kernel suite", bool(ok),
           f"worst symmetry {worst['symmetry']:.1e}, CK {worst['ck']:.1e}, "
           f"max mass {worst['mass']:.16f}, monotonicity gap {worst['gap']:.1e}")
    assert ok


def test_composition_chain_warped(report):
    ratios = {p.name: composition_refinement(p, radial_power(2)).ratio for p in golden_patches()}
    ok_ratio = all(3.5 <= r <= 4.5 for r in ratios.values())
    chains = []
    for lam in (0.5, 1.0, 2.0):
        chains.append(supersolution_chain_check(geodesic_slice(), lam, 1.0))
        chains.append(supersolution_chain_check(horosphere_patch(), lam, 1.0))
    ok_chain = all(c.fraction == 1.0 for c in chains)
    mu_ok = all(abs(c.mu - c.lam) < 1e-9 for c in chains[0::2]) and all(
        abs(c.mu - (c.lam + 2 * math.sqrt(c.lam))) < 1e-6 for c in chains[1::2])
    res = []
    for conv in (HConvention.NEGATIVE_TRACE, HConvention.TRACE):
        patch = WarpedPatch2D(lambda x: 2 + math.sin(x), convention=conv, spacing=1e-3)
        res.append(lemma1_warped_check(patch, math.cos, 0.7, refinements=0).residual)
    ok_warped = max(res) <= 1e-6
    ok = ok_ratio and ok_chain and mu_ok and ok_warped
    report("composition / chain / warped", ok,
           "ratios " + ", ".join(f"{k} {v:.3f}" for k, v in ratios.items())
           + f"; chain {min(c.fraction for c in chains):.0%}; warped residual {max(res):.1e}")
    assert ok


def test_determinism(report, tmp_path):
    cfg = str(CONFIGS / "golden.ini")
    codes = [main(["all", "--config", cfg, "--seed", "99", "--out", str(tmp_path / d)])
             for d in ("a", "b")]
    a = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    b = sorted(p.name for p in (tmp_path / "b").glob("*.csv"))
    same = a == b and all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
                          for n in a)
    ok = same and len(a) > 0 and codes == [0, 0]
    report("determinism", ok, f"{len(a)} CSV files byte-identical: {same}, exit codes {codes}")
    assert ok
