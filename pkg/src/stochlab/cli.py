"""Command-line front end: ``stochlab COMMAND --config run.ini``.

Exit codes: 0 when every suite ran and no cross-check contradicts another,
2 when something stayed Inconclusive under ``--strict``, 1 on any error or
contradiction.
"""
from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import SUITES, ConfigError, load_config
from .errors import PreconditionError, StochlabError
from .graphs import (default_truncations, feller_from_exhaustion, graph_triple_verdicts,
                     heat_kernel_suite, kernel_mass)
from .immersion_lab import (composition_refinement, mean_curvature_supremum, radial_power,
                            supersolution_chain_check)
from .montecarlo import (PATH_CSV_HEADER, RadialSDEConfig, Terminal, explosion_probability,
                         feynman_kac_crosscheck)
from .radial_solver import ExteriorProblem, minimal_solution
from .submersion_lab import counterexample_suite, equivalence_suite
from .verdicts import (CSV_HEADER, Outcome, Property, combined_report,
                       stochastic_completeness_verdict, verdict_rows, verdicts_to_text,
                       feller_verdict)

COMMANDS = {"verdict": ("verdicts",), "feller": ("feller",), "mc": ("mc",),
            "submersion": ("submersion",), "immersion": ("immersion",), "all": None}


@dataclass
class SuiteResult:
    name: str
    lines: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)  # file name -> (header, rows)
    checks: dict = field(default_factory=dict)  # cross-check -> consistent?
    inconclusive: list = field(default_factory=list)
    notices: list = field(default_factory=list)
    error: str = ""
    wall: float = 0.0

    def verdicts(self, model_id, verdicts, table="verdicts.csv"):
        verdicts = list(verdicts)
        self.tables.setdefault(table, (CSV_HEADER, []))[1].extend(verdict_rows(model_id, verdicts))
        self.lines.extend(verdicts_to_text(model_id, verdicts).splitlines())
        for v in verdicts:
            if v.outcome is Outcome.INCONCLUSIVE:
                self.inconclusive.append(f"{model_id}.{v.property.value}: {v.diagnostic}")


@dataclass
class RunReport:
    config: object
    suites: list
    version: str = __version__

    @property
    def contradictions(self):
        return [f"{s.name}: {k}" for s in self.suites for k, ok in s.checks.items() if not ok]

    @property
    def inconclusive(self):
        return [x for s in self.suites for x in s.inconclusive]

    @property
    def errors(self):
        return [f"{s.name}: {s.error}" for s in self.suites if s.error]

    def exit_code(self):
        if self.errors or self.contradictions:
            return 1
        if self.config.strict and self.inconclusive:
            return 2
        return 0

    def text(self):
        out = [f"stochlab {self.version}", "", "[config]"]
        out += self.config.echo()
        for s in self.suites:
            out += ["", f"[suite {s.name}]", f"wall_time_s = {s.wall:.3f}"]
            out += s.lines
            out += [f"notice = {n}" for n in s.notices]
            if s.error:
                out.append(f"ERROR = {s.error}")
        out += ["", "[cross-checks]"]
        for s in self.suites:
            out += [f"{s.name}.{k} = {'consistent' if ok else 'CONTRADICTION'}"
                    for k, ok in s.checks.items()]
        out += ["", "[summary]"]
        out += [f"CONTRADICTION = {c}" for c in self.contradictions]
        out += [f"inconclusive = {x}" for x in self.inconclusive]
        out += [f"error = {e}" for e in self.errors]
        out.append(f"exit_code = {self.exit_code()}")
        return "\n".join(out) + "\n"


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _tag(lam):
    return f"{lam:g}"


# -- suites --------------------------------------------------------------------

def suite_verdicts(cfg, res):
    if not cfg.manifolds and not cfg.graphs:
        res.notices.append("no manifold or graph blocks; nothing to classify")
    for m in cfg.manifolds.values():
        for lam in cfg.lambdas:
            mid = f"{m.name}@{_tag(lam)}"
            cr = combined_report(m.model, lam, m.R, model_id=mid)
            res.verdicts(mid, cr.verdicts.values())
            for k, ok in cr.agreement.items():
                res.checks[f"{mid}:{k}"] = ok
    for g in cfg.graphs.values():
        for lam in cfg.lambdas:
            gid = f"graph:{g.name}@{_tag(lam)}"
            v = graph_triple_verdicts(g.family, lam, g.horizon, t=cfg.t, inner=g.inner,
                                      flux_terms=g.flux_terms)
            res.verdicts(gid, v.values())
            par, sc = v[Property.PARABOLIC].outcome, v[Property.STOCHASTICALLY_COMPLETE].outcome
            res.checks[f"{gid}:parabolic=>sc"] = not (par is Outcome.HOLDS and sc is Outcome.FAILS)


def suite_feller(cfg, res):
    if not cfg.manifolds and not cfg.graphs:
        res.notices.append("no manifold or graph blocks; nothing to test")
    for m in cfg.manifolds.values():
        for lam in cfg.lambdas:
            mid = f"{m.name}@{_tag(lam)}"
            v = feller_verdict(m.model, lam, m.R, tol=cfg.feller_tol)
            res.verdicts(mid, [v], "feller.csv")
            sol = v.evidence["solution"]
            res.lines.append(f"{mid}.Feller.log_slope = {v.evidence['log_slope']:.12g}")
            header = ("r",) + tuple(f"h_{it.R_n:g}" for it in sol.iterates) + ("h_limit",)
            cols = [it(sol.grid) for it in sol.iterates]
            rows = [(r,) + tuple(c[i] for c in cols) + (sol.limit_values[i],)
                    for i, r in enumerate(sol.grid)]
            res.tables[f"feller_{m.name}_lam{_tag(lam)}.csv"] = (header, rows)
    for g in cfg.graphs.values():
        for lam in cfg.lambdas:
            gid = f"graph:{g.name}@{_tag(lam)}"
            v = feller_from_exhaustion(g.family.build(g.horizon), lam, g.inner, cfg.feller_tol)
            res.verdicts(gid, [v], "feller.csv")


def suite_mc(cfg, res):
    mc = cfg.mc
    if not mc.models:
        res.notices.append("no models for the Monte-Carlo suite")
    for name in mc.models:
        m = cfg.manifolds[name]
        sde = RadialSDEConfig(m.model, mc.scheme, mc.dt, mc.adaptive, mc.dt_cap, cfg.seed,
                              T=mc.T)
        rows = []
        for lam in cfg.lambdas:
            problem = ExteriorProblem(m.model, m.R, lam)
            sol = minimal_solution(problem)
            for r0 in mc.r0:
                if r0 < m.R:
                    res.notices.append(f"{name}: r0 = {r0:g} inside B(R) skipped")
                    continue
                chk = feynman_kac_crosscheck(sde, problem, r0, max(mc.n, 10_000),
                                             bvp=float(sol(r0)), workers=mc.workers)
                key = f"fk:{name}@{_tag(lam)}:r0={r0:g}"
                res.checks[key] = abs(chk.z_score) <= cfg.fk_sigma
                if chk.inconclusive:
                    res.inconclusive.append(f"{key}: censored paths leave the estimate bracketed"
                                            f" in [{chk.mc.mean:.6g}, {chk.upper:.6g}]")
                rows.append((r0, chk.mc.mean, chk.mc.stderr, chk.mc.n_paths, lam, chk.bvp,
                             chk.z_score))
                res.lines.append(f"{key} = {chk.mc.mean:.6g} +- {chk.mc.stderr:.2g}"
                                 f" (bvp {chk.bvp:.6g}, z {chk.z_score:.3g})")
                if mc.dump_paths and chk.batches:
                    prow = [(cfg.seed, b.chunk, i, Terminal(k).name, t, r, s)
                            for b in chk.batches
                            for i, (k, t, r, s) in enumerate(zip(b.terminal, b.time,
                                                                 b.final_r, b.steps))]
                    res.tables[f"paths_{name}_lam{_tag(lam)}_r0{r0:g}.csv"] = (PATH_CSV_HEADER,
                                                                              prow)
        res.tables[f"mc_{name}.csv"] = (("r0", "estimate", "stderr", "n", "lambda", "bvp",
                                         "z_score"), rows)
        if mc.explosion:
            try:
                ex = explosion_probability(sde, mc.explosion_r0, mc.explosion_T, mc.n,
                                           workers=mc.workers)
            except PreconditionError as exc:
                res.notices.append(f"{name}: explosion estimate skipped ({exc})")
                continue
            est = ex.estimate
            res.tables[f"explosion_{name}.csv"] = (
                ("r0", "T", "threshold", "estimate", "stderr", "n", "doubled_estimate",
                 "threshold_dependent"),
                [(mc.explosion_r0, mc.explosion_T, ex.threshold, est.mean, est.stderr,
                  est.n_paths, ex.doubled.mean, ex.threshold_dependent)])
            res.lines.append(f"explosion:{name} = {est.mean:.6g} +- {est.stderr:.2g}"
                             f" (doubled threshold {ex.doubled.mean:.6g})")
            if ex.threshold_dependent:
                res.inconclusive.append(f"explosion:{name}: estimate depends on the threshold")
                continue
            for lam in cfg.lambdas:
                sc = stochastic_completeness_verdict(m.model, lam).outcome
                if sc is not Outcome.INCONCLUSIVE:
                    explodes = est.mean > 3 * est.stderr
                    res.checks[f"explosion~sc:{name}@{_tag(lam)}"] = explodes == (sc is Outcome.FAILS)


def suite_submersion(cfg, res):
    if not cfg.submersions and not cfg.graphs and not cfg.counterexamples:
        res.notices.append("no submersion or graph blocks")
    for s in cfg.submersions.values():
        for lam in cfg.lambdas:
            rep = equivalence_suite(s.base.family, s.fiber, lam, s.horizon, s.inner, cfg.t,
                                    cfg.seed, name=s.name)
            key = f"equivalence:{s.name}@{_tag(lam)}"
            res.checks[key] = rep.passed
            res.verdicts(f"{s.name}.base@{_tag(lam)}", rep.base_verdicts.values(),
                         "submersion_verdicts.csv")
            res.verdicts(f"{s.name}.total@{_tag(lam)}", rep.total_verdicts.values(),
                         "submersion_verdicts.csv")
            res.lines.append(f"{key}.fiber_volume = {rep.fiber_volume}")
            res.lines.append(f"{key}.flux_exact = {rep.flux_exact}")
            res.lines.append(f"{key}.lift_error = {rep.lift_error:.3g}")
            res.lines += [f"{key}.failure = {f}" for f in rep.failures]
        res.tables[f"submersion_{s.name}.csv"] = (("k", "C_k_base", "C_k_total", "ratio"),
                                                 rep.flux_rows)
    rows = []
    for g in cfg.graphs.values():
        built = g.family.build(g.horizon)
        if g.truncations:
            props, masses, gap = heat_kernel_suite(built, g.truncations, cfg.t)
            res.checks[f"kernel-monotone:{g.name}"] = gap <= 1e-12
            for k, p, (v, m) in zip(g.truncations, props, masses):
                rows.append((g.name, k, p.size, cfg.t, m[np.searchsorted(v, built.root)],
                             p.symmetry, p.chapman_kolmogorov, p.mass_max))
                res.checks[f"kernel:{g.name}:{k}"] = (p.symmetry <= 1e-10
                                                     and p.chapman_kolmogorov <= 1e-8
                                                     and 0 < p.mass_min and p.mass_max <= 1 + 1e-10)
        else:
            for k in default_truncations(int(built.layer.max()) - 1):
                rows.append((g.name, k, int(built.ball(k).size), cfg.t,
                             kernel_mass(built, k, cfg.t, at=built.root), "", "", ""))
    if rows:
        res.tables["kernel_masses.csv"] = (("graph", "truncation", "size", "t", "mass_root",
                                            "symmetry", "chapman_kolmogorov", "mass_max"), rows)
    if cfg.counterexamples:
        ce = counterexample_suite()
        res.checks["counterexamples"] = ce.passed
        res.tables["counterexamples.csv"] = (
            ("case", "property", "base", "total", "expected_base", "expected_total"),
            [(c, p.value, b.value, t.value, eb.value, et.value) for c, p, b, t, eb, et in ce.rows])
        res.lines += [f"counterexample.{c}.{p.value} = base {b.value}, total {t.value}"
                      for c, p, b, t, _, _ in ce.rows]
        res.lines += [f"counterexample.failure = {f}" for f in ce.failures]


def suite_immersion(cfg, res):
    if not cfg.patches:
        res.notices.append("no patch blocks")
    for p in cfg.patches.values():
        patch = p.patch
        ref = composition_refinement(patch, radial_power(p.g_power))
        sup = mean_curvature_supremum(patch, p.samples)
        res.lines.append(f"{p.name}.composition_residuals = "
                         + ", ".join(f"{r:.6g}" for r in ref.residuals))
        res.lines.append(f"{p.name}.refinement_ratio = {ref.ratio:.6g}")
        res.lines.append(f"{p.name}.sup_H = {sup.value:.12g} (last refinement delta {sup.delta:.3g})")
        if math.isfinite(ref.ratio) and max(ref.residuals) > 1e-9:
            res.checks[f"second-order:{p.name}"] = ref.second_order()
        else:
            res.notices.append(f"{p.name}: composition residual at round-off, ratio not tested")
        rows = []
        for lam in cfg.lambdas:
            try:
                ch = supersolution_chain_check(patch, lam, p.R, n=p.samples, sup_H=sup.value)
            except PreconditionError as exc:
                res.notices.append(f"{p.name}: chain check skipped ({exc})")
                break
            res.checks[f"chain:{p.name}@{_tag(lam)}"] = ch.holds
            res.lines.append(f"{p.name}@{_tag(lam)}.mu = {ch.mu:.12g}")
            res.lines.append(f"{p.name}@{_tag(lam)}.chain_fraction = {ch.fraction:.6g}")
            for s in ch.samples:
                a, b = s.slack
                rows.append((lam, *s.point, s.rho, s.laplacian, s.bound, s.mu_u, a, b, s.holds))
        if rows:
            coords = tuple(f"p{i}" for i in range(patch.k))
            res.tables[f"immersion_{p.name}.csv"] = (
                ("lambda",) + coords + ("rho", "laplacian", "bound", "mu_u", "slack_inner",
                                        "slack_outer", "holds"), rows)


SUITE_FUNCS = {"verdicts": suite_verdicts, "feller": suite_feller, "mc": suite_mc,
               "submersion": suite_submersion, "immersion": suite_immersion}


def run(cfg, suites=None):
    """Run the requested suites in canonical order; returns (RunReport, exit code)."""
    suites = tuple(cfg.suites if suites is None else suites)
    if not suites:
        raise ConfigError("no suites requested")
    results = []
    for name in SUITES:
        if name not in suites:
            continue
        res = SuiteResult(name)
        t0 = time.perf_counter()
        try:
            with np.errstate(all="ignore"):
                SUITE_FUNCS[name](cfg, res)
        except StochlabError as exc:
            res.error = f"{type(exc).__name__}: {exc}"
        res.wall = time.perf_counter() - t0
        results.append(res)
    report = RunReport(cfg, results)
    return report, report.exit_code()


def emit_plotdata(report, out_dir):
    """Write every table of the report as CSV; returns the written paths in order."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for s in report.suites:
        if not s.tables:
            s.notices.append("no plot data produced")
        for fname, (header, rows) in s.tables.items():
            path = out / fname
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                for row in rows:
                    w.writerow([_fmt(x) for x in row])
            written.append(path)
    return written


def build_parser():
    p = argparse.ArgumentParser(prog="stochlab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=list(COMMANDS))
    p.add_argument("--config", required=True, metavar="PATH")
    p.add_argument("--seed", type=int, metavar="N")
    p.add_argument("--strict", action="store_true",
                   help="exit 2 if anything stays Inconclusive")
    p.add_argument("--out", metavar="DIR",
                   help="output directory (default: [run] out, then $STOCHLAB_OUT)")
    p.add_argument("--lambda", dest="lam", metavar="LIST",
                   help="comma-separated lambda grid, overrides [run] lambda")
    p.add_argument("--version", action="version", version=f"stochlab {__version__}")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, {"seed": args.seed, "strict": args.strict,
                                        "out": args.out, "lambda": args.lam})
        report, code = run(cfg, COMMANDS[args.command])
        emit_plotdata(report, cfg.out)
        text = report.text()
        (Path(cfg.out) / "report.txt").write_text(text)
    except (StochlabError, OSError) as exc:
        print(f"stochlab: error: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
