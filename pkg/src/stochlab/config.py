"""INI run configuration.

Sections::

    [run]               suites, lambda, seed, out, strict, t, counterexamples,
                        feller_tol, fk_sigma
    [manifold:NAME]     dim, profile, r_max, cartan_hadamard, R and profile parameters
                        (k | a, p, r0 | table)
    [graph:NAME]        kind = lattice | z2-chain | discrete-model | product, plus
                        dim | manifold, h | base, fiber; horizon, inner, truncations,
                        flux_terms
    [submersion:NAME]   base (a graph block), fiber (cycle(n), path(n), complete(n)),
                        horizon, inner
    [patch:NAME]        kind = geodesic-slice | horosphere | sphere | graph-surface |
                        tabulated, R, g_power and shape parameters
    [mc]                models, r0, n, dt, dt_cap, scheme, T, adaptive, explosion,
                        explosion_T, explosion_r0, workers, dump_paths

Every error names the file, section and key it comes from.
"""
from __future__ import annotations

import configparser
import csv
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import StochlabError
from .graphs import (DiscreteModel, Lattice, complete_graph, cycle_graph, path_graph,
                     z2_chain)
from .immersion_lab import (ImmersedPatch, euclidean_space, geodesic_slice, graph_surface,
                            horosphere_patch, hyperbolic_space, sphere_patch)
from .montecarlo import Scheme
from .profile import ModelManifold, WarpingProfile
from .submersion_lab import ProductFamily

SUITES = ("verdicts", "feller", "mc", "submersion", "immersion")
ENV_OUT = "STOCHLAB_OUT"
DEFAULT_OUT = "stochlab-out"


class ConfigError(StochlabError, ValueError):
    pass


@dataclass
class ManifoldSpec:
    name: str
    model: ModelManifold
    R: float = 1.0


@dataclass
class GraphSpec:
    name: str
    family: object
    horizon: int
    inner: int = 1
    truncations: tuple = ()
    flux_terms: int | None = None


@dataclass
class SubmersionSpec:
    name: str
    base: GraphSpec
    fiber: object
    horizon: int
    inner: int


@dataclass
class PatchSpec:
    name: str
    patch: ImmersedPatch
    R: float = 1.0
    g_power: int = 2
    samples: int = 9


@dataclass
class McSpec:
    models: tuple = ()
    r0: tuple = (2.0,)
    n: int = 20_000
    dt: float = 1e-3
    dt_cap: float = 0.05
    scheme: Scheme = Scheme.EULER_MARUYAMA
    T: float = 20.0
    adaptive: bool = True
    explosion: bool = False
    explosion_T: float = 1.0
    explosion_r0: float = 2.0
    workers: int = 1
    dump_paths: bool = False


@dataclass
class RunConfig:
    source: str
    suites: tuple
    lambdas: tuple = (1.0,)
    seed: int = 0
    out: str = DEFAULT_OUT
    strict: bool = False
    t: float = 1.0
    counterexamples: bool = False
    feller_tol: float = 1e-4
    fk_sigma: float = 3.0
    manifolds: dict = field(default_factory=dict)
    graphs: dict = field(default_factory=dict)
    submersions: dict = field(default_factory=dict)
    patches: dict = field(default_factory=dict)
    mc: McSpec = field(default_factory=McSpec)

    def echo(self):
        """Flat key = value lines of every effective setting."""
        lines = [f"run.suites = {', '.join(self.suites)}",
                 f"run.lambda = {', '.join(f'{x:g}' for x in self.lambdas)}",
                 f"run.seed = {self.seed}", f"run.strict = {self.strict}",
                 f"run.t = {self.t:g}", f"run.counterexamples = {self.counterexamples}",
                 f"run.feller_tol = {self.feller_tol:g}", f"run.fk_sigma = {self.fk_sigma:g}"]
        for m in self.manifolds.values():
            p = m.model.profile
            par = ", ".join(f"{k}={v}" for k, v in sorted(p.params.items())
                            if np.isscalar(v))
            lines.append(f"manifold.{m.name} = dim={m.model.dim} profile={p.kind.value}"
                         f"({par}) r_max={m.model.r_max:g} R={m.R:g}"
                         f" cartan_hadamard={m.model.cartan_hadamard}")
        for g in self.graphs.values():
            lines.append(f"graph.{g.name} = {g.family.name} horizon={g.horizon}"
                         f" inner={g.inner} truncations={list(g.truncations)}")
        for s in self.submersions.values():
            lines.append(f"submersion.{s.name} = {s.base.name} x {s.fiber.name}"
                         f" horizon={s.horizon} inner={s.inner}")
        for p in self.patches.values():
            lines.append(f"patch.{p.name} = {p.patch.name} R={p.R:g} g=rho^{p.g_power}"
                         f" samples={p.samples}")
        mc = self.mc
        lines.append(f"mc = models={list(mc.models)} r0={list(mc.r0)} n={mc.n} dt={mc.dt:g}"
                     f" dt_cap={mc.dt_cap:g} scheme={mc.scheme.value} T={mc.T:g}"
                     f" adaptive={mc.adaptive} explosion={mc.explosion}")
        return lines


class _Section:
    """Typed access to one INI section with located errors."""

    def __init__(self, source, name, proxy):
        self.source, self.name, self.proxy = source, name, proxy
        self.used = set()

    def where(self, key=None):
        k = f" key '{key}'" if key else ""
        return f"{self.source}: [{self.name}]{k}"

    def fail(self, key, msg):
        raise ConfigError(f"{self.where(key)}: {msg}")

    def raw(self, key, default=None, required=False):
        self.used.add(key)
        if key not in self.proxy:
            if required:
                raise ConfigError(f"{self.where()}: missing key '{key}'")
            return default
        return self.proxy[key].strip()

    def float(self, key, default=None, positive=False, required=False):
        v = self.raw(key, None, required)
        if v is None:
            return default
        try:
            x = float(v)
        except ValueError:
            self.fail(key, f"expected a number, got {v!r}")
        if positive and not x > 0:
            self.fail(key, f"must be positive, got {v}")
        return x

    def int(self, key, default=None, minimum=None, required=False):
        v = self.raw(key, None, required)
        if v is None:
            return default
        try:
            x = int(v)
        except ValueError:
            self.fail(key, f"expected an integer, got {v!r}")
        if minimum is not None and x < minimum:
            self.fail(key, f"must be at least {minimum}, got {x}")
        return x

    def bool(self, key, default=False):
        v = self.raw(key)
        if v is None:
            return default
        t = v.lower()
        if t in ("1", "true", "yes", "on"):
            return True
        if t in ("0", "false", "no", "off"):
            return False
        self.fail(key, f"expected a boolean, got {v!r}")

    def list(self, key, default=()):
        v = self.raw(key)
        if v is None:
            return tuple(default)
        return tuple(x.strip() for x in v.split(",") if x.strip())

    def floats(self, key, default=(), positive=False):
        out = []
        for x in self.list(key):
            try:
                out.append(float(x))
            except ValueError:
                self.fail(key, f"expected a list of numbers, got {x!r}")
            if positive and not out[-1] > 0:
                self.fail(key, f"values must be positive, got {x}")
        return tuple(out) if out else tuple(default)

    def check_unused(self):
        extra = sorted(set(self.proxy) - self.used)
        if extra:
            raise ConfigError(f"{self.where()}: unknown key(s) {', '.join(extra)}")


def parse_lambdas(text, where="--lambda"):
    try:
        vals = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{where}: expected a comma-separated list of numbers, got {text!r}")
    if not vals or any(not v > 0 for v in vals):
        raise ConfigError(f"{where}: lambda values must be positive")
    return vals


def _profile(sec, base_dir):
    kind = sec.raw("profile", required=True).lower()
    if kind == "euclidean":
        return WarpingProfile.euclidean()
    if kind == "hyperbolic":
        return WarpingProfile.hyperbolic(sec.float("k", 1.0, positive=True))
    if kind in ("polyexp", "cusp"):
        args = (sec.float("a", 1.0, positive=True), sec.float("p", 3.0, positive=True),
                sec.float("r0", 1.0, positive=True))
        return WarpingProfile.polyexp(*args) if kind == "polyexp" else WarpingProfile.cusp(*args)
    if kind == "tabulated":
        path = base_dir / sec.raw("table", required=True)
        try:
            with open(path, newline="") as fh:
                rows = list(csv.DictReader(fh))
            cols = {c: np.array([float(r[c]) for r in rows])
                    for c in ("r", "sigma", "dsigma", "d2sigma")}
        except (OSError, KeyError, ValueError) as exc:
            sec.fail("table", f"cannot read table {path}: {exc}")
        try:
            return WarpingProfile.tabulated(cols["r"], cols["sigma"], cols["dsigma"],
                                            cols["d2sigma"])
        except StochlabError as exc:
            sec.fail("table", str(exc))
    sec.fail("profile", f"unknown profile {kind!r}")


def _manifold(sec, name, base_dir):
    prof = _profile(sec, base_dir)
    try:
        model = ModelManifold(sec.int("dim", required=True, minimum=2), prof,
                              sec.float("r_max", 64.0, positive=True),
                              cartan_hadamard=sec.bool("cartan_hadamard"), name=name)
    except ConfigError:
        raise
    except StochlabError as exc:
        raise ConfigError(f"{sec.where()}: {exc}")
    R = sec.float("R", 1.0, positive=True)
    return ManifoldSpec(name, model, R)


_FIBER = re.compile(r"^(cycle|path|complete)\((\d+)\)$")


def parse_fiber(text, where):
    m = _FIBER.match(text.replace(" ", ""))
    if not m:
        raise ConfigError(f"{where}: expected cycle(n), path(n) or complete(n), got {text!r}")
    kind, n = m.group(1), int(m.group(2))
    try:
        return {"cycle": cycle_graph, "path": path_graph, "complete": complete_graph}[kind](n)
    except StochlabError as exc:
        raise ConfigError(f"{where}: {exc}")


def _graph(sec, name, cfg):
    kind = sec.raw("kind", required=True).lower()
    horizon = sec.int("horizon", 64, minimum=4)
    inner = sec.int("inner", 1, minimum=0)
    trunc = tuple(int(x) for x in sec.floats("truncations"))
    flux_terms = sec.int("flux_terms", None, minimum=8)
    if kind == "lattice":
        fam = Lattice(sec.int("dim", 2, minimum=1))
    elif kind == "z2-chain":
        fam = z2_chain()
    elif kind == "discrete-model":
        ref = sec.raw("manifold", required=True)
        if ref not in cfg.manifolds:
            sec.fail("manifold", f"no [manifold:{ref}] block")
        fam = DiscreteModel(cfg.manifolds[ref].model, sec.float("h", 0.25, positive=True),
                            name=f"discrete-{ref}")
    elif kind == "product":
        ref = sec.raw("base", required=True)
        if ref not in cfg.graphs:
            sec.fail("base", f"no [graph:{ref}] block defined before this one")
        fam = ProductFamily(cfg.graphs[ref].family,
                            parse_fiber(sec.raw("fiber", required=True), sec.where("fiber")))
    else:
        sec.fail("kind", f"unknown graph kind {kind!r}")
    fam.name = name
    return GraphSpec(name, fam, horizon, inner, trunc, flux_terms)


def _tabulated_patch(sec, base_dir, ambient):
    from scipy.interpolate import RectBivariateSpline

    path = base_dir / sec.raw("table", required=True)
    try:
        with open(path, newline="") as fh:
            rows = [[float(x) for x in r] for r in csv.reader(fh) if r and not r[0].startswith("u")]
    except (OSError, ValueError) as exc:
        sec.fail("table", f"cannot read table {path}: {exc}")
    a = np.array(rows)
    u, v = np.unique(a[:, 0]), np.unique(a[:, 1])
    if a.shape[0] != u.size * v.size or a.shape[1] != 2 + ambient.dim:
        sec.fail("table", "expected a full u x v grid with columns u, v, y1..yn")
    a = a[np.lexsort((a[:, 1], a[:, 0]))]
    splines = [RectBivariateSpline(u, v, a[:, 2 + i].reshape(u.size, v.size), kx=5, ky=5)
               for i in range(ambient.dim)]

    def ev(p, dx=0, dy=0):
        return np.array([float(s(p[0], p[1], dx=dx, dy=dy)[0, 0]) for s in splines])

    def jac(p):
        return np.stack([ev(p, 1, 0), ev(p, 0, 1)], axis=1)

    def hess(p):
        out = np.empty((ambient.dim, 2, 2))
        out[:, 0, 0] = ev(p, 2, 0)
        out[:, 1, 1] = ev(p, 0, 2)
        out[:, 0, 1] = out[:, 1, 0] = ev(p, 1, 1)
        return out

    return ImmersedPatch(ambient, ev, ((u[0], u[-1]), (v[0], v[-1])), jac, hess, "tabulated")


def _patch(sec, name, base_dir):
    kind = sec.raw("kind", required=True).lower()

    def rng(key, default):
        vals = sec.floats(key, default)
        if len(vals) != 2 or vals[1] <= vals[0]:
            sec.fail(key, "expected 'lo, hi' with lo < hi")
        return vals

    try:
        if kind == "geodesic-slice":
            patch = geodesic_slice(rho=rng("rho", (1.2, 3.0)), alpha=rng("alpha", (0.0, 1.5)))
        elif kind == "horosphere":
            patch = horosphere_patch(a=rng("a", (1.5, 2.5)), b=rng("b", (-0.5, 0.5)))
        elif kind == "sphere":
            center = sec.floats("center", (0.0, 0.0, 0.0))
            if len(center) != 3:
                sec.fail("center", "expected three coordinates")
            patch = sphere_patch(sec.float("radius", 2.0, positive=True), center,
                                 rng("theta", (0.5, 2.5)), rng("phi", (0.5, 2.0)))
        elif kind == "graph-surface":
            patch = graph_surface(sec.float("half_width", 1.0, positive=True),
                                  sec.float("lift", 1.0))
        elif kind == "tabulated":
            amb = sec.raw("ambient", "hyperbolic").lower()
            if amb not in ("hyperbolic", "euclidean"):
                sec.fail("ambient", f"expected hyperbolic or euclidean, got {amb!r}")
            patch = _tabulated_patch(sec, base_dir,
                                     hyperbolic_space() if amb == "hyperbolic" else euclidean_space())
        else:
            sec.fail("kind", f"unknown patch kind {kind!r}")
    except ConfigError:
        raise
    except StochlabError as exc:
        raise ConfigError(f"{sec.where()}: {exc}")
    return PatchSpec(name, patch, sec.float("R", 1.0, positive=True),
                     sec.int("g_power", 2, minimum=1), sec.int("samples", 9, minimum=2))


def _mc(sec, cfg):
    try:
        scheme = Scheme(sec.raw("scheme", Scheme.EULER_MARUYAMA.value))
    except ValueError:
        sec.fail("scheme", f"expected one of {', '.join(s.value for s in Scheme)}")
    models = sec.list("models", tuple(cfg.manifolds))
    for m in models:
        if m not in cfg.manifolds:
            sec.fail("models", f"no [manifold:{m}] block")
    return McSpec(models, sec.floats("r0", (2.0,), positive=True),
                  sec.int("n", 20_000, minimum=1000), sec.float("dt", 1e-3, positive=True),
                  sec.float("dt_cap", 0.05, positive=True), scheme,
                  sec.float("T", 20.0, positive=True), sec.bool("adaptive", True),
                  sec.bool("explosion"), sec.float("explosion_T", 1.0, positive=True),
                  sec.float("explosion_r0", 2.0, positive=True), sec.int("workers", 1, minimum=1),
                  sec.bool("dump_paths"))


def load_config(path, overrides=None):
    """Parse and validate a run configuration; ``overrides`` hold command-line values."""
    overrides = overrides or {}
    path = Path(path)
    src = str(path)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh, source=src)
    except OSError as exc:
        raise ConfigError(f"{src}: cannot read configuration: {exc.strerror}")
    except configparser.Error as exc:
        raise ConfigError(f"{src}: {exc}")
    base_dir = path.parent
    if "run" not in cp:
        raise ConfigError(f"{src}: missing [run] section")
    run = _Section(src, "run", cp["run"])
    suites = tuple(s.lower() for s in run.list("suites"))
    for s in suites:
        if s not in SUITES:
            run.fail("suites", f"unknown suite {s!r} (choose from {', '.join(SUITES)})")
    cfg = RunConfig(src, suites)
    lam_text = run.raw("lambda")
    cfg.lambdas = parse_lambdas(lam_text, run.where("lambda")) if lam_text else (1.0,)
    cfg.seed = run.int("seed", 0, minimum=0)
    cfg.out = run.raw("out", None)
    cfg.strict = run.bool("strict")
    cfg.t = run.float("t", 1.0, positive=True)
    cfg.counterexamples = run.bool("counterexamples")
    cfg.feller_tol = run.float("feller_tol", 1e-4, positive=True)
    cfg.fk_sigma = run.float("fk_sigma", 3.0, positive=True)
    run.check_unused()
    sections = []
    for name in cp.sections():
        if name == "run":
            continue
        kind, _, label = name.partition(":")
        if kind == "mc" and not label:
            continue
        if kind not in ("manifold", "graph", "submersion", "patch") or not label:
            raise ConfigError(f"{src}: [{name}] is not a recognised section")
        sections.append((kind, label, _Section(src, name, cp[name])))
    # manifolds first so graph blocks may refer to them
    for kind, label, sec in sorted(sections, key=lambda s: s[0] != "manifold"):
        if kind == "manifold":
            cfg.manifolds[label] = _manifold(sec, label, base_dir)
        elif kind == "graph":
            cfg.graphs[label] = _graph(sec, label, cfg)
        elif kind == "patch":
            cfg.patches[label] = _patch(sec, label, base_dir)
        else:
            continue
        sec.check_unused()
    for kind, label, sec in sections:
        if kind != "submersion":
            continue
        ref = sec.raw("base", required=True)
        if ref not in cfg.graphs:
            sec.fail("base", f"no [graph:{ref}] block")
        base = cfg.graphs[ref]
        fiber = parse_fiber(sec.raw("fiber", required=True), sec.where("fiber"))
        cfg.submersions[label] = SubmersionSpec(label, base, fiber,
                                                sec.int("horizon", base.horizon, minimum=4),
                                                sec.int("inner", base.inner, minimum=0))
        sec.check_unused()
    if "mc" in cp:
        sec = _Section(src, "mc", cp["mc"])
        cfg.mc = _mc(sec, cfg)
        sec.check_unused()
    else:
        cfg.mc = McSpec(models=tuple(cfg.manifolds))
    if "lambda" in overrides and overrides["lambda"] is not None:
        cfg.lambdas = parse_lambdas(overrides["lambda"])
    if overrides.get("seed") is not None:
        if overrides["seed"] < 0:
            raise ConfigError("--seed: must be nonnegative")
        cfg.seed = overrides["seed"]
    if overrides.get("strict"):
        cfg.strict = True
    if overrides.get("out"):
        cfg.out = overrides["out"]
    elif cfg.out:
        cfg.out = str(base_dir / cfg.out)
    else:
        cfg.out = os.environ.get(ENV_OUT) or DEFAULT_OUT
    return cfg
