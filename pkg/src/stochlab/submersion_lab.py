"""Riemannian submersions realised as product graphs, plus a warped 2D patch.

Total space vertices are pairs (x, q) with weight mu_x nu_q.  Base-type edges
(x, q) ~ (y, q) carry c_xy nu_q and fiber-type edges (x, q) ~ (x, q') carry
mu_x d_qq'.  With this choice the walk on the total space moves its base and
fiber coordinates independently, fiber edges never see a lifted function, and
Delta_total (u o pi) = (Delta_base u) o pi holds edge by edge.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy import sparse

from .errors import DomainError, InternalError, NumericError
from .graphs import (DiscreteModel, GraphFamily, Lattice, WeightedGraph, cycle_graph,
                     default_truncations, exterior_solution, graph_triple_verdicts,
                     parabolicity_from_fluxes, path_graph, sc_from_mass, z2_chain)
from .profile import ModelManifold, WarpingProfile
from .verdicts import Outcome, Property

LIFT_TOL = 1e-12


def product_graph(base, fiber, layers="base", name=None):
    """Product with submersion conductances; ``layers`` is base, sum or max."""
    if layers not in ("base", "sum", "max"):
        raise DomainError(f"unknown layer mode {layers!r}")
    nf = fiber.n
    mu = np.kron(base.mu, fiber.mu)
    C = sparse.kron(base.C, sparse.diags(fiber.mu)) + sparse.kron(sparse.diags(base.mu), fiber.C)
    lay = None
    if base.layer is not None:
        lb = np.repeat(base.layer, nf)
        if layers == "base":
            lay = lb
        else:
            if fiber.layer is None:
                raise DomainError("fiber has no layer structure")
            lf = np.tile(fiber.layer, base.n)
            lay = {"sum": lb + lf, "max": np.maximum(lb, lf)}[layers]
    root = None if base.root is None else base.root * nf + (fiber.root or 0)
    return WeightedGraph(mu, C.tocsr(), lay, root, name or f"{base.name}x{fiber.name}")


def induced_subgraph(g, vertices, name=None):
    v = np.unique(np.asarray(vertices, dtype=np.int64))
    lay = None if g.layer is None else g.layer[v]
    root = None
    if g.root is not None:
        pos = np.searchsorted(v, g.root)
        root = int(pos) if pos < v.size and v[pos] == g.root else None
    return WeightedGraph(g.mu[v], g.C[v][:, v], lay, root, name or g.name)


@dataclass(frozen=True, eq=False)
class ProductSubmersion:
    base: WeightedGraph
    fiber: WeightedGraph
    total: WeightedGraph
    projection: np.ndarray

    @classmethod
    def build(cls, base, fiber, layers="base"):
        total = product_graph(base, fiber, layers)
        return cls(base, fiber, total, np.repeat(np.arange(base.n), fiber.n))

    @property
    def fiber_volume(self):
        return sum((Fraction(float(v)) for v in self.fiber.mu), Fraction(0))

    def fiber_over(self, x):
        return np.flatnonzero(self.projection == x)


class ProductFamily(GraphFamily):
    """Lazily built product of an infinite base with a finite or infinite fiber."""

    def __init__(self, base, fiber, layers="base", name=None):
        self.base, self.fiber, self.layers = base, fiber, layers
        fname = getattr(fiber, "name", "F")
        self.name = name or f"{base.name}x{fname}"

    @lru_cache(maxsize=4)
    def build(self, horizon):
        b = self.base.build(horizon)
        f = self.fiber.build(horizon) if isinstance(self.fiber, GraphFamily) else self.fiber
        g = product_graph(b, f, self.layers, name=f"{self.name}[{horizon}]")
        if self.layers == "sum":
            g = induced_subgraph(g, g.ball(horizon))
        return g


def lift(sub, u):
    """u o pi, constant along fibers."""
    u = np.asarray(u, float)
    if u.shape != (sub.base.n,):
        raise DomainError("base function has the wrong length")
    return u[sub.projection]


def lemma1_minimal_check(sub, u):
    """max |Delta_total lift(u) - lift(Delta_base u)|; zero up to rounding."""
    res = float(np.max(np.abs(sub.total.laplacian(lift(sub, u))
                              - lift(sub, sub.base.laplacian(u)))))
    if res > LIFT_TOL * max(1.0, float(np.max(np.abs(sub.base.laplacian(u))))):
        raise InternalError(f"lifting commutation broken (residual {res:.3g})")
    return res


# -- warped patch ------------------------------------------------------------

class HConvention:
    # H = -sum of the fiber second fundamental form (the convention of the
    # divergence identity used here); TRACE is the plain trace
    NEGATIVE_TRACE = "negative-trace"
    TRACE = "trace"


@dataclass(frozen=True)
class WarpedPatch2D:
    """Strip with metric dx^2 + psi(x)^2 dtheta^2; fibers are the circles x = const."""

    psi: object
    dpsi: object = None
    spacing: float = 1e-3
    convention: str = HConvention.NEGATIVE_TRACE

    def __post_init__(self):
        if self.convention not in (HConvention.NEGATIVE_TRACE, HConvention.TRACE):
            raise DomainError(f"unknown mean-curvature convention {self.convention!r}")
        if not self.spacing > 0:
            raise DomainError("stencil spacing must be positive")

    def _psi(self, x):
        v = float(self.psi(x))
        if not v > 0:
            raise DomainError(f"warping function not positive at x = {x}")
        return v

    def log_derivative(self, x, h=None):
        if self.dpsi is not None:
            return float(self.dpsi(x)) / self._psi(x)
        h = h or self.spacing
        return (self._psi(x + h) - self._psi(x - h)) / (2 * h * self._psi(x))

    def mean_curvature(self, x, h=None):
        """x-component of the fiber mean curvature vector."""
        k = self.log_derivative(x, h)
        # the unit circle tangent e satisfies nabla_e e = -(psi'/psi) d_x
        return k if self.convention == HConvention.NEGATIVE_TRACE else -k


@dataclass
class WarpedCheck:
    lhs: float
    rhs: float
    residual: float
    H: float
    spacing: float


def _warped_sides(patch, f, x, h, df):
    psi = patch._psi
    lhs = (psi(x + h) * f(x + h) - psi(x - h) * f(x - h)) / (2 * h * psi(x))
    div_n = float(df(x)) if df is not None else (f(x + h) - f(x - h)) / (2 * h)
    H = patch.mean_curvature(x, h)
    sign = 1.0 if patch.convention == HConvention.NEGATIVE_TRACE else -1.0
    return lhs, div_n + sign * f(x) * H, H


def lemma1_warped_check(patch, X, x, dX=None, tol=1e-6, refinements=3):
    """Div_M of the horizontal lift of X = f d_x against Div_N X + <X~, H>.

    Both divergences are central differences at the patch spacing; the spacing is
    halved up to ``refinements`` times if the residual misses ``tol``.
    """
    h = patch.spacing
    for _ in range(refinements + 1):
        lhs, rhs, H = _warped_sides(patch, X, x, h, dX)
        res = abs(lhs - rhs)
        if res <= tol:
            return WarpedCheck(lhs, rhs, res, H, h)
        h *= 0.5
    raise NumericError("warped divergence identity missed its tolerance", residual=res,
                       spacing=h * 2)


# -- suites --------------------------------------------------------------------

@dataclass
class EquivalenceReport:
    name: str
    base_verdicts: dict
    total_verdicts: dict
    agree: dict
    fiber_volume: Fraction
    flux_exact: bool
    flux_rows: list
    lift_error: float
    commutation_residual: float
    failures: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.failures


def exterior_lift_error(sub, lam, inner, schedule):
    err = 0.0
    for N in schedule:
        hb = exterior_solution(sub.base, inner, N, lam)
        ht = exterior_solution(sub.total, inner, N, lam)
        err = max(err, float(np.max(np.abs(ht - lift(sub, hb)))))
    return err


def equivalence_suite(base, fiber, lam=1.0, horizon=64, inner=1, t=1.0, seed=0, name=None):
    """Compare the three verdicts of a layered base with those of base x fiber."""
    if not isinstance(fiber, WeightedGraph):
        raise DomainError("the fiber must be a finite graph")
    b = base.build(horizon) if isinstance(base, GraphFamily) else base
    sub = ProductSubmersion.build(b, fiber)
    vb = graph_triple_verdicts(b, lam, inner=inner, t=t)
    vt = graph_triple_verdicts(sub.total, lam, inner=inner, t=t)
    agree = {p: vb[p].outcome is vt[p].outcome for p in vb}
    volF = sub.fiber_volume
    fb = b.layer_fluxes(exact=True)
    ft = sub.total.layer_fluxes(exact=True)
    flux_exact = len(fb) == len(ft) and all(x * volF == y for x, y in zip(fb, ft))
    rows = [(k, float(x), float(y), float(y / x)) for k, (x, y) in enumerate(zip(fb, ft))]
    sched = vb[Property.FELLER].evidence.get("exhaustion")
    sched = sched.schedule if sched is not None else [int(b.layer.max())]
    lift_err = exterior_lift_error(sub, lam, inner, sched)
    rng = np.random.default_rng(seed)
    res = lemma1_minimal_check(sub, rng.standard_normal(b.n))
    fails = [f"{p.value} verdicts differ: base {vb[p].outcome.value}, total {vt[p].outcome.value}"
             for p, ok in agree.items() if not ok]
    if not flux_exact:
        fails.append("layer fluxes of the total space are not vol(F) times the base fluxes")
    if lift_err > LIFT_TOL:
        fails.append(f"lifted exterior solutions differ by {lift_err:.3g}")
    return EquivalenceReport(name or sub.total.name, vb, vt, agree, volF, flux_exact, rows,
                             lift_err, res, fails)


@dataclass
class CounterexampleReport:
    rows: list  # (case, property, base outcome, total outcome, expected base, expected total)
    control: EquivalenceReport
    failures: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.failures


# golden discrete models
def discrete_si_model():
    model = ModelManifold(2, WarpingProfile.polyexp(1.0, 3.0, 1.0), 100.0, name="polyexp")
    return DiscreteModel(model, 0.05)


def discrete_hyperbolic():
    model = ModelManifold(2, WarpingProfile.hyperbolic(1.0), 64.0, cartan_hadamard=True,
                          name="hyperbolic")
    return DiscreteModel(model, 0.25)


def discrete_euclidean():
    model = ModelManifold(2, WarpingProfile.euclidean(), 64.0, name="euclidean")
    return DiscreteModel(model, 0.25)


SI_HORIZON = 170
SI_INNER = 10


def counterexample_suite(lattice_horizon=40):
    """The two non-compact-fiber counterexamples and a compact control."""
    rows, fails = [], []

    # Z^3 -> Z^2 forgetting the last coordinate; the fiber Z is not compact
    z2 = Lattice(2)
    total = ProductFamily(z2, Lattice(1), layers="sum", name="Z2xZ").build(lattice_horizon)
    if not np.array_equal(total.layer_fluxes(), Lattice(3).layer_fluxes(lattice_horizon)):
        fails.append("Z2 x Z does not reproduce the layer fluxes of Z3")
    vb = parabolicity_from_fluxes(z2.build(lattice_horizon).layer_fluxes())
    vt = parabolicity_from_fluxes(total.layer_fluxes())
    rows.append(("Z3->Z2", Property.PARABOLIC, vb.outcome, vt.outcome, Outcome.HOLDS,
                 Outcome.FAILS))

    # (SI model) x (SC model) -> SC model
    sc_base = discrete_euclidean()
    si = discrete_si_model()
    b = sc_base.build(SI_HORIZON)
    f = si.build(SI_HORIZON)
    prod = product_graph(b, f, layers="max", name="SCxSI")
    top = SI_HORIZON - 1
    vb = sc_from_mass(b, default_truncations(top))
    vt = sc_from_mass(prod, default_truncations(top))
    rows.append(("SIxSC->SC", Property.STOCHASTICALLY_COMPLETE, vb.outcome, vt.outcome,
                 Outcome.HOLDS, Outcome.FAILS))

    for case, prop, ob, ot, eb, et in rows:
        if (ob, ot) != (eb, et):
            fails.append(f"{case} {prop.value}: got {ob.value}/{ot.value}, "
                         f"expected {eb.value}/{et.value}")
    control = equivalence_suite(z2, cycle_graph(3), horizon=lattice_horizon, name="Z2xC3")
    fails += [f"control: {m}" for m in control.failures]
    return CounterexampleReport(rows, control, fails)


def golden_equivalence_cases():
    """(name, base family, fiber, horizon, inner) of the compact-fiber products."""
    return [
        ("Z2-chain x cycle(4)", z2_chain(), cycle_graph(4), 256, 1),
        ("discrete H2 x cycle(3)", discrete_hyperbolic(), cycle_graph(3), 128, 4),
        ("discrete SI x path(2)", discrete_si_model(), path_graph(2), SI_HORIZON, SI_INNER),
    ]
