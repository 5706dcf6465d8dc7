"""Weighted graphs, the discrete Laplacian and Dirichlet heat kernels.

A weighted graph carries vertex weights mu and symmetric conductances c; its
Laplacian is

    (Delta f)(x) = (1/mu_x) sum_y c_xy (f(y) - f(x)).

Infinite graphs are presented lazily by *families* that build the ball of layers
0..horizon around a root on demand.  Truncations are Dirichlet: edges leaving a
truncation still count towards the vertex degree, which is what makes the heat
kernel sub-Markov.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy import sparse
from scipy.linalg import expm
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import expm_multiply, spsolve

from .errors import DomainError, InternalError, NumericError, PreconditionError
from .profile import ModelManifold
from .verdicts import (FELLER_TAIL_TOL, Outcome, Property, TailKind, Verdict,
                       classify_series, decide_feller)

DENSE_KERNEL_CAP = 10_000


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    mu: np.ndarray
    C: sparse.csr_matrix
    layer: np.ndarray | None = None
    root: int | None = None
    name: str = ""

    def __post_init__(self):
        mu = np.asarray(self.mu, float)
        C = sparse.csr_matrix(self.C, dtype=float)
        C.eliminate_zeros()
        C.sort_indices()
        n = mu.size
        if n == 0 or C.shape != (n, n):
            raise DomainError("conductance matrix does not match the vertex set")
        if np.any(mu <= 0) or not np.all(np.isfinite(mu)):
            raise DomainError("vertex weights must be positive and finite")
        if C.nnz and (np.any(C.data <= 0) or not np.all(np.isfinite(C.data))):
            raise DomainError("conductances must be positive and finite")
        if C.diagonal().any():
            raise DomainError("self-loops are not allowed")
        if (C - C.T).count_nonzero():
            raise DomainError("conductances must be symmetric")
        if n > 1 and connected_components(C, directed=False)[0] != 1:
            raise DomainError("graph must be connected")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "C", C)
        if self.layer is not None:
            object.__setattr__(self, "layer", np.asarray(self.layer, dtype=np.int64))

    @property
    def n(self):
        return self.mu.size

    @property
    def degree(self):
        return np.asarray(self.C.sum(axis=1)).ravel()

    def neighbors(self, x):
        s = slice(self.C.indptr[x], self.C.indptr[x + 1])
        return self.C.indices[s], self.C.data[s]

    def generator(self):
        """Sparse matrix of Delta acting on vertex functions."""
        return sparse.diags(1.0 / self.mu) @ (self.C - sparse.diags(self.degree))

    def laplacian(self, f):
        """Delta f at every vertex, summed edge by edge as c_xy (f(y) - f(x))."""
        f = np.asarray(f, float)
        rows = np.repeat(np.arange(self.n), np.diff(self.C.indptr))
        diff = f[self.C.indices] - f[rows]
        return np.bincount(rows, self.C.data * diff, minlength=self.n) / self.mu

    def layer_edges(self):
        """Edge list (x, y, c) with layer[y] = layer[x] + 1."""
        if self.layer is None:
            raise PreconditionError("graph has no layer structure")
        coo = self.C.tocoo()
        sel = self.layer[coo.col] == self.layer[coo.row] + 1
        return coo.row[sel], coo.col[sel], coo.data[sel]

    def layer_fluxes(self, exact=False):
        """C_k = total conductance between layers k and k+1, for k below the top layer."""
        x, _, c = self.layer_edges()
        top = int(self.layer.max())
        if exact:
            out = [Fraction(0)] * top
            for k, v in zip(self.layer[x], c):
                out[k] += Fraction(float(v))
            return out
        return np.bincount(self.layer[x], c, minlength=top)[:top]

    def ball(self, k):
        if self.layer is None:
            raise PreconditionError("graph has no layer structure")
        return np.flatnonzero(self.layer <= k)


def graph_laplacian_apply(g, f, x):
    """(1/mu_x) sum_y c_xy (f(y) - f(x))."""
    idx, c = g.neighbors(x)
    if idx.size == 0 and g.n > 1:
        raise DomainError("isolated vertex")
    f = np.asarray(f, float)
    return float(np.sum(c * (f[idx] - f[x])) / g.mu[x])


# -- finite builders ----------------------------------------------------------

def _from_edges(n, edges, weights, mu, **kw):
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    w = np.broadcast_to(np.asarray(weights, float), (edges.shape[0],))
    C = sparse.coo_matrix((np.r_[w, w], (np.r_[edges[:, 0], edges[:, 1]],
                                         np.r_[edges[:, 1], edges[:, 0]])), shape=(n, n))
    return WeightedGraph(np.broadcast_to(np.asarray(mu, float), (n,)).copy(), C.tocsr(), **kw)


def path_graph(n, mu=1.0, c=1.0):
    e = np.c_[np.arange(n - 1), np.arange(1, n)]
    return _from_edges(n, e, c, mu, layer=np.arange(n), root=0, name=f"path({n})")


def cycle_graph(n, mu=1.0, c=1.0):
    if n < 3:
        raise DomainError("a cycle needs at least 3 vertices")
    e = np.c_[np.arange(n), (np.arange(n) + 1) % n]
    lay = np.minimum(np.arange(n), n - np.arange(n))
    return _from_edges(n, e, c, mu, layer=lay, root=0, name=f"cycle({n})")


def complete_graph(n, mu=1.0, c=1.0):
    e = [(i, j) for i in range(n) for j in range(i + 1, n)]
    return _from_edges(n, e, c, mu, layer=(np.arange(n) > 0).astype(int), root=0,
                       name=f"complete({n})")


# -- lazily presented infinite graphs -----------------------------------------

class GraphFamily:
    """An infinite rooted graph, built ball by ball."""

    name = "family"

    def build(self, horizon) -> WeightedGraph:
        raise NotImplementedError

    def layer_fluxes(self, K):
        """C_0 .. C_{K-1}."""
        return self.build(K).layer_fluxes()


class Lattice(GraphFamily):
    """Z^d with unit weights, layered by l1-distance from the origin."""

    def __init__(self, d):
        if d < 1:
            raise DomainError("lattice dimension must be positive")
        self.d = d
        self.name = f"Z{d}"

    @lru_cache(maxsize=8)
    def build(self, horizon):
        d, N = self.d, int(horizon)
        axes = np.arange(-N, N + 1)
        pts = np.stack(np.meshgrid(*([axes] * d), indexing="ij"), -1).reshape(-1, d)
        pts = pts[np.abs(pts).sum(1) <= N]
        base = 2 * N + 1
        scale = base ** np.arange(d)
        keys = (pts + N) @ scale
        order = np.argsort(keys)
        pts, keys = pts[order], keys[order]
        edges = []
        for i in range(d):
            nb = keys + scale[i]
            ok = pts[:, i] < N
            j = np.searchsorted(keys, nb[ok])
            j = np.minimum(j, keys.size - 1)
            hit = keys[j] == nb[ok]
            src = np.flatnonzero(ok)[hit]
            edges.append(np.c_[src, j[hit]])
        layer = np.abs(pts).sum(1)
        root = int(np.flatnonzero(layer == 0)[0])
        g = _from_edges(len(pts), np.vstack(edges), 1.0, 1.0, layer=layer, root=root,
                        name=f"{self.name}[{N}]")
        object.__setattr__(g, "coords", pts)
        return g

    def layer_fluxes(self, K):
        """Closed form: sites of layer k with j nonzero coordinates each have 2d - j outward edges."""
        d = self.d
        out = np.zeros(K)
        out[0] = 2 * d
        for k in range(1, K):
            out[k] = sum(math.comb(d, j) * 2 ** j * math.comb(k - 1, j - 1) * (2 * d - j)
                         for j in range(1, min(d, k) + 1))
        return out


class RadialChain(GraphFamily):
    """Half-line graph 0 - 1 - 2 - ... with prescribed weights and conductances."""

    def __init__(self, mu, c, name="chain"):
        self.mu_fn, self.c_fn, self.name = mu, c, name

    def build(self, horizon):
        k = np.arange(horizon + 1)
        e = np.c_[k[:-1], k[1:]]
        return _from_edges(k.size, e, self.c_fn(k[:-1]), self.mu_fn(k), layer=k, root=0,
                           name=f"{self.name}[{horizon}]")

    def layer_fluxes(self, K):
        return np.asarray(self.c_fn(np.arange(K)), float)


def z2_chain():
    """Radial chain carrying the layer sizes and layer fluxes of Z^2."""
    return RadialChain(lambda k: np.where(k == 0, 1.0, 4.0 * k),
                       lambda k: 8.0 * k + 4.0, name="Z2-chain")


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


class DiscreteModel(GraphFamily):
    """Radial discretization of a model manifold on the grid r_i = i h.

    mu_i is the volume of the shell between the cell midpoints and c_{i,i+1} the
    sphere area at the midpoint divided by h.
    """

    def __init__(self, model: ModelManifold, h, name=None):
        if not h > 0:
            raise DomainError("grid spacing must be positive")
        self.model, self.h = model, float(h)
        self.name = name or f"discrete-{model.name or model.profile.kind.value}"

    def _area(self, r):
        with np.errstate(over="ignore"):
            return np.exp(self.model.log_sphere_area(r))

    def weights(self, horizon):
        h = self.h
        edges = np.r_[0.0, (np.arange(horizon) + 0.5) * h, (horizon + 0.5) * h]
        lo, hi = edges[:-1], edges[1:]
        half = 0.5 * (hi - lo)
        nodes = 0.5 * (hi + lo)[:, None] + half[:, None] * _GL_NODES[None, :]
        mu = (self._area(nodes.ravel()).reshape(nodes.shape) @ _GL_WEIGHTS) * half
        c = self._area((np.arange(horizon) + 0.5) * h) / h
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(c))):
            raise DomainError("discrete model overflows before the horizon")
        return mu, c

    def radii(self, horizon):
        return np.arange(horizon + 1) * self.h

    @lru_cache(maxsize=8)
    def build(self, horizon):
        if (horizon + 0.5) * self.h > self.model.profile.r_limit:
            raise DomainError("horizon beyond the profile's range")
        mu, c = self.weights(horizon)
        k = np.arange(horizon + 1)
        return _from_edges(k.size, np.c_[k[:-1], k[1:]], c, mu, layer=k, root=0,
                           name=f"{self.name}[{horizon}]")

    def layer_fluxes(self, K):
        return self.weights(K)[1]


# -- heat kernels ---------------------------------------------------------------

def _truncation(g, truncation):
    if isinstance(truncation, (int, np.integer)):
        return g.ball(int(truncation))
    v = np.unique(np.asarray(truncation, dtype=np.int64))
    if v.size == 0 or v[0] < 0 or v[-1] >= g.n:
        raise DomainError("truncation must be a nonempty set of vertices")
    return v


def dirichlet_generator(g, vertices):
    """Generator on the truncation, killed on leaving it."""
    Ct = g.C[vertices][:, vertices]
    return sparse.diags(1.0 / g.mu[vertices]) @ (Ct - sparse.diags(g.degree[vertices]))


@dataclass
class HeatKernel:
    """p_t(x, y), the density of the killed semigroup with respect to mu."""

    vertices: np.ndarray
    t: float
    mu: np.ndarray
    E: np.ndarray  # exp(tA) for the mu-symmetrised generator A

    @property
    def p(self):
        s = 1.0 / np.sqrt(self.mu)
        return s[:, None] * self.E * s[None, :]

    def mass(self):
        """sum_y p_t(x, y) mu_y."""
        s = np.sqrt(self.mu)
        return (self.E @ s) / s


def truncated_heat_kernel(g, truncation, t):
    if not t > 0:
        raise DomainError("time must be positive")
    v = _truncation(g, truncation)
    if v.size > DENSE_KERNEL_CAP:
        raise DomainError(f"dense kernels are capped at {DENSE_KERNEL_CAP} vertices")
    mu = g.mu[v]
    s = 1.0 / np.sqrt(mu)
    Ct = g.C[v][:, v].toarray()
    A = s[:, None] * Ct * s[None, :]
    A[np.diag_indices_from(A)] -= g.degree[v] / mu
    A = 0.5 * (A + A.T)
    E = expm(t * A)
    if not np.all(np.isfinite(E)):
        raise NumericError("matrix exponential failed", size=v.size, t=t)
    return HeatKernel(v, float(t), mu, E)


def kernel_mass(g, truncation, t, at=None):
    """Mass of the killed semigroup, through the unsymmetrised generator."""
    v = _truncation(g, truncation)
    L = dirichlet_generator(g, v).tocsc()
    m = expm_multiply(t * L, np.ones(v.size))
    if not np.all(np.isfinite(m)):
        raise NumericError("expm_multiply failed", size=v.size, t=t)
    if at is None:
        return v, m
    pos = np.searchsorted(v, at)
    if pos >= v.size or v[pos] != at:
        raise DomainError("vertex outside the truncation")
    return float(m[pos])


@dataclass
class KernelProperties:
    size: int
    t: float
    s: float
    symmetry: float
    chapman_kolmogorov: float
    mass_min: float
    mass_max: float
    positive: bool


def kernel_properties(g, truncation, t=1.0, s=0.5):
    """Symmetry, Chapman-Kolmogorov and sub-Markov checks of the killed kernel.

    Residuals are measured on exp(tA), i.e. on sqrt(mu_x mu_y) p_t(x, y), relative
    to its largest entry.
    """
    K1 = truncated_heat_kernel(g, truncation, t)
    K2 = truncated_heat_kernel(g, truncation, s)
    K3 = truncated_heat_kernel(g, truncation, t + s)
    scale = np.max(np.abs(K3.E))
    sym = float(np.max(np.abs(K1.E - K1.E.T)) / np.max(np.abs(K1.E)))
    ck = float(np.max(np.abs(K1.E @ K2.E - K3.E)) / scale)
    _, mass = kernel_mass(g, K1.vertices, t)
    return KernelProperties(K1.vertices.size, t, s, sym, ck, float(mass.min()),
                            float(mass.max()), bool(np.all(K1.E > 0)))


def heat_kernel_suite(g, truncations, t=1.0, s=0.5):
    """Kernel properties on nested truncations plus pointwise mass monotonicity."""
    props = [kernel_properties(g, k, t, s) for k in truncations]
    masses = [kernel_mass(g, k, t) for k in truncations]
    gap = 0.0
    for (v0, m0), (v1, m1) in zip(masses[:-1], masses[1:]):
        if not np.all(np.isin(v0, v1)):
            raise DomainError("truncations must be nested")
        gap = max(gap, float(np.max(m0 - m1[np.searchsorted(v1, v0)])))
    return props, masses, gap


# -- discrete verdicts ------------------------------------------------------------

SC_HOLD_TOL = 1e-6
SC_FAIL_DEFICIT = 1e-3
SC_STABILITY = 0.1


def parabolicity_from_fluxes(fluxes):
    with np.errstate(divide="ignore", over="ignore"):
        terms = 1.0 / np.asarray(fluxes, float)
    tail = classify_series(terms)
    outcome = {TailKind.DIVERGENT: Outcome.HOLDS, TailKind.CONVERGENT: Outcome.FAILS}.get(
        tail.classification, Outcome.INCONCLUSIVE)
    value = tail.value if tail.value is not None else tail.fitted_exponent
    diag = "" if outcome is not Outcome.INCONCLUSIVE else f"layer-flux series undecided: {tail.detail}"
    return Verdict(Property.PARABOLIC, outcome, "layer-flux-series", float(value),
                   evidence={"tail": tail, "terms": int(terms.size)}, diagnostic=diag)


def decide_mass(deficits):
    """Tri-state stochastic completeness from root mass deficits on growing truncations."""
    d = np.asarray(deficits, float)
    if np.any(np.diff(d) > 1e-12):
        return Outcome.INCONCLUSIVE, "mass not monotone in the truncation"
    last, prev = d[-1], d[-2]
    if last <= SC_HOLD_TOL:
        return Outcome.HOLDS, ""
    if last > SC_FAIL_DEFICIT and abs(prev - last) <= SC_STABILITY * last:
        return Outcome.FAILS, ""
    return Outcome.INCONCLUSIVE, f"mass deficit {last:.3g} not settled (previous {prev:.3g})"


def sc_from_mass(g, truncations, t=1.0):
    x = g.root
    deficits = [1.0 - kernel_mass(g, k, t, at=x) for k in truncations]
    outcome, diag = decide_mass(deficits)
    return Verdict(Property.STOCHASTICALLY_COMPLETE, outcome, "kernel-mass", deficits[-1],
                   evidence={"deficits": deficits, "truncations": list(truncations), "t": t},
                   diagnostic=diag)


@dataclass
class DiscreteExhaustion:
    schedule: list
    iterates: list  # full-length vectors on the graph, zero beyond each outer layer
    window_layer: int
    tail_value: float
    previous_tail: float
    converged: bool
    increment: float
    layer_profile: np.ndarray = field(default=None)
    mid_value: float = math.nan


def exterior_solution(g, inner, outer, lam):
    """h = 1 on layers <= inner, h = 0 on layers >= outer, Delta h = lam h between."""
    lay = g.layer
    free = np.flatnonzero((lay > inner) & (lay < outer))
    one = lay <= inner
    h = np.where(one, 1.0, 0.0)
    if free.size:
        A = (sparse.diags(lam * g.mu[free] + g.degree[free]) - g.C[free][:, free]).tocsc()
        b = np.asarray(g.C[free][:, np.flatnonzero(one)].sum(axis=1)).ravel()
        h[free] = spsolve(A, b)
    return h


def discrete_exhaustion(g, lam, inner=1, schedule=None, tol=1e-6):
    top = int(g.layer.max())
    if schedule is None:
        schedule, k = [], top
        while k >= 2 * inner:
            schedule.insert(0, k)
            k //= 2
    if len(schedule) < 2:
        raise PreconditionError("horizon too small for a discrete exhaustion")
    its = [exterior_solution(g, inner, N, lam) for N in schedule]
    for a, b in zip(its[:-1], its[1:]):
        if np.max(a - b) > 1e-10:
            raise InternalError("discrete exhaustion not monotone")
    if min(x.min() for x in its) < -1e-12 or max(x.max() for x in its) > 1 + 1e-12:
        raise InternalError("discrete exterior solution left [0, 1]")
    W = schedule[-2] // 2
    win = g.layer <= W
    last, prev = its[-1], its[-2]
    inc = float(np.max(np.abs(last[win] - prev[win])))
    at_w = g.layer == W
    prof = np.array([last[g.layer == k].max() for k in range(W + 1)])
    return DiscreteExhaustion(list(schedule), its, W, float(last[at_w].max()),
                              float(prev[at_w].max()), inc < tol, inc, prof,
                              float(prof[(inner + W) // 2]))


def feller_from_exhaustion(g, lam, inner=1, tol=FELLER_TAIL_TOL):
    ex = discrete_exhaustion(g, lam, inner)
    outcome, diag = decide_feller(ex.tail_value, ex.previous_tail, ex.converged, tol,
                                  ex.mid_value)
    return Verdict(Property.FELLER, outcome, "discrete-exhaustion", ex.tail_value,
                   evidence={"exhaustion": ex, "previous_tail": ex.previous_tail},
                   diagnostic=diag)


def default_truncations(horizon, fractions=(0.5, 0.75, 1.0)):
    return [max(1, int(round(f * horizon))) for f in fractions]


def graph_triple_verdicts(family, lam=1.0, horizon=64, t=1.0, inner=1, flux_terms=None,
                          mass_horizon=None):
    """Parabolic, SC and Feller verdicts of a layered infinite graph.

    ``family`` is a GraphFamily or an already built WeightedGraph with layers.
    """
    if isinstance(family, WeightedGraph):
        g = family
        fluxes = g.layer_fluxes()
    else:
        g = family.build(horizon)
        fluxes = family.layer_fluxes(flux_terms or horizon)
    par = parabolicity_from_fluxes(fluxes)
    # the top layer of a built ball has no outward edges, so kill strictly inside it
    top = int(g.layer.max()) - 1
    sc = sc_from_mass(g, default_truncations(mass_horizon or top), t)
    try:
        fel = feller_from_exhaustion(g, lam, inner)
    except PreconditionError as exc:
        fel = Verdict(Property.FELLER, Outcome.INCONCLUSIVE, "discrete-exhaustion", math.nan,
                      diagnostic=str(exc))
    return {Property.PARABOLIC: par, Property.STOCHASTICALLY_COMPLETE: sc, Property.FELLER: fel}
