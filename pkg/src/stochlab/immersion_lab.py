"""Immersed patches in rotationally symmetric ambients.

The ambient model of dimension n is written in normal coordinates y around the
pole, r = |y|, omega = y / r, where its metric reads

    G(y) = omega omega^T + s(r)^2 (I - omega omega^T),    s = sigma(r) / r.

In these coordinates grad rho = omega and <v, grad rho>_G is the Euclidean dot
product omega . v.  A patch is a map phi from a rectangle D in R^k into y-space;
the mean curvature vector is the trace of the second fundamental form (no sign
flip), so a round sphere of radius rho in R^3 has H = -(2/rho) times its outward
normal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateImmersionError, DomainError, NumericError, PreconditionError
from .profile import ModelManifold, WarpingProfile

RANK_TOL = 1e-10


# -- ambient geometry ----------------------------------------------------------

def _radial_data(model, r):
    s0, s1, _ = model.profile.eval(np.array([r]))
    sig, dsig = float(s0[0]), float(s1[0])
    s = sig / r
    a = s * s
    a_r = 2 * s * (dsig - s) / r
    b = (1 - a) / r**2
    b_r = -a_r / r**2 - 2 * (1 - a) / r**3
    return sig, dsig, a, a_r, b, b_r


def _check_point(model, y):
    y = np.asarray(y, float)
    if y.shape != (model.dim,):
        raise DomainError(f"ambient point must have {model.dim} coordinates")
    r = float(np.linalg.norm(y))
    if not r > 1e-8:
        raise DomainError("image meets the pole")
    if r > model.r_max:
        raise DomainError("image leaves the model's radius range")
    return y, r


def ambient_metric(model, y):
    y, r = _check_point(model, y)
    _, _, a, _, b, _ = _radial_data(model, r)
    return a * np.eye(model.dim) + b * np.outer(y, y)


def christoffel(model, y):
    """Gamma[i, j, k] of the ambient metric at y."""
    y, r = _check_point(model, y)
    n = model.dim
    _, _, a, a_r, b, b_r = _radial_data(model, r)
    w = y / r
    I = np.eye(n)
    yy = np.outer(y, y)
    # dG[l, i, j] = d_l G_ij
    dG = (a_r * w[:, None, None] * I[None] + b_r * w[:, None, None] * yy[None]
          + b * (I[:, :, None] * y[None, None, :] + y[None, :, None] * I[:, None, :]))
    T = np.einsum("jlk->ljk", dG) + np.einsum("klj->ljk", dG) - dG
    Ginv = np.linalg.inv(a * I + b * yy)
    return 0.5 * np.einsum("il,ljk->ijk", Ginv, T)


# -- radial test functions ------------------------------------------------------

@dataclass(frozen=True)
class RadialFunction:
    """g(rho) with its first two derivatives."""

    f: object
    name: str = "g"

    def __call__(self, t):
        return self.f(t)


def radial_power(k):
    return RadialFunction(lambda t: (t**k, k * t ** (k - 1), k * (k - 1) * t ** (k - 2)),
                          name=f"rho^{k}")


def radial_constant(c=1.0):
    return RadialFunction(lambda t: (c, 0.0, 0.0), name="const")


def radial_decay(lam, R):
    """e^{-sqrt(lam)(rho - R)}."""
    q = math.sqrt(lam)

    def f(t):
        v = math.exp(-q * (t - R))
        return v, -q * v, lam * v

    return RadialFunction(f, name=f"exp(-{q:g}(rho-{R:g}))")


# -- patches -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ImmersedPatch:
    """phi: D -> normal coordinates of ``ambient``; D is a product of intervals."""

    ambient: ModelManifold
    phi: object
    domain: tuple
    jacobian: object = None
    hessian: object = None
    name: str = "patch"
    fd_step: float = 1e-3

    def __post_init__(self):
        dom = tuple((float(lo), float(hi)) for lo, hi in self.domain)
        if any(hi <= lo for lo, hi in dom):
            raise DomainError("patch domain must be a nonempty rectangle")
        object.__setattr__(self, "domain", dom)
        if self.k >= self.ambient.dim:
            raise DomainError("patch dimension must be below the ambient dimension")

    @property
    def k(self):
        return len(self.domain)

    def point(self, p):
        return np.asarray(self.phi(np.asarray(p, float)), float)

    def jac(self, p):
        p = np.asarray(p, float)
        if self.jacobian is not None:
            return np.asarray(self.jacobian(p), float)
        d = self.fd_step
        cols = []
        for a in range(self.k):
            e = np.zeros(self.k)
            e[a] = d
            f = self.point
            cols.append((-f(p + 2 * e) + 8 * f(p + e) - 8 * f(p - e) + f(p - 2 * e)) / (12 * d))
        return np.stack(cols, axis=1)

    def hess(self, p):
        """Second derivatives, shape (n, k, k)."""
        p = np.asarray(p, float)
        if self.hessian is not None:
            return np.asarray(self.hessian(p), float)
        d = self.fd_step
        k = self.k
        out = np.zeros((self.ambient.dim, k, k))
        f = self.point
        E = np.eye(k) * d
        for a in range(k):
            ea = E[a]
            out[:, a, a] = (-f(p + 2 * ea) + 16 * f(p + ea) - 30 * f(p) + 16 * f(p - ea)
                            - f(p - 2 * ea)) / (12 * d * d)
            for b in range(a + 1, k):
                eb = E[b]
                v = (f(p + ea + eb) - f(p + ea - eb) - f(p - ea + eb) + f(p - ea - eb)) / (4 * d * d)
                out[:, a, b] = out[:, b, a] = v
        return out

    def samples(self, n=9):
        axes = [np.linspace(lo, hi, n) for lo, hi in self.domain]
        return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, self.k)

    def rotated(self, Q, name=None):
        """The patch moved by the ambient isometry y -> Q y."""
        Q = np.asarray(Q, float)
        jac = None if self.jacobian is None else (lambda p: Q @ self.jac(p))
        hes = None if self.hessian is None else (
            lambda p: np.einsum("ij,jab->iab", Q, self.hess(p)))
        return ImmersedPatch(self.ambient, lambda p: Q @ self.point(p), self.domain, jac, hes,
                             name or f"{self.name}-rotated", self.fd_step)


@dataclass
class InducedGeometry:
    point: np.ndarray
    first_form: np.ndarray
    frame: np.ndarray  # columns X_1..X_k, orthonormal in the ambient metric
    jacobian: np.ndarray
    metric: np.ndarray  # ambient G at the image point


def induced_geometry(patch, p):
    J = patch.jac(p)
    y = patch.point(p)
    G = ambient_metric(patch.ambient, y)
    g = J.T @ G @ J
    w, V = np.linalg.eigh(g)
    if w[0] <= RANK_TOL * max(w[-1], 1.0):
        raise DegenerateImmersionError(f"dphi loses rank at {p}")
    frame = J @ (V / np.sqrt(w)) @ V.T
    err = np.max(np.abs(frame.T @ G @ frame - np.eye(patch.k)))
    if err > 1e-8:
        raise NumericError("induced frame not orthonormal", error=float(err))
    return InducedGeometry(y, g, frame, J, G)


@dataclass
class MeanCurvature:
    point: np.ndarray
    H: np.ndarray
    norm: float
    normality: float  # max |<H, dphi(e)>| / (|H| |dphi(e)|) over frame directions


def mean_curvature(patch, p, geo=None):
    geo = geo or induced_geometry(patch, p)
    J, G = geo.jacobian, geo.metric
    Gam = christoffel(patch.ambient, geo.point)
    D2 = patch.hess(p) + np.einsum("ijk,ja,kb->iab", Gam, J, J)
    ginv = np.linalg.inv(geo.first_form)
    trace = np.einsum("iab,ab->i", D2, ginv)
    # normal component: remove the tangential projection J g^{-1} J^T G
    H = trace - J @ (ginv @ (J.T @ (G @ trace)))
    norm = float(math.sqrt(max(H @ G @ H, 0.0)))
    if norm > 1e-12:
        dots = np.abs(geo.frame.T @ G @ H) / norm
        normality = float(np.max(dots))
    else:
        normality = 0.0
    return MeanCurvature(geo.point, H, norm, normality)


@dataclass
class MeanCurvatureField:
    points: np.ndarray
    H: np.ndarray
    norms: np.ndarray

    @property
    def sup(self):
        return float(np.max(self.norms))


def mean_curvature_field(patch, n=9):
    pts = patch.samples(n)
    mcs = [mean_curvature(patch, p) for p in pts]
    return MeanCurvatureField(pts, np.array([m.H for m in mcs]), np.array([m.norm for m in mcs]))


@dataclass
class SupremumEstimate:
    value: float
    previous: float
    delta: float
    samples: int


def mean_curvature_supremum(patch, n=9, refinements=2):
    """sup |H| on nested sample grids (n, 2n-1, ...), so the value never decreases."""
    vals = []
    m = n
    for _ in range(refinements + 1):
        vals.append(mean_curvature_field(patch, m).sup)
        m = 2 * m - 1
    return SupremumEstimate(vals[-1], vals[-2], vals[-1] - vals[-2], (m + 1) // 2)


# -- Laplacian of a composed radial function ----------------------------------

def _radial_terms(patch, p, g, geo=None):
    geo = geo or induced_geometry(patch, p)
    y = geo.point
    rho = float(np.linalg.norm(y))
    omega = y / rho
    g0, g1, g2 = g(rho)
    dlog = float(patch.ambient.profile.dlog_sigma(np.array([rho]))[0])
    proj = omega @ geo.frame  # <X_i, grad rho>
    tang = float(proj @ proj)
    hess_trace = g2 * tang + g1 * dlog * (patch.k - tang)
    mc = mean_curvature(patch, p, geo)
    # <H, grad rho>_G is the Euclidean omega . H because G omega = omega
    h_rad = float(omega @ mc.H)
    return rho, (g0, g1, g2), hess_trace, h_rad, mc


def intrinsic_laplacian(patch, f, p, h):
    """Laplace-Beltrami of f on the induced metric, nested central differences."""
    p = np.asarray(p, float)
    k = patch.k

    def form(q):
        J = patch.jac(q)
        G = ambient_metric(patch.ambient, patch.point(q))
        return J.T @ G @ J

    def flux(q):
        grad = np.array([(f(q + h * e) - f(q - h * e)) / (2 * h) for e in np.eye(k)])
        g = form(q)
        return math.sqrt(np.linalg.det(g)) * np.linalg.solve(g, grad)

    div = 0.0
    for a, e in enumerate(np.eye(k)):
        div += (flux(p + h * e)[a] - flux(p - h * e)[a]) / (2 * h)
    return div / math.sqrt(np.linalg.det(form(p)))


@dataclass
class CompositionCheck:
    lhs: float
    rhs: float
    residual: float
    hess_trace: float
    h_term: float
    stencil: float


def laplacian_composition_check(patch, g, p, h=1e-3):
    """Delta_M (g o phi) against sum_i Hess g(X_i, X_i) + <H, grad g>."""
    p = np.asarray(p, float)
    rho, (g0, g1, g2), hess_trace, h_rad, _ = _radial_terms(patch, p, g)
    rhs = hess_trace + g1 * h_rad

    def comp(q):
        return g(float(np.linalg.norm(patch.point(q))))[0]

    lhs = intrinsic_laplacian(patch, comp, p, h)
    return CompositionCheck(lhs, rhs, abs(lhs - rhs), hess_trace, g1 * h_rad, h)


@dataclass
class RefinementReport:
    stencils: tuple
    residuals: tuple  # max residual over the samples at each stencil
    ratio: float

    def second_order(self, lo=3.5, hi=4.5):
        return lo <= self.ratio <= hi


def composition_refinement(patch, g, n=5, stencils=(2e-3, 1e-3)):
    pts = patch.samples(n)
    res = tuple(max(laplacian_composition_check(patch, g, p, h).residual for p in pts)
                for h in stencils)
    ratio = res[0] / res[1] if res[1] > 0 else math.inf
    return RefinementReport(tuple(stencils), res, ratio)


# -- the super-solution chain ----------------------------------------------------

@dataclass
class ChainSample:
    point: np.ndarray
    rho: float
    laplacian: float
    bound: float
    mu_u: float
    holds: bool

    @property
    def slack(self):
        return (self.bound - self.laplacian, self.mu_u - self.bound)


@dataclass
class ChainReport:
    lam: float
    R: float
    mu: float
    sup_H: float
    samples: list = field(default_factory=list)

    @property
    def fraction(self):
        return sum(s.holds for s in self.samples) / len(self.samples)

    @property
    def holds(self):
        return all(s.holds for s in self.samples)


def supersolution_chain_check(patch, lam, R, n=9, sup_H=None, rtol=1e-10):
    """Delta u <= g'' + g' <grad rho, H> <= (lam + sqrt(lam) sup|H|) u, u = e^{-sqrt(lam)(rho-R)}.

    Delta u is the right side of the composition formula, evaluated exactly from the
    patch derivatives; ``laplacian_composition_check`` ties it to the intrinsic
    Laplacian.
    """
    if not patch.ambient.cartan_hadamard:
        raise PreconditionError("ambient must be flagged Cartan-Hadamard")
    if not (lam > 0 and R > 0):
        raise DomainError("need lam > 0 and R > 0")
    pts = patch.samples(n)
    rhos = np.array([np.linalg.norm(patch.point(p)) for p in pts])
    if np.any(rhos <= R):
        raise PreconditionError("patch image must lie outside B(p, R)")
    if sup_H is None:
        sup_H = mean_curvature_supremum(patch, n, refinements=1).value
    mu = lam + math.sqrt(lam) * sup_H
    g = radial_decay(lam, R)
    out = ChainReport(lam, R, mu, sup_H)
    for p in pts:
        rho, (g0, g1, g2), hess_trace, h_rad, _ = _radial_terms(patch, p, g)
        lap = hess_trace + g1 * h_rad
        bound = g2 + g1 * h_rad
        mu_u = mu * g0
        tol = rtol * max(abs(g2), abs(mu_u), 1e-300)
        ok = lap <= bound + tol and bound <= mu_u + tol
        out.samples.append(ChainSample(p, rho, lap, bound, mu_u, bool(ok)))
    return out


# -- builtin patches -------------------------------------------------------------

def hyperbolic_space(dim=3, r_max=64.0):
    return ModelManifold(dim, WarpingProfile.hyperbolic(1.0), r_max, cartan_hadamard=True,
                         name=f"H{dim}")


def euclidean_space(dim=3, r_max=64.0):
    return ModelManifold(dim, WarpingProfile.euclidean(), r_max, cartan_hadamard=True,
                         name=f"E{dim}")


def geodesic_slice(ambient=None, rho=(1.2, 3.0), alpha=(0.0, 1.5)):
    """The plane y_3 = 0 in polar coordinates (rho, alpha); totally geodesic."""
    ambient = ambient or hyperbolic_space()

    def phi(p):
        return np.array([p[0] * math.cos(p[1]), p[0] * math.sin(p[1]), 0.0])

    def jac(p):
        c, s = math.cos(p[1]), math.sin(p[1])
        return np.array([[c, -p[0] * s], [s, p[0] * c], [0.0, 0.0]])

    def hess(p):
        c, s = math.cos(p[1]), math.sin(p[1])
        out = np.zeros((3, 2, 2))
        out[:, 0, 1] = out[:, 1, 0] = (-s, c, 0.0)
        out[:, 1, 1] = (-p[0] * c, -p[0] * s, 0.0)
        return out

    return ImmersedPatch(ambient, phi, (rho, alpha), jac, hess, "geodesic-slice")


def _horo_f(x):
    w = math.sqrt(x * x - 1)
    A = math.acosh(x)
    f = A / w
    f1 = 1 / w**2 - A * x / w**3
    f2 = -3 * x / w**4 - A / w**3 + 3 * A * x * x / w**5
    return f, f1, f2


def horosphere_patch(a=(1.5, 2.5), b=(-0.5, 0.5)):
    """A horosphere of hyperbolic 3-space, flat coordinates (a, b).

    On the hyperboloid it is X = (1 + q, a, b, q) with q = (a^2 + b^2)/2; normal
    coordinates are y = arccosh(x0) / sqrt(x0^2 - 1) * (x1, x2, x3).
    """
    ambient = hyperbolic_space()

    def parts(p):
        A, B = p
        q = 0.5 * (A * A + B * B)
        x = np.array([A, B, q])
        return 1 + q, x

    def phi(p):
        x0, x = parts(p)
        return _horo_f(x0)[0] * x

    def jac(p):
        x0, x = parts(p)
        f, f1, _ = _horo_f(x0)
        dx0 = np.array([p[0], p[1]])
        dx = np.array([[1.0, 0.0], [0.0, 1.0], [p[0], p[1]]])
        return f1 * np.outer(x, dx0) + f * dx

    def hess(p):
        x0, x = parts(p)
        f, f1, f2 = _horo_f(x0)
        dx0 = np.array([p[0], p[1]])
        dx = np.array([[1.0, 0.0], [0.0, 1.0], [p[0], p[1]]])
        d2x0 = np.eye(2)
        d2x = np.zeros((3, 2, 2))
        d2x[2] = np.eye(2)
        return (f2 * np.einsum("i,a,b->iab", x, dx0, dx0)
                + f1 * (np.einsum("i,ab->iab", x, d2x0) + np.einsum("ia,b->iab", dx, dx0)
                        + np.einsum("ib,a->iab", dx, dx0))
                + f * d2x)

    return ImmersedPatch(ambient, phi, (a, b), jac, hess, "horosphere")


def sphere_patch(radius=2.0, center=(0.0, 0.0, 0.0), theta=(0.5, 2.5), phi_range=(0.5, 2.0),
                 ambient=None):
    """Round sphere of the Euclidean ambient in spherical angles."""
    ambient = ambient or euclidean_space()
    c0 = np.asarray(center, float)

    def unit(t, f):
        return np.array([math.sin(t) * math.cos(f), math.sin(t) * math.sin(f), math.cos(t)])

    def phi(p):
        return c0 + radius * unit(*p)

    def jac(p):
        t, f = p
        st, ct, sf, cf = math.sin(t), math.cos(t), math.sin(f), math.cos(f)
        return radius * np.array([[ct * cf, -st * sf], [ct * sf, st * cf], [-st, 0.0]])

    def hess(p):
        t, f = p
        st, ct, sf, cf = math.sin(t), math.cos(t), math.sin(f), math.cos(f)
        out = np.zeros((3, 2, 2))
        out[:, 0, 0] = (-st * cf, -st * sf, -ct)
        out[:, 0, 1] = out[:, 1, 0] = (-ct * sf, ct * cf, 0.0)
        out[:, 1, 1] = (-st * cf, -st * sf, 0.0)
        return radius * out

    name = "sphere" if not c0.any() else "offset-sphere"
    return ImmersedPatch(ambient, phi, (theta, phi_range), jac, hess, name)


def graph_surface(half_width=1.0, lift=1.0):
    """z = x^2 + y^2 + lift over the square |x|, |y| <= half_width."""
    ambient = euclidean_space()

    def phi(p):
        return np.array([p[0], p[1], p[0] ** 2 + p[1] ** 2 + lift])

    def jac(p):
        return np.array([[1.0, 0.0], [0.0, 1.0], [2 * p[0], 2 * p[1]]])

    def hess(p):
        out = np.zeros((3, 2, 2))
        out[2] = 2 * np.eye(2)
        return out

    w = (-half_width, half_width)
    return ImmersedPatch(ambient, phi, (w, w), jac, hess, "graph-surface")


def graph_surface_mean_curvature(x, y):
    """Closed form |H| of z = x^2 + y^2."""
    s = x * x + y * y
    return (4 + 8 * s) / (1 + 4 * s) ** 1.5


def golden_patches():
    """Patches on which the composition formula is refined (rho o phi nonconstant)."""
    return [geodesic_slice(), horosphere_patch(), graph_surface(),
            sphere_patch(center=(3.0, 0.0, 0.0))]
