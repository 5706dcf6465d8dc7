"""Radial boundary-value and initial-value problems on model manifolds.

The exterior problem ``Delta h = lam h`` outside the ball B(p, R) with h = 1 on the
boundary is solved on truncated annuli [R, R_n] with h(R_n) = 0.  The
discretisation is the finite-volume form of ``(S h')' = lam S h`` (S = sphere
area), so the matrix is an M-matrix and the discrete maximum principle and the
monotonicity of the exhaustion hold exactly rather than approximately.

The Khas'minskii function is the radial solution of ``Delta g = lam g`` started at
the pole.  It is integrated as the Riccati pair (log g, g'/g) so that profiles with
super-exponential growth never overflow.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize
from scipy.linalg import solve_banded

from .errors import DomainError, InternalError, NumericError, PreconditionError
from .profile import ModelManifold

LOG_FLOAT_MAX = math.log(np.finfo(float).max)


@dataclass(frozen=True)
class ExteriorProblem:
    model: ModelManifold
    R: float
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise DomainError("lambda must be positive")
        if not 0 < self.R < self.model.r_max:
            raise DomainError("need 0 < R < r_max")


@dataclass
class TruncatedSolution:
    R_n: float
    grid: np.ndarray
    values: np.ndarray
    residual_norm: float

    def __call__(self, r):
        return np.interp(r, self.grid, self.values, right=0.0)


@dataclass
class MinimalSolution:
    problem: ExteriorProblem
    iterates: list
    grid: np.ndarray
    limit_values: np.ndarray
    tail_value: float
    previous_tail: float
    window_end: float
    converged: bool
    increment: float

    def __call__(self, r):
        return np.interp(r, self.grid, self.limit_values)

    def log_slope(self, r_lo=None, r_hi=None):
        """Least-squares slope of log h over [r_lo, r_hi] (default: second half of the window)."""
        r_hi = self.window_end if r_hi is None else r_hi
        r_lo = 0.5 * (self.problem.R + r_hi) if r_lo is None else r_lo
        sel = (self.grid >= r_lo) & (self.grid <= r_hi) & (self.limit_values > 0)
        if sel.sum() < 2:
            return math.nan
        return float(np.polyfit(self.grid[sel], np.log(self.limit_values[sel]), 1)[0])


class Boundedness(str, enum.Enum):
    BOUNDED = "bounded"
    UNBOUNDED = "unbounded"
    INCONCLUSIVE = "inconclusive"


@dataclass
class RadialFunctionEstimate:
    """Khas'minskii candidate gamma on [0, r_max] with its boundedness class.

    ``log_values`` and ``log_derivative`` (gamma'/gamma) are stored instead of the
    raw values, which overflow for the fast-growing profiles.
    """

    model: ModelManifold
    lam: float
    grid: np.ndarray
    log_values: np.ndarray
    log_derivative: np.ndarray
    classification: Boundedness
    slope: float
    limit: float | None = None
    overflow_radius: float | None = None
    window: tuple = ()
    _dense: object = field(default=None, repr=False)

    @property
    def values(self):
        with np.errstate(over="ignore"):
            return np.exp(self.log_values)

    @property
    def derivative(self):
        with np.errstate(over="ignore"):
            return np.exp(self.log_values) * self.log_derivative

    def log_gamma(self, r):
        r = np.asarray(r, float)
        small = r < self._r_start
        out = np.empty_like(r)
        if np.any(~small):
            out[~small] = self._dense(r[~small])[0]
        out[small] = np.log1p(self.lam * r[small] ** 2 / (2 * self.model.dim))
        return out

    def __call__(self, r):
        with np.errstate(over="ignore"):
            return np.exp(self.log_gamma(r))

    _r_start: float = 1e-4


# -- exterior problem ------------------------------------------------------

def _grid(R, R_n, dr, min_nodes=64):
    # nodes R + i*dr are shared by every truncation, so iterates compare node-for-node
    n = int(round((R_n - R) / dr))
    if n < min_nodes - 1:
        return np.linspace(R, R_n, min_nodes)
    return R + dr * np.arange(n + 1)


def solve_truncated(problem, R_n, dr=0.01, min_nodes=64):
    """Solve Delta h = lam h on [R, R_n], h(R) = 1, h(R_n) = 0."""
    model, R, lam = problem.model, problem.R, problem.lam
    if not R_n > R:
        raise DomainError("outer radius must exceed the inner radius")
    if R_n > model.r_max * (1 + 1e-12):
        raise DomainError("outer radius beyond r_max")
    r = _grid(R, R_n, dr, min_nodes)
    if r.size < min_nodes:
        raise DomainError("grid must have at least 64 nodes")
    h = np.diff(r)
    half = 0.5 * (r[1:] + r[:-1])
    log_s = model.log_sphere_area(r)
    log_s_half = model.log_sphere_area(half)
    # row i (interior) divided by the cell volume S_i (h_{i-1} + h_i)/2
    cell = 0.5 * (h[:-1] + h[1:])
    lo = np.exp(log_s_half[:-1] - log_s[1:-1]) / (h[:-1] * cell)
    up = np.exp(log_s_half[1:] - log_s[1:-1]) / (h[1:] * cell)
    n = r.size - 2
    ab = np.zeros((3, n))
    ab[0, 1:] = up[:-1]
    ab[1] = -(lo + up + lam)
    ab[2, :-1] = lo[1:]
    rhs = np.zeros(n)
    rhs[0] = -lo[0]
    if not (np.all(np.isfinite(ab)) and np.all(ab[1] < 0)):
        raise InternalError("non-finite or singular exterior-problem matrix")
    interior = solve_banded((1, 1), ab, rhs)
    res = np.abs(
        ab[1] * interior
        + np.concatenate([ab[0, 1:] * interior[1:], [0.0]])
        + np.concatenate([[0.0], ab[2, :-1] * interior[:-1]])
        - rhs
    ) / (np.abs(ab[1]) + 1e-300)
    values = np.concatenate([[1.0], interior, [0.0]])
    overshoot = max(np.max(values) - 1.0, -np.min(values), 0.0)
    if overshoot > 1e-12:
        raise InternalError("discrete maximum principle violated", )
    values = np.clip(values, 0.0, 1.0)
    return TruncatedSolution(R_n=float(r[-1]), grid=r, values=values,
                             residual_norm=float(np.max(res)))


def default_schedule(R, r_max):
    out = []
    x = 2.0 * R
    while x <= r_max * (1 + 1e-12):
        out.append(x)
        x *= 2.0
    return out


def minimal_solution(problem, schedule=None, tol=1e-6, dr=0.01):
    """Monotone exhaustion limit of truncated solutions.

    The common window is [R, W] with W half of the second-to-last outer radius;
    ``tail_value`` is the last iterate at W and ``previous_tail`` the one before.
    """
    R = problem.R
    if schedule is None:
        schedule = default_schedule(R, problem.model.r_max)
    schedule = [float(x) for x in schedule]
    if len(schedule) < 2:
        raise DomainError("exhaustion schedule needs at least two radii")
    if any(b <= a for a, b in zip(schedule[:-1], schedule[1:])) or schedule[0] <= R:
        raise DomainError("exhaustion schedule must be strictly increasing and beyond R")
    if schedule[-1] > problem.model.r_max * (1 + 1e-12):
        raise DomainError("exhaustion schedule exceeds r_max")
    iterates = [solve_truncated(problem, Rn, dr=dr) for Rn in schedule]
    for a, b in zip(iterates[:-1], iterates[1:]):
        k = a.grid.size
        if b.grid.size >= k and np.array_equal(a.grid, b.grid[:k]):
            gap = np.max(a.values - b.values[:k])
        else:
            gap = np.max(a.values - b(a.grid))
        if gap > 1e-10:
            raise InternalError(f"exhaustion not monotone (excess {gap:.3g})")
    W = 0.5 * schedule[-2]
    last, prev = iterates[-1], iterates[-2]
    sel = last.grid <= W * (1 + 1e-12)
    grid = last.grid[sel]
    limit = last.values[sel]
    inc = float(np.max(np.abs(limit - prev(grid))))
    return MinimalSolution(
        problem=problem,
        iterates=iterates,
        grid=grid,
        limit_values=limit,
        tail_value=float(limit[-1]),
        previous_tail=float(prev(grid[-1])),
        window_end=float(grid[-1]),
        converged=inc < tol,
        increment=inc,
    )


# -- Khas'minskii function ---------------------------------------------------

def khasminskii_solution(model, lam, r_start=1e-4, n_out=2001, rtol=1e-10,
                         bounded_slope=1e-3, unbounded_slope=1e-1):
    """Radial solution of Delta g = lam g with g(0) = 1, g'(0) = 0.

    Classification fits log g against r over the last decade [r_max/10, r_max]:
    slope below ``bounded_slope`` is Bounded, above ``unbounded_slope`` Unbounded.
    """
    if not lam > 0:
        raise DomainError("lambda must be positive")
    m = model.dim
    r_max = model.r_max
    g0 = 1 + lam * r_start**2 / (2 * m)
    y0 = [math.log(g0), (lam * r_start / m) / g0]

    def rhs(r, y):
        q = y[1]
        return [q, lam - q * q - model.drift(r) * q]

    def jac(r, y):
        return [[0.0, 1.0], [0.0, -2 * y[1] - model.drift(r)]]

    sol = integrate.solve_ivp(rhs, (r_start, r_max), y0, method="Radau", jac=jac,
                              rtol=rtol, atol=1e-12, dense_output=True)
    if sol.status != 0:
        raise NumericError("Khas'minskii integration failed", message=sol.message)
    grid = np.linspace(0.0, r_max, n_out)
    grid[1:] = np.maximum(grid[1:], r_start)
    y = sol.sol(np.clip(grid, r_start, r_max))
    y[0, 0], y[1, 0] = 0.0, 0.0
    logg, q = y
    if np.min(q) < -1e-12:
        raise InternalError("Khas'minskii solution is not nondecreasing")
    lo = r_max / 10
    sel = grid >= lo
    slope = float(np.polyfit(grid[sel], logg[sel], 1)[0])
    over = np.nonzero(logg > LOG_FLOAT_MAX)[0]
    overflow_radius = float(grid[over[0]]) if over.size else None
    if overflow_radius is not None or slope > unbounded_slope:
        cls = Boundedness.UNBOUNDED
    elif slope < bounded_slope:
        cls = Boundedness.BOUNDED
    else:
        cls = Boundedness.INCONCLUSIVE
    est = RadialFunctionEstimate(
        model=model, lam=lam, grid=grid, log_values=logg, log_derivative=q,
        classification=cls, slope=slope,
        limit=float(math.exp(logg[-1])) if cls is Boundedness.BOUNDED else None,
        overflow_radius=overflow_radius, window=(lo, r_max), _dense=sol.sol,
    )
    est._r_start = r_start
    return est


@dataclass
class OYCertificate:
    """Bounded u with inf of Delta u over {u > u* - eta} positive.

    Such a u violates the weak maximum principle at infinity, certifying
    stochastic incompleteness.
    """

    u_star: float
    eta: float
    r_eta: float
    inf_laplacian: float
    expected: float
    radii: np.ndarray
    laplacian: np.ndarray

    @property
    def certifies(self):
        return self.inf_laplacian > 0

    @property
    def error(self):
        return abs(self.inf_laplacian - self.expected)


def _laplacian_fd(est, r, h):
    """Delta gamma = gamma'' + drift gamma', gamma'' by a fourth-order difference of gamma'."""
    offs = np.array([-2.0, -1.0, 1.0, 2.0]) * h
    wts = np.array([1.0, -8.0, 8.0, -1.0]) / (12 * h)
    pts = r[:, None] + offs[None, :]
    y = est._dense(pts.ravel())
    dg = (np.exp(y[0]) * y[1]).reshape(pts.shape)
    yc = est._dense(r)
    return dg @ wts + est.model.drift(r) * np.exp(yc[0]) * yc[1]


def oy_certificate(model, lam, eta, est=None, n_samples=200, h=1e-2):
    """Omori-Yau violation certificate built from a bounded Khas'minskii solution."""
    if not eta > 0:
        raise DomainError("eta must be positive")
    if est is None:
        est = khasminskii_solution(model, lam)
    if est.classification is not Boundedness.BOUNDED:
        raise PreconditionError(
            f"Khas'minskii solution is {est.classification.value}; no certificate exists"
        )
    u_star = float(math.exp(est.log_values[-1]))
    level = u_star - eta
    r_hi = model.r_max - 2 * h
    if level <= 1.0:
        r_eta = 0.0
    else:
        r_eta = optimize.brentq(lambda r: est.log_gamma(np.array([r]))[0] - math.log(level),
                                est._r_start, model.r_max, xtol=1e-14)
    lo = max(r_eta, 2 * h + est._r_start)
    radii = np.concatenate([[lo], np.geomspace(lo, r_hi, n_samples)[1:]])
    lap = _laplacian_fd(est, radii, h)
    if r_eta == 0.0:
        # the pole belongs to Omega_eta; Delta gamma(0) = lam gamma(0) = lam
        lap = np.concatenate([[lam], lap])
        radii = np.concatenate([[0.0], radii])
    return OYCertificate(u_star=u_star, eta=eta, r_eta=float(r_eta),
                         inf_laplacian=float(np.min(lap)),
                         expected=lam * max(level, 1.0), radii=radii, laplacian=lap)
