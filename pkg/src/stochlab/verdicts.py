"""Tri-state verdicts for parabolicity, stochastic completeness and the Feller property.

Every criterion here is asymptotic, so each verdict may abstain.  The divergence
tests all go through one classifier that works in the variable u = log r, where
the harmonic tail 1/r becomes a constant and 1/(r log^2 r) a pure power, and fits
the log-integrand with the three-parameter model a + b log u + c u.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import DomainError, PreconditionError
from .profile import sphere_area
from .radial_solver import (
    Boundedness,
    ExteriorProblem,
    khasminskii_solution,
    minimal_solution,
    oy_certificate,
)


class Property(str, enum.Enum):
    PARABOLIC = "Parabolic"
    STOCHASTICALLY_COMPLETE = "StochasticallyComplete"
    FELLER = "Feller"


class Outcome(str, enum.Enum):
    HOLDS = "Holds"
    FAILS = "Fails"
    INCONCLUSIVE = "Inconclusive"


METHODS = frozenset({
    "flux-integral",
    "khasminskii",
    "minimal-solution-decay",
    "layer-flux-series",
    "kernel-mass",
    "discrete-exhaustion",
})


@dataclass
class Verdict:
    property: Property
    outcome: Outcome
    method: str
    value: float
    evidence: dict = field(default_factory=dict)
    diagnostic: str = ""

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unregistered criterion {self.method!r}")
        if self.outcome is Outcome.INCONCLUSIVE and not self.diagnostic:
            raise ValueError("an Inconclusive verdict must carry a diagnostic")

    @property
    def decided(self):
        return self.outcome is not Outcome.INCONCLUSIVE


class TailKind(str, enum.Enum):
    DIVERGENT = "Divergent"
    CONVERGENT = "Convergent"
    INCONCLUSIVE = "Inconclusive"


@dataclass
class TailClass:
    classification: TailKind
    fitted_exponent: float
    window: tuple
    value: float | None = None
    error: float | None = None
    detail: dict = field(default_factory=dict)


# thresholds of the divergence classifier
DIVERGENT_SLOPE = 0.05
POWER_MARGIN = 0.05
CAUCHY_RTOL = 1e-3


def _fit_tail(u, G):
    """Least-squares fit log G = a + b log u + c u and the integral of the fit beyond u[-1]."""
    A = np.column_stack([np.ones_like(u), np.log(u), u])
    (a, b, c), *_ = np.linalg.lstsq(A, np.log(G), rcond=None)
    # local decay exponent in log r at the window end must exceed 1
    decaying = c <= 1e-6 and -(b + c * u[-1]) > 1 + POWER_MARGIN
    if not decaying:
        return a, b, c, False, math.inf
    cc = min(c, 0.0)
    U = u[-1]
    tail, _ = integrate.quad(lambda x: math.exp(a + b * math.log(x) + cc * x - math.log(G[-1])),
                             U, math.inf, epsabs=0, epsrel=1e-12, limit=200)
    return a, b, c, True, tail * G[-1]


def _decide(u, G, F, quad_err=0.0):
    window = (float(math.exp(u[0])), float(math.exp(u[-1])))
    if not (np.all(np.isfinite(G)) and np.all(np.isfinite(F))):
        return TailClass(TailKind.DIVERGENT, math.inf, window,
                         detail={"reason": "integrand overflowed"})
    if G[-1] == 0.0:
        return TailClass(TailKind.CONVERGENT, math.inf, window, value=float(F[-1]),
                         error=quad_err, detail={"reason": "integrand underflowed to 0"})
    pos = G > 0
    u, G, F = u[pos], G[pos], F[pos]
    if u.size < 8:
        return TailClass(TailKind.INCONCLUSIVE, math.nan, window,
                         detail={"reason": "too few positive samples"})
    half = u.size // 2
    fits = [_fit_tail(u[: half + 1], G[: half + 1]), _fit_tail(u[half:], G[half:])]
    slope = float(np.polyfit(np.log(u), np.log(F), 1)[0])
    detail = {"cumulative_slope": slope, "power": fits[1][1], "rate": fits[1][2],
              "F_mid": float(F[half]), "F_end": float(F[-1])}
    if fits[0][3] and fits[1][3]:
        i_mid = F[half] + fits[0][4]
        i_end = F[-1] + fits[1][4]
        err = abs(i_end - i_mid) + quad_err
        detail.update(I_mid=float(i_mid), I_end=float(i_end))
        exponent = -fits[1][1] if abs(fits[1][2]) <= 1e-6 else math.inf
        if abs(i_end - i_mid) <= CAUCHY_RTOL * abs(i_end) + 1e-300:
            return TailClass(TailKind.CONVERGENT, exponent, window, value=float(i_end),
                             error=float(err), detail=detail)
        return TailClass(TailKind.INCONCLUSIVE, exponent, window, detail=detail)
    if not fits[1][3] and slope > DIVERGENT_SLOPE:
        return TailClass(TailKind.DIVERGENT, slope, window, detail=detail)
    return TailClass(TailKind.INCONCLUSIVE, slope, window, detail=detail)


def classify_improper_integral(integrand, r_lo, horizon, n_window=24):
    """Classify the integral of a positive function over [r_lo, infinity).

    The integral is computed up to ``horizon`` and judged on the last decade
    [horizon/10, horizon].  ``integrand`` may return inf (read as divergence) or 0
    (read as an exhausted tail).
    """
    if not (0 < r_lo < horizon):
        raise DomainError("need 0 < r_lo < horizon")
    U0, U = math.log(r_lo), math.log(horizon)
    start = U - math.log(10.0) if U - U0 >= math.log(10.0) else 0.5 * (U0 + U)
    start = max(start, 1e-3)
    if start >= U:
        return TailClass(TailKind.INCONCLUSIVE, math.nan, (r_lo, horizon),
                         detail={"reason": "horizon too small for a log-scale window"})
    u = np.linspace(start, U, n_window)

    def G(x):
        r = math.exp(x)
        with np.errstate(over="ignore"):
            return float(integrand(r)) * r

    knots = np.concatenate([[U0], u])
    F = np.empty(u.size)
    acc, qerr = 0.0, 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for i, (a, b) in enumerate(zip(knots[:-1], knots[1:])):
            if b > a:
                val, err = integrate.quad(G, a, b, epsabs=1e-14, epsrel=1e-12, limit=200)[:2]
                acc += val
                qerr += err
            F[i] = acc
        Gs = np.array([G(x) for x in u])
    return _decide(u, Gs, F, qerr)


def classify_series(terms, n_window=48):
    """Classify sum_k terms[k] (k = 0, 1, ...) on the last decade of available terms."""
    a = np.asarray(terms, float)
    K = a.size - 1
    if K < 20:
        return TailClass(TailKind.INCONCLUSIVE, math.nan, (0, K),
                         detail={"reason": "horizon too small"})
    partial = np.cumsum(a)
    ks = np.unique(np.round(np.geomspace(max(K / 10, 2), K, n_window)).astype(int))
    u = np.log(ks.astype(float))
    with np.errstate(over="ignore"):
        G = ks * a[ks]
    return _decide(u, G, partial[ks])


# -- continuous criteria -----------------------------------------------------

def flux_through_sphere(model, v, r):
    """Flux of grad v through the geodesic sphere of radius r: S(r) v'(r)."""
    _, d1, _ = v(r)
    return sphere_area(model, r) * d1


def parabolicity_verdict(model, r_lo=None):
    r_lo = min(1.0, model.r_max / 100) if r_lo is None else r_lo

    def inv_area(r):
        with np.errstate(over="ignore", under="ignore"):
            return float(np.exp(-model.log_sphere_area(np.array([r]))[0]))

    tail = classify_improper_integral(inv_area, r_lo, model.r_max)
    outcome = {TailKind.DIVERGENT: Outcome.HOLDS, TailKind.CONVERGENT: Outcome.FAILS}.get(
        tail.classification, Outcome.INCONCLUSIVE)
    value = tail.value if tail.value is not None else tail.fitted_exponent
    diag = "" if outcome is not Outcome.INCONCLUSIVE else f"flux integral undecided: {tail.detail}"
    return Verdict(Property.PARABOLIC, outcome, "flux-integral", float(value),
                   evidence={"tail": tail}, diagnostic=diag)


def volume_ratio(model, r_start=1e-4):
    """Callable r -> V(r)/S(r), integrated as log(V/S)' = S/V - drift."""
    m = model.dim

    def rhs(r, y):
        with np.errstate(over="ignore"):
            return [math.exp(-y[0]) - model.drift(r)]

    def jac(r, y):
        return [[-math.exp(-y[0])]]

    sol = integrate.solve_ivp(rhs, (r_start, model.r_max), [math.log(r_start / m)],
                              method="Radau", jac=jac, rtol=1e-9, atol=1e-12,
                              dense_output=True)

    def ratio(r):
        with np.errstate(over="ignore"):
            return np.exp(sol.sol(r)[0])

    return ratio


def volume_test(model, r_lo=None):
    """Divergence of the integral of V/S: the volume cross-check for stochastic completeness."""
    r_lo = min(1.0, model.r_max / 100) if r_lo is None else r_lo
    ratio = volume_ratio(model)
    return classify_improper_integral(lambda r: float(ratio(r)), r_lo, model.r_max)


def stochastic_completeness_verdict(model, lam=1.0, eta=0.1):
    """Khas'minskii test, certified by Omori-Yau when it fails, cross-checked by volume growth."""
    if not lam > 0:
        raise DomainError("lambda must be positive")
    est = khasminskii_solution(model, lam)
    vol = volume_test(model)
    evidence = {"gamma": est, "volume": vol, "slope": est.slope}
    primary = {Boundedness.UNBOUNDED: Outcome.HOLDS, Boundedness.BOUNDED: Outcome.FAILS}.get(
        est.classification, Outcome.INCONCLUSIVE)
    secondary = {TailKind.DIVERGENT: Outcome.HOLDS, TailKind.CONVERGENT: Outcome.FAILS}.get(
        vol.classification, Outcome.INCONCLUSIVE)
    if primary is Outcome.FAILS:
        cert = oy_certificate(model, lam, eta, est)
        evidence["certificate"] = cert
        if not cert.certifies:
            return Verdict(Property.STOCHASTICALLY_COMPLETE, Outcome.INCONCLUSIVE, "khasminskii",
                           est.slope, evidence,
                           diagnostic="bounded gamma but Omori-Yau certificate not positive")
    if primary is Outcome.INCONCLUSIVE:
        return Verdict(Property.STOCHASTICALLY_COMPLETE, primary, "khasminskii", est.slope,
                       evidence, diagnostic=f"log-gamma slope {est.slope:.3g} between thresholds")
    if secondary is not Outcome.INCONCLUSIVE and secondary is not primary:
        return Verdict(Property.STOCHASTICALLY_COMPLETE, Outcome.INCONCLUSIVE, "khasminskii",
                       est.slope, evidence,
                       diagnostic=f"method disagreement: khasminskii {primary.value}, "
                                  f"volume test {secondary.value}")
    return Verdict(Property.STOCHASTICALLY_COMPLETE, primary, "khasminskii", est.slope, evidence)


FELLER_TAIL_TOL = 1e-4
FELLER_STABILITY = 0.1


def decide_feller(tail, previous, converged, tol=FELLER_TAIL_TOL, mid=None):
    """Shared decision rule for radial and discrete exhaustions.

    ``mid`` is the limit at half the window end; a failure needs the profile to
    have flattened out there as well, which separates slow decay from a positive
    limit.
    """
    if not converged:
        return Outcome.INCONCLUSIVE, "exhaustion did not converge"
    if tail < tol and previous < tol:
        return Outcome.HOLDS, ""
    flat = mid is None or abs(tail - mid) <= FELLER_STABILITY * mid
    if tail >= tol and previous >= tol and abs(tail - previous) <= FELLER_STABILITY * previous \
            and flat:
        return Outcome.FAILS, ""
    return Outcome.INCONCLUSIVE, f"tail {tail:.3g} / previous {previous:.3g} not settled"


def feller_verdict(model, lam=1.0, R=1.0, tol=FELLER_TAIL_TOL, dr=0.01):
    if not 0 < R < model.r_max / 4:
        raise DomainError("Feller test needs 0 < R < r_max/4")
    sol = minimal_solution(ExteriorProblem(model, R, lam), dr=dr)
    mid = float(np.interp(0.5 * (R + sol.window_end), sol.grid, sol.limit_values))
    outcome, diag = decide_feller(sol.tail_value, sol.previous_tail, sol.converged, tol, mid)
    return Verdict(Property.FELLER, outcome, "minimal-solution-decay", sol.tail_value,
                   evidence={"solution": sol, "previous_tail": sol.previous_tail,
                             "log_slope": sol.log_slope()},
                   diagnostic=diag)


@dataclass
class SupersolutionReport:
    is_supersolution: bool
    comparison_holds: bool | None
    max_violation: float
    max_comparison_gap: float | None


def supersolution_comparison_check(model, lam, R, u, solution=None, rtol=1e-12):
    """Check Delta u <= lam u on the exterior grid and, if so, h <= u.

    ``u`` maps r to (value, u', u'').
    """
    u_R = u(np.array([R]))[0][0]
    if u_R < 1:
        raise PreconditionError("super-solution must satisfy u(R) >= 1")
    if solution is None:
        solution = minimal_solution(ExteriorProblem(model, R, lam))
    r = solution.grid[1:]
    val, d1, d2 = (np.broadcast_to(x, r.shape) for x in u(r))
    if np.any(val <= 0):
        raise PreconditionError("super-solution must be positive")
    lap = d2 + model.drift(r) * d1
    excess = lap - lam * val
    scale = np.abs(lap) + lam * np.abs(val)
    violation = float(np.max(excess / scale))
    ok = bool(np.all(excess <= rtol * scale))
    if not ok:
        return SupersolutionReport(False, None, violation, None)
    gap = float(np.max(solution.limit_values[1:] - val))
    return SupersolutionReport(True, gap <= 1e-8, violation, gap)


def radial_exp(rate, R):
    """u(r) = exp(-rate (r - R)) with its derivatives."""
    def f(r):
        v = np.exp(-rate * (np.asarray(r, float) - R))
        return v, -rate * v, rate * rate * v
    return f


def radial_constant(c):
    def f(r):
        r = np.asarray(r, float)
        return np.full_like(r, c), np.zeros_like(r), np.zeros_like(r)
    return f


@dataclass
class CombinedReport:
    model_id: str
    verdicts: dict
    agreement: dict
    contradictions: list


def combined_report(model, lam=1.0, R=1.0, mc=None, model_id=None):
    """Parabolicity, stochastic completeness and Feller verdicts with cross-checks.

    ``mc`` optionally holds Monte-Carlo evidence: ``explosion`` (an Estimate of the
    explosion probability) and ``hitting`` (list of (r0, Estimate) pairs).
    """
    verdicts = {
        Property.PARABOLIC: parabolicity_verdict(model),
        Property.STOCHASTICALLY_COMPLETE: stochastic_completeness_verdict(model, lam),
        Property.FELLER: feller_verdict(model, lam, R),
    }
    agreement, contradictions = {}, []
    par = verdicts[Property.PARABOLIC].outcome
    sc = verdicts[Property.STOCHASTICALLY_COMPLETE].outcome
    # parabolic manifolds are stochastically complete
    agreement["parabolic=>sc"] = not (par is Outcome.HOLDS and sc is Outcome.FAILS)
    if mc:
        est = mc.get("explosion")
        if est is not None and sc is not Outcome.INCONCLUSIVE:
            explodes = est.mean > 3 * est.stderr
            agreement["sc~explosion"] = explodes == (sc is Outcome.FAILS)
        sweep = mc.get("hitting")
        fel = verdicts[Property.FELLER].outcome
        if sweep and fel is Outcome.HOLDS:
            first, last = sweep[0][1], sweep[-1][1]
            agreement["feller~hitting-decay"] = last.mean <= first.mean + 3 * math.hypot(
                first.stderr, last.stderr)
    contradictions = [k for k, ok in agreement.items() if not ok]
    return CombinedReport(model_id or model.name or model.profile.kind.value, verdicts,
                          agreement, contradictions)


# -- serialisation -----------------------------------------------------------

CSV_HEADER = ("model", "property", "outcome", "method", "evidence")


def verdict_rows(model_id, verdicts):
    for v in verdicts:
        yield (model_id, v.property.value, v.outcome.value, v.method, f"{v.value:.12g}")


def verdicts_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    w.writerows(rows)
    return buf.getvalue()


def verdicts_to_text(model_id, verdicts):
    lines = []
    for v in verdicts:
        key = f"{model_id}.{v.property.value}"
        lines.append(f"{key}.outcome = {v.outcome.value}")
        lines.append(f"{key}.method = {v.method}")
        lines.append(f"{key}.evidence = {v.value:.12g}")
        if v.diagnostic:
            lines.append(f"{key}.diagnostic = {v.diagnostic}")
    return "\n".join(lines) + "\n"
