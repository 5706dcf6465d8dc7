"""Rotationally symmetric model manifolds.

A model manifold of dimension ``m`` carries the metric ``dr^2 + sigma(r)^2 dtheta^2``
where ``dtheta^2`` is the round metric of the unit (m-1)-sphere.  Every quantity
the criteria engine needs (sphere area, ball volume, radial curvature, the radial
part of the Laplacian) is a function of the warping function ``sigma`` alone.

Profiles whose warping grows or decays like ``exp(a r^p)`` overflow a double long
before any interesting horizon, so every profile also exposes ``log_sigma`` and the
logarithmic derivatives ``sigma'/sigma`` and ``sigma''/sigma``; the solvers work
with those.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator, interp1d

from .errors import DomainError, NumericError


class ProfileKind(str, enum.Enum):
    EUCLIDEAN = "euclidean"
    HYPERBOLIC = "hyperbolic"
    POLYEXP = "polyexp"
    CUSP = "cusp"
    TABULATED = "tabulated"


def _smoothstep(s):
    """Quintic C^2 blend weight on [0, 1] and its first two derivatives."""
    s = np.clip(s, 0.0, 1.0)
    w = s**3 * (10 - 15 * s + 6 * s**2)
    w1 = 30 * s**2 * (1 - s) ** 2
    w2 = 60 * s * (1 - s) * (1 - 2 * s)
    return w, w1, w2


@dataclass(frozen=True)
class WarpingProfile:
    """Warping function sigma(r) of a model manifold.

    Kinds and parameters:

    * ``euclidean``: sigma = r.
    * ``hyperbolic``: sigma = sinh(k r)/k, curvature -k^2 (param ``k``).
    * ``polyexp``: sigma = r exp(a r^p) for r >= r0 (params ``a``, ``p``, ``r0``).
    * ``cusp``: sigma = exp(-a r^p) for r >= r0 (params ``a``, ``p``, ``r0``).
    * ``tabulated``: samples of (r, sigma, sigma', sigma'') with ``order`` 1 or 3.

    ``polyexp`` and ``cusp`` are joined to sigma = r on [r0/2, r0] with the quintic
    smoothstep w(s) = 10s^3 - 15s^4 + 6s^5, i.e. sigma = r + w (target - r), which is
    C^2 and leaves the tail untouched.
    """

    kind: ProfileKind
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", ProfileKind(self.kind))
        p = dict(self.params)
        if self.kind is ProfileKind.HYPERBOLIC:
            p.setdefault("k", 1.0)
            if p["k"] <= 0:
                raise DomainError("hyperbolic profile needs k > 0")
        elif self.kind in (ProfileKind.POLYEXP, ProfileKind.CUSP):
            p.setdefault("a", 1.0)
            p.setdefault("p", 3.0)
            p.setdefault("r0", 1.0)
            if p["a"] <= 0 or p["p"] <= 0 or p["r0"] <= 0:
                raise DomainError(f"{self.kind.value} profile needs a, p, r0 > 0")
        elif self.kind is ProfileKind.TABULATED:
            _check_table(p)
        object.__setattr__(self, "params", p)
        if self.kind is ProfileKind.TABULATED:
            object.__setattr__(self, "_interp", _build_table(p))

    # -- constructors -----------------------------------------------------
    @classmethod
    def euclidean(cls):
        return cls(ProfileKind.EUCLIDEAN)

    @classmethod
    def hyperbolic(cls, k=1.0):
        return cls(ProfileKind.HYPERBOLIC, {"k": float(k)})

    @classmethod
    def polyexp(cls, a=1.0, p=3.0, r0=1.0):
        return cls(ProfileKind.POLYEXP, {"a": float(a), "p": float(p), "r0": float(r0)})

    @classmethod
    def cusp(cls, a=1.0, p=3.0, r0=1.0):
        return cls(ProfileKind.CUSP, {"a": float(a), "p": float(p), "r0": float(r0)})

    @classmethod
    def tabulated(cls, r, sigma, dsigma, d2sigma, order=3, tol=1e-4):
        return cls(
            ProfileKind.TABULATED,
            {
                "r": np.asarray(r, float),
                "sigma": np.asarray(sigma, float),
                "dsigma": np.asarray(dsigma, float),
                "d2sigma": np.asarray(d2sigma, float),
                "order": int(order),
                "tol": float(tol),
            },
        )

    @classmethod
    def sample(cls, profile, r, order=3, tol=1e-4):
        """Tabulate another profile on the grid ``r``."""
        s, s1, s2 = profile.eval(np.asarray(r, float))
        return cls.tabulated(r, s, s1, s2, order=order, tol=tol)

    # -- evaluation -------------------------------------------------------
    @property
    def r_limit(self):
        if self.kind is ProfileKind.TABULATED:
            return float(self.params["r"][-1])
        return math.inf

    def _check(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(~(r > 0)):
            raise DomainError("warping profile evaluated at r <= 0")
        if self.kind is ProfileKind.TABULATED:
            t = self.params["r"]
            if np.any(r < t[0]) or np.any(r > t[-1] * (1 + 1e-12)):
                raise DomainError(
                    f"r outside tabulated range [{t[0]}, {t[-1]}]"
                )
        return r

    def eval(self, r):
        """Return (sigma, sigma', sigma'') at ``r``."""
        r = self._check(r)
        k = self.kind
        if k is ProfileKind.EUCLIDEAN:
            return r.copy(), np.ones_like(r), np.zeros_like(r)
        if k is ProfileKind.HYPERBOLIC:
            c = self.params["k"]
            with np.errstate(over="ignore"):
                s = np.sinh(c * r) / c
                return s, np.cosh(c * r), c * np.sinh(c * r)
        if k is ProfileKind.TABULATED:
            f = self._interp
            return f["sigma"](r), f["dsigma"](r), f["d2sigma"](r)
        with np.errstate(over="ignore", invalid="ignore"):
            t, t1, t2 = self._target(r)
            return self._blend(r, t, t1, t2)

    def _target(self, r):
        a, p = self.params["a"], self.params["p"]
        rp = r**p
        if self.kind is ProfileKind.POLYEXP:
            e = np.exp(a * rp)
            t = r * e
            t1 = e * (1 + a * p * rp)
            t2 = e * a * p * r ** (p - 1) * (1 + p + a * p * rp)
        else:
            e = np.exp(-a * rp)
            t = e
            t1 = -a * p * r ** (p - 1) * e
            t2 = e * (a * a * p * p * r ** (2 * p - 2) - a * p * (p - 1) * r ** (p - 2))
        return t, t1, t2

    def _blend(self, r, t, t1, t2):
        r0 = self.params["r0"]
        half = 0.5 * r0
        w, w1, w2 = _smoothstep((r - half) / half)
        w1 = w1 / half
        w2 = w2 / half**2
        inside = r < r0
        d = np.where(inside, t - r, 0.0)
        s = np.where(inside, r + w * d, t)
        s1 = np.where(inside, 1 + w * (t1 - 1) + w1 * d, t1)
        s2 = np.where(inside, w * t2 + 2 * w1 * (t1 - 1) + w2 * d, t2)
        return s, s1, s2

    def log_sigma(self, r):
        r = self._check(r)
        k = self.kind
        if k is ProfileKind.EUCLIDEAN:
            return np.log(r)
        if k is ProfileKind.HYPERBOLIC:
            c = self.params["k"]
            return c * r + np.log1p(-np.exp(-2 * c * r)) - np.log(2 * c)
        if k is ProfileKind.TABULATED:
            return np.log(self._interp["sigma"](r))
        a, p, r0 = self.params["a"], self.params["p"], self.params["r0"]
        tail = np.log(np.maximum(r, r0)) * (k is ProfileKind.POLYEXP) + (
            a if k is ProfileKind.POLYEXP else -a
        ) * np.maximum(r, r0) ** p
        near = np.minimum(r, r0 * (1 - 1e-15))
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            s_near = np.log(self.eval(near)[0])
        return np.where(r < r0, s_near, tail)

    def dlog_sigma(self, r):
        """sigma'/sigma, the mean curvature of geodesic spheres per dimension."""
        r = self._check(r)
        k = self.kind
        if k is ProfileKind.EUCLIDEAN:
            return 1.0 / r
        if k is ProfileKind.HYPERBOLIC:
            c = self.params["k"]
            return c / np.tanh(c * r)
        if k is ProfileKind.TABULATED:
            s, s1, _ = self.eval(r)
            return s1 / s
        a, p, r0 = self.params["a"], self.params["p"], self.params["r0"]
        rr = np.maximum(r, r0)
        if k is ProfileKind.POLYEXP:
            tail = 1.0 / rr + a * p * rr ** (p - 1)
        else:
            tail = -a * p * rr ** (p - 1)
        near = np.minimum(r, r0)
        with np.errstate(over="ignore", invalid="ignore"):
            s, s1, _ = self.eval(near)
        return np.where(r < r0, s1 / s, tail)

    def d2_ratio(self, r):
        """sigma''/sigma; minus the radial sectional curvature."""
        r = self._check(r)
        k = self.kind
        if k is ProfileKind.EUCLIDEAN:
            return np.zeros_like(r)
        if k is ProfileKind.HYPERBOLIC:
            return np.full_like(r, self.params["k"] ** 2)
        if k is ProfileKind.TABULATED:
            s, _, s2 = self.eval(r)
            return s2 / s
        a, p, r0 = self.params["a"], self.params["p"], self.params["r0"]
        rr = np.maximum(r, r0)
        if k is ProfileKind.POLYEXP:
            tail = a * p * rr ** (p - 2) * (1 + p + a * p * rr**p)
        else:
            tail = a * a * p * p * rr ** (2 * p - 2) - a * p * (p - 1) * rr ** (p - 2)
        near = np.minimum(r, r0)
        with np.errstate(over="ignore", invalid="ignore"):
            s, _, s2 = self.eval(near)
        return np.where(r < r0, s2 / s, tail)


def _check_table(p):
    r = np.asarray(p["r"], float)
    if r.ndim != 1 or r.size < 4 or np.any(np.diff(r) <= 0) or r[0] <= 0:
        raise DomainError("tabulated profile needs >= 4 strictly increasing positive radii")
    if np.any(np.asarray(p["sigma"]) <= 0):
        raise DomainError("tabulated sigma must be positive")
    if p.get("order", 3) not in (1, 3):
        raise DomainError("tabulated interpolation order must be 1 or 3")


def _build_table(p):
    r = p["r"]
    cols = ("sigma", "dsigma", "d2sigma")
    if p.get("order", 3) == 3:
        f = {c: PchipInterpolator(r, p[c], extrapolate=False) for c in cols}
    else:
        f = {c: interp1d(r, p[c], assume_sorted=True) for c in cols}
    # derivative consistency: sigma' against the slope of sigma, sigma'' against sigma'
    tol = p.get("tol", 1e-4)
    mid = 0.5 * (r[1:] + r[:-1])
    h = np.diff(r)
    for lo, hi in (("sigma", "dsigma"), ("dsigma", "d2sigma")):
        slope = np.diff(p[lo]) / h
        ref = f[hi](mid)
        scale = np.maximum(np.abs(ref), np.max(np.abs(p[hi])) * 1e-3 + 1e-12)
        bad = np.abs(slope - ref) / scale
        # the midpoint slope is itself only accurate to O(h^2 * f''')
        allowed = tol + 2 * np.max(h) ** 2
        if np.max(bad) > allowed:
            raise DomainError(
                f"tabulated {hi} inconsistent with {lo}: relative mismatch {np.max(bad):.3g}"
            )
    return f


@lru_cache(maxsize=None)
def unit_sphere_area(m):
    """Area of the unit (m-1)-sphere in R^m, 2 pi^{m/2} / Gamma(m/2)."""
    return 2 * math.pi ** (m / 2) / math.gamma(m / 2)


@dataclass(frozen=True)
class ModelManifold:
    dim: int
    profile: WarpingProfile
    r_max: float
    cartan_hadamard: bool = False
    name: str = ""

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 2:
            raise DomainError("model dimension must be an integer >= 2")
        if not self.r_max > 0:
            raise DomainError("r_max must be positive")
        if self.r_max > self.profile.r_limit * (1 + 1e-12):
            raise DomainError("r_max beyond the tabulated range of the profile")
        if self.cartan_hadamard:
            rs = np.linspace(self.r_max / 4096, self.r_max, 4096)
            if np.min(self.profile.d2_ratio(rs)) < -1e-12:
                raise DomainError(
                    "cartan_hadamard flag set but sigma'' < 0 somewhere on (0, r_max]"
                )

    @property
    def omega(self):
        return unit_sphere_area(self.dim)

    def _check(self, r):
        r = np.asarray(r, float)
        if np.any(~(r > 0)) or np.any(r > self.r_max * (1 + 1e-12)):
            raise DomainError(f"r outside (0, r_max={self.r_max}]")
        return r

    def log_sphere_area(self, r):
        r = np.asarray(r, float)
        return math.log(self.omega) + (self.dim - 1) * self.profile.log_sigma(r)

    def drift(self, r):
        """(m-1) sigma'/sigma: first-order coefficient of the radial Laplacian."""
        return (self.dim - 1) * self.profile.dlog_sigma(r)


def sigma_eval(profile, r):
    """(sigma, sigma', sigma'') at a single radius or an array of radii."""
    s = profile.eval(r)
    if np.ndim(r) == 0:
        return tuple(float(x) for x in s)
    return s


def sphere_area(model, r):
    r = model._check(r)
    s = model.profile.eval(r)[0]
    with np.errstate(over="ignore"):
        out = model.omega * s ** (model.dim - 1)
    return float(out) if np.ndim(out) == 0 else out


def ball_volume(model, r, tol=1e-12):
    """Volume of the geodesic ball B(p, r) by adaptive quadrature of the sphere area."""
    r = float(model._check(r))
    m = model.dim

    def area(t):
        return model.profile.eval(np.array([t]))[0][0] ** (m - 1)

    knots = [x for x in (model.profile.params.get("r0", 0) * 0.5,
                         model.profile.params.get("r0", 0)) if 0 < x < r]
    val, err, info = 0.0, 0.0, None
    edges = [0.0, *knots, r]
    for lo, hi in zip(edges[:-1], edges[1:]):
        v, e, info = integrate.quad(area, lo, hi, epsabs=0, epsrel=tol, limit=200,
                                    full_output=1)[:3]
        val += v
        err += e
    if not np.isfinite(val) or err > 1e3 * tol * max(abs(val), 1e-300):
        raise NumericError("ball volume quadrature did not converge",
                           value=val, error=err, r=r)
    return model.omega * val


def radial_curvature(model, r):
    """Radial sectional curvature -sigma''/sigma."""
    r = model._check(r)
    out = -model.profile.d2_ratio(r)
    return float(out) if np.ndim(out) == 0 else out


def radial_laplacian_apply(model, f, r):
    """Laplace-Beltrami operator of the radial extension of ``f`` at radius ``r``.

    ``f`` maps r to (value, first derivative, second derivative).
    """
    if np.any(np.asarray(r) <= 0):
        raise DomainError("radial Laplacian is not defined at the pole r = 0")
    r = model._check(r)
    _, d1, d2 = f(r)
    out = d2 + model.drift(r) * d1
    return float(out) if np.ndim(out) == 0 else out
