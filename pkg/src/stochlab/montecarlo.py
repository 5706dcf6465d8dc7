"""Radial Brownian motion on model manifolds.

The process is generated by the Laplacian itself (not Delta/2), so its radial part
solves

    dr = sqrt(2) dW + (m-1) sigma'/sigma (r) dt,

and E[exp(-lam tau_K)] is exactly the minimal solution of Delta h = lam h outside
B(p, K).  Paths are simulated in vectorised chunks; chunk ``c`` of a run with seed
``s`` draws from ``numpy.random.default_rng([s, c])``, so outcomes depend only on
(config, seed, chunk, r0) and chunks may be farmed out to workers in any order.

Boundary crossings between grid times are caught with the Brownian-bridge
correction: a step from a to b (both above K) crossed K with probability
exp(-(a-K)(b-K)/dt) for diffusion coefficient 2.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DomainError, NumericError, PreconditionError
from .profile import ModelManifold
from .radial_solver import ExteriorProblem, minimal_solution

SQRT2 = math.sqrt(2.0)


class Scheme(str, enum.Enum):
    EULER_MARUYAMA = "euler-maruyama"
    # additive noise makes Milstein's correction vanish; the drift is averaged
    # over a predictor step (stochastic Heun)
    MILSTEIN = "milstein-drift-corrected"


class Terminal(enum.IntEnum):
    HIT_INNER = 0
    EXPLODED = 1
    CENSORED = 2


@dataclass(frozen=True)
class RadialSDEConfig:
    model: ModelManifold
    scheme: Scheme = Scheme.EULER_MARUYAMA
    dt: float = 1e-3
    adaptive: bool = True
    dt_cap: float = 0.05
    seed: int = 0
    r_explode: float | None = None
    T: float = 20.0
    chunk_size: int = 8192
    dt_min: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not (self.dt > 0 and self.dt_cap >= self.dt):
            raise DomainError("need 0 < dt <= dt_cap")
        if self.r_explode is None:
            object.__setattr__(self, "r_explode", 0.9 * self.model.r_max)
        if self.r_explode > self.model.profile.r_limit:
            raise DomainError("explosion threshold beyond the profile's range")
        if not self.T > 0:
            raise DomainError("time horizon must be positive")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class PathOutcome:
    terminal: Terminal
    time: float
    final_r: float
    steps: int


@dataclass
class PathBatch:
    chunk: int
    terminal: np.ndarray
    time: np.ndarray
    final_r: np.ndarray
    steps: np.ndarray

    def outcomes(self):
        return [PathOutcome(Terminal(k), float(t), float(r), int(s))
                for k, t, r, s in zip(self.terminal, self.time, self.final_r, self.steps)]


def simulate_chunk(cfg, r0, K, n, chunk, T=None, r_explode=None):
    """Simulate ``n`` paths from r0 until they hit radius K, explode or reach T."""
    T = cfg.T if T is None else T
    r_explode = cfg.r_explode if r_explode is None else r_explode
    if not (K < r0 < r_explode):
        raise DomainError("need K_radius < r0 < r_explode")
    rng = np.random.default_rng([cfg.seed, chunk])
    drift = cfg.model.drift
    r = np.full(n, float(r0))
    t = np.zeros(n)
    steps = np.zeros(n, dtype=np.int64)
    kind = np.full(n, -1, dtype=np.int8)
    tau = np.zeros(n)
    active = np.arange(n)
    floor = 1e-12
    while active.size:
        ra, ta = r[active], t[active]
        b = drift(ra)
        if cfg.adaptive:
            dt = np.clip(0.01 * (ra - K) ** 2, cfg.dt, cfg.dt_cap) if K > 0 \
                else np.full(ra.shape, cfg.dt_cap)
            with np.errstate(divide="ignore"):
                dt = np.minimum(dt, 0.1 * ra / np.abs(b))
            if K > 0 and np.any(dt < cfg.dt_min):
                raise NumericError("time step underflow away from the pole",
                                   r_min=float(np.min(ra)))
            dt = np.maximum(dt, cfg.dt_min)
        else:
            dt = np.full(ra.shape, cfg.dt)
        dt = np.minimum(dt, T - ta)
        dW = rng.standard_normal(ra.size) * np.sqrt(dt)
        U = rng.random(ra.size)
        rn = ra + b * dt + SQRT2 * dW
        if cfg.scheme is Scheme.MILSTEIN:
            pred = np.maximum(np.abs(rn), floor)
            rn = ra + 0.5 * (b + drift(pred)) * dt + SQRT2 * dW
        rn = np.maximum(np.abs(rn), floor)
        tn = ta + dt
        steps[active] += 1
        hit = np.zeros(ra.size, dtype=bool)
        if K > 0:
            below = rn <= K
            with np.errstate(over="ignore", under="ignore"):
                bridge = np.exp(-(ra - K) * (rn - K) / dt)
            hit = below | (U < bridge)
        boom = ~hit & (rn >= r_explode)
        done_t = ~hit & ~boom & (tn >= T * (1 - 1e-14))
        # a crossing inside the step is dated at the step midpoint
        tau_hit = ta + 0.5 * dt
        r[active] = np.where(hit, K, rn)
        t[active] = tn
        idx = active[hit]
        kind[idx] = Terminal.HIT_INNER
        tau[idx] = tau_hit[hit]
        idx = active[boom]
        kind[idx] = Terminal.EXPLODED
        tau[idx] = tn[boom]
        idx = active[done_t]
        kind[idx] = Terminal.CENSORED
        tau[idx] = T
        active = active[~(hit | boom | done_t)]
    return PathBatch(chunk, kind, tau, r, steps)


def _chunk_sizes(n, size):
    full, rest = divmod(n, size)
    return [size] * full + ([rest] if rest else [])


def _run_chunk(args):
    cfg, r0, K, m, c, T, rx = args
    return simulate_chunk(cfg, r0, K, m, c, T=T, r_explode=rx)


def simulate_paths(cfg, r0, K, n, T=None, r_explode=None, first_chunk=0, workers=1):
    sizes = _chunk_sizes(n, cfg.chunk_size)
    jobs = [(cfg, r0, K, m, first_chunk + i, T, r_explode) for i, m in enumerate(sizes)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(_run_chunk, jobs))
    return [_run_chunk(j) for j in jobs]


def simulate_radial_path(cfg, r0, K_radius, path_index=0):
    """A single path; ``path_index`` selects the chunk stream."""
    return simulate_chunk(cfg, r0, K_radius, 1, path_index).outcomes()[0]


@dataclass(frozen=True)
class Estimate:
    """Sample mean with standard error, mergeable across disjoint chunk ranges.

    Sums are kept as exact rationals, so merging is associative and commutative
    bit-for-bit.
    """

    n_paths: int
    total: Fraction
    total_sq: Fraction
    chunks: tuple = ()

    @classmethod
    def from_samples(cls, x, chunks=()):
        x = np.asarray(x, float)
        tot = sum((Fraction(v) for v in x), Fraction(0))
        sq = sum((Fraction(v) * Fraction(v) for v in x), Fraction(0))
        return cls(int(x.size), tot, sq, tuple(sorted(chunks)))

    @classmethod
    def from_counts(cls, hits, n, chunks=()):
        return cls(int(n), Fraction(int(hits)), Fraction(int(hits)), tuple(sorted(chunks)))

    def merge(self, other):
        if set(self.chunks) & set(other.chunks):
            raise DomainError("estimates from overlapping seed ranges cannot be merged")
        return Estimate(self.n_paths + other.n_paths, self.total + other.total,
                        self.total_sq + other.total_sq,
                        tuple(sorted(self.chunks + other.chunks)))

    @property
    def mean(self):
        return float(self.total / self.n_paths)

    @property
    def stderr(self):
        n = self.n_paths
        if n < 2:
            return math.inf
        var = (self.total_sq - self.total * self.total / n) / (n - 1)
        return math.sqrt(max(float(var), 0.0) / n)

    @property
    def seed_range(self):
        return (self.chunks[0], self.chunks[-1]) if self.chunks else ()


def _indicator_estimate(batches, kind):
    parts = [Estimate.from_counts(int(np.sum(b.terminal == kind)), b.terminal.size, (b.chunk,))
             for b in batches]
    out = parts[0]
    for p in parts[1:]:
        out = out.merge(p)
    return out


def hitting_probability(cfg, r0, K_radius, t0, n, workers=1):
    """P[tau_K < t0] from r0."""
    if n < 1000:
        raise DomainError("hitting_probability needs n >= 1000")
    batches = simulate_paths(cfg, r0, K_radius, n, T=t0, workers=workers)
    return _indicator_estimate(batches, Terminal.HIT_INNER)


@dataclass
class FeynmanKacCheck:
    mc: Estimate
    upper: float
    bvp: float
    z_score: float
    inconclusive: bool
    batches: list = None

    @property
    def interval(self):
        return (self.mc.mean, self.upper)


def feynman_kac_crosscheck(cfg, problem, r0, n, bvp=None, workers=1):
    """Compare the Monte-Carlo E[exp(-lam tau_R)] with the minimal solution h(r0).

    Censored paths contribute 0 to the reported mean and exp(-lam T) to the upper
    end of the bracketing interval.
    """
    R, lam = problem.R, problem.lam
    if r0 < R:
        raise DomainError("r0 must lie outside the inner ball")
    if bvp is None:
        bvp = 1.0 if r0 == R else float(minimal_solution(problem)(r0))
    if r0 == R:
        est = Estimate.from_samples(np.ones(n))
        return FeynmanKacCheck(est, 1.0, bvp, 0.0, False, [])
    if n < 10_000:
        raise DomainError("feynman_kac_crosscheck needs n >= 1e4")
    batches = simulate_paths(cfg, r0, R, n, workers=workers)
    est = None
    censored = 0
    for b in batches:
        w = np.where(b.terminal == Terminal.HIT_INNER, np.exp(-lam * b.time), 0.0)
        censored += int(np.sum(b.terminal == Terminal.CENSORED))
        e = Estimate.from_samples(w, (b.chunk,))
        est = e if est is None else est.merge(e)
    upper = est.mean + censored / n * math.exp(-lam * cfg.T)
    se = est.stderr
    # all-equal samples carry no variance; 1/n is the resolution of n paths
    z = (est.mean - bvp) / max(se, 1.0 / n)
    return FeynmanKacCheck(est, upper, bvp, z, (upper - est.mean) > 6 * max(se, 1.0 / n),
                           batches)


@dataclass
class ExplosionEstimate:
    estimate: Estimate
    doubled: Estimate
    threshold: float
    threshold_dependent: bool

    @property
    def usable(self):
        return not self.threshold_dependent


def explosion_probability(cfg, r0, T, n, K_radius=0.0, workers=1):
    """P[r exceeds r_explode before T], with the threshold-doubling sensitivity check."""
    if n < 1000:
        raise DomainError("explosion_probability needs n >= 1000")
    batches = simulate_paths(cfg, r0, K_radius, n, T=T, workers=workers)
    est = _indicator_estimate(batches, Terminal.EXPLODED)
    doubled_threshold = 2 * cfg.r_explode
    if doubled_threshold > cfg.model.profile.r_limit:
        raise PreconditionError("doubled explosion threshold beyond the profile's range")
    batches2 = simulate_paths(cfg, r0, K_radius, n, T=T, r_explode=doubled_threshold,
                              workers=workers)
    est2 = _indicator_estimate(batches2, Terminal.EXPLODED)
    change = abs(est2.mean - est.mean)
    dependent = not (change <= est.stderr) if est.stderr > 0 else change != 0
    return ExplosionEstimate(est, est2, cfg.r_explode, dependent)


PATH_CSV_HEADER = ("seed", "chunk", "path", "terminal", "tau", "final_r", "steps")


def paths_to_csv(cfg, batches):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PATH_CSV_HEADER)
    for b in batches:
        for i, (k, t, r, s) in enumerate(zip(b.terminal, b.time, b.final_r, b.steps)):
            w.writerow((cfg.seed, b.chunk, i, Terminal(k).name, repr(float(t)),
                        repr(float(r)), int(s)))
    return buf.getvalue()
