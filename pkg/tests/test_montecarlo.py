import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochlab.errors import DomainError
from stochlab.montecarlo import (PATH_CSV_HEADER, Estimate, RadialSDEConfig, Scheme, Terminal,
                                 explosion_probability, feynman_kac_crosscheck,
                                 hitting_probability, paths_to_csv, simulate_chunk,
                                 simulate_paths, simulate_radial_path)
from stochlab.radial_solver import ExteriorProblem


def test_chunks_are_reproducible(e2):
    cfg = RadialSDEConfig(e2, seed=5)
    a = simulate_chunk(cfg, 2.0, 1.0, 500, chunk=3)
    b = simulate_chunk(cfg, 2.0, 1.0, 500, chunk=3)
    c = simulate_chunk(cfg, 2.0, 1.0, 500, chunk=4)
    assert np.array_equal(a.time, b.time) and np.array_equal(a.terminal, b.terminal)
    assert not np.array_equal(a.time, c.time)


def test_chunking_does_not_depend_on_workers(e2):
    cfg = RadialSDEConfig(e2, seed=1, chunk_size=256)
    one = simulate_paths(cfg, 2.0, 1.0, 700)
    two = simulate_paths(cfg, 2.0, 1.0, 700, workers=2)
    assert [b.chunk for b in one] == [0, 1, 2]
    assert all(np.array_equal(x.time, y.time) for x, y in zip(one, two))


def test_single_path_is_a_one_path_chunk(e2):
    cfg = RadialSDEConfig(e2, seed=9)
    out = simulate_radial_path(cfg, 2.0, 1.0, path_index=70)
    again = simulate_chunk(cfg, 2.0, 1.0, 1, chunk=70)
    assert out.time == again.time[0] and out.terminal == again.terminal[0]
    assert out == simulate_radial_path(cfg, 2.0, 1.0, path_index=70)


def test_terminals_are_consistent(e2):
    cfg = RadialSDEConfig(e2, seed=2, T=2.0)
    b = simulate_chunk(cfg, 2.0, 1.0, 2000, chunk=0)
    hit = b.terminal == Terminal.HIT_INNER
    assert np.all(b.time[hit] <= 2.0)
    assert np.all(b.final_r[b.terminal == Terminal.CENSORED] > 1.0)


def test_feynman_kac_small(h2):
    chk = feynman_kac_crosscheck(RadialSDEConfig(h2, seed=11), ExteriorProblem(h2, 1.0, 1.0),
                                 2.0, 20_000)
    assert abs(chk.z_score) < 4
    assert chk.interval[0] <= chk.interval[1]
    at_boundary = feynman_kac_crosscheck(RadialSDEConfig(h2), ExteriorProblem(h2, 1.0, 1.0),
                                         1.0, 10)
    assert at_boundary.mc.mean == 1.0


def test_milstein_scheme_agrees(e2):
    cfg = RadialSDEConfig(e2, scheme=Scheme.MILSTEIN, seed=4)
    chk = feynman_kac_crosscheck(cfg, ExteriorProblem(e2, 1.0, 1.0), 2.0, 20_000)
    assert abs(chk.z_score) < 4


def test_hitting_probability_is_monotone_in_time(e2):
    cfg = RadialSDEConfig(e2, seed=8)
    early = hitting_probability(cfg, 2.0, 1.0, 0.5, 2000)
    late = hitting_probability(cfg, 2.0, 1.0, 4.0, 2000)
    assert early.mean <= late.mean
    with pytest.raises(DomainError):
        hitting_probability(cfg, 2.0, 1.0, 1.0, 10)


def test_explosion_zero_on_complete_model(e2):
    ex = explosion_probability(RadialSDEConfig(e2, seed=1), 2.0, 1.0, 2000)
    assert ex.estimate.mean == 0 and not ex.threshold_dependent


def test_config_validation(e2):
    with pytest.raises(DomainError):
        RadialSDEConfig(e2, dt=0.1, dt_cap=0.01)
    with pytest.raises(DomainError):
        RadialSDEConfig(e2, seed=-1)
    with pytest.raises(DomainError):
        RadialSDEConfig(e2, T=0.0)


def test_paths_csv(e2):
    cfg = RadialSDEConfig(e2, seed=3)
    text = paths_to_csv(cfg, simulate_paths(cfg, 2.0, 1.0, 20))
    lines = text.splitlines()
    assert lines[0] == ",".join(PATH_CSV_HEADER) and len(lines) == 21


def test_overlapping_merge_rejected():
    a = Estimate.from_counts(3, 10, (0,))
    with pytest.raises(DomainError):
        a.merge(Estimate.from_counts(1, 10, (0,)))


samples = st.lists(st.floats(0, 1, allow_nan=False), min_size=2, max_size=30)


@settings(max_examples=60, deadline=None)
@given(samples, samples, samples)
def test_merge_associative_and_commutative(x, y, z):
    a, b, c = (Estimate.from_samples(v, (i,)) for i, v in enumerate((x, y, z)))
    left = a.merge(b).merge(c)
    right = a.merge(b.merge(c))
    swapped = c.merge(a).merge(b)
    assert left == right == swapped
    full = Estimate.from_samples(x + y + z)
    assert left.total == full.total and left.mean == full.mean


@settings(max_examples=60, deadline=None)
@given(samples)
def test_stderr_matches_numpy(x):
    e = Estimate.from_samples(x)
    ref = np.std(x, ddof=1) / math.sqrt(len(x))
    assert e.stderr == pytest.approx(ref, abs=1e-12)
    assert e.total == sum(Fraction(v) for v in x)


def test_zero_variance_z_score_is_finite(polyexp):
    # every path explodes, so the estimate is exactly 0 against a tiny positive BVP value
    chk = feynman_kac_crosscheck(RadialSDEConfig(polyexp, seed=1),
                                 ExteriorProblem(polyexp, 1.0, 1.0), 4.0, 10_000, bvp=1e-29)
    assert chk.mc.stderr == 0 and math.isfinite(chk.z_score) and abs(chk.z_score) < 1e-20
