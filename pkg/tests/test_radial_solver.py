import math

import numpy as np
import pytest
from scipy import special

from stochlab.errors import DomainError, PreconditionError
from stochlab.radial_solver import (Boundedness, ExteriorProblem, default_schedule,
                                    khasminskii_solution, minimal_solution, oy_certificate,
                                    solve_truncated)


def test_truncated_solution_boundary_values(e2):
    s = solve_truncated(ExteriorProblem(e2, 1.0, 1.0), 8.0)
    assert s.values[0] == 1.0 and s.values[-1] == 0.0
    assert np.all(np.diff(s.values) <= 0)


def test_truncated_matches_bessel_combination(e2):
    R, Rn = 1.0, 6.0
    s = solve_truncated(ExteriorProblem(e2, R, 1.0), Rn, dr=0.005)
    a = special.i0(Rn)
    b = special.k0(Rn)
    exact = lambda r: (a * special.k0(r) - b * special.i0(r)) / (a * special.k0(R) - b * special.i0(R))
    r = np.linspace(R, Rn, 50)
    assert np.max(np.abs(s(r) - exact(r))) < 1e-4


def test_exhaustion_is_monotone_and_converges(h2):
    sol = minimal_solution(ExteriorProblem(h2, 1.0, 1.0))
    assert sol.converged
    vals = [it(sol.grid) for it in sol.iterates]
    for a, b in zip(vals[:-1], vals[1:]):
        assert np.all(a <= b + 1e-10)


def test_default_schedule_doubles():
    assert default_schedule(1.0, 20.0) == [2.0, 4.0, 8.0, 16.0]


def test_bad_schedules(e2):
    p = ExteriorProblem(e2, 1.0, 1.0)
    with pytest.raises(DomainError):
        minimal_solution(p, schedule=[4.0])
    with pytest.raises(DomainError):
        minimal_solution(p, schedule=[4.0, 3.0])
    with pytest.raises(DomainError):
        minimal_solution(p, schedule=[4.0, 128.0])


def test_khasminskii_classification(e2, polyexp):
    assert khasminskii_solution(e2, 1.0).classification is Boundedness.UNBOUNDED
    est = khasminskii_solution(polyexp, 1.0)
    assert est.classification is Boundedness.BOUNDED
    assert est.limit > 1


def test_khasminskii_e3_closed_form(e3):
    est = khasminskii_solution(e3, 1.0)
    r = np.linspace(0.1, 5.0, 30)
    assert np.allclose(est(r), np.sinh(r) / r, rtol=1e-6)


def test_oy_certificate(polyexp, e2):
    cert = oy_certificate(polyexp, 1.0, 0.1)
    assert cert.certifies and cert.error < 1e-6
    with pytest.raises(PreconditionError):
        oy_certificate(e2, 1.0, 0.1)
    with pytest.raises(DomainError):
        oy_certificate(polyexp, 1.0, 0.0)


def test_h2_decay_rate(h2):
    sol = minimal_solution(ExteriorProblem(h2, 1.0, 2.0))
    target = (-1 - math.sqrt(1 + 4 * 2.0)) / 2
    assert sol.log_slope() == pytest.approx(target, rel=0.05)
