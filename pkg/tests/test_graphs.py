from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse

from stochlab.errors import DomainError, PreconditionError
from stochlab.graphs import (Lattice, WeightedGraph, complete_graph, cycle_graph,
                             decide_mass, discrete_exhaustion, exterior_solution,
                             graph_laplacian_apply, graph_triple_verdicts, kernel_mass,
                             kernel_properties, path_graph, sc_from_mass,
                             truncated_heat_kernel, z2_chain)
from stochlab.verdicts import Outcome, Property


def test_validation():
    with pytest.raises(DomainError):
        WeightedGraph(np.ones(2), sparse.csr_matrix([[0, 1], [2, 0]]))
    with pytest.raises(DomainError):
        WeightedGraph(np.ones(3), sparse.csr_matrix([[0, 1, 0], [1, 0, 0], [0, 0, 0]]))
    with pytest.raises(DomainError):
        WeightedGraph(np.array([1.0, 0.0]), sparse.csr_matrix([[0, 1], [1, 0]]))
    with pytest.raises(DomainError):
        WeightedGraph(np.ones(2), sparse.csr_matrix([[1, 1], [1, 0]]))


def test_laplacian_pointwise_and_constants():
    g = complete_graph(5)
    f = np.arange(5.0)
    full = g.laplacian(f)
    assert all(graph_laplacian_apply(g, f, x) == pytest.approx(full[x]) for x in range(5))
    assert np.all(g.laplacian(np.full(5, 3.0)) == 0)
    assert np.allclose(g.generator() @ f, full)


def test_lattice_counts_and_fluxes():
    g = Lattice(2).build(10)
    assert g.n == 2 * 10 * 11 + 1
    assert np.array_equal(g.layer_fluxes(), Lattice(2).layer_fluxes(10))
    assert g.layer_fluxes(exact=True)[0] == Fraction(4)


def test_z2_chain_fluxes():
    g = z2_chain().build(20)
    assert np.array_equal(g.layer_fluxes(), 8 * np.arange(20) + 4)


def test_missing_layers():
    with pytest.raises(PreconditionError):
        WeightedGraph(np.ones(2), sparse.csr_matrix([[0, 1], [1, 0]])).layer_fluxes()


def test_heat_kernel_on_whole_finite_graph_conserves_mass():
    g = complete_graph(5, mu=[1.0, 2.0, 1.0, 3.0, 1.0])
    k = truncated_heat_kernel(g, np.arange(5), 0.7)
    assert np.allclose(k.mass(), 1.0, atol=1e-12)
    assert np.allclose(k.p, k.p.T, atol=1e-14)
    with pytest.raises(DomainError):
        truncated_heat_kernel(g, np.arange(5), 0.0)


def test_kernel_properties_on_z2():
    p = kernel_properties(Lattice(2).build(12), 8, t=1.0)
    assert p.symmetry < 1e-12 and p.chapman_kolmogorov < 1e-10
    assert 0 < p.mass_min <= p.mass_max <= 1 + 1e-12 and p.positive


def test_kernel_mass_grows_with_truncation():
    g = Lattice(2).build(20)
    m = [kernel_mass(g, k, 1.0, at=g.root) for k in (4, 8, 16)]
    assert m[0] <= m[1] <= m[2] <= 1


def test_decide_mass():
    assert decide_mass([1e-3, 1e-5, 1e-8])[0] is Outcome.HOLDS
    assert decide_mass([0.5, 0.4, 0.39])[0] is Outcome.FAILS
    assert decide_mass([0.5, 0.2, 0.05])[0] is Outcome.INCONCLUSIVE
    assert decide_mass([0.1, 0.2, 0.3])[0] is Outcome.INCONCLUSIVE


def test_sc_on_z2():
    g = Lattice(2).build(30)
    assert sc_from_mass(g, [14, 21, 29]).outcome is Outcome.HOLDS


def test_exterior_solution_bounds_and_monotonicity():
    g = z2_chain().build(64)
    a = exterior_solution(g, 1, 16, 1.0)
    b = exterior_solution(g, 1, 32, 1.0)
    assert np.all((0 <= a) & (a <= 1)) and np.all(a <= b + 1e-14)
    ex = discrete_exhaustion(g, 1.0)
    assert ex.schedule[-1] == 64 and ex.converged


def test_triple_verdicts_z2_chain():
    v = graph_triple_verdicts(z2_chain(), horizon=256)
    assert all(x.outcome is Outcome.HOLDS for x in v.values())
    assert v[Property.FELLER].method == "discrete-exhaustion"


def test_path_and_cycle_builders():
    assert path_graph(4).C.nnz == 6
    assert cycle_graph(5).degree.tolist() == [2.0] * 5
    with pytest.raises(DomainError):
        cycle_graph(2)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=6, max_size=6),
       st.lists(st.floats(-10, 10), min_size=6, max_size=6),
       st.floats(-5, 5))
def test_laplacian_linearity(f, h, a):
    g = cycle_graph(6, mu=2.0, c=0.5)
    f, h = np.array(f), np.array(h)
    lhs = g.laplacian(a * f + h)
    rhs = a * g.laplacian(f) + g.laplacian(h)
    assert np.allclose(lhs, rhs, atol=1e-9)
    # symmetric with respect to mu
    assert np.dot(g.mu * g.laplacian(f), h) == pytest.approx(np.dot(f, g.mu * g.laplacian(h)),
                                                            abs=1e-8)
