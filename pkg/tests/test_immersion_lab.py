import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from stochlab.errors import DegenerateImmersionError, PreconditionError
from stochlab.profile import ModelManifold, WarpingProfile
from stochlab.immersion_lab import (ImmersedPatch, ambient_metric, christoffel, euclidean_space,
                                    geodesic_slice, graph_surface,
                                    graph_surface_mean_curvature, horosphere_patch,
                                    hyperbolic_space, induced_geometry,
                                    laplacian_composition_check, mean_curvature,
                                    mean_curvature_supremum, radial_power,
                                    supersolution_chain_check, sphere_patch)


def test_metric_is_identity_in_flat_space():
    y = np.array([0.3, -0.4, 1.2])
    assert np.allclose(ambient_metric(euclidean_space(), y), np.eye(3))
    assert np.allclose(christoffel(euclidean_space(), y), 0.0)


def test_hyperbolic_metric_radial_and_angular_parts():
    y = np.array([2.0, 0.0, 0.0])
    G = ambient_metric(hyperbolic_space(), y)
    assert G[0, 0] == pytest.approx(1.0)
    assert G[1, 1] == pytest.approx((math.sinh(2.0) / 2.0) ** 2)


def test_christoffel_against_finite_differences():
    amb = hyperbolic_space()
    y = np.array([0.7, -0.5, 1.1])
    h = 1e-5
    dG = np.stack([(ambient_metric(amb, y + h * e) - ambient_metric(amb, y - h * e)) / (2 * h)
                   for e in np.eye(3)], axis=-1)  # dG[i, j, l] = d_l G_ij
    Ginv = np.linalg.inv(ambient_metric(amb, y))
    G = christoffel(amb, y)
    ref = np.zeros((3, 3, 3))
    for k in range(3):
        for i in range(3):
            for j in range(3):
                ref[k, i, j] = 0.5 * sum(Ginv[k, l] * (dG[j, l, i] + dG[i, l, j] - dG[i, j, l])
                                         for l in range(3))
    assert np.allclose(G, ref, atol=1e-8)


def test_frame_is_orthonormal():
    patch = horosphere_patch()
    geo = induced_geometry(patch, np.array([2.0, 0.1]))
    gram = geo.frame.T @ geo.metric @ geo.frame
    assert np.allclose(gram, np.eye(2), atol=1e-10)


def test_mean_curvature_values():
    assert abs(mean_curvature(geodesic_slice(), np.array([2.0, 0.5])).norm) < 1e-12
    assert mean_curvature(horosphere_patch(), np.array([2.0, 0.0])).norm == pytest.approx(2.0,
                                                                                        rel=1e-8)
    assert mean_curvature(sphere_patch(), np.array([1.0, 1.0])).norm == pytest.approx(1.0,
                                                                                   rel=1e-8)


def test_graph_surface_closed_form():
    patch = graph_surface()
    for p in ([0.0, 0.0], [0.4, -0.3], [0.9, 0.9]):
        h = mean_curvature(patch, np.array(p)).norm
        assert h == pytest.approx(graph_surface_mean_curvature(*p), rel=1e-8)
    assert mean_curvature_supremum(patch).value == pytest.approx(4.0, rel=1e-6)


def test_degenerate_immersion_rejected():
    patch = ImmersedPatch(euclidean_space(), lambda p: np.array([p[0], p[0], 1.0]),
                          ((0.0, 1.0), (0.0, 1.0)), name="degenerate")
    with pytest.raises(DegenerateImmersionError):
        induced_geometry(patch, np.array([0.5, 0.5]))


def test_composition_residual_small():
    chk = laplacian_composition_check(geodesic_slice(), radial_power(2), np.array([2.0, 0.7]))
    assert chk.residual < 1e-5


def test_centered_sphere_laplacian_of_distance_is_zero():
    chk = laplacian_composition_check(sphere_patch(), radial_power(1), np.array([1.2, 1.0]))
    assert abs(chk.lhs) < 1e-8 and abs(chk.rhs) < 1e-12


def test_chain_preconditions():
    with pytest.raises(PreconditionError):
        supersolution_chain_check(sphere_patch(), 1.0, 3.0)
    cusp = ModelManifold(3, WarpingProfile.cusp(), 16.0)
    plane = ImmersedPatch(cusp, lambda p: np.array([p[0], p[1], 2.0]), ((0.0, 1.0), (0.0, 1.0)))
    with pytest.raises(PreconditionError):
        supersolution_chain_check(plane, 1.0, 1.0)


def test_chain_on_horosphere():
    rep = supersolution_chain_check(horosphere_patch(), 1.0, 1.0)
    assert rep.holds and rep.mu == pytest.approx(3.0, rel=1e-6)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mean_curvature_rotation_invariant(seed):
    Q = Rotation.random(random_state=seed).as_matrix()
    for patch, p in ((horosphere_patch(), [2.1, 0.2]), (sphere_patch(center=(3.0, 0.0, 0.0)),
                                                       [1.0, 1.2])):
        a = mean_curvature(patch, np.array(p)).norm
        b = mean_curvature(patch.rotated(Q), np.array(p)).norm
        assert abs(a - b) <= 1e-10
