import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from crystaldislo.cluster_energy import default_energy, elastic_tensor
from crystaldislo.fields import (DisplacementField, GradientField, SiteBox, StrainField,
                                 discrete_gradient, plastic_from_slips)
from crystaldislo.interp import (CoreNotEmptyError, affine_interp, best_fit_field,
                                 discrete_weights, face_jump_measure, interpolation_gap,
                                 mollified_energy_check, mollifier, mollify)


def affine_u(sc, box, A, b=(0.1, -0.2, 0.3)):
    X = box.coords() @ sc.basis * box.eps
    return DisplacementField(box, (X @ np.asarray(A).T + b).reshape(tuple(box.shape) + (3,)), sc)


@given(seed=st.integers(0, 2**31))
def test_affine_interp_reproduces_affine(sc, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(3, 3))
    box = SiteBox((0, 0, 0), (4, 4, 4), 0.25)
    I = affine_interp(sc, affine_u(sc, box, A))
    pts = rng.uniform(0.01, 0.74, size=(50, 3))
    np.testing.assert_allclose(I(pts), pts @ A.T + [0.1, -0.2, 0.3], atol=1e-12)
    np.testing.assert_allclose(I.gradients(), np.broadcast_to(A, I.gradients().shape), atol=1e-12)


def test_affine_interp_matches_sites(sc):
    box = SiteBox((0, 0, 0), (4, 4, 4), 0.5)
    u = DisplacementField(box, np.random.default_rng(0).normal(size=(4, 4, 4, 3)), sc)
    I = affine_interp(sc, u)
    np.testing.assert_allclose(I(np.array([[0.5, 0.5, 0.0], [0.5, 1.0, 0.5]])),
                               u.values[[1, 1], [1, 2], [0, 1]], atol=1e-12)


def test_best_fit_of_gradient_is_exact_and_jump_free(sc):
    A = np.array([[0.2, 1, 0], [0, -.3, .4], [.1, 0, .5]])
    box = SiteBox((0, 0, 0), (5, 5, 5), 0.2)
    L = best_fit_field(GradientField(sc, affine_u(sc, box, A)))
    v = L.values[np.isfinite(L.values[..., 0, 0])]
    np.testing.assert_allclose(v, np.broadcast_to(A, v.shape), atol=1e-12)
    assert face_jump_measure(L).total_mass <= 1e-10


def test_single_slip_produces_face_jumps(sc, sc_slips):
    box = SiteBox((0, 0, 0), (6, 6, 6), 0.25)
    f = StrainField(sc, box)
    zeta = []
    for h in f.canonical:
        w = box.window([np.zeros_like(h), h])
        z = np.zeros(tuple(s.stop - s.start for s in w) + (sc_slips.n_systems,))
        if tuple(h) == (1, 0, 0):
            z[2, 2, 2, :] = 1.0
        zeta.append(z)
    L = best_fit_field(plastic_from_slips(sc, box, sc_slips, zeta))
    assert face_jump_measure(L).total_mass > 0


def test_mollifier_unit_mass():
    # radial oracle: int_0^{1/2} psi(r) 4 pi r^2 dr = 1
    val, _ = quad(lambda r: float(mollifier(np.array([r, 0, 0]), 1.0)) * 4 * math.pi * r * r, 0, 0.5)
    assert val == pytest.approx(1.0, rel=1e-10)
    assert float(mollifier(np.array([0.5, 0, 0]))) == 0.0


def test_discrete_weights(sc):
    w = discrete_weights(sc, 1.0, 1 / 8)
    assert w.grid.sum() == pytest.approx(1.0, abs=1e-14)
    assert w.raw_sum == pytest.approx(1.0, abs=2e-2)
    # cell averaging makes the weights symmetric about the cell centre: w(y) = w(1 - y)
    g = w.grid[1:, 1:, 1:]
    np.testing.assert_allclose(g, g[::-1, ::-1, ::-1], atol=1e-15)
    with pytest.raises(ValueError):
        discrete_weights(sc, 0.1, 1 / 8)


def test_mollify_preserves_affine(sc):
    w = discrete_weights(sc, 0.5, 1 / 8)
    box = SiteBox((0, 0, 0), (20, 20, 20), 1 / 8)
    v = np.ones((20, 20, 20, 1)) * 3.0
    np.testing.assert_allclose(mollify(v, w), 3.0, rtol=1e-12)


def test_mollified_energy_preconditions(sc, sc_slips):
    ce = default_energy(sc)
    C = elastic_tensor(sc, ce)
    box = SiteBox((0, 0, 0), (45, 45, 45), 1 / 8)
    xi = GradientField(sc, affine_u(sc, box, np.eye(3) * 0.1))
    with pytest.raises(ValueError, match="5 delta"):
        mollified_energy_check(xi, ce, C, 0.5, SiteBox((10, 10, 10), (3, 3, 3), 1 / 8))
    f = StrainField(sc, box)
    zeta = []
    for h in f.canonical:
        w = box.window([np.zeros_like(h), h])
        z = np.zeros(tuple(s.stop - s.start for s in w) + (sc_slips.n_systems,))
        if tuple(h) == (1, 0, 0):
            z[22, 22, 22, :] = 1.0
        zeta.append(z)
    xp = plastic_from_slips(sc, box, sc_slips, zeta)
    with pytest.raises(CoreNotEmptyError):
        mollified_energy_check(xp, ce, C, 0.5, SiteBox((21, 21, 21), (3, 3, 3), 1 / 8))


def test_interpolation_gap_scales(sc):
    gaps = []
    for n in (8, 16):
        box = SiteBox((0, 0, 0), (n + 1,) * 3, 1 / n)
        X = box.coords() * box.eps
        u = DisplacementField(box, np.sin(X @ [1.0, 2.0, 0.5])[:, None].repeat(3, 1)
                              .reshape(n + 1, n + 1, n + 1, 3), sc)
        g, d = interpolation_gap(sc, u)
        gaps.append(g / d)
    # ||I u - J u||^2 / ||D I u||^2 ~ eps^2
    assert gaps[0] / gaps[1] == pytest.approx(4.0, rel=0.1)
