import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from crystaldislo.cluster_energy import ElasticTensor, cubic_tensor, isotropic_tensor
from crystaldislo.extension import circle_circulation
from crystaldislo.linetension import (LineTension, QuadratureDisagreement, constant_energy,
                                      continuum_energy, line_frame, polygonal_field, psi_C,
                                      psi_rel_upper, straight_field)

ISO = isotropic_tensor(1.0, 0.3)
unit = st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 3).filter(
    lambda v: np.linalg.norm(v) > 0.2)


def test_isotropic_screw_and_edge():
    b = np.array([0, 0, 1.0])
    assert psi_C(ISO, b, [0, 0, 1]) == pytest.approx(1 / (4 * math.pi), rel=1e-6)
    assert psi_C(ISO, b, [1, 0, 0]) == pytest.approx(1 / (4 * math.pi * 0.7), rel=1e-6)


def test_cubic_antiplane_screw():
    # along a cube axis the screw decouples: psi = C44 |b|^2 / (4 pi)
    C = cubic_tensor(60.0, 12.0, 12.0)
    assert LineTension(C)([0, 0, 2.0], [0, 0, 1]) == pytest.approx(4 * 12 / (4 * math.pi), rel=1e-8)


@given(b=unit, t=unit)
def test_field_circulation_and_homogeneity(b, t):
    C = cubic_tensor(3.0, 1.2, 0.8)
    fld = straight_field(C, b, t, order=24)
    np.testing.assert_allclose(fld.circulation(), b, atol=1e-10 * np.linalg.norm(b))
    lt = LineTension(C, order=24)
    v = lt(b, t)
    assert v > 0
    assert lt(2.5 * np.asarray(b), t) == pytest.approx(6.25 * v, rel=1e-10)
    assert lt(-np.asarray(b), -np.asarray(t)) == pytest.approx(v, rel=1e-8)


def test_field_is_curl_free_and_equilibrated():
    C = cubic_tensor(3.0, 1.2, 0.8)
    fld = straight_field(C, [0.3, -0.2, 1.0], [0.2, 0.1, 1.0])
    # small loop away from the line: zero circulation
    c = circle_circulation(fld, fld.e1 * 1.0, fld.t, 0.3, n=128)
    assert np.abs(c).max() < 1e-10
    # loop around the line recovers b
    c = circle_circulation(fld, np.zeros(3), fld.t, 0.7, n=256)
    np.testing.assert_allclose(c, [0.3, -0.2, 1.0], atol=1e-9)
    # Div C beta = 0 by central differences
    x0 = 0.8 * fld.e1 + 0.3 * fld.e2
    h = 1e-4
    div = np.zeros(3)
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        sp = np.einsum("ijkl,kl->ij", C.C, fld(x0 + e)[0])
        sm = np.einsum("ijkl,kl->ij", C.C, fld(x0 - e)[0])
        div += (sp - sm)[:, j] / (2 * h)
    assert np.abs(div).max() < 1e-6 * np.abs(C.C).max()


def test_line_tension_matches_annulus_quadrature():
    C = cubic_tensor(3.0, 1.2, 0.8)
    b, t = np.array([0.5, 0.5, 0.0]), np.array([1.0, -1.0, 1.0])
    assert LineTension(C)(b, t) == pytest.approx(psi_C(C, b, t), rel=1e-8)


def test_annulus_disagreement_raises():
    with pytest.raises(QuadratureDisagreement):
        psi_C(ISO, [0, 0, 1.0], [0, 0, 1], tol=-1.0)


def test_rejects_bad_inputs():
    with pytest.raises(ValueError, match="positive definite"):
        straight_field(ElasticTensor(np.zeros((3, 3, 3, 3))), [1, 0, 0], [0, 0, 1])
    with pytest.raises(ValueError, match="nonzero"):
        straight_field(ISO, [0, 0, 0], [0, 0, 1])


def test_line_frame_orthonormal():
    for t in ([0, 0, 1], [0, 0, -1], [1, 2, 3]):
        e1, e2, tt = line_frame(t)
        Q = np.array([e1, e2, tt])
        np.testing.assert_allclose(Q @ Q.T, np.eye(3), atol=1e-14)
        assert np.linalg.det(Q) == pytest.approx(1.0)


def test_relaxed_bound_not_above_straight():
    C = cubic_tensor(3.0, 1.2, 0.8)
    b = np.array([1.0, 1.0, 0.0])
    rb = psi_rel_upper(C, b, [0, 0, 1.0], np.eye(3), heights=(0.0, 0.25))
    assert rb.value <= rb.identity_value
    assert rb.identity_value == pytest.approx(LineTension(C)(b, [0, 0, 1.0]))


def test_polygonal_field_balance():
    with pytest.raises(ValueError, match="not closed"):
        polygonal_field(ISO, [((0.5, 0.5, 0.1), (0.5, 0.5, 0.9))], [(0, 0, 1.0)], n=16)
    # a straight line across the periodic box is closed; a periodic field has
    # zero mean curl, so a disc of radius r sees b (1 - pi r^2 / L^2)
    f = polygonal_field(ISO, [((0.5, 0.5, 0.0), (0.5, 0.5, 1.0))], [(0, 0, 1.0)], n=32)
    for r in (0.2, 0.3):
        c = circle_circulation(lambda x: f.at(x), np.array([0.5, 0.5, 0.5]), [0, 0, 1.0], r, n=256)
        np.testing.assert_allclose(c, [0, 0, 1 - math.pi * r * r], atol=1e-2)


def test_continuum_energy_constant_field():
    A = np.array([[0.1, 0.2, 0], [0, 0.3, 0], [0, 0, -0.1]])
    beta = lambda x: np.broadcast_to(A, (len(x), 3, 3))
    lo, hi = -np.ones(3), np.ones(3)
    rho = 0.05
    full = constant_energy(A, ISO, lo, hi)
    # the removed tube along e3 has volume pi rho^2 * 2; the angular rule is
    # first order at the box corners
    ref = full - ISO.energy_density(A) * math.pi * rho ** 2 * 2
    got = continuum_energy(beta, ISO, lo, hi, np.zeros(3), [0, 0, 1.0], rho)
    assert got == pytest.approx(ref, rel=5e-4)
    with pytest.raises(ValueError):
        continuum_energy(beta, ISO, lo, hi, np.zeros(3), [0, 0, 1.0], 0.0)
