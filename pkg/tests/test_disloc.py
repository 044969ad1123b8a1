import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from crystaldislo.disloc import (DislocationMeasure, PolyhedralCurve, certify_dilute,
                                 check_admissible, classify_burgers, detect_core,
                                 segment_distance, square_loop)
from crystaldislo.fields import (DisplacementField, SiteBox, StrainField, circulation,
                                 discrete_gradient, plastic_from_slips)

LO, HI = np.zeros(3), np.ones(3)
coord = st.floats(-2, 2, allow_nan=False)
point = st.tuples(coord, coord, coord).map(np.array)


@given(p0=point, p1=point, q0=point, q1=point)
def test_segment_distance_oracle(p0, p1, q0, q1):
    s = np.linspace(0, 1, 201)
    P = p0 + s[:, None] * (p1 - p0)
    Q = q0 + s[:, None] * (q1 - q0)
    brute = np.min(np.linalg.norm(P[:, None] - Q[None], axis=-1))
    d = segment_distance(p0, p1, q0, q1)
    assert d <= brute + 1e-9
    # the sampled minimum overshoots by at most one grid step per curve
    step = (np.linalg.norm(p1 - p0) + np.linalg.norm(q1 - q0)) / 200
    assert brute <= d + step + 1e-9


def test_dilute_straight_line():
    c = PolyhedralCurve.line_through_box([0.5, 0.5, 0.5], [0.1, 0, 1], LO, HI)
    rep = certify_dilute(c, LO, HI, 0.5, 0.25)
    assert rep.passed and rep.length_bound > 0
    assert rep.length == pytest.approx(math.sqrt(1.01))


def test_dilute_clauses():
    short = PolyhedralCurve([((0.5, 0.5, 0), (0.5, 0.5, 1))])
    assert certify_dilute(short, LO, HI, 2.0, 0.25).clause == 1
    close = PolyhedralCurve([((0.5, 0.5, 0), (0.5, 0.5, 1)), ((0.52, 0.5, 0), (0.52, 0.5, 1))])
    assert certify_dilute(close, LO, HI, 0.5, 0.25).clause == 2
    vee = PolyhedralCurve([((0.5, 0.5, 0), (0.5, 0.5, 0.5)), ((0.5, 0.5, 0.5), (0.52, 0.5, 0))])
    r = certify_dilute(vee, LO, HI, 0.4, 0.25)
    assert r.clause == 3 and r.witness == (0, 1)
    dangling = PolyhedralCurve([((0.5, 0.5, 0), (0.5, 0.5, 0.6))])
    assert certify_dilute(dangling, LO, HI, 0.5, 0.25).clause == 4
    with pytest.raises(ValueError):
        certify_dilute(short, LO, HI, 0.5, 0.3)


def test_classify_burgers():
    bhat = np.eye(3)
    eps = 1 / 16
    r = classify_burgers(eps * np.array([2, -1, 0]) + 1e-9, bhat, eps)
    assert r.valid and r.coeffs.tolist() == [2, -1, 0]
    assert r.gap < 1e-8
    r = classify_burgers(eps * np.array([0.5, 0, 0]), bhat, eps)
    assert not r.valid and r.coeffs is None
    assert not classify_burgers(eps * np.array([5.0, 0, 0]), bhat, eps, max_coeff=2).valid


def test_square_loop_orientation():
    loop = square_loop(np.array([0, 0, 0]), 2, 1)
    P = loop.sites if hasattr(loop, "sites") else np.asarray(loop)
    assert np.array_equal(P[0], P[-1])
    # signed area about +e3 is positive
    area = 0.5 * sum(a[0] * b[1] - b[0] * a[1] for a, b in zip(P[:-1], P[1:]))
    assert area == pytest.approx(4.0)


def single_slip(sc, slips, box, site):
    f = StrainField(sc, box)
    zeta = []
    for h in f.canonical:
        w = box.window([np.zeros_like(h), h])
        z = np.zeros(tuple(s.stop - s.start for s in w) + (slips.n_systems,))
        if tuple(h) == (1, 0, 0):
            z[site + (2,)] = 1.0  # b = e2 on the plane normal to e1
        zeta.append(z)
    return plastic_from_slips(sc, box, slips, zeta)


def test_core_of_single_bond_defect(sc, sc_slips):
    eps = 0.125
    box = SiteBox((0, 0, 0), (26, 26, 26), eps)
    xp = single_slip(sc, sc_slips, box, (12, 12, 12))
    core = detect_core(xp)
    assert not core.empty
    # every flag is within k* eps of the defective bond and carries a witness
    mid = (np.array([12.5, 12, 12])) * eps
    assert np.max(np.linalg.norm(core.points() - mid, axis=1)) < sc.k_star * eps + eps
    s = core.sites()[0]
    c = circulation(xp, core.witness(s))
    assert np.linalg.norm(c) > 0


def test_exact_field_has_empty_core(sc):
    box = SiteBox((0, 0, 0), (24, 24, 24), 1 / 8)
    u = DisplacementField(box, np.random.default_rng(0).normal(size=(24, 24, 24, 3)), sc)
    assert detect_core(discrete_gradient(sc, u)).empty


def test_admissible_needs_m_above_kstar(sc):
    box = SiteBox((0, 0, 0), (24, 24, 24), 1 / 8)
    u = DisplacementField(box, np.zeros((24, 24, 24, 3)), sc)
    core = detect_core(discrete_gradient(sc, u))
    c = PolyhedralCurve.line_through_box([1.5, 1.5, 1.5], [0, 0.1, 1], np.zeros(3), np.full(3, 23 / 8))
    with pytest.raises(ValueError, match="below k"):
        check_admissible(core, c, np.zeros(3), np.full(3, 23 / 8), 1.0, 0.25, 5)
    rep = check_admissible(core, c, np.zeros(3), np.full(3, 23 / 8), 1.0, 0.25, 11)
    assert rep.admissible


def test_measure_json_and_balance():
    segs = [(np.array([0.2, 0.2, 0.5]), np.array([0.8, 0.2, 0.5])),
            (np.array([0.8, 0.2, 0.5]), np.array([0.5, 0.8, 0.5])),
            (np.array([0.5, 0.8, 0.5]), np.array([0.2, 0.2, 0.5]))]
    mu = DislocationMeasure(segs, np.array([[1, 0, 0]] * 3), np.eye(3))
    assert mu.is_divergence_free()
    back = DislocationMeasure.from_json(mu.to_json())
    np.testing.assert_array_equal(back.coeffs, mu.coeffs)
    assert back.total_mass() == pytest.approx(mu.total_mass())
    broken = DislocationMeasure(segs, np.array([[1, 0, 0], [1, 0, 0], [0, 1, 0]]), np.eye(3))
    assert not broken.is_divergence_free()
