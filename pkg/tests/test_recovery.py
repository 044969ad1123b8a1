import numpy as np
import pytest

from crystaldislo.cluster_energy import default_energy, elastic_tensor, total_energy
from crystaldislo.crystal import CrystalError
from crystaldislo.disloc import burgers_of_loop, extract_measure, square_loop
from crystaldislo.experiments import SCREW_SHIFT
from crystaldislo.fields import GradientField, SiteBox, is_exact
from crystaldislo.recovery import (LineDislocation, SurfaceHitError, build_recovery,
                                   build_slip_surfaces, crossing_counts, elastic_recovery,
                                   find_shift, regular_strain_error)

LO, HI = -np.ones(3), np.ones(3)


@pytest.fixture(scope="module")
def energy(sc):
    ce = default_energy(sc)
    return ce, elastic_tensor(sc, ce)


@pytest.fixture(scope="module")
def screw(sc, sc_slips, energy):
    ce, C = energy
    ln = LineDislocation([0, 0, 0], [0.125, 0, 1], [0, 0, 1])
    return build_recovery([ln], 1 / 16, LO, HI, sc, sc_slips, ce, C, m=11, shift=SCREW_SHIFT)


def test_surface_errors(sc, sc_slips):
    seg = (np.array([0, 0, -1.0]), np.array([0, 0, 1.0]))
    with pytest.raises(CrystalError):
        build_slip_surfaces([seg], [[0.5, 0, 0]], sc, sc_slips)
    with pytest.raises(ValueError, match="parallel"):
        build_slip_surfaces([seg], [[0, 0, 1.0]], sc, sc_slips)


def test_crossing_counts_antisymmetric(sc, sc_slips):
    seg = (np.array([0.03, 0.01, -5.0]), np.array([0.03, 0.01, 5.0]))
    surf = build_slip_surfaces([seg], [[1.0, 0, 0]], sc, sc_slips)
    # strip spans the line and +e1; its normal is e1 x e3 = -e2
    x = np.array([0.5, -0.05, 0.2])
    h = np.array([0, 1, 0])
    q = crossing_counts(x, h, 0.125, surf)
    assert q.tolist() == [-1, 0, 0]
    assert crossing_counts(x + 0.125 * h, -h, 0.125, surf).tolist() == [1, 0, 0]
    # bonds on the other side of the line do not cross
    assert crossing_counts(x - [1.0, 0, 0], h, 0.125, surf).tolist() == [0, 0, 0]


def test_find_shift_clears_sites(sc, sc_slips):
    ln = LineDislocation([0, 0, 0], [0, 0, 1], [1, 0, 0])
    surf = build_slip_surfaces([ln.segment()], [ln.burgers], sc, sc_slips)
    box = SiteBox.around(LO, HI, 1 / 8)
    from crystaldislo.recovery import box_crossing_counts
    with pytest.raises(SurfaceHitError):
        box_crossing_counts(surf, sc, box)
    y = find_shift(surf, sc, [box])
    assert np.all(y > 0) and np.all(y < 1 / 8)
    box_crossing_counts(surf.translated(y), sc, box)


def test_screw_core_and_burgers(screw, sc, sc_slips):
    d = screw.diagnostics
    assert d["core_sites"] > 0 and d["core_in_tube"]
    assert d["C_mu_measured"] <= 1.0
    mu = extract_measure(screw.xi, screw.curve, sc_slips, m=11, alpha=0.25, lo=LO, hi=HI)
    assert mu.coeffs.tolist() == [[0, 0, 1]]
    # a loop around the line at mid height carries eps b; a loop beside it none
    r = burgers_of_loop(screw.xi, square_loop(np.array([0, 0, 0]), 2, 6), sc_slips)
    assert r.coeffs.tolist() == [0, 0, 1]
    r = burgers_of_loop(screw.xi, square_loop(np.array([0, 5, 0]), 2, 2), sc_slips)
    assert r.coeffs.tolist() == [0, 0, 0] and r.gap < 1e-12


def test_screw_energy_consistent(screw, energy):
    assert screw.diagnostics["energy"] == pytest.approx(total_energy(screw.xi, energy[0]), rel=1e-12)


def test_regular_strain_matches_continuum(screw):
    assert regular_strain_error(screw, n_check=300) < 0.2


def test_no_lines_gives_exact_field(sc, sc_slips, energy):
    ce, C = energy
    v = lambda X: 0.1 * np.sin(X)
    res = build_recovery([], 1 / 8, LO, HI, sc, sc_slips, ce, C, elastic=v)
    assert res.diagnostics["core_empty"]
    assert is_exact(res.xi)
    u = elastic_recovery(v, 1 / 8, LO, HI, sc)
    scale = np.sqrt(np.log(8))
    np.testing.assert_allclose(res.u.values, scale * u.values, atol=1e-14)
    assert total_energy(GradientField(sc, u), ce) > 0
