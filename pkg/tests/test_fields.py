import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import random_loop, random_zeta

from crystaldislo.crystal import CrystalError
from crystaldislo.fields import (DiscretePath, DisplacementField, GradientField, NotExactError,
                                 SiteBox, StrainField, circulation, discrete_gradient,
                                 find_nonexact, is_exact, plastic_circulation_coeffs,
                                 plastic_from_slips, reconstruct_potential)


def random_u(box, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    return rng.normal(scale=scale, size=tuple(box.shape) + (3,))


def random_plastic(sc, slips, box, seed):
    return plastic_from_slips(sc, box, slips, random_zeta(sc, slips, box, np.random.default_rng(seed)))


def test_gradient_antisymmetric(sc):
    box = SiteBox((0, 0, 0), (4, 4, 4), 0.25)
    xi = discrete_gradient(sc, DisplacementField(box, random_u(box, 0), sc))
    assert xi.antisymmetry_defect() == 0.0
    x = np.array([1, 1, 1])
    h = np.array([1, -1, 0])
    np.testing.assert_array_equal(xi.value(x, h), -xi.value(x + h, -h))


def test_gradient_values(sc):
    box = SiteBox((0, 0, 0), (3, 3, 3), 0.5)
    u = random_u(box, 1)
    xi = discrete_gradient(sc, DisplacementField(box, u, sc))
    np.testing.assert_allclose(xi.value((0, 1, 0), (1, 1, 1)), (u[1, 2, 1] - u[0, 1, 0]) / 0.5)


def test_csv_json_roundtrip(sc):
    box = SiteBox((-1, 0, 2), (3, 3, 3), 0.125)
    xi = discrete_gradient(sc, DisplacementField(box, random_u(box, 2), sc))
    back = StrainField.from_csv(sc, xi.to_csv())
    back2 = StrainField.from_json(sc, xi.to_json())
    for i in range(len(xi.canonical)):
        np.testing.assert_array_equal(back.canonical_array(i), xi.canonical_array(i))
        np.testing.assert_array_equal(back2.canonical_array(i), xi.canonical_array(i))
    assert back.box == box


def test_plastic_rejects_fractional_counts(sc, sc_slips):
    box = SiteBox((0, 0, 0), (2, 2, 2), 1.0)
    f = StrainField(sc, box)
    zeta = []
    for h in f.canonical:
        w = box.window([np.zeros_like(h), h])
        zeta.append(np.full(tuple(s.stop - s.start for s in w) + (sc_slips.n_systems,), 0.5))
    with pytest.raises(CrystalError, match="not an integer"):
        plastic_from_slips(sc, box, sc_slips, zeta)


@given(seed=st.integers(0, 2**31), n_steps=st.integers(1, 12))
def test_plastic_circulation_quantized(sc, sc_slips, seed, n_steps):
    box = SiteBox((0, 0, 0), (5, 5, 5), 0.25)
    xp = random_plastic(sc, sc_slips, box, seed)
    loop = DiscretePath(random_loop(sc, box, np.random.default_rng(seed), n_steps))
    c = plastic_circulation_coeffs(xp, loop)
    assert c.dtype.kind == "i"
    np.testing.assert_array_equal(circulation(xp, loop), 0.25 * c @ xp.bhat)


def test_circulation_requires_closed(sc):
    box = SiteBox((0, 0, 0), (3, 3, 3), 1.0)
    xi = discrete_gradient(sc, DisplacementField(box, random_u(box, 3), sc))
    with pytest.raises(ValueError):
        circulation(xi, DiscretePath(np.array([[0, 0, 0], [1, 0, 0]])))


@given(seed=st.integers(0, 2**31), scale=st.sampled_from([1e-3, 1.0, 1e3]))
def test_exactness_roundtrip(sc, seed, scale):
    box = SiteBox((0, 0, 0), (6, 6, 6), 1 / 6)
    xi = discrete_gradient(sc, DisplacementField(box, random_u(box, seed, scale), sc))
    assert is_exact(xi)
    u = reconstruct_potential(xi)
    assert not u.values[0, 0, 0].any()
    again = discrete_gradient(sc, u)
    err = max(np.abs(again.canonical_array(i) - xi.canonical_array(i)).max()
              for i in range(len(xi.canonical)))
    assert err <= 1e-10 * scale


def test_nonexact_witness(sc, sc_slips):
    box = SiteBox((0, 0, 0), (4, 4, 4), 0.25)
    f = StrainField(sc, box)
    zeta = []
    for i, h in enumerate(f.canonical):
        w = box.window([np.zeros_like(h), h])
        z = np.zeros(tuple(s.stop - s.start for s in w) + (sc_slips.n_systems,))
        if tuple(h) == (1, 0, 0):
            z[1, 1, 1, :] = 1.0
        zeta.append(z)
    xp = plastic_from_slips(sc, box, sc_slips, zeta)
    bad = find_nonexact(xp)
    assert bad is not None
    loop, c = bad
    np.testing.assert_allclose(circulation(xp, loop), c)
    with pytest.raises(NotExactError) as e:
        reconstruct_potential(xp)
    assert e.value.loop is not None


def test_gradient_field_matches_materialized(sc):
    box = SiteBox((0, 0, 0), (4, 3, 5), 0.5)
    u = DisplacementField(box, random_u(box, 4), sc)
    lazy, mat = GradientField(sc, u), discrete_gradient(sc, u)
    for i in range(len(lazy.canonical)):
        np.testing.assert_array_equal(lazy.canonical_array(i), mat.canonical_array(i))
