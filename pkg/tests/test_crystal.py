import itertools
import math

import numpy as np
import pytest

from crystaldislo.crystal import (CrystalError, build_crystal, check_conformity,
                                  cubic_slip_systems, elementary_path, fcc, fcc_slip_systems,
                                  integer_solve, lattice_ball, simple_cubic,
                                  validate_slip_systems)


def test_simple_cubic_counts(sc):
    assert len(simple_cubic(bond_cutoff=math.sqrt(2), cover=False).bonds) == 18
    assert len(sc.cluster) == 27
    assert len(sc.bonds) == 26


def test_fcc_nearest_neighbours():
    c = fcc()
    assert len(c.bonds) == 12
    lengths = np.linalg.norm(c.bonds @ c.basis, axis=1)
    np.testing.assert_allclose(lengths, 1 / math.sqrt(2))


def test_freudenthal_cover(sc):
    cov = sc.cover
    assert cov.n_simplices == 6
    np.testing.assert_allclose(cov.volumes, 1 / 6, rtol=0, atol=1e-15)
    assert check_conformity(cov)


def test_constants_ordered(sc):
    assert sc.d_cell <= sc.d_cluster <= sc.k_star


def test_k_star_oracle(sc):
    # independent evaluation of 1 + |A||A^-1| max|h| with Frobenius norms
    A = np.array([[0, 0, 1], [0, 1, 1], [1, 1, 1]], dtype=float).T
    hmax = math.sqrt(3)
    expect = 1 + np.linalg.norm(A, "fro") * np.linalg.norm(np.linalg.inv(A), "fro") * hmax
    assert sc.k_star == pytest.approx(expect, rel=1e-12)
    assert sc.k_star == pytest.approx(10.4868, abs=5e-5)


@pytest.mark.parametrize("h", [h for h in itertools.product([-1, 0, 1], repeat=3) if any(h)])
def test_elementary_paths(sc, h):
    p = elementary_path(sc, h)
    assert not p[0].any() and np.array_equal(p[-1], h)
    edges = {tuple(e) for e in sc.cover.edge_vectors()}
    for a, b in zip(p[:-1], p[1:]):
        assert tuple(b - a) in edges
    assert np.max(np.linalg.norm(p, axis=1)) <= sc.k_star


def test_elementary_path_antidiagonal(sc):
    p = elementary_path(sc, (-1, -1, -1))
    assert len(p) - 1 <= 3
    assert np.max(np.linalg.norm(p, axis=1)) < sc.k_star


def test_elementary_path_rejects_nonbond(sc):
    with pytest.raises(CrystalError):
        elementary_path(sc, (2, 0, 0))


def test_degenerate_basis():
    with pytest.raises(CrystalError, match="degenerate"):
        build_crystal([[1, 0, 0], [2, 0, 0], [0, 0, 1]], 1.5, 1.8)


def test_cover_needs_diagonal_bond():
    with pytest.raises(CrystalError, match="missing"):
        simple_cubic(bond_cutoff=1.0, cluster_cutoff=math.sqrt(3))


def test_lattice_ball_deterministic():
    a = lattice_ball(np.eye(3), 1.5)
    b = lattice_ball(np.eye(3), 1.5)
    assert np.array_equal(a, b)
    assert len(a) == 19


def test_integer_solve():
    assert np.array_equal(integer_solve([[1, 0, 0], [0, 1, 0], [0, 0, 1]], [2, -3, 5]), [2, -3, 5])


def test_cubic_slips_complete(sc, sc_slips):
    assert sc_slips.complete
    assert len(sc_slips.generators) == 3


def test_fcc_slips_complete():
    c = fcc()
    s = validate_slip_systems(c, fcc_slip_systems())
    assert s.n_systems == 12 and s.complete


def test_slip_errors(sc):
    with pytest.raises(CrystalError, match="b.m"):
        validate_slip_systems(sc, [((1, 0, 0), (1, 0, 0))])
    with pytest.raises(CrystalError, match="lattice vector"):
        validate_slip_systems(sc, [((0.5, 0, 0), (0, 1, 0))])
    with pytest.raises(CrystalError, match="dual lattice"):
        validate_slip_systems(sc, [((1, 0, 0), (0, 0.5, 0))])
    with pytest.raises(CrystalError, match="not complete"):
        validate_slip_systems(sc, [((1, 0, 0), (0, 1, 0)), ((0, 1, 0), (1, 0, 0)),
                                   ((0, 0, 1), (1, 0, 0))])


def test_slip_coefficients(sc, sc_slips):
    c = sc_slips.coefficients(sc, np.array([2.0, -1.0, 3.0]))
    g = sc_slips.generator_coords
    assert np.array_equal(np.asarray(c) @ g, [2, -1, 3])
