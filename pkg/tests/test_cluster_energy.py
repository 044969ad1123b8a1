import itertools

import numpy as np
import pytest

from crystaldislo.cluster_energy import (ClusterEnergy, affine_cluster, affine_energy_closed_form,
                                         coercivity_constant, cubic_tensor, default_energy,
                                         elastic_tensor, isotropic_tensor, n_cluster_centers,
                                         nn_energy, total_energy, total_energy_bruteforce,
                                         verify_cluster_energy)
from crystaldislo.fields import AffineField, DisplacementField, GradientField, SiteBox
from oracles import lattice_sum_energy


def matrix_basis():
    out = []
    for k in range(9):
        E = np.zeros(9)
        E[k] = 1
        out.append(E.reshape(3, 3))
    return out


@pytest.fixture(scope="module")
def springs(sc):
    ce = default_energy(sc)
    return ce, elastic_tensor(sc, ce)


def test_tensor_matches_lattice_sum(springs):
    _, C = springs
    for A, B in itertools.product(matrix_basis(), repeat=2):
        # polarization of 1/2 C A.A = E[A] (unit cell volume)
        ref = 0.5 * (lattice_sum_energy(A + B) - lattice_sum_energy(A - B))
        assert np.sum(C.contract(A) * B) == pytest.approx(ref, abs=1e-10 * max(1.0, abs(ref)))


def test_spring_constants(springs):
    V = springs[1].voigt()
    assert V[0, 0] == pytest.approx(60.0, abs=1e-10)
    assert V[0, 1] == pytest.approx(12.0, abs=1e-10)
    assert V[3, 3] == pytest.approx(12.0, abs=1e-10)


def test_tensor_kills_skew(springs):
    _, C = springs
    for A in matrix_basis():
        assert np.abs(C.contract(A - A.T)).max() <= 1e-12
    assert C.min_sym_eigenvalue() > 0


def test_tensor_symmetries(springs):
    C = springs[1].C
    np.testing.assert_allclose(C, np.transpose(C, (2, 3, 0, 1)), atol=1e-12)
    np.testing.assert_allclose(C, np.transpose(C, (1, 0, 2, 3)), atol=1e-12)


def test_nn_degenerate_with_shear_witness(sc):
    ce = nn_energy(sc)
    alpha, wit = coercivity_constant(ce)
    assert alpha == 0.0
    assert np.linalg.norm(wit) > 0
    assert ce.energy(wit) <= 1e-10 * np.linalg.norm(wit) ** 2
    assert not verify_cluster_energy(ce).passed
    with pytest.raises(ValueError, match="not certified"):
        elastic_tensor(sc, ce)


def test_nn_nnn_coercive(sc):
    alpha, _ = coercivity_constant(default_energy(sc))
    assert alpha == pytest.approx(0.050119234471972106, rel=1e-9)


def test_rotation_invariance(sc):
    ce = default_energy(sc)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(ce.n_pairs, 3))
    S = rng.normal(size=(3, 3))
    S = S - S.T
    assert ce.energy(x + affine_cluster(sc, S)) == pytest.approx(ce.energy(x), rel=1e-12)


def test_from_matrix_rejects_asymmetric(sc):
    M = np.zeros((3, 3))
    M[0, 1] = 1
    with pytest.raises(ValueError):
        ClusterEnergy.from_matrix(sc, M)


def test_total_energy_vs_bruteforce(sc):
    box = SiteBox((0, 0, 0), (5, 4, 4), 0.5)
    u = np.random.default_rng(1).normal(size=(5, 4, 4, 3))
    xi = GradientField(sc, DisplacementField(box, u, sc))
    ce = default_energy(sc)
    assert total_energy(xi, ce) == pytest.approx(total_energy_bruteforce(xi, ce), rel=1e-12)


def test_affine_energy_count(sc):
    box = SiteBox((0, 0, 0), (6, 6, 6), 0.2)
    A = np.array([[1, .3, 0], [.3, -.5, .2], [0, .2, .7]])
    ce = default_energy(sc)
    u = DisplacementField(box, (box.coords() * 0.2 @ A.T).reshape(6, 6, 6, 3), sc)
    E = total_energy(GradientField(sc, u), ce)
    C = elastic_tensor(sc, ce)
    assert n_cluster_centers(box, sc) == 4 ** 3
    assert E == pytest.approx(affine_energy_closed_form(sc, box, ce, A), rel=1e-12)
    assert E == pytest.approx(64 * 0.2 ** 3 * C.energy_density(A), rel=1e-12)
    assert total_energy(AffineField(sc, box, A), ce) == pytest.approx(E, rel=1e-12)


def test_isotropic_and_cubic_tensors():
    iso = isotropic_tensor(2.0, 0.25)
    lam = 2 * 2.0 * 0.25 / 0.5
    V = iso.voigt()
    assert V[0, 0] == pytest.approx(lam + 4.0)
    assert V[0, 1] == pytest.approx(lam)
    assert V[3, 3] == pytest.approx(2.0)
    np.testing.assert_allclose(cubic_tensor(lam + 4, lam, 2.0).C, iso.C)
