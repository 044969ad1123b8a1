"""Acceptance suite: one PASS/FAIL line per criterion.

The lines are collected through the ``acceptance`` fixture and printed in
the terminal summary, so they show up in a plain ``pytest`` run.
"""
import itertools
import time

import numpy as np
import pytest

from oracles import lattice_sum_energy, random_loop, random_zeta, slip_sum

from crystaldislo.cluster_energy import coercivity_constant, default_energy, elastic_tensor, nn_energy
from crystaldislo.experiments import RUNNERS, validate_config
from crystaldislo.fields import (DiscretePath, DisplacementField, SiteBox, circulation,
                                 discrete_gradient, plastic_circulation_coeffs, plastic_from_slips,
                                 reconstruct_potential)


def _run(name, threads=1, **over):
    cfg = validate_config({"experiment": name, **over})
    t0 = time.perf_counter()
    tables, checks = RUNNERS[name](cfg, threads)
    return tables, checks, time.perf_counter() - t0


def _summary(checks):
    bad = [c["check"] for c in checks if not c["passed"]]
    return "all checks passed" if not bad else "failed: " + "; ".join(bad)


def _only(checks, criterion):
    out = [c for c in checks if c["criterion"] == criterion]
    assert out, f"runner produced no checks for criterion {criterion}"
    return out


@pytest.fixture(scope="module")
def screw_sweep():
    return _run("screw-scaling", threads=3)


def test_criterion_01_elastic_limit(acceptance):
    tables, checks, secs = _run("elastic-limit")
    checks = _only(checks, 1)
    ok = all(c["passed"] for c in checks) and secs < 60
    gaps = ", ".join(f"{r['rel_gap']:.4f}" for r in tables["elastic_limit"])
    acceptance(1, ok, f"relative gaps [{gaps}], {secs:.1f} s; {_summary(checks)}")
    assert secs < 60
    assert all(c["passed"] for c in checks), _summary(checks)


def test_criterion_02_elastic_tensor(acceptance, sc):
    ce = default_energy(sc)
    C = elastic_tensor(sc, ce)
    basis = [np.eye(9)[k].reshape(3, 3) for k in range(9)]
    skew = max(np.abs(C.contract(A - A.T)).max() for A in basis)
    lam = C.min_sym_eigenvalue()
    # polarization against the brute-force lattice sum (unit cell volume)
    err = 0.0
    for A, B in itertools.product(basis, repeat=2):
        ref = 0.5 * (lattice_sum_energy(A + B) - lattice_sum_energy(A - B))
        err = max(err, abs(np.sum(C.contract(A) * B) - ref) / max(1.0, abs(ref)))
    ok = skew <= 1e-12 and lam > 0 and err <= 1e-10
    acceptance(2, ok, f"skew {skew:.1e}, min sym eigenvalue {lam:.4f}, oracle error {err:.1e}")
    assert skew <= 1e-12
    assert lam > 0
    assert err <= 1e-10


def test_criterion_03_coercivity(acceptance, sc):
    nn = nn_energy(sc)
    a_nn, w = coercivity_constant(nn)
    a_full, _ = coercivity_constant(default_energy(sc))
    # the witness is a nonzero cluster deformation with zero NN energy
    null = np.linalg.norm(w) > 0 and nn.energy(w) <= 1e-10 * np.linalg.norm(w) ** 2
    ok = a_nn == 0.0 and null and a_full > 0
    _, checks, _ = _run("coercivity")
    ok = ok and all(c["passed"] for c in checks)
    acceptance(3, ok, f"NN alpha {a_nn:.1e} with witness, NN+NNN alpha {a_full:.6f}")
    assert a_nn == 0.0 and null
    assert a_full > 0
    assert all(c["passed"] for c in checks), _summary(checks)


def test_criterion_04_quantization(acceptance, sc, sc_slips):
    rng = np.random.default_rng(20260416)
    box = SiteBox((0, 0, 0), (4, 4, 4), 0.25)
    fails = 0
    for trial in range(1000):
        zeta = random_zeta(sc, sc_slips, box, rng)
        xp = plastic_from_slips(sc, box, sc_slips, zeta)
        loop = random_loop(sc, box, rng, int(rng.integers(1, 12)))
        c = plastic_circulation_coeffs(xp, DiscretePath(loop))
        circ = circulation(xp, DiscretePath(loop))
        ref = box.eps * slip_sum(sc, sc_slips, box, zeta, loop)
        good = (c.dtype.kind == "i" and np.array_equal(circ, box.eps * c @ xp.bhat)
                and np.array_equal(circ, ref))
        fails += not good
    acceptance(4, fails == 0, f"{fails} failures in 1000 random strains x closed paths")
    assert fails == 0


def test_criterion_05_exactness_roundtrip(acceptance, sc):
    rng = np.random.default_rng(5)
    box = SiteBox((0, 0, 0), (6, 6, 6), 1 / 6)
    worst = 0.0
    for trial in range(100):
        scale = 10.0 ** rng.uniform(-3, 3)
        u0 = rng.normal(scale=scale, size=(6, 6, 6, 3))
        xi = discrete_gradient(sc, DisplacementField(box, u0, sc))
        again = discrete_gradient(sc, reconstruct_potential(xi))
        err = max(np.abs(again.canonical_array(i) - xi.canonical_array(i)).max()
                  for i in range(len(xi.canonical)))
        worst = max(worst, err / scale)
    acceptance(5, worst <= 1e-10, f"max error / scale {worst:.1e} over 100 fields")
    assert worst <= 1e-10


def test_criterion_06_core_and_recovery(acceptance, screw_sweep):
    tables, checks, _ = screw_sweep
    checks = _only(checks, 6)
    rows = tables["screw_scaling"]
    ok = all(c["passed"] for c in checks)
    detail = ", ".join(f"1/{round(1 / r['eps'])}: core {r['core_sites']}, C_mu {r['C_mu']:.4f}, "
                       f"{r['seconds']:.0f} s" for r in rows)
    acceptance(6, ok, f"{detail}; {_summary(checks)}")
    assert ok, _summary(checks)


def test_criterion_07_energy_scaling(acceptance, screw_sweep):
    tables, checks, _ = screw_sweep
    checks = _only(checks, 7)
    rows = tables["screw_scaling"]
    ok = all(c["passed"] for c in checks)
    ratios = ", ".join(f"{r['ratio']:.2f}" for r in rows)
    acceptance(7, ok, f"E/(eps^2 ln(1/eps) psi L) = [{ratios}]; {_summary(checks)}")
    assert ok, _summary(checks)


def test_criterion_08_psi_isotropic(acceptance):
    _, checks, secs = _run("psi-table")
    checks = _only(checks, 8)
    ok = all(c["passed"] for c in checks)
    vals = ", ".join(f"{c['check']} {c['value']:.2e}" for c in checks if "vs" in c["check"])
    acceptance(8, ok, f"{vals}, {secs:.1f} s; {_summary(checks)}")
    assert ok, _summary(checks)


def test_criterion_09_prelog(acceptance):
    tables, checks, _ = _run("prelog")
    checks = _only(checks, 9)
    assert len(checks) >= 3
    ok = all(c["passed"] for c in checks)
    errs = ", ".join(f"{c['value']:.4f}" for c in checks)
    acceptance(9, ok, f"relative errors [{errs}]; {_summary(checks)}")
    assert ok, _summary(checks)


def test_criterion_10_mollified(acceptance):
    tables, checks, _ = _run("mollified", threads=4)
    checks = _only(checks, 10)
    ok = all(c["passed"] for c in checks)
    vals = ", ".join(f"{c['check']} = {c['value']:.4g}" for c in checks
                     if isinstance(c.get("value"), float))
    acceptance(10, ok, f"{vals}; {_summary(checks)}")
    assert ok, _summary(checks)


def test_criterion_11_extension(acceptance):
    tables, checks, _ = _run("extension", threads=2)
    checks = _only(checks, 11)
    ok = all(c["passed"] for c in checks)
    assert any("discrepancy" in c["check"] for c in checks)
    acceptance(11, ok, f"{len(checks)} checks; {_summary(checks)}")
    assert ok, _summary(checks)


def test_criterion_12_curl_mass(acceptance, screw_sweep):
    tables, checks, _ = screw_sweep
    checks = _only(checks, 12)
    ok = all(c["passed"] for c in checks)
    vals = ", ".join(f"{c['value']:.5f}" for c in checks)
    acceptance(12, ok, f"ratios [{vals}] vs golden {checks[0]['tolerance']}; {_summary(checks)}")
    assert ok, _summary(checks)
