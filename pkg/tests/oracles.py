"""Independent reference computations shared by the tests."""
import itertools

import numpy as np
from scipy.integrate import quad


def lattice_sum_energy(A, k1=1.0, k2=0.5):
    """Spring energy of x -> A x summed over unordered bonds inside the
    {-1,0,1}^3 cluster, written without any package helper."""
    pts = list(itertools.product([-1, 0, 1], repeat=3))
    tot = 0.0
    for a, b in itertools.combinations(pts, 2):
        h = np.subtract(b, a).astype(float)
        r2 = h @ h
        k = {1: k1, 2: k2}.get(int(round(r2)), 0.0)
        if k:
            tot += k * (h @ A @ h) ** 2 / r2
    return tot


def cylinder_oracle(lam, p):
    """L^p ratio of the pulled-back identity on the unit cylinder:
    |D phi|^2 = (theta/r)^2 + (1 - lam)^2 + 1 with theta = lam + (1 - lam) r."""
    th = lambda r: lam + (1 - lam) * r
    num, _ = quad(lambda r: ((th(r) / r) ** 2 + (1 - lam) ** 2 + 1) ** (p / 2) * r, 0, 1, limit=200)
    den = 3 ** (p / 2) * (4 - 1) / 2
    return (num / den) ** (1 / p)


def ball_oracle(p):
    """Inner and whole-ball L^p ratios of the pulled-back identity (theta = 2 - r)."""
    num, _ = quad(lambda r: (2 * ((2 - r) / r) ** 2 + 1) ** (p / 2) * r * r, 0, 1, limit=200)
    den = 3 ** (p / 2) * (8 - 1) / 3
    return (num / den) ** (1 / p), ((num + den) / den) ** (1 / p)


def random_zeta(crystal, slips, box, rng, amp=3):
    """Integer-valued slip coefficients per canonical bond window."""
    out = []
    for h in crystal.canonical_bonds():
        w = box.window([np.zeros_like(h), h])
        shp = tuple(s.stop - s.start for s in w)
        out.append(rng.integers(-amp, amp + 1, size=shp + (slips.n_systems,)).astype(float))
    return out


def random_loop(crystal, box, rng, n_steps):
    """Random bond walk followed by an axis-aligned return, inside the box."""
    lo, hi = np.asarray(box.lo), np.asarray(box.hi) - 1
    x0 = rng.integers(lo, hi + 1)
    pts = [x0]
    for _ in range(n_steps):
        for _ in range(20):
            h = crystal.bonds[rng.integers(len(crystal.bonds))]
            y = pts[-1] + h
            if np.all(y >= lo) and np.all(y <= hi):
                pts.append(y)
                break
    cur = pts[-1].copy()
    for ax in rng.permutation(3):
        while cur[ax] != x0[ax]:
            cur = cur.copy()
            cur[ax] += np.sign(x0[ax] - cur[ax])
            pts.append(cur)
    return np.array(pts)


def slip_sum(crystal, slips, box, zeta, loop):
    """sum over steps of sum_l zeta_l (m_l . h) b_l, evaluated from the raw
    coefficient arrays (no package field access)."""
    canon = {tuple(int(v) for v in h): i for i, h in enumerate(crystal.canonical_bonds())}
    tot = np.zeros(3)
    for a, b in zip(loop[:-1], loop[1:]):
        h = b - a
        if tuple(int(v) for v in h) in canon:
            i, base, sgn, hc = canon[tuple(int(v) for v in h)], a, 1.0, h
        else:
            i, base, sgn, hc = canon[tuple(int(v) for v in -h)], b, -1.0, -h
        w = box.window([np.zeros_like(hc), hc])
        loc = tuple(int(x - l - s.start) for x, l, s in zip(base, box.lo, w))
        z = zeta[i][loc]
        mh = slips.normals @ (hc @ crystal.basis)
        tot += sgn * (z * mh) @ slips.burgers
    return tot
