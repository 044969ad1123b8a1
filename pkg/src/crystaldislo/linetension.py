"""Continuum dislocation fields and the line-tension energy.

Straight dislocations are solved by reducing equilibrium to the plane
orthogonal to the line: the displacement is ``a ln r + b phi / 2 pi + w(phi)``
with a trigonometric ``w``, and the strain is ``F(phi) / r``.  Closed
polygonal dislocation measures are solved on a periodic box with FFTs.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .cluster_energy import ElasticTensor


class QuadratureDisagreement(RuntimeError):
    def __init__(self, msg, values):
        super().__init__(msg)
        self.values = values


def line_frame(t):
    """Orthonormal ``(e1, e2, t)`` from the minimal-angle rotation taking
    ``e3`` to ``t``."""
    t = np.asarray(t, dtype=float)
    t = t / np.linalg.norm(t)
    z = np.array([0.0, 0.0, 1.0])
    c = float(z @ t)
    v = np.cross(z, t)
    s = np.linalg.norm(v)
    if s < 1e-14:
        Q = np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    else:
        K = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
        Q = np.eye(3) + K + K @ K * ((1 - c) / s ** 2)
    return Q[:, 0], Q[:, 1], t


def _check_tensor(C: ElasticTensor):
    if C.min_sym_eigenvalue() <= 0:
        raise ValueError("elastic tensor is not positive definite on symmetric matrices")


@dataclass
class StraightLineField:
    """Strain of a straight dislocation through ``origin`` along ``t``.

    ``beta(x) = F(phi) / r`` where ``(r, phi)`` are polar coordinates in the
    plane spanned by ``e1, e2``.
    """
    C: ElasticTensor
    b: np.ndarray
    t: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    a: np.ndarray          # coefficient of ln r
    P: np.ndarray          # (3, M) cosine coefficients of w
    Q: np.ndarray          # (3, M) sine coefficients of w
    condition: float
    residual: float
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def order(self):
        return self.P.shape[1]

    def _w(self, phi, deriv=0):
        k = np.arange(1, self.order + 1)
        kp = np.multiply.outer(phi, k)
        c, s = np.cos(kp), np.sin(kp)
        if deriv == 0:
            return c @ self.P.T + s @ self.Q.T
        if deriv == 1:
            return (-s * k) @ self.P.T + (c * k) @ self.Q.T
        return (-c * k ** 2) @ self.P.T + (-s * k ** 2) @ self.Q.T

    def profile(self, phi):
        """``F(phi)`` with ``beta = F / r``; shape ``(*phi, 3, 3)``."""
        phi = np.asarray(phi, dtype=float)
        c, s = np.cos(phi)[..., None], np.sin(phi)[..., None]
        n = c * self.e1 + s * self.e2
        tau = -s * self.e1 + c * self.e2
        g = self.b / (2 * np.pi) + self._w(phi, 1)
        return self.a[..., :, None] * n[..., None, :] + g[..., :, None] * tau[..., None, :]

    def polar(self, points):
        x = np.atleast_2d(np.asarray(points, dtype=float)) - self.origin
        p1, p2 = x @ self.e1, x @ self.e2
        return np.hypot(p1, p2), np.arctan2(p2, p1), x @ self.t

    def __call__(self, points):
        r, phi, _ = self.polar(points)
        return self.profile(phi) / r[:, None, None]

    def potential(self, points, cut=None):
        """Displacement ``a ln r + b theta / 2 pi + w(phi)``.

        ``theta`` is the angle from the in-plane direction ``cut`` taken in
        ``[0, 2 pi)``, so the potential jumps by ``-b`` when the cut ray is
        crossed in the direction of increasing angle.
        """
        r, phi, _ = self.polar(points)
        phi0 = 0.0
        if cut is not None:
            cut = np.asarray(cut, dtype=float)
            phi0 = math.atan2(cut @ self.e2, cut @ self.e1)
        theta = np.mod(phi - phi0, 2 * np.pi)
        return (np.log(r)[:, None] * self.a + theta[:, None] * self.b / (2 * np.pi)
                + self._w(phi))

    def circulation(self, n=256):
        """``oint beta tau dl`` on a circle about the line, counter-clockwise
        about ``t`` (independent of the radius)."""
        phi = 2 * np.pi * np.arange(n) / n
        F = self.profile(phi)
        tau = -np.sin(phi)[:, None] * self.e1 + np.cos(phi)[:, None] * self.e2
        # beta tau ds = F tau / r * r dphi
        return np.einsum("kij,kj->i", F, tau) * (2 * np.pi / n)

    def angular_energy(self, n=1024):
        """``int_0^{2 pi} 1/2 C F . F dphi`` by the trapezoidal rule."""
        phi = 2 * np.pi * np.arange(n) / n
        F = self.profile(phi)
        return float(np.mean(0.5 * np.einsum("kij,ijlm,klm->k", F, self.C.C, F)) * 2 * np.pi)

    def scaled(self, lam):
        return StraightLineField(self.C, lam * self.b, self.t, self.e1, self.e2, lam * self.a,
                                 lam * self.P, lam * self.Q, self.condition, self.residual,
                                 self.origin)

    def shifted(self, origin):
        return StraightLineField(self.C, self.b, self.t, self.e1, self.e2, self.a, self.P, self.Q,
                                 self.condition, self.residual, np.asarray(origin, dtype=float))


def _plane_operators(C, e1, e2):
    E = [e1, e2]
    return {(al, be): np.einsum("ikjl,k,l->ij", C.C, E[al], E[be])
            for al in range(2) for be in range(2)}


def straight_field(C: ElasticTensor, b, t, order=64, n_colloc=None, origin=None,
                   cond_limit=1e12):
    """Equilibrium strain of a straight dislocation ``(b, t)``.

    Parameters
    ----------
    order : int
        Number of harmonics of the angular part.
    n_colloc : int, optional
        Collocation angles (default ``4 * order``).

    Raises
    ------
    ValueError
        If ``C`` is not positive definite on symmetric matrices, ``b = 0``,
        or the collocation matrix is ill conditioned (condition number in the
        message).
    """
    _check_tensor(C)
    b = np.asarray(b, dtype=float)
    if np.linalg.norm(b) == 0:
        raise ValueError("Burgers vector must be nonzero")
    e1, e2, t = line_frame(t)
    M = int(order)
    N = int(n_colloc or 4 * M)
    phi = 2 * np.pi * np.arange(N) / N
    c, s = np.cos(phi), np.sin(phi)
    c2, s2 = np.cos(2 * phi), np.sin(2 * phi)
    K = _plane_operators(C, e1, e2)
    # r^2 d_al d_be of ln r, of phi (= coefficient of w'), and coefficient of w''
    g_ln = {(0, 0): -c2, (1, 1): c2, (0, 1): -s2, (1, 0): -s2}
    g_phi = {(0, 0): s2, (1, 1): -s2, (0, 1): -c2, (1, 0): -c2}
    g_w2 = {(0, 0): s ** 2, (1, 1): c ** 2, (0, 1): -s * c, (1, 0): -s * c}
    n_unk = 3 + 6 * M
    A = np.zeros((3 * N + 3, n_unk))
    rhs = np.zeros(3 * N + 3)
    k = np.arange(1, M + 1)
    kp = np.outer(phi, k)
    cos_k, sin_k = np.cos(kp), np.sin(kp)
    # w' and w'' of each basis function at the collocation angles
    d1_cos, d1_sin = -sin_k * k, cos_k * k
    d2_cos, d2_sin = -cos_k * k ** 2, -sin_k * k ** 2
    for (al, be), Kab in K.items():
        gl, gp, gw = g_ln[(al, be)], g_phi[(al, be)], g_w2[(al, be)]
        for i in range(3):
            rows = np.arange(N) * 3 + i
            for j in range(3):
                A[rows, j] += Kab[i, j] * gl
                rhs[rows] -= Kab[i, j] * gp * b[j] / (2 * np.pi)
                cols_P = 3 + j * M + np.arange(M)
                cols_Q = 3 + 3 * M + j * M + np.arange(M)
                A[np.ix_(rows, cols_P)] += Kab[i, j] * (gp[:, None] * d1_cos + gw[:, None] * d2_cos)
                A[np.ix_(rows, cols_Q)] += Kab[i, j] * (gp[:, None] * d1_sin + gw[:, None] * d2_sin)
    # zero net force on circles: mean over phi of C F n
    n_vec = c[:, None] * e1 + s[:, None] * e2
    tau = -s[:, None] * e1 + c[:, None] * e2
    Cn = np.einsum("ijkl,mj->mikl", C.C, n_vec)  # (N, i, k, l)
    f_a = np.einsum("mikl,ml->mik", Cn, n_vec)   # coefficient of a_k
    f_g = np.einsum("mikl,ml->mik", Cn, tau)     # coefficient of g_k = b/2pi + w'
    base = 3 * N
    A[base:base + 3, 0:3] = f_a.mean(axis=0)
    rhs[base:base + 3] = -f_g.mean(axis=0) @ b / (2 * np.pi)
    for j in range(3):
        A[base:base + 3, 3 + j * M:3 + (j + 1) * M] = np.einsum("mi,mk->ik", f_g[:, :, j], d1_cos) / N
        A[base:base + 3, 3 + 3 * M + j * M:3 + 3 * M + (j + 1) * M] = \
            np.einsum("mi,mk->ik", f_g[:, :, j], d1_sin) / N
    # scale columns so that high harmonics do not dominate the conditioning
    colscale = np.ones(n_unk)
    colscale[3:3 + 3 * M] = np.tile(1.0 / k ** 2, 3)
    colscale[3 + 3 * M:] = np.tile(1.0 / k ** 2, 3)
    As = A * colscale
    sol, *_ = np.linalg.lstsq(As, rhs, rcond=None)
    cond = float(np.linalg.cond(As))
    if not np.isfinite(cond) or cond > cond_limit:
        raise ValueError(f"angular collocation ill conditioned (condition number {cond:.3e})")
    x = sol * colscale
    res = float(np.linalg.norm(A @ x - rhs) / max(np.linalg.norm(rhs), 1e-300))
    a = x[:3]
    P = x[3:3 + 3 * M].reshape(3, M)
    Q = x[3 + 3 * M:].reshape(3, M)
    return StraightLineField(C, b, t, e1, e2, a, P, Q, cond, res,
                             np.zeros(3) if origin is None else np.asarray(origin, dtype=float))


# ---------------------------------------------------------------------------
# line tension

def _annulus_energy(fld: StraightLineField, r, R, h, n_r=16, n_phi=256, n_z=4):
    """``int`` of ``1/2 C beta . beta`` over the cylinder shell ``r < rho < R``,
    ``0 < z < h`` around the line, evaluated at physical points."""
    xg, wg = np.polynomial.legendre.leggauss(n_r)
    lr = 0.5 * (xg + 1) * math.log(R / r) + math.log(r)
    rho = np.exp(lr)
    w_r = 0.5 * wg * math.log(R / r) * rho  # d rho = rho d(ln rho)
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    zg, wz = np.polynomial.legendre.leggauss(n_z)
    z = 0.5 * (zg + 1) * h
    wz = 0.5 * wz * h
    RR, PP, ZZ = np.meshgrid(rho, phi, z, indexing="ij")
    W = (w_r[:, None, None] * (2 * np.pi / n_phi) * wz[None, None, :]) * RR
    pts = (fld.origin + RR[..., None] * (np.cos(PP)[..., None] * fld.e1 + np.sin(PP)[..., None] * fld.e2)
           + ZZ[..., None] * fld.t).reshape(-1, 3)
    B = fld(pts)
    dens = 0.5 * np.einsum("kij,ijlm,klm->k", B, fld.C.C, B)
    return float(np.sum(dens * W.ravel()))


def psi_C(C: ElasticTensor, b, t, r=0.1, R=1.0, h=1.0, check=((0.05, 2.0),), tol=0.005,
          order=64, field=None):
    """Line-tension energy per unit length of the straight dislocation ``(b, t)``.

    Computed as ``1 / (h ln(R/r))`` times the energy in a cylindrical shell,
    and recomputed on each ``check`` annulus.

    Raises
    ------
    QuadratureDisagreement
        If the annuli disagree by more than ``tol`` (relative).
    """
    fld = field if field is not None else straight_field(C, b, t, order=order)
    vals = [_annulus_energy(fld, r, R, h) / (h * math.log(R / r))]
    for r2, R2 in check:
        vals.append(_annulus_energy(fld, r2, R2, h) / (h * math.log(R2 / r2)))
    ref = vals[0]
    spread = max(abs(v - ref) for v in vals) / max(abs(ref), 1e-300)
    if spread > tol:
        raise QuadratureDisagreement(f"annulus values disagree by {spread:.2e}: {vals}", vals)
    return ref


class LineTension:
    """``psi_C(b, t) = b . G(t) b`` with ``G(t)`` cached per direction."""

    def __init__(self, C: ElasticTensor, order=64):
        self.C = C
        self.order = order
        self._cache = {}

    def matrix(self, t):
        t = np.asarray(t, dtype=float)
        t = t / np.linalg.norm(t)
        key = tuple(np.round(t, 12))
        if key not in self._cache:
            # polarization over three Burgers vectors; the solve is linear in b
            fields = [straight_field(self.C, e, t, order=self.order) for e in np.eye(3)]
            n = 512
            phi = 2 * np.pi * np.arange(n) / n
            Fs = [f.profile(phi) for f in fields]
            G = np.zeros((3, 3))
            for i in range(3):
                for j in range(3):
                    G[i, j] = np.mean(0.5 * np.einsum("kab,abcd,kcd->k", Fs[i], self.C.C, Fs[j])) * 2 * np.pi
            self._cache[key] = 0.5 * (G + G.T)
        return self._cache[key]

    def __call__(self, b, t):
        b = np.asarray(b, dtype=float)
        return float(b @ self.matrix(t) @ b)


@dataclass
class RelaxedBound:
    value: float
    identity_value: float
    witness: list  # (burgers, direction, length) triples
    upper_bound_only: bool = True


def psi_rel_upper(C: ElasticTensor, b, t, generators, depth=1, n_dirs=12,
                  heights=(0.0, 0.125, 0.25, 0.375, 0.5), tension: LineTension | None = None):
    """Upper bound for the relaxed line tension from explicit competitors.

    Competitors inside ``B_{1/2}`` joining ``-t/2`` to ``t/2``: the straight
    segment carrying ``b``, and splittings ``b = b1 + b2`` with ``b1`` on the
    chord and ``b2`` on a two-segment detour through an apex
    ``h (cos a n1 + sin a n2)``.  ``b1`` ranges over integer combinations of
    ``generators`` with coefficients in ``[-depth, depth]``.
    """
    lt = tension or LineTension(C)
    b = np.asarray(b, dtype=float)
    e1, e2, t = line_frame(t)
    ident = lt(b, t)
    best = (ident, [(b, t, 1.0)])
    if depth <= 0:
        return RelaxedBound(ident, ident, best[1])
    gens = np.asarray(generators, dtype=float)
    P0, P1 = -0.5 * t, 0.5 * t
    apexes = [np.zeros(3)]
    for hgt in heights:
        if hgt == 0:
            continue
        for k in range(n_dirs):
            ang = 2 * np.pi * k / n_dirs
            apexes.append(hgt * (math.cos(ang) * e1 + math.sin(ang) * e2))
    for coeffs in itertools.product(range(-depth, depth + 1), repeat=len(gens)):
        b1 = np.asarray(coeffs, dtype=float) @ gens
        b2 = b - b1
        if np.allclose(b1, 0) or np.allclose(b2, 0):
            continue
        e_chord = lt(b1, t)
        for p in apexes:
            if np.linalg.norm(p) > 0.5 + 1e-12:
                continue
            if np.allclose(p, 0):
                val = e_chord + lt(b2, t)
                wit = [(b1, t, 1.0), (b2, t, 1.0)]
            else:
                d1, d2 = p - P0, P1 - p
                l1, l2 = np.linalg.norm(d1), np.linalg.norm(d2)
                val = e_chord + lt(b2, d1) * l1 + lt(b2, d2) * l2
                wit = [(b1, t, 1.0), (b2, d1 / l1, l1), (b2, d2 / l2, l2)]
            if val < best[0] - 1e-14 * abs(ident):
                best = (val, wit)
    return RelaxedBound(min(best[0], ident), ident, best[1])


# ---------------------------------------------------------------------------
# polygonal measures on a periodic box

@dataclass
class SampledField:
    """Strain sampled on a periodic grid ``x = L * idx / N``."""
    C: ElasticTensor
    L: float
    values: np.ndarray  # (N, N, N, 3, 3)
    lines: list

    @property
    def n(self):
        return self.values.shape[0]

    def at(self, points):
        """Trilinear interpolation (periodic)."""
        P = np.atleast_2d(np.asarray(points, dtype=float)) / self.L * self.n
        i0 = np.floor(P).astype(int)
        f = P - i0
        out = np.zeros((len(P), 3, 3))
        for corner in itertools.product([0, 1], repeat=3):
            idx = (i0 + corner) % self.n
            w = np.prod(np.where(np.array(corner) == 1, f, 1 - f), axis=1)
            out += w[:, None, None] * self.values[idx[:, 0], idx[:, 1], idx[:, 2]]
        return out


def _segment_transform(a, d, kvec):
    """``int_segment exp(-i k.x) ds`` for all wave vectors (shape (..., 3))."""
    tvec = d - a
    ell = np.linalg.norm(tvec)
    tt = tvec / ell
    kt = kvec @ tt
    pa = np.exp(-1j * (kvec @ a))
    small = np.abs(kt * ell) < 1e-8
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(small, ell * (1 - 0.5j * kt * ell),
                       (1 - np.exp(-1j * kt * ell)) / (1j * np.where(small, 1.0, kt)))
    return pa * val, tt


def polygonal_field(C: ElasticTensor, segments, burgers, L=1.0, n=64, smoothing=2.0,
                    flux_tol=1e-9):
    """Periodic solution of ``curl beta = mu``, ``Div C beta = 0``.

    ``mu = sum_i burgers_i (x) t_i H^1`` on the segments, smoothed by a
    Gaussian of standard deviation ``smoothing`` grid cells.

    Raises
    ------
    ValueError
        If the Burgers flux does not balance (segments not closed on the
        torus) or a segment is shorter than two grid cells.
    """
    _check_tensor(C)
    segs = [(np.asarray(a, dtype=float), np.asarray(d, dtype=float)) for a, d in segments]
    bs = [np.asarray(b, dtype=float) for b in burgers]
    h = L / n
    # balance at vertices modulo the period
    bal = {}
    for (a, d), b in zip(segs, bs):
        if np.linalg.norm(d - a) < 2 * h:
            raise ValueError("grid too coarse for segment length")
        for p, sgn in ((a, -1.0), (d, 1.0)):
            key = tuple(np.round(np.mod(p, L) / h * 1e6).astype(np.int64))
            bal[key] = bal.get(key, 0.0) + sgn * b
    worst = max((np.linalg.norm(v) for v in bal.values()), default=0.0)
    if worst > flux_tol:
        raise ValueError(f"dislocation measure is not closed in the periodic box (imbalance {worst:.3e})")
    k1 = 2 * np.pi * np.fft.fftfreq(n, d=h)
    KX, KY, KZ = np.meshgrid(k1, k1, k1, indexing="ij")
    kv = np.stack([KX, KY, KZ], axis=-1)
    mu = np.zeros((n, n, n, 3, 3), dtype=complex)
    for (a, d), b in zip(segs, bs):
        ft, tt = _segment_transform(a, d, kv)
        mu += ft[..., None, None] * np.outer(b, tt)
    k2 = np.sum(kv ** 2, axis=-1)
    mu *= np.exp(-0.5 * k2 * (smoothing * h) ** 2)[..., None, None]
    mu /= L ** 3  # Fourier series coefficients
    k2s = np.where(k2 == 0, 1.0, k2)
    # particular solution row by row: beta0_i = i k x mu_i / |k|^2
    beta0 = 1j * np.cross(kv[..., None, :], mu) / k2s[..., None, None]
    # elastic correction: K(k) u = i C k beta0
    Ck = np.einsum("ijkl,...j->...ikl", C.C, kv)
    rhs = 1j * np.einsum("...ikl,...kl->...i", Ck, beta0)
    Kac = np.einsum("...ikl,...l->...ik", Ck, kv)
    Kac[k2 == 0] = np.eye(3)
    u = np.linalg.solve(Kac, rhs[..., None])[..., 0]
    beta = 1j * u[..., :, None] * kv[..., None, :] + beta0
    beta[k2 == 0] = 0.0
    vals = np.real(np.fft.ifftn(beta * n ** 3, axes=(0, 1, 2)))
    return SampledField(C, L, vals, list(zip(segs, bs)))


# ---------------------------------------------------------------------------
# continuum energies

def _ray_box(p, d, lo, hi):
    """Parameter interval ``[s0, s1]`` (s >= 0) of ``p + s d`` inside the box."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (lo - p) / d
        tb = (hi - p) / d
    tmin = np.where(d == 0, np.where((p >= lo) & (p <= hi), -np.inf, np.inf), np.minimum(ta, tb))
    tmax = np.where(d == 0, np.where((p >= lo) & (p <= hi), np.inf, -np.inf), np.maximum(ta, tb))
    s0 = np.max(tmin, axis=-1)
    s1 = np.min(tmax, axis=-1)
    return np.maximum(s0, 0.0), s1


def continuum_energy(beta, C: ElasticTensor, lo, hi, line_point, line_dir, rho,
                     n_z=24, n_phi=256, n_r=24):
    """``int_{box \\ B_rho(line)} 1/2 C beta . beta`` in cylindrical coordinates
    about a straight line.

    ``beta`` is a callable on ``(N, 3)`` points.  Every ray orthogonal to the
    line is clipped against the box exactly; radial integrals use Gauss rules
    in ``log r``.
    """
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    if rho <= 0:
        raise ValueError("exclusion radius must be positive")
    e1, e2, t = line_frame(line_dir)
    p0 = np.asarray(line_point, dtype=float)
    corners = np.array(list(itertools.product(*zip(lo, hi))))
    zs = (corners - p0) @ t
    z0, z1 = zs.min(), zs.max()
    xg, wg = np.polynomial.legendre.leggauss(n_z)
    xr, wr = np.polynomial.legendre.leggauss(n_r)
    phi = 2 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    dirs = np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2
    # z panels: split at the projections of the corners for accuracy
    breaks = np.unique(np.concatenate([[z0, z1], zs]))
    total = 0.0
    for za, zb in zip(breaks[:-1], breaks[1:]):
        if zb - za < 1e-14:
            continue
        zq = 0.5 * (xg + 1) * (zb - za) + za
        wq = 0.5 * wg * (zb - za)
        for zz, wz in zip(zq, wq):
            base = p0 + zz * t
            s0, s1 = _ray_box(np.broadcast_to(base, dirs.shape), dirs, lo, hi)
            s0 = np.maximum(s0, rho)
            ok = s1 > s0
            if not np.any(ok):
                continue
            a, bnd = np.log(s0[ok]), np.log(s1[ok])
            lr = 0.5 * (xr[None, :] + 1) * (bnd - a)[:, None] + a[:, None]
            rr = np.exp(lr)
            wrr = 0.5 * wr[None, :] * (bnd - a)[:, None] * rr * rr  # dr = r dlnr, area r dr
            pts = base + rr[..., None] * dirs[ok][:, None, :]
            B = beta(pts.reshape(-1, 3))
            dens = 0.5 * np.einsum("kij,ijlm,klm->k", B, C.C, B).reshape(rr.shape)
            total += wz * (2 * np.pi / n_phi) * float(np.sum(dens * wrr))
    return total


def constant_energy(A, C: ElasticTensor, lo, hi):
    """``int_box 1/2 C A . A`` for a constant field."""
    vol = float(np.prod(np.asarray(hi, dtype=float) - np.asarray(lo, dtype=float)))
    return vol * C.energy_density(A)
