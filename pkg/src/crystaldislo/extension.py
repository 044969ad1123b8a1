"""Curl-free extensions of strain fields into hollow cylinders and balls.

A field given on an annular cylinder ``(B'_{2 rho} \\ B'_rho) x (0, ell)`` or a
spherical shell ``B_{2 rho} \\ B_rho`` is pulled back into the hole by a radial
reflection ``phi``.  Because ``D phi`` is symmetric, ``D phi^T (beta o phi)`` is
curl-free wherever ``beta`` is, and tangential traces match on the interface.
All fields are callables ``points (..., 3) -> (..., d, 3)`` (rows are the
components whose curl is taken); norms are computed by quadrature.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

Sampler = Callable[[np.ndarray], np.ndarray]


def _fro_p(A, p):
    return np.sqrt(np.sum(A ** 2, axis=(-2, -1))) ** p


@dataclass
class HollowDomainField:
    """Field on a hollow cylinder (``kind="cylinder"``) or shell (``"ball"``).

    The cylinder axis is ``e3`` through the origin, heights ``(0, length)``;
    the ball is centred at the origin.  ``rays`` are unit vectors whose
    segments ``[rho, 2 rho) v`` are excluded from a shell.
    """
    beta: Sampler
    kind: str
    rho: float = 1.0
    length: float = 1.0
    rays: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        if self.kind not in ("cylinder", "ball"):
            raise ValueError(f"unknown hollow domain {self.kind!r}")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.kind == "cylinder" and self.length < self.rho:
            raise ValueError("cylinder length must be at least rho")
        r = np.asarray(self.rays, dtype=float).reshape(-1, 3)
        self.rays = r / np.linalg.norm(r, axis=1, keepdims=True) if len(r) else r

    def __call__(self, x):
        return self.beta(np.asarray(x, dtype=float))

    def axis_charge(self, n=256, heights=None):
        """Circulation around the axis on the mid-radius circle (cylinder)."""
        if self.kind != "cylinder":
            raise ValueError("axis charge is defined for cylinders")
        if heights is None:
            heights = self.length * np.array([0.25, 0.5, 0.75])
        vals = [circle_circulation(self.beta, np.array([0, 0, z]),
                                   np.array([0, 0, 1.0]), 1.5 * self.rho, n)
                for z in heights]
        vals = np.array(vals)
        return vals.mean(axis=0), float(np.ptp(vals, axis=0).max())

    def sup_norm(self, n=2000, seed=0):
        """Sampled maximum of ``|beta|`` on the hollow region."""
        pts = sample_hollow(self, n, seed)
        return float(np.sqrt(_fro_p(self.beta(pts), 2)).max())


def sample_hollow(fld: HollowDomainField, n, seed=0, shrink=0.02):
    """Random points in the hollow region, kept ``shrink * rho`` away from
    its boundary and from excluded rays."""
    rng = np.random.default_rng(seed)
    rho = fld.rho
    out = []
    while sum(len(o) for o in out) < n:
        m = 2 * n
        if fld.kind == "cylinder":
            r = rng.uniform((1 + shrink) * rho, (2 - shrink) * rho, m)
            a = rng.uniform(0, 2 * np.pi, m)
            z = rng.uniform(shrink * rho, fld.length - shrink * rho, m)
            pts = np.stack([r * np.cos(a), r * np.sin(a), z], axis=1)
        else:
            v = rng.normal(size=(m, 3))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            r = rng.uniform((1 + shrink) * rho, (2 - shrink) * rho, m)
            pts = v * r[:, None]
            for u in fld.rays:
                perp = pts - np.outer(pts @ u, u)
                pts = pts[(np.linalg.norm(perp, axis=1) > shrink * rho) | (pts @ u < 0)]
        out.append(pts)
    return np.concatenate(out)[:n]


# ---------------------------------------------------------------- radial maps

def _radial_parts(x, theta, dtheta, planar):
    """``phi(x)`` and ``D phi(x)`` for ``phi = x_hat theta(|x|)`` acting on
    all coordinates (ball) or on the first two (cylinder)."""
    x = np.asarray(x, dtype=float)
    xp = x.copy()
    if planar:
        xp[..., 2] = 0.0
    r = np.linalg.norm(xp, axis=-1)
    if np.any(r == 0):
        raise ValueError("the pullback is undefined on the singular set")
    u = xp / r[..., None]
    th, dth = theta(r), dtheta(r)
    y = u * th[..., None]
    if planar:
        y[..., 2] = x[..., 2]
    P = np.eye(3) - (np.diag([0, 0, 1.0]) if planar else 0)
    uu = u[..., :, None] * u[..., None, :]
    D = (P - uu) * (th / r)[..., None, None] + uu * dth[..., None, None]
    if planar:
        D = D + np.diag([0, 0, 1.0])
    return y, D


def cylinder_map(lam, rho=1.0):
    """``(phi, Dphi)`` callables of the cylinder pullback with parameter ``lam``."""
    def theta(r):
        return rho * (lam + (1 - lam) * r / rho)

    def dtheta(r):
        return np.full_like(r, 1 - lam)

    return lambda x: _radial_parts(x, theta, dtheta, True)


def ball_map(rho=1.0):
    def theta(r):
        return 2 * rho - r

    def dtheta(r):
        return -np.ones_like(r)

    return lambda x: _radial_parts(x, theta, dtheta, False)


@dataclass
class ExtendedField:
    """``beta`` on the hollow region, ``Dphi^T (beta o phi)`` inside."""
    source: HollowDomainField
    inner: Sampler
    lam: float | None = None
    scan: dict | None = None

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        rho = self.source.rho
        if self.source.kind == "cylinder":
            r = np.hypot(x[..., 0], x[..., 1])
        else:
            r = np.linalg.norm(x, axis=-1)
        inside = r < rho
        flat = x.reshape(-1, 3)
        res = None
        ins = inside.reshape(-1)
        if ins.any():
            vin = self.inner(flat[ins])
            res = np.empty((len(flat),) + vin.shape[1:])
            res[ins] = vin
        if (~ins).any():
            vout = self.source(flat[~ins])
            if res is None:
                res = np.empty((len(flat),) + vout.shape[1:])
            res[~ins] = vout
        return res.reshape(x.shape[:-1] + res.shape[1:])


def _pullback(beta: Sampler, chart):
    def inner(x):
        y, D = chart(x)
        # D phi is symmetric, so rows of beta(y) @ D are Dphi^T applied to rows
        return beta(y) @ D
    return inner


# ------------------------------------------------------------- quadrature

def _gauss_jacobi(a, b, n, power):
    """Nodes/weights on ``(a, b)`` for the weight ``(t - a)^power``."""
    x, w = roots_jacobi(n, 0.0, power)
    t = a + (b - a) * (x + 1) / 2
    return t, w * ((b - a) / 2) ** (1 + power)


def _gauss(a, b, n):
    x, w = roots_legendre(n)
    return a + (b - a) * (x + 1) / 2, w * (b - a) / 2


def cylinder_lp(fn: Sampler, p, r0, r1, z0, z1, n_r=48, n_phi=96, n_z=16,
                singular=False, chunk=200_000):
    """``int |fn|^p`` over ``{r0 < r < r1} x (z0, z1)``.

    With ``singular=True`` the integrand is taken to behave like ``r^{-p}``
    near the axis and the radial rule carries the weight ``r^{1-p}``.
    """
    if singular:
        if p >= 2:
            raise ValueError("r^{-p} singularity is not integrable for p >= 2")
        # |f|^p r dr = r^{1-p} (r^p |f|^p) dr
        r, rad = _gauss_jacobi(0.0, r1, n_r, 1.0 - p)
        fac = r ** p
    else:
        r, wr = _gauss(r0, r1, n_r)
        rad = wr * r
        fac = np.ones_like(r)
    a = 2 * np.pi * np.arange(n_phi) / n_phi
    z, wz = _gauss(z0, z1, n_z)
    R, A, Z = np.meshgrid(r, a, z, indexing="ij")
    pts = np.stack([R * np.cos(A), R * np.sin(A), Z], axis=-1).reshape(-1, 3)
    vals = np.concatenate([_fro_p(fn(pts[i:i + chunk]), p)
                           for i in range(0, len(pts), chunk)])
    vals = vals.reshape(R.shape) * fac[:, None, None]
    W = rad[:, None, None] * (2 * np.pi / n_phi) * wz[None, None, :]
    return float(np.sum(W * vals))


def shell_lp(fn: Sampler, p, r0, r1, n_r=40, n_theta=48, n_phi=96,
             singular=False, chunk=200_000):
    """``int |fn|^p`` over ``{r0 < |x| < r1}``; ``singular`` as in
    :func:`cylinder_lp` with weight ``r^{2-p}``."""
    if singular:
        if p >= 3:
            raise ValueError("r^{-p} singularity is not integrable for p >= 3")
        r, wr = _gauss_jacobi(0.0, r1, n_r, 2.0 - p)
        fac = r ** p
    else:
        r, wr = _gauss(r0, r1, n_r)
        wr = wr * r ** 2
        fac = np.ones_like(r)
    c, wc = roots_legendre(n_theta)
    a = 2 * np.pi * np.arange(n_phi) / n_phi
    R, Cc, A = np.meshgrid(r, c, a, indexing="ij")
    s = np.sqrt(1 - Cc ** 2)
    pts = np.stack([R * s * np.cos(A), R * s * np.sin(A), R * Cc], -1).reshape(-1, 3)
    vals = np.concatenate([_fro_p(fn(pts[i:i + chunk]), p)
                           for i in range(0, len(pts), chunk)]).reshape(R.shape)
    vals = vals * fac[:, None, None]
    W = wr[:, None, None] * wc[None, :, None] * (2 * np.pi / n_phi)
    return float(np.sum(W * vals))


# ------------------------------------------------------------- cylinder

def lambda_bound(fld: HollowDomainField, lam, p, n_r=48, n_phi=96, n_z=16):
    """``f(lam) = int_{out, r < lam rho} |beta|^p (lam rho - r)^{1-p}`` in units
    ``rho = 1`` (the quantity averaged over ``lam`` in the selection argument)."""
    rho = fld.rho
    if p == 1:
        return cylinder_lp(fld.beta, 1, rho, lam * rho, 0, fld.length,
                           n_r, n_phi, n_z) / rho ** 3
    # weight (lam rho - r)^{1-p} on (rho, lam rho): reflect to the left endpoint
    x, w = roots_jacobi(n_r, 1.0 - p, 0.0)
    r = rho + (lam - 1) * rho * (x + 1) / 2
    w = w * ((lam - 1) * rho / 2) ** (2 - p)
    a = 2 * np.pi * np.arange(n_phi) / n_phi
    z, wz = _gauss(0, fld.length, n_z)
    R, A, Z = np.meshgrid(r, a, z, indexing="ij")
    pts = np.stack([R * np.cos(A), R * np.sin(A), Z], -1).reshape(-1, 3)
    vals = _fro_p(fld.beta(pts), p).reshape(R.shape)
    W = (w * r)[:, None, None] * (2 * np.pi / n_phi) * wz[None, None, :]
    return float(np.sum(W * vals)) / rho ** (4 - p)


def cylinder_pullback(fld: HollowDomainField, lam=None, p=1.5,
                      lam_grid=None, charge_tol=1e-8, quad=None):
    """Extend ``fld`` into the full cylinder minus its axis.

    ``lam`` in ``(3/2, 2)``; if omitted, a grid is scanned and the value
    minimising :func:`lambda_bound` is used.  The scan is returned in
    ``result.scan`` together with the mean-value bound ``2 c* ||beta||^p``,
    ``c* = 1/(2-p)``.
    """
    if fld.kind != "cylinder":
        raise ValueError("cylinder_pullback needs a cylindrical hollow field")
    if not 1 <= p:
        raise ValueError("p must be at least 1")
    if p >= 2:
        charge, _ = fld.axis_charge()
        scale = max(fld.sup_norm(500), 1e-300) * fld.rho
        if np.max(np.abs(charge)) > charge_tol * scale:
            raise ValueError(
                f"p = {p} >= 2 is only admissible for zero axis charge "
                f"(measured {charge})")
    quad = quad or {}
    scan = None
    if lam is None:
        if p >= 2:
            lam = 1.75
        else:
            grid = np.linspace(1.5, 2.0, 22)[1:-1] if lam_grid is None else np.asarray(lam_grid)
            f = np.array([lambda_bound(fld, g, p, **quad) for g in grid])
            norm_p = cylinder_lp(fld.beta, p, fld.rho, 2 * fld.rho, 0, fld.length,
                                 **quad) / fld.rho ** 3
            cstar = 1.0 / (2 - p)
            i = int(np.argmin(f))
            lam = float(grid[i])
            scan = {"lam": grid.tolist(), "f": f.tolist(), "norm_p": norm_p,
                    "c_star": cstar, "mean_value_bound": 2 * cstar * norm_p,
                    "min_f": float(f[i])}
    if not 1.5 < lam < 2.0:
        raise ValueError(f"lambda must lie in (3/2, 2), got {lam}")
    inner = _pullback(fld.beta, cylinder_map(lam, fld.rho))
    return ExtendedField(fld, inner, lam, scan)


def cylinder_lp_ratio(fld: HollowDomainField, ext: ExtendedField, p, quad=None):
    """``||ext||_{L^p(in)} / ||beta||_{L^p(out)}`` by quadrature."""
    quad = quad or {}
    num = cylinder_lp(ext.inner, p, 0, fld.rho, 0, fld.length,
                      singular=p < 2, **quad)
    den = cylinder_lp(fld.beta, p, fld.rho, 2 * fld.rho, 0, fld.length, **quad)
    return (num / den) ** (1 / p)


# ------------------------------------------------------------- ball

def ball_pullback(fld: HollowDomainField, p=2.0):
    """Extend a shell field into the punctured ball with ``theta(t) = 2 - t``."""
    if fld.kind != "ball":
        raise ValueError("ball_pullback needs a shell field")
    if p > 2:
        raise ValueError("the ball pullback bound needs p <= 2")
    inner = _pullback(fld.beta, ball_map(fld.rho))
    return ExtendedField(fld, inner)


def ball_lp_ratio(fld: HollowDomainField, ext: ExtendedField, p, quad=None):
    """Inner ratio ``||ext||_{L^p(B_rho)} / ||beta||_{L^p(shell)}`` and the
    whole-ball ratio ``||ext||_{L^p(B_2rho)} / ||beta||_{L^p(shell)}``."""
    quad = quad or {}
    num = shell_lp(ext.inner, p, 0, fld.rho, singular=True, **quad)
    den = shell_lp(fld.beta, p, fld.rho, 2 * fld.rho, **quad)
    return (num / den) ** (1 / p), ((num + den) / den) ** (1 / p)


# ------------------------------------------------------------- skew fits

def smooth_step(s):
    """C-infinity step rising from 0 at ``s <= 0`` to 1 at ``s >= 1``, and
    its derivative."""
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        f = np.where(s > 0, np.exp(-1 / np.where(s > 0, s, 1)), 0.0)
        g = np.where(s < 1, np.exp(-1 / np.where(s < 1, 1 - s, 1)), 0.0)
        # f, g underflow well before s^2 does; guard the 0/0 case
        df = np.where(f > 0, f / np.where(f > 0, s, 1) ** 2, 0.0)
        dg = np.where(g > 0, -g / np.where(g > 0, 1 - s, 1) ** 2, 0.0)
        den = f + g
        val = f / den
        d = (df * den - f * (df + dg)) / den ** 2
    return val, d


def skew(A):
    return 0.5 * (A - np.swapaxes(A, -1, -2))


def sym(A):
    return 0.5 * (A + np.swapaxes(A, -1, -2))


@dataclass
class SkewGlue:
    """Glued affine isometries ``u = sum_i w_i(x3) (S_i x + d_i)``."""
    S: np.ndarray          # (N+1, 3, 3) skew fits
    d: np.ndarray          # (N+1, 3)
    z: np.ndarray          # sub-cylinder bottoms z_i (physical units)
    centers: np.ndarray    # hat centres
    spacing: float
    rho: float
    increments: np.ndarray  # |S_i - S_{i+1}|
    sym_norms: np.ndarray   # ||beta + beta^T||_{L^p} on the union of neighbours
    p: float

    def weights(self, x3):
        """Smooth telescoping partition of unity and its derivative,
        ``(..., N+1)``; weight ``i`` is supported in ``(c_{i-1}, c_{i+1})``."""
        x3 = np.asarray(x3, dtype=float)
        c, h = self.centers, self.spacing
        s, ds = smooth_step((x3[..., None] - c) / h)   # step i rises on (c_i, c_{i+1})
        ds = ds / h
        one = np.ones(x3.shape + (1,))
        zero = np.zeros(x3.shape + (1,))
        up = np.concatenate([one, s[..., :-1]], -1)
        dn = np.concatenate([s[..., :-1], zero], -1)
        dup = np.concatenate([zero, ds[..., :-1]], -1)
        ddn = np.concatenate([ds[..., :-1], zero], -1)
        return up - dn, dup - ddn

    def u(self, x):
        x = np.asarray(x, dtype=float)
        w, _ = self.weights(x[..., 2])
        aff = np.einsum("nij,...j->...ni", self.S, x) + self.d
        return np.einsum("...n,...ni->...i", w, aff)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        w, dw = self.weights(x[..., 2])
        aff = np.einsum("nij,...j->...ni", self.S, x) + self.d
        G = np.einsum("...n,nij->...ij", w, self.S)
        G = G.copy()
        G[..., :, 2] += np.einsum("...n,...ni->...i", dw, aff)
        return G

    def corrected(self, beta: Sampler) -> Sampler:
        return lambda x: beta(x) - self.grad(x)


def skew_fit_glue(fld: HollowDomainField, n_sub=None, p=2.0, quad=None):
    """Skew least-squares fits on overlapping sub-cylinders and their gluing.

    Units are scaled so that ``rho = 1``.  Sub-cylinders have height 1/2 and
    bottoms ``z_i = i (ell - 1/2) / N`` with ``N = 2 floor(2 ell)`` by default;
    the spacing must lie in ``[1/8, 1/4)``.  The best skew fit of a constant
    matrix to ``beta`` in ``L^2`` is the skew part of its mean.
    """
    if fld.kind != "cylinder":
        raise ValueError("skew fits are implemented on cylinders")
    rho = fld.rho
    ell = fld.length / rho
    N = 2 * math.floor(2 * ell) if n_sub is None else int(n_sub)
    if N < 1:
        raise ValueError("need at least two sub-cylinders")
    spacing = (ell - 0.5) / N
    if not 0.125 <= spacing < 0.25:
        raise ValueError(f"sub-cylinder spacing {spacing:.4f} (units of rho) "
                         "outside [1/8, 1/4): overlaps too small")
    quad = dict(n_r=12, n_phi=32, n_z=8) | (quad or {})
    z = np.arange(N + 1) * spacing * rho
    S = np.zeros((N + 1, 3, 3))
    for i, zi in enumerate(z):
        S[i] = skew(_cylinder_mean(fld.beta, rho, 2 * rho, zi, zi + 0.5 * rho, **quad))
    d = np.zeros((N + 1, 3))
    e3 = np.array([0, 0, 1.0])
    for i in range(N):
        d[i + 1] = d[i] + (S[i] - S[i + 1]) @ e3 * z[i]
    inc = np.linalg.norm(S[1:] - S[:-1], axis=(1, 2))
    symf = lambda x: 2 * sym(fld.beta(x))
    norms = np.array([
        cylinder_lp(symf, p, rho, 2 * rho, z[i], z[i + 1] + 0.5 * rho, **quad) ** (1 / p)
        for i in range(N)])
    centers = z + 0.25 * rho
    return SkewGlue(S, d, z, centers, spacing * rho, rho, inc, norms, p)


def _cylinder_mean(fn, r0, r1, z0, z1, n_r=12, n_phi=32, n_z=8):
    r, wr = _gauss(r0, r1, n_r)
    a = 2 * np.pi * np.arange(n_phi) / n_phi
    z, wz = _gauss(z0, z1, n_z)
    R, A, Z = np.meshgrid(r, a, z, indexing="ij")
    pts = np.stack([R * np.cos(A), R * np.sin(A), Z], -1).reshape(-1, 3)
    W = ((wr * r)[:, None, None] * (2 * np.pi / n_phi) * wz[None, None, :]
         * np.ones(R.shape)).reshape(-1)
    vals = fn(pts)
    return np.einsum("n,nij->ij", W, vals) / W.sum()


def cylinder_extend(fld: HollowDomainField, p=1.5, lam=None, n_sub=None, quad=None):
    """Skew-fit, glue and pull back: ``Du + pullback(beta - Du)``.

    Returns the extended field and the glue.  The symmetric part of the
    result inside is controlled by that of ``beta`` outside.
    """
    glue = skew_fit_glue(fld, n_sub=n_sub, p=p)
    corr = HollowDomainField(glue.corrected(fld.beta), "cylinder", fld.rho, fld.length)
    ext = cylinder_pullback(corr, lam=lam, p=p, quad=quad)

    def inner(x):
        return glue.grad(x) + ext.inner(x)

    return ExtendedField(fld, inner, ext.lam, ext.scan), glue


def symmetric_ratio(fld: HollowDomainField, ext: ExtendedField, p, quad=None):
    """``||ext + ext^T||_{L^p(in)} / ||beta + beta^T||_{L^p(out)}``."""
    quad = quad or {}
    symi = lambda x: 2 * sym(ext.inner(x))
    symo = lambda x: 2 * sym(fld.beta(x))
    if fld.kind == "cylinder":
        num = cylinder_lp(symi, p, 0, fld.rho, 0, fld.length, singular=p < 2, **quad)
        den = cylinder_lp(symo, p, fld.rho, 2 * fld.rho, 0, fld.length, **quad)
    else:
        num = shell_lp(symi, p, 0, fld.rho, singular=True, **quad)
        den = shell_lp(symo, p, fld.rho, 2 * fld.rho, **quad)
    return (num / den) ** (1 / p)


# ------------------------------------------------------------- loops

def circle_circulation(beta: Sampler, center, normal, radius, n=128):
    """``oint beta tau ds`` on a circle (Gauss-Legendre in the angle)."""
    normal = np.asarray(normal, float) / np.linalg.norm(normal)
    a = np.cross(normal, [1.0, 0, 0])
    if np.linalg.norm(a) < 0.1:
        a = np.cross(normal, [0, 1.0, 0])
    a /= np.linalg.norm(a)
    b = np.cross(normal, a)
    s, w = _gauss(0.0, 2 * np.pi, n)
    pts = center + radius * (np.outer(np.cos(s), a) + np.outer(np.sin(s), b))
    tau = radius * (np.outer(-np.sin(s), a) + np.outer(np.cos(s), b))
    vals = beta(pts)
    return np.einsum("k,kij,kj->i", w, vals, tau)


def random_inner_loops(fld: HollowDomainField, n, seed=0, max_ratio=0.5):
    """Random circles inside the hole that do not meet or link the singular
    set: radius at most ``max_ratio`` times the distance of the centre to it."""
    rng = np.random.default_rng(seed)
    rho = fld.rho
    loops = []
    while len(loops) < n:
        if fld.kind == "cylinder":
            rr = rho * rng.uniform(0.2, 0.9)
            a = rng.uniform(0, 2 * np.pi)
            c = np.array([rr * np.cos(a), rr * np.sin(a),
                          rng.uniform(0.25, 0.75) * fld.length])
            dist = min(rr, rho - rr, c[2], fld.length - c[2])
        else:
            v = rng.normal(size=3)
            v /= np.linalg.norm(v)
            c = v * rho * rng.uniform(0.3, 0.8)
            dist = min(np.linalg.norm(c), rho - np.linalg.norm(c))
            for u in fld.rays:
                t = max(c @ u, 0.0)
                dist = min(dist, np.linalg.norm(c - t * u))
        if dist <= 1e-3 * rho:
            continue
        nrm = rng.normal(size=3)
        loops.append((c, nrm / np.linalg.norm(nrm), max_ratio * dist * rng.uniform(0.3, 1.0)))
    return loops


def loop_residuals(beta: Sampler, loops, n=128):
    return np.array([np.linalg.norm(circle_circulation(beta, c, nv, r, n))
                     for c, nv, r in loops])


def interface_trace_gap(fld: HollowDomainField, ext: ExtendedField, n=400, seed=0,
                        delta=1e-9):
    """Largest mismatch of tangential components across the interface."""
    rng = np.random.default_rng(seed)
    rho = fld.rho
    if fld.kind == "cylinder":
        a = rng.uniform(0, 2 * np.pi, n)
        z = rng.uniform(0.1, 0.9, n) * fld.length
        nrm = np.stack([np.cos(a), np.sin(a), np.zeros(n)], 1)
        pts = np.column_stack([rho * nrm[:, :2], z])
    else:
        nrm = rng.normal(size=(n, 3))
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        pts = rho * nrm
    bin_ = ext.inner(pts - delta * rho * nrm)
    bout = fld.beta(pts + delta * rho * nrm)
    P = np.eye(3) - nrm[:, :, None] * nrm[:, None, :]
    gap = np.einsum("kij,kjl->kil", bin_ - bout, P)
    return float(np.abs(gap).max())


def verification_report(fld: HollowDomainField, ext: ExtendedField, p, loops=200,
                        seed=0, quad=None):
    """JSON-ready summary: constants, loop residual histogram, trace gap."""
    scale = fld.sup_norm(1000, seed)
    res = loop_residuals(ext, random_inner_loops(fld, loops, seed))
    edges = [0, 1e-14, 1e-12, 1e-10, 1e-8, 1e-6, np.inf]
    hist, _ = np.histogram(res / max(scale, 1e-300), bins=edges)
    out = {"kind": fld.kind, "p": p, "rho": fld.rho, "lambda": ext.lam,
           "sup_norm": scale, "max_loop_residual": float(res.max()),
           "relative_loop_residual": float(res.max() / max(scale, 1e-300)),
           "residual_histogram": {"edges": [str(e) for e in edges],
                                  "counts": hist.tolist()},
           "trace_gap": interface_trace_gap(fld, ext)}
    if fld.kind == "cylinder":
        out["lp_ratio"] = cylinder_lp_ratio(fld, ext, p, quad) if p < 2 else None
        if ext.scan is not None:
            out["lambda_scan"] = ext.scan
    else:
        inner, whole = ball_lp_ratio(fld, ext, p, quad)
        out.update(lp_ratio_inner=inner, lp_ratio_whole=whole,
                   stated_constant=2 ** (1 / p), proof_constant=3 ** (1 / p))
    return out
