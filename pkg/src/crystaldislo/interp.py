"""Continuum proxies of lattice fields.

Piecewise affine and piecewise constant interpolation, the per-simplex
least-squares strain ``L xi``, face jumps of ``L xi``, mollification with a
polynomial bump, and the comparison between the mollified continuum energy and
the discrete energy.

Simplices are addressed by ``(cell, tet)`` where ``cell`` is the lattice index
of the cell's base corner and ``tet`` indexes ``crystal.cover.simplices``.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .cluster_energy import total_energy
from .fields import DisplacementField, GradientField, SiteBox, StrainField, find_nonexact


# ---------------------------------------------------------------------------
# mesh

class SimplexMesh:
    """Simplices of all cells of a site box whose corners lie in the box."""

    def __init__(self, crystal, box: SiteBox):
        self.crystal = crystal
        self.box = box
        n = crystal.dim
        self.tets = crystal.cover.simplices  # (nt, n+1, n)
        self.nt = len(self.tets)
        corners = np.array(list(itertools.product([0, 1], repeat=n)))
        self.cell_window = box.window(corners)
        if self.cell_window is None:
            raise ValueError("box holds no complete cell")
        self.cells = SiteBox(tuple(a + s.start for a, s in zip(box.lo, self.cell_window)),
                             tuple(s.stop - s.start for s in self.cell_window), box.eps)
        self.edges = [list(itertools.combinations(range(n + 1), 2)) for _ in range(self.nt)]
        B = crystal.basis
        self.edge_vectors = np.array([[(t[b] - t[a]) @ B for a, b in e]
                                      for t, e in zip(self.tets, self.edges)])  # (nt, ne, n)
        self.gram = np.einsum("tei,tej->tij", self.edge_vectors, self.edge_vectors)
        self.gram_inv = np.linalg.inv(self.gram)
        self.volumes = crystal.cover.volumes * box.eps ** n
        perm_index = {tuple(p): i for i, p in enumerate(crystal.cover.permutations)}
        self._perm_index = perm_index

    @property
    def eps(self):
        return self.box.eps

    def vertex_slices(self, t, j):
        """Local box slices of vertex ``j`` of tet ``t`` over all cells."""
        return SiteBox.shifted(self.cell_window, self.tets[t][j])

    def locate(self, points):
        """Cell index, tet index and barycentric weights of physical points.

        Points on shared boundaries go to the simplex selected by a stable
        sort of the fractional coordinates (a measure-zero convention).
        """
        P = np.atleast_2d(np.asarray(points, dtype=float))
        k = P @ np.linalg.inv(self.crystal.basis) / self.eps
        base = np.floor(k + 1e-12).astype(int)
        frac = k - base
        order = np.argsort(frac, axis=1, kind="stable")
        tet = np.array([self._perm_index[tuple(o)] for o in order])
        verts = self.tets[tet]  # (m, n+1, n)
        n = P.shape[1]
        # barycentric weights on the Freudenthal chain: differences of sorted coordinates
        s = np.take_along_axis(frac, order, axis=1)
        lam = np.empty((len(P), n + 1))
        lam[:, 0] = 1.0 - s[:, -1]
        for j in range(1, n):
            lam[:, j] = s[:, n - j] - s[:, n - j - 1]
        lam[:, n] = s[:, 0]
        del verts
        return base, tet, lam


# ---------------------------------------------------------------------------
# interpolations

@dataclass
class AffineInterpolant:
    """``I_eps u``: continuous, affine on every simplex, equal to ``u`` at sites."""
    mesh: SimplexMesh
    u: DisplacementField

    def __call__(self, points):
        base, tet, lam = self.mesh.locate(points)
        out = np.zeros((len(base), self.u.values.shape[-1]))
        for j in range(lam.shape[1]):
            site = base + self.mesh.tets[tet, j]
            if not np.all(self.u.box.contains(site)):
                raise KeyError("point outside the interpolation domain")
            loc = site - np.asarray(self.u.box.lo)
            out += lam[:, j:j + 1] * self.u.values[tuple(loc.T)]
        return out

    def gradients(self):
        """``D I_eps u`` per simplex, shape ``(*cells, nt, m, n)``."""
        m = self.mesh
        v = self.u.values
        out = np.zeros(tuple(m.cells.shape) + (m.nt, v.shape[-1], m.crystal.dim))
        for t in range(m.nt):
            n = m.crystal.dim
            # edges along the chain: vertex j -> j+1
            E = np.array([(m.tets[t][j + 1] - m.tets[t][j]) @ m.crystal.basis
                          for j in range(n)]) * m.eps
            dU = np.stack([v[m.vertex_slices(t, j + 1)] - v[m.vertex_slices(t, j)]
                           for j in range(n)], axis=-1)  # (*cells, m, n)
            out[..., t, :, :] = dU @ np.linalg.inv(E.T)
        return out


def affine_interp(crystal, u: DisplacementField):
    """Piecewise affine interpolation of a displacement on all complete cells."""
    if np.any(~np.isfinite(u.values)):
        raise ValueError("displacement has missing vertex values")
    return AffineInterpolant(SimplexMesh(crystal, u.box), u)


@dataclass
class ConstantInterpolant:
    """``J_eps v``: ``v(x)`` on ``x + eps T_*``."""
    crystal: object
    box: SiteBox
    values: np.ndarray

    def __call__(self, points):
        P = np.atleast_2d(np.asarray(points, dtype=float))
        k = np.floor(P @ np.linalg.inv(self.crystal.basis) / self.box.eps + 1e-12).astype(int)
        if not np.all(self.box.contains(k)):
            raise KeyError("point outside the interpolation domain")
        return self.values[tuple((k - np.asarray(self.box.lo)).T)]


def constant_interp(crystal, box: SiteBox, values):
    """Piecewise constant interpolation on translated unit cells.

    Points on cell boundaries take the value of the cell found by flooring
    lattice coordinates (boundaries are a null set).
    """
    return ConstantInterpolant(crystal, box, np.asarray(values))


# ---------------------------------------------------------------------------
# best-fit strain

@dataclass
class PiecewiseConstantTensorField:
    """Matrix per simplex.  ``values`` has shape ``(*cells, nt, n, n)``; NaN
    marks unassigned simplices."""
    mesh: SimplexMesh
    values: np.ndarray
    residual: np.ndarray | None = None

    def at(self, points):
        base, tet, _ = self.mesh.locate(points)
        loc = base - np.asarray(self.mesh.cells.lo)
        if np.any(loc < 0) or np.any(loc >= np.asarray(self.mesh.cells.shape)):
            return np.zeros((len(base),) + self.values.shape[-2:])
        return self.values[tuple(loc.T) + (tet,)]

    def barycenters(self):
        m = self.mesh
        n = m.crystal.dim
        k = m.cells.coords().reshape(tuple(m.cells.shape) + (n,))
        out = np.empty(tuple(m.cells.shape) + (m.nt, n))
        for t in range(m.nt):
            c = m.tets[t].mean(axis=0)
            out[..., t, :] = (k + c) @ m.crystal.basis * m.eps
        return out

    def integral(self, fn):
        """``sum_T |T| fn(value_T)`` for a vectorized ``fn`` of matrices."""
        vals = fn(self.values)
        return float(np.sum(vals * self.mesh.volumes))

    def to_csv(self):
        n = self.mesh.crystal.dim
        bc = self.barycenters().reshape(-1, n)
        V = self.values.reshape(-1, n * n)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(n)]
                   + [f"L{i + 1}{j + 1}" for i in range(n) for j in range(n)])
        for p, v in zip(bc, V):
            w.writerow([repr(float(a)) for a in p] + [repr(float(a)) for a in v])
        return buf.getvalue()


def best_fit_field(xi: StrainField, region: SiteBox | None = None):
    """``L xi``: per simplex ``argmin_F sum_edges |F h - xi(x, h)|^2``.

    Parameters
    ----------
    region : SiteBox, optional
        Sub-box of ``xi.box``; only its complete cells are fitted.
    """
    if region is not None:
        xi = xi.restricted(region)
    mesh = SimplexMesh(xi.crystal, xi.box)
    n = xi.crystal.dim
    shp = tuple(mesh.cells.shape)
    L = np.empty(shp + (mesh.nt, n, n))
    res = np.empty(shp + (mesh.nt,))
    cache = {}

    def bond(h):
        key = tuple(int(v) for v in h)
        if key not in cache:
            cache[key] = xi.bond_full(h)
        return cache[key]

    for t in range(mesh.nt):
        M = np.zeros(shp + (n, n))
        vals = []
        for (a, b), hv in zip(mesh.edges[t], mesh.edge_vectors[t]):
            h = mesh.tets[t][b] - mesh.tets[t][a]
            v = bond(h)[mesh.vertex_slices(t, a)]
            vals.append(v)
            M += v[..., :, None] * hv[None, :]
        F = M @ mesh.gram_inv[t]
        L[..., t, :, :] = F
        r = np.zeros(shp)
        for v, hv in zip(vals, mesh.edge_vectors[t]):
            r += np.sum((F @ hv - v) ** 2, axis=-1)
        res[..., t] = r
    return PiecewiseConstantTensorField(mesh, L, res)


# ---------------------------------------------------------------------------
# face jumps

def _face_template(crystal):
    """Interior face pairs ``(t, drop, offset, t2)`` counted once per face.

    ``drop`` is the vertex of tet ``t`` opposite the face; ``offset`` is the
    cell shift of the neighbouring simplex ``t2``.
    """
    n = crystal.dim
    tets = crystal.cover.simplices
    owners = {}
    for o in itertools.product([-1, 0, 1], repeat=n):
        o = np.array(o)
        for t, T in enumerate(tets):
            for j in range(n + 1):
                key = tuple(sorted(tuple(int(v) for v in T[i] + o) for i in range(n + 1) if i != j))
                owners.setdefault(key, []).append((tuple(o), t, j))
    out = []
    zero = (0,) * n
    for key, own in owners.items():
        if len(own) != 2:
            continue
        (o1, t1, j1), (o2, t2, j2) = own
        for (oa, ta, ja), (ob, tb, _) in (((o1, t1, j1), (o2, t2, j2)), ((o2, t2, j2), (o1, t1, j1))):
            if oa == zero and (ob, tb) > (oa, ta):
                out.append((ta, ja, np.array(ob), tb))
    return out


@dataclass
class FaceJumpMeasure:
    """Jumps of ``L xi`` across interior faces.

    Attributes
    ----------
    centroids : (F, n) physical face centroids
    areas : (F,)
    normals : (F, n) unit normals pointing from the first to the second simplex
    jumps : (F, n, n) ``L_second - L_first``
    mass : (F,) curl mass ``area * |J (x) nu - transpose_23|``
    """
    centroids: np.ndarray
    areas: np.ndarray
    normals: np.ndarray
    jumps: np.ndarray
    mass: np.ndarray
    cells: np.ndarray = field(repr=False, default=None)
    neighbours: np.ndarray = field(repr=False, default=None)

    @property
    def total_mass(self):
        return float(np.sum(self.mass))

    def to_csv(self):
        n = self.centroids.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(n)] + ["area", "jump_norm", "curl_mass"])
        for c, a, J, m in zip(self.centroids, self.areas, self.jumps, self.mass):
            w.writerow([repr(float(v)) for v in c]
                       + [repr(float(a)), repr(float(np.linalg.norm(J))), repr(float(m))])
        return buf.getvalue()


def curl_density(J, nu):
    """``|J_ij nu_k - J_ik nu_j|`` (Frobenius over i, j, k)."""
    T = np.einsum("...ij,...k->...ijk", J, nu)
    return np.linalg.norm((T - np.swapaxes(T, -1, -2)).reshape(T.shape[:-3] + (-1,)), axis=-1)


def face_jump_measure(L: PiecewiseConstantTensorField, tol=0.0):
    """Jumps and curl masses on all faces shared by two fitted simplices.

    Faces with curl mass ``<= tol`` are dropped from the listing (the total
    is unaffected up to ``tol`` per face).
    """
    mesh = L.mesh
    crystal = mesh.crystal
    B = crystal.basis
    n = crystal.dim
    shp = np.array(mesh.cells.shape)
    cent, area, nrm, jmp, mass, cell_idx, nb_idx = [], [], [], [], [], [], []
    for t, j, o, t2 in _face_template(crystal):
        lo = np.maximum(0, -o)
        hi = shp - np.maximum(0, o)
        if np.any(hi <= lo):
            continue
        sa = tuple(slice(a, b) for a, b in zip(lo, hi))
        sb = tuple(slice(a + d, b + d) for a, b, d in zip(lo, hi, o))
        J = L.values[sb + (t2,)] - L.values[sa + (t,)]
        T = mesh.tets[t]
        fv = np.array([T[i] for i in range(n + 1) if i != j]) @ B * mesh.eps
        if n == 3:
            cr = np.cross(fv[1] - fv[0], fv[2] - fv[0])
            a = 0.5 * np.linalg.norm(cr)
            nu = cr / np.linalg.norm(cr)
        else:
            d = fv[1] - fv[0]
            a = np.linalg.norm(d)
            nu = np.array([d[1], -d[0]]) / a
        # orient away from the dropped vertex of the first simplex
        if nu @ (fv[0] - T[j] @ B * mesh.eps) < 0:
            nu = -nu
        m = a * curl_density(J, nu)
        keep = m > tol
        if not np.any(keep):
            continue
        idx = np.argwhere(keep) + lo
        base = (idx + np.asarray(mesh.cells.lo)) @ B * mesh.eps
        cent.append(base + fv.mean(axis=0))
        area.append(np.full(len(idx), a))
        nrm.append(np.broadcast_to(nu, (len(idx), n)))
        jmp.append(J[keep])
        mass.append(m[keep])
        cell_idx.append(np.column_stack([idx, np.full(len(idx), t)]))
        nb_idx.append(np.column_stack([idx + o, np.full(len(idx), t2)]))
    if not cent:
        z = np.zeros((0, n))
        return FaceJumpMeasure(z, np.zeros(0), z, np.zeros((0, n, n)), np.zeros(0),
                               np.zeros((0, n + 1), int), np.zeros((0, n + 1), int))
    return FaceJumpMeasure(np.concatenate(cent), np.concatenate(area), np.concatenate(nrm),
                           np.concatenate(jmp), np.concatenate(mass),
                           np.concatenate(cell_idx), np.concatenate(nb_idx))


def face_bound_constant(fj: FaceJumpMeasure, L: PiecewiseConstantTensorField, emap, centers_lo):
    """Largest ratio ``mass / (eps^(n-1) sqrt(E(z) + E(z')))`` over listed faces.

    ``emap`` holds per-center cluster energies with absolute lower corner
    ``centers_lo``; faces whose cells are not cluster centers are skipped.
    """
    if len(fj.mass) == 0:
        return 0.0
    n = L.mesh.crystal.dim
    lo = np.asarray(L.mesh.cells.lo) - np.asarray(centers_lo)
    a = fj.cells[:, :n] + lo
    b = fj.neighbours[:, :n] + lo
    shp = np.array(emap.shape)
    ok = np.all((a >= 0) & (a < shp) & (b >= 0) & (b < shp), axis=1)
    if not np.any(ok):
        return float("nan")
    E = emap[tuple(a[ok].T)] + emap[tuple(b[ok].T)]
    denom = L.mesh.eps ** (n - 1) * np.sqrt(np.maximum(E, 1e-300))
    return float(np.max(fj.mass[ok] / denom))


# ---------------------------------------------------------------------------
# mollifiers

def _bump_norm(n):
    # integral of (1 - |2x|^2)^3 over B_{1/2}, with s = 2|x|
    area = 2 * math.pi ** (n / 2) / math.gamma(n / 2)
    poly = sum(math.comb(3, k) * (-1) ** k / (n + 2 * k) for k in range(4))
    return area * poly / 2 ** n


def mollifier(x, delta=1.0):
    """``psi_delta(x) = delta^-n psi_1(x / delta)`` with
    ``psi_1 = C (1 - |2x|^2)^3`` on ``B_{1/2}``."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    s2 = 4.0 * np.sum((x / delta) ** 2, axis=-1)
    return np.where(s2 < 1.0, (1.0 - s2) ** 3, 0.0) / (_bump_norm(n) * delta ** n)


def _gauss01(order):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass
class DiscreteWeights:
    """Lattice weights ``psi^eps_delta(y)`` on integer offsets ``-R..R``."""
    radius: int
    grid: np.ndarray
    raw_sum: float

    def offsets(self):
        R = self.radius
        n = self.grid.ndim
        g = np.meshgrid(*[np.arange(-R, R + 1)] * n, indexing="ij")
        return np.stack([a.ravel() for a in g], axis=1), self.grid.ravel()


def discrete_weights(crystal, delta, eps, order=5):
    """``psi^eps_delta(y) = int_{eps T_*} psi_delta(y - z) dz`` for ``y`` in the lattice.

    Tensor Gauss rule of the given order on the unit cell.  The weights are
    renormalized to sum to one; ``raw_sum`` records the quadrature sum.

    Raises
    ------
    ValueError
        If ``delta < d_T* eps``.
    """
    if delta < crystal.d_cell * eps - 1e-12:
        raise ValueError(f"delta = {delta} is below d_T* eps = {crystal.d_cell * eps}")
    n = crystal.dim
    B = crystal.basis
    hmin = np.min(np.linalg.norm(B, axis=1))
    R = int(math.ceil((delta / 2) / (eps * hmin))) + 2
    q, w = _gauss01(order)
    Q = np.array(list(itertools.product(q, repeat=n)))
    W = np.prod(np.array(list(itertools.product(w, repeat=n))), axis=1)
    jac = abs(np.linalg.det(B)) * eps ** n
    g = np.meshgrid(*[np.arange(-R, R + 1)] * n, indexing="ij")
    Y = np.stack([a.ravel() for a in g], axis=1)
    vals = np.zeros(len(Y))
    for qq, ww in zip(Q, W):
        vals += ww * mollifier(((Y - qq) @ B) * eps, delta)
    vals *= jac
    raw = float(vals.sum())
    return DiscreteWeights(R, (vals / raw).reshape((2 * R + 1,) * n), raw)


def mollify(values, weights: DiscreteWeights):
    """``v_delta(x) = sum_y psi(y) v(x - y)`` on the sites where all terms exist.

    ``values`` has shape ``(*box, m)``; the result is shrunk by ``R`` per side.
    """
    n = weights.grid.ndim
    v = np.asarray(values, dtype=float)
    out = [fftconvolve(v[..., c], weights.grid, mode="valid") for c in range(v.shape[-1])]
    del n
    return np.stack(out, axis=-1)


def mollify_strain(xi: StrainField, weights: DiscreteWeights):
    """Mollified lattice strain on the box shrunk by ``R`` per side."""
    R = weights.radius
    box = xi.box
    sub = SiteBox(tuple(a + R for a in box.lo), tuple(s - 2 * R for s in box.shape), box.eps)
    if min(sub.shape) <= 0:
        raise ValueError("box too small for this mollifier")
    arrays = [mollify(xi.canonical_array(i), weights) for i in range(len(xi.canonical))]
    return StrainField(xi.crystal, sub, arrays=arrays)


# ---------------------------------------------------------------------------
# diagnostics

def _tet_rule(order=5):
    """Collapsed Gauss rule on ``{0 <= a_1 <= ... <= a_n <= 1}`` (n = 3)."""
    q, w = _gauss01(order)
    pts, wts = [], []
    for (t1, w1), (t2, w2), (t3, w3) in itertools.product(zip(q, w), repeat=3):
        pts.append([t1 * t2 * t3, t2 * t3, t3])
        wts.append(w1 * w2 * w3 * t2 * t3 ** 2)
    return np.array(pts), np.array(wts)


def _tet_points(crystal, t, rule):
    """Quadrature points (lattice coords) and weights (fraction of cell) in tet ``t``."""
    a, w = rule
    sig = crystal.cover.permutations[t]
    n = crystal.dim
    s = np.zeros((len(a), n))
    for i in range(n):
        s[:, sig[i]] = a[:, i]
    return s, w


def convolved_best_fit(L: PiecewiseConstantTensorField, delta, cells: SiteBox, outer_order=2,
                       inner_order=5):
    """``F_delta = psi_delta * L xi`` at Gauss points of every cell in ``cells``.

    Each simplex contributes through a kernel
    ``w(j) = int_{eps T} psi_delta(eps (j + q) - z) dz`` evaluated with a
    collapsed Gauss rule and applied as an FFT convolution.

    Returns
    -------
    F : array ``(*cells, nq, n, n)``
    weights : (nq,) outer quadrature weights as fractions of a cell
    """
    mesh = L.mesh
    crystal = mesh.crystal
    if crystal.dim != 3:
        raise NotImplementedError("convolution kernels are implemented for n = 3")
    eps = mesh.eps
    B = crystal.basis
    n = crystal.dim
    hmin = np.min(np.linalg.norm(B, axis=1))
    R = int(math.ceil((delta / 2) / (eps * hmin))) + 2
    lo = np.asarray(cells.lo) - np.asarray(mesh.cells.lo) - R
    hi = lo + np.asarray(cells.shape) + 2 * R
    if np.any(lo < 0) or np.any(hi > np.asarray(mesh.cells.shape)):
        raise ValueError("best-fit field does not cover the delta-neighbourhood of the cells")
    Lsub = L.values[tuple(slice(a, b) for a, b in zip(lo, hi))]
    if np.any(~np.isfinite(Lsub)):
        raise ValueError("best-fit field has unassigned simplices near the cells")
    q, w = _gauss01(outer_order)
    Qo = np.array(list(itertools.product(q, repeat=n)))
    Wo = np.prod(np.array(list(itertools.product(w, repeat=n))), axis=1)
    g = np.meshgrid(*[np.arange(-R, R + 1)] * n, indexing="ij")
    J = np.stack([a.ravel() for a in g], axis=1).astype(float)
    rule = _tet_rule(inner_order)
    jac = abs(np.linalg.det(B)) * eps ** n
    F = np.zeros(tuple(cells.shape) + (len(Qo), n, n))
    for t in range(mesh.nt):
        s, ws = _tet_points(crystal, t, rule)
        for iq, qo in enumerate(Qo):
            ker = np.zeros(len(J))
            for sp, wp in zip(s, ws):
                ker += wp * mollifier(((J + qo - sp) @ B) * eps, delta)
            ker = (ker * jac).reshape((2 * R + 1,) * n)
            for a in range(n):
                for b in range(n):
                    F[..., iq, a, b] += fftconvolve(Lsub[..., t, a, b], ker, mode="valid")
    return F, Wo


@dataclass
class MollifiedEnergyReport:
    lhs: float
    energy: float
    prefactor: float
    eps_over_delta: float
    measured_c: float
    precondition_relaxed: bool

    def as_dict(self):
        return dict(self.__dict__)


class CoreNotEmptyError(ValueError):
    pass


def mollified_energy_check(xi: StrainField, ce, C, delta, inner: SiteBox,
                           outer_order=2, inner_order=5):
    """Compare ``int_{inner} 1/2 C F_delta . F_delta`` with ``E_eps[xi, box]``.

    ``inner`` is the site box whose cells form ``omega'``; ``omega`` is
    ``xi.box``.  The field must be exact on ``omega`` (checked through
    generating-loop circulations, skipped for gradient fields).  When
    ``delta < 3 k* eps`` the report flags the relaxed precondition; exactness
    on ``omega`` is what that condition secures.

    Raises
    ------
    CoreNotEmptyError
        If some loop in ``omega`` has nonzero circulation.
    ValueError
        If ``inner`` is closer than ``5 delta`` to the boundary of the box.
    """
    box = xi.box
    eps = box.eps
    crystal = xi.crystal
    margin_lo = (np.asarray(inner.lo) - np.asarray(box.lo)) * eps
    margin_hi = (np.asarray(box.hi) - np.asarray(inner.hi)) * eps
    if min(margin_lo.min(), margin_hi.min()) < 5 * delta - 1e-12:
        raise ValueError("inner region must keep distance 5 delta from the boundary")
    if not isinstance(xi, GradientField):
        bad = find_nonexact(xi)
        if bad is not None:
            raise CoreNotEmptyError(f"field is not exact near {tuple(bad[0].sites[0])}")
    E = total_energy(xi, ce)
    hmin = np.min(np.linalg.norm(crystal.basis, axis=1))
    R = int(math.ceil((delta / 2) / (eps * hmin))) + 2
    region = SiteBox(tuple(a - R for a in inner.lo), tuple(s + 2 * R for s in inner.shape), eps)
    L = best_fit_field(xi, region)
    cells = SiteBox(inner.lo, tuple(s - 1 for s in inner.shape), eps)
    F, Wo = convolved_best_fit(L, delta, cells, outer_order, inner_order)
    dens = 0.5 * np.einsum("...ij,ijkl,...kl->...", F, C.C, F)
    cellvol = abs(np.linalg.det(crystal.basis)) * eps ** crystal.dim
    lhs = float(np.sum(dens * Wo) * cellvol)
    P = lhs / E if E > 0 else (0.0 if lhs == 0 else math.inf)
    r = eps / delta
    return MollifiedEnergyReport(lhs, E, P, r, (P - 1.0) / r if E > 0 else 0.0,
                                 delta < 3 * crystal.k_star * eps)


def tet_l2_affine(vals, vol):
    """``int_T g^2`` for an affine ``g`` with vertex values ``vals`` (..., n+1)."""
    n1 = vals.shape[-1]
    n = n1 - 1
    return vol / ((n + 1) * (n + 2)) * (np.sum(vals ** 2, axis=-1) + np.sum(vals, axis=-1) ** 2)


def interpolation_gap(crystal, u: DisplacementField):
    """``||I u - J u||^2`` and ``||D I u||^2`` over all complete cells."""
    I = affine_interp(crystal, u)
    m = I.mesh
    v = u.values
    gap = 0.0
    for t in range(m.nt):
        base = v[m.vertex_slices(t, 0)]
        # J u = u(cell base) = vertex 0 of every Freudenthal simplex
        diffs = np.stack([v[m.vertex_slices(t, j)] - base for j in range(crystal.dim + 1)], axis=-1)
        gap += float(np.sum(tet_l2_affine(diffs, m.volumes[t])))
    G = I.gradients()
    grad = float(np.sum(np.sum(G ** 2, axis=(-1, -2)) * m.volumes))
    return gap, grad


def cluster_korn_ratio(crystal, u_cluster):
    """``int_{T_*} |D I u + (D I u)^T|^2 / E0[du]`` for displacements on the cluster."""
    from .cluster_energy import reference_energy
    from .fields import cluster_pairs
    pos = {tuple(int(v) for v in c): i for i, c in enumerate(crystal.cluster)}
    u = np.asarray(u_cluster, dtype=float)
    xc = np.array([u[pos[tuple(int(v) for v in y + h)]] - u[pos[tuple(int(v) for v in y)]]
                   for y, h in cluster_pairs(crystal)])
    num = 0.0
    B = crystal.basis
    for t, T in enumerate(crystal.cover.simplices):
        E = np.array([(T[j + 1] - T[j]) @ B for j in range(crystal.dim)])
        dU = np.stack([u[pos[tuple(int(v) for v in T[j + 1])]] - u[pos[tuple(int(v) for v in T[j])]]
                       for j in range(crystal.dim)], axis=-1)
        G = dU @ np.linalg.inv(E.T)
        num += crystal.cover.volumes[t] * np.sum((G + G.T) ** 2)
    den = reference_energy(crystal, xc)
    return num, den


def ball_korn_fit(crystal, u: DisplacementField, x0, delta, ce):
    """Skew + translation fit of ``u`` around ``x0`` and the three residual ratios.

    Returns ``(r1, r2, r3)``: the left sides of the three ball estimates
    divided by ``E``, ``delta^2 E`` and ``eps^2 E`` with
    ``E = E_eps[d u, B_{2 delta}(x0)]`` approximated on the enclosing box
    of cluster centers whose clusters lie in the ball.
    """
    from .cluster_energy import energy_map
    eps = u.box.eps
    x0 = np.asarray(x0, dtype=float)
    I = affine_interp(crystal, u)
    m = I.mesh
    n = crystal.dim
    B = crystal.basis
    xi = GradientField(crystal, u)
    centers, emap = energy_map(xi, ce)
    ck = np.asarray(u.box.lo) + np.array([s.start for s in centers])
    g = np.meshgrid(*[np.arange(s) for s in emap.shape], indexing="ij")
    k = np.stack([a.ravel() for a in g], axis=1) + ck
    diam = np.max(np.linalg.norm(crystal.cluster @ B, axis=1))
    inside = np.linalg.norm(k @ B * eps - x0, axis=1) + diam * eps <= 2 * delta
    Eball = float(np.sum(emap.ravel()[inside])) * eps ** n
    # per-simplex gradients and barycenters
    G = I.gradients()
    kc = m.cells.coords().reshape(tuple(m.cells.shape) + (n,))
    bary = np.stack([(kc + T.mean(axis=0)) @ B * eps for T in m.tets], axis=-2)
    vol = np.broadcast_to(m.volumes, bary.shape[:-1])
    sel15 = np.linalg.norm(bary - x0, axis=-1) <= 1.5 * delta
    Gs, vs = G[sel15], vol[sel15]
    S = np.sum(vs[:, None, None] * Gs, axis=0) / np.sum(vs)
    S = 0.5 * (S - S.T)
    r1 = float(np.sum(vs * np.sum((Gs - S) ** 2, axis=(-1, -2))))
    # translation: mean of u - S y over sites in the ball
    pos = u.positions().reshape(-1, n)
    uv = u.values.reshape(-1, n)
    inb = np.linalg.norm(pos - x0, axis=1) <= delta
    bvec = np.mean(uv[inb] - pos[inb] @ S.T, axis=0)
    uhat = DisplacementField(u.box, (uv - pos @ S.T - bvec).reshape(u.values.shape), crystal)
    cellvol = abs(np.linalg.det(B)) * eps ** n
    selJ = inb
    r2 = float(np.sum(np.sum(uhat.values.reshape(-1, n)[selJ] ** 2, axis=1)) * cellvol)
    Ih = affine_interp(crystal, uhat)
    gap = 0.0
    v = uhat.values
    cell_pos = kc @ B * eps
    cin = np.linalg.norm(cell_pos - x0, axis=-1) <= delta
    for t in range(m.nt):
        base = v[m.vertex_slices(t, 0)]
        diffs = np.stack([v[m.vertex_slices(t, j)] - base for j in range(n + 1)], axis=-1)
        gap += float(np.sum(tet_l2_affine(diffs, m.volumes[t])[cin]))
    del Ih
    if Eball <= 0:
        return float("nan"), float("nan"), float("nan")
    return r1 / Eball, r2 / (delta ** 2 * Eball), gap / (eps ** 2 * Eball)
