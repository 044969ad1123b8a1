"""Discrete displacement and strain fields on boxes of lattice sites.

A :class:`SiteBox` is an index box ``lo <= k < lo + shape`` of lattice
coordinates on scale ``eps``; physical positions are ``eps * k @ basis``.
Strain fields are indexed by (site, bond).  Only the canonical orientation of
each bond pair is stored; the mirror value follows from antisymmetry, so
admissibility holds by construction.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .crystal import CrystalError, elementary_path, generator_vectors


class NotExactError(ValueError):
    """Raised when a strain field is not a discrete gradient.

    Attributes
    ----------
    loop : (K+1, n) int array
        Closed path (absolute lattice coordinates) with nonzero circulation.
    circulation : ndarray
    """

    def __init__(self, msg, loop=None, circulation=None):
        super().__init__(msg)
        self.loop = loop
        self.circulation = circulation


@dataclass(frozen=True)
class SiteBox:
    """Index box of lattice sites on scale ``eps``."""
    lo: tuple
    shape: tuple
    eps: float

    @property
    def dim(self):
        return len(self.shape)

    @property
    def hi(self):
        return tuple(a + s for a, s in zip(self.lo, self.shape))

    @property
    def size(self):
        return int(np.prod(self.shape))

    def coords(self):
        """All site coordinates, C order, shape (size, n)."""
        g = np.meshgrid(*[np.arange(a, a + s) for a, s in zip(self.lo, self.shape)], indexing="ij")
        return np.stack([x.ravel() for x in g], axis=1)

    def contains(self, k):
        k = np.asarray(k)
        lo = np.asarray(self.lo)
        return np.all((k >= lo) & (k < lo + np.asarray(self.shape)), axis=-1)

    def local(self, k):
        return tuple(int(v) for v in np.asarray(k) - np.asarray(self.lo))

    def window(self, offsets):
        """Slices of base sites ``x`` with ``x + o`` in the box for all offsets.

        Returns a tuple of slices (local indices), or ``None`` when empty.
        """
        o = np.asarray(offsets, dtype=int).reshape(-1, self.dim)
        omin, omax = o.min(axis=0), o.max(axis=0)
        sl = []
        for i in range(self.dim):
            a, b = -omin[i], self.shape[i] - omax[i]
            if b <= a:
                return None
            sl.append(slice(int(a), int(b)))
        return tuple(sl)

    @staticmethod
    def shifted(base, o):
        return tuple(slice(s.start + int(d), s.stop + int(d)) for s, d in zip(base, o))

    def sub(self, lo, shape):
        return SiteBox(tuple(int(v) for v in lo), tuple(int(v) for v in shape), self.eps)

    @classmethod
    def around(cls, lo_phys, hi_phys, eps, basis=None):
        """Sites of a cubic lattice in the closed physical box ``[lo, hi]``."""
        lo = np.ceil(np.asarray(lo_phys) / eps - 1e-9).astype(int)
        hi = np.floor(np.asarray(hi_phys) / eps + 1e-9).astype(int)
        return cls(tuple(int(v) for v in lo), tuple(int(v) for v in hi - lo + 1), eps)


# ---------------------------------------------------------------------------

class DisplacementField:
    """Values ``u`` on all sites of a box, array of shape ``(*box.shape, n)``."""

    def __init__(self, box, values, crystal=None):
        self.box = box
        self.values = np.asarray(values, dtype=float)
        self.crystal = crystal
        if self.values.shape[:-1] != tuple(box.shape):
            raise ValueError("displacement array does not match the box")

    def positions(self):
        B = np.eye(self.box.dim) if self.crystal is None else self.crystal.basis
        return self.box.eps * (self.box.coords() @ B)

    def at(self, k):
        return self.values[self.box.local(k)]


class StrainField:
    """Admissible bond field ``xi(x, h)``.

    ``provider(i)`` returns the array of ``xi(x, h_i)`` for the canonical bond
    ``h_i`` on the base window of sites ``x`` with ``x + h_i`` in the box.
    Subclasses compute these arrays lazily so that large boxes never hold all
    bond values at once.
    """

    def __init__(self, crystal, box, provider=None, arrays=None):
        self.crystal = crystal
        self.box = box
        self.canonical = crystal.canonical_bonds()
        self._canon_index = {tuple(int(v) for v in h): i for i, h in enumerate(self.canonical)}
        self._arrays = arrays
        self._provider = provider

    # -- bond access -------------------------------------------------------
    @property
    def eps(self):
        return self.box.eps

    def canonical_array(self, i):
        if self._arrays is not None:
            return self._arrays[i]
        return self._provider(i)

    def orient(self, h):
        """``(i, sign)`` with ``h = sign * canonical[i]``."""
        t = tuple(int(v) for v in h)
        if t in self._canon_index:
            return self._canon_index[t], 1
        t = tuple(-v for v in t)
        if t in self._canon_index:
            return self._canon_index[t], -1
        raise KeyError(f"{h} is not a bond")

    def bond_full(self, h):
        """``xi(., h)`` on the full box, NaN where ``x + h`` leaves the box."""
        i, s = self.orient(h)
        hc = self.canonical[i]
        arr = self.canonical_array(i)
        out = np.full(tuple(self.box.shape) + (arr.shape[-1],), np.nan)
        base = self.box.window([np.zeros_like(hc), hc])
        if base is None:
            return out
        if s > 0:
            out[base] = arr
        else:
            # xi(x, -h) = -xi(x - h, h): sites x = y + h
            out[SiteBox.shifted(base, hc)] = -arr
        return out

    def win_index(self, i, y):
        """Index into ``canonical_array(i)`` of the bond starting at site ``y``."""
        hc = self.canonical[i]
        base = self.box.window([np.zeros_like(hc), hc])
        return tuple(int(v) - a - s.start for v, a, s in zip(y, self.box.lo, base))

    def value(self, x, h):
        """Single lookup ``xi(x, h)`` at absolute lattice coordinates ``x``."""
        i, s = self.orient(h)
        hc = self.canonical[i]
        y = np.asarray(x) if s > 0 else np.asarray(x) - hc
        if not (self.box.contains(y) and self.box.contains(y + hc)):
            raise KeyError(f"bond ({tuple(x)}, {tuple(h)}) is not in the box")
        arr = self.canonical_array(i)
        return s * arr[self.win_index(i, y)]

    def materialize(self):
        """Dense copy holding all canonical arrays."""
        return StrainField(self.crystal, self.box,
                           arrays=[np.array(self.canonical_array(i)) for i in range(len(self.canonical))])

    def antisymmetry_defect(self):
        """``max |xi(x,h) + xi(x+h,-h)|`` evaluated through the public accessors."""
        worst = 0.0
        for h in self.canonical:
            a = self.bond_full(h)
            b = self.bond_full(-h)
            base = self.box.window([np.zeros_like(h), h])
            if base is None:
                continue
            d = a[base] + b[SiteBox.shifted(base, h)]
            worst = max(worst, float(np.nanmax(np.abs(d))) if d.size else 0.0)
        return worst

    def _sub_slices(self, i, sub):
        """Slices of ``canonical_array(i)`` covering the canonical window of ``sub``."""
        h = self.canonical[i]
        old = self.box.window([np.zeros_like(h), h])
        new = sub.window([np.zeros_like(h), h])
        if new is None:
            return None
        return tuple(slice(b + n.start - a - o.start, b + n.stop - a - o.start)
                     for a, b, o, n in zip(self.box.lo, sub.lo, old, new))

    def restricted(self, sub):
        """Field on a sub-box; lazy subclasses stay lazy."""
        if self._arrays is None:
            return restrict(self, sub)
        arrays = []
        for i in range(len(self.canonical)):
            sl = self._sub_slices(i, sub)
            arr = self._arrays[i]
            arrays.append(arr[sl] if sl is not None else arr[(slice(0, 0),) * sub.dim])
        return StrainField(self.crystal, sub, arrays=arrays)

    def __sub__(self, other):
        return CombinedField(self, other, -1.0)

    def __add__(self, other):
        return CombinedField(self, other, 1.0)

    def max_abs(self):
        return max(float(np.max(np.linalg.norm(self.canonical_array(i), axis=-1), initial=0.0))
                   for i in range(len(self.canonical)))

    # -- I/O ---------------------------------------------------------------
    def to_csv(self, fh=None):
        """Columnar CSV ``x1..xn, h1..hn, v1..vn`` preceded by a JSON header line."""
        n = self.box.dim
        buf = io.StringIO() if fh is None else fh
        meta = {"eps": self.eps, "lattice": self.crystal.name,
                "lo": list(self.box.lo), "shape": list(self.box.shape)}
        buf.write("# " + json.dumps(meta) + "\n")
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow([f"x{i+1}" for i in range(n)] + [f"h{i+1}" for i in range(n)]
                   + [f"v{i+1}" for i in range(n)])
        for i, h in enumerate(self.canonical):
            arr = self.canonical_array(i)
            base = self.box.window([np.zeros_like(h), h])
            if base is None:
                continue
            sub = self.box.sub(np.asarray(self.box.lo) + [s.start for s in base],
                               [s.stop - s.start for s in base])
            ks = sub.coords()
            vs = arr.reshape(-1, arr.shape[-1])
            for k, v in zip(ks, vs):
                w.writerow([int(a) for a in k] + [int(a) for a in h] + [repr(float(a)) for a in v])
        return buf.getvalue() if fh is None else None

    @classmethod
    def from_csv(cls, crystal, text):
        lines = text.splitlines()
        meta = json.loads(lines[0][2:])
        box = SiteBox(tuple(meta["lo"]), tuple(meta["shape"]), meta["eps"])
        n = box.dim
        f = zero_field(crystal, box)
        arrays = [np.array(a) for a in f._arrays]
        rd = csv.reader(lines[2:])
        for row in rd:
            if not row:
                continue
            k = np.array([int(v) for v in row[:n]])
            h = np.array([int(v) for v in row[n:2 * n]])
            v = np.array([float(x) for x in row[2 * n:]])
            i, s = f.orient(h)
            y = k if s > 0 else k + h  # xi(k, -hc) = -xi(k - hc, hc)
            arrays[i][f.win_index(i, y)] = s * v
        return cls(crystal, box, arrays=arrays)

    def to_json(self):
        return json.dumps({
            "eps": self.eps, "lattice": self.crystal.name,
            "lo": list(self.box.lo), "shape": list(self.box.shape),
            "bonds": [h.tolist() for h in self.canonical],
            "values": [self.canonical_array(i).tolist() for i in range(len(self.canonical))],
        })

    @classmethod
    def from_json(cls, crystal, text):
        d = json.loads(text)
        box = SiteBox(tuple(d["lo"]), tuple(d["shape"]), d["eps"])
        f = cls(crystal, box, arrays=None)
        arrays = [None] * len(f.canonical)
        for h, v in zip(d["bonds"], d["values"]):
            i, s = f.orient(h)
            arrays[i] = s * np.asarray(v, dtype=float)
        f._arrays = arrays
        return f


class CombinedField(StrainField):
    """Lazy ``a + sign * b``."""

    def __init__(self, a, b, sign):
        super().__init__(a.crystal, a.box)
        self.a, self.b, self.sign = a, b, sign

    def canonical_array(self, i):
        return self.a.canonical_array(i) + self.sign * self.b.canonical_array(i)

    def restricted(self, sub):
        return CombinedField(self.a.restricted(sub), self.b.restricted(sub), self.sign)


class GradientField(StrainField):
    """Lazy ``d_eps u(x, h) = (u(x + eps h) - u(x)) / eps``."""

    def __init__(self, crystal, u: DisplacementField):
        super().__init__(crystal, u.box)
        self.u = u

    def canonical_array(self, i):
        h = self.canonical[i]
        base = self.box.window([np.zeros_like(h), h])
        v = self.u.values
        return (v[SiteBox.shifted(base, h)] - v[base]) / self.box.eps

    def restricted(self, sub):
        off = np.asarray(sub.lo) - np.asarray(self.box.lo)
        sl = tuple(slice(int(o), int(o) + s) for o, s in zip(off, sub.shape))
        return GradientField(self.crystal, DisplacementField(sub, self.u.values[sl], self.crystal))


class AffineField(StrainField):
    """``xi(x, h) = F h`` (physical ``h``) on every bond of the box."""

    def __init__(self, crystal, box, F):
        super().__init__(crystal, box)
        self.F = np.asarray(F, dtype=float)

    def canonical_array(self, i):
        h = self.canonical[i]
        base = self.box.window([np.zeros_like(h), h])
        shp = tuple(s.stop - s.start for s in base)
        v = self.F @ (h @ self.crystal.basis)
        return np.broadcast_to(v, shp + (len(v),)).copy()

    def restricted(self, sub):
        return AffineField(self.crystal, sub, self.F)


def zero_field(crystal, box, ncomp=None):
    n = ncomp or box.dim
    f = StrainField(crystal, box)
    arrays = []
    for h in f.canonical:
        base = box.window([np.zeros_like(h), h])
        shp = (0,) * box.dim if base is None else tuple(s.stop - s.start for s in base)
        arrays.append(np.zeros(shp + (n,)))
    f._arrays = arrays
    return f


def discrete_gradient(crystal, u: DisplacementField, materialize=True):
    """Discrete gradient of a displacement field.

    Parameters
    ----------
    crystal : BravaisCrystal
    u : DisplacementField
    materialize : bool
        Store all bond arrays (default) or return a lazy field.
    """
    g = GradientField(crystal, u)
    return g.materialize() if materialize else g


# ---------------------------------------------------------------------------
# plastic strains

class PlasticStrainField(StrainField):
    """Quantized plastic strain ``sum_l zeta_l (m_l . h) b_l``.

    Integer slip counts ``n_l(x, h) = zeta_l(x, h) (m_l . h)`` are stored per
    canonical bond; values are integer combinations of the Burgers generators.

    Either ``slip_counts`` (per system) or ``gen_counts`` (per generator, with
    ``zeta`` implied by a slip-system choice per bond) must be given.
    """

    def __init__(self, crystal, box, slips, slip_counts=None, gen_counts=None):
        super().__init__(crystal, box)
        self.slips = slips
        self.bhat = generator_vectors(crystal, slips)
        self._sys_coeffs = np.array([slips.coefficients(crystal, b) for b in slips.burgers],
                                    dtype=np.int64)
        self.slip_counts = slip_counts
        self.gen_counts_store = gen_counts

    def gen_counts(self, i):
        """Integer generator coefficients of ``xi_pl(., h_i)``."""
        if self.gen_counts_store is not None:
            return self.gen_counts_store[i]
        return np.tensordot(self.slip_counts[i].astype(np.int64), self._sys_coeffs, axes=([-1], [0]))

    def canonical_array(self, i):
        return self.gen_counts(i).astype(float) @ self.bhat

    def restricted(self, sub):
        def cut(store):
            if store is None:
                return None
            out = []
            for i, arr in enumerate(store):
                sl = self._sub_slices(i, sub)
                out.append(arr[sl] if sl is not None else arr[(slice(0, 0),) * sub.dim])
            return out
        return PlasticStrainField(self.crystal, sub, self.slips, cut(self.slip_counts),
                                  cut(self.gen_counts_store))

    def zeta(self, i):
        """Slip coefficients ``zeta_l(., h_i)`` as floats (exact rationals are
        ``slip_counts / (m_l . h)``)."""
        h = self.canonical[i] @ self.crystal.basis
        mh = self.slips.normals @ h
        if self.slip_counts is not None:
            with np.errstate(divide="ignore", invalid="ignore"):
                z = self.slip_counts[i] / np.where(mh == 0, 1, mh)
            return np.where(mh == 0, 0.0, z)
        q = self.gen_counts(i)
        z = np.zeros(q.shape[:-1] + (self.slips.n_systems,))
        for j in range(q.shape[-1]):
            l = self.slips.system_for(j, h)
            if l is None:
                continue
            sgn = 1.0 if np.allclose(self.slips.burgers[l], self.bhat[j]) else -1.0
            z[..., l] += sgn * q[..., j] / mh[l]
        return z


def plastic_from_slips(crystal, box, slips, zeta, tol=1e-12):
    """Build a plastic strain from slip coefficients.

    Parameters
    ----------
    zeta : list of arrays
        ``zeta[i]`` has shape ``(*window_i, n_systems)`` for canonical bond i.
        Integer arrays are taken as the counts ``zeta_l (m_l . h)`` directly.

    Raises
    ------
    CrystalError
        When some ``zeta_l (m_l . h)`` is not an integer; the message names
        the system, site and bond.
    """
    f = StrainField(crystal, box)
    counts = []
    for i, h in enumerate(f.canonical):
        z = np.asarray(zeta[i])
        if np.issubdtype(z.dtype, np.integer):
            counts.append(z.astype(np.int64))
            continue
        mh = slips.normals @ (h @ crystal.basis)
        prod = z * mh
        r = np.rint(prod)
        bad = np.abs(prod - r) > tol
        if np.any(bad):
            idx = np.argwhere(bad)[0]
            x = np.asarray(box.lo) + idx[:-1]
            raise CrystalError(
                f"zeta_{idx[-1]} (m.h) = {prod[tuple(idx)]} is not an integer at "
                f"x = {tuple(int(v) for v in x)}, h = {tuple(int(v) for v in h)}")
        counts.append(r.astype(np.int64))
    return PlasticStrainField(crystal, box, slips, slip_counts=counts)


# ---------------------------------------------------------------------------
# paths and circulation

@dataclass(frozen=True)
class DiscretePath:
    """Ordered lattice sites (absolute integer coordinates)."""
    sites: np.ndarray

    @property
    def closed(self):
        return bool(np.array_equal(self.sites[0], self.sites[-1]))

    def steps(self):
        return np.diff(self.sites, axis=0)

    def __add__(self, other):
        if not np.array_equal(self.sites[-1], other.sites[0]):
            raise ValueError("paths do not connect")
        return DiscretePath(np.concatenate([self.sites, other.sites[1:]]))

    def translate(self, x):
        return DiscretePath(self.sites + np.asarray(x, dtype=int))


def closed_elementary_loop(crystal, h):
    """Offsets of ``elementary_path(h)`` closed by the direct edge ``h -> 0``."""
    p = elementary_path(crystal, h)
    return np.concatenate([p, p[:1]])


def circulation(xi: StrainField, path, require_closed=True):
    """``sum_k eps * xi(x_{k-1}, x_k - x_{k-1})`` along a discrete path."""
    P = path.sites if isinstance(path, DiscretePath) else np.asarray(path)
    if require_closed and not np.array_equal(P[0], P[-1]):
        raise ValueError("path is not closed")
    total = np.zeros(xi.box.dim)
    for a, b in zip(P[:-1], P[1:]):
        h = b - a
        if not xi.crystal.has_bond(h):
            raise ValueError(f"step {tuple(h)} is not a bond")
        total = total + xi.value(a, h)
    return xi.eps * total


def plastic_circulation_coeffs(xp: PlasticStrainField, path):
    """Exact integer generator coefficients ``c`` with circulation ``eps * c @ bhat``."""
    P = path.sites if isinstance(path, DiscretePath) else np.asarray(path)
    if not np.array_equal(P[0], P[-1]):
        raise ValueError("path is not closed")
    total = np.zeros(xp.bhat.shape[0], dtype=np.int64)
    for a, b in zip(P[:-1], P[1:]):
        i, s = xp.orient(b - a)
        hc = xp.canonical[i]
        y = a if s > 0 else a - hc
        total += s * np.asarray(xp.gen_counts(i)[xp.win_index(i, y)], dtype=np.int64)
    return total


def loop_circulation_array(xi: StrainField, loop_offsets, cache=None):
    """Circulation of one loop shape at every admissible base site.

    Parameters
    ----------
    loop_offsets : (K+1, n) int array, closed
    cache : dict, optional
        Maps bond tuples to ``bond_full`` arrays to avoid recomputation.

    Returns
    -------
    base : tuple of slices or None
        Base-site window (local indices).
    circ : array of shape (*window, n)
    """
    L = np.asarray(loop_offsets, dtype=int)
    base = xi.box.window(L)
    if base is None:
        return None, None
    acc = None
    for a, b in zip(L[:-1], L[1:]):
        h = b - a
        key = tuple(int(v) for v in h)
        if cache is not None and key in cache:
            full = cache[key]
        else:
            full = xi.bond_full(h)
            if cache is not None:
                cache[key] = full
        term = full[SiteBox.shifted(base, a)]
        acc = term.copy() if acc is None else acc + term
    return base, xi.eps * acc


def generating_loops(crystal):
    """Loop shapes whose translates generate all closed paths.

    Triangle loops of every simplex 2-face (in the cell-translated family)
    plus, per bond, the elementary path closed by the direct edge.  Loops
    that retrace a single edge are dropped since their circulation vanishes
    identically.
    """
    loops = []
    for f in crystal.cover.faces(2):
        f = np.array(f, dtype=int)
        loops.append(("face", np.concatenate([f, f[:1]])))
    for h in crystal.bonds:
        L = closed_elementary_loop(crystal, h)
        if len(L) <= 3:
            continue
        loops.append(("path", L))
    return loops


def _field_scale(xi):
    return max(xi.max_abs(), 1e-300)


def find_nonexact(xi: StrainField, tol_rel=1e-10):
    """First generating loop with circulation above tolerance, or None."""
    tol = tol_rel * xi.eps * max(_field_scale(xi), 1.0)
    cache = {}
    for kind, L in generating_loops(xi.crystal):
        base, c = loop_circulation_array(xi, L, cache)
        if base is None:
            continue
        mag = np.linalg.norm(c, axis=-1)
        if np.any(mag > tol):
            idx = np.unravel_index(np.argmax(mag), mag.shape)
            x0 = np.asarray(xi.box.lo) + np.array([s.start for s in base]) + np.array(idx)
            return DiscretePath(L + x0), c[idx]
    return None


def is_exact(xi: StrainField, tol_rel=1e-10):
    """True when every generating loop inside the box has zero circulation."""
    return find_nonexact(xi, tol_rel) is None


def restrict(xi: StrainField, sub: SiteBox):
    """Field restricted to a sub-box (materialized)."""
    off = np.asarray(sub.lo) - np.asarray(xi.box.lo)
    arrays = []
    for i, h in enumerate(xi.canonical):
        full = xi.bond_full(h)
        win = sub.window([np.zeros_like(h), h])
        sl = tuple(slice(int(o), int(o) + s) for o, s in zip(off, sub.shape))
        part = full[sl]
        arrays.append(part[win] if win is not None else part[:0, :0, :0])
    return StrainField(xi.crystal, sub, arrays=arrays)


def hs_order(xi, box):
    """Canonical bonds with a nonempty window, in storage order."""
    return [i for i, h in enumerate(xi.canonical)
            if box.window([np.zeros_like(h), h]) is not None]


def reconstruct_potential(xi: StrainField, check=True, tol_rel=1e-10):
    """Potential ``u`` with ``d_eps u = xi``, anchored at 0 per component.

    The anchor of each discretely connected component is its
    lexicographically smallest site.

    Raises
    ------
    NotExactError
        Carrying a witness loop when ``xi`` has nonzero circulation.
    """
    if check:
        bad = find_nonexact(xi, tol_rel)
        if bad is not None:
            loop, c = bad
            raise NotExactError(f"field is not exact: circulation {c} on loop starting at "
                                f"{tuple(int(v) for v in loop.sites[0])}", loop.sites, c)
    box = xi.box
    n = box.dim
    N = box.size
    idx = np.arange(N).reshape(box.shape)
    rows, cols = [], []
    for i, h in enumerate(xi.canonical):
        base = box.window([np.zeros_like(h), h])
        if base is None:
            continue
        rows.append(idx[base].ravel())
        cols.append(idx[SiteBox.shifted(base, h)].ravel())
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    allvals = np.concatenate([xi.canonical_array(i).reshape(-1, n) for i in hs_order(xi, box)])
    G = coo_matrix((np.arange(1, rows.size + 1), (rows, cols)), shape=(N, N)).tocsr()
    ncomp, labels = connected_components(G, directed=False)
    child_all, par_all = [], []
    for comp in range(ncomp):
        anchor = int(np.flatnonzero(labels == comp)[0])
        order, pred = breadth_first_order(G, anchor, directed=False, return_predecessors=True)
        child_all.append(order[1:])
        par_all.append(pred[order[1:]])
    child = np.concatenate(child_all)
    par = np.concatenate(par_all)
    fwd = np.asarray(G[par, child]).ravel()
    bwd = np.asarray(G[child, par]).ravel()
    incr = np.where((fwd > 0)[:, None], allvals[np.maximum(fwd, 1) - 1],
                    -allvals[np.maximum(bwd, 1) - 1])
    u = np.zeros((N, n))
    # relax along the tree; after d sweeps every site of depth <= d is final
    for _ in range(N):
        new = u[par] + xi.eps * incr
        if np.array_equal(new, u[child]):
            break
        u[child] = new
    return DisplacementField(box, u.reshape(tuple(box.shape) + (n,)), xi.crystal)


def translate_scale(xi: StrainField, x):
    """Cluster deformation ``(y, h) -> xi(x + eps y, h)`` on canonical cluster pairs.

    Returns an array of shape ``(n_pairs, n)`` ordered as
    :func:`cluster_pairs`.
    """
    pairs = cluster_pairs(xi.crystal)
    x = np.asarray(x, dtype=int)
    cl = xi.crystal.cluster
    if not np.all(xi.box.contains(x + cl)):
        raise ValueError(f"cluster around {tuple(int(v) for v in x)} is not contained in the box")
    return np.array([xi.value(x + y, h) for y, h in pairs])


_PAIR_CACHE = {}


def cluster_pairs(crystal):
    """Unordered cluster bonds as ``(y, h)`` with ``h`` canonical, deterministic order."""
    key = id(crystal)
    if key in _PAIR_CACHE and _PAIR_CACHE[key][0] is crystal:
        return _PAIR_CACHE[key][1]
    cl = {tuple(int(v) for v in c) for c in crystal.cluster}
    out = []
    for h in crystal.canonical_bonds():
        for y in crystal.cluster:
            if tuple(int(v) for v in y + h) in cl:
                out.append((y.copy(), h.copy()))
    _PAIR_CACHE[key] = (crystal, out)
    return out
