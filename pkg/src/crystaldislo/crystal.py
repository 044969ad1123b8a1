"""Bravais lattices, bond sets, clusters and simplicial covers.

Lattice points are stored as integer coordinate vectors with respect to the
basis (rows of ``basis``); physical positions are ``k @ basis``.  All
membership questions (lattice, bonds, cluster, dual lattice) are answered in
exact integer or rational arithmetic.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

_TOL = 1e-9


class CrystalError(ValueError):
    """Raised when a crystal, cover or slip-system set is inconsistent."""


def _t(v):
    return tuple(int(x) for x in v)


# ---------------------------------------------------------------------------
# exact helpers

def to_fraction(x, max_den=10**6):
    """Nearest rational with bounded denominator (exact for dyadic inputs)."""
    return Fraction(x).limit_denominator(max_den)


def fraction_matrix(a):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    return [[to_fraction(v) for v in row] for row in a]


def _frac_inverse(m):
    """Inverse of a square matrix of Fractions by Gauss-Jordan elimination."""
    n = len(m)
    aug = [list(row) + [Fraction(int(i == j)) for j in range(n)] for i, row in enumerate(m)]
    for c in range(n):
        piv = next((r for r in range(c, n) if aug[r][c] != 0), None)
        if piv is None:
            raise CrystalError("degenerate basis: vectors are linearly dependent")
        aug[c], aug[piv] = aug[piv], aug[c]
        p = aug[c][c]
        aug[c] = [v / p for v in aug[c]]
        for r in range(n):
            if r != c and aug[r][c] != 0:
                f = aug[r][c]
                aug[r] = [a - f * b for a, b in zip(aug[r], aug[c])]
    return [row[n:] for row in aug]


def hermite_rows(vectors):
    """Row-style Hermite normal form of an integer matrix.

    Returns the nonzero rows, which form a basis of the integer row span.
    """
    a = [list(map(int, v)) for v in vectors]
    if not a:
        return []
    ncol = len(a[0])
    out = []
    row = 0
    for c in range(ncol):
        # bring gcd of column c (rows >= row) to position `row`
        while True:
            nz = [r for r in range(row, len(a)) if a[r][c] != 0]
            if not nz:
                break
            piv = min(nz, key=lambda r: abs(a[r][c]))
            a[row], a[piv] = a[piv], a[row]
            done = True
            for r in range(row + 1, len(a)):
                if a[r][c] != 0:
                    q = a[r][c] // a[row][c]
                    a[r] = [x - q * y for x, y in zip(a[r], a[row])]
                    if a[r][c] != 0:
                        done = False
            if done:
                break
        if row < len(a) and a[row][c] != 0:
            if a[row][c] < 0:
                a[row] = [-x for x in a[row]]
            for r in range(row):
                q = a[r][c] // a[row][c]
                a[r] = [x - q * y for x, y in zip(a[r], a[row])]
            row += 1
        if row == len(a):
            break
    out = [r for r in a[:row] if any(r)]
    return out


def integer_solve(basis_rows, v):
    """Solve ``v = sum_j c_j basis_rows[j]`` for integer c (exact).

    Returns None when no integer (or no) solution exists.
    """
    B = [[Fraction(int(x)) for x in r] for r in basis_rows]
    k = len(B)
    n = len(B[0])
    # least-squares normal equations are exact for a consistent system
    G = [[sum(B[i][t] * B[j][t] for t in range(n)) for j in range(k)] for i in range(k)]
    rhs = [sum(B[i][t] * Fraction(int(v[t])) for t in range(n)) for i in range(k)]
    Gi = _frac_inverse(G)
    c = [sum(Gi[i][j] * rhs[j] for j in range(k)) for i in range(k)]
    back = [sum(c[j] * B[j][t] for j in range(k)) for t in range(n)]
    if any(back[t] != int(v[t]) for t in range(n)):
        return None
    if any(x.denominator != 1 for x in c):
        return None
    return [int(x) for x in c]


# ---------------------------------------------------------------------------
# data types

@dataclass(frozen=True)
class SimplicialCover:
    """Simplices of one unit cell, in integer lattice coordinates.

    Attributes
    ----------
    simplices : (n_simplices, n+1, n) int array
        Vertex lists; simplex 0 is the reference simplex ``T_0``.
    volumes : (n_simplices,) float array
        Physical volumes.
    permutations : list of tuple
        Ordering permutation defining each simplex.
    """
    simplices: np.ndarray
    volumes: np.ndarray
    permutations: list

    @property
    def n_simplices(self):
        return len(self.simplices)

    @property
    def cell_volume(self):
        return float(np.sum(self.volumes))

    def edge_vectors(self):
        """All distinct edge differences (both orientations) as int tuples."""
        out = set()
        for s in self.simplices:
            for a, b in itertools.combinations(range(len(s)), 2):
                d = tuple(int(v) for v in s[b] - s[a])
                out.add(d)
                out.add(tuple(-v for v in d))
        return sorted(out)

    def faces(self, dim=2):
        """Distinct ``dim``-faces of the cell's simplices as sorted vertex tuples."""
        out = set()
        for s in self.simplices:
            for comb in itertools.combinations(range(len(s)), dim + 1):
                out.add(tuple(sorted(tuple(int(v) for v in s[i]) for i in comb)))
        return sorted(out)


@dataclass(frozen=True)
class BravaisCrystal:
    """Discrete crystal: lattice basis, bonds, cluster, cover and constants.

    ``bonds`` and ``cluster`` hold integer lattice coordinates.  ``k_star`` is
    the radius used for the core region and for elementary paths.
    """
    basis: np.ndarray
    bonds: np.ndarray
    cluster: np.ndarray
    cover: SimplicialCover | None
    d_cell: float
    d_cluster: float
    k_star: float
    name: str = "crystal"
    _bond_index: dict = field(default=None, repr=False, compare=False)

    @property
    def dim(self):
        return self.basis.shape[0]

    def to_physical(self, k):
        return np.asarray(k, dtype=float) @ self.basis

    def bond_index(self, h):
        """Index of bond ``h`` (integer coordinates) in ``bonds``, or -1."""
        return self._bond_index.get(tuple(int(v) for v in h), -1)

    def has_bond(self, h):
        return self.bond_index(h) >= 0

    def canonical_bonds(self):
        """One representative per pair ``{h, -h}``: lexicographically positive."""
        return np.array([h for h in self.bonds if tuple(h) > tuple(-h)], dtype=int)

    def cluster_bonds(self):
        """Ordered pairs ``(y, h)`` with ``y, y+h`` in the cluster and ``h`` a bond."""
        cl = {tuple(c) for c in self.cluster}
        out = []
        for y in self.cluster:
            for h in self.bonds:
                if tuple(y + h) in cl:
                    out.append((y.copy(), h.copy()))
        return out

    def dual_contains(self, m):
        """Exact test ``m . x in Z`` for all lattice vectors ``x``."""
        mf = [to_fraction(v) for v in np.asarray(m, dtype=float)]
        for row in fraction_matrix(self.basis):
            s = sum(a * b for a, b in zip(row, mf))
            if s.denominator != 1:
                return False
        return True

    def lattice_coords(self, x):
        """Exact integer coordinates of a physical lattice vector, or None."""
        Bi = _frac_inverse(fraction_matrix(self.basis))
        xf = [to_fraction(v) for v in np.asarray(x, dtype=float)]
        n = len(xf)
        k = [sum(xf[i] * Bi[i][j] for i in range(n)) for j in range(n)]
        if any(v.denominator != 1 for v in k):
            return None
        return np.array([int(v) for v in k], dtype=int)

    def to_dict(self):
        d = {
            "name": self.name,
            "basis": self.basis.tolist(),
            "bonds": self.bonds.tolist(),
            "cluster": self.cluster.tolist(),
            "d_cell": self.d_cell,
            "d_cluster": self.d_cluster,
            "k_star": self.k_star,
        }
        if self.cover is not None:
            d["cover"] = {
                "simplices": self.cover.simplices.tolist(),
                "volumes": self.cover.volumes.tolist(),
            }
        return d


# ---------------------------------------------------------------------------
# construction

def lattice_ball(basis, cutoff, include_zero=True):
    """Integer coordinates of lattice vectors with ``|x| <= cutoff``.

    Sorted by length, then lexicographically, so the output is deterministic.
    """
    B = np.asarray(basis, dtype=float)
    Binv = np.linalg.inv(B)
    # |k_i| = |x . Binv[:, i]| <= cutoff * |Binv[:, i]|
    kmax = np.floor(cutoff * np.linalg.norm(Binv, axis=0) + _TOL).astype(int)
    rng = [np.arange(-m, m + 1) for m in kmax]
    K = np.array(np.meshgrid(*rng, indexing="ij")).reshape(len(kmax), -1).T
    X = K @ B
    r = np.linalg.norm(X, axis=1)
    keep = r <= cutoff + _TOL
    if not include_zero:
        keep &= np.any(K != 0, axis=1)
    K, r = K[keep], r[keep]
    order = np.lexsort(tuple(K[:, i] for i in range(K.shape[1] - 1, -1, -1)) + (np.round(r, 9),))
    return K[order].astype(int)


def build_crystal(basis, bond_cutoff, cluster_cutoff, *, bonds=None, cluster=None,
                  cover=True, name="crystal"):
    """Construct a discrete crystal from cutoff radii.

    Parameters
    ----------
    basis : (n, n) array_like
        Lattice basis vectors as rows.
    bond_cutoff, cluster_cutoff : float
        Bonds are the nonzero lattice vectors with ``|h| <= bond_cutoff``; the
        cluster is every lattice vector with ``|x| <= cluster_cutoff``.
    bonds, cluster : array_like of int, optional
        Explicit lists in lattice coordinates, overriding the cutoffs.
    cover : bool or SimplicialCover
        ``True`` attaches the Freudenthal cover (and raises if the bond or
        cluster sets cannot carry it), ``False`` skips the cover.

    Returns
    -------
    BravaisCrystal
    """
    B = np.atleast_2d(np.asarray(basis, dtype=float))
    n = B.shape[0]
    if B.shape != (n, n):
        raise CrystalError("basis must be square")
    if abs(np.linalg.det(B)) < 1e-12:
        raise CrystalError("degenerate basis: vectors are linearly dependent")
    if not (bond_cutoff > 0 and cluster_cutoff >= bond_cutoff):
        raise CrystalError("need cluster_cutoff >= bond_cutoff > 0")
    N = lattice_ball(B, bond_cutoff, include_zero=False) if bonds is None else np.asarray(bonds, int)
    C = lattice_ball(B, cluster_cutoff, include_zero=True) if cluster is None else np.asarray(cluster, int)
    Nset = {tuple(h) for h in N}
    if any(tuple(-h) not in Nset for h in N):
        raise CrystalError("bond set is not symmetric")
    if tuple([0] * n) in Nset:
        raise CrystalError("bond set contains 0")
    if not any(np.all(C == 0, axis=1)):
        raise CrystalError("cluster does not contain 0")
    d_cluster = 2.0 * float(np.max(np.linalg.norm(C @ B, axis=1)))
    corners = np.array(list(itertools.product([0, 1], repeat=n)))
    d_cell = 2.0 * float(np.max(np.linalg.norm(corners @ B, axis=1)))
    cr = BravaisCrystal(B, N, C, None, d_cell, d_cluster, d_cluster, name,
                        {tuple(int(v) for v in h): i for i, h in enumerate(N)})
    if cover is False or cover is None:
        return cr
    cov = freudenthal_cover(cr) if cover is True else validate_cover(cr, cover)
    k_star = _k_star(B, N, cov, d_cluster)
    return BravaisCrystal(B, N, C, cov, d_cell, d_cluster, k_star, name, cr._bond_index)


def _freudenthal_simplices(n):
    perms = list(itertools.permutations(range(n)))
    simp = []
    for sig in perms:
        # T_sigma = {lambda_sig(0) <= ... <= lambda_sig(n-1)}: coordinates are
        # switched on from the largest one downwards
        verts = [np.zeros(n, dtype=int)]
        v = np.zeros(n, dtype=int)
        for i in reversed(sig):
            v = v.copy()
            v[i] = 1
            verts.append(v)
        simp.append(np.array(verts))
    return perms, np.array(simp)


def freudenthal_cover(crystal):
    """Freudenthal partition of the unit cell into ``n!`` simplices.

    Raises
    ------
    CrystalError
        If some simplex edge is not a bond or some vertex is not in the
        cluster; the message names the offending pair.
    """
    perms, simp = _freudenthal_simplices(crystal.dim)
    vol = np.array([abs(np.linalg.det((s[1:] - s[0]) @ crystal.basis)) for s in simp])
    vol = vol / math.factorial(crystal.dim)
    cov = SimplicialCover(simp, vol, perms)
    return validate_cover(crystal, cov)


def validate_cover(crystal, cover):
    """Check bond/cluster membership, partition of the cell and conformity."""
    n = crystal.dim
    cl = {tuple(c) for c in crystal.cluster}
    for s in cover.simplices:
        for v in s:
            if tuple(v) not in cl:
                raise CrystalError(f"cover vertex {_t(v)} is not in the cluster")
        for a, b in itertools.combinations(range(n + 1), 2):
            h = s[b] - s[a]
            if not crystal.has_bond(h):
                raise CrystalError(
                    f"edge {_t(s[a])}-{_t(s[b])} needs bond {_t(h)} which is missing")
    cell = abs(np.linalg.det(crystal.basis))
    if abs(cover.cell_volume - cell) > 1e-12 * max(1.0, cell):
        raise CrystalError("simplex volumes do not add up to the cell volume")
    check_conformity(cover)
    return cover


def check_conformity(cover):
    """Face matching on the block of neighbouring cells.

    Every codimension-one face of a central-cell simplex lies in the interior
    of the 3^n block of translated cells, so it must belong to exactly two
    simplices.  Lattice coordinates make the vertex-set comparison exact.
    """
    simp = cover.simplices
    n = simp.shape[2]
    counts = {}
    for t in itertools.product([-1, 0, 1], repeat=n):
        t = np.array(t)
        for s in simp:
            for comb in itertools.combinations(range(n + 1), n):
                key = tuple(sorted(tuple(int(v) for v in s[i] + t) for i in comb))
                counts[key] = counts.get(key, 0) + 1
    for s in simp:
        for comb in itertools.combinations(range(n + 1), n):
            key = tuple(sorted(tuple(int(v) for v in s[i]) for i in comb))
            if counts[key] != 2:
                raise CrystalError(f"non-conforming face {key} (shared {counts[key]} times)")
    return True


def point_in_simplex(p, verts, tol=1e-12):
    """Barycentric membership of physical point ``p`` in a simplex."""
    v = np.asarray(verts, dtype=float)
    M = (v[1:] - v[0]).T
    lam = np.linalg.solve(M, np.asarray(p, dtype=float) - v[0])
    lam = np.concatenate([[1 - lam.sum()], lam])
    return bool(np.all(lam >= -tol)), lam


def reference_matrix(crystal):
    """Matrix ``A`` with columns the nonzero vertices of ``T_0`` (lattice coords)."""
    s0 = crystal.cover.simplices[0]
    return s0[1:].T.astype(int)


def _k_star(basis, bonds, cover, d_cluster):
    s0 = cover.simplices[0]
    A = (s0[1:] @ basis).T  # physical columns a_i
    hmax = float(np.max(np.linalg.norm(bonds @ basis, axis=1)))
    # Euclidean (Frobenius) matrix norms
    cond = np.linalg.norm(A) * np.linalg.norm(np.linalg.inv(A))
    return max(1.0 + cond * hmax, d_cluster)


def elementary_path(crystal, h):
    """Elementary lattice path from 0 to the bond ``h``.

    The path walks ``|z_1|`` steps along the first edge of ``T_0``, then
    ``|z_2|`` along the second, and so on, where ``z`` solves ``A z = h``.

    Returns
    -------
    (K+1, n) int array
        Path vertices in lattice coordinates, from 0 to h.
    """
    h = np.asarray(h, dtype=int)
    if not crystal.has_bond(h):
        raise CrystalError(f"{_t(h)} is not a bond")
    A = reference_matrix(crystal)
    z = np.linalg.solve(A.astype(float), h.astype(float))
    zi = np.rint(z).astype(int)
    if not np.array_equal(A @ zi, h):
        raise CrystalError("reference simplex is not unimodular")
    pts = [np.zeros_like(h)]
    for i in range(len(zi)):
        step = np.sign(zi[i]) * A[:, i]
        for _ in range(abs(zi[i])):
            pts.append(pts[-1] + step)
    return np.array(pts, dtype=int)


# ---------------------------------------------------------------------------
# slip systems

@dataclass(frozen=True)
class SlipSystemSet:
    """Validated slip systems with a generating set of the Burgers lattice.

    ``burgers`` and ``normals`` are physical vectors (rows).  ``generators``
    are row indices into a list of distinct Burgers vectors; ``witnesses[j]``
    lists the slip-system indices whose normals certify completeness for
    generator ``j``.
    """
    burgers: np.ndarray
    normals: np.ndarray
    generators: np.ndarray
    generator_coords: np.ndarray
    witnesses: list
    complete: bool

    @property
    def n_systems(self):
        return len(self.burgers)

    def coefficients(self, crystal, b):
        """Integer coefficients of ``b`` in the generator basis (exact)."""
        k = crystal.lattice_coords(b)
        if k is None:
            return None
        return integer_solve(self.generator_coords.tolist(), k)

    def system_for(self, j, h):
        """A slip system with Burgers vector ``generators[j]`` and ``m.h != 0``."""
        for l in self.witnesses[j]:
            if abs(float(self.normals[l] @ h)) > _TOL:
                return l
        return None


def validate_slip_systems(crystal, systems):
    """Check slip systems and extract complete generators of the Burgers lattice.

    Parameters
    ----------
    crystal : BravaisCrystal
    systems : sequence of (b, m)
        Burgers vectors and plane normals as physical vectors.

    Returns
    -------
    SlipSystemSet
    """
    n = crystal.dim
    bs, ms, bk = [], [], []
    for idx, (b, m) in enumerate(systems):
        b = np.asarray(b, dtype=float)
        m = np.asarray(m, dtype=float)
        if np.allclose(b, 0) or np.allclose(m, 0):
            raise CrystalError(f"system {idx}: zero Burgers vector or normal")
        dot = sum(to_fraction(x) * to_fraction(y) for x, y in zip(b, m))
        if dot != 0:
            raise CrystalError(f"system {idx}: b.m = {dot} != 0")
        if not crystal.dual_contains(m):
            raise CrystalError(f"system {idx}: normal {m.tolist()} is not in the dual lattice")
        k = crystal.lattice_coords(b)
        if k is None:
            raise CrystalError(f"system {idx}: Burgers vector {b.tolist()} is not a lattice vector")
        bs.append(b)
        ms.append(m)
        bk.append(k)
    bs, ms, bk = np.array(bs), np.array(ms), np.array(bk, dtype=int)

    hnf = hermite_rows(bk.tolist())
    rank = len(hnf)
    gram = np.array(hnf, dtype=float)
    covol = math.sqrt(abs(np.linalg.det(gram @ gram.T)))

    # distinct directions up to sign, each with its supporting systems
    dirs = []
    for i, k in enumerate(bk):
        for d in dirs:
            if np.array_equal(d["k"], k) or np.array_equal(d["k"], -k):
                d["sys"].append(i)
                break
        else:
            dirs.append({"k": k, "sys": [i]})
    for d in dirs:
        N = ms[d["sys"]]
        d["ok"] = np.linalg.matrix_rank(N, tol=1e-9) >= n - 1
        d["wit"] = d["sys"]

    good = [i for i, d in enumerate(dirs) if d["ok"]]
    chosen = None
    for comb in itertools.combinations(good, rank):
        K = np.array([dirs[i]["k"] for i in comb], dtype=float)
        if np.linalg.matrix_rank(K) < rank:
            continue
        if abs(math.sqrt(abs(np.linalg.det(K @ K.T))) - covol) < 1e-9:
            chosen = comb
            break
    complete = chosen is not None
    if not complete:
        bad = [_t(d["k"]) for d in dirs if not d["ok"]]
        raise CrystalError(
            "slip systems are not complete: no generating set of Burgers vectors "
            f"with {n - 1} independent normals each (lacking: {bad})")
    gens = np.array([dirs[i]["k"] for i in chosen], dtype=int)
    wit = [dirs[i]["wit"] for i in chosen]
    return SlipSystemSet(bs, ms, np.array(chosen), gens, wit, complete)


def generator_vectors(crystal, slips):
    """Physical generator vectors ``b_hat_j``."""
    return slips.generator_coords @ crystal.basis


# ---------------------------------------------------------------------------
# common fixtures

def simple_cubic(bond_cutoff=math.sqrt(3), cluster_cutoff=math.sqrt(3), **kw):
    return build_crystal(np.eye(3), bond_cutoff, cluster_cutoff, name="sc", **kw)


def fcc(bond_cutoff=1 / math.sqrt(2), cluster_cutoff=None, cover=False, **kw):
    """Primitive FCC lattice; nearest-neighbour bonds cannot carry the
    Freudenthal cover of the primitive cell, hence ``cover=False`` default."""
    B = 0.5 * np.array([[0, 1, 1], [1, 0, 1], [1, 1, 0]], dtype=float)
    return build_crystal(B, bond_cutoff, cluster_cutoff or bond_cutoff, name="fcc",
                         cover=cover, **kw)


def cubic_slip_systems():
    e = np.eye(3)
    return [(e[i], e[j]) for i in range(3) for j in range(3) if i != j]


def fcc_slip_systems():
    """The twelve 1/2<110>{111} systems."""
    out = []
    for m in [(1, 1, 1), (-1, 1, 1), (1, -1, 1), (1, 1, -1)]:
        m = np.array(m, dtype=float)
        for b in [(0, 1, 1), (1, 0, 1), (1, 1, 0), (0, 1, -1), (1, 0, -1), (1, -1, 0)]:
            b = 0.5 * np.array(b, dtype=float)
            if b @ m == 0:
                out.append((b, m))
    return out
