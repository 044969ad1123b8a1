"""Quadratic cluster energies, coercivity certification and the elastic tensor.

A cluster deformation is stored on the unordered cluster bonds returned by
:func:`fields.cluster_pairs` (one ``(y, h)`` per pair, ``h`` canonical), as an
array of shape ``(n_pairs, n)``.  Energies are quadratic forms ``x . M x`` on
the flattened array.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh, null_space

from .fields import SiteBox, StrainField, cluster_pairs


def _skew_basis(n):
    out = []
    for i, j in itertools.combinations(range(n), 2):
        S = np.zeros((n, n))
        S[i, j], S[j, i] = 1.0, -1.0
        out.append(S)
    return out


def _pair_index(crystal):
    pairs = cluster_pairs(crystal)
    idx = {}
    for p, (y, h) in enumerate(pairs):
        idx[(tuple(int(v) for v in y), tuple(int(v) for v in h))] = (p, 1)
        idx[(tuple(int(v) for v in y + h), tuple(int(-v) for v in h))] = (p, -1)
    return pairs, idx


def affine_cluster(crystal, A):
    """Cluster deformation ``xi^A(y, h) = A h`` (physical ``h``)."""
    pairs = cluster_pairs(crystal)
    H = np.array([h for _, h in pairs]) @ crystal.basis
    return H @ np.asarray(A, dtype=float).T


def affine_operator(crystal):
    """Matrix ``Phi`` with ``flat(xi^A) = Phi @ A.ravel()``."""
    n = crystal.dim
    cols = []
    for k in range(n * n):
        E = np.zeros(n * n)
        E[k] = 1.0
        cols.append(affine_cluster(crystal, E.reshape(n, n)).ravel())
    return np.array(cols).T


def cluster_triangles(crystal):
    """Triangles ``(y, a, b)`` inside the cluster whose cycles generate all
    cluster cycles: simplex 2-faces of every cell contained in the cluster,
    plus one two-edge detour closing each bond that is not a simplex edge.
    """
    cl = {tuple(int(v) for v in c) for c in crystal.cluster}
    edges = {tuple(e) for e in crystal.cover.edge_vectors()}
    faces = crystal.cover.faces(2)
    out = []
    corners = np.array(list(itertools.product([0, 1], repeat=crystal.dim)))
    for c in crystal.cluster:
        if not all(tuple(int(v) for v in c + k) in cl for k in corners):
            continue
        for f in faces:
            p = np.array(f, dtype=int) + c
            out.append((p[0], p[1] - p[0], p[2] - p[1]))
    for y, h in cluster_pairs(crystal):
        if tuple(int(v) for v in h) in edges:
            continue
        for a in sorted(edges):
            a = np.array(a)
            b = h - a
            if tuple(int(v) for v in b) in edges and tuple(int(v) for v in y + a) in cl:
                out.append((y.copy(), a, b))
                break
        else:
            raise ValueError(f"bond {tuple(h)} at {tuple(y)} has no two-edge detour in the cluster")
    return out


@dataclass
class ClusterEnergy:
    """Quadratic cluster energy ``E[x] = x . M x``.

    Attributes
    ----------
    crystal : BravaisCrystal
    matrix : (3P, 3P) symmetric array
    springs : dict or None
        ``{canonical h tuple: k_h}`` when built from longitudinal springs.
    kappa : float
        Weight of the triangle-incompatibility term.
    label : str
    """
    crystal: object
    matrix: np.ndarray
    springs: dict | None = None
    kappa: float = 0.0
    label: str = "custom"

    # -- constructors ------------------------------------------------------
    @classmethod
    def from_springs(cls, crystal, springs, kappa=1.0, label=None):
        """Longitudinal springs ``sum k_h (xi(y,h) . h/|h|)^2`` over cluster
        bonds, plus ``kappa`` times the squared circulation of each cluster
        triangle.

        The triangle term vanishes on discrete gradients, so it changes
        neither the elastic tensor nor the energy of exact fields; it makes
        the energy control the bond components transverse to ``h``.

        Parameters
        ----------
        springs : dict
            ``{h: k}`` with ``h`` a bond in lattice coordinates (either
            orientation).
        """
        n = crystal.dim
        pairs, idx = _pair_index(crystal)
        P = len(pairs)
        M = np.zeros((P * n, P * n))
        sp = {}
        for h, k in springs.items():
            h = np.asarray(h, dtype=int)
            key = tuple(int(v) for v in (h if tuple(h) > tuple(-h) else -h))
            sp[key] = float(k)
        for p, (y, h) in enumerate(pairs):
            k = sp.get(tuple(int(v) for v in h), 0.0)
            if k == 0.0:
                continue
            e = h @ crystal.basis
            e = e / np.linalg.norm(e)
            M[p * n:(p + 1) * n, p * n:(p + 1) * n] += k * np.outer(e, e)
        if kappa:
            for y, a, b in cluster_triangles(crystal):
                row = np.zeros(P)
                for start, step in ((y, a), (y + a, b), (y + a + b, -(a + b))):
                    q, s = idx[(tuple(int(v) for v in start), tuple(int(v) for v in step))]
                    row[q] += s
                M += kappa * np.kron(np.outer(row, row), np.eye(n))
        M = 0.5 * (M + M.T)
        return cls(crystal, M, sp, float(kappa), label or "springs")

    @classmethod
    def shells(cls, crystal, stiffness, kappa=1.0, label=None):
        """Springs by bond length: ``stiffness = {radius: k}``."""
        sp = {}
        for h in crystal.canonical_bonds():
            r = np.linalg.norm(h @ crystal.basis)
            for rad, k in stiffness.items():
                if abs(r - rad) < 1e-9:
                    sp[tuple(int(v) for v in h)] = k
        return cls.from_springs(crystal, sp, kappa, label)

    @classmethod
    def from_matrix(cls, crystal, M, label="matrix"):
        M = np.asarray(M, dtype=float)
        if not np.allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max())):
            raise ValueError("energy matrix is not symmetric")
        return cls(crystal, 0.5 * (M + M.T), None, 0.0, label)

    @classmethod
    def reference(cls, crystal):
        """The reference energy as a :class:`ClusterEnergy`."""
        return cls(crystal, reference_matrix(crystal), None, 0.0, "reference")

    # -- evaluation --------------------------------------------------------
    @property
    def n_pairs(self):
        return self.matrix.shape[0] // self.crystal.dim

    def energy(self, xc):
        x = np.asarray(xc, dtype=float).ravel()
        return float(x @ self.matrix @ x)

    def scaled(self, lam):
        sp = None if self.springs is None else {h: lam * k for h, k in self.springs.items()}
        return ClusterEnergy(self.crystal, lam * self.matrix, sp, lam * self.kappa,
                             f"{lam}*{self.label}")

    def to_dict(self):
        d = {"label": self.label, "kappa": self.kappa}
        if self.springs is not None:
            d["springs"] = [{"h": list(h), "k": k} for h, k in self.springs.items()]
        return d


def reference_matrix(crystal):
    """Matrix of ``E0[x] = min_S sum_{C0_N} |x(y,h) - S h|^2`` (skew ``S``).

    ``C0`` is the union of simplex vertices; sums run over ordered pairs, so
    each unordered cover bond appears twice.
    """
    n = crystal.dim
    pairs = cluster_pairs(crystal)
    P = len(pairs)
    c0 = {tuple(int(v) for v in x) for s in crystal.cover.simplices for x in s}
    sel = [p for p, (y, h) in enumerate(pairs)
           if tuple(int(v) for v in y) in c0 and tuple(int(v) for v in y + h) in c0]
    D = np.zeros(P * n)
    for p in sel:
        D[p * n:(p + 1) * n] = 2.0
    # skew fit: columns are flat(xi^S) for a skew basis, restricted to C0
    Sk = [affine_cluster(crystal, S).ravel() * (D > 0) for S in _skew_basis(n)]
    R = np.array(Sk).T  # (3P, nskew)
    G = R.T @ (D[:, None] * R)
    W = D[:, None] * R
    return np.diag(D) - W @ np.linalg.solve(G, W.T)


def reference_energy(crystal, xc):
    """``E0`` of a cluster deformation (closed-form skew least squares)."""
    n = crystal.dim
    pairs = cluster_pairs(crystal)
    c0 = {tuple(int(v) for v in x) for s in crystal.cover.simplices for x in s}
    X, H = [], []
    xc = np.asarray(xc, dtype=float).reshape(len(pairs), n)
    for p, (y, h) in enumerate(pairs):
        if tuple(int(v) for v in y) in c0 and tuple(int(v) for v in y + h) in c0:
            X.append(xc[p])
            H.append(h @ crystal.basis)
    X, H = np.array(X), np.array(H)
    basis = _skew_basis(n)
    # residual r(s) = X - H S(s)^T, linear in s
    A = np.stack([(H @ S.T).ravel() for S in basis], axis=1)
    s, *_ = np.linalg.lstsq(A, X.ravel(), rcond=None)
    r = X.ravel() - A @ s
    return float(2.0 * r @ r)


@dataclass
class CertificationReport:
    alpha: float
    invariance_residual: float
    upper_constant: float
    passed: bool
    witness: np.ndarray | None = None
    label: str = ""

    def to_json(self):
        return json.dumps({"label": self.label, "alpha": self.alpha,
                           "invariance_residual": self.invariance_residual,
                           "upper_constant": self.upper_constant, "passed": self.passed})


def coercivity_constant(ce: ClusterEnergy, tol=1e-10):
    """Largest ``alpha`` with ``alpha E0 <= E`` and a minimizing deformation.

    Directions invisible to ``E0`` are minimized out (Schur complement), so
    the value is the true infimum of ``E / E0`` over deformations with
    ``E0 > 0``.
    """
    M = ce.matrix
    M0 = reference_matrix(ce.crystal)
    w, V = eigh(M0)
    scale = max(w.max(), 1.0)
    pos = w > tol * scale
    Y, Z = V[:, pos], V[:, ~pos]
    Myy = Y.T @ M @ Y
    Myz = Y.T @ M @ Z
    Mzz = Z.T @ M @ Z
    X = np.linalg.lstsq(Mzz, Myz.T, rcond=None)[0] if Z.shape[1] else np.zeros((0, Y.shape[1]))
    Meff = Myy - Myz @ X
    Meff = 0.5 * (Meff + Meff.T)
    lam, U = eigh(Meff, Y.T @ M0 @ Y)
    v = U[:, 0]
    xi = Y @ v - (Z @ (X @ v) if Z.shape[1] else 0.0)
    alpha = float(lam[0])
    if abs(alpha) < 1e-9:
        alpha = 0.0
    return alpha, xi.reshape(-1, ce.crystal.dim)


def verify_cluster_energy(ce: ClusterEnergy, n_samples=100, seed=0):
    """Rotation invariance, coercivity and boundedness of a cluster energy."""
    M = ce.matrix
    if not np.allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise ValueError("energy matrix is not symmetric")
    rng = np.random.default_rng(seed)
    n = ce.crystal.dim
    res = 0.0
    for _ in range(n_samples):
        x = rng.normal(size=(ce.n_pairs, n))
        S = rng.normal(size=(n, n))
        S = S - S.T
        e0 = ce.energy(x)
        e1 = ce.energy(x + affine_cluster(ce.crystal, S))
        res = max(res, abs(e1 - e0) / (abs(e0) + 1e-300))
    alpha, wit = coercivity_constant(ce)
    # |x|^2 over ordered pairs is twice the stored sum
    c_up = float(eigh(M, eigvals_only=True)[-1]) / 2.0
    passed = alpha > 0 and res <= 1e-10
    return CertificationReport(alpha, res, c_up, passed, None if alpha > 0 else wit, ce.label)


@dataclass
class ElasticTensor:
    C: np.ndarray

    def contract(self, A):
        return np.einsum("ijkl,kl->ij", self.C, A)

    def energy_density(self, A):
        A = np.asarray(A, dtype=float)
        return 0.5 * float(np.einsum("ij,ijkl,kl->", A, self.C, A))

    def voigt(self):
        pairs = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)]
        return np.array([[self.C[i, j, k, l] for k, l in pairs] for i, j in pairs])

    def min_sym_eigenvalue(self):
        """Smallest eigenvalue of ``A -> C A`` on symmetric matrices
        (orthonormal basis of Sym)."""
        n = self.C.shape[0]
        basis = []
        for i in range(n):
            for j in range(i, n):
                E = np.zeros((n, n))
                if i == j:
                    E[i, i] = 1.0
                else:
                    E[i, j] = E[j, i] = 1 / np.sqrt(2)
                basis.append(E)
        G = np.array([[np.sum(self.contract(a) * b) for b in basis] for a in basis])
        return float(np.linalg.eigvalsh(G)[0])

    def scaled(self, lam):
        return ElasticTensor(lam * self.C)


def isotropic_tensor(mu=1.0, nu=0.3):
    lam = 2 * mu * nu / (1 - 2 * nu)
    d = np.eye(3)
    C = (lam * np.einsum("ij,kl->ijkl", d, d)
         + mu * (np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d)))
    return ElasticTensor(C)


def cubic_tensor(c11, c12, c44):
    C = np.zeros((3, 3, 3, 3))
    for i in range(3):
        for j in range(3):
            for k in range(3):
                for l in range(3):
                    if i == j == k == l:
                        C[i, j, k, l] = c11
                    elif i == j and k == l:
                        C[i, j, k, l] = c12
                    elif (i == k and j == l) or (i == l and j == k):
                        C[i, j, k, l] = c44
    return ElasticTensor(C)


def elastic_tensor(crystal, ce: ClusterEnergy, report: CertificationReport | None = None):
    """``C`` from ``1/2 C A . A = E[xi^A] / vol(T_*)`` by polarization.

    Parameters
    ----------
    report : CertificationReport
        Certification of ``ce``; computed when omitted and required to pass.
    """
    if report is None:
        report = verify_cluster_energy(ce)
    if not report.passed:
        raise ValueError(f"cluster energy '{ce.label}' is not certified (alpha = {report.alpha})")
    n = crystal.dim
    vol = crystal.cover.cell_volume
    Phi = affine_operator(crystal)
    Q = Phi.T @ ce.matrix @ Phi  # E[xi^A] = a . Q a
    C = (2.0 / vol) * Q
    C = 0.5 * (C + C.T)
    return ElasticTensor(C.reshape(n, n, n, n))


# ---------------------------------------------------------------------------
# total energy

def cluster_centers(box: SiteBox, crystal, region: SiteBox | None = None):
    """Window (local slices of ``box``) of centers ``x`` with ``x + C`` in ``region``."""
    region = region or box
    w = region.window(crystal.cluster)
    if w is None:
        return None
    off = np.asarray(region.lo) - np.asarray(box.lo)
    return tuple(slice(s.start + int(o), s.stop + int(o)) for s, o in zip(w, off))


def n_cluster_centers(box, crystal, region=None):
    w = cluster_centers(box, crystal, region)
    return 0 if w is None else int(np.prod([s.stop - s.start for s in w]))


def _window_sum(arr, centers, offset):
    sl = SiteBox.shifted(centers, offset)
    return float(np.sum(arr[sl]))


def energy_map(xi: StrainField, ce: ClusterEnergy, region: SiteBox | None = None):
    """Per-center cluster energies ``E_C[tau^x xi]`` (no ``eps^n`` factor).

    Returns
    -------
    centers : tuple of slices or None
        Local window of cluster centers in ``xi.box``.
    values : array over the window
    """
    crystal = xi.crystal
    centers = cluster_centers(xi.box, crystal, region)
    if centers is None:
        return None, np.zeros((0,) * crystal.dim)
    out = np.zeros(tuple(s.stop - s.start for s in centers))
    for s, ys in _terms(xi, ce):
        for y in ys:
            out += s[SiteBox.shifted(centers, y)]
    return centers, out


def _terms(xi, ce):
    """Yield ``(site array, cluster offsets)``: each array is summed over the
    centers shifted by each offset."""
    crystal = xi.crystal
    if ce.springs is None:
        raise ValueError("per-term evaluation needs a spring energy")
    by_h = {}
    for y, h in cluster_pairs(crystal):
        by_h.setdefault(tuple(int(v) for v in h), []).append(y)
    for h, ys in by_h.items():
        k = ce.springs.get(h, 0.0)
        if k == 0.0:
            continue
        e = np.array(h) @ crystal.basis
        e = e / np.linalg.norm(e)
        full = xi.bond_full(np.array(h))
        s = k * (full @ e) ** 2
        del full
        yield s, ys
    if ce.kappa:
        shapes = {}
        for y, a, b in cluster_triangles(crystal):
            shapes.setdefault((tuple(int(v) for v in a), tuple(int(v) for v in b)), []).append(y)
        for (a, b), ys in shapes.items():
            c = triangle_array(xi, np.array(a), np.array(b))
            yield ce.kappa * np.sum(c ** 2, axis=-1), ys


def total_energy(xi: StrainField, ce: ClusterEnergy, region: SiteBox | None = None):
    """``E_eps[xi, region] = sum_{x in clust} eps^n E_C[tau^x xi]``.

    Spring energies are accumulated term by term with array slices, so only
    one bond array is alive at a time; generic matrices gather every cluster
    (small boxes only).
    """
    crystal = xi.crystal
    centers = cluster_centers(xi.box, crystal, region)
    if centers is None:
        return 0.0
    scale = xi.eps ** crystal.dim
    if ce.springs is None:
        return scale * _generic_total(xi, ce, centers)
    total = 0.0
    for s, ys in _terms(xi, ce):
        for y in ys:
            total += _window_sum(s, centers, y)
    return scale * total


def triangle_array(xi, a, b):
    """``xi(z,a) + xi(z+a,b) - xi(z,a+b)`` on the full box (NaN outside)."""
    A = xi.bond_full(a)
    c = A.copy()
    del A
    B = xi.bond_full(b)
    c[...] = c + _shift(B, a)
    del B
    H = xi.bond_full(a + b)
    c -= H
    return c


def _shift(arr, o):
    """``out[z] = arr[z + o]`` with NaN outside."""
    out = np.full_like(arr, np.nan)
    src, dst = [], []
    for d, n in zip(o, arr.shape[:len(o)]):
        d = int(d)
        if d >= 0:
            src.append(slice(d, n))
            dst.append(slice(0, n - d))
        else:
            src.append(slice(0, n + d))
            dst.append(slice(-d, n))
    out[tuple(dst)] = arr[tuple(src)]
    return out


def _generic_total(xi, ce, centers):
    crystal = xi.crystal
    pairs = cluster_pairs(crystal)
    n = crystal.dim
    cols = []
    for y, h in pairs:
        full = xi.bond_full(h)
        cols.append(full[SiteBox.shifted(centers, y)].reshape(-1, n))
    X = np.concatenate(cols, axis=1)  # (n_centers, 3P)
    return float(np.sum(np.einsum("ci,ij,cj->c", X, ce.matrix, X)))


def total_energy_bruteforce(xi, ce, region=None):
    """Reference implementation: loop over centers with ``translate_scale``."""
    from .fields import translate_scale
    centers = cluster_centers(xi.box, xi.crystal, region)
    if centers is None:
        return 0.0
    lo = np.asarray(xi.box.lo)
    tot = 0.0
    for idx in itertools.product(*[range(s.start, s.stop) for s in centers]):
        tot += ce.energy(translate_scale(xi, lo + np.array(idx)))
    return xi.eps ** xi.crystal.dim * tot


def affine_energy_closed_form(crystal, box, ce, A, region=None):
    """``#clust * eps^n * E_C[xi^A]`` for the affine field ``xi^A``."""
    return (n_cluster_centers(box, crystal, region) * box.eps ** crystal.dim
            * ce.energy(affine_cluster(crystal, A)))


def default_energy(crystal, k1=1.0, k2=0.5, kappa=1.0):
    """Nearest plus next-nearest longitudinal springs on simple cubic."""
    return ClusterEnergy.shells(crystal, {1.0: k1, np.sqrt(2): k2}, kappa=kappa,
                                label=f"sc NN+NNN springs (k1={k1}, k2={k2}, kappa={kappa})")


def nn_energy(crystal, k1=1.0, kappa=1.0):
    return ClusterEnergy.shells(crystal, {1.0: k1}, kappa=kappa,
                                label=f"sc NN springs (k1={k1}, kappa={kappa})")

