"""Lattice configurations realizing a prescribed dislocation measure.

Each segment carrying ``theta = sum_j c_j bhat_j`` spawns one half-strip per
generator, ``segment + [0, inf) bhat_j``.  A bond crossing a strip picks up
the integer ``c_j sign(h . nu)``; these counts form the quantized plastic
strain, and the displacement jumps across the strips by exactly the
matching amount, so that ``d_eps u - xi_pl`` is the regular strain away from
the lines.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .cluster_energy import ElasticTensor, total_energy
from .crystal import CrystalError, generator_vectors
from .disloc import CoreRegion, PolyhedralCurve, clip_segment, detect_core
from .fields import DisplacementField, GradientField, PlasticStrainField, SiteBox, StrainField
from .interp import mollifier
from .linetension import StraightLineField, straight_field


class SurfaceHitError(ValueError):
    """A lattice site lies on a slip surface, or a bond meets a strip boundary."""


@dataclass
class SlipStrip:
    """Half-strip ``{a + lam (d - a) + s bhat : 0 <= lam <= 1, s >= 0}``."""
    a: np.ndarray
    d: np.ndarray
    bhat: np.ndarray
    gen: int
    coeff: int
    segment: int

    @property
    def normal(self):
        # bhat ^ t: the side towards which the displacement jumps by +c bhat
        t = (self.d - self.a) / np.linalg.norm(self.d - self.a)
        n = np.cross(self.bhat, t)
        return n / np.linalg.norm(n)


@dataclass
class SlipSurfaceSet:
    strips: list
    coeffs: np.ndarray   # (n_segments, n_gen)
    bhat: np.ndarray
    segments: list

    @property
    def n_gen(self):
        return len(self.bhat)

    def to_dict(self):
        return {"segments": [[np.asarray(a).tolist(), np.asarray(d).tolist()] for a, d in self.segments],
                "coeffs": self.coeffs.tolist(), "bhat": self.bhat.tolist(),
                "strips": [{"segment": s.segment, "gen": s.gen, "coeff": s.coeff,
                            "normal": s.normal.tolist()} for s in self.strips]}

    def translated(self, y):
        y = np.asarray(y, dtype=float)
        segs = [(a + y, d + y) for a, d in self.segments]
        strips = [SlipStrip(s.a + y, s.d + y, s.bhat, s.gen, s.coeff, s.segment) for s in self.strips]
        return SlipSurfaceSet(strips, self.coeffs, self.bhat, segs)


def build_slip_surfaces(segments, burgers, crystal, slips, parallel_tol=1e-9):
    """Half-strips and integer coefficients for ``sum_i theta_i (x) t_i H^1``.

    Raises
    ------
    CrystalError
        If some ``theta_i`` is not an integer combination of the generators.
    ValueError
        If a segment is parallel to a generator it needs (rotate the
        measure slightly first).
    """
    bhat = generator_vectors(crystal, slips)
    coeffs, strips, segs = [], [], []
    for i, ((a, d), th) in enumerate(zip(segments, burgers)):
        a, d = np.asarray(a, dtype=float), np.asarray(d, dtype=float)
        c = slips.coefficients(crystal, np.asarray(th, dtype=float))
        if c is None:
            raise CrystalError(f"segment {i}: Burgers vector {np.asarray(th).tolist()} is not in the lattice")
        c = np.asarray(c, dtype=np.int64)
        if not np.allclose(c @ bhat, th, atol=1e-9):
            raise CrystalError(f"segment {i}: Burgers vector is not in span_Z of the generators")
        t = (d - a) / np.linalg.norm(d - a)
        for j in np.flatnonzero(c):
            if np.linalg.norm(np.cross(t, bhat[j] / np.linalg.norm(bhat[j]))) < parallel_tol:
                raise ValueError(f"segment {i} is parallel to generator {j}; rotate the measure")
            strips.append(SlipStrip(a, d, bhat[j], int(j), int(c[j]), i))
        coeffs.append(c)
        segs.append((a, d))
    return SlipSurfaceSet(strips, np.array(coeffs, dtype=np.int64).reshape(len(segs), len(bhat)),
                          bhat, segs)


def _strip_hits(strip: SlipStrip, P, Q, guard=1e-12):
    """Sign of ``h . nu`` for segments ``P -> Q`` crossing the strip, else 0."""
    nu = strip.normal
    fP = (P - strip.a) @ nu
    fQ = (Q - strip.a) @ nu
    scale = max(1.0, float(np.max(np.abs(P - strip.a))))
    if np.any(np.abs(fP) <= guard * scale) or np.any(np.abs(fQ) <= guard * scale):
        raise SurfaceHitError("a lattice site lies on the plane of a slip strip")
    cross = (fP > 0) != (fQ > 0)
    out = np.zeros(len(P), dtype=np.int8)
    if not np.any(cross):
        return out
    idx = np.flatnonzero(cross)
    tau = fP[idx] / (fP[idx] - fQ[idx])
    X = P[idx] + tau[:, None] * (Q[idx] - P[idx]) - strip.a
    v, b = strip.d - strip.a, strip.bhat
    G = np.array([[v @ v, v @ b], [v @ b, b @ b]])
    rhs = np.stack([X @ v, X @ b], axis=0)
    lam, s = np.linalg.solve(G, rhs)
    on_edge = (np.abs(lam) < guard) | (np.abs(lam - 1) < guard) | (np.abs(s) < guard)
    inside = (lam > 0) & (lam < 1) & (s > 0)
    if np.any(on_edge & ~inside) or np.any(on_edge & inside):
        raise SurfaceHitError("a bond meets the boundary of a slip strip")
    out[idx[inside]] = np.where(fQ[idx[inside]] > fP[idx[inside]], 1, -1)
    return out


def crossing_counts(x, h, eps, surfaces: SlipSurfaceSet):
    """Integer counts ``q_j`` for the bond ``[x, x + eps h]`` (physical points).

    ``x`` may be ``(N, 3)``; returns ``(N, n_gen)`` (or ``(n_gen,)``).
    """
    P = np.atleast_2d(np.asarray(x, dtype=float))
    Q = P + eps * np.asarray(h, dtype=float)
    q = np.zeros((len(P), surfaces.n_gen), dtype=np.int64)
    for st in surfaces.strips:
        q[:, st.gen] += st.coeff * _strip_hits(st, P, Q)
    return q[0] if np.ndim(x) == 1 else q


def box_crossing_counts(surfaces: SlipSurfaceSet, crystal, box: SiteBox, dtype=np.int8):
    """Crossing counts for every canonical bond of the box, as generator
    counts in the storage layout of :class:`PlasticStrainField`."""
    eps = box.eps
    B = crystal.basis
    axes = [np.arange(a, a + s) for a, s in zip(box.lo, box.shape)]
    out = []
    for h in crystal.canonical_bonds():
        base = box.window([np.zeros_like(h), h])
        shp = tuple(s.stop - s.start for s in base)
        q = np.zeros(shp + (surfaces.n_gen,), dtype=dtype)
        if not surfaces.strips:
            out.append(q)
            continue
        ks = [ax[s] for ax, s in zip(axes, base)]
        hp = eps * (h @ B)
        for st in surfaces.strips:
            nu = st.normal
            # f(x) = nu . (x - a) as a separable sum on the grid
            comps = [eps * np.multiply.outer(k, B[i]) @ nu for i, k in enumerate(ks)]
            f = (comps[0][:, None, None] + comps[1][None, :, None] + comps[2][None, None, :]) - nu @ st.a
            g = f + nu @ hp
            if np.min(np.abs(f)) <= 1e-12 * max(1.0, float(np.max(np.abs(st.a)))):
                raise SurfaceHitError("a lattice site lies on the plane of a slip strip")
            cand = np.argwhere((f > 0) != (g > 0))
            if len(cand) == 0:
                continue
            P = np.stack([ks[i][cand[:, i]] for i in range(3)], axis=1) @ B * eps
            sgn = _strip_hits(st, P, P + hp)
            hit = sgn != 0
            if np.any(hit):
                c = cand[hit]
                q[c[:, 0], c[:, 1], c[:, 2], st.gen] += (st.coeff * sgn[hit]).astype(dtype)
        out.append(q)
    return out


def _site_plane_clear(surfaces, crystal, box, guard=1e-12):
    try:
        box_crossing_counts(surfaces, crystal, box)
    except SurfaceHitError:
        return False
    return True


def find_shift(surfaces: SlipSurfaceSet, crystal, boxes, max_level=6):
    """Smallest dyadic offset for which no site of any box lies on a strip and
    no bond meets a strip boundary.

    Candidates are ``eps_min (k1, k2, k3) / 2^l`` with odd ``k_i < 2^l``,
    by increasing level and then increasing ``k1 + k2 + k3``.  Offsets with
    equal components are tried but are often degenerate, since diagonal
    bonds then pass through points of the line.
    """
    eps_min = min(b.eps for b in boxes)
    for level in range(1, max_level + 1):
        odd = range(1, 2 ** level, 2)
        cands = sorted(itertools.product(odd, repeat=3), key=lambda k: (sum(k), k))
        for k in cands:
            y = np.asarray(k, dtype=float) * eps_min / 2 ** level
            moved = surfaces.translated(y)
            if all(_site_plane_clear(moved, crystal, b) for b in boxes):
                return y
    raise SurfaceHitError("no dyadic shift clears the slip surfaces")


# ---------------------------------------------------------------------------
# straight lines and potentials

@dataclass
class LineDislocation:
    """Infinite straight dislocation ``theta (x) t H^1`` through ``point``."""
    point: np.ndarray
    direction: np.ndarray
    burgers: np.ndarray

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=float)
        t = np.asarray(self.direction, dtype=float)
        self.direction = t / np.linalg.norm(t)
        self.burgers = np.asarray(self.burgers, dtype=float)

    def segment(self, reach=1e3):
        return self.point - reach * self.direction, self.point + reach * self.direction

    def to_dict(self):
        return {"point": self.point.tolist(), "direction": self.direction.tolist(),
                "burgers": self.burgers.tolist()}


class LinePotential:
    """Displacement and strain of a set of infinite straight lines.

    For every line and every generator ``j`` with ``c_j != 0`` the straight
    field of ``c_j bhat_j`` is used with its branch cut on the half-plane
    spanned by the line and ``bhat_j``, which is the slip strip.
    """

    def __init__(self, C: ElasticTensor, lines, surfaces: SlipSurfaceSet, order=64):
        self.C = C
        self.lines = lines
        self.parts = []
        for st in surfaces.strips:
            ln = lines[st.segment]
            t = ln.direction
            bp = st.bhat - (st.bhat @ t) * t
            f = straight_field(C, st.coeff * st.bhat, t, order=order, origin=st.a)
            self.parts.append((f, bp / np.linalg.norm(bp)))

    def potential(self, points, chunk=1 << 17):
        P = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros((len(P), 3))
        for s in range(0, len(P), chunk):
            for f, cut in self.parts:
                out[s:s + chunk] += f.potential(P[s:s + chunk], cut=cut)
        return out

    def strain(self, points, chunk=1 << 17):
        P = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros((len(P), 3, 3))
        for s in range(0, len(P), chunk):
            for f, _ in self.parts:
                out[s:s + chunk] += f(P[s:s + chunk])
        return out

    __call__ = strain


def _ball_rule(radius, order=6):
    """Product Gauss nodes in the cube ``[-r, r]^3`` weighted by the bump
    mollifier of support ``B_r`` (renormalized to unit mass)."""
    x, w = np.polynomial.legendre.leggauss(order)
    nodes = np.array(list(itertools.product(x, repeat=3))) * radius
    W = np.prod(np.array(list(itertools.product(w, repeat=3))), axis=1) * radius ** 3
    W = W * mollifier(nodes, 2 * radius)
    keep = W > 0
    return nodes[keep], W[keep] / W[keep].sum()


def integrate_potential(beta, surfaces: SlipSurfaceSet, crystal, box: SiteBox, axis_order=(0, 1, 2),
                        quad_order=8):
    """Potential ``u`` with ``u(x + eps h) - u(x) = int beta h + q(x, h) . bhat``
    integrated along a comb spanning tree of nearest-neighbour bonds.

    The tree runs along ``axis_order[0]`` on the first line, then along
    ``axis_order[1]`` within the first plane, then along ``axis_order[2]``.
    Different orders give different trees; for a field that is curl-free
    with the given jumps the results agree up to a constant.
    """
    if not np.allclose(crystal.basis, np.eye(3)):
        raise ValueError("comb trees are implemented for the cubic basis")
    eps = box.eps
    xg, wg = np.polynomial.legendre.leggauss(quad_order)
    s = 0.5 * (xg + 1)
    wg = 0.5 * wg
    X = box.coords().reshape(tuple(box.shape) + (3,)) * eps
    incs = []
    for ax in range(3):
        h = np.zeros(3)
        h[ax] = 1.0
        sl = [slice(None)] * 3
        sl[ax] = slice(0, box.shape[ax] - 1)
        P = X[tuple(sl)].reshape(-1, 3)
        acc = np.zeros((len(P), 3))
        for sk, wk in zip(s, wg):
            acc += wk * (beta(P + sk * eps * h) @ (eps * h))
        q = crossing_counts(P, h, eps, surfaces) if surfaces.strips else np.zeros((len(P), surfaces.n_gen))
        acc += q @ surfaces.bhat
        incs.append(acc.reshape(X[tuple(sl)].shape))
    a0, a1, a2 = axis_order
    U = np.zeros(tuple(box.shape) + (3,))

    def cum(arr, ax):
        z = np.zeros_like(np.take(arr, [0], axis=ax))
        return np.concatenate([z, np.cumsum(arr, axis=ax)], axis=ax)

    # line along a0 at index 0 of the others
    idx0 = [0, 0, 0]
    idx0[a0] = slice(None)
    line = cum(incs[a0][tuple(idx0)], 0)
    # plane along a1 at index 0 of a2
    idx1 = [slice(None)] * 3
    idx1[a2] = 0
    plane_inc = incs[a1][tuple(idx1)]  # axes (a0, a1) in sorted order minus a2
    ax_a1 = [a for a in range(3) if a != a2].index(a1)
    plane = cum(plane_inc, ax_a1)
    line_b = np.expand_dims(line, axis=ax_a1)
    plane = plane + line_b
    vol = cum(incs[a2], a2)
    U = vol + np.expand_dims(plane, axis=a2)
    return U


@dataclass
class RecoveryResult:
    xi: StrainField
    u: DisplacementField
    plastic: PlasticStrainField
    curve: PolyhedralCurve
    surfaces: SlipSurfaceSet
    shift: np.ndarray
    diagnostics: dict
    core: CoreRegion | None = None
    potential: LinePotential | None = None

    def bundle(self):
        """JSON-ready summary (curve, surfaces, diagnostics)."""
        return {"curve": self.curve.to_dict(), "surfaces": self.surfaces.to_dict(),
                "shift": self.shift.tolist(), "diagnostics": self.diagnostics}


def build_recovery(lines, eps, lo, hi, crystal, slips, ce, C: ElasticTensor, *, m=None,
                   shift=None, elastic=None, detect=True, order=64, mollify_core=True,
                   energy=True):
    """Recovery configuration for infinite straight lines in the box ``[lo, hi]``.

    Parameters
    ----------
    lines : list of LineDislocation
    elastic : callable, optional
        Smooth displacement ``v``; ``eps (ln 1/eps)^(1/2) v`` is added to
        ``u_eps``.
    shift : array, optional
        Offset applied to the lines; by default the smallest admissible
        dyadic offset for this box.
    m : float, optional
        Tube radius in units of ``eps`` for the containment check (default
        ``ceil(k*)``).

    Raises
    ------
    RuntimeError
        If the detected core leaves ``B_{m eps}(gamma)``.
    """
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    box = SiteBox.around(lo, hi, eps)
    m = math.ceil(crystal.k_star) if m is None else m
    segs = [ln.segment() for ln in lines]
    surfaces = build_slip_surfaces(segs, [ln.burgers for ln in lines], crystal, slips)
    if shift is None:
        shift = find_shift(surfaces, crystal, [box]) if lines else np.zeros(3)
    shift = np.asarray(shift, dtype=float)
    surfaces = surfaces.translated(shift)
    moved = [LineDislocation(ln.point + shift, ln.direction, ln.burgers) for ln in lines]
    X = box.coords() @ crystal.basis * eps
    U = np.zeros((len(X), 3))
    pot = None
    curve = PolyhedralCurve([])
    if moved:
        pot = LinePotential(C, moved, surfaces, order=order)
        U = pot.potential(X)
        curve = PolyhedralCurve([s for ln in moved
                                 for s in PolyhedralCurve.line_through_box(ln.point, ln.direction, lo, hi).segments])
        if mollify_core:
            near = np.flatnonzero(curve.distance(X) < 2 * eps)
            nodes, W = _ball_rule(eps / 2)
            for s in range(0, len(near), 4096):
                idx = near[s:s + 4096]
                Y = (X[idx][:, None, :] - nodes[None, :, :]).reshape(-1, 3)
                vals = pot.potential(Y).reshape(len(idx), len(nodes), 3)
                U[idx] = np.einsum("q,kqi->ki", W, vals)
    n_mollified = int(np.sum(curve.distance(X) < 2 * eps)) if moved and mollify_core else 0
    if elastic is not None:
        U = U + math.sqrt(math.log(1 / eps)) * np.asarray(elastic(X), dtype=float)
    u = DisplacementField(box, (eps * U).reshape(tuple(box.shape) + (3,)), crystal)
    gens = box_crossing_counts(surfaces, crystal, box)
    xp = PlasticStrainField(crystal, box, slips, gen_counts=gens)
    _check_quantization(xp)
    du = GradientField(crystal, u)
    xi = du - xp
    cmu = du.max_abs()
    diag = {"eps": eps, "n_sites": box.size, "m": m, "k_star": crystal.k_star,
            "C_mu_measured": cmu, "n_mollified_sites": n_mollified, "shift": shift.tolist(),
            "coeffs": surfaces.coeffs.tolist(),
            "length_in_domain": curve.length_in_box(lo, hi) if moved else 0.0}
    core = None
    if detect:
        core = detect_core(xi, lo, hi)
        ok, dmax = core.contained_in_tube(curve, m * eps) if moved else (core.empty, 0.0)
        diag.update({"core_sites": len(core), "core_empty": core.empty,
                     "core_in_tube": ok, "core_max_distance": dmax})
        if not ok:
            raise RuntimeError(f"core leaves the tube B_(m eps)(gamma): max distance {dmax:.4g} > {m * eps:.4g}")
    if energy:
        diag["energy"] = total_energy(xi, ce)
    return RecoveryResult(xi, u, xp, curve, surfaces, shift, diag, core, pot)


def _check_quantization(xp: PlasticStrainField):
    """Every nonzero count must have a slip system with ``m . h != 0``."""
    for i, h in enumerate(xp.canonical):
        q = xp.gen_counts(i)
        hp = h @ xp.crystal.basis
        for j in range(q.shape[-1]):
            if np.any(q[..., j]) and xp.slips.system_for(j, hp) is None:
                raise CrystalError(f"no slip system carries generator {j} on bond {tuple(int(v) for v in h)}")


def elastic_recovery(v, eps, lo, hi, crystal):
    """``u_eps = eps v`` on the lattice sites of the box."""
    box = SiteBox.around(lo, hi, eps)
    X = box.coords() @ crystal.basis * eps
    vals = eps * np.asarray(v(X), dtype=float)
    return DisplacementField(box, vals.reshape(tuple(box.shape) + (3,)), crystal)


def regular_strain_error(res: RecoveryResult, n_check=2000, seed=0, quad_order=12):
    """Max relative deviation of ``xi(x, h)`` from ``int_0^eps beta(x + t h) h dt``
    on random bonds with both ends at least ``2 eps`` from the lines."""
    rng = np.random.default_rng(seed)
    xi, box = res.xi, res.xi.box
    eps = box.eps
    B = xi.crystal.basis
    xg, wg = np.polynomial.legendre.leggauss(quad_order)
    s, w = 0.5 * (xg + 1), 0.5 * wg
    worst = 0.0
    count = 0
    canon = xi.canonical
    while count < n_check:
        i = int(rng.integers(len(canon)))
        h = canon[i]
        base = box.window([np.zeros_like(h), h])
        loc = [int(rng.integers(sl.start, sl.stop)) for sl in base]
        x = np.asarray(box.lo) + np.array(loc)
        P = x @ B * eps
        Q = (x + h) @ B * eps
        if res.curve.segments and min(res.curve.distance(P)[0], res.curve.distance(Q)[0]) < 2 * eps:
            continue
        ref = sum(wk * (res.potential(P + sk * (Q - P))[0] @ (Q - P)) for sk, wk in zip(s, w))
        val = xi.value(x, h)
        worst = max(worst, float(np.linalg.norm(val - ref) / max(np.linalg.norm(ref), 1e-300)))
        count += 1
    return worst
