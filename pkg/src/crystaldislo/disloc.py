"""Dislocation geometry on the lattice.

Polyhedral curves and their diluteness, detection of the core region from
loop circulations, classification of Burgers vectors, extraction of
dislocation measures, admissibility and the curl-mass diagnostic.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .cluster_energy import total_energy
from .crystal import generator_vectors
from .fields import DiscretePath, SiteBox, StrainField, circulation, generating_loops, loop_circulation_array
from .interp import best_fit_field, face_jump_measure


# ---------------------------------------------------------------------------
# polyhedral curves

def segment_distance(p0, p1, q0, q1):
    """Euclidean distance between the closed segments ``[p0,p1]`` and ``[q0,q1]``."""
    p0, p1, q0, q1 = (np.asarray(v, dtype=float) for v in (p0, p1, q0, q1))
    d1, d2, r = p1 - p0, q1 - q0, p0 - q0
    a, e, f = d1 @ d1, d2 @ d2, d2 @ r
    c, b = d1 @ r, d1 @ d2
    denom = a * e - b * b
    # candidate parameter pairs: interior critical point plus all edge cases
    cands = []
    if denom > 1e-14 * a * e:
        s = (b * f - c * e) / denom
        t = (a * f - b * c) / denom
        cands.append((s, t))
    # zero-length segments reduce to point projections
    for s in (0.0, 1.0):
        cands.append((s, np.clip((b * s + f) / e, 0, 1) if e > 0 else 0.0))
    for t in (0.0, 1.0):
        cands.append((np.clip((b * t - c) / a, 0, 1) if a > 0 else 0.0, t))
    best = math.inf
    for s, t in cands:
        s, t = float(np.clip(s, 0, 1)), float(np.clip(t, 0, 1))
        best = min(best, float(np.linalg.norm(p0 + s * d1 - q0 - t * d2)))
    return best


def point_segment_distance(points, a, d):
    P = np.atleast_2d(np.asarray(points, dtype=float))
    a, d = np.asarray(a, dtype=float), np.asarray(d, dtype=float)
    v = d - a
    s = np.clip((P - a) @ v / (v @ v), 0.0, 1.0)
    return np.linalg.norm(P - a - s[:, None] * v, axis=1)


def point_box_distance(points, lo, hi):
    P = np.atleast_2d(np.asarray(points, dtype=float))
    g = np.maximum(np.maximum(np.asarray(lo) - P, P - np.asarray(hi)), 0.0)
    return np.linalg.norm(g, axis=1)


def clip_segment(a, d, lo, hi):
    """Part of ``[a, d]`` inside the closed box, or None."""
    a, d = np.asarray(a, dtype=float), np.asarray(d, dtype=float)
    v = d - a
    t0, t1 = 0.0, 1.0
    for i in range(len(a)):
        if abs(v[i]) < 1e-300:
            if a[i] < lo[i] or a[i] > hi[i]:
                return None
            continue
        u0, u1 = (lo[i] - a[i]) / v[i], (hi[i] - a[i]) / v[i]
        t0, t1 = max(t0, min(u0, u1)), min(t1, max(u0, u1))
    if t1 <= t0:
        return None
    return a + t0 * v, a + t1 * v


@dataclass
class PolyhedralCurve:
    """Finite union of closed straight segments."""
    segments: list

    def __post_init__(self):
        self.segments = [(np.asarray(a, dtype=float), np.asarray(d, dtype=float)) for a, d in self.segments]

    @classmethod
    def line_through_box(cls, point, direction, lo, hi, extend=0.0):
        """The chord of the line ``point + s * direction`` in the box, optionally
        extended by ``extend`` beyond both faces."""
        t = np.asarray(direction, dtype=float)
        t = t / np.linalg.norm(t)
        big = 10.0 * float(np.linalg.norm(np.asarray(hi) - np.asarray(lo))) + 10.0
        p = np.asarray(point, dtype=float)
        seg = clip_segment(p - big * t, p + big * t, lo, hi)
        if seg is None:
            raise ValueError("line misses the box")
        a, d = seg
        return cls([(a - extend * t, d + extend * t)])

    @property
    def lengths(self):
        return np.array([np.linalg.norm(d - a) for a, d in self.segments])

    @property
    def tangents(self):
        return np.array([(d - a) / np.linalg.norm(d - a) for a, d in self.segments])

    def length(self):
        return float(self.lengths.sum())

    def length_in_box(self, lo, hi):
        total = 0.0
        for a, d in self.segments:
            c = clip_segment(a, d, lo, hi)
            if c is not None:
                total += float(np.linalg.norm(c[1] - c[0]))
        return total

    def length_near_box(self, lo, hi, radius, n=20000):
        """``H^1(gamma cap B_radius(box))`` by fine sampling of each segment."""
        total = 0.0
        for a, d in self.segments:
            s = (np.arange(n) + 0.5) / n
            pts = a + s[:, None] * (d - a)
            inside = point_box_distance(pts, lo, hi) < radius
            total += float(np.linalg.norm(d - a)) * inside.mean()
        return total

    def distance(self, points):
        P = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.full(len(P), np.inf)
        for a, d in self.segments:
            out = np.minimum(out, point_segment_distance(P, a, d))
        return out

    def vertices(self, tol=1e-12):
        """Distinct endpoints and, per segment, the indices of its two ends."""
        verts, ends = [], []
        for a, d in self.segments:
            idx = []
            for p in (a, d):
                for k, v in enumerate(verts):
                    if np.linalg.norm(v - p) <= tol:
                        idx.append(k)
                        break
                else:
                    verts.append(p)
                    idx.append(len(verts) - 1)
            ends.append(tuple(idx))
        return np.array(verts), ends

    def to_dict(self):
        return {"segments": [[a.tolist(), d.tolist()] for a, d in self.segments]}

    @classmethod
    def from_dict(cls, d):
        return cls([(s[0], s[1]) for s in d["segments"]])


@dataclass
class DiluteReport:
    passed: bool
    clause: int | None
    witness: tuple | None
    message: str
    length: float
    length_bound: float | None

    def to_dict(self):
        return {"passed": self.passed, "clause": self.clause,
                "witness": None if self.witness is None else [int(w) for w in self.witness],
                "message": self.message, "length": self.length, "length_bound": self.length_bound}


def _on_boundary(p, lo, hi, tol):
    p = np.asarray(p)
    inside = np.all(p >= np.asarray(lo) - tol) and np.all(p <= np.asarray(hi) + tol)
    near = np.any(np.abs(p - lo) <= tol) or np.any(np.abs(p - hi) <= tol)
    return bool(inside and near)


def certify_dilute(curve: PolyhedralCurve, lo, hi, k, alpha, tol=1e-12):
    """Check the four diluteness clauses on the box ``[lo, hi]``.

    Clauses: (1) segment length at least ``k``; (2) disjoint segments at
    distance at least ``alpha k``; (3) intersecting segments share an
    endpoint and meet at angle at least ``alpha``; (4) endpoints that are not
    shared by other segments lie on the boundary.  Segments must lie in the
    closed box.

    On success the report carries the length bound ``C / (alpha^4 k^3)``
    with ``C = 2 |box| diam(box) / pi`` from a cylinder packing argument.
    """
    if k <= 0 or not (0 < alpha <= 0.25):
        raise ValueError("need k > 0 and alpha in (0, 1/4]")
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    segs = curve.segments
    L = curve.length()

    def fail(clause, wit, msg):
        return DiluteReport(False, clause, wit, msg, L, None)

    for i, (a, d) in enumerate(segs):
        for p in (a, d):
            if np.any(p < lo - tol) or np.any(p > hi + tol):
                return fail(4, (i,), f"segment {i} leaves the closed domain")
    for i, ell in enumerate(curve.lengths):
        if ell < k:
            return fail(1, (i,), f"segment {i} has length {ell:.6g} < k = {k:.6g}")
    verts, ends = curve.vertices()
    for i, j in itertools.combinations(range(len(segs)), 2):
        dist = segment_distance(*segs[i], *segs[j])
        shared = set(ends[i]) & set(ends[j])
        if dist > tol:
            if dist < alpha * k:
                return fail(2, (i, j), f"segments {i}, {j} at distance {dist:.6g} < alpha k = {alpha * k:.6g}")
            continue
        if len(shared) != 1:
            return fail(3, (i, j), f"segments {i}, {j} intersect away from a common endpoint")
        v = shared.pop()
        # directions pointing away from the shared vertex
        ui = segs[i][1] - segs[i][0] if ends[i][0] == v else segs[i][0] - segs[i][1]
        uj = segs[j][1] - segs[j][0] if ends[j][0] == v else segs[j][0] - segs[j][1]
        cosang = ui @ uj / (np.linalg.norm(ui) * np.linalg.norm(uj))
        ang = math.acos(max(-1.0, min(1.0, cosang)))
        if ang < alpha:
            return fail(3, (i, j), f"segments {i}, {j} meet at angle {ang:.6g} < alpha = {alpha:.6g}")
    degree = np.zeros(len(verts), dtype=int)
    for e in ends:
        for v in e:
            degree[v] += 1
    for v in np.flatnonzero(degree == 1):
        if not _on_boundary(verts[v], lo, hi, 1e-9):
            seg = next(i for i, e in enumerate(ends) if v in e)
            return fail(4, (seg,), f"endpoint {verts[v].tolist()} lies inside the domain")
    vol = float(np.prod(hi - lo))
    diam = float(np.linalg.norm(hi - lo))
    C = 2 * vol * diam / math.pi
    return DiluteReport(True, None, None, "dilute", L, C / (alpha ** 4 * k ** 3))


# ---------------------------------------------------------------------------
# core region

def _interior_mask(box: SiteBox, crystal, lo, hi, radius):
    """Sites whose ball of the given radius lies inside the physical box."""
    X = box.coords() @ crystal.basis * box.eps
    ok = np.all((X - lo > radius) & (hi - X > radius), axis=1)
    return ok.reshape(box.shape)


def _ball_offsets(loop_phys, k_star, basis):
    """Lattice offsets ``o`` with ``|o - p| < k_star`` for every loop vertex ``p``."""
    lo = np.floor(loop_phys.min(axis=0) - k_star).astype(int) - 1
    hi = np.ceil(loop_phys.max(axis=0) + k_star).astype(int) + 1
    g = np.stack(np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(lo, hi)], indexing="ij"), -1).reshape(-1, 3)
    P = g @ basis
    ok = np.ones(len(g), dtype=bool)
    for p in loop_phys:
        ok &= np.linalg.norm(P - p, axis=1) < k_star
    return g[ok]


@dataclass
class CoreRegion:
    """Flagged core sites with a witness loop per site.

    ``mask`` lives on ``box``.  ``witness_loop[x]`` indexes ``loops`` and
    ``witness_base[x]`` is the absolute base site of a generating loop inside
    ``B_{k* eps}(x)`` with nonzero circulation.
    """
    box: SiteBox
    mask: np.ndarray
    witness_loop: np.ndarray
    witness_base: np.ndarray
    loops: list
    k_star: float
    tol: float
    n_bad_loops: int
    basis: np.ndarray = field(default_factory=lambda: np.eye(3))

    @property
    def empty(self):
        return not bool(self.mask.any())

    def sites(self):
        idx = np.argwhere(self.mask)
        return idx + np.asarray(self.box.lo)

    def points(self):
        return self.sites() @ self.basis * self.box.eps

    def __len__(self):
        return int(self.mask.sum())

    def witness(self, site):
        """Closed path (absolute coordinates) certifying the flag at ``site``."""
        loc = tuple(np.asarray(site) - np.asarray(self.box.lo))
        j = int(self.witness_loop[loc])
        if j < 0:
            return None
        return DiscretePath(self.loops[j][1] + self.witness_base[loc])

    def contained_in_tube(self, curve: PolyhedralCurve, radius):
        """``(ok, max distance to the curve)``."""
        if self.empty:
            return True, 0.0
        d = curve.distance(self.points())
        return bool(np.all(d < radius)), float(d.max())

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "j", "k", "x", "y", "z", "loop", "base_i", "base_j", "base_k"])
        S = self.sites()
        P = self.points()
        for s, p in zip(S, P):
            loc = tuple(s - np.asarray(self.box.lo))
            b = self.witness_base[loc]
            w.writerow([*map(int, s), *(f"{v:.12g}" for v in p), int(self.witness_loop[loc]), *map(int, b)])
        return buf.getvalue()


def detect_core(xi: StrainField, lo=None, hi=None, tol_rel=1e-9):
    """Core region of ``xi`` on the physical domain ``[lo, hi]``.

    A site ``x`` at distance more than ``k* eps`` from the boundary is
    flagged when some translate of a generating loop with all vertices in
    the open ball ``B_{k* eps}(x)`` has circulation above
    ``tol_rel * eps * max|xi|``.  Every flag carries its witness.
    """
    cr = xi.crystal
    box = xi.box
    eps = box.eps
    B = cr.basis
    if lo is None:
        lo = np.asarray(box.lo) @ B * eps
        hi = (np.asarray(box.hi) - 1) @ B * eps
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    k_star = cr.k_star
    scale = max(xi.max_abs(), 1e-300)
    tol = tol_rel * eps * scale
    loops = generating_loops(cr)
    mask = np.zeros(box.shape, dtype=bool)
    wl = np.full(box.shape, -1, dtype=np.int16)
    wb = np.zeros(tuple(box.shape) + (3,), dtype=np.int32)
    n_bad = 0
    shape = np.asarray(box.shape)
    for j, (kind, L) in enumerate(loops):
        base, c = loop_circulation_array(xi, L)
        if base is None:
            continue
        bad = np.argwhere(np.linalg.norm(c, axis=-1) > tol)
        if len(bad) == 0:
            continue
        n_bad += len(bad)
        bad_local = bad + np.array([s.start for s in base])
        offs = _ball_offsets(L @ B, k_star, B)
        for chunk in np.array_split(bad_local, max(1, len(bad_local) // 256 + 1)):
            if len(chunk) == 0:
                continue
            X = (chunk[:, None, :] + offs[None, :, :]).reshape(-1, 3)
            Y = np.repeat(chunk, len(offs), axis=0)
            ok = np.all((X >= 0) & (X < shape), axis=1)
            X, Y = X[ok], Y[ok]
            new = ~mask[X[:, 0], X[:, 1], X[:, 2]]
            X, Y = X[new], Y[new]
            if len(X) == 0:
                continue
            # keep the first witness per site
            flat = np.ravel_multi_index(X.T, box.shape)
            _, first = np.unique(flat, return_index=True)
            X, Y = X[first], Y[first]
            mask[X[:, 0], X[:, 1], X[:, 2]] = True
            wl[X[:, 0], X[:, 1], X[:, 2]] = j
            wb[X[:, 0], X[:, 1], X[:, 2]] = Y + np.asarray(box.lo)
    interior = _interior_mask(box, cr, lo, hi, k_star * eps)
    mask &= interior
    wl[~mask] = -1
    return CoreRegion(box, mask, wl, wb, loops, k_star, tol, n_bad, B)


def recheck_witness(xi: StrainField, core: CoreRegion, site):
    """Re-evaluate the stored witness loop; True when it still exceeds the
    tolerance and fits in ``B_{k* eps}(site)``."""
    path = core.witness(site)
    if path is None:
        return False
    P = path.sites @ core.basis
    x = np.asarray(site) @ core.basis
    inside = np.all(np.linalg.norm(P - x, axis=1) < core.k_star)
    c = circulation(xi, path)
    return bool(inside and np.linalg.norm(c) > core.tol)


# ---------------------------------------------------------------------------
# Burgers vectors

class AmbiguousBurgersError(ValueError):
    pass


@dataclass
class BurgersResult:
    circulation: np.ndarray
    coeffs: np.ndarray | None
    nearest: np.ndarray | None
    gap: float
    threshold: float
    valid: bool

    def to_dict(self):
        return {"circulation": self.circulation.tolist(),
                "coeffs": None if self.coeffs is None else [int(c) for c in self.coeffs],
                "nearest": None if self.nearest is None else self.nearest.tolist(),
                "gap": self.gap, "threshold": self.threshold, "valid": self.valid}


def shortest_burgers(bhat):
    """Length of the shortest nonzero vector among small integer combinations."""
    best = math.inf
    for c in itertools.product(range(-2, 3), repeat=len(bhat)):
        if any(c):
            best = min(best, float(np.linalg.norm(np.asarray(c) @ bhat)))
    return best


def classify_burgers(value, bhat, eps, max_coeff=None):
    """Nearest element of ``eps * span_Z(bhat)`` to ``value``."""
    value = np.asarray(value, dtype=float)
    bhat = np.asarray(bhat, dtype=float)
    thr = 0.25 * eps * shortest_burgers(bhat)
    c0 = np.rint(np.linalg.lstsq(bhat.T, value / eps, rcond=None)[0]).astype(np.int64)
    best, bestc = math.inf, None
    for d in itertools.product((-1, 0, 1), repeat=len(bhat)):
        c = c0 + np.asarray(d)
        g = float(np.linalg.norm(value - eps * (c @ bhat)))
        if g < best:
            best, bestc = g, c
    valid = best < thr
    if max_coeff is not None and np.any(np.abs(bestc) > max_coeff):
        valid = False
    return BurgersResult(value, bestc if valid else None, eps * (bestc @ bhat) if valid else None,
                         best, thr, valid)


def burgers_of_loop(xi: StrainField, loop, slips, max_coeff=None):
    """Circulation of ``xi`` on a closed path and its classification in ``eps B``.

    Ambiguous values (rounding gap above a quarter of the shortest
    Burgers vector) are reported with ``valid = False`` and no coefficients.
    """
    P = loop.sites if isinstance(loop, DiscretePath) else np.asarray(loop)
    # lazy fields evaluate whole bond arrays; work on the loop's bounding box
    lo = np.maximum(P.min(axis=0), xi.box.lo)
    hi = np.minimum(P.max(axis=0) + 1, xi.box.hi)
    local = xi.restricted(xi.box.sub(lo, hi - lo))
    c = circulation(local, P)
    return classify_burgers(c, generator_vectors(xi.crystal, slips), xi.eps, max_coeff)


def square_loop(center, normal_axis, half_side):
    """Counter-clockwise lattice square about ``+e_axis`` (absolute coordinates)."""
    i, j = [a for a in range(3) if a != normal_axis]
    if (i, j) == (0, 2):
        i, j = 2, 0  # keep (e_i, e_j, e_axis) right-handed
    c = np.asarray(center, dtype=int)
    R = int(half_side)
    pts = []
    ei, ej = np.zeros(3, dtype=int), np.zeros(3, dtype=int)
    ei[i], ej[j] = 1, 1
    start = c - R * ei - R * ej
    p = start.copy()
    for d, n in ((ei, 2 * R), (ej, 2 * R), (-ei, 2 * R), (-ej, 2 * R)):
        for _ in range(n):
            pts.append(p.copy())
            p = p + d
    pts.append(start.copy())
    return DiscretePath(np.array(pts))


# ---------------------------------------------------------------------------
# dislocation measures

class StationDisagreement(ValueError):
    """Burgers vectors at the stations of one segment differ."""


@dataclass
class DislocationMeasure:
    """``sum_i theta_i (x) t_i H^1`` on segments; ``theta_i = coeffs_i @ bhat``
    (times ``scale``)."""
    segments: list
    coeffs: np.ndarray  # (n_seg, n_gen) int
    bhat: np.ndarray
    scale: float = 1.0
    stations: list = field(default_factory=list)

    @property
    def burgers(self):
        return self.scale * (self.coeffs @ self.bhat)

    @property
    def tangents(self):
        return PolyhedralCurve(self.segments).tangents

    def total_mass(self):
        L = PolyhedralCurve(self.segments).lengths
        return float(np.sum(np.linalg.norm(self.burgers, axis=1) * L))

    def is_zero(self):
        return bool(np.all(self.coeffs == 0))

    def junction_balance(self, lo=None, hi=None):
        """Signed integer Burgers sum at every vertex not on the boundary."""
        curve = PolyhedralCurve(self.segments)
        verts, ends = curve.vertices()
        bal = {v: np.zeros(self.coeffs.shape[1], dtype=np.int64) for v in range(len(verts))}
        for (a, d), c in zip(ends, self.coeffs):
            bal[a] -= c
            bal[d] += c
        out = {}
        for v, s in bal.items():
            if lo is not None and _on_boundary(verts[v], lo, hi, 1e-9):
                continue
            out[tuple(float(x) for x in verts[v])] = s
        return out

    def is_divergence_free(self, lo=None, hi=None):
        return all(not np.any(s) for s in self.junction_balance(lo, hi).values())

    def to_json(self):
        return json.dumps({
            "segments": [[np.asarray(a).tolist(), np.asarray(d).tolist()] for a, d in self.segments],
            "coeffs": self.coeffs.tolist(), "bhat": self.bhat.tolist(), "scale": self.scale,
            "stations": self.stations}, indent=2)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls([tuple(np.asarray(p) for p in s) for s in d["segments"]],
                   np.asarray(d["coeffs"], dtype=np.int64), np.asarray(d["bhat"]),
                   d.get("scale", 1.0), d.get("stations", []))


def extract_measure(xi: StrainField, curve: PolyhedralCurve, slips, m, alpha, lo=None, hi=None,
                    stations=(0.25, 0.5, 0.75), strict=True):
    """Dislocation measure carried by ``xi`` on the segments of ``curve``.

    For each segment, square lattice loops perpendicular to the coordinate
    axis closest to the tangent are placed at the stations; their radius is
    ``12 m eps / alpha`` capped by the distance to the boundary and to other
    segments.  The Burgers vectors must agree across stations.
    """
    box = xi.box
    eps = box.eps
    B = xi.crystal.basis
    if lo is None:
        lo = np.asarray(box.lo) @ B * eps
        hi = (np.asarray(box.hi) - 1) @ B * eps
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    bhat = generator_vectors(xi.crystal, slips)
    coeffs, report = [], []
    k_star = xi.crystal.k_star
    for i, (a, d) in enumerate(curve.segments):
        seg = clip_segment(a, d, lo, hi)
        t = (d - a) / np.linalg.norm(d - a)
        axis = int(np.argmax(np.abs(t)))
        sgn = 1 if t[axis] > 0 else -1
        others = PolyhedralCurve([s for j, s in enumerate(curve.segments) if j != i])
        found = []
        for s in stations:
            p = seg[0] + s * (seg[1] - seg[0])
            rho = 12 * m * eps / alpha
            wall = float(np.min(np.minimum(p - lo, hi - p)[[a_ for a_ in range(3) if a_ != axis]]))
            rho_cap = min(rho, 0.75 * wall)
            if others.segments:
                rho_cap = min(rho_cap, 0.45 * float(others.distance(p)[0]))
            R = max(1, int(math.floor(rho_cap / eps)))
            center = np.rint(p / eps).astype(int)
            loop = square_loop(center, axis, R)
            res = burgers_of_loop(xi, loop, slips)
            # orient with the tangent
            coeff = None if res.coeffs is None else sgn * res.coeffs
            found.append(coeff)
            report.append({"segment": i, "station": s, "radius": R * eps,
                           "clearance_ok": bool(R * eps >= (m + k_star) * eps),
                           "gap": res.gap, "valid": res.valid,
                           "coeffs": None if coeff is None else [int(c) for c in coeff]})
        if any(f is None for f in found):
            raise StationDisagreement(f"segment {i}: ambiguous circulation at a station")
        if any(not np.array_equal(found[0], f) for f in found[1:]):
            msg = f"segment {i}: stations disagree {[f.tolist() for f in found]}"
            if strict:
                raise StationDisagreement(msg)
        coeffs.append(found[0])
    mu = DislocationMeasure(list(curve.segments), np.array(coeffs, dtype=np.int64), bhat, 1.0, report)
    return mu


# ---------------------------------------------------------------------------
# admissibility and curl mass

@dataclass
class AdmissibilityReport:
    admissible: bool
    dilute: DiluteReport
    core_in_tube: bool
    core_max_distance: float
    m: float

    def to_dict(self):
        return {"admissible": self.admissible, "dilute": self.dilute.to_dict(),
                "core_in_tube": self.core_in_tube, "core_max_distance": self.core_max_distance,
                "m": self.m}


def check_admissible(core: CoreRegion, curve: PolyhedralCurve, lo, hi, k, alpha, m):
    """Diluteness of ``curve`` plus ``core subset B_{m eps}(curve)``; needs ``m >= k*``."""
    if m < core.k_star:
        raise ValueError(f"core radius m = {m} is below k* = {core.k_star:.4f}")
    dil = certify_dilute(curve, lo, hi, k, alpha)
    ok, dmax = core.contained_in_tube(curve, m * core.box.eps)
    return AdmissibilityReport(dil.passed and ok, dil, ok, dmax, m)


@dataclass
class CurlMassReport:
    mass: float
    energy: float
    length: float
    m: float
    ratio: float
    region: tuple

    def to_dict(self):
        return {"mass": self.mass, "energy": self.energy, "length": self.length,
                "m": self.m, "ratio": self.ratio,
                "region": [list(map(float, self.region[0])), list(map(float, self.region[1]))]}


def curl_mass(xi: StrainField, inner_lo, inner_hi, pad_curve: PolyhedralCurve | None = None,
              pad_radius=None):
    """``|curl L xi|`` restricted to faces with centroid in ``[inner_lo, inner_hi]``.

    With ``pad_curve`` the fit is computed only on the sites of the bounding
    box of ``B_pad_radius(curve)`` inside the region; away from the curve
    the caller guarantees that ``xi`` is exact (zero face jumps).
    """
    box = xi.box
    eps = box.eps
    B = xi.crystal.basis
    lo_p, hi_p = np.asarray(inner_lo, dtype=float), np.asarray(inner_hi, dtype=float)
    if np.any(hi_p <= lo_p):
        return 0.0
    qlo, qhi = lo_p.copy(), hi_p.copy()
    if pad_curve is not None:
        pts = []
        for a, d in pad_curve.segments:
            c = clip_segment(a, d, lo_p - pad_radius, hi_p + pad_radius)
            if c is not None:
                pts.extend(c)
        if not pts:
            return 0.0
        pts = np.array(pts)
        qlo = np.maximum(qlo, pts.min(axis=0) - pad_radius)
        qhi = np.minimum(qhi, pts.max(axis=0) + pad_radius)
    klo = np.floor(qlo / eps).astype(int) - 1
    khi = np.ceil(qhi / eps).astype(int) + 2
    klo = np.maximum(klo, box.lo)
    khi = np.minimum(khi, box.hi)
    sub = box.sub(klo, khi - klo)
    L = best_fit_field(xi.restricted(sub))
    fj = face_jump_measure(L)
    c = fj.centroids
    inside = np.all((c > lo_p) & (c < hi_p), axis=1)
    return float(np.sum(fj.mass[inside]))


def curl_mass_bound_check(xi: StrainField, curve: PolyhedralCurve, ce, m, lo, hi, energy=None):
    """Measured constant in ``|curl L xi|(O') <= c m H^1(gamma cap B_{2 m eps}(O'))^(1/2) E^(1/2)``.

    ``O'`` is the box ``[lo, hi]`` shrunk by ``2 m eps``.
    """
    eps = xi.eps
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    ilo, ihi = lo + 2 * m * eps, hi - 2 * m * eps
    if np.any(ihi <= ilo):
        raise ValueError("inner region is empty: the domain is too small for 2 m eps margins")
    E = total_energy(xi, ce) if energy is None else energy
    mass = curl_mass(xi, ilo, ihi, curve, 2 * m * eps + 2 * eps)
    H = curve.length_near_box(ilo, ihi, 2 * m * eps)
    denom = m * math.sqrt(H) * math.sqrt(E)
    ratio = mass / denom if denom > 0 else (0.0 if mass == 0 else math.inf)
    return CurlMassReport(mass, E, H, m, ratio, (ilo, ihi))
