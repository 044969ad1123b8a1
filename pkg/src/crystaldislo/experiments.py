"""Desk-scale experiments, configuration schema and reporting.

Each experiment takes a validated configuration and returns
``(tables, checks)``: ``tables`` maps a CSV name to a list of row dicts and
``checks`` is a list of pass/fail records, each tied to a numbered
acceptance criterion.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import extension as ext
from .cluster_energy import (coercivity_constant, default_energy, elastic_tensor,
                             isotropic_tensor, cubic_tensor, n_cluster_centers,
                             nn_energy, total_energy, verify_cluster_energy)
from .crystal import (cubic_slip_systems, fcc, fcc_slip_systems, simple_cubic,
                      validate_slip_systems)
from .disloc import certify_dilute, curl_mass_bound_check, extract_measure
from .fields import DisplacementField, GradientField, SiteBox
from .interp import mollified_energy_check
from .linetension import (LineTension, continuum_energy, psi_C, straight_field)
from .recovery import LineDislocation, build_recovery, build_slip_surfaces, find_shift

EXPERIMENTS = ("elastic-limit", "screw-scaling", "psi-table", "prelog", "mollified",
               "extension", "coercivity")

# Frozen reference constants.  The constant-field ratios were computed with
# one-dimensional adaptive quadrature of the closed-form integrands; the
# others are measurements of the reference fixtures.
FROZEN = {
    "C_mu": 1.0,                      # |d_eps u_eps| <= |b| for the unit screw
    "curl_mass_ratio": 0.0133,        # max over the screw sweep at 1/32, 1/64
    "cyl_const_p1.5": 1.0131586884974,
    "ball_const_p2_inner": 0.8451542547285,
    "ball_const_p1.5_inner": 0.5280595946712,
    "cyl_sym_p1.5": 0.9022440120067,
}


class ConfigError(ValueError):
    """Schema violation; ``problems`` lists ``(field, message)`` pairs."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(f"{f}: {m}" for f, m in self.problems))


# ------------------------------------------------------------------ schema

DEFAULTS = {
    "crystal": {"kind": "simple_cubic"},
    "energy": {"kind": "springs", "k1": 1.0, "k2": 0.5, "kappa": 1.0},
    "schedule": {"kind": "log"},
    "tolerances": {},
    "seed": 0,
    "params": {},
}

_EXPERIMENT_EPS = {
    "elastic-limit": [1 / 8, 1 / 16, 1 / 32],
    "screw-scaling": [1 / 16, 1 / 32, 1 / 64],
    "mollified": [1 / 4, 1 / 8, 1 / 16],
}


def schedule(eps, params):
    """Diluteness parameters ``(k_eps, alpha_eps)``.

    ``kind="log"``: ``k = ln(1/eps)^{-1/2}``, ``alpha = min(1/4, 1/ln(1/eps))``,
    for which ``ln(1/(alpha k)) / ln(1/eps)`` decreases to 0.
    ``kind="power"``: ``k = eps^a``, ``alpha = min(1/4, eps^b)``.
    """
    L = math.log(1 / eps)
    if params.get("kind", "log") == "log":
        return L ** -0.5, min(0.25, 1 / L)
    a = params.get("k_exponent", 0.2)
    b = params.get("alpha_exponent", 0.1)
    return eps ** a, min(0.25, eps ** b)


def _is_vec(v, n=3):
    return isinstance(v, (list, tuple)) and len(v) == n and all(
        isinstance(x, (int, float)) and math.isfinite(x) for x in v)


def validate_config(raw) -> dict:
    """Normalised copy of ``raw`` with defaults filled in.

    Raises
    ------
    ConfigError
        Listing every violation with its field path.
    """
    problems = []
    if not isinstance(raw, dict):
        raise ConfigError([("<root>", "configuration must be a JSON object")])
    cfg = copy.deepcopy(DEFAULTS)
    for k, v in raw.items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k] = {**cfg[k], **v}
        else:
            cfg[k] = v
    known = set(DEFAULTS) | {"experiment", "eps", "m", "box", "line", "outputs"}
    for k in raw:
        if k not in known:
            problems.append((k, "unknown field"))
    exp = cfg.get("experiment")
    if exp not in EXPERIMENTS:
        problems.append(("experiment", f"must be one of {', '.join(EXPERIMENTS)}"))
    if cfg["crystal"].get("kind") not in ("simple_cubic", "fcc"):
        problems.append(("crystal.kind", "must be 'simple_cubic' or 'fcc'"))
    if exp not in ("psi-table", "extension") and cfg["crystal"].get("kind") == "fcc":
        problems.append(("crystal.kind", f"{exp} needs a crystal with a simplicial cover "
                         "(simple_cubic)"))
    en = cfg["energy"]
    if en.get("kind") not in ("springs", "nn", "isotropic", "cubic"):
        problems.append(("energy.kind", "must be springs, nn, isotropic or cubic"))
    for key in ("k1", "k2", "kappa", "mu"):
        if key in en and not (isinstance(en[key], (int, float)) and en[key] >= 0):
            problems.append((f"energy.{key}", "must be a nonnegative number"))
    if en.get("kind") == "isotropic" and not (-1 < en.get("nu", 0.3) < 0.5):
        problems.append(("energy.nu", "Poisson ratio must lie in (-1, 1/2)"))
    if not isinstance(cfg.get("seed"), int):
        problems.append(("seed", "must be an integer"))
    eps = cfg.get("eps", _EXPERIMENT_EPS.get(exp))
    if eps is not None:
        if not (isinstance(eps, list) and eps and all(isinstance(e, (int, float)) and 0 < e < 1 for e in eps)):
            problems.append(("eps", "must be a nonempty list of numbers in (0, 1)"))
        elif any(b >= a for a, b in zip(eps, eps[1:])):
            problems.append(("eps", "lattice spacings must be strictly decreasing"))
        else:
            cfg["eps"] = [float(e) for e in eps]
            sch = cfg["schedule"]
            if sch.get("kind") not in ("log", "power"):
                problems.append(("schedule.kind", "must be 'log' or 'power'"))
            else:
                ks, als, rat = [], [], []
                for e in cfg["eps"]:
                    k, a = schedule(e, sch)
                    ks.append(k)
                    als.append(a)
                    rat.append(math.log(1 / (a * k)) / math.log(1 / e))
                if any(not 0 < a <= 0.25 for a in als):
                    problems.append(("schedule", "alpha_eps must lie in (0, 1/4]"))
                if len(rat) > 1 and any(r1 >= r0 for r0, r1 in zip(rat, rat[1:])):
                    problems.append(("schedule", "ln(1/(alpha k))/ln(1/eps) does not decrease "
                                     f"over the sweep ({', '.join(f'{r:.3f}' for r in rat)}); "
                                     "diluteness parameters must be much larger than eps"))
                cfg["schedule_values"] = [{"eps": e, "k": k, "alpha": a, "log_ratio": r}
                                          for e, k, a, r in zip(cfg["eps"], ks, als, rat)]
    if exp == "screw-scaling":
        k_star = _crystal(cfg)[0].k_star
        m = cfg.get("m", math.ceil(k_star))
        if not isinstance(m, (int, float)) or m < k_star:
            problems.append(("m", f"core radius m = {m} is below k* = {k_star:.4f}; "
                             "admissibility requires m >= k*"))
        cfg["m"] = m
        box = cfg.setdefault("box", {"lo": [-1, -1, -1], "hi": [1, 1, 1]})
        if not (_is_vec(box.get("lo")) and _is_vec(box.get("hi"))) or any(
                h <= l for l, h in zip(box["lo"], box["hi"])):
            problems.append(("box", "needs lo < hi, both 3-vectors"))
        line = cfg.setdefault("line", {"point": [0, 0, 0], "direction": [0.125, 0, 1],
                                       "burgers": [0, 0, 1]})
        for key in ("point", "direction", "burgers"):
            if not _is_vec(line.get(key)):
                problems.append((f"line.{key}", "must be a 3-vector"))
        if _is_vec(line.get("direction")) and np.linalg.norm(line["direction"]) == 0:
            problems.append(("line.direction", "must be nonzero"))
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path) -> dict:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError([(f"line {e.lineno}, column {e.colno}", e.msg)]) from None
    return validate_config(raw)


# ------------------------------------------------------------------ fixtures

def _crystal(cfg):
    kind = cfg["crystal"].get("kind", "simple_cubic")
    if kind == "fcc":
        c = fcc()
        return c, validate_slip_systems(c, fcc_slip_systems())
    c = simple_cubic()
    return c, validate_slip_systems(c, cubic_slip_systems())


def _energy(cfg, crystal):
    en = cfg["energy"]
    kind = en.get("kind", "springs")
    if kind == "springs":
        ce = default_energy(crystal, en.get("k1", 1.0), en.get("k2", 0.5), en.get("kappa", 1.0))
    elif kind == "nn":
        ce = nn_energy(crystal, en.get("k1", 1.0), en.get("kappa", 1.0))
    else:
        return None, _tensor(cfg, None, None)
    return ce, elastic_tensor(crystal, ce, verify_cluster_energy(ce))


def _tensor(cfg, crystal, ce):
    en = cfg["energy"]
    if en.get("kind") == "isotropic":
        return isotropic_tensor(en.get("mu", 1.0), en.get("nu", 0.3))
    if en.get("kind") == "cubic":
        return cubic_tensor(en["c11"], en["c12"], en["c44"])
    return elastic_tensor(crystal, ce)


def _check(criterion, name, passed, value=None, tolerance=None, note=None):
    out = {"criterion": int(criterion), "check": name, "passed": bool(passed)}
    if value is not None:
        out["value"] = value
    if tolerance is not None:
        out["tolerance"] = tolerance
    if note:
        out["note"] = note
    return out


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


# ------------------------------------------------------------------ elastic limit

def quadratic_displacement(seed, curvature=1.0, center=(0.5, 0.5, 0.5)):
    """``v(x) = A x + 1/2 T[x - c, x - c]`` with seeded symmetric ``A`` and
    ``T`` symmetric in its last two slots, scaled so ``|T| = curvature |A|``;
    returns ``(v, Dv)``."""
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(3, 3))
    A = 0.5 * (A + A.T)
    T = rng.normal(size=(3, 3, 3))
    T = 0.5 * (T + np.swapaxes(T, 1, 2))
    T *= curvature * np.linalg.norm(A) / np.linalg.norm(T)
    c = np.asarray(center, dtype=float)

    def v(x):
        y = x - c
        return x @ A.T + 0.5 * np.einsum("ijk,...j,...k->...i", T, y, y)

    def dv(x):
        return A + np.einsum("ijk,...k->...ij", T, x - c)

    return v, dv


def gauss_box_integral(fn, lo, hi, order=3):
    x, w = np.polynomial.legendre.leggauss(order)
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    pts = [lo[i] + (hi[i] - lo[i]) * (x + 1) / 2 for i in range(3)]
    P = np.stack(np.meshgrid(*pts, indexing="ij"), -1).reshape(-1, 3)
    W = np.einsum("i,j,k->ijk", w, w, w).reshape(-1) * np.prod(hi - lo) / 8
    return float(W @ fn(P))


def elastic_limit(cfg, threads=1):
    crystal, _ = _crystal(cfg)
    ce, C = _energy(cfg, crystal)
    v, dv = quadratic_displacement(cfg["seed"], cfg["params"].get("curvature", 1.0))
    lo, hi = np.zeros(3), np.ones(3)
    A = dv(np.full(3, 0.5))
    target = gauss_box_integral(
        lambda x: 0.5 * np.einsum("...ij,ijkl,...kl->...", dv(x), C.C, dv(x)), lo, hi)

    def point(eps):
        box = SiteBox.around(lo, hi, eps)
        X = box.coords() @ crystal.basis * eps
        t0 = time.perf_counter()
        u = DisplacementField(box, v(X).reshape(tuple(box.shape) + (3,)), crystal)
        E = total_energy(GradientField(crystal, u), ce)
        ua = DisplacementField(box, (X @ A.T).reshape(tuple(box.shape) + (3,)), crystal)
        Ea = total_energy(GradientField(crystal, ua), ce)
        closed = (n_cluster_centers(box, crystal) * eps ** 3 * abs(np.linalg.det(crystal.basis))
                  * C.energy_density(A))
        return {"eps": eps, "energy": E, "limit": target, "rel_gap": abs(E - target) / target,
                "affine_energy": Ea, "affine_closed_form": closed,
                "affine_rel_err": abs(Ea - closed) / closed,
                "seconds": time.perf_counter() - t0}

    rows = _map(point, cfg["eps"], threads)
    tol = cfg["tolerances"]
    checks = [_check(1, "affine energy equals cluster count x cell energy",
                     all(r["affine_rel_err"] <= tol.get("affine", 1e-10) for r in rows),
                     max(r["affine_rel_err"] for r in rows), tol.get("affine", 1e-10))]
    at32 = [r for r in rows if abs(r["eps"] - 1 / 32) < 1e-15]
    if at32:
        checks.append(_check(1, "relative gap at eps = 1/32", at32[0]["rel_gap"] <= tol.get("gap", 0.10),
                             at32[0]["rel_gap"], tol.get("gap", 0.10)))
    for r0, r1 in zip(rows, rows[1:]):
        rate = r0["rel_gap"] / r1["rel_gap"] if r1["rel_gap"] > 0 else math.inf
        r1["gap_reduction"] = rate
        checks.append(_check(1, f"gap reduction {r0['eps']:.5g} -> {r1['eps']:.5g}",
                             rate >= tol.get("reduction", 1.7), rate, tol.get("reduction", 1.7)))
    return {"elastic_limit": rows}, checks


# ------------------------------------------------------------------ screw sweep

SCREW_SHIFT = np.array([0.125, 0.125, 0.375]) / 64


def screw_scaling(cfg, threads=1):
    crystal, slips = _crystal(cfg)
    ce, C = _energy(cfg, crystal)
    line = cfg["line"]
    b = np.asarray(line["burgers"], float)
    t = np.asarray(line["direction"], float)
    lo, hi = np.asarray(cfg["box"]["lo"], float), np.asarray(cfg["box"]["hi"], float)
    m = cfg["m"]
    ln = LineDislocation(line["point"], t, b)
    boxes = [SiteBox.around(lo, hi, e) for e in cfg["eps"]]
    surfaces = build_slip_surfaces([ln.segment()], [b], crystal, slips)
    shift = cfg["params"].get("shift")
    shift = find_shift(surfaces, crystal, boxes) if shift is None else np.asarray(shift, float)
    psi = LineTension(C)(b, t)
    sched = {s["eps"]: s for s in cfg["schedule_values"]}
    tol = cfg["tolerances"]
    golden_cmu = tol.get("C_mu", FROZEN["C_mu"])
    golden_curl = tol.get("curl_mass_ratio", FROZEN["curl_mass_ratio"])

    def point(eps):
        t0 = time.perf_counter()
        res = build_recovery([ln], eps, lo, hi, crystal, slips, ce, C, m=m, shift=shift)
        d = res.diagnostics
        k, alpha = sched[eps]["k"], sched[eps]["alpha"]
        dil = certify_dilute(res.curve, lo, hi, k, alpha)
        mu = extract_measure(res.xi, res.curve, slips, m=m, alpha=alpha, lo=lo, hi=hi)
        gaps = [s["gap"] for s in mu.stations]
        try:
            cm = curl_mass_bound_check(res.xi, res.curve, ce, m, lo, hi, energy=d["energy"])
            curl = cm.to_dict()
        except ValueError as e:
            curl = {"ratio": None, "note": str(e)}
        L = d["length_in_domain"]
        E = d["energy"]
        row = {"eps": eps, "n_sites": d["n_sites"], "energy": E,
               "scaled_energy": E / (eps ** 2 * math.log(1 / eps)),
               "psi_L": psi * L, "ratio": E / (eps ** 2 * math.log(1 / eps) * psi * L),
               "C_mu": d["C_mu_measured"], "core_sites": d["core_sites"],
               "core_max_distance_over_eps": d["core_max_distance"] / eps,
               "core_in_tube": d["core_in_tube"], "burgers_coeffs": mu.coeffs.tolist(),
               "burgers_gap": max(gaps), "dilute": dil.passed,
               "loop_clearance_ok": all(s["clearance_ok"] for s in mu.stations),
               "curl_mass": curl.get("mass"), "curl_mass_ratio": curl.get("ratio"),
               "curl_note": curl.get("note", ""), "k": k, "alpha": alpha,
               "seconds": time.perf_counter() - t0}
        return row

    rows = _map(point, cfg["eps"], threads)
    bcoef = np.rint(np.asarray(b) @ np.linalg.pinv(surfaces.bhat)).astype(int).tolist()
    checks = []
    for r in rows:
        e = f"eps = {r['eps']:.5g}"
        checks.append(_check(6, f"core nonempty and inside B_(m eps)(gamma), {e}",
                             r["core_sites"] > 0 and r["core_in_tube"], r["core_max_distance_over_eps"], m))
        checks.append(_check(6, f"Burgers classification, {e}",
                             r["burgers_coeffs"] == [bcoef] and r["burgers_gap"] < 1e-6,
                             r["burgers_gap"], 1e-6))
        checks.append(_check(6, f"|d_eps u_eps| <= golden, {e}", r["C_mu"] <= golden_cmu * (1 + 1e-12),
                             r["C_mu"], golden_cmu))
        checks.append(_check(6, f"runtime < 120 s, {e}", r["seconds"] < 120, r["seconds"], 120))
        if r["curl_mass_ratio"] is not None:
            checks.append(_check(12, f"curl-mass ratio <= golden, {e}",
                                 r["curl_mass_ratio"] <= golden_curl, r["curl_mass_ratio"], golden_curl))
    fin = rows[-1]
    checks.append(_check(7, "energy within 25% of psi_C L at the finest eps",
                         abs(fin["ratio"] - 1) <= tol.get("energy", 0.25), fin["ratio"],
                         tol.get("energy", 0.25)))
    dev = [abs(r["ratio"] - 1) for r in rows]
    checks.append(_check(7, "energy ratio approaches 1 monotonically",
                         all(b_ < a_ for a_, b_ in zip(dev, dev[1:])), [r["ratio"] for r in rows]))
    checks.append(_check(7, "sweep runtime < 600 s", sum(r["seconds"] for r in rows) < 600,
                         sum(r["seconds"] for r in rows), 600))
    meta = {"psi_C": psi, "shift": shift.tolist(), "m": m}
    return {"screw_scaling": rows, "screw_meta": [meta]}, checks


# ------------------------------------------------------------------ psi tables

def fcc_burgers():
    """The six ``1/2 <110>`` vectors (one per sign pair), lattice constant 1."""
    out = []
    for i in range(3):
        for j in range(i + 1, 3):
            for s in (1, -1):
                v = np.zeros(3)
                v[i], v[j] = 0.5, 0.5 * s
                out.append(v)
    return out


def orientations(n, seed):
    """Seeded unit vectors on the upper hemisphere."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * np.where(v[:, 2:] < 0, -1, 1)


def psi_table(cfg, threads=1):
    p = cfg["params"]
    n = p.get("orientations", 24)
    en = cfg["energy"]
    if en.get("kind") in ("isotropic", "cubic"):
        C = _tensor(cfg, None, None)
    else:
        crystal, _ = _crystal({**cfg, "crystal": {"kind": "simple_cubic"}})
        C = _energy(cfg, crystal)[1]
    lt = LineTension(C)
    rows = []
    hom = 0.0
    for t in orientations(n, cfg["seed"]):
        for b in fcc_burgers():
            v = lt(b, t)
            v2 = lt(2.5 * b, t)
            err = abs(v2 - 6.25 * v) / max(abs(v), 1e-300)
            hom = max(hom, err)
            rows.append({"b": np.round(b, 12).tolist(), "t": t.tolist(), "psi": v,
                         "homogeneity_rel_err": err})
    checks = [_check(8, "2-homogeneity of psi_C", hom <= 1e-10, hom, 1e-10)]
    iso = isotropic_tensor(1.0, 0.3)
    b = np.array([0, 0, 1.0])
    t0 = time.perf_counter()
    screw = psi_C(iso, b, [0, 0, 1.0], check=((0.05, 2.0), (0.2, 0.8)))
    edge = psi_C(iso, b, [1.0, 0, 0], check=((0.05, 2.0), (0.2, 0.8)))
    ref_s, ref_e = 1 / (4 * math.pi), 1 / (4 * math.pi * 0.7)
    ann = 0.0
    for bb, tt, ref in ((b, [0, 0, 1.0], screw), (b, [1.0, 0, 0], edge)):
        fld = straight_field(iso, bb, tt)
        for r, R in ((0.01, 1.0), (0.3, 3.0), (0.05, 0.1)):
            ann = max(ann, abs(psi_C(iso, bb, tt, r=r, R=R, check=(), field=fld) - ref) / ref)
    secs = time.perf_counter() - t0
    checks += [
        _check(8, "isotropic screw vs mu b^2/(4 pi)", abs(screw - ref_s) / ref_s <= 0.02,
               abs(screw - ref_s) / ref_s, 0.02),
        _check(8, "isotropic edge vs mu b^2/(4 pi (1-nu))", abs(edge - ref_e) / ref_e <= 0.02,
               abs(edge - ref_e) / ref_e, 0.02),
        _check(8, "annulus invariance", ann <= 0.005, ann, 0.005),
        _check(8, "oracle runtime < 60 s", secs < 60, secs, 60),
    ]
    return {"psi_table": rows}, checks


# ------------------------------------------------------------------ prelog

def prelog(cfg, threads=1):
    """Continuum energy increments over halvings of the core radius."""
    crystal, _ = _crystal(cfg)
    C = _energy(cfg, crystal)[1]
    p = cfg["params"]
    b = np.asarray(p.get("burgers", [0, 0, 1.0]), float)
    t = np.asarray(p.get("direction", [0.125, 0, 1.0]), float)
    lo, hi = -np.ones(3), np.ones(3)
    rho0 = p.get("rho", 0.1)
    fld = straight_field(C, b, t)
    psi = LineTension(C)(b, t)
    from .disloc import PolyhedralCurve
    L = PolyhedralCurve.line_through_box(np.zeros(3), t, lo, hi).length()
    rhos = [rho0 / 2 ** i for i in range(4)]
    E = [continuum_energy(fld, C, lo, hi, np.zeros(3), t, r) for r in rhos]
    rows = []
    for i in range(3):
        inc = E[i + 1] - E[i]
        ref = psi * L * math.log(2)
        rows.append({"rho": rhos[i + 1], "increment": inc, "psi_L_ln2": ref,
                     "rel_err": abs(inc - ref) / ref})
    checks = [_check(9, f"increment at rho = {r['rho']:.5g}", r["rel_err"] <= 0.05,
                     r["rel_err"], 0.05) for r in rows]
    return {"prelog": rows}, checks


# ------------------------------------------------------------------ mollified energy

def mollified(cfg, threads=1):
    """Mollified continuum energy against the discrete energy for smooth fields."""
    crystal, _ = _crystal(cfg)
    ce, C = _energy(cfg, crystal)
    p = cfg["params"]
    delta = p.get("delta", 1.0)
    eta = p.get("eta", 0.3)
    A = np.array([[1, .2, 0], [.2, .5, .1], [0, .1, .8]])

    def point(ratio):
        r = int(round(1 / ratio))
        eps = delta / r
        N = 12 * r + 1
        box = SiteBox((0, 0, 0), (N, N, N), eps)
        x = box.coords() * eps
        y = x / delta
        f = np.stack([np.sin(y[:, 1] + 0.3), np.cos(y[:, 2]), np.sin(y[:, 0] + y[:, 1])], 1)
        u = DisplacementField(box, (x @ A.T + delta * eta * f).reshape(N, N, N, 3), crystal)
        inner = SiteBox((5 * r,) * 3, (2 * r + 1,) * 3, eps)
        t0 = time.perf_counter()
        rep = mollified_energy_check(GradientField(crystal, u), ce, C, delta, inner)
        d = rep.as_dict()
        d["seconds"] = time.perf_counter() - t0
        return d

    ratios = cfg["eps"]  # eps / delta
    rows = _map(point, ratios, threads)
    x = np.array([r["eps_over_delta"] for r in rows])
    yv = np.array([r["prefactor"] for r in rows])
    slope, icpt = np.polyfit(x, yv, 1)
    pred = slope * x + icpt
    ss = float(np.sum((yv - yv.mean()) ** 2))
    r2 = 1 - float(np.sum((yv - pred) ** 2)) / ss if ss > 0 else 1.0
    checks = [
        _check(10, "prefactor fit slope > 0", slope > 0, float(slope)),
        _check(10, "prefactor fit R^2 >= 0.9", r2 >= 0.9, r2, 0.9),
        _check(10, "mollified energy bounded by discrete energy",
               all(r["prefactor"] <= 1 + 1e-12 for r in rows), max(yv.tolist())),
    ]
    fit = {"slope": float(slope), "intercept": float(icpt), "r2": r2}
    return {"mollified": rows, "mollified_fit": [fit]}, checks


# ------------------------------------------------------------------ extension

def random_gradient(seed, n_modes=4, screw=False, axis=None):
    """Seeded curl-free sampler ``A + sum c_k cos(k.x + ph) k^T`` (a gradient),
    optionally plus a screw-like angular field about ``axis`` through 0."""
    r = np.random.default_rng(seed)
    A = r.normal(size=(3, 3))
    K = r.normal(size=(n_modes, 3))
    c = r.normal(size=(n_modes, 3)) / n_modes
    ph = r.uniform(0, 2 * np.pi, n_modes)
    bs = r.normal(size=3) if screw else None
    ax = np.array([0, 0, 1.0]) if axis is None else np.asarray(axis, float) / np.linalg.norm(axis)

    def beta(x):
        x = np.asarray(x, float)
        s = np.cos(x @ K.T + ph)
        out = A + np.einsum("...k,ki,kj->...ij", s, c, K)
        if bs is not None:
            perp = x - (x @ ax)[..., None] * ax
            r2 = np.sum(perp ** 2, -1)
            g = np.cross(ax, perp) / (2 * np.pi * r2[..., None])
            out = out + bs[:, None] * g[..., None, :]
        return out

    return beta, bs


def _constant(M):
    M = np.asarray(M, float)
    return lambda x: np.broadcast_to(M, np.shape(x)[:-1] + (3, 3)).copy()


def extension_constants(quad=None):
    """The L^p constants of the reference fixtures."""
    I3 = _constant(np.eye(3))
    cyl = ext.HollowDomainField(I3, "cylinder", 1.0, 2.0)
    e = ext.cylinder_pullback(cyl, p=1.5)
    ball = ext.HollowDomainField(I3, "ball", 1.0)
    eb = ext.ball_pullback(ball)
    inner2, whole2 = ext.ball_lp_ratio(ball, eb, 2.0, quad)
    inner15, whole15 = ext.ball_lp_ratio(ball, eb, 1.5, quad)
    beta, _ = random_gradient(7)
    small = lambda x: _constant(np.array([[0, 1, -.4], [-1, 0, .3], [.4, -.3, 0]]))(x) + 0.05 * beta(x)
    sfld = ext.HollowDomainField(small, "cylinder", 1.0, 2.0)
    es, _ = ext.cylinder_extend(sfld, p=1.5)
    return {
        "cyl_const_p1.5": ext.cylinder_lp_ratio(cyl, e, 1.5, quad),
        "cyl_const_p1.5_lambda": e.lam,
        "ball_const_p2_inner": inner2, "ball_const_p2_whole": whole2,
        "ball_const_p1.5_inner": inner15, "ball_const_p1.5_whole": whole15,
        "cyl_sym_p1.5": ext.symmetric_ratio(sfld, es, 1.5, quad),
    }


def extension_inputs(n, seed):
    """``n`` hollow fields alternating cylinder and shell; odd cylinders carry
    an axis charge, odd shells an antipodal pair of excluded rays."""
    out = []
    for i in range(n):
        s = seed * 1000 + i
        r = np.random.default_rng(s)
        if i % 2 == 0:
            charged = (i // 2) % 2 == 1
            beta, bs = random_gradient(s, screw=charged)
            out.append(ext.HollowDomainField(beta, "cylinder", float(r.uniform(0.5, 1.5)),
                                             float(r.uniform(1.5, 3.0))))
        else:
            rays = (i // 2) % 2 == 1
            ax = r.normal(size=3)
            beta, _ = random_gradient(s, screw=rays, axis=ax)
            out.append(ext.HollowDomainField(beta, "ball", float(r.uniform(0.5, 1.5)),
                                             rays=np.array([ax, -ax]) if rays else np.zeros((0, 3))))
    return out


def extension(cfg, threads=1):
    p = cfg["params"]
    n_inputs = p.get("inputs", 50)
    n_loops = p.get("loops", 200)
    tol = cfg["tolerances"].get("loop", 1e-8)
    fields = extension_inputs(n_inputs, cfg["seed"])

    def one(args):
        i, fld = args
        if fld.kind == "cylinder":
            lam = 1.5 + 0.5 * np.random.default_rng(i).uniform(0.05, 0.95)
            e = ext.cylinder_pullback(fld, lam=lam, p=1.5)
        else:
            e = ext.ball_pullback(fld)
        scale = fld.sup_norm(1000, i)
        loops = ext.random_inner_loops(fld, n_loops, seed=cfg["seed"] + i)
        res = ext.loop_residuals(e, loops)
        row = {"input": i, "kind": fld.kind, "rho": fld.rho, "lambda": e.lam,
               "rays": len(fld.rays), "sup_norm": scale, "max_residual": float(res.max()),
               "relative": float(res.max() / scale),
               "trace_gap": ext.interface_trace_gap(fld, e) / scale}
        if fld.kind == "cylinder":
            ch, _ = fld.axis_charge()
            row["axis_charge"] = ch.tolist()
            # a loop around the axis recovers the charge
            got = ext.circle_circulation(e, np.array([0, 0, fld.length / 2]), [0, 0, 1.0],
                                         0.5 * fld.rho, 256)
            row["axis_charge_inner"] = got.tolist()
            row["charge_gap"] = float(np.abs(got - ch).max() / scale)
        return row

    rows = _map(one, list(enumerate(fields)), threads)
    worst = max(r["relative"] for r in rows)
    checks = [_check(11, f"loop circulation residual over {n_inputs} inputs x {n_loops} loops",
                     worst <= tol, worst, tol)]
    cg = max((r["charge_gap"] for r in rows if "charge_gap" in r), default=0.0)
    checks.append(_check(11, "axis charge recovered inside the cylinder", cg <= 1e-8, cg, 1e-8))
    consts = extension_constants()
    crow = []
    gold = {**FROZEN, **cfg["tolerances"].get("goldens", {})}
    for k, v in consts.items():
        g = gold.get(k)
        row = {"constant": k, "measured": v, "golden": g}
        crow.append(row)
        if g is not None and not k.endswith("_lambda"):
            checks.append(_check(11, f"constant {k} within 20% of golden",
                                 abs(v - g) <= 0.2 * abs(g), v, g))
    disc = {"stated_whole_ball_p2": 2 ** 0.5, "proof_factor_p2": 3 ** 0.5,
            "measured_inner_p2": consts["ball_const_p2_inner"],
            "measured_whole_p2": consts["ball_const_p2_whole"],
            "stated_whole_ball_p1.5": 2 ** (1 / 1.5), "proof_factor_p1.5": 3 ** (1 / 1.5),
            "measured_inner_p1.5": consts["ball_const_p1.5_inner"],
            "measured_whole_p1.5": consts["ball_const_p1.5_whole"]}
    checks.append(_check(11, "ball constant discrepancy recorded", True, disc,
                         note="stated constant 2^(1/p) versus factor 3 in the estimate; "
                              "both bound the measured ratios"))
    return {"extension_loops": rows, "extension_constants": crow,
            "ball_constant_discrepancy": [disc]}, checks


# ------------------------------------------------------------------ coercivity

def coercivity(cfg, threads=1):
    crystal, _ = _crystal(cfg)
    rows, checks = [], []
    for label, ce in (("nn", nn_energy(crystal)), ("nn+nnn", default_energy(crystal))):
        a, witness = coercivity_constant(ce)
        rows.append({"energy": label, "alpha_hat": a,
                     "witness_norm": None if witness is None else float(np.linalg.norm(witness))})
    checks.append(_check(3, "NN-only springs degenerate with witness",
                         rows[0]["alpha_hat"] <= 1e-10 and rows[0]["witness_norm"] is not None,
                         rows[0]["alpha_hat"]))
    checks.append(_check(3, "NN+NNN springs coercive", rows[1]["alpha_hat"] > 1e-10, rows[1]["alpha_hat"]))
    return {"coercivity": rows}, checks


RUNNERS = {"elastic-limit": elastic_limit, "screw-scaling": screw_scaling,
           "psi-table": psi_table, "prelog": prelog, "mollified": mollified,
           "extension": extension, "coercivity": coercivity}


# ------------------------------------------------------------------ output

def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, dict)):
        return json.dumps(v, sort_keys=True)
    return "" if v is None else str(v)


def to_csv(rows) -> str:
    """RFC-4180 CSV; the header is the union of keys in first-seen order."""
    keys = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(keys)
    for r in rows:
        w.writerow([_cell(r.get(k)) for k in keys])
    return buf.getvalue()


def _jsonable(o):
    if isinstance(o, dict):
        return {k: _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    return o


def run(cfg, out_dir, threads=1, seed=None):
    """Run the configured experiment and write ``<table>.csv`` files plus
    ``summary.json``; returns the summary."""
    import os
    if seed is not None:
        cfg = {**cfg, "seed": int(seed)}
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    tables, checks = RUNNERS[cfg["experiment"]](cfg, threads)
    files = []
    for name, rows in tables.items():
        path = os.path.join(out_dir, f"{name}.csv")
        with open(path, "w", newline="") as fh:
            fh.write(to_csv(_jsonable(rows)))
        files.append(path)
    summary = {"experiment": cfg["experiment"], "seed": cfg["seed"],
               "passed": all(c["passed"] for c in checks), "checks": checks,
               "tables": [os.path.basename(f) for f in files],
               "seconds": time.perf_counter() - t0, "config": cfg}
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
    return summary
