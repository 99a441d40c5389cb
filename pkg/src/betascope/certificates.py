"""Numerical certificates for the curve-plus-remainder estimate of normalized Jones sums.

Given a measure nu, a set E of its atoms lying on a polygonal curve Gamma and
a top scale r0, the integral of the normalized Jones function over E splits
into cubes where the curve's own flatness dominates and cubes where the
mass off the curve does. The second part has an explicit bound in terms of
nu(R^n minus Gamma) and the lower-regularity constant of E; this module
evaluates both sides and reports every inequality as pass/fail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .beta import beta_sup, min_width_2d
from .dyadic import Box, DyadicCube, GridConvention, box_incidences
from .errors import HypothesisError, InputError
from .jones import level_increments, start_level
from .levels import MultiscaleIndex, group_keys
from .measure import DiscreteMeasure, ball_masses
from .whitney import PolyCurve, clip_segments, curve_distances, whitney_locate

__all__ = [
    "CertificateParams",
    "CubeRecord",
    "CubePartition",
    "CertificateReport",
    "TSTSum",
    "extract_lower_regular",
    "lower_regularity_constant",
    "partition_cubes",
    "flatness_certificate",
    "tst_sum",
    "curve_set_beta",
    "ON_CURVE_RTOL",
]

ON_CURVE_RTOL = 1e-9
BOUND_RTOL = 1e-9
IDENTITY_RTOL = 1e-12


def _default_a(n: int) -> float:
    return 3.0 + 6.0 * math.sqrt(n)


@dataclass(frozen=True)
class CertificateParams:
    """Constants of the estimate; ``a`` and ``epsilon`` default to their largest admissible values."""

    c_E: float
    r0: float
    dimension: int = 2
    a: float | None = None
    epsilon: float | None = None

    def __post_init__(self):
        n = self.dimension
        if n < 1:
            raise InputError("dimension must be positive")
        if not (self.c_E > 0 and math.isfinite(self.c_E)):
            raise InputError("c_E must be positive")
        if not (self.r0 > 0 and math.isfinite(self.r0)):
            raise InputError("r0 must be positive")
        a = _default_a(n) if self.a is None else float(self.a)
        if a < _default_a(n) * (1 - 1e-15):
            raise InputError(f"a must be at least 3 + 6 sqrt(n) = {_default_a(n)!r}")
        eps_max = 3.0 / (2.0 * a * math.sqrt(6.0))
        eps = eps_max if self.epsilon is None else float(self.epsilon)
        if not 0 < eps <= eps_max * (1 + 1e-15):
            raise InputError(f"epsilon must lie in (0, 3/(2 a sqrt 6)] = (0, {eps_max!r}]")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "epsilon", eps)

    @property
    def m_log(self) -> int:
        """1 + floor(log2(3 sqrt n)); the Whitney class drop allowed below a cube's level."""
        return 1 + math.floor(math.log2(3.0 * math.sqrt(self.dimension)))

    @property
    def offcurve_bound_constant(self) -> float:
        n = self.dimension
        return (1600.0 / 3.0) * 4.0**n * math.sqrt(n) / self.c_E


# --- lower regularity ------------------------------------------------------


def _resolution_floor(mu: DiscreteMeasure) -> float:
    if mu.resolution_scale is not None:
        return float(mu.resolution_scale)
    if len(mu) < 2:
        return 0.0
    d, _ = cKDTree(mu.points).query(mu.points, k=2)
    pos = d[:, 1][d[:, 1] > 0]
    return float(pos.min()) if pos.size else 0.0


def _sampled_radii(mu: DiscreteMeasure, top: float, radii_per_octave: int) -> np.ndarray:
    if radii_per_octave < 1:
        raise InputError("radii_per_octave must be at least 1")
    floor = _resolution_floor(mu)
    radii = [top]
    i = 1
    while True:
        r = top * 2.0 ** (-i / radii_per_octave)
        if r < floor or r <= 0 or i > 64 * radii_per_octave:
            break
        radii.append(r)
        i += 1
    return np.array(radii)


def extract_lower_regular(mu: DiscreteMeasure, j: int, k: int, radii_per_octave: int = 4) -> np.ndarray:
    """Atoms x with mu(B(x, r)) >= 2^-j r at every sampled r in [resolution, 2^-k].

    The radii are 2^-k * 2^(-i / radii_per_octave), i = 0, 1, ..., stopping
    at the measure's resolution scale (or the smallest atom spacing when
    none is recorded).
    """
    if j < 0 or k < 0:
        raise InputError("j and k must be nonnegative")
    radii = _sampled_radii(mu, math.ldexp(1.0, -k), radii_per_octave)
    masses = ball_masses(mu, mu.points, radii)
    ok = np.all(masses >= math.ldexp(1.0, -j) * radii[None, :], axis=1)
    return np.flatnonzero(ok)


def lower_regularity_constant(mu: DiscreteMeasure, atoms, r0: float, radii_per_octave: int = 4):
    """min over the given atoms and sampled radii r <= r0 of mu(B(x, r)) / r.

    Returns ``(ratio, atom, radius)`` at the minimum.
    """
    atoms = np.asarray(atoms, dtype=np.int64).reshape(-1)
    if atoms.size == 0:
        raise InputError("no atoms given")
    radii = _sampled_radii(mu, r0, radii_per_octave)
    ratios = ball_masses(mu, mu.points[atoms], radii) / radii[None, :]
    i, r = np.unravel_index(int(np.argmin(ratios)), ratios.shape)
    return float(ratios[i, r]), int(atoms[i]), float(radii[r])


# --- curve flatness in dilated cubes --------------------------------------


def curve_set_beta(curve: PolyCurve, boxes: list[Box]) -> np.ndarray:
    """beta_sup of the continuum curve inside each closed box.

    The curve meets a box in finitely many sub-segments, whose convex hull is
    the hull of their endpoints, so the endpoints give the exact value.
    """
    out = np.zeros(len(boxes))
    if not boxes:
        return out
    lower = np.array([b.lower for b in boxes])
    upper = np.array([b.upper for b in boxes])
    for start in range(0, len(boxes), 2048):
        sl = slice(start, start + 2048)
        valid, p, q = clip_segments(lower[sl], upper[sl], curve)
        for row in np.flatnonzero(valid.sum(axis=1) >= 2):
            v = valid[row]
            pts = np.concatenate([p[row][v], q[row][v]])
            box = boxes[start + row]
            if curve.dimension == 2:
                w, _ = min_width_2d(pts)
                out[start + row] = min(1.0, 0.5 * w / box.diameter)
            else:
                out[start + row] = beta_sup(pts, box).value
    return out


def _dilated_boxes(keys: np.ndarray, level: int, lam: float) -> list[Box]:
    side = math.ldexp(1.0, -level)
    centers = (keys + 0.5) * side
    half = (lam * side / 2,) * keys.shape[1]
    return [Box(tuple(c), half) for c in centers]


# --- partition and certificate --------------------------------------------


@dataclass(frozen=True)
class CubeRecord:
    cube: DyadicCube
    family: str
    beta2: float
    beta_curve: float
    mass: float
    mass_E: float

    @property
    def jones_term(self) -> float:
        """beta2(nu, 3Q)^2 diam Q nu(E cap Q) / nu(Q)."""
        return self.beta2**2 * self.cube.diameter * self.mass_E / self.mass


@dataclass
class CubePartition:
    inactive: list[DyadicCube]
    curve_dominated: list[DyadicCube]
    measure_dominated: list[DyadicCube]
    records: list[CubeRecord] = field(repr=False)
    r0: float
    depth: int

    def family_of(self) -> dict[str, str]:
        return {rec.cube.ident(): rec.family for rec in self.records}


def _curve_scale(nu: DiscreteMeasure, curve: PolyCurve) -> float:
    lo, hi = curve.bounds()
    if len(nu):
        lo = np.minimum(lo, nu.points.min(axis=0))
        hi = np.maximum(hi, nu.points.max(axis=0))
    return max(float(np.linalg.norm(hi - lo)), np.finfo(float).tiny)


def _prepare(nu: DiscreteMeasure, E, curve: PolyCurve):
    if nu.period is not None:
        raise InputError("certificates need a non-periodic measure")
    if curve.dimension != nu.dimension:
        raise InputError("curve and measure dimensions differ")
    E = np.unique(np.asarray(E, dtype=np.int64).reshape(-1))
    if E.size and (E.min() < 0 or E.max() >= len(nu)):
        raise InputError("E refers to atoms outside the measure")
    tol = ON_CURVE_RTOL * _curve_scale(nu, curve)
    dist = curve_distances(nu.points, curve)
    if E.size and np.any(dist[E] > tol):
        bad = int(E[np.argmax(dist[E])])
        raise InputError(f"atom {bad} of E lies {dist[bad]:.3g} away from the curve")
    return E, dist > tol


def partition_cubes(
    nu: DiscreteMeasure,
    E,
    curve: PolyCurve,
    params: CertificateParams,
    depth: int,
    *,
    index: MultiscaleIndex | None = None,
) -> CubePartition:
    """Sort every cube meeting the data (levels up to ``depth``) into the three families.

    ``inactive``: side > r0 or nu(E cap Q) = 0. ``curve_dominated``: eps beta2(nu, 3Q)
    <= beta_curve(aQ). ``measure_dominated``: the rest.
    """
    E, _ = _prepare(nu, E, curve)
    return _partition(nu, E, curve, params, depth, index or MultiscaleIndex(nu))


def _partition(nu, E, curve, params, depth, index) -> CubePartition:
    if params.dimension != nu.dimension:
        raise InputError("parameter dimension does not match the measure")
    k0 = start_level(params.r0)
    if depth < k0:
        raise InputError("depth is coarser than r0")
    inE = np.zeros(len(nu), bool)
    inE[E] = True
    conv = GridConvention()
    d0, dg, d2, records = [], [], [], []
    for level in range(min(0, k0), depth + 1):
        table = index.table(level)
        ncell = table.cell_keys.shape[0]
        massE = np.bincount(table.atom_cell[inE], weights=nu.weights[inE], minlength=ncell)
        b2 = table.box_beta[table.cell_box]
        live = (table.cell_mass > 0) & (massE > 0) & (level >= k0)
        bg = np.zeros(ncell)
        rows = np.flatnonzero(live)
        bg[rows] = curve_set_beta(curve, _dilated_boxes(table.cell_keys[rows], level, params.a))
        for i in range(ncell):
            if table.cell_mass[i] <= 0:
                continue
            Q = DyadicCube(level, tuple(table.cell_keys[i]), conv)
            if not live[i]:
                fam, sink = "inactive", d0
            elif params.epsilon * b2[i] <= bg[i]:
                fam, sink = "curve_dominated", dg
            else:
                fam, sink = "measure_dominated", d2
            sink.append(Q)
            records.append(CubeRecord(Q, fam, float(b2[i]), float(bg[i]),
                                      float(table.cell_mass[i]), float(massE[i])))
    return CubePartition(d0, dg, d2, records, params.r0, depth)


def _cubes_near_curve(curve: PolyCurve, level: int, lam: float) -> np.ndarray:
    """Keys of every level cube whose closed lam-dilate meets the curve."""
    side = math.ldexp(1.0, -level)
    a, d = curve.segments
    pieces = []
    for s in range(a.shape[0]):
        count = max(1, math.ceil(np.linalg.norm(d[s]) / side))
        t = np.arange(count + 1) / count
        pieces.append(a[s] + t[:, None] * d[s])
    P = np.concatenate(pieces)
    # consecutive samples are at most one side apart, so padding by one cell
    # catches every cube whose dilate meets the segment between them
    _, keys, _ = box_incidences(P, level, lam + 2.0)
    keys, _ = group_keys(keys)
    lo = (keys + 0.5 - lam / 2) * side
    hi = (keys + 0.5 + lam / 2) * side
    hit = np.zeros(keys.shape[0], bool)
    for start in range(0, keys.shape[0], 4096):
        valid, _, _ = clip_segments(lo[start:start + 4096], hi[start:start + 4096], curve)
        hit[start:start + 4096] = valid.any(axis=1)
    return keys[hit]


@dataclass(frozen=True)
class CertificateReport:
    curve_term: float
    offcurve_term: float
    curve_bound: float
    curve_bound_full: float
    offcurve_bound: float
    lhs_integral: float
    decomposition_sum: float
    off_curve_mass: float
    c_E: float
    r0: float
    depth: int
    counts: dict
    class_floor_violations: int
    flags: dict

    @property
    def passed(self) -> bool:
        return all(v == "pass" for v in self.flags.values() if v != "skipped")

    def to_text(self) -> str:
        lines = []
        for key in ("lhs_integral", "decomposition_sum", "curve_term", "offcurve_term", "curve_bound",
                    "curve_bound_full", "offcurve_bound", "off_curve_mass", "c_E", "r0"):
            lines.append(f"{key} = {format(getattr(self, key), '.17g')}")
        lines.append(f"depth = {self.depth}")
        for key in sorted(self.counts):
            lines.append(f"count_{key} = {self.counts[key]}")
        lines.append(f"class_floor_violations = {self.class_floor_violations}")
        for key, v in self.flags.items():
            lines.append(f"check_{key} = {v}")
        lines.append(f"passed = {'yes' if self.passed else 'no'}")
        return "\n".join(lines) + "\n"


def _check_hypothesis(nu, E, params, radii_per_octave):
    if E.size == 0:
        return
    ratio, atom, radius = lower_regularity_constant(nu, E, params.r0, radii_per_octave)
    if ratio < params.c_E:
        raise HypothesisError(
            f"atom {atom}: mass/r = {ratio:.6g} < c_E = {params.c_E:.6g} at r = {radius:.6g}",
            atom=atom, radius=radius, ratio=ratio,
        )


def _rel_le(a: float, b: float, rtol: float) -> bool:
    return a <= b + rtol * max(abs(a), abs(b))


def flatness_certificate(
    nu: DiscreteMeasure,
    E,
    curve: PolyCurve,
    params: CertificateParams,
    depth: int,
    *,
    radii_per_octave: int = 4,
    index: MultiscaleIndex | None = None,
) -> CertificateReport:
    """Evaluate both sides of the estimate and every explicit inequality.

    The integral over E of the normalized Jones function (top scale r0) is
    computed from per-atom profiles and again as a sum over the partition;
    the two must agree to 1e-12 relative.
    """
    E, off = _prepare(nu, E, curve)
    _check_hypothesis(nu, E, params, radii_per_octave)
    index = index or MultiscaleIndex(nu)
    part = _partition(nu, E, curve, params, depth, index)
    eps2 = params.epsilon**2

    if E.size:
        inc = level_increments(nu, E, params.r0, depth, "normalized", index=index)
        lhs = math.fsum((nu.weights[E][:, None] * inc).ravel().tolist())
    else:
        lhs = 0.0
    curve_term = math.fsum(r.jones_term for r in part.records if r.family == "curve_dominated")
    offcurve_term = math.fsum(r.jones_term for r in part.records if r.family == "measure_dominated")
    decomp = math.fsum(r.jones_term for r in part.records if r.family != "inactive")
    curve_bound = math.fsum(r.beta_curve**2 * r.cube.diameter
                        for r in part.records if r.family == "curve_dominated") / eps2

    k0 = start_level(params.r0)
    full = []
    n = nu.dimension
    for level in range(k0, depth + 1):
        keys = _cubes_near_curve(curve, level, params.a)
        bc = curve_set_beta(curve, _dilated_boxes(keys, level, params.a))
        full.append(float(np.sum(bc**2)) * math.sqrt(n) * math.ldexp(1.0, -level))
    curve_bound_full = math.fsum(full) / eps2

    off_mass = math.fsum(nu.weights[off].tolist())
    offcurve_bound = params.offcurve_bound_constant * off_mass

    violations = 0
    off_ids = np.flatnonzero(off)
    if part.measure_dominated and off_ids.size:
        loc = whitney_locate(nu.points[off_ids], curve)
        P = nu.points[off_ids]
        for Q in part.measure_dominated:
            box = Box(tuple(Q.center), (1.5 * Q.side,) * n)
            inside = box.contains(P)
            k1 = Q.level - params.m_log
            violations += int(np.sum(loc.k_class[inside] < k1))

    ids = [r.cube.ident() for r in part.records]
    exhaustive = len(ids) == len(set(ids)) == (len(part.inactive) + len(part.curve_dominated) + len(part.measure_dominated))
    scale = max(abs(lhs), abs(decomp))
    flags = {
        "partition": "pass" if exhaustive else "fail",
        "decomposition_identity": "pass" if abs(lhs - decomp) <= IDENTITY_RTOL * scale else "fail",
        "lhs_le_terms": "pass" if _rel_le(lhs, curve_term + offcurve_term, IDENTITY_RTOL) else "fail",
        "curve_term_le_bound": "pass" if _rel_le(curve_term, curve_bound, BOUND_RTOL) else "fail",
        "lhs_le_full_tst_plus_offcurve": "pass" if _rel_le(lhs, curve_bound_full + offcurve_term, BOUND_RTOL) else "fail",
        "offcurve_term_le_bound": "pass" if _rel_le(offcurve_term, offcurve_bound, BOUND_RTOL) else "fail",
        "whitney_class_floor": ("pass" if violations == 0 else "fail") if part.measure_dominated else "skipped",
    }
    counts = {"inactive": len(part.inactive), "curve_dominated": len(part.curve_dominated),
              "measure_dominated": len(part.measure_dominated), "E": int(E.size)}
    return CertificateReport(curve_term, offcurve_term, curve_bound, curve_bound_full, offcurve_bound, lhs, decomp,
                             off_mass, params.c_E, params.r0, depth, counts, violations, flags)


# --- traveling salesman sums ----------------------------------------------


@dataclass(frozen=True)
class TSTSum:
    total: float
    per_level: dict
    depth: int
    lam: float


def tst_sum(E, depth: int, lam: float = 3.0, min_level: int = 0) -> TSTSum:
    """Sum over default-grid cubes Q (levels min_level..depth) of beta_E(lam Q)^2 diam Q."""
    P = np.asarray(E, dtype=float)
    if P.ndim != 2 or P.shape[0] == 0:
        raise InputError("E must be a nonempty (m, n) array")
    if not np.all(np.isfinite(P)):
        raise InputError("E must be finite")
    n = P.shape[1]
    per = {}
    for level in range(min_level, depth + 1):
        side = math.ldexp(1.0, -level)
        ids, keys, _ = box_incidences(P, level, lam)
        ukeys, inv = group_keys(keys)
        counts = np.bincount(inv, minlength=ukeys.shape[0])
        order = np.argsort(inv, kind="stable")
        starts = np.concatenate([[0], np.cumsum(counts)])
        diam_box = lam * math.sqrt(n) * side
        vals = []
        for g in np.flatnonzero(counts >= 3):
            pts = P[ids[order[starts[g]:starts[g + 1]]]]
            if n == 2:
                w, _ = min_width_2d(pts)
                b = min(1.0, 0.5 * w / diam_box)
            else:
                c = (ukeys[g] + 0.5) * side
                b = beta_sup(pts, Box(tuple(c), (lam * side / 2,) * n)).value
            vals.append(b * b)
        per[level] = math.fsum(vals) * math.sqrt(n) * side
    return TSTSum(math.fsum(per.values()), per, depth, float(lam))
