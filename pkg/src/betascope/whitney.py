"""Polygonal curves and Whitney-type decompositions of their complement."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dyadic import MAX_LEVEL, Box, DyadicCube, GridConvention
from .errors import InputError

__all__ = [
    "PolyCurve",
    "WhitneyCube",
    "WhitneyDecomposition",
    "curve_distance",
    "curve_distances",
    "box_curve_distances",
    "clip_segments",
    "whitney_decompose",
    "whitney_locate",
    "group_by_distance_class",
    "distance_class",
    "write_whitney",
]


class PolyCurve:
    """Polygonal curve through an ordered vertex list."""

    __slots__ = ("_vertices", "_length")

    def __init__(self, vertices):
        v = np.array(vertices, dtype=float)
        if v.ndim == 1:
            v = v.reshape(1, -1)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise InputError("a curve needs at least one vertex")
        if not np.all(np.isfinite(v)):
            raise InputError("curve vertices must be finite")
        if v.shape[0] > 1 and np.any(np.all(v[1:] == v[:-1], axis=1)):
            raise InputError("consecutive duplicate vertices are not allowed")
        v.flags.writeable = False
        self._vertices = v
        seg = np.diff(v, axis=0)
        self._length = math.fsum(np.sqrt(np.einsum("ij,ij->i", seg, seg)).tolist())

    @property
    def vertices(self) -> np.ndarray:
        return self._vertices

    @property
    def dimension(self) -> int:
        return self._vertices.shape[1]

    @property
    def length(self) -> float:
        return self._length

    @property
    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        """Start points and direction vectors; a single vertex gives one null segment."""
        v = self._vertices
        if v.shape[0] == 1:
            return v.copy(), np.zeros_like(v)
        return v[:-1], np.diff(v, axis=0)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self._vertices.min(axis=0), self._vertices.max(axis=0)

    def point_at(self, s) -> np.ndarray:
        """Points at arclength positions ``s`` (clamped to [0, length])."""
        s = np.clip(np.atleast_1d(np.asarray(s, dtype=float)), 0.0, self._length)
        v = self._vertices
        if v.shape[0] == 1:
            return np.repeat(v, np.size(s), axis=0)
        seg = np.diff(v, axis=0)
        lens = np.sqrt(np.einsum("ij,ij->i", seg, seg))
        cum = np.concatenate([[0.0], np.cumsum(lens)])
        i = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(lens) - 1)
        t = np.clip((s - cum[i]) / lens[i], 0.0, 1.0)
        return v[i] + t[:, None] * seg[i]

    def __repr__(self) -> str:
        return f"PolyCurve(vertices={self._vertices.shape[0]}, length={self._length:.6g})"


def curve_distances(points, curve: PolyCurve, chunk: int = 4096) -> np.ndarray:
    """Exact Euclidean distance from each point to the polyline."""
    P = np.asarray(points, dtype=float).reshape(-1, curve.dimension)
    a, d = curve.segments
    dd = np.einsum("ij,ij->i", d, d)
    safe = np.where(dd > 0, dd, 1.0)
    out = np.empty(P.shape[0])
    for s in range(0, P.shape[0], chunk):
        x = P[s : s + chunk]
        rel = x[:, None, :] - a[None, :, :]
        t = np.where(dd > 0, np.einsum("psi,si->ps", rel, d) / safe, 0.0)
        t = np.clip(t, 0.0, 1.0)
        diff = rel - t[:, :, None] * d[None, :, :]
        out[s : s + chunk] = np.sqrt(np.einsum("psi,psi->ps", diff, diff).min(axis=1))
    return out


def curve_distance(x, curve: PolyCurve) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (curve.dimension,):
        raise InputError("point and curve dimensions differ")
    return float(curve_distances(x, curve)[0])


def _box_dist2(p: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    e = np.maximum(0.0, np.maximum(lo - p, p - hi))
    return np.einsum("...i,...i->...", e, e)


def box_curve_distances(lower, upper, curve: PolyCurve, chunk_pairs: int = 200_000) -> np.ndarray:
    """Exact distance from each closed box [lower, upper] to the polyline.

    Along a segment the squared distance to a box is a convex piecewise
    quadratic in the segment parameter; its pieces are delimited by the
    parameters where the segment crosses a face plane. Minimizing each piece
    and keeping the smallest value gives the exact minimum.
    """
    lo = np.asarray(lower, dtype=float).reshape(-1, curve.dimension)
    hi = np.asarray(upper, dtype=float).reshape(-1, curve.dimension)
    a, d = curve.segments
    S = a.shape[0]
    out = np.empty(lo.shape[0])
    step = max(1, chunk_pairs // S)
    nz = d != 0
    safe_d = np.where(nz, d, 1.0)
    for s in range(0, lo.shape[0], step):
        L = lo[s : s + step, None, :]
        H = hi[s : s + step, None, :]
        A = a[None, :, :]
        D = d[None, :, :]
        t_lo = np.where(nz, (L - A) / safe_d, 0.0)
        t_hi = np.where(nz, (H - A) / safe_d, 0.0)
        C = t_lo.shape[0]
        T = np.concatenate(
            [np.zeros((C, S, 1)), np.ones((C, S, 1)), np.clip(t_lo, 0, 1), np.clip(t_hi, 0, 1)], axis=2
        )
        T.sort(axis=2)
        t0, t1 = T[:, :, :-1], T[:, :, 1:]
        mid = 0.5 * (t0 + t1)
        P = A[:, :, None, :] + mid[..., None] * D[:, :, None, :]
        below = P < L[:, :, None, :]
        above = P > H[:, :, None, :]
        alpha = np.where(below, L[:, :, None, :] - A[:, :, None, :],
                         np.where(above, A[:, :, None, :] - H[:, :, None, :], 0.0))
        beta = np.where(below, -D[:, :, None, :], np.where(above, D[:, :, None, :], 0.0))
        num = np.einsum("...i,...i->...", alpha, beta)
        den = np.einsum("...i,...i->...", beta, beta)
        with np.errstate(divide="ignore", invalid="ignore"):
            tstar = np.where(den > 0, -num / den, t0)
        tstar = np.clip(tstar, t0, t1)
        Pt = A[:, :, None, :] + tstar[..., None] * D[:, :, None, :]
        g = _box_dist2(Pt, L[:, :, None, :], H[:, :, None, :])
        g = np.minimum(g.min(axis=2), np.minimum(_box_dist2(A, L, H), _box_dist2(A + D, L, H)))
        out[s : s + step] = np.sqrt(g.min(axis=1))
    return out


def clip_segments(lower, upper, curve: PolyCurve):
    """Parts of every curve segment inside each closed box.

    Returns ``(valid, p, q)`` with shapes (boxes, segments) and
    (boxes, segments, n): where ``valid`` holds, the segment meets the box in
    the sub-segment from p to q.
    """
    lo = np.asarray(lower, dtype=float).reshape(-1, curve.dimension)[:, None, :]
    hi = np.asarray(upper, dtype=float).reshape(-1, curve.dimension)[:, None, :]
    a, d = curve.segments
    A, D = a[None], d[None]
    nz = D != 0
    safe = np.where(nz, D, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - A) / safe
        t2 = (hi - A) / safe
    tmin = np.where(nz, np.minimum(t1, t2), -np.inf)
    tmax = np.where(nz, np.maximum(t1, t2), np.inf)
    inside_flat = np.where(nz, True, (A >= lo) & (A <= hi))
    t_enter = np.maximum(0.0, tmin.max(axis=2))
    t_exit = np.minimum(1.0, tmax.min(axis=2))
    valid = inside_flat.all(axis=2) & (t_enter <= t_exit)
    p = np.clip(A + t_enter[..., None] * D, lo, hi)
    q = np.clip(A + t_exit[..., None] * D, lo, hi)
    return valid, p, q


def distance_class(dist) -> np.ndarray:
    """The k with 2^(-k-1) < dist <= 2^-k, elementwise (dist > 0)."""
    d = np.asarray(dist, dtype=float)
    if np.any(d <= 0):
        raise InputError("distance classes need positive distances")
    m, e = np.frexp(d)
    return np.where(m == 0.5, 1 - e, -e).astype(np.int64)


@dataclass(frozen=True)
class WhitneyCube:
    cube: DyadicCube
    dist_to_curve: float
    k_class: int
    kind: str = "emitted"


@dataclass
class WhitneyDecomposition:
    """Result of :func:`whitney_decompose`.

    ``emitted`` cubes satisfy dist <= diam <= 4 dist. ``orphans`` are cubes
    whose parent was too close to the curve but which are themselves too far
    for the lower inequality (dist > diam); they still satisfy diam <= 4 dist.
    ``unresolved`` cubes were still too close at ``max_level``.
    ``near_volume`` maps each level to the volume of cubes found too close
    there, which is the unresolved volume a run stopping at that level has.
    """

    curve: PolyCurve
    root_level: int
    max_level: int
    emitted: list[WhitneyCube]
    orphans: list[WhitneyCube]
    unresolved: list[DyadicCube]
    near_volume: dict[int, float] = field(default_factory=dict)

    @property
    def unresolved_volume(self) -> float:
        return math.fsum(q.volume for q in self.unresolved)

    @property
    def orphan_volume(self) -> float:
        return math.fsum(c.cube.volume for c in self.orphans)

    @property
    def emitted_volume(self) -> float:
        return math.fsum(c.cube.volume for c in self.emitted)


def _root_cubes(domain: Box, root_level: int) -> np.ndarray:
    side = math.ldexp(1.0, -root_level)
    lo = np.floor(domain.lower / side).astype(np.int64)
    hi = np.ceil(domain.upper / side).astype(np.int64) - 1
    axes = [np.arange(l, h + 1) for l, h in zip(lo, hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, domain.dimension)


def _default_root(domain: Box) -> int:
    side = 2 * max(domain.half_sides)
    return -math.frexp(side)[1] + (1 if math.frexp(side)[0] == 0.5 else 0)


def _classify(dist: np.ndarray, diam: float):
    too_close = diam > 4.0 * dist
    too_far = ~too_close & (dist > diam)
    return too_close, too_far


def whitney_decompose(curve: PolyCurve, domain: Box, max_level: int, root_level: int | None = None
                      ) -> WhitneyDecomposition:
    """Subdivide the dyadic cubes covering ``domain`` until each is comparable to its distance.

    A cube is kept when dist <= diam <= 4 dist, subdivided while
    diam > 4 dist, and set aside as an orphan when dist > diam.
    """
    if domain.dimension != curve.dimension:
        raise InputError("domain and curve dimensions differ")
    if max_level < 0 or max_level > MAX_LEVEL:
        raise InputError(f"max_level must be in [0, {MAX_LEVEL}]")
    root = _default_root(domain) if root_level is None else int(root_level)
    if root > max_level:
        raise InputError("root level is finer than max_level")
    n = curve.dimension
    conv = GridConvention()
    frontier = _root_cubes(domain, root)
    emitted: list[WhitneyCube] = []
    orphans: list[WhitneyCube] = []
    unresolved: list[DyadicCube] = []
    near: dict[int, float] = {}
    bits = np.array(list(np.ndindex(*(2,) * n)), dtype=np.int64)
    for level in range(root, max_level + 1):
        if frontier.shape[0] == 0:
            near[level] = 0.0
            continue
        side = math.ldexp(1.0, -level)
        diam = math.sqrt(n) * side
        lower = frontier * side
        dist = box_curve_distances(lower, lower + side, curve)
        too_close, too_far = _classify(dist, diam)
        ok = ~too_close & ~too_far
        kclass = np.zeros(dist.shape, np.int64)
        pos = dist > 0
        kclass[pos] = distance_class(dist[pos])
        for rows, sink, kind in ((np.flatnonzero(ok), emitted, "emitted"),
                                 (np.flatnonzero(too_far), orphans, "orphan")):
            for i in rows:
                sink.append(WhitneyCube(DyadicCube(level, tuple(frontier[i]), conv), float(dist[i]),
                                        int(kclass[i]), kind))
        close = frontier[too_close]
        near[level] = close.shape[0] * side**n
        if level == max_level:
            unresolved.extend(DyadicCube(level, tuple(c), conv) for c in close)
        else:
            frontier = (2 * close[:, None, :] + bits[None, :, :]).reshape(-1, n)
    return WhitneyDecomposition(curve, root, max_level, emitted, orphans, unresolved, near)


@dataclass(frozen=True)
class WhitneyLocation:
    level: np.ndarray
    dist: np.ndarray
    k_class: np.ndarray
    kind: np.ndarray


def whitney_locate(points, curve: PolyCurve, root_level: int = 0, max_level: int = MAX_LEVEL
                   ) -> WhitneyLocation:
    """The decomposition cube holding each point, found by descending from ``root_level``.

    Uses the same keep/subdivide/orphan rule as :func:`whitney_decompose`,
    so for points in a decomposed domain the answers coincide. Points still
    too close at ``max_level`` are reported as unresolved with k_class taken
    from their own distance to the curve, which bounds the class of any
    finer cube containing them from below.
    """
    P = np.asarray(points, dtype=float).reshape(-1, curve.dimension)
    n = curve.dimension
    m = P.shape[0]
    level = np.full(m, max_level, np.int64)
    dist = np.zeros(m)
    kind = np.full(m, "unresolved", dtype=object)
    active = np.arange(m)
    for lev in range(root_level, max_level + 1):
        if active.size == 0:
            break
        side = math.ldexp(1.0, -lev)
        diam = math.sqrt(n) * side
        lower = np.floor(np.ldexp(P[active], lev)) * side
        d = box_curve_distances(lower, lower + side, curve)
        too_close, too_far = _classify(d, diam)
        done = ~too_close
        ids = active[done]
        level[ids] = lev
        dist[ids] = d[done]
        kind[ids] = np.where(too_far[done], "orphan", "emitted")
        active = active[too_close]
    kcl = np.zeros(m, np.int64)
    resolved = kind != "unresolved"
    if resolved.any():
        kcl[resolved] = distance_class(dist[resolved])
    if active.size:
        own = curve_distances(P[active], curve)
        if np.any(own <= 0):
            raise InputError("cannot locate points lying on the curve")
        dist[active] = own
        kcl[active] = distance_class(own)
    return WhitneyLocation(level, dist, kcl, kind)


def group_by_distance_class(cubes) -> dict[int, list[WhitneyCube]]:
    """Group Whitney cubes by their distance class."""
    out: dict[int, list[WhitneyCube]] = {}
    for c in cubes:
        k = int(distance_class(c.dist_to_curve))
        out.setdefault(k, []).append(c)
    return dict(sorted(out.items()))


def write_whitney(path, cubes) -> None:
    """Export lines ``level c1 ... cn dist k_class``."""
    lines = []
    for c in cubes:
        coords = " ".join(str(v) for v in c.cube.coords)
        lines.append(f"{c.cube.level} {coords} {format(c.dist_to_curve, '.17g')} {c.k_class}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))
