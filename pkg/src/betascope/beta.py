"""L2 beta numbers, set betas and brute-force verification oracles.

The L2 beta of a weighted point set is computed in closed form: the optimal
line passes through the weighted centroid along a top eigenvector of the
centered second-moment matrix. The sup-type set beta is the half-width of the
thinnest slab (n = 2) or cylinder (n >= 3) holding the points.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.spatial import ConvexHull, QhullError

from .dyadic import Box, DyadicCube, dilate
from .errors import CostGuardError, DegenerateInputError, InputError
from .measure import DiscreteMeasure

__all__ = [
    "Line",
    "BetaResult",
    "GroupFit",
    "fit_groups",
    "best_fit_line",
    "beta2",
    "beta2_box",
    "beta_sup",
    "min_width_2d",
    "convex_hull_2d",
    "beta2_oracle",
    "beta_sup_oracle",
    "ORACLE_LIMIT",
]

TIE_RTOL = 1e-10
ORACLE_LIMIT = 200
_ZERO = 1e-12


@dataclass(frozen=True)
class Line:
    point: tuple[float, ...]
    direction: tuple[float, ...]

    def __post_init__(self):
        p = tuple(float(v) for v in np.ravel(self.point))
        d = np.asarray(self.direction, dtype=float).ravel()
        if len(p) != d.size:
            raise InputError("line point and direction differ in dimension")
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise InputError("line direction must be a unit vector")
        object.__setattr__(self, "point", p)
        object.__setattr__(self, "direction", tuple(d.tolist()))

    def distances(self, points) -> np.ndarray:
        d = np.asarray(points, dtype=float).reshape(-1, len(self.point)) - self.point
        u = np.array(self.direction)
        perp = d - np.outer(d @ u, u)
        return np.sqrt(np.einsum("ij,ij->i", perp, perp))


@dataclass(frozen=True)
class BetaResult:
    """A beta value with its witnessing line and normalizers.

    ``mass`` is the measure of the region for L2 betas and the number of
    points for set betas. ``exact`` is False only for set betas in n >= 3.
    """

    value: float
    witness: Line
    mass: float
    diameter: float
    exact: bool = True


def _canonical_directions(vals: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    """Tie-broken unit top eigenvectors, one per group.

    Among all unit vectors of the top eigenspace the lexicographically
    largest is chosen, which also makes the first nonzero coordinate positive.
    """
    G, n = vals.shape
    top = vals[:, -1]
    scale = np.maximum(np.abs(top), np.finfo(float).tiny)
    tied = np.abs(vals - top[:, None]) <= TIE_RTOL * scale[:, None]
    tied |= (np.abs(top) <= 1e-300)[:, None]
    dirs = vecs[:, :, -1].copy()
    simple = tied.sum(axis=1) == 1
    if simple.any():
        d = dirs[simple]
        lead = np.argmax(np.abs(d) > _ZERO, axis=1)
        sign = np.sign(d[np.arange(d.shape[0]), lead])
        sign[sign == 0] = 1.0
        dirs[simple] = d * sign[:, None]
    for g in np.flatnonzero(~simple):
        B = vecs[g][:, tied[g]]
        for i in range(n):
            p = B @ B[i]
            norm = np.linalg.norm(p)
            if norm > _ZERO:
                dirs[g] = p / norm
                break
    return dirs


@dataclass(frozen=True)
class GroupFit:
    """Per-group weighted line fits for grouped points."""

    mass: np.ndarray
    centroid: np.ndarray
    second_moment: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    direction: np.ndarray
    residual: np.ndarray


def fit_groups(points: np.ndarray, weights: np.ndarray, groups: np.ndarray, ngroups: int) -> GroupFit:
    """Best-fit lines for many point groups at once.

    ``groups[i]`` is the group of ``points[i]``. Groups with zero mass get a
    zero residual and the default direction (1, 0, ..., 0).
    """
    X = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    n = X.shape[1]
    mass = np.bincount(groups, weights=w, minlength=ngroups)
    safe = np.where(mass > 0, mass, 1.0)
    cen = np.stack([np.bincount(groups, weights=w * X[:, a], minlength=ngroups) for a in range(n)], 1)
    cen /= safe[:, None]
    D = X - cen[groups]
    M = np.empty((ngroups, n, n))
    for a in range(n):
        for b in range(a, n):
            M[:, a, b] = M[:, b, a] = np.bincount(groups, weights=w * D[:, a] * D[:, b], minlength=ngroups)
    vals, vecs = np.linalg.eigh(M)
    dirs = _canonical_directions(vals, vecs)
    u = dirs[groups]
    perp = D - np.einsum("ij,ij->i", D, u)[:, None] * u
    res = np.bincount(groups, weights=w * np.einsum("ij,ij->i", perp, perp), minlength=ngroups)
    return GroupFit(mass, cen, M, vals, vecs, dirs, res)


def _in_region(mu: DiscreteMeasure, region: Box):
    """Positions and weights of the atoms in a closed box, periodic copies included."""
    if region.dimension != mu.dimension:
        raise InputError("region and measure dimensions differ")
    if mu.period is None:
        mask = region.contains(mu.points)
        return mu.points[mask], mu.weights[mask]
    p = mu.period
    lo, hi = region.lower, region.upper
    ks = [range(math.floor(l / p) - 1, math.floor(h / p) + 1) for l, h in zip(lo, hi)]
    pts, ws = [], []
    for k in itertools.product(*ks):
        shifted = mu.points + np.array(k, dtype=float) * p
        mask = region.contains(shifted)
        pts.append(shifted[mask])
        ws.append(mu.weights[mask])
    return np.concatenate(pts), np.concatenate(ws)


def best_fit_line(mu: DiscreteMeasure, region: Box) -> tuple[Line, float]:
    """Weighted total-least-squares line of the atoms in a closed box."""
    X, w = _in_region(mu, region)
    if w.sum() <= 0:
        raise DegenerateInputError("no positive mass in the region")
    fit = fit_groups(X, w, np.zeros(len(w), dtype=np.int64), 1)
    return Line(tuple(fit.centroid[0]), tuple(fit.direction[0])), float(fit.residual[0])


def _normalized(residual: float, mass: float, diam: float) -> float:
    if mass <= 0:
        return 0.0
    return min(1.0, math.sqrt(max(residual, 0.0) / (mass * diam * diam)))


def beta2_box(mu: DiscreteMeasure, region: Box) -> BetaResult:
    """L2 beta of ``mu`` over a closed box, normalized by the box diameter."""
    diam = region.diameter
    X, w = _in_region(mu, region)
    mass = float(w.sum())
    if mass <= 0:
        e1 = (1.0,) + (0.0,) * (mu.dimension - 1)
        return BetaResult(0.0, Line(region.center, e1), 0.0, diam)
    fit = fit_groups(X, w, np.zeros(len(w), dtype=np.int64), 1)
    line = Line(tuple(fit.centroid[0]), tuple(fit.direction[0]))
    return BetaResult(_normalized(float(fit.residual[0]), mass, diam), line, mass, diam)


def beta2(mu: DiscreteMeasure, Q: DyadicCube, lam: float = 3.0) -> BetaResult:
    """L2 beta of ``mu`` over the closed lam-dilate of the cube Q."""
    return beta2_box(mu, dilate(Q, lam))


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull_2d(points) -> np.ndarray:
    """Hull vertices in counter-clockwise order, collinear points dropped."""
    P = np.asarray(points, dtype=float).reshape(-1, 2)
    if P.shape[0] > 256:
        try:
            hull = ConvexHull(P)
            return P[hull.vertices]
        except QhullError:
            pass
    pts = sorted(set(map(tuple, P.tolist())))
    if len(pts) <= 2:
        return np.array(pts, dtype=float).reshape(-1, 2)
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=float)


def min_width_2d(points) -> tuple[float, Line | None]:
    """Exact width of the thinnest slab holding planar points, with its midline."""
    H = convex_hull_2d(points)
    if H.shape[0] == 0:
        return 0.0, None
    if H.shape[0] == 1:
        return 0.0, Line(tuple(H[0]), (1.0, 0.0))
    if H.shape[0] == 2:
        d = H[1] - H[0]
        d = d / np.linalg.norm(d)
        if d[0] < 0 or (d[0] == 0 and d[1] < 0):
            d = -d
        return 0.0, Line(tuple(H[0]), tuple(d))
    E = np.roll(H, -1, axis=0) - H
    L = np.hypot(E[:, 0], E[:, 1])
    keep = L > 0
    H0, E, L = H[keep], E[keep], L[keep]
    normals = np.stack([-E[:, 1], E[:, 0]], 1) / L[:, None]
    heights = np.abs(np.einsum("eij,ej->ei", H[None, :, :] - H0[:, None, :], normals))
    widths = heights.max(axis=1)
    i = int(np.argmin(widths))
    w = float(widths[i])
    d = E[i] / L[i]
    if d[0] < 0 or (d[0] == 0 and d[1] < 0):
        d = -d
    return w, Line(tuple(H0[i] + 0.5 * w * normals[i]), tuple(d))


def _ball_of(support: list[np.ndarray]):
    """Smallest ball with all given points on its boundary (within their affine hull)."""
    if not support:
        return None, -1.0
    p0 = support[0]
    if len(support) == 1:
        return p0, 0.0
    A = np.array([s - p0 for s in support[1:]])
    G = 2 * A @ A.T
    b = np.einsum("ij,ij->i", A, A)
    lam, *_ = np.linalg.lstsq(G, b, rcond=None)
    c = p0 + lam @ A
    r = max(float(np.linalg.norm(s - c)) for s in support)
    return c, r


def _welzl(P: list[np.ndarray], R: list[np.ndarray], d: int):
    if not P or len(R) == d + 1:
        return _ball_of(R)
    p = P[-1]
    c, r = _welzl(P[:-1], R, d)
    if c is not None and np.linalg.norm(p - c) <= r * (1 + 1e-12) + 1e-300:
        return c, r
    return _welzl(P[:-1], R + [p], d)


def min_enclosing_ball(points) -> tuple[np.ndarray, float]:
    """Smallest enclosing ball, by support-set growth with exact small subproblems."""
    P = np.asarray(points, dtype=float)
    if P.shape[0] == 0:
        raise DegenerateInputError("no points")
    d = P.shape[1]
    support = [P[0]]
    c, r = P[0], 0.0
    while True:
        dist = np.linalg.norm(P - c, axis=1)
        far = int(np.argmax(dist))
        if dist[far] <= r * (1 + 1e-12) + 1e-300:
            return c, r
        support.append(P[far])
        c, r = _welzl(list(support), [], d)
        support = [s for s in support if abs(np.linalg.norm(s - c) - r) <= 1e-9 * max(r, 1e-300)]


def _perp_basis(u: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the hyperplane orthogonal to u, as rows."""
    n = u.size
    q, _ = np.linalg.qr(np.column_stack([u, np.eye(n)]))
    return q[:, 1:n].T


def _cylinder_radius(P: np.ndarray, u: np.ndarray) -> tuple[float, np.ndarray]:
    u = u / np.linalg.norm(u)
    B = _perp_basis(u)
    c, r = min_enclosing_ball(P @ B.T)
    return r, c @ B


def _slab_heuristic(P: np.ndarray, seed: int = 0):
    n = P.shape[1]
    m = P.shape[0]
    cen = P.mean(axis=0)
    _, vecs = np.linalg.eigh((P - cen).T @ (P - cen))
    cands = [vecs[:, -1], vecs[:, -2], vecs[:, 0]]
    order = np.argsort(-np.linalg.norm(P - cen, axis=1))
    ext = P[order[: min(m, 12)]]
    for i in range(len(ext)):
        for j in range(i + 1, len(ext)):
            d = ext[j] - ext[i]
            if np.linalg.norm(d) > 0:
                cands.append(d)
    rng = np.random.default_rng(seed)
    cands.extend(rng.standard_normal((32, n)))
    scored = sorted(((_cylinder_radius(P, u)[0], k) for k, u in enumerate(cands)))
    best_r, best_u = math.inf, None
    for _, k in scored[:4]:
        u0 = cands[k] / np.linalg.norm(cands[k])
        B = _perp_basis(u0)

        def f(z, u0=u0, B=B):
            return _cylinder_radius(P, u0 + z @ B)[0]

        res = optimize.minimize(f, np.zeros(n - 1), method="Nelder-Mead",
                                options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 400 * n})
        u = u0 + res.x @ B
        r = f(res.x)
        if r < best_r:
            best_r, best_u = r, u / np.linalg.norm(u)
    r, c = _cylinder_radius(P, best_u)
    return r, best_u, c


def beta_sup(E, region: Box) -> BetaResult:
    """Set beta: half-width of the thinnest slab/cylinder holding E in the box, over diam."""
    diam = region.diameter
    n = region.dimension
    P = np.asarray(E, dtype=float).reshape(-1, n)
    P = P[region.contains(P)]
    e1 = (1.0,) + (0.0,) * (n - 1)
    if P.shape[0] == 0:
        return BetaResult(0.0, Line(region.center, e1), 0.0, diam)
    count = float(P.shape[0])
    if n == 1:
        return BetaResult(0.0, Line(tuple(P[0]), e1), count, diam)
    if n == 2:
        w, line = min_width_2d(P)
        return BetaResult(min(1.0, 0.5 * w / diam), line, count, diam)
    P = np.unique(P, axis=0)
    if P.shape[0] <= 2:
        if P.shape[0] == 1:
            return BetaResult(0.0, Line(tuple(P[0]), e1), count, diam)
        d = (P[1] - P[0]) / np.linalg.norm(P[1] - P[0])
        return BetaResult(0.0, Line(tuple(P[0]), tuple(d)), count, diam)
    r, u, c = _slab_heuristic(P)
    fit = fit_groups(P, np.ones(len(P)), np.zeros(len(P), dtype=np.int64), 1)
    l2_floor = math.sqrt(max(fit.residual[0], 0.0) / len(P))
    if r < l2_floor * (1 - 1e-9) - 1e-15:
        raise RuntimeError("cylinder search fell below the L2 lower bound")
    return BetaResult(min(1.0, r / diam), Line(tuple(c), tuple(u)), count, diam, exact=False)


# --- brute-force oracles -------------------------------------------------


def _guard(count: int):
    if count > ORACLE_LIMIT:
        raise CostGuardError(f"oracle limited to {ORACLE_LIMIT} points, got {count}")


def _fibonacci_hemisphere(k: int) -> np.ndarray:
    i = np.arange(k) + 0.5
    z = i / k
    phi = i * math.pi * (3 - math.sqrt(5))
    s = np.sqrt(1 - z * z)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], 1)


def _direction_grid(n: int) -> np.ndarray:
    if n == 2:
        th = np.linspace(0, math.pi, 720, endpoint=False)
        return np.stack([np.cos(th), np.sin(th)], 1)
    if n == 3:
        return _fibonacci_hemisphere(1500)
    rng = np.random.default_rng(12345)
    g = rng.standard_normal((4000, n))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def beta2_oracle(mu: DiscreteMeasure, region: Box) -> float:
    """L2 beta by direct search over line space, independent of the closed form."""
    X, w = _in_region(mu, region)
    _guard(len(w))
    mass = float(w.sum())
    if mass <= 0:
        return 0.0
    n = X.shape[1]
    diam = region.diameter
    norm = mass * diam * diam

    def cost(p, u):
        d = X - p
        perp = d - np.outer(d @ u, u)
        return float(w @ np.einsum("ij,ij->i", perp, perp)) / norm

    dirs = _direction_grid(n)
    seeds = []
    for u in dirs:
        B = _perp_basis(u)
        Y = X @ B.T
        lo, hi = Y.min(axis=0), Y.max(axis=0)
        axes = [np.linspace(a, b, 21) if b > a else np.array([a]) for a, b in zip(lo, hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, n - 1)
        diff = Y[None, :, :] - grid[:, None, :]
        vals = np.einsum("gij,gij->gi", diff, diff) @ w / norm
        k = int(np.argmin(vals))
        seeds.append((float(vals[k]), u, grid[k] @ B))
    seeds.sort(key=lambda s: s[0])
    best = seeds[0][0]
    for _, u0, p0 in seeds[:3]:
        B = _perp_basis(u0)

        def f(z, u0=u0, p0=p0, B=B):
            u = u0 + z[: n - 1] @ B
            return cost(p0 + z[n - 1 :] @ B, u / np.linalg.norm(u))

        res = optimize.minimize(f, np.zeros(2 * (n - 1)), method="Nelder-Mead",
                                options={"xatol": 1e-12, "fatol": 1e-18, "maxiter": 20000,
                                         "maxfev": 20000})
        best = min(best, float(res.fun))
    return min(1.0, math.sqrt(max(best, 0.0)))


def _width_along(P: np.ndarray, normals: np.ndarray) -> np.ndarray:
    proj = P @ normals.T
    return proj.max(axis=0) - proj.min(axis=0)


def beta_sup_oracle(E, region: Box, samples: int = 1_000_000) -> float:
    """Set beta by sampling directions (n = 2) or cylinder axes (n >= 3)."""
    n = region.dimension
    P = np.asarray(E, dtype=float).reshape(-1, n)
    P = P[region.contains(P)]
    _guard(P.shape[0])
    if P.shape[0] <= 1 or n == 1:
        return 0.0
    diam = region.diameter
    if n == 2:
        best_w, best_t = math.inf, 0.0
        step = math.pi / samples
        for start in range(0, samples, 100_000):
            th = (np.arange(start, min(samples, start + 100_000)) + 0.5) * step
            normals = np.stack([-np.sin(th), np.cos(th)], 1)
            widths = _width_along(P, normals)
            k = int(np.argmin(widths))
            if widths[k] < best_w:
                best_w, best_t = float(widths[k]), float(th[k])

        def width(t):
            return float(_width_along(P, np.array([[-math.sin(t), math.cos(t)]]))[0])

        res = optimize.minimize_scalar(width, bounds=(best_t - 2 * step, best_t + 2 * step),
                                       method="bounded", options={"xatol": 1e-15})
        return min(1.0, 0.5 * min(best_w, float(res.fun)) / diam)
    dirs = _direction_grid(n)
    scores = sorted((_cylinder_radius(P, u)[0], k) for k, u in enumerate(dirs))
    best = scores[0][0]
    for _, k in scores[:3]:
        u0 = dirs[k]
        B = _perp_basis(u0)
        res = optimize.minimize(lambda z: _cylinder_radius(P, u0 + z @ B)[0], np.zeros(n - 1),
                                method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-15})
        best = min(best, float(res.fun))
    return min(1.0, best / diam)
