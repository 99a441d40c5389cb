"""Per-point multiscale sums of squared betas.

Three variants share the same cube family (half-open cubes containing the
point, side at most r, level at most depth):

* ``ordinary``: beta2(mu, 3Q)^2
* ``normalized``: beta2(mu, 3Q)^2 * diam(Q) / mu(Q), with 0/0 = 0
* ``shifted``: the squared shifted-grid beta of Q, summed over the cubes Q
  holding the point in all 2^n grids
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .beta import _canonical_directions, beta2
from .dyadic import MAX_LEVEL, DyadicCube, GridConvention, all_shifts, cell_indices, cube_containing
from .errors import InputError
from .levels import LevelTable, MultiscaleIndex
from .measure import DiscreteMeasure

__all__ = [
    "VARIANTS",
    "ShiftedGridParams",
    "JonesTerm",
    "JonesProfile",
    "TruncationDelta",
    "start_level",
    "jones_profiles",
    "jones_ordinary",
    "jones_normalized",
    "jones_shifted",
    "truncation_delta",
    "shifted_grid_beta",
    "cube_mass",
    "shifted_default_max_gap",
]

VARIANTS = ("ordinary", "normalized", "shifted")


def shifted_default_max_gap(n: int) -> int:
    """Upper ancestor exponent 2^(4 + log2 ceil(6480 e sqrt n)) = 16 * ceil(6480 e sqrt n)."""
    return 16 * math.ceil(6480 * math.e * math.sqrt(n))


@dataclass(frozen=True)
class ShiftedGridParams:
    """Admissible ancestor range 2^j0 <= side R / side Q <= 2^j1."""

    min_gap: int = 2
    max_gap: int | None = None

    def __post_init__(self):
        if self.max_gap is not None and not 2 <= self.min_gap <= self.max_gap:
            raise InputError("need 2 <= min_gap <= max_gap")
        if self.min_gap < 2:
            raise InputError("min_gap must be at least 2")

    def upper(self, n: int) -> int:
        return shifted_default_max_gap(n) if self.max_gap is None else self.max_gap


@dataclass(frozen=True)
class JonesTerm:
    level: int
    cube: str
    value: float


@dataclass(frozen=True)
class JonesProfile:
    atom_index: int | None
    variant: str
    start_scale: float
    per_level_terms: tuple[JonesTerm, ...]
    partial_sums: tuple[float, ...]
    truncation_level: int

    @property
    def levels(self) -> tuple[int, ...]:
        return tuple(range(self.truncation_level - len(self.partial_sums) + 1, self.truncation_level + 1))

    @property
    def increments(self) -> tuple[float, ...]:
        out, prev = [], 0.0
        for s in self.partial_sums:
            out.append(s - prev)
            prev = s
        return tuple(out)

    @property
    def level_totals(self) -> tuple[float, ...]:
        """Sum of the terms at each level (not derived from partial sums)."""
        totals = dict.fromkeys(self.levels, 0.0)
        for t in self.per_level_terms:
            totals[t.level] += t.value
        return tuple(totals.values())

    @property
    def total(self) -> float:
        return self.partial_sums[-1] if self.partial_sums else 0.0


def start_level(r: float) -> int:
    """Smallest level k with 2^-k <= r."""
    if not r > 0 or not math.isfinite(r):
        raise InputError("start scale must be positive and finite")
    return 1 - math.frexp(r)[1]


def _check_window(r: float, depth: int) -> int:
    k0 = start_level(r)
    if depth < k0:
        raise InputError(f"depth {depth} is coarser than the start scale (level {k0})")
    if depth > MAX_LEVEL:
        raise InputError(f"depth exceeds the supported maximum {MAX_LEVEL}")
    return k0


def _ident(shift, level: int, key) -> str:
    lab = "(" + ",".join("1/3" if s else "0" for s in shift) + ")"
    return "(" + ", ".join([lab, str(level)] + [str(int(c)) for c in key]) + ")"


def _ordinary_terms(index: MultiscaleIndex, table: LevelTable, pts: np.ndarray, normalized: bool):
    cell_rows, box_rows = index.lookup(table, pts)
    beta2 = np.where(box_rows >= 0, table.box_beta[np.maximum(box_rows, 0)] ** 2, 0.0)
    if not normalized:
        return beta2, cell_rows
    mass = np.where(cell_rows >= 0, table.cell_mass[np.maximum(cell_rows, 0)], 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.where(mass > 0, beta2 * table.diameter / mass, 0.0)
    return vals, cell_rows


def _stable_level(t0: np.ndarray) -> int:
    """A level at and above which every shifted-grid cell's atom set stops changing."""
    extent = float(np.max(np.abs(t0))) if t0.size else 1.0
    extent = max(extent, 2.0**-MAX_LEVEL)
    return -math.frexp(extent)[1]


def _shifted_cube_values(index: MultiscaleIndex, table: LevelTable, params: ShiftedGridParams) -> np.ndarray:
    """Squared shifted-grid beta for every nonempty half-open cell of a table."""
    mu = index.mu
    if mu.period is not None:
        raise InputError("the shifted-grid ancestor sup is only defined for non-periodic measures")
    n = mu.dimension
    k = table.level
    if k < 0:
        raise InputError("shifted-grid betas need cube levels >= 0")
    qfit = index.cell_fit(table)
    mQ = qfit.mass
    cQ = qfit.centroid
    MQ = qfit.second_moment
    best = np.zeros(mQ.size)
    qcoords = table.cell_keys
    a3 = np.round(np.array(table.shift) * 3).astype(np.int64)
    lower_q = a3[None, :] * (1 << k) + 3 * qcoords
    j0, j1 = params.min_gap, params.upper(n)
    for conv in all_shifts(n):
        rshift = tuple(conv.shift_vector(n).tolist())
        b3 = np.round(np.array(rshift) * 3).astype(np.int64)
        top = max(j0, k - _stable_level(index.shifted_points(rshift)))
        for j in range(j0, min(j1, top) + 1):
            lev = k - j
            span = 3 * (1 << j)
            rel = lower_q - b3[None, :] * (1 << k)
            rho = np.floor_divide(rel, span)
            contained = np.all(lower_q + 3 <= b3[None, :] * (1 << k) + (rho + 1) * span, axis=1)
            if not contained.any():
                continue
            rtable = index.table(lev, rshift)
            rfit = index.cell_fit(rtable)
            rows = rtable.cell_index.find(rho[contained])
            if np.any(rows < 0):
                raise RuntimeError("ancestor cell missing from its level table")
            sel = np.flatnonzero(contained)
            dc = cQ[sel] - rfit.centroid[rows]
            S = MQ[sel] + mQ[sel, None, None] * dc[:, :, None] * dc[:, None, :]
            vals = rfit.eigenvalues[rows]
            vecs = rfit.eigenvectors[rows]
            topv = vals[:, -1:]
            scale = np.maximum(np.abs(topv), np.finfo(float).tiny)
            tied = (np.abs(vals - topv) <= 1e-10 * scale) | (np.abs(topv) <= 1e-300)
            u = _canonical_directions(vals, vecs)
            tr = np.trace(S, axis1=1, axis2=2)
            uSu = np.einsum("gi,gij,gj->g", u, S, u)
            worst = tr - uSu
            for g in np.flatnonzero(tied.sum(axis=1) > 1):
                B = vecs[g][:, tied[g]]
                worst[g] = tr[g] - np.linalg.eigvalsh(B.T @ S[g] @ B)[0]
            with np.errstate(divide="ignore", invalid="ignore"):
                val = np.where(mQ[sel] > 0, np.maximum(worst, 0.0) / (mQ[sel] * table.diameter**2), 0.0)
            best[sel] = np.maximum(best[sel], val)
    return best


def jones_profiles(
    mu: DiscreteMeasure,
    points,
    r: float,
    depth: int,
    variant: str = "ordinary",
    *,
    index: MultiscaleIndex | None = None,
    shift=None,
    params: ShiftedGridParams | None = None,
    atom_indices=None,
) -> list[JonesProfile]:
    """Jones profiles of one variant at many query points."""
    if variant not in VARIANTS:
        raise InputError(f"variant must be one of {VARIANTS}")
    k0 = _check_window(r, depth)
    index = index or MultiscaleIndex(mu)
    if index.mu is not mu:
        raise InputError("index was built for a different measure")
    pts = np.asarray(points, dtype=float).reshape(-1, mu.dimension)
    levels = list(range(k0, depth + 1))
    terms = np.zeros((pts.shape[0], len(levels)))
    idents: list[list[list[str]]] = [[[] for _ in levels] for _ in range(pts.shape[0])]
    values: list[list[list[float]]] = [[[] for _ in levels] for _ in range(pts.shape[0])]
    if variant == "shifted":
        params = params or ShiftedGridParams()
        grids = [tuple(c.shift_vector(mu.dimension).tolist()) for c in all_shifts(mu.dimension)]
    else:
        grids = [index.shift_key(shift)]
    for li, k in enumerate(levels):
        for g in grids:
            table = index.table(k, g)
            if variant == "shifted":
                ckey = (k, g, params.min_gap, params.upper(mu.dimension))
                cube_vals = index.memo(("shifted",) + ckey, lambda: _shifted_cube_values(index, table, params))
                cell_rows, _ = index.lookup(table, pts)
                vals = np.where(cell_rows >= 0, cube_vals[np.maximum(cell_rows, 0)], 0.0)
            else:
                vals, cell_rows = _ordinary_terms(index, table, pts, variant == "normalized")
            keys = index.cell_keys_of(pts - np.array(g), k)
            terms[:, li] += vals
            for i in range(pts.shape[0]):
                idents[i][li].append(_ident(g, k, keys[i]))
                values[i][li].append(float(vals[i]))
    out = []
    for i in range(pts.shape[0]):
        per_level = []
        sums = []
        acc = 0.0
        for li, k in enumerate(levels):
            for ident, v in zip(idents[i][li], values[i][li]):
                per_level.append(JonesTerm(k, ident, v))
                acc += v
            sums.append(acc)
        aidx = None if atom_indices is None else int(np.ravel(atom_indices)[i])
        out.append(JonesProfile(aidx, variant, float(r), tuple(per_level), tuple(sums), depth))
    return out


def level_increments(
    mu: DiscreteMeasure,
    atom_indices,
    r: float,
    depth: int,
    variant: str = "ordinary",
    *,
    index: MultiscaleIndex | None = None,
    shift=None,
) -> np.ndarray:
    """Per-level terms (atoms x levels) for the ordinary/normalized variants, vectorized."""
    if variant not in ("ordinary", "normalized"):
        raise InputError("level_increments supports the ordinary and normalized variants")
    k0 = _check_window(r, depth)
    index = index or MultiscaleIndex(mu)
    idx = np.asarray(atom_indices, dtype=np.int64).reshape(-1)
    out = np.zeros((idx.size, depth - k0 + 1))
    for li, k in enumerate(range(k0, depth + 1)):
        table = index.table(k, shift)
        rows = table.atom_cell[idx]
        brow = table.cell_box[rows]
        b2 = table.box_beta[brow] ** 2
        if variant == "normalized":
            m = table.cell_mass[rows]
            with np.errstate(divide="ignore", invalid="ignore"):
                b2 = np.where(m > 0, b2 * table.diameter / m, 0.0)
        out[:, li] = b2
    return out


def _single(mu, x, r, depth, variant, index, params=None, atom_index=None):
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if x.shape[1] != mu.dimension:
        raise InputError("point dimension does not match the measure")
    return jones_profiles(mu, x, r, depth, variant, index=index, params=params,
                          atom_indices=None if atom_index is None else [atom_index])[0]


def jones_ordinary(mu, x, r: float = 1.0, depth: int = 8, *, index=None, atom_index=None) -> JonesProfile:
    return _single(mu, x, r, depth, "ordinary", index, atom_index=atom_index)


def jones_normalized(mu, x, r: float = 1.0, depth: int = 8, *, index=None, atom_index=None) -> JonesProfile:
    return _single(mu, x, r, depth, "normalized", index, atom_index=atom_index)


def jones_shifted(mu, x, r: float = 1.0, depth: int = 8, params: ShiftedGridParams | None = None, *,
                 index=None, atom_index=None) -> JonesProfile:
    return _single(mu, x, r, depth, "shifted", index, params=params or ShiftedGridParams(),
                   atom_index=atom_index)


# --- direct single-cube routes -------------------------------------------


def cube_mass(mu: DiscreteMeasure, Q: DyadicCube) -> float:
    """mu(Q) for a half-open cube, counting periodic copies."""
    if mu.period is None:
        return float(mu.weights[Q.contains(mu.points)].sum())
    per = math.ldexp(mu.period, Q.level)
    if per != int(per):
        raise InputError("cube level does not tile the period")
    per = int(per)
    t = cell_indices(mu.points - Q.convention.shift_vector(mu.dimension), Q.level)
    hit = np.all(np.mod(t, per) == np.mod(np.array(Q.coords), per), axis=1)
    return float(mu.weights[hit].sum())


def shifted_grid_beta(mu: DiscreteMeasure, Q: DyadicCube, params: ShiftedGridParams | None = None) -> float:
    """Shifted-grid beta of Q by explicit per-ancestor enumeration."""
    params = params or ShiftedGridParams()
    if mu.period is not None:
        raise InputError("the shifted-grid ancestor sup is only defined for non-periodic measures")
    n = mu.dimension
    k = Q.level
    if k < 0:
        raise InputError("shifted-grid betas need cube levels >= 0")
    inside = Q.contains(mu.points)
    Xq = mu.points[inside]
    wq = mu.weights[inside]
    mq = float(wq.sum())
    if mq <= 0:
        return 0.0
    a3 = [round(s * 3) for s in Q.convention.shift_vector(n)]
    lower_q = [a * (1 << k) + 3 * c for a, c in zip(a3, Q.coords)]
    best = 0.0
    for conv in all_shifts(n):
        b3 = [round(s * 3) for s in conv.shift_vector(n)]
        t0 = mu.points - conv.shift_vector(n)
        top = max(params.min_gap, k - _stable_level(t0))
        for j in range(params.min_gap, min(params.upper(n), top) + 1):
            span = 3 * (1 << j)
            rho = [(lq - b * (1 << k)) // span for lq, b in zip(lower_q, b3)]
            if any(lq + 3 > b * (1 << k) + (p + 1) * span for lq, b, p in zip(lower_q, b3, rho)):
                continue
            R = DyadicCube(k - j, tuple(rho), conv)
            rin = R.contains(mu.points)
            Xr, wr = mu.points[rin], mu.weights[rin]
            mr = wr.sum()
            cr = (wr @ Xr) / mr
            Dr = Xr - cr
            Mr = (Dr * wr[:, None]).T @ Dr
            vals, vecs = np.linalg.eigh(Mr)
            top_val = vals[-1]
            tol = 1e-10 * max(abs(top_val), np.finfo(float).tiny)
            B = vecs[:, np.abs(vals - top_val) <= tol] if abs(top_val) > 1e-300 else np.eye(n)
            Dq = Xq - cr
            S = (Dq * wq[:, None]).T @ Dq
            worst = np.trace(S) - np.linalg.eigvalsh(B.T @ S @ B)[0]
            best = max(best, max(worst, 0.0) / (mq * Q.diameter**2))
    return math.sqrt(best)


@dataclass(frozen=True)
class TruncationDelta:
    delta: float
    explicit_sum: float
    levels: tuple[int, ...]

    @property
    def agree(self) -> bool:
        return _close(self.delta, self.explicit_sum)


def _close(a: float, b: float, rtol: float = 1e-12) -> bool:
    # the absolute floor only absorbs round-off sized betas of near-flat cubes
    return abs(a - b) <= rtol * max(abs(a), abs(b)) + 1e-24


def _direct_term(mu, x, level, variant, params):
    Q = cube_containing(x, level, GridConvention())[0]
    if variant == "shifted":
        total = 0.0
        for conv in all_shifts(mu.dimension):
            Qs = cube_containing(x, level, conv)[0]
            total += shifted_grid_beta(mu, Qs, params) ** 2
        return total
    b = beta2(mu, Q, 3.0).value ** 2
    if variant == "ordinary":
        return b
    m = cube_mass(mu, Q)
    return b * Q.diameter / m if m > 0 else 0.0


def truncation_delta(
    mu: DiscreteMeasure,
    x,
    r: float,
    r_prime: float,
    depth: int,
    variant: str = "normalized",
    *,
    index: MultiscaleIndex | None = None,
    params: ShiftedGridParams | None = None,
) -> TruncationDelta:
    """J(r) - J(r') from two full profiles, next to the explicit sum of the cubes in between.

    The difference is taken exactly (compensated summation over both term
    lists); the explicit sum recomputes every intervening cube directly.
    """
    index = index or MultiscaleIndex(mu)
    x = np.asarray(x, dtype=float)
    pa = _single(mu, x, r, depth, variant, index, params)
    pb = _single(mu, x, r_prime, depth, variant, index, params)
    delta = math.fsum([t.value for t in pa.per_level_terms] + [-t.value for t in pb.per_level_terms])
    ka, kb = start_level(r), start_level(r_prime)
    lo, hi = min(ka, kb), max(ka, kb)
    levels = tuple(range(lo, hi))
    sign = 1.0 if ka < kb else -1.0
    explicit = sign * math.fsum(_direct_term(mu, x, k, variant, params) for k in levels)
    return TruncationDelta(delta, explicit, levels)

