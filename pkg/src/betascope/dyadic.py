"""Dyadic and shifted dyadic cube geometry."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import InputError
from .measure import DiscreteMeasure

__all__ = [
    "THIRD",
    "MAX_LEVEL",
    "GridConvention",
    "DyadicCube",
    "Box",
    "all_shifts",
    "cube_containing",
    "ancestor",
    "dilate",
    "index_atoms",
    "cell_indices",
    "box_incidences",
]

THIRD = 1.0 / 3.0
MAX_LEVEL = 48
_INDEX_LIMIT = 2.0**62
CLOSURES = ("half_open", "closed")


@dataclass(frozen=True)
class GridConvention:
    """Cube closure and grid translation.

    ``shift`` holds one entry per axis, each exactly 0 or 1/3; an empty tuple
    means the unshifted grid in any dimension.
    """

    closure: str = "half_open"
    shift: tuple[float, ...] = ()

    def __post_init__(self):
        if self.closure not in CLOSURES:
            raise InputError(f"closure must be one of {CLOSURES}, got {self.closure!r}")
        shift = tuple(float(s) for s in self.shift)
        for s in shift:
            if s != 0.0 and s != THIRD:
                raise InputError(f"grid shift entries must be 0 or 1/3, got {s!r}")
        object.__setattr__(self, "shift", shift)

    def shift_vector(self, n: int) -> np.ndarray:
        if not self.shift:
            return np.zeros(n)
        if len(self.shift) != n:
            raise InputError(f"grid shift has dimension {len(self.shift)}, expected {n}")
        return np.array(self.shift)

    def label(self, n: int) -> str:
        return "(" + ",".join("1/3" if s else "0" for s in self.shift_vector(n)) + ")"


def all_shifts(n: int, closure: str = "half_open") -> list[GridConvention]:
    """The 2^n grids translated by vectors in {0, 1/3}^n, unshifted first."""
    return [GridConvention(closure, s) for s in itertools.product((0.0, THIRD), repeat=n)]


def _check_level(level: int) -> int:
    if int(level) != level:
        raise InputError(f"level must be an integer, got {level!r}")
    level = int(level)
    if level > MAX_LEVEL:
        raise InputError(f"level {level} exceeds the supported depth {MAX_LEVEL}")
    return level


@dataclass(frozen=True)
class Box:
    """Closed axis-parallel box given by its center and half side lengths."""

    center: tuple[float, ...]
    half_sides: tuple[float, ...]

    def __post_init__(self):
        c = tuple(float(v) for v in np.ravel(self.center))
        h = tuple(float(v) for v in np.ravel(self.half_sides))
        if len(h) == 1 and len(c) > 1:
            h = h * len(c)
        if len(c) != len(h):
            raise InputError("center and half_sides must have the same dimension")
        if not all(v > 0 and math.isfinite(v) for v in h):
            raise InputError("half_sides must be positive and finite")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_sides", h)

    @classmethod
    def from_bounds(cls, lower, upper) -> "Box":
        lo = np.asarray(lower, dtype=float)
        hi = np.asarray(upper, dtype=float)
        return cls(tuple((lo + hi) / 2), tuple((hi - lo) / 2))

    @property
    def dimension(self) -> int:
        return len(self.center)

    @property
    def lower(self) -> np.ndarray:
        return np.subtract(self.center, self.half_sides)

    @property
    def upper(self) -> np.ndarray:
        return np.add(self.center, self.half_sides)

    @property
    def diameter(self) -> float:
        return 2.0 * math.hypot(*self.half_sides)

    def contains(self, points) -> np.ndarray:
        """Closed membership test, vectorized over rows of ``points``."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dimension)
        return np.all((pts >= self.lower) & (pts <= self.upper), axis=1)

    def contains_box(self, other: "Box") -> bool:
        return bool(np.all(other.lower >= self.lower) and np.all(other.upper <= self.upper))


@dataclass(frozen=True)
class DyadicCube:
    """Cube of side 2^-level with lower corner shift + coords * side."""

    level: int
    coords: tuple[int, ...]
    convention: GridConvention = GridConvention()

    def __post_init__(self):
        object.__setattr__(self, "level", _check_level(self.level))
        object.__setattr__(self, "coords", tuple(int(c) for c in self.coords))
        if not self.coords:
            raise InputError("a cube needs at least one coordinate")
        self.convention.shift_vector(len(self.coords))

    @property
    def dimension(self) -> int:
        return len(self.coords)

    @property
    def side(self) -> float:
        return math.ldexp(1.0, -self.level)

    @property
    def diameter(self) -> float:
        return math.sqrt(self.dimension) * self.side

    @property
    def lower(self) -> np.ndarray:
        c = np.array([math.ldexp(float(v), -self.level) for v in self.coords])
        return self.convention.shift_vector(self.dimension) + c

    @property
    def upper(self) -> np.ndarray:
        return self.lower + self.side

    @property
    def center(self) -> np.ndarray:
        return self.lower + self.side / 2

    @property
    def volume(self) -> float:
        return self.side**self.dimension

    def contains(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, self.dimension)
        if self.convention.closure == "half_open":
            t = pts - self.convention.shift_vector(self.dimension)
            idx = cell_indices(t, self.level)
            return np.all(idx == np.array(self.coords), axis=1)
        return np.all((pts >= self.lower) & (pts <= self.upper), axis=1)

    def as_box(self) -> Box:
        return dilate(self, 1.0)

    def children(self) -> Iterator["DyadicCube"]:
        for bits in itertools.product((0, 1), repeat=self.dimension):
            yield DyadicCube(
                self.level + 1, tuple(2 * c + b for c, b in zip(self.coords, bits)), self.convention
            )

    def ident(self) -> str:
        """Serialized identity ``(shift, level, c1, ..., cn)``."""
        body = ", ".join([self.convention.label(self.dimension), str(self.level)]
                         + [str(c) for c in self.coords])
        return f"({body})"


def cell_indices(shifted_points: np.ndarray, level: int) -> np.ndarray:
    """Integer half-open cell indices floor(t * 2^level) of pre-shifted points."""
    t = np.ldexp(np.asarray(shifted_points, dtype=float), level)
    if t.size and np.max(np.abs(t)) >= _INDEX_LIMIT:
        raise InputError("cell index out of range; rescale the data or use a coarser level")
    return np.floor(t).astype(np.int64)


def cube_containing(x, level: int, convention: GridConvention = GridConvention()) -> list[DyadicCube]:
    """All cubes of the given level whose (closure-dependent) point set contains x."""
    level = _check_level(level)
    x = np.asarray(x, dtype=float).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise InputError("point coordinates must be finite")
    t = np.ldexp(x - convention.shift_vector(x.size), level)
    base = np.floor(t)
    if convention.closure == "half_open":
        return [DyadicCube(level, tuple(int(v) for v in base), convention)]
    choices = []
    for ti, bi in zip(t, base):
        choices.append((int(bi) - 1, int(bi)) if ti == bi else (int(bi),))
    return [DyadicCube(level, c, convention) for c in itertools.product(*choices)]


def ancestor(Q: DyadicCube, k: int) -> DyadicCube:
    if k < 0:
        raise InputError("ancestor generation must be nonnegative")
    return DyadicCube(Q.level - k, tuple(c >> k for c in Q.coords), Q.convention)


def dilate(Q: DyadicCube, lam: float) -> Box:
    if not lam >= 1:
        raise InputError("dilation factor must be at least 1")
    half = lam * Q.side / 2
    return Box(tuple(Q.center), (half,) * Q.dimension)


def index_atoms(
    mu: DiscreteMeasure, level_min: int, level_max: int, convention: GridConvention = GridConvention()
) -> dict[int, dict[tuple[int, ...], list[int]]]:
    """Per-level map from cube coordinates to the indices of the atoms inside."""
    if level_min > level_max:
        raise InputError("level_min must not exceed level_max")
    _check_level(level_max)
    n = mu.dimension
    t0 = mu.points - convention.shift_vector(n)
    out: dict[int, dict[tuple[int, ...], list[int]]] = {}
    for level in range(level_min, level_max + 1):
        table: dict[tuple[int, ...], list[int]] = {}
        if len(mu):
            if convention.closure == "half_open":
                idx = cell_indices(t0, level)
                ids = np.arange(len(mu))
            else:
                ids, idx, _ = box_incidences(t0, level, 1.0)
            order = np.lexsort(idx.T[::-1])
            idx, ids = idx[order], ids[order]
            keys, starts = np.unique(idx, axis=0, return_index=True)
            bounds = list(starts[1:]) + [len(ids)]
            for key, s, e in zip(keys, starts, bounds):
                table[tuple(int(v) for v in key)] = sorted(ids[s:e].tolist())
        out[level] = table
    return out


def box_incidences(shifted_points: np.ndarray, level: int, lam: float, period_cells: int | None = None):
    """All (atom, cube) pairs with the atom inside the closed lam-dilate of the cube.

    Works in grid coordinates t = (x - shift) * 2^level: an atom lies in the
    closed lam-dilate of cube j exactly when j + 1/2 - lam/2 <= t <= j + 1/2 + lam/2
    on every axis. With ``period_cells`` (number of cells per period) the cube
    indices are reduced into the fundamental range and the returned image
    shifts say which periodic copy of the atom was hit.

    Returns ``(atom_ids, cube_indices, image_shifts)``; ``image_shifts`` is
    None for non-periodic input.
    """
    pts = np.asarray(shifted_points, dtype=float)
    N, n = pts.shape
    t = np.ldexp(pts, level)
    if t.size and np.max(np.abs(t)) >= _INDEX_LIMIT:
        raise InputError("cell index out of range; rescale the data or use a coarser level")
    lo = np.ceil(t - (lam + 1) / 2).astype(np.int64)
    hi = np.floor(t + (lam - 1) / 2).astype(np.int64)
    counts = hi - lo + 1
    width = int(counts.max()) if N else 0
    ids_parts, key_parts = [], []
    for offs in itertools.product(range(width), repeat=n):
        offs = np.array(offs, dtype=np.int64)
        ok = np.all(offs < counts, axis=1)
        if not ok.any():
            continue
        ids_parts.append(np.flatnonzero(ok))
        key_parts.append(lo[ok] + offs)
    if not ids_parts:
        return np.zeros(0, np.int64), np.zeros((0, n), np.int64), None
    ids = np.concatenate(ids_parts)
    keys = np.concatenate(key_parts)
    if period_cells is None:
        return ids, keys, None
    wrap = np.floor_divide(keys, period_cells)
    return ids, keys - wrap * period_cells, -wrap
