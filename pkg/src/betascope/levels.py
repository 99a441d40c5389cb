"""Per-level cube statistics shared by the Jones, certificate and report code.

A :class:`LevelTable` holds, for one level and one grid shift, the half-open
cells that contain atoms (with their masses) and every cube whose closed
dilate contains an atom (with the L2 beta over that dilate). Tables are built
with vectorized incidence arithmetic and cached by :class:`MultiscaleIndex`.
"""

from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .beta import GroupFit, fit_groups
from .dyadic import MAX_LEVEL, GridConvention, box_incidences, cell_indices
from .errors import InputError
from .measure import DiscreteMeasure

__all__ = ["KeyIndex", "LevelTable", "BoxGroups", "MultiscaleIndex", "group_keys"]


class KeyIndex:
    """Sorted lookup of integer cube keys (rows of an (m, n) array)."""

    def __init__(self, keys: np.ndarray):
        keys = np.asarray(keys, dtype=np.int64)
        n = keys.shape[1]
        if keys.shape[0] == 0:
            self.lo = np.zeros(n, np.int64)
            self.ext = np.ones(n, np.int64)
        else:
            self.lo = keys.min(axis=0)
            self.ext = keys.max(axis=0) - self.lo + 1
        self.flat_ok = float(np.prod(self.ext.astype(float))) < 2.0**62
        self.keys = keys
        if self.flat_ok:
            flat = self._flat(keys)
            self.order = np.argsort(flat, kind="stable")
            self.sorted = flat[self.order]
        else:
            self.table = {tuple(k): i for i, k in enumerate(keys.tolist())}

    def _flat(self, keys: np.ndarray) -> np.ndarray:
        return np.ravel_multi_index(tuple((keys - self.lo).T), tuple(self.ext))

    def find(self, keys) -> np.ndarray:
        """Row index of each key, or -1 where absent."""
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, self.keys.shape[1])
        out = np.full(keys.shape[0], -1, dtype=np.int64)
        if self.keys.shape[0] == 0 or keys.shape[0] == 0:
            return out
        if not self.flat_ok:
            for i, k in enumerate(keys.tolist()):
                out[i] = self.table.get(tuple(k), -1)
            return out
        rel = keys - self.lo
        inside = np.all((rel >= 0) & (rel < self.ext), axis=1)
        if inside.any():
            flat = self._flat(keys[inside])
            pos = np.searchsorted(self.sorted, flat)
            pos = np.minimum(pos, self.sorted.size - 1)
            hit = self.sorted[pos] == flat
            rows = np.where(hit, self.order[pos], -1)
            out[inside] = rows
        return out


def group_keys(keys: np.ndarray):
    """Unique rows of ``keys`` (lexicographic) and the inverse mapping."""
    keys = np.asarray(keys, dtype=np.int64)
    n = keys.shape[1]
    if keys.shape[0] == 0:
        return keys.reshape(0, n), np.zeros(0, np.int64)
    lo = keys.min(axis=0)
    ext = keys.max(axis=0) - lo + 1
    if float(np.prod(ext.astype(float))) < 2.0**62:
        flat = np.ravel_multi_index(tuple((keys - lo).T), tuple(ext))
        uniq, inv = np.unique(flat, return_inverse=True)
        ukeys = np.stack(np.unravel_index(uniq, tuple(ext)), axis=1).astype(np.int64) + lo
        return ukeys, inv.reshape(-1)
    ukeys, inv = np.unique(keys, axis=0, return_inverse=True)
    return ukeys, inv.reshape(-1)


@dataclass
class BoxGroups:
    """Atoms (with periodic images resolved) grouped by the dilated cube containing them."""

    keys: np.ndarray
    inverse: np.ndarray
    atom_ids: np.ndarray
    positions: np.ndarray
    weights: np.ndarray

    def iter_groups(self):
        """Yield (row, positions, weights) for each cube, in key order."""
        order = np.argsort(self.inverse, kind="stable")
        inv = self.inverse[order]
        bounds = np.flatnonzero(np.diff(inv)) + 1
        starts = np.concatenate([[0], bounds])
        ends = np.concatenate([bounds, [inv.size]])
        for s, e in zip(starts, ends):
            sel = order[s:e]
            yield int(inv[s]), self.positions[sel], self.weights[sel]


@dataclass
class LevelTable:
    level: int
    shift: tuple[float, ...]
    lam: float
    side: float
    diameter: float
    cell_keys: np.ndarray
    cell_mass: np.ndarray
    atom_cell: np.ndarray
    box_keys: np.ndarray
    box_mass: np.ndarray
    box_residual: np.ndarray
    box_beta: np.ndarray
    box_fit: GroupFit
    cell_box: np.ndarray
    cell_index: KeyIndex = field(repr=False)
    box_index: KeyIndex = field(repr=False)
    _cell_fit: GroupFit | None = field(default=None, repr=False)

    @property
    def beta2_squared(self) -> np.ndarray:
        return self.box_beta**2


class MultiscaleIndex:
    """Cached per-level tables for one measure.

    Half-open cells index atoms; closed ``lam``-dilates carry the L2 betas.
    Periodic measures are handled by reducing cube keys modulo the number of
    cells per period, which requires ``period * 2^level`` to be an integer.
    """

    def __init__(self, mu: DiscreteMeasure, lam: float = 3.0, parallelism: int = 1):
        if lam < 1:
            raise InputError("dilation factor must be at least 1")
        self.mu = mu
        self.lam = float(lam)
        self.parallelism = max(1, int(parallelism))
        self._tables: dict[tuple[int, tuple[float, ...]], LevelTable] = {}
        self._shifted: dict[tuple[float, ...], np.ndarray] = {}
        self._lock = threading.Lock()
        self._memo: dict = {}

    @property
    def dimension(self) -> int:
        return self.mu.dimension

    def shift_key(self, convention: GridConvention | tuple | None) -> tuple[float, ...]:
        n = self.dimension
        if convention is None:
            return (0.0,) * n
        if isinstance(convention, GridConvention):
            return tuple(convention.shift_vector(n).tolist())
        return tuple(GridConvention("half_open", tuple(convention)).shift_vector(n).tolist())

    def shifted_points(self, shift: tuple[float, ...]) -> np.ndarray:
        with self._lock:
            t0 = self._shifted.get(shift)
            if t0 is None:
                t0 = self.mu.points - np.array(shift)
                t0.flags.writeable = False
                self._shifted[shift] = t0
            return t0

    def memo(self, key, compute):
        """Write-once cache for derived per-level arrays."""
        with self._lock:
            if key in self._memo:
                return self._memo[key]
        value = compute()
        with self._lock:
            return self._memo.setdefault(key, value)

    def cells_per_period(self, level: int) -> int | None:
        if self.mu.period is None:
            return None
        cells = math.ldexp(self.mu.period, level)
        if cells < 1 or cells != int(cells):
            raise InputError(
                f"level {level} does not tile the period {self.mu.period}; use a finer level"
            )
        return int(cells)

    def cell_keys_of(self, shifted: np.ndarray, level: int) -> np.ndarray:
        keys = cell_indices(shifted, level)
        per = self.cells_per_period(level)
        if per is not None:
            keys = np.mod(keys, per)
        return keys

    def box_groups(self, level: int, shift=None, lam: float | None = None) -> BoxGroups:
        """Atoms grouped by every cube whose closed dilate contains them."""
        lam = self.lam if lam is None else float(lam)
        shift = self.shift_key(shift)
        t0 = self.shifted_points(shift)
        per = self.cells_per_period(level)
        ids, keys, images = box_incidences(t0, level, lam, per)
        X = self.mu.points[ids]
        if images is not None:
            X = X + images * self.mu.period
        ukeys, inv = group_keys(keys)
        return BoxGroups(ukeys, inv, ids, X, self.mu.weights[ids])

    def table(self, level: int, shift=None) -> LevelTable:
        if level > MAX_LEVEL:
            raise InputError(f"level {level} exceeds the supported depth {MAX_LEVEL}")
        key = (int(level), self.shift_key(shift))
        with self._lock:
            cached = self._tables.get(key)
        if cached is not None:
            return cached
        table = self._build(*key)
        with self._lock:
            return self._tables.setdefault(key, table)

    def tables(self, levels, shift=None) -> list[LevelTable]:
        levels = list(levels)
        if self.parallelism > 1 and len(levels) > 1:
            with ThreadPoolExecutor(self.parallelism) as pool:
                return list(pool.map(lambda k: self.table(k, shift), levels))
        return [self.table(k, shift) for k in levels]

    def _build(self, level: int, shift: tuple[float, ...]) -> LevelTable:
        mu = self.mu
        n = mu.dimension
        side = math.ldexp(1.0, -level)
        diam = math.sqrt(n) * side
        t0 = self.shifted_points(shift)
        ckeys_all = self.cell_keys_of(t0, level)
        cell_keys, atom_cell = group_keys(ckeys_all)
        cell_mass = np.bincount(atom_cell, weights=mu.weights, minlength=cell_keys.shape[0])
        groups = self.box_groups(level, shift)
        nb = groups.keys.shape[0]
        fit = fit_groups(groups.positions, groups.weights, groups.inverse, nb)
        bdiam = self.lam * diam
        with np.errstate(divide="ignore", invalid="ignore"):
            b2 = np.where(fit.mass > 0, fit.residual / (fit.mass * bdiam * bdiam), 0.0)
        beta = np.minimum(1.0, np.sqrt(np.maximum(b2, 0.0)))
        box_index = KeyIndex(groups.keys)
        cell_box = box_index.find(cell_keys)
        return LevelTable(
            level=level,
            shift=shift,
            lam=self.lam,
            side=side,
            diameter=diam,
            cell_keys=cell_keys,
            cell_mass=cell_mass,
            atom_cell=atom_cell,
            box_keys=groups.keys,
            box_mass=fit.mass,
            box_residual=fit.residual,
            box_beta=beta,
            box_fit=fit,
            cell_box=cell_box,
            cell_index=KeyIndex(cell_keys),
            box_index=box_index,
        )

    def cell_fit(self, table: LevelTable) -> GroupFit:
        """Best-fit lines of the atoms in each half-open cell of a table."""
        if table._cell_fit is None:
            t0 = self.shifted_points(table.shift)
            X = self.mu.points
            if self.mu.period is not None:
                raw = cell_indices(t0, table.level)
                per = self.cells_per_period(table.level)
                X = X - np.floor_divide(raw, per) * self.mu.period
            table._cell_fit = fit_groups(X, self.mu.weights, table.atom_cell, table.cell_keys.shape[0])
        return table._cell_fit

    def lookup(self, table: LevelTable, points) -> tuple[np.ndarray, np.ndarray]:
        """Cell rows and dilated-box rows of the half-open cubes holding ``points``.

        Rows are -1 where the cube holds no atom (cell) or its dilate holds
        none (box).
        """
        pts = np.asarray(points, dtype=float).reshape(-1, self.dimension)
        keys = self.cell_keys_of(pts - np.array(table.shift), table.level)
        return table.cell_index.find(keys), table.box_index.find(keys)
