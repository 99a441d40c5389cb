"""Example and synthetic measures: triadic cascade products, Cantor sets, curves, grids."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import CostGuardError, InputError
from .measure import DiscreteMeasure
from .whitney import PolyCurve

__all__ = [
    "CascadeParams",
    "cascade_cell_masses",
    "cascade_product",
    "four_corner_cantor",
    "curve_measure",
    "lebesgue_box",
    "staircase_curve",
    "random_measure",
    "MAX_ATOMS",
]

MAX_ATOMS = 10**7


@dataclass(frozen=True)
class CascadeParams:
    """Product measure built from the triadic cascade with outer-third share delta."""

    delta: float
    gen_depth: int
    dimension: int = 2

    def __post_init__(self):
        if not (0 < self.delta <= Fraction(1, 3)):
            raise InputError(f"delta must lie in (0, 1/3], got {self.delta!r}")
        if int(self.gen_depth) != self.gen_depth or self.gen_depth < 1:
            raise InputError("gen_depth must be a positive integer")
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise InputError("dimension must be a positive integer")


def _split(delta):
    """Child shares (outer, middle, outer) of a parent cell's mass."""
    if isinstance(delta, Fraction):
        m = 3 * delta, 3 - 6 * delta
        return m[0] / 3, m[1] / 3
    # multipliers 3*delta and 3 - 6*delta over three children of width 1/3
    return (3 * delta) / 3, (3 - 6 * delta) / 3


def cascade_cell_masses(params: CascadeParams, exact: bool = False):
    """Masses of the 3^K triadic cells of [0, 1), left to right.

    With ``exact=True`` (K <= 10) the masses are Fractions computed from the
    rational value of delta, so their sum is exactly 1.
    """
    K = params.gen_depth
    if exact:
        if K > 10:
            raise CostGuardError("exact cell masses are limited to gen_depth <= 10")
        outer, middle = _split(Fraction(params.delta))
        w = [Fraction(1)]
        for _ in range(K):
            w = [p * c for p in w for c in (outer, middle, outer)]
        return w
    if 3**K > MAX_ATOMS:
        raise CostGuardError("too many triadic cells")
    outer, middle = _split(float(params.delta))
    child = np.array([outer, middle, outer])
    w = np.ones(1)
    for _ in range(K):
        w = (w[:, None] * child[None, :]).ravel()
    return w


def _product_grid(axis_w: np.ndarray, axis_x: np.ndarray, n: int):
    grids = np.meshgrid(*([axis_x] * n), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    W = np.ones(1)
    for _ in range(n):
        W = np.outer(W, axis_w).ravel()
    return pts, W


def cascade_product(params: CascadeParams, periodic: bool = True) -> DiscreteMeasure:
    """One atom per triadic cell center of [0, 1)^n with product weights.

    The cascade density is 1-periodic on the line, so by default the measure
    is marked periodic with period 1; ``periodic=False`` keeps only the
    restriction to the unit cube.
    """
    K, n = params.gen_depth, params.dimension
    if 3 ** (K * n) > MAX_ATOMS:
        raise CostGuardError(f"3^(K*n) = {3 ** (K * n)} atoms exceeds the limit {MAX_ATOMS}")
    eta = cascade_cell_masses(params)
    x = (np.arange(3**K) + 0.5) / 3**K
    pts, W = _product_grid(eta, x, n)
    meta = {"generator": "cascade", "delta": repr(params.delta), "gen_depth": K, "dimension": n}
    return DiscreteMeasure(pts, W, dimension=n, period=1.0 if periodic else None,
                           resolution_scale=3.0**-K, metadata={k: str(v) for k, v in meta.items()})


def lebesgue_box(n: int, level: int, base: int = 2, periodic: bool = False) -> DiscreteMeasure:
    """base^(level*n) equal atoms at the centers of the level-``level`` cells of [0, 1)^n.

    Each axis carries weight base^-level per cell, so the atom weights are
    exactly the products a triadic cascade with equal shares produces.
    """
    if n < 1 or level < 0 or base < 2:
        raise InputError("need n >= 1, level >= 0 and base >= 2")
    if base ** (level * n) > MAX_ATOMS:
        raise CostGuardError("too many atoms requested")
    cells = base**level
    axis_w = np.full(cells, 1.0)
    for _ in range(level):
        axis_w = axis_w / base
    x = (np.arange(cells) + 0.5) / cells
    pts, W = _product_grid(axis_w, x, n)
    meta = {"generator": "lebesgue", "level": str(level), "base": str(base), "dimension": str(n)}
    return DiscreteMeasure(pts, W, dimension=n, period=1.0 if periodic else None,
                           resolution_scale=float(base) ** -level, metadata=meta)


def four_corner_cantor(level: int) -> DiscreteMeasure:
    """4^level equal atoms at the cell centers of the ratio-1/4 four-corner construction."""
    if not 1 <= level <= 12:
        raise InputError("level must be between 1 and 12")
    lows = np.zeros((1, 2))
    side = 1.0
    corners = np.array([[0.0, 0.0], [0.75, 0.0], [0.0, 0.75], [0.75, 0.75]])
    for _ in range(level):
        lows = (lows[:, None, :] + side * corners[None, :, :]).reshape(-1, 2)
        side /= 4
    centers = lows + side / 2
    order = np.lexsort((centers[:, 1], centers[:, 0]))
    w = np.full(4**level, 4.0**-level)
    return DiscreteMeasure(centers[order], w, dimension=2, resolution_scale=side,
                           metadata={"generator": "four_corner_cantor", "level": str(level)})


def curve_measure(
    curve: PolyCurve,
    atoms_per_unit_length: float,
    weight_profile: str = "arclength",
    rate: float = 0.0,
) -> DiscreteMeasure:
    """Equally spaced atoms along the curve.

    Atom i sits at arclength (i + 1/2) h with h = length / N and
    N = ceil(length * atoms_per_unit_length). The ``arclength`` profile
    gives every atom weight h (unit linear density); ``exponential``
    gives atom i weight h * exp(-rate * s_i).
    """
    if not atoms_per_unit_length > 0:
        raise InputError("atoms_per_unit_length must be positive")
    L = curve.length
    if L == 0:
        return DiscreteMeasure(curve.vertices[:1], [1.0], metadata={"generator": "curve"})
    count = max(1, math.ceil(L * atoms_per_unit_length - 1e-9))
    h = L / count
    s = (np.arange(count) + 0.5) * h
    pts = curve.point_at(s)
    if weight_profile == "arclength":
        w = np.full(count, h)
    elif weight_profile == "exponential":
        w = h * np.exp(-rate * s)
    else:
        raise InputError("weight_profile must be 'arclength' or 'exponential'")
    meta = {"generator": "curve", "profile": weight_profile, "rate": repr(rate), "length": repr(L)}
    return DiscreteMeasure(pts, w, dimension=curve.dimension, resolution_scale=h, metadata=meta)


def staircase_curve(
    length: float,
    seed: int = 0,
    bounds: tuple[float, float] = (0.05, 0.95),
    step_range: tuple[float, float] = (0.05, 0.3),
) -> PolyCurve:
    """A random axis-parallel polygonal path in the square ``bounds^2``.

    Moves alternate between horizontal and vertical. Each move has a random
    length from ``step_range`` and a random direction, reversed when needed to
    stay inside; the final move is shortened so the total length is exact.
    """
    if not length > 0:
        raise InputError("length must be positive")
    lo, hi = bounds
    rng = np.random.default_rng(seed)
    p = rng.uniform(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo), size=2)
    verts = [p.copy()]
    remaining = float(length)
    axis = 0
    while remaining > 1e-12:
        step = min(remaining, rng.uniform(*step_range))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        room = (hi - p[axis]) if sign > 0 else (p[axis] - lo)
        if room < step:
            sign = -sign
            room = (hi - p[axis]) if sign > 0 else (p[axis] - lo)
        step = min(step, room)
        if step > 1e-9:
            p = p.copy()
            p[axis] += sign * step
            verts.append(p)
            remaining -= step
        axis = 1 - axis
    curve = PolyCurve(np.array(verts))
    return curve


def random_measure(count: int, n: int = 2, seed: int = 0) -> DiscreteMeasure:
    """Uniform random atoms in [0, 1)^n with uniform random weights."""
    rng = np.random.default_rng(seed)
    return DiscreteMeasure(rng.random((count, n)), rng.random(count), dimension=n,
                           metadata={"generator": "random", "seed": str(seed)})
