"""Menger curvature of point triples and the triple-integral curvature energy."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CostGuardError, InputError
from .measure import DiscreteMeasure

__all__ = ["CurvatureEnergy", "menger", "menger_many", "curvature_energy", "EXACT_LIMIT"]

EXACT_LIMIT = 2000
COLLINEAR_RTOL = 1e-14


@dataclass(frozen=True)
class CurvatureEnergy:
    value: float
    mode: str
    sample_count: int
    std_error: float = 0.0


def menger_many(X: np.ndarray, Y: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Reciprocal circumradius 4 * area / (product of sides) for rows of X, Y, Z.

    The area comes from the norm of the 2-vector (y - x) ^ (z - x), which works
    in any dimension. Triples whose doubled area is below 1e-14 times the
    squared longest side count as collinear.
    """
    a = Y - X
    b = Z - X
    c = Z - Y
    n = X.shape[1]
    wedge2 = np.zeros(X.shape[0])
    for i in range(n):
        for j in range(i + 1, n):
            wedge2 += (a[:, i] * b[:, j] - a[:, j] * b[:, i]) ** 2
    twice_area = np.sqrt(wedge2)
    la = np.sqrt(np.einsum("ij,ij->i", a, a))
    lb = np.sqrt(np.einsum("ij,ij->i", b, b))
    lc = np.sqrt(np.einsum("ij,ij->i", c, c))
    longest = np.maximum(la, np.maximum(lb, lc))
    prod = la * lb * lc
    degenerate = (prod == 0) | (twice_area <= COLLINEAR_RTOL * longest * longest)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(degenerate, 0.0, 2.0 * twice_area / prod)
    return val


def menger(x, y, z) -> float:
    """Menger curvature c(x, y, z); symmetric in its arguments bit for bit."""
    pts = [np.asarray(p, dtype=float).ravel() for p in (x, y, z)]
    if not (pts[0].shape == pts[1].shape == pts[2].shape):
        raise InputError("points must share a dimension")
    pts.sort(key=lambda p: tuple(p.tolist()))
    X, Y, Z = (p[None, :] for p in pts)
    return float(menger_many(X, Y, Z)[0])


def _sorted_triples(P: np.ndarray, i, j, k):
    """Put each triple in lexicographic point order so the formula sees one canonical order."""
    T = np.stack([P[i], P[j], P[k]], axis=1)
    idx = np.broadcast_to(np.arange(3), T.shape[:2]).copy()
    for a in range(T.shape[2] - 1, -1, -1):
        key = np.take_along_axis(T[:, :, a], idx, axis=1)
        idx = np.take_along_axis(idx, np.argsort(key, axis=1, kind="stable"), axis=1)
    T = np.take_along_axis(T, idx[:, :, None], axis=1)
    return T[:, 0], T[:, 1], T[:, 2]


def curvature_energy(
    mu: DiscreteMeasure,
    mode: str = "exact",
    samples: int = 100_000,
    seed: int = 0,
) -> CurvatureEnergy:
    """Sum of w_i w_j w_k c(x_i, x_j, x_k)^2 over ordered atom triples.

    ``exact`` enumerates every ordered triple (diagonal triples contribute 0).
    ``monte_carlo`` draws independent triples with probability proportional
    to the product of weights and reports mass^3 * mean(c^2) with its
    standard error.
    """
    P, w = mu.points, mu.weights
    if mode == "exact":
        if len(mu) > EXACT_LIMIT:
            raise CostGuardError(f"exact curvature energy is limited to {EXACT_LIMIT} atoms")
        m = len(mu)
        total = []
        for i in range(m - 2):
            jj, kk = np.triu_indices(m - i - 1, k=1)
            jj, kk = jj + i + 1, kk + i + 1
            X, Y, Z = _sorted_triples(P, np.full(jj.shape, i), jj, kk)
            c = menger_many(X, Y, Z)
            total.append(float(w[i] * np.dot(w[jj] * w[kk], c * c)))
        # each unordered triple of distinct atoms appears in 6 orders
        return CurvatureEnergy(6.0 * math.fsum(total), "exact", m**3, 0.0)
    if mode == "monte_carlo":
        if samples < 1:
            raise InputError("monte_carlo mode needs at least one sample")
        mass = mu.total_mass
        if mass <= 0:
            return CurvatureEnergy(0.0, "monte_carlo", samples, 0.0)
        rng = np.random.default_rng(seed)
        p = w / w.sum()
        idx = rng.choice(len(mu), size=(samples, 3), p=p)
        X, Y, Z = _sorted_triples(P, idx[:, 0], idx[:, 1], idx[:, 2])
        c2 = menger_many(X, Y, Z) ** 2
        scale = mass**3
        std = float(c2.std(ddof=1)) if samples > 1 else 0.0
        return CurvatureEnergy(scale * float(c2.mean()), "monte_carlo", samples,
                               scale * std / math.sqrt(samples))
    raise InputError("mode must be 'exact' or 'monte_carlo'")
