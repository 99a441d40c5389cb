"""Finite weighted point-mass measures, ball masses and density sweeps."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

from .errors import InputError

__all__ = [
    "Atom",
    "DiscreteMeasure",
    "DensityEstimate",
    "ball_mass",
    "ball_masses",
    "restrict",
    "density_profile",
    "doubling_ratio",
    "read_measure",
    "write_measure",
]


@dataclass(frozen=True)
class Atom:
    position: tuple[float, ...]
    weight: float


def _as_point(x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise InputError(f"expected a point of dimension {n}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError("point coordinates must be finite")
    return x


class DiscreteMeasure:
    """A finite list of weighted atoms in R^n.

    ``period`` marks a measure that repeats with that period along every
    axis; the stored atoms are then the representatives in ``[0, period)^n``
    and every query sees all translated copies. ``resolution_scale`` is the
    discretization scale of generated measures, below which analyses are not
    meaningful.
    """

    __slots__ = ("_points", "_weights", "_total", "_metadata", "_period", "_resolution")

    def __init__(
        self,
        points,
        weights,
        *,
        dimension: int | None = None,
        period: float | None = None,
        resolution_scale: float | None = None,
        metadata: Mapping[str, str] | None = None,
    ):
        pts = np.array(points, dtype=float)
        w = np.array(weights, dtype=float).reshape(-1)
        if pts.size == 0:
            if dimension is None:
                if pts.ndim == 2:
                    dimension = pts.shape[1]
                else:
                    raise InputError("dimension is required for an empty measure")
            pts = pts.reshape(0, dimension)
        elif pts.ndim == 1:
            pts = pts.reshape(-1, 1) if dimension in (None, 1) else pts.reshape(1, -1)
        if pts.ndim != 2:
            raise InputError("points must be a 2-D array of shape (atoms, n)")
        if dimension is not None and pts.shape[1] != dimension:
            raise InputError(f"points have dimension {pts.shape[1]}, expected {dimension}")
        if pts.shape[1] < 1:
            raise InputError("dimension must be at least 1")
        if w.shape[0] != pts.shape[0]:
            raise InputError(f"{pts.shape[0]} points but {w.shape[0]} weights")
        if not np.all(np.isfinite(pts)):
            raise InputError("atom positions must be finite")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InputError("atom weights must be finite and nonnegative")
        if period is not None:
            period = float(period)
            if not period > 0:
                raise InputError("period must be positive")
            if pts.size and (pts.min() < 0 or pts.max() >= period):
                raise InputError("atoms of a periodic measure must lie in [0, period)^n")
        pts.flags.writeable = False
        w.flags.writeable = False
        self._points = pts
        self._weights = w
        self._total = math.fsum(w.tolist())
        self._period = period
        self._resolution = None if resolution_scale is None else float(resolution_scale)
        self._metadata = MappingProxyType(dict(metadata or {}))

    @classmethod
    def from_atoms(cls, atoms: Iterable[Atom], dimension: int | None = None, **kwargs):
        atoms = list(atoms)
        pts = [a.position for a in atoms]
        return cls(pts, [a.weight for a in atoms], dimension=dimension, **kwargs)

    @property
    def dimension(self) -> int:
        return self._points.shape[1]

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def total_mass(self) -> float:
        return self._total

    @property
    def period(self) -> float | None:
        return self._period

    @property
    def resolution_scale(self) -> float | None:
        return self._resolution

    @property
    def metadata(self) -> Mapping[str, str]:
        return self._metadata

    @property
    def atoms(self) -> tuple[Atom, ...]:
        return tuple(
            Atom(tuple(p.tolist()), float(w)) for p, w in zip(self._points, self._weights)
        )

    def __len__(self) -> int:
        return self._points.shape[0]

    def __repr__(self) -> str:
        extra = f", period={self._period}" if self._period else ""
        return (
            f"DiscreteMeasure(n={self.dimension}, atoms={len(self)}, "
            f"total_mass={self._total:.6g}{extra})"
        )

    def take(self, indices) -> "DiscreteMeasure":
        """Sub-measure on the given atom indices, in the given order."""
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        return DiscreteMeasure(
            self._points[idx],
            self._weights[idx],
            dimension=self.dimension,
            period=self._period,
            resolution_scale=self._resolution,
            metadata=self._metadata,
        )

    def with_metadata(self, **updates) -> "DiscreteMeasure":
        meta = dict(self._metadata)
        meta.update({k: str(v) for k, v in updates.items()})
        return DiscreteMeasure(
            self._points,
            self._weights,
            dimension=self.dimension,
            period=self._period,
            resolution_scale=self._resolution,
            metadata=meta,
        )

    def support_mask(self) -> np.ndarray:
        return self._weights > 0


@dataclass(frozen=True)
class DensityEstimate:
    center: tuple[float, ...]
    radii: tuple[float, ...]
    ratios: tuple[float, ...]
    lower_est: float
    upper_est: float


def _image_offsets(n: int, reach: int) -> np.ndarray:
    rng = range(-reach, reach + 1)
    return np.array(list(itertools.product(rng, repeat=n)), dtype=float)


def _distances(mu: DiscreteMeasure, x: np.ndarray, r: float) -> np.ndarray:
    """Distances from x to every atom (or to each atom's nearest image set).

    For periodic measures the result has one row per relevant image shift.
    """
    d = mu.points - x
    if mu.period is None:
        return np.sqrt(np.einsum("ij,ij->i", d, d))[None, :]
    p = mu.period
    d = d - p * np.round(d / p)
    reach = int(math.floor(r / p + 0.5))
    offs = _image_offsets(mu.dimension, reach) * p
    dd = d[None, :, :] + offs[:, None, :]
    return np.sqrt(np.einsum("kij,kij->ki", dd, dd))


def ball_mass(mu: DiscreteMeasure, x, r: float) -> float:
    """Mass of the closed Euclidean ball B(x, r)."""
    x = _as_point(x, mu.dimension)
    if not r > 0:
        raise InputError("radius must be positive")
    if len(mu) == 0:
        return 0.0
    dist = _distances(mu, x, r)
    return float((dist <= r).astype(float).sum(axis=0) @ mu.weights)


def ball_masses(mu: DiscreteMeasure, centers, radii, chunk: int = 64) -> np.ndarray:
    """Matrix of closed-ball masses, one row per center, one column per radius."""
    centers = np.asarray(centers, dtype=float).reshape(-1, mu.dimension)
    radii = np.asarray(radii, dtype=float).reshape(-1)
    if np.any(radii <= 0):
        raise InputError("radii must be positive")
    out = np.zeros((centers.shape[0], radii.size))
    if len(mu) == 0 or centers.shape[0] == 0:
        return out
    rmax = float(radii.max())
    if mu.period is not None and rmax >= mu.period / 2:
        for i, c in enumerate(centers):
            out[i] = [ball_mass(mu, c, r) for r in radii]
        return out
    w = mu.weights
    for start in range(0, centers.shape[0], chunk):
        c = centers[start : start + chunk]
        d = mu.points[None, :, :] - c[:, None, :]
        if mu.period is not None:
            d = d - mu.period * np.round(d / mu.period)
        dist = np.sqrt(np.einsum("cij,cij->ci", d, d))
        inside = dist[:, :, None] <= radii[None, None, :]
        out[start : start + chunk] = np.einsum("cir,i->cr", inside, w)
    return out


def restrict(mu: DiscreteMeasure, region) -> DiscreteMeasure:
    """Keep exactly the atoms whose positions lie in ``region``.

    ``region`` is either an object with a vectorized ``contains(points)``
    method (such as :class:`betascope.dyadic.Box`) or a callable mapping an
    ``(atoms, n)`` array to a boolean mask. Atom order is preserved. For a
    periodic measure the test applies to the stored representatives.
    """
    if hasattr(region, "contains"):
        mask = region.contains(mu.points)
    elif callable(region):
        mask = region(mu.points)
    else:
        raise InputError("region must be a predicate or provide contains()")
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), (len(mu),))
    return mu.take(np.flatnonzero(mask))


def density_profile(mu: DiscreteMeasure, x, r_max: float, num_radii: int) -> DensityEstimate:
    """Ratios mu(B(x, r)) / (2r) for r = r_max * 2^-i, i = 0..num_radii-1."""
    if not r_max > 0:
        raise InputError("r_max must be positive")
    if num_radii < 1:
        raise InputError("num_radii must be at least 1")
    x = _as_point(x, mu.dimension)
    radii = tuple(math.ldexp(r_max, -i) for i in range(num_radii))
    ratios = tuple(ball_mass(mu, x, r) / (2.0 * r) for r in radii)
    return DensityEstimate(tuple(x.tolist()), radii, ratios, min(ratios), max(ratios))


def doubling_ratio(mu: DiscreteMeasure, centers, radii) -> float:
    """Largest mu(B(x, 2r)) / mu(B(x, r)) over the sampled centers and radii."""
    radii = np.asarray(radii, dtype=float)
    small = ball_masses(mu, centers, radii)
    big = ball_masses(mu, centers, 2 * radii)
    if np.any(small <= 0):
        raise InputError("a sampled ball has zero mass; choose centers on the support")
    return float(np.max(big / small))


_RESERVED = ("period", "resolution_scale")


def write_measure(mu: DiscreteMeasure, path, *, extra: Mapping[str, object] | None = None) -> None:
    """Write ``mu`` in the text measure format with metadata as comments."""
    meta = dict(mu.metadata)
    if extra:
        meta.update({k: str(v) for k, v in extra.items()})
    lines = []
    if mu.period is not None:
        lines.append(f"# period={mu.period!r}")
    if mu.resolution_scale is not None:
        lines.append(f"# resolution_scale={mu.resolution_scale!r}")
    for key in sorted(meta):
        if key in _RESERVED:
            continue
        lines.append(f"# {key}={meta[key]}")
    lines.append(f"n={mu.dimension}")
    for p, w in zip(mu.points.tolist(), mu.weights.tolist()):
        lines.append(" ".join(format(v, ".17g") for v in (*p, w)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_measure(path) -> DiscreteMeasure:
    """Parse the text measure format written by :func:`write_measure`."""
    meta: dict[str, str] = {}
    n = None
    rows = []
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, _, value = body.partition("=")
                meta[key.strip()] = value.strip()
            continue
        if n is None:
            if not line.startswith("n="):
                raise InputError(f"{path}:{lineno}: expected header 'n=<dim>'")
            try:
                n = int(line[2:])
            except ValueError:
                raise InputError(f"{path}:{lineno}: bad dimension {line[2:]!r}") from None
            if n < 1:
                raise InputError(f"{path}:{lineno}: dimension must be positive")
            continue
        fields = line.split()
        if len(fields) != n + 1:
            raise InputError(f"{path}:{lineno}: expected {n + 1} values, got {len(fields)}")
        try:
            rows.append([float(v) for v in fields])
        except ValueError:
            raise InputError(f"{path}:{lineno}: non-numeric value") from None
    if n is None:
        raise InputError(f"{path}: missing 'n=<dim>' header")
    data = np.array(rows, dtype=float).reshape(-1, n + 1)
    try:
        period = float(meta.pop("period")) if "period" in meta else None
        res = float(meta.pop("resolution_scale")) if "resolution_scale" in meta else None
    except ValueError:
        raise InputError(f"{path}: bad numeric metadata") from None
    return DiscreteMeasure(
        data[:, :n], data[:, n], dimension=n, period=period, resolution_scale=res, metadata=meta
    )

