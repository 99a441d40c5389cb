"""Config-driven batch runner: ``betascope <command> --config <ini> [--out <dir>]``.

Exit codes: 0 success, 1 an asserted invariant failed, 2 usage or config
error, 3 malformed input files, 4 cost guard refusal.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import math
import os
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import generators as gen
from .certificates import (
    CertificateParams,
    extract_lower_regular,
    lower_regularity_constant,
    flatness_certificate,
)
from .curvature import curvature_energy
from .dyadic import Box, GridConvention
from .errors import BetascopeError, CostGuardError, HypothesisError, InputError
from .jones import VARIANTS, ShiftedGridParams, jones_profiles, start_level
from .levels import MultiscaleIndex
from .measure import DiscreteMeasure, read_measure, write_measure
from .whitney import PolyCurve, curve_distances, whitney_decompose, write_whitney

__all__ = ["AnalysisConfig", "ConfigError", "run", "main", "COMMANDS"]

COMMANDS = ("generate", "analyze", "certify", "whitney", "curvature", "report")
EXIT_OK, EXIT_INVARIANT, EXIT_USAGE, EXIT_INPUT, EXIT_COST = 0, 1, 2, 3, 4


class ConfigError(BetascopeError):
    """The configuration file is missing, unreadable or inconsistent."""


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _number(text: str) -> float:
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"not a number: {text!r}") from exc


@dataclass
class AnalysisConfig:
    command: str
    out_dir: Path
    sections: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    # typed accessors -----------------------------------------------------

    def get(self, section: str, key: str, default=None):
        # configparser folds option names to lower case
        return self.sections.get(section, {}).get(key.lower(), default)

    def number(self, section: str, key: str, default=None):
        v = self.get(section, key)
        if v is None:
            if default is None:
                raise ConfigError(f"missing [{section}] {key}")
            return default
        return _number(v)

    def integer(self, section: str, key: str, default=None) -> int:
        v = self.number(section, key, default)
        if v != int(v):
            raise ConfigError(f"[{section}] {key} must be an integer")
        return int(v)

    def flag(self, section: str, key: str, default: bool = False) -> bool:
        v = self.get(section, key)
        if v is None:
            return default
        v = v.strip().lower()
        if v in ("1", "yes", "true", "on"):
            return True
        if v in ("0", "no", "false", "off"):
            return False
        raise ConfigError(f"[{section}] {key} must be a boolean")

    def path(self, section: str, key: str) -> Path | None:
        v = self.get(section, key)
        if v is None:
            return None
        if not v.strip():
            raise ConfigError(f"[{section}] {key} is empty")
        p = Path(v.strip())
        return p if p.is_absolute() else self.base_dir / p

    @property
    def depth(self) -> int:
        d = self.integer("run", "depth", 6)
        if d < 0:
            raise ConfigError("depth must be >= 0")
        return d

    @property
    def start_scale(self) -> float:
        r = self.number("run", "start_scale", 1.0)
        if not r > 0:
            raise ConfigError("start_scale must be positive")
        return r

    @property
    def parallelism(self) -> int:
        env = os.environ.get("BETASCOPE_THREADS")
        if env:
            try:
                return max(1, int(env))
            except ValueError as exc:
                raise ConfigError("BETASCOPE_THREADS must be an integer") from exc
        return max(1, self.integer("run", "parallelism", 1))

    @property
    def variants(self) -> list[str]:
        raw = self.get("run", "variants", "ordinary,normalized")
        out = [v.strip() for v in raw.split(",") if v.strip()]
        for v in out:
            if v not in VARIANTS:
                raise ConfigError(f"unknown variant {v!r}; choose from {VARIANTS}")
        return out

    def grid(self, n: int) -> GridConvention:
        raw = self.get("run", "shift")
        if raw is None:
            return GridConvention()
        vals = tuple(_number(t) for t in raw.split(","))
        if len(vals) == 1:
            vals = vals * n
        try:
            return GridConvention("half_open", vals)
        except InputError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path, command: str, out_dir) -> AnalysisConfig:
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    sections = {s: dict(parser[s]) for s in parser.sections()}
    out = Path(out_dir) if out_dir else Path(sections.get("run", {}).get("out", "betascope-out"))
    return AnalysisConfig(command, out, sections, path.parent)


# --- inputs ----------------------------------------------------------------


def _parse_vertices(text: str) -> np.ndarray:
    rows = [r for r in text.replace("\n", ";").split(";") if r.strip()]
    try:
        return np.array([[_number(t) for t in r.replace(",", " ").split()] for r in rows])
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"bad vertex list: {exc}") from exc


def build_curve(cfg: AnalysisConfig) -> PolyCurve:
    if "curve" not in cfg.sections:
        raise ConfigError("missing [curve] section")
    f = cfg.path("curve", "file")
    if f is not None:
        try:
            V = np.loadtxt(f, ndmin=2, comments="#")
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot read curve file {f}: {exc}") from exc
        return PolyCurve(V)
    if cfg.get("curve", "vertices") is not None:
        return PolyCurve(_parse_vertices(cfg.get("curve", "vertices")))
    if cfg.get("curve", "staircase_length") is not None:
        return gen.staircase_curve(cfg.number("curve", "staircase_length"),
                                   seed=cfg.integer("curve", "seed", 0))
    raise ConfigError("[curve] needs file, vertices or staircase_length")


def build_measure(cfg: AnalysisConfig) -> DiscreteMeasure:
    s = "measure"
    src = cfg.path(s, "input")
    if src is not None:
        return read_measure(src)
    kind = cfg.get(s, "generator")
    if kind is None:
        raise ConfigError("[measure] needs input or generator")
    kind = kind.strip()
    if kind == "cascade":
        p = gen.CascadeParams(cfg.number(s, "delta"), cfg.integer(s, "gen_depth"), cfg.integer(s, "dimension", 2))
        return gen.cascade_product(p, periodic=cfg.flag(s, "periodic", True))
    if kind == "lebesgue":
        return gen.lebesgue_box(cfg.integer(s, "dimension", 2), cfg.integer(s, "level"),
                                base=cfg.integer(s, "base", 2), periodic=cfg.flag(s, "periodic", False))
    if kind == "cantor":
        return gen.four_corner_cantor(cfg.integer(s, "level"))
    if kind == "curve":
        profile = cfg.get(s, "profile", "arclength").strip()
        return gen.curve_measure(build_curve(cfg), cfg.number(s, "atoms_per_unit_length"), profile,
                                 rate=cfg.number(s, "rate", 0.0))
    if kind == "random":
        return gen.random_measure(cfg.integer(s, "count"), cfg.integer(s, "dimension", 2),
                                  seed=cfg.integer(s, "seed", 0))
    raise ConfigError(f"unknown generator {kind!r}")


def _write_summary(path: Path, rows: list[tuple[str, object]]) -> None:
    with open(path, "w") as fh:
        for k, v in rows:
            fh.write(f"{k} = {_fmt(v) if isinstance(v, float) else v}\n")


def _quantiles(vals) -> tuple[float, float, float]:
    v = np.asarray(vals, dtype=float)
    if v.size == 0:
        return (0.0, 0.0, 0.0)
    return float(v.min()), float(np.median(v)), float(v.max())


# --- commands --------------------------------------------------------------


def cmd_generate(cfg: AnalysisConfig) -> int:
    mu = build_measure(cfg)
    target = cfg.path("measure", "output") or cfg.out_dir / "measure.txt"
    write_measure(mu, target)
    _write_summary(cfg.out_dir / "summary.txt", [
        ("command", "generate"), ("atoms", len(mu)), ("dimension", mu.dimension),
        ("total_mass", mu.total_mass), ("measure_file", target.name),
    ])
    return EXIT_OK


def _select_atoms(cfg: AnalysisConfig, mu: DiscreteMeasure) -> np.ndarray:
    raw = (cfg.get("run", "atoms", "all") or "all").strip()
    if raw == "all":
        return np.arange(len(mu))
    count = int(_number(raw))
    if count >= len(mu):
        return np.arange(len(mu))
    rng = np.random.default_rng(cfg.integer("run", "seed", 0))
    p = mu.weights / mu.weights.sum()
    return np.sort(rng.choice(len(mu), size=count, replace=False, p=p))


def recenter(mu: DiscreteMeasure):
    """Translate and scale by a power of two so non-periodic data fit in [0, 1)^n.

    Returns ``(measure, offset, scale)`` with new = (old - offset) / scale;
    data already inside the unit cube are returned unchanged.
    """
    P = mu.points
    if mu.period is not None or len(mu) == 0 or (P.min() >= 0 and P.max() < 1):
        return mu, np.zeros(mu.dimension), 1.0
    lo = P.min(axis=0)
    extent = float((P.max(axis=0) - lo).max())
    # frexp gives 2^e > extent, so the top coordinate stays below 1
    scale = math.ldexp(1.0, math.frexp(extent)[1]) if extent > 0 else 1.0
    moved = DiscreteMeasure((P - lo) / scale, mu.weights, dimension=mu.dimension,
                            metadata=dict(mu.metadata))
    return moved, lo, scale


def cmd_analyze(cfg: AnalysisConfig) -> int:
    mu = build_measure(cfg)
    offset, scale = np.zeros(mu.dimension), 1.0
    if cfg.flag("run", "recenter", True):
        mu, offset, scale = recenter(mu)
    n = mu.dimension
    conv = cfg.grid(n)
    depth, r = cfg.depth, cfg.start_scale
    k0 = start_level(r)
    if depth < k0:
        raise ConfigError("depth is coarser than start_scale")
    index = MultiscaleIndex(mu, parallelism=cfg.parallelism)
    tables = index.tables(range(k0, depth + 1), conv)
    summary: list[tuple[str, object]] = [("command", "analyze"), ("atoms", len(mu)),
                                         ("grid", conv.label(n)), ("depth", depth), ("start_scale", r),
                                         ("recenter_offset", " ".join(_fmt(v) for v in offset)),
                                         ("recenter_scale", scale)]
    range_ok = True
    with open(cfg.out_dir / "cubes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", "shift"] + [f"c{i}" for i in range(n)] + ["mass", "dilate_mass", "beta2"])
        for t in tables:
            live = t.cell_mass > 0
            b = t.box_beta[t.cell_box[live]]
            keys = t.cell_keys[live]
            for key, m, bm, bb in zip(keys, t.cell_mass[live], t.box_mass[t.cell_box[live]], b):
                w.writerow([t.level, conv.label(n)] + [int(c) for c in key] + [_fmt(m), _fmt(bm), _fmt(bb)])
            range_ok &= bool(np.all((b >= 0) & (b <= 1)))
            lo, med, hi = _quantiles(b)
            summary += [(f"beta2_level{t.level}_min", lo), (f"beta2_level{t.level}_median", med),
                        (f"beta2_level{t.level}_max", hi), (f"cubes_level{t.level}", int(live.sum()))]
    atoms = _select_atoms(cfg, mu)
    monotone = True
    with open(cfg.out_dir / "profiles.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["atom", "variant", "level", "increment", "partial_sum"])
        for variant in cfg.variants:
            profs = jones_profiles(mu, mu.points[atoms], r, depth, variant, index=index, shift=conv,
                                   params=ShiftedGridParams() if variant == "shifted" else None,
                                   atom_indices=atoms)
            per_level: dict[int, list[float]] = {}
            for p in profs:
                for lev, inc, ps in zip(p.levels, p.increments, p.partial_sums):
                    w.writerow([p.atom_index, variant, lev, _fmt(inc), _fmt(ps)])
                    per_level.setdefault(lev, []).append(inc)
                monotone &= all(i >= 0 for i in p.level_totals)
            for lev in sorted(per_level):
                lo, med, hi = _quantiles(per_level[lev])
                summary += [(f"{variant}_level{lev}_min", lo), (f"{variant}_level{lev}_median", med),
                            (f"{variant}_level{lev}_max", hi)]
    summary += [("check_beta2_range", "pass" if range_ok else "fail"),
                ("check_nonnegative_increments", "pass" if monotone else "fail")]
    _write_summary(cfg.out_dir / "summary.txt", summary)
    return EXIT_OK if range_ok and monotone else EXIT_INVARIANT


def cmd_certify(cfg: AnalysisConfig) -> int:
    s = "certificate"
    curve = build_curve(cfg)
    density = cfg.number(s, "atoms_per_unit_length", 500.0)
    mu = gen.curve_measure(curve, density)
    frac = cfg.number(s, "background_fraction", 0.01)
    count = cfg.integer(s, "background_atoms", 400)
    pts, wts = mu.points, mu.weights
    if frac > 0 and count > 0:
        rng = np.random.default_rng(cfg.integer(s, "seed", 0))
        lo, hi = cfg.number(s, "background_low", 0.0), cfg.number(s, "background_high", 1.0)
        bg = lo + (hi - lo) * rng.random((count, curve.dimension))
        pts = np.concatenate([pts, bg])
        wts = np.concatenate([wts, np.full(count, frac * mu.total_mass / count)])
    nu = DiscreteMeasure(pts, wts, resolution_scale=mu.resolution_scale)
    j, k = cfg.integer(s, "j", 0), cfg.integer(s, "k", 3)
    rpo = cfg.integer(s, "radii_per_octave", 4)
    r0 = cfg.number(s, "r0", math.ldexp(1.0, -k))
    E = extract_lower_regular(nu, j, k, rpo)
    scale = float(np.linalg.norm(np.ptp(np.concatenate([nu.points, curve.vertices]), axis=0)))
    E = E[curve_distances(nu.points[E], curve) <= 1e-9 * scale]
    if E.size == 0:
        raise HypothesisError("no lower-regular atoms on the curve")
    measured, _, _ = lower_regularity_constant(nu, E, r0, rpo)
    c_E = cfg.number(s, "c_E", measured)
    params = CertificateParams(c_E=c_E, r0=r0, dimension=curve.dimension)
    rep = flatness_certificate(nu, E, curve, params, cfg.integer(s, "depth", 8), radii_per_octave=rpo)
    with open(cfg.out_dir / "certificate.txt", "w") as fh:
        fh.write(f"curve_length = {_fmt(curve.length)}\n")
        fh.write(rep.to_text())
    _write_summary(cfg.out_dir / "summary.txt", [("command", "certify"), ("atoms", len(nu)),
                                                 ("passed", "yes" if rep.passed else "no")])
    return EXIT_OK if rep.passed else EXIT_INVARIANT


def cmd_whitney(cfg: AnalysisConfig) -> int:
    s = "whitney"
    curve = build_curve(cfg)
    n = curve.dimension
    dom = cfg.get(s, "domain")
    if dom is None:
        box = Box.from_bounds(np.zeros(n), np.ones(n))
    else:
        vals = [_number(t) for t in dom.replace(",", " ").split()]
        if len(vals) != 2 * n:
            raise ConfigError("[whitney] domain needs lower and upper corners")
        box = Box.from_bounds(vals[:n], vals[n:])
    root = cfg.get(s, "root_level")
    dec = whitney_decompose(curve, box, cfg.integer(s, "max_level", 8),
                            None if root is None else int(_number(root)))
    cubes = sorted(dec.emitted, key=lambda c: (c.cube.level, c.cube.coords))
    write_whitney(cfg.out_dir / "whitney.csv", cubes)
    ok = all(c.dist_to_curve <= c.cube.diameter <= 4 * c.dist_to_curve for c in cubes)
    ids = [c.cube.ident() for c in cubes]
    rows: list[tuple[str, object]] = [
        ("command", "whitney"), ("emitted", len(cubes)), ("orphans", len(dec.orphans)),
        ("unresolved", len(dec.unresolved)), ("emitted_volume", dec.emitted_volume),
        ("orphan_volume", dec.orphan_volume), ("unresolved_volume", dec.unresolved_volume)]
    rows += [(f"near_volume_level{k}", float(v)) for k, v in sorted(dec.near_volume.items())]
    rows += [("check_comparability", "pass" if ok else "fail"),
             ("check_distinct", "pass" if len(set(ids)) == len(ids) else "fail")]
    _write_summary(cfg.out_dir / "summary.txt", rows)
    return EXIT_OK if ok and len(set(ids)) == len(ids) else EXIT_INVARIANT


def cmd_curvature(cfg: AnalysisConfig) -> int:
    s = "curvature"
    mu = build_measure(cfg)
    mode = cfg.get(s, "mode", "exact").strip()
    res = curvature_energy(mu, mode, samples=cfg.integer(s, "samples", 100000), seed=cfg.integer(s, "seed", 0))
    _write_summary(cfg.out_dir / "summary.txt", [
        ("command", "curvature"), ("atoms", len(mu)), ("mode", res.mode), ("energy", res.value),
        ("std_error", res.std_error), ("samples", res.sample_count)])
    return EXIT_OK


def cmd_report(cfg: AnalysisConfig) -> int:
    src = cfg.path("report", "input_dir") or cfg.out_dir
    cubes, profiles = src / "cubes.csv", src / "profiles.csv"
    if not cubes.exists():
        raise InputError(f"{cubes} not found; run analyze first")
    per_level: dict[int, list[float]] = {}
    try:
        with open(cubes, newline="") as fh:
            for row in csv.DictReader(fh):
                per_level.setdefault(int(row["level"]), []).append(float(row["beta2"]))
        incs: dict[tuple[str, int], list[float]] = {}
        if profiles.exists():
            with open(profiles, newline="") as fh:
                for row in csv.DictReader(fh):
                    incs.setdefault((row["variant"], int(row["level"])), []).append(float(row["increment"]))
    except (KeyError, ValueError) as exc:
        raise InputError(f"malformed table in {src}: {exc}") from exc
    rows: list[tuple[str, object]] = [("command", "report")]
    ok = True
    for lev in sorted(per_level):
        lo, med, hi = _quantiles(per_level[lev])
        ok &= lo >= 0 and hi <= 1
        rows += [(f"beta2_level{lev}_min", lo), (f"beta2_level{lev}_median", med),
                 (f"beta2_level{lev}_max", hi), (f"cubes_level{lev}", len(per_level[lev]))]
    for (variant, lev) in sorted(incs):
        v = np.array(incs[(variant, lev)])
        rows += [(f"{variant}_level{lev}_q10", float(np.quantile(v, 0.1))),
                 (f"{variant}_level{lev}_median", float(np.median(v))),
                 (f"{variant}_level{lev}_q90", float(np.quantile(v, 0.9)))]
    rows.append(("check_beta2_range", "pass" if ok else "fail"))
    _write_summary(cfg.out_dir / "report.txt", rows)
    return EXIT_OK if ok else EXIT_INVARIANT


_DISPATCH = {
    "generate": cmd_generate,
    "analyze": cmd_analyze,
    "certify": cmd_certify,
    "whitney": cmd_whitney,
    "curvature": cmd_curvature,
    "report": cmd_report,
}


def run(cfg: AnalysisConfig) -> int:
    """Execute one command; returns the process exit code."""
    handler = _DISPATCH.get(cfg.command)
    if handler is None:
        raise ConfigError(f"unknown command {cfg.command!r}")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    return handler(cfg)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="betascope", description="Multiscale beta-number analysis of point measures.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="INI file with [run], [measure], ... sections")
    parser.add_argument("--out", default=None, help="output directory (default: [run] out or ./betascope-out)")
    args = parser.parse_args(argv)
    try:
        return run(load_config(args.config, args.command, args.out))
    except ConfigError as exc:
        print(f"betascope: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except HypothesisError as exc:
        print(f"betascope: hypothesis failed: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except CostGuardError as exc:
        print(f"betascope: refused: {exc}", file=sys.stderr)
        return EXIT_COST
    except InputError as exc:
        print(f"betascope: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
