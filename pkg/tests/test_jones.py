import itertools
import math

import numpy as np
import pytest

from betascope.beta import beta2
from betascope.dyadic import THIRD, DyadicCube, GridConvention, all_shifts, ancestor, cube_containing
from betascope.errors import InputError
from betascope.generators import CascadeParams, cascade_product
from betascope.jones import (
    ShiftedGridParams,
    shifted_grid_beta,
    cube_mass,
    jones_shifted,
    jones_normalized,
    jones_ordinary,
    jones_profiles,
    shifted_default_max_gap,
    start_level,
    truncation_delta,
)
from betascope.levels import MultiscaleIndex
from betascope.measure import DiscreteMeasure


def random_measure(seed, count=50, n=2):
    rng = np.random.default_rng(seed)
    return DiscreteMeasure(rng.random((count, n)), rng.random(count) + 0.1)


def line_measure():
    t = np.linspace(0.02, 0.98, 60)
    return DiscreteMeasure(np.c_[t, 0.4 * t + 0.3], np.ones(60) / 60)


def test_start_level():
    assert start_level(1.0) == 0
    assert start_level(0.75) == 1
    assert start_level(0.25) == 2
    assert start_level(3.0) == -1
    with pytest.raises(InputError):
        start_level(0.0)


def test_shifted_params():
    assert shifted_default_max_gap(2) == 16 * math.ceil(6480 * math.e * math.sqrt(2))
    assert 2**18 * math.sqrt(2) < shifted_default_max_gap(2) < 2**19 * math.sqrt(2)
    with pytest.raises(InputError):
        ShiftedGridParams(1, 3)
    with pytest.raises(InputError):
        ShiftedGridParams(4, 3)


def test_line_measure_all_variants_vanish_on_every_grid():
    mu = line_measure()
    x = mu.points[17]
    for conv in all_shifts(2):
        for variant in ("ordinary", "normalized"):
            p = jones_profiles(mu, [x], 1.0, 7, variant, shift=conv)[0]
            assert max(p.increments) <= 1e-20
    # the line has slope 0.4, so rounding leaves residuals near machine precision
    assert jones_shifted(mu, x, 1.0, 6, ShiftedGridParams(2, 4)).total <= 1e-12


def test_single_atom_shifted_zero():
    mu = DiscreteMeasure([[0.3, 0.6]], [1.0])
    assert jones_shifted(mu, [0.3, 0.6], 1.0, 5, ShiftedGridParams(2, 3)).total == 0.0


def test_terms_vanish_where_mass_is_isolated():
    mu = DiscreteMeasure([[0.1, 0.1], [0.15, 0.7], [0.9, 0.2], [0.9, 0.9]], [1, 1, 1, 1])
    p = jones_ordinary(mu, mu.points[0], 1.0, 8)
    # from level 3 on, 3Q around the first atom holds only that atom
    assert all(v == 0.0 for lev, v in zip(p.levels, p.increments) if lev >= 3)
    assert p.increments[0] > 0


def test_profile_invariants():
    mu = random_measure(1)
    for variant in ("ordinary", "normalized"):
        p = jones_profiles(mu, mu.points[:5], 1.0, 6, variant)
        for prof in p:
            assert all(t.value >= 0 for t in prof.per_level_terms)
            assert all(b >= a for a, b in zip(prof.partial_sums, prof.partial_sums[1:]))
            assert prof.total == pytest.approx(math.fsum(t.value for t in prof.per_level_terms), rel=1e-12)
            assert prof.level_totals == pytest.approx(prof.increments, rel=1e-12, abs=1e-15)


def test_normalized_term_identity_and_direct_route():
    mu = random_measure(2)
    x = mu.points[3]
    po = jones_ordinary(mu, x, 1.0, 5)
    pn = jones_normalized(mu, x, 1.0, 5)
    for to, tn in zip(po.per_level_terms, pn.per_level_terms):
        Q = cube_containing(x, to.level)[0]
        direct = beta2(mu, Q, 3.0).value ** 2
        assert to.value == pytest.approx(direct, rel=1e-10, abs=1e-300)
        assert tn.value == pytest.approx(to.value * Q.diameter / cube_mass(mu, Q), rel=1e-12, abs=1e-300)
        assert to.cube == Q.ident()


def test_density_ceiling_bounds_ordinary_by_normalized():
    mu = random_measure(3, 80)
    index = MultiscaleIndex(mu)
    for i in range(10):
        x = mu.points[i]
        po = jones_ordinary(mu, x, 1.0, 6, index=index)
        pn = jones_normalized(mu, x, 1.0, 6, index=index)
        M = max(cube_mass(mu, cube_containing(x, t.level)[0]) / cube_containing(x, t.level)[0].diameter
                for t in po.per_level_terms)
        for to, tn in zip(po.per_level_terms, pn.per_level_terms):
            assert to.value <= M * tn.value + 1e-12
        assert po.total <= M * pn.total + 1e-9


def test_cascade_profile_regression():
    mu = cascade_product(CascadeParams(0.05, 5))
    x = mu.points[int(np.argmax(mu.weights))]
    index = MultiscaleIndex(mu)
    po = jones_ordinary(mu, x, 1.0, 5, index=index)
    pn = jones_normalized(mu, x, 1.0, 5, index=index)
    assert po.increments == pytest.approx(
        (0.037731469721082066, 0.053839480784531026, 0.006269203906820814, 0.005189745245053001,
         0.010195729373108267, 0.00497499679541108), rel=1e-9)
    assert pn.increments == pytest.approx(
        (0.05336035620785712, 0.06019826448477966, 0.003965506645739664, 0.0016623315257423138,
         0.001837302742056443, 0.0005020461881920096), rel=1e-9)


def test_truncation_trivial_cases():
    mu = random_measure(4)
    td = truncation_delta(mu, mu.points[0], 0.5, 0.5, 6)
    assert td.delta == 0.0 and td.explicit_sum == 0.0 and td.agree
    line = line_measure()
    td = truncation_delta(line, line.points[5], 1.0, 0.125, 6, "ordinary")
    assert abs(td.delta) <= 1e-20 and td.agree


def test_truncation_equals_intervening_levels():
    mu = random_measure(5)
    x = mu.points[7]
    td = truncation_delta(mu, x, 1.0, 0.25, 6)
    assert td.levels == (0, 1)
    p = jones_normalized(mu, x, 1.0, 6)
    want = math.fsum(t.value for t in p.per_level_terms if t.level in (0, 1))
    assert td.delta == pytest.approx(want, rel=1e-12)
    assert td.agree
    back = truncation_delta(mu, x, 0.25, 1.0, 6)
    assert back.delta == pytest.approx(-td.delta, rel=1e-12) and back.agree


@pytest.mark.parametrize("variant", ["ordinary", "normalized", "shifted"])
def test_truncation_variants_agree(variant):
    mu = random_measure(6, 30)
    td = truncation_delta(mu, mu.points[2], 1.0, 0.125, 5, variant, params=ShiftedGridParams(2, 4))
    assert td.agree


# --- shifted-grid beta enumeration oracle ------------------------------------------


def _fit_line(X, w):
    c = (w @ X) / w.sum()
    D = (X - c) * np.sqrt(w)[:, None]
    _, s, vt = np.linalg.svd(D, full_matrices=True)
    # every top right-singular direction (ties included) gives a best-fit line
    top = s[0] if s.size else 0.0
    k = int(np.sum(np.abs(s - top) <= 1e-10 * max(top, 1e-300))) if s.size else X.shape[1]
    return c, vt[:max(k, 1)]


def shifted_beta_by_geometry(mu, Q, j0, j1):
    """Scan all cubes of each grid at levels Q.level - j and keep those containing Q."""
    X, w = mu.points, mu.weights
    inQ = Q.contains(X)
    mq = w[inQ].sum()
    if mq == 0:
        return 0.0
    best = 0.0
    for conv in all_shifts(Q.dimension):
        for j in range(j0, j1 + 1):
            lev = Q.level - j
            side = 2.0**-lev
            base = np.floor((Q.lower - conv.shift_vector(2)) / side).astype(int)
            for off in itertools.product((-1, 0, 1), repeat=2):
                R = DyadicCube(lev, tuple(base + np.array(off)), conv)
                if not (np.all(R.lower <= Q.lower + 1e-15) and np.all(Q.upper <= R.upper + 1e-15)):
                    continue
                inR = R.contains(X)
                c, dirs = _fit_line(X[inR], w[inR])
                if dirs.shape[0] == 1:
                    candidates = [dirs[0]]
                else:
                    angles = np.linspace(0, np.pi, 3601)
                    candidates = [np.cos(a) * dirs[0] + np.sin(a) * dirs[1] for a in angles]
                for u in candidates:
                    d = X[inQ] - c
                    perp = d - np.outer(d @ u, u)
                    val = float(w[inQ] @ np.einsum("ij,ij->i", perp, perp)) / (mq * Q.diameter**2)
                    best = max(best, val)
    return math.sqrt(best)


def test_beta_hat_three_atoms_matches_enumeration():
    mu = DiscreteMeasure([[0.30, 0.30], [0.32, 0.36], [0.45, 0.28]], [1.0, 2.0, 1.5])
    params = ShiftedGridParams(2, 2)
    for level in (2, 3, 4):
        for conv in all_shifts(2):
            Q = cube_containing(mu.points[0], level, conv)[0]
            assert shifted_grid_beta(mu, Q, params) == pytest.approx(shifted_beta_by_geometry(mu, Q, 2, 2), rel=1e-9, abs=1e-12)


def test_beta_hat_random_against_enumeration():
    mu = random_measure(8, 20)
    params = ShiftedGridParams(2, 3)
    for i in range(5):
        for conv in all_shifts(2):
            Q = cube_containing(mu.points[i], 4, conv)[0]
            assert shifted_grid_beta(mu, Q, params) == pytest.approx(shifted_beta_by_geometry(mu, Q, 2, 3), rel=1e-9, abs=1e-12)


def test_beta_hat_family_size_for_equal_bounds():
    # with j0 = j1 one ancestor level is scanned; in each of the 4 grids at most one cube contains Q
    mu = random_measure(9, 10)
    Q = cube_containing(mu.points[0], 5)[0]
    found = 0
    for conv in all_shifts(2):
        side = 2.0**-3
        base = np.floor((Q.lower - conv.shift_vector(2)) / side).astype(int)
        R = DyadicCube(3, tuple(base), conv)
        found += bool(np.all(R.lower <= Q.lower) and np.all(Q.upper <= R.upper))
    assert 1 <= found <= 4


def test_shifted_profile_matches_direct_and_dominates_ancestor_term():
    mu = random_measure(10, 50)
    params = ShiftedGridParams(2, 3)
    x = mu.points[4]
    p = jones_shifted(mu, x, 1.0, 5, params)
    for lev in range(2, 6):
        Q = cube_containing(x, lev)[0]
        bh = shifted_grid_beta(mu, Q, params)
        term = next(t.value for t in p.per_level_terms if t.level == lev and t.cube == Q.ident())
        assert term == pytest.approx(bh**2, rel=1e-9, abs=1e-15)
        # R = the second ancestor in the unshifted grid is admissible
        R = ancestor(Q, 2)
        inR, inQ = R.contains(mu.points), Q.contains(mu.points)
        c, dirs = _fit_line(mu.points[inR], mu.weights[inR])
        d = mu.points[inQ] - c
        perp = d - np.outer(d @ dirs[0], dirs[0])
        val = float(mu.weights[inQ] @ np.einsum("ij,ij->i", perp, perp)) / (
            mu.weights[inQ].sum() * Q.diameter**2)
        assert bh**2 >= val - 1e-12


def test_shifted_rejects_periodic():
    mu = cascade_product(CascadeParams(0.1, 2))
    with pytest.raises(InputError):
        jones_shifted(mu, mu.points[0], 1.0, 3, ShiftedGridParams(2, 2))


def test_depth_window_errors():
    mu = random_measure(11)
    with pytest.raises(InputError):
        jones_ordinary(mu, mu.points[0], 0.25, 1)
    with pytest.raises(InputError):
        jones_profiles(mu, mu.points[:1], 1.0, 3, "bogus")


def test_shifted_grid_profile():
    mu = random_measure(12)
    conv = GridConvention("half_open", (THIRD, 0.0))
    p = jones_profiles(mu, mu.points[:1], 1.0, 4, "ordinary", shift=conv)[0]
    for t in p.per_level_terms:
        Q = cube_containing(mu.points[0], t.level, conv)[0]
        assert t.value == pytest.approx(beta2(mu, Q).value ** 2, rel=1e-10, abs=1e-300)
