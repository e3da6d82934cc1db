import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msalab.dynamics import (FrequencyMatrix, TorusPoint, continued_fraction_value, diophantine_frequency,
                             div_certificate, orbit, torus_distance, translate, usr_certificate, wrap)

GOLDEN = diophantine_frequency("golden")


def golden_oracle(R, A=1):
    """min_{1<=n<=R} n^A * ||n alpha|| / 4 in 50-digit arithmetic."""
    mpmath.mp.dps = 50
    alpha = (mpmath.sqrt(5) - 1) / 2
    best = None
    for n in range(1, R + 1):
        x = n * alpha
        frac = x - mpmath.floor(x)
        val = min(frac, 1 - frac) * mpmath.mpf(n) ** A
        if best is None or val < best:
            best = val
    return float(best / 4)


def test_translate_examples():
    assert translate([0.0], [1], FrequencyMatrix([[0.5]])).coords == (0.5,)
    assert translate([0.9], [1], FrequencyMatrix([[0.2]])).coords[0] == pytest.approx(0.1, abs=1e-15)
    two_alpha = translate([0.0], [2], GOLDEN).coords[0]
    mpmath.mp.dps = 40
    exact = float(2 * (mpmath.sqrt(5) - 1) / 2 - 1)
    assert abs(two_alpha - exact) < 1e-15


def test_translate_dimension_mismatch():
    with pytest.raises(ValueError):
        translate([0.0], [1, 2], GOLDEN)
    with pytest.raises(ValueError):
        translate([0.0], [0.5], GOLDEN)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1, exclude_max=True), st.integers(-1000, 1000), st.integers(-1000, 1000))
def test_translate_group_law(w, x, y):
    a = translate(translate([w], [x], GOLDEN), [y], GOLDEN).coords[0]
    b = translate([w], [x + y], GOLDEN).coords[0]
    assert torus_distance(a, b) <= 1e-12


def test_torus_point_reduced():
    assert TorusPoint((1.25, -0.25)).coords == (0.25, 0.75)
    assert wrap(np.array([1.0, -1e-20]))[0] == 0.0
    assert 0.0 <= wrap(np.array([-1e-20]))[0] < 1.0


def test_torus_distance_examples():
    assert torus_distance([0.1], [0.9]) == pytest.approx(0.2)
    assert torus_distance([0.1, 0.5], [0.2, 0.9]) == pytest.approx(0.4)
    assert torus_distance([0.3], [0.3]) == 0.0


unit = st.floats(0, 1, exclude_max=True)


@given(st.tuples(unit, unit), st.tuples(unit, unit), st.tuples(unit, unit))
def test_torus_distance_is_metric(a, b, c):
    dab, dba = torus_distance(a, b), torus_distance(b, a)
    assert dab == dba
    assert 0.0 <= dab <= 0.5
    assert (dab == 0) == (wrap(np.array(a)) == wrap(np.array(b))).all()
    assert torus_distance(a, c) <= dab + torus_distance(b, c) + 1e-15


def test_usr_golden_matches_oracle():
    cert = usr_certificate(GOLDEN, 1.0, 2000)
    assert cert.c_min == pytest.approx(golden_oracle(2000), rel=1e-12)
    # the minimum sits at n = 1, where n ||n alpha|| = 1 - alpha
    assert cert.argmin == (1,)
    assert 4 * cert.c_min == pytest.approx(1 - (math.sqrt(5) - 1) / 2, rel=1e-12)


def test_usr_tail_approaches_inverse_sqrt5():
    # restricted to large n the products n ||n alpha|| cluster at 1/sqrt5
    n = np.arange(1000, 100001)
    vals = n * torus_distance(orbit(np.zeros(1), n[:, None], GOLDEN), np.zeros(1))
    assert vals.min() == pytest.approx(1 / math.sqrt(5), abs=2e-3)


def test_usr_rational_fails():
    cert = usr_certificate(FrequencyMatrix([[0.5]]), 1.0, 10)
    assert cert.c_min == 0.0
    assert not cert.holds


@settings(max_examples=25, deadline=None)
@given(unit)
def test_usr_base_point_invariance(w):
    a = usr_certificate(GOLDEN, 1.0, 500)
    b = usr_certificate(GOLDEN, 1.0, 500, omega=[w])
    assert b.c_min == pytest.approx(a.c_min, rel=1e-9)


def test_usr_base_point_037():
    a = usr_certificate(GOLDEN, 1.0, 1000)
    b = usr_certificate(GOLDEN, 1.0, 1000, omega=TorusPoint((0.37,)))
    assert b.c_min == pytest.approx(a.c_min, rel=1e-12)


def test_usr_rejects_bad_input():
    with pytest.raises(ValueError):
        usr_certificate(GOLDEN, 0.0, 10)
    with pytest.raises(ValueError):
        usr_certificate(GOLDEN, 1.0, 0)


def test_usr_two_dimensional_lattice():
    fm = diophantine_frequency("golden", nu=1, d=2)
    cert = usr_certificate(fm, 2.0, 6)
    # brute force over the full cube of differences
    best = math.inf
    for a in range(-6, 7):
        for b in range(-6, 7):
            if a == 0 and b == 0:
                continue
            dist = torus_distance(translate([0.0], [a, b], fm), [0.0])
            best = min(best, dist * max(abs(a), abs(b)) ** 2)
    assert cert.c_min == pytest.approx(best / 4, rel=1e-12)


def test_div_certificate():
    cert = div_certificate(GOLDEN, 50, 1000, rng_seed=1)
    assert cert.accepted
    assert cert.A_prime == 0.0 and cert.C_prime == 1.0
    assert abs(cert.max_ratio - 1.0) <= 1e-12
    zero = div_certificate(GOLDEN, 0, 50)
    assert zero.max_ratio == 1.0


def test_diophantine_frequencies():
    assert GOLDEN.vectors[0, 0] == 0.6180339887498949
    silver = diophantine_frequency("silver")
    assert silver.vectors[0, 0] == pytest.approx(math.sqrt(2) - 1, abs=1e-16)
    two = diophantine_frequency("golden", nu=2)
    assert two.nu == 2 and two.d == 1
    assert usr_certificate(two, 2.0, 200).holds
    with pytest.raises(ValueError):
        diophantine_frequency("bronze")


def test_continued_fraction():
    assert continued_fraction_value([1]) == pytest.approx((math.sqrt(5) - 1) / 2, abs=1e-15)
    assert continued_fraction_value([2]) == pytest.approx(math.sqrt(2) - 1, abs=1e-15)
    cf = diophantine_frequency("custom", quotients=[1, 2])
    assert cf.vectors[0, 0] == pytest.approx(math.sqrt(3) - 1, abs=1e-15)


def test_frequency_strings_round_trip():
    fm = diophantine_frequency("golden", nu=2, d=2)
    back = FrequencyMatrix.from_strings(fm.to_strings())
    assert np.array_equal(back.vectors, fm.vectors)


def test_orbit_matches_translate():
    sites = np.arange(-5, 6)[:, None]
    pts = orbit(np.array([0.3]), sites, GOLDEN)
    for s, p in zip(sites, pts):
        assert p[0] == translate([0.3], s, GOLDEN).coords[0]
