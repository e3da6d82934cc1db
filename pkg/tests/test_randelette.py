import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from msalab.dynamics import diophantine_frequency, orbit
from msalab.lattice import Cube
from msalab.randelette import (RandeletteEnsemble, ThetaSample, hull_eval, hull_eval_batch, hull_gradient,
                               hull_gradient_batch,
                               lvb_experiment, make_ensemble, make_mother, overlap_count, phi_c1_eval,
                               plateau_index, randelette_eval, separation_generation,
                               support_separation_check, theta_values)

_t = sp.Symbol("t", real=True)
_phi = sp.Piecewise((0, _t < 0), (_t ** 2 / 2, _t < 1), (1 - (_t - 2) ** 2 / 2, _t < 2), (1, True))
_Phi = _phi * _phi.subs(_t, 12 - _t)


def phi_sym(x):
    return float(_phi.subs(_t, sp.Rational(str(x))))


def Phi_sym(x):
    return float(_Phi.subs(_t, sp.Rational(str(x))))


def cox_de_boor(knots, p, x):
    """Single B-spline of degree p on the given knots, by the recursion."""
    if p == 0:
        return 1.0 if knots[0] <= x < knots[1] else 0.0
    left = right = 0.0
    if knots[p] > knots[0]:
        left = (x - knots[0]) / (knots[p] - knots[0]) * cox_de_boor(knots[:-1], p - 1, x)
    if knots[p + 1] > knots[1]:
        right = (knots[p + 1] - x) / (knots[p + 1] - knots[1]) * cox_de_boor(knots[1:], p - 1, x)
    return left + right


@pytest.mark.parametrize("x", [-0.5, 0.0, 0.25, 0.5, 1.0, 1.5, 1.99, 2.0, 7.0])
def test_phi_matches_symbolic(x):
    assert phi_c1_eval(x) == pytest.approx(phi_sym(x), abs=1e-15)


def test_phi_examples():
    assert phi_c1_eval(0.0) == 0.0
    assert phi_c1_eval(1.0) == 0.5
    assert phi_c1_eval(0.5) == 0.125


def test_mother_m1_examples():
    Phi = make_mother(1)
    assert Phi(6.0) == 1.0
    assert Phi(-1.0) == 0.0 and Phi(13.0) == 0.0
    assert Phi(1.0) == 0.5
    assert Phi.plateau == (2.0, 10.0)
    assert Phi.support_length == 12.0


@pytest.mark.parametrize("x", [0.05, 0.3, 0.8, 1.2, 1.7, 2.0, 5.5, 10.0, 10.4, 11.1, 11.9])
def test_mother_m1_matches_symbolic(x):
    assert make_mother(1)(x) == pytest.approx(Phi_sym(x), abs=1e-14)


@pytest.mark.parametrize("M", [2, 3, 4])
def test_mother_bspline_oracle(M):
    Phi = make_mother(M)
    w = Phi.width
    knots = list(np.linspace(0.0, w, M + 2))
    scale = (M + 1) / w  # unit-integral normalisation
    for x in [0.1, 0.7, 1.3, 2.2, 2.9]:
        deriv = scale * cox_de_boor(knots, M, x)
        assert Phi(x, 1) == pytest.approx(deriv, abs=1e-12)
        integral = quad(lambda s: scale * cox_de_boor(knots, M, s), 0.0, x, points=knots[1:-1])[0]
        assert Phi(x) == pytest.approx(integral, abs=1e-10)
        assert Phi(12.0 - x) == pytest.approx(integral, abs=1e-10)


@pytest.mark.parametrize("M", [1, 2, 3, 4])
def test_mother_invariants(M):
    Phi = make_mother(M)
    lo, hi = Phi.plateau
    assert lo < hi
    assert hi - lo >= 6.0  # plateau covers at least the middle half
    t = np.linspace(lo, hi, 1001)
    assert np.all(Phi(t) == 1.0)
    assert np.all(Phi(np.array([-3.0, 0.0, 12.0, 15.0])) == 0.0)
    s = np.linspace(0, 12, 5001)
    assert np.all((Phi(s) >= 0) & (Phi(s) <= 1))


@pytest.mark.parametrize("M", [1, 2, 3])
def test_mother_smoothness_finite_differences(M):
    """Derivatives up to order M agree with finite differences; order M+1 stays bounded."""
    Phi = make_mother(M)
    h = 1e-4
    pts = np.concatenate([Phi.breakpoints, 12.0 - Phi.breakpoints])
    pts = pts[(pts > 0) & (pts < 12)]
    pts = np.concatenate([pts, [0.37, 1.41, 2.5]])
    for order in range(1, M + 1):
        lower = Phi if order == 1 else (lambda x, o=order: Phi(x, o - 1))
        fd = (lower(pts + h) - lower(pts - h)) / (2 * h)
        exact = Phi(pts, order)
        # central differences err by at most h * sup|next derivative| across a kink
        tol = h * Phi.derivative_sup(order + 1) + 1e-6
        assert np.max(np.abs(fd - exact)) <= tol
    top = (Phi(pts + h, M) - Phi(pts - h, M)) / (2 * h)
    assert np.all(np.isfinite(top))
    assert np.max(np.abs(top)) <= 2 * Phi.derivative_sup(M + 1) + 1e-6


def test_ensemble_requires_convergent_decay():
    with pytest.raises(ValueError):
        make_ensemble(1, c=0.5)
    with pytest.raises(ValueError):
        make_ensemble(3, c=2.0)
    ens = make_ensemble(2)
    assert ens.c == pytest.approx(3 * math.log(2) + 0.5)


def test_amplitudes_decrease():
    ens = make_ensemble(1)
    a = ens.amplitude(np.arange(41))
    assert np.all(np.diff(a) < 0)
    assert a[0] == 1.0


def test_randelette_eval_examples():
    ens = make_ensemble(1, N_max=12)
    # generation 4 has copies Phi(16 t - 4j), j = 0..3
    assert randelette_eval(ens, 4, 1, [0.05]) == pytest.approx(Phi_sym(0.8), abs=1e-15)
    assert randelette_eval(ens, 4, 1, [0.3]) == 1.0  # tau = 4.8 on the plateau
    assert randelette_eval(ens, 4, 1, [0.8]) == 0.0  # tau = 12.8 outside
    assert randelette_eval(ens, 4, 4, [0.05]) == pytest.approx(Phi_sym(12.8 - 12.0 + 12.0 - 12.0 + 4.8), abs=1e-14)
    assert randelette_eval(ens, 0, 1, [0.123]) == 1.0
    with pytest.raises(IndexError):
        randelette_eval(ens, 4, 5, [0.1])
    with pytest.raises(IndexError):
        randelette_eval(ens, 13, 1, [0.1])


def test_randelette_wraps_around_circle():
    ens = make_ensemble(1, N_max=8)
    # copy j = K-1 of generation 5 starts at 4*7/32 = 0.875 and wraps past 0
    t = 0.01
    expected = Phi_sym((t + 1 - 0.875) * 32)
    assert randelette_eval(ens, 5, 8, [t]) == pytest.approx(expected, abs=1e-13)


def test_tensor_product_nu2():
    ens = make_ensemble(1, N_max=8, nu=2)
    assert ens.K(5) == 64 and ens.K_prime == 9
    w = np.array([0.11, 0.63])
    k = 3 * 8 + 6  # (j0, j1) = (3, 5)
    a = randelette_eval(make_ensemble(1, N_max=8), 5, 4, [w[0]])
    b = randelette_eval(make_ensemble(1, N_max=8), 5, 6, [w[1]])
    assert randelette_eval(ens, 5, k, w) == pytest.approx(a * b, abs=1e-15)


def test_coverage_and_overlap_grid():
    ens = make_ensemble(1, N_max=14)
    grid = (np.arange(10_000) / 10_000)[:, None]
    for n in range(ens.N_max + 1):
        counts = overlap_count(ens, n, grid)
        assert counts.max() <= 3 and counts.min() >= 1
        one = np.zeros(grid.shape[0], dtype=bool)
        for k in range(1, ens.K(n) + 1):
            one |= randelette_eval(ens, n, k, grid) == 1.0
        assert one.all()


def test_overlap_nu2_bounded():
    ens = make_ensemble(1, N_max=8, nu=2)
    pts = np.random.default_rng(0).random((2000, 2))
    assert overlap_count(ens, 6, pts).max() <= 9


def test_plateau_index_is_one():
    ens = make_ensemble(1, N_max=20)
    for t in np.random.default_rng(1).random(200):
        for n in (4, 9, 17):
            assert randelette_eval(ens, n, plateau_index(ens, n, [t]), [t]) == 1.0


def test_theta_determinism_and_range():
    a = theta_values(7, 5, np.arange(1, 1000))
    b = theta_values(7, 5, np.arange(1, 1000))
    assert np.array_equal(a, b)
    assert a.min() >= 0 and a.max() < 1
    assert not np.array_equal(a, theta_values(8, 5, np.arange(1, 1000)))
    # roughly uniform
    assert abs(a.mean() - 0.5) < 0.05
    th = ThetaSample(3).with_override(4, 2, 0.25)
    assert th(4, 2) == 0.25 and th(4, 3) == ThetaSample(3)(4, 3)
    with pytest.raises(ValueError):
        ThetaSample(0, overrides={(1, 1): 1.5})


def test_hull_zero_coefficients():
    ens = make_ensemble(1, N_max=20)
    th = ThetaSample(constant=0.0)
    assert hull_eval(ens, th, [0.3]) == 0.0
    assert np.all(hull_gradient(ens, th, [[0.3], [0.7]]) == 0.0)


def test_hull_single_plateau_term():
    ens = make_ensemble(1, N_max=20)
    w = 0.4321
    k = plateau_index(ens, 9, [w])
    th = ThetaSample(constant=0.0).with_override(9, k, 1.0)
    assert hull_eval(ens, th, [w]) == pytest.approx(math.exp(-9 * ens.c), rel=1e-15)


def test_hull_tail_bound():
    short = make_ensemble(1, N_max=20)
    long = make_ensemble(1, N_max=40)
    rng = np.random.default_rng(5)
    pts = rng.random((100, 1))
    for i, p in enumerate(pts):
        th = ThetaSample(int(rng.integers(1 << 30)))
        diff = abs(hull_eval(short, th, p) - hull_eval(long, th, p))
        assert diff <= short.tail_bound()


def test_hull_batch_is_bitwise_equal():
    ens = make_ensemble(1, N_max=30)
    pts = np.random.default_rng(2).random((50, 1))
    seeds = np.arange(50) + 100
    batch = hull_eval_batch(ens, seeds, pts)
    single = np.array([hull_eval(ens, ThetaSample(int(s)), p) for s, p in zip(seeds, pts)])
    assert np.array_equal(batch, single)


def test_hull_gradient_batch_matches_single():
    ens = make_ensemble(1, N_max=30, nu=2)
    pts = np.random.default_rng(8).random((40, 2))
    seeds = np.arange(40) * 7
    batch = hull_gradient_batch(ens, seeds, pts)
    single = np.array([hull_gradient(ens, ThetaSample(int(s)), p) for s, p in zip(seeds, pts)])
    assert np.array_equal(batch, single)
    with pytest.raises(ValueError):
        hull_gradient_batch(ens, seeds[:3], pts)


@pytest.mark.parametrize("nu", [1, 2])
def test_gradient_against_finite_differences(nu):
    ens = make_ensemble(1, N_max=18, nu=nu)
    rng = np.random.default_rng(11)
    th = ThetaSample(4)
    h = 1e-6
    worst = 0.0
    for p in rng.random((100, nu)):
        g = hull_gradient(ens, th, p)
        for i in range(nu):
            e = np.zeros(nu)
            e[i] = h
            fd = (hull_eval(ens, th, p + e) - hull_eval(ens, th, p - e)) / (2 * h)
            worst = max(worst, abs(fd - g[i]) / max(abs(g[i]), 1e-3 * np.max(np.abs(g)) + 1e-12))
    assert worst < 1e-5


def test_gradient_uniform_bound():
    ens = make_ensemble(1, N_max=30)
    rng = np.random.default_rng(3)
    bound = ens.gradient_bound()
    for s in range(20):
        g = hull_gradient(ens, ThetaSample(s), rng.random((200, 1)))
        assert np.max(np.abs(g)) <= bound


def test_separation_generation_examples():
    s = separation_generation(2, 1.0, 1.0)
    assert s.N_raw == pytest.approx(7.0) and s.N_min == 8
    s = separation_generation(4, 2.0, 1.0)
    assert s.N_raw == pytest.approx(11.0) and s.N_min == 12
    assert separation_generation(8, 1.0, 2.0).N_raw < separation_generation(8, 1.0, 1.0).N_raw
    with pytest.raises(ValueError):
        separation_generation(1, 1.0, 1.0)


@given(st.integers(2, 10_000), st.floats(0.1, 4.0), st.floats(1e-4, 10.0))
def test_separation_generation_monotone_in_L(L, A, C):
    assert separation_generation(L + 1, A, C).N_min >= separation_generation(L, A, C).N_min >= 1


def test_support_separation():
    ens = make_ensemble(1, N_max=40)
    fm = diophantine_frequency("golden")
    cube = Cube((0,), 8)
    N = separation_generation(8, 1.0, 0.25 * (1 - fm.vectors[0, 0])).N_min
    assert support_separation_check(ens, fm, cube, [0.2], N)
    assert not support_separation_check(ens, fm, cube, [0.2], 0)
    assert support_separation_check(ens, fm, Cube((0,), 0), [0.2], 0)


def test_lvb_experiment_sites():
    ens = make_ensemble(1, N_max=40)
    fm = diophantine_frequency("golden")
    cube = Cube((0,), 8)
    for x in (-8, 0, 5):
        rep = lvb_experiment(ens, fm, cube, [x], [0.77], trials=4, rng_seed=x + 10)
        assert rep.frozen_ok
        assert abs(rep.slope - rep.amplitude) < 1e-10
        assert rep.slope_error / rep.amplitude < 1e-4
        assert rep.density_bound == pytest.approx(math.exp(ens.c * rep.generation), rel=1e-4)
