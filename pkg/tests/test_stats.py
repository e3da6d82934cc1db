import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from msalab.stats import (ExperimentConfig, decay_rate_estimate, fit_loglog, g_halving_check,
                          localization_probability, minami_counts, minami_scan, paired_sign_test, proportion,
                          sample_potentials, sample_spectra, spacing_histogram, tunneling_probability,
                          wegner_counts, wegner_scan, wilson_interval)


def _wilson_formula(k, n, z=1.959963984540054):
    p = k / n
    centre = (p + z * z / (2 * n)) / (1 + z * z / n)
    half = z / (1 + z * z / n) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return centre - half, centre + half


@given(st.integers(1, 5000), st.data())
def test_wilson_matches_closed_form(n, data):
    k = data.draw(st.integers(0, n))
    lo, hi = wilson_interval(k, n)
    rlo, rhi = _wilson_formula(k, n)
    assert lo == pytest.approx(rlo, abs=1e-9) and hi == pytest.approx(rhi, abs=1e-9)
    assert 0 <= lo <= k / n <= hi <= 1


def test_proportion_fields():
    p = proportion(3, 10)
    assert p.count == 3 and p.n == 10 and p.p == 0.3 and p.ci_lo < 0.3 < p.ci_hi


def test_fit_loglog_exact_power_law():
    x = np.logspace(-3, -1, 5)
    n = 10**9
    counts = np.round(n * 0.7 * x**2).astype(int)
    fit = fit_loglog(x, counts, n)
    assert fit.slope == pytest.approx(2.0, abs=1e-6)
    assert fit.used == 5 and fit.slope_ci[0] <= fit.slope <= fit.slope_ci[1]


def test_fit_loglog_drops_sparse_points():
    fit = fit_loglog([0.0, 0.01, 0.1, 1.0], [0, 4, 40, 400], 1000)
    assert fit.used == 2 and fit.slope == pytest.approx(1.0)
    assert not fit_loglog([0.1, 1.0], [1, 2], 100).fitted


def test_halving_check_synthetic():
    low = fit_loglog([0.01, 0.1], [1000, 10000], 100_000)
    half = fit_loglog([0.01, 0.1], [500, 5000], 100_000)
    same = fit_loglog([0.01, 0.1], [1000, 10000], 100_000)
    assert g_halving_check(low, half).passed
    assert not g_halving_check(low, same).passed


def test_sign_test():
    assert paired_sign_test([0, 0, 0, 0, 0], [1, 1, 1, 1, 1]) == (5, 5, 0.03125)
    wins, n, p = paired_sign_test([1, 2, 3], [1, 1, 4])
    assert (wins, n) == (1, 2) and p == 0.75


def test_decay_rate_synthetic():
    x = np.arange(41)
    v = np.exp(-0.8 * np.abs(x - 17))[:, None]
    assert decay_rate_estimate(v / np.linalg.norm(v)) == pytest.approx(0.8, rel=1e-9)


def test_sampling_deterministic_across_threads():
    base = dict(L=4, samples=2 * 2048 + 77, seed_base=13)
    a = sample_spectra(ExperimentConfig.default(threads=1, **base), 20.0)
    b = sample_spectra(ExperimentConfig.default(threads=4, **base), 20.0)
    assert a.tobytes() == b.tobytes()
    # sample i depends only on seed_base + i
    c = sample_potentials(ExperimentConfig.default(L=4, samples=10, seed_base=20))
    d = sample_potentials(ExperimentConfig.default(L=4, samples=3, seed_base=27))
    assert np.array_equal(c[7:], d)


def test_wegner_zero_width_and_monotone():
    cfg = ExperimentConfig.default(L=4, samples=500, grid=(0.0, 0.01, 0.1, 1.0), E=0.3)
    spec = sample_spectra(cfg, 20.0)
    counts = wegner_counts(spec, cfg.E, cfg.grid)
    assert counts[0] == 0 and np.all(np.diff(counts) >= 0)
    fit = wegner_scan(cfg, spectra=spec)
    assert all(0 <= p.p <= 1 for p in fit.points)


def test_minami_counts_basics():
    spec = np.array([[0.0, 0.1, 0.5], [0.0, 0.3, 0.31]])
    assert minami_counts(spec, 0.3, [0.0, 0.03, 0.3, 10.0], 2).tolist() == [0, 1, 1, 2]
    assert minami_counts(spec, 0.05, [0.1], 1).tolist() == [2]


def test_minami_single_eigenvalue_is_linear():
    cfg = ExperimentConfig.default(L=8, samples=4000, grid=tuple(np.logspace(-2.5, -1, 5)), E=10.0, J=1)
    fit = minami_scan(cfg, g=20.0)
    assert abs(fit.slope - 1.0) < 0.2


def test_spacing_histogram():
    cfg = ExperimentConfig.default(L=8, samples=1000)
    rep = spacing_histogram(sample_spectra(cfg, 20.0))
    assert rep.degenerate_fraction == 0.0
    assert rep.mass.sum() == pytest.approx(1.0)
    free = spacing_histogram(sample_spectra(ExperimentConfig.default(L=8, samples=50), 0.0))
    assert np.ptp(free.min_spacings) == 0.0


def test_free_laplacian_event_frequencies():
    cfg = ExperimentConfig.default(samples=4)
    p, flags = tunneling_probability(cfg, 6, 0.0, k=1)
    assert p.p == 1.0 and flags.all()
    p, _ = localization_probability(cfg, 6, 0.0, k=1, m=0.5)
    assert p.p == 1.0 and 0 <= p.ci_lo <= p.ci_hi <= 1


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig.default(samples=0)
    with pytest.raises(ValueError):
        ExperimentConfig.default(g=(-1.0,))
