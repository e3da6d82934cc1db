"""Monte Carlo harness for eigenvalue statistics and localization frequencies.

Sample i of an experiment uses omega drawn from ``default_rng(seed_base + i)``
and coefficients ThetaSample(seed_base + i).  Samples are processed in
fixed-size chunks, so results are identical for any number of worker threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy import stats as sps

from .dynamics import FrequencyMatrix, diophantine_frequency, orbit
from .lattice import Cube, ScaleSchedule
from .msa import ClassificationConfig, MsaState, is_localized, is_tunneling
from .operator import hopping_matrix
from .randelette import RandeletteEnsemble, ThetaSample, hull_eval_batch, make_ensemble

__all__ = [
    "ExperimentConfig",
    "Proportion",
    "ScalingFit",
    "wilson_interval",
    "proportion",
    "fit_loglog",
    "sample_omegas",
    "sample_potentials",
    "sample_spectra",
    "wegner_counts",
    "wegner_scan",
    "g_halving_check",
    "minami_counts",
    "minami_scan",
    "SpacingReport",
    "spacing_histogram",
    "tunneling_probability",
    "localization_probability",
    "decay_rate_estimate",
    "paired_sign_test",
]

CHUNK = 2048


@dataclass(frozen=True)
class ExperimentConfig:
    """Parameters shared by the Monte Carlo experiments.

    ``grid`` holds the s values (Wegner) or interval lengths |I| (Minami);
    ``E`` is the reference energy or the interval center.
    """

    ens: RandeletteEnsemble
    freqs: FrequencyMatrix
    L: int = 8
    g: tuple = (20.0,)
    samples: int = 10_000
    seed_base: int = 0
    E: float = 0.0
    grid: tuple = ()
    J: int = 2
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "g", tuple(float(v) for v in np.atleast_1d(self.g)))
        object.__setattr__(self, "grid", tuple(float(v) for v in self.grid))
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if any(v < 0 for v in self.g):
            raise ValueError("couplings must be >= 0")
        if any(v < 0 for v in self.grid):
            raise ValueError("grid values must be >= 0")
        if self.freqs.nu != self.ens.nu:
            raise ValueError("frequency and ensemble phase dimensions differ")

    @property
    def d(self) -> int:
        return self.freqs.d

    @property
    def nu(self) -> int:
        return self.freqs.nu

    @classmethod
    def default(cls, **kw) -> "ExperimentConfig":
        kw.setdefault("ens", make_ensemble(1))
        kw.setdefault("freqs", diophantine_frequency("golden"))
        return cls(**kw)


@dataclass(frozen=True)
class Proportion:
    count: int
    n: int
    p: float
    ci_lo: float
    ci_hi: float


def wilson_interval(count: int, n: int, level: float = 0.95) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    ci = sps.binomtest(int(count), int(n)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def proportion(count: int, n: int) -> Proportion:
    lo, hi = wilson_interval(count, n)
    return Proportion(int(count), int(n), count / n if n else math.nan, lo, hi)


@dataclass(frozen=True)
class ScalingFit:
    """Empirical probabilities over a grid and a log-log least-squares fit."""

    x: tuple
    points: tuple
    slope: float
    intercept: float
    slope_ci: tuple
    used: int

    @property
    def fitted(self) -> bool:
        return self.used >= 2 and math.isfinite(self.slope)

    def rows(self):
        for x, pt in zip(self.x, self.points):
            yield x, pt.count, pt.n, pt.p, pt.ci_lo, pt.ci_hi


def fit_loglog(x, counts, n: int, min_count: int = 5) -> ScalingFit:
    """Fit log p = slope log x + b over grid points with at least ``min_count`` hits."""
    x = np.asarray(x, dtype=float)
    counts = np.asarray(counts, dtype=np.int64)
    pts = tuple(proportion(int(c), n) for c in counts)
    use = (counts >= min_count) & (x > 0)
    if use.sum() < 2:
        return ScalingFit(tuple(x.tolist()), pts, math.nan, math.nan, (math.nan, math.nan), int(use.sum()))
    lx, ly = np.log(x[use]), np.log(counts[use] / n)
    if use.sum() == 2:
        slope = (ly[1] - ly[0]) / (lx[1] - lx[0])
        return ScalingFit(tuple(x.tolist()), pts, float(slope), float(ly[0] - slope * lx[0]),
                          (math.nan, math.nan), 2)
    res = sps.linregress(lx, ly)
    t = sps.t.ppf(0.975, use.sum() - 2)
    ci = (res.slope - t * res.stderr, res.slope + t * res.stderr)
    return ScalingFit(tuple(x.tolist()), pts, float(res.slope), float(res.intercept),
                      (float(ci[0]), float(ci[1])), int(use.sum()))


# ---------------------------------------------------------------------------
# sampling


def sample_omegas(seed_base: int, start: int, stop: int, nu: int) -> np.ndarray:
    return np.array([np.random.default_rng(seed_base + i).random(nu) for i in range(start, stop)])


def _potential_chunk(ens, freqs, sites, seed_base, start, stop):
    om = sample_omegas(seed_base, start, stop, freqs.nu)
    pts = orbit(om, sites, freqs)  # (n, sites, nu)
    seeds = np.repeat(np.arange(start, stop, dtype=np.int64) + seed_base, sites.shape[0])
    return hull_eval_batch(ens, seeds, pts.reshape(-1, freqs.nu)).reshape(stop - start, sites.shape[0])


def _chunks(n: int):
    return [(a, min(a + CHUNK, n)) for a in range(0, n, CHUNK)]


def sample_potentials(cfg: ExperimentConfig, cube: Cube | None = None) -> np.ndarray:
    """Hull values v(T^x omega_i, theta_i), shape (samples, sites)."""
    cube = cube or Cube((0,) * cfg.d, cfg.L)
    sites = cube.sites()
    parts = Parallel(n_jobs=cfg.threads, prefer="threads")(
        delayed(_potential_chunk)(cfg.ens, cfg.freqs, sites, cfg.seed_base, a, b) for a, b in _chunks(cfg.samples))
    return np.concatenate(parts, axis=0)


def _eig_chunk(A, v, g):
    H = np.broadcast_to(A, (v.shape[0],) + A.shape).copy()
    idx = np.arange(A.shape[0])
    H[:, idx, idx] = g * v
    return np.linalg.eigvalsh(H)


def sample_spectra(cfg: ExperimentConfig, g: float, potentials: np.ndarray | None = None) -> np.ndarray:
    """Sorted eigenvalues of H on the radius-L cube for every sample, shape (samples, sites)."""
    cube = Cube((0,) * cfg.d, cfg.L)
    v = sample_potentials(cfg, cube) if potentials is None else potentials
    A = hopping_matrix(cube)
    parts = Parallel(n_jobs=cfg.threads, prefer="threads")(
        delayed(_eig_chunk)(A, v[a:b], g) for a, b in _chunks(v.shape[0]))
    return np.concatenate(parts, axis=0)


# ---------------------------------------------------------------------------
# Wegner and Minami


def wegner_counts(spectra: np.ndarray, E: float, grid) -> np.ndarray:
    """Number of samples with dist(spectrum, E) <= s, for each s."""
    dist = np.min(np.abs(spectra - E), axis=1)
    return np.array([int(np.sum(dist <= s)) if s > 0 else int(np.sum(dist == 0)) for s in grid])


def wegner_scan(cfg: ExperimentConfig, g: float | None = None, spectra=None) -> ScalingFit:
    """P{dist(spectrum, E) <= s} over the s-grid with a log-log slope."""
    g = cfg.g[0] if g is None else g
    spectra = sample_spectra(cfg, g) if spectra is None else spectra
    return fit_loglog(cfg.grid, wegner_counts(spectra, cfg.E, cfg.grid), spectra.shape[0])


@dataclass(frozen=True)
class HalvingCheck:
    ratios: tuple
    tolerance: tuple
    passed: bool
    used: int


def g_halving_check(fit_low: ScalingFit, fit_high: ScalingFit, min_count: int = 5) -> HalvingCheck:
    """P(2g) / P(g) <= 0.5 (1 + 3 CI) at every grid point with enough counts.

    CI is the delta-method relative standard error of the ratio.
    """
    ratios, tols, ok, used = [], [], True, 0
    for a, b in zip(fit_low.points, fit_high.points):
        if a.count < min_count or b.count < min_count:
            continue
        used += 1
        r = b.p / a.p
        rel = math.sqrt((1 - a.p) / (a.n * a.p) + (1 - b.p) / (b.n * b.p))
        tol = 0.5 * (1 + 3 * rel)
        ratios.append(r)
        tols.append(tol)
        ok &= r <= tol
    return HalvingCheck(tuple(ratios), tuple(tols), bool(ok and used > 0), used)


def minami_counts(spectra: np.ndarray, E: float, grid, J: int) -> np.ndarray:
    """Number of samples with at least J eigenvalues in [E - l/2, E + l/2], for each l."""
    out = []
    for ell in grid:
        inside = np.sum(np.abs(spectra - E) <= ell / 2.0, axis=1) if ell > 0 else np.zeros(spectra.shape[0])
        out.append(int(np.sum(inside >= J)))
    return np.array(out)


def minami_scan(cfg: ExperimentConfig, J: int | None = None, g: float | None = None, spectra=None) -> ScalingFit:
    """P{tr 1_I(H) >= J} over the |I|-grid with a log-log slope."""
    J = cfg.J if J is None else J
    g = cfg.g[0] if g is None else g
    spectra = sample_spectra(cfg, g) if spectra is None else spectra
    return fit_loglog(cfg.grid, minami_counts(spectra, cfg.E, cfg.grid, J), spectra.shape[0])


@dataclass(frozen=True)
class SpacingReport:
    edges: np.ndarray = field(repr=False)
    mass: np.ndarray = field(repr=False)
    min_spacings: np.ndarray = field(repr=False)
    degenerate_fraction: float


def spacing_histogram(spectra: np.ndarray, bins: int = 50, tol: float = 1e-12) -> SpacingReport:
    """Distribution of the minimal eigenvalue spacing per sample."""
    sp = np.min(np.diff(spectra, axis=1), axis=1)
    scale = np.maximum(1.0, np.max(np.abs(spectra), axis=1))
    degenerate = float(np.mean(sp <= tol * scale))
    counts, edges = np.histogram(sp, bins=bins)
    return SpacingReport(edges, counts / max(1, sp.size), sp, degenerate)


# ---------------------------------------------------------------------------
# MSA event frequencies


def _state(cfg: ExperimentConfig, i: int, g: float) -> MsaState:
    om = np.random.default_rng(cfg.seed_base + i).random(cfg.nu)
    return MsaState.from_hull(cfg.ens, ThetaSample(cfg.seed_base + i), cfg.freqs, om, g)


def _tunnel_one(cfg, i, g, config, host):
    return is_tunneling(host, config, _state(cfg, i, g))[0]


def tunneling_probability(cfg: ExperimentConfig, L0: int, g: float, k: int = 1, m: float = 1.0):
    """Frequency of tunneling radius-L_k cubes; returns (Proportion, per-sample flags)."""
    config = ClassificationConfig(ScaleSchedule(L0, g, cfg.nu), m, k)
    host = Cube((0,) * cfg.d, config.L)
    flags = Parallel(n_jobs=cfg.threads, prefer="threads")(
        delayed(_tunnel_one)(cfg, i, g, config, host) for i in range(cfg.samples))
    flags = np.array(flags, dtype=bool)
    return proportion(int(flags.sum()), flags.size), flags


def _loc_one(cfg, i, g, config, host):
    st = _state(cfg, i, g)
    return is_localized(st.spectrum(host), host, config)[0]


def localization_probability(cfg: ExperimentConfig, L0: int, g: float, k: int = 0, m: float = 1.0):
    """Frequency of non-localized radius-L_k cubes; returns (Proportion, per-sample flags)."""
    config = ClassificationConfig(ScaleSchedule(L0, g, cfg.nu), m, k)
    host = Cube((0,) * cfg.d, config.L)
    loc = Parallel(n_jobs=cfg.threads, prefer="threads")(
        delayed(_loc_one)(cfg, i, g, config, host) for i in range(cfg.samples))
    bad = ~np.array(loc, dtype=bool)
    return proportion(int(bad.sum()), bad.size), bad


def decay_rate_estimate(eigenvectors: np.ndarray, floor: float = 1e-10) -> float:
    """Mean fitted exponential decay rate of |psi_j| away from its peak (d = 1).

    For each eigenvector the slope of log|psi(x)| against |x - x_peak| is
    fitted over entries above ``floor``; the estimate is minus the mean slope.
    """
    N = eigenvectors.shape[0]
    pos = np.arange(N)
    rates = []
    for j in range(eigenvectors.shape[1]):
        a = np.abs(eigenvectors[:, j])
        dist = np.abs(pos - int(np.argmax(a)))
        ok = (a > floor) & (dist > 0)
        if ok.sum() >= 2 and np.ptp(dist[ok]) > 0:
            rates.append(-np.polyfit(dist[ok], np.log(a[ok]), 1)[0])
    return float(np.mean(rates)) if rates else math.nan


def paired_sign_test(a, b) -> tuple[int, int, float]:
    """One-sided sign test of b > a on paired values; ties dropped.

    Returns (wins, informative pairs, p-value).
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    diff = b - a
    wins = int(np.sum(diff > 0))
    n = int(np.sum(diff != 0))
    p = float(sps.binomtest(wins, n, 0.5, alternative="greater").pvalue) if n else 1.0
    return wins, n, p
