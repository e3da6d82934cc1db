"""Randelette expansions: the hull v(omega, theta) of the grand ensemble.

    v(omega, theta) = sum_n a_n sum_k theta_{n,k} phi_{n,k}(omega),  a_n = exp(-c n)

Each generation n >= 4 consists of K_n = (2**n / 4)**nu copies of the
mother bump Phi, scaled by 2**n and shifted by 4 * 2**-n along every
coordinate:

    phi_{n,k}(t) = Phi(2**n t - 4 j)   on the circle, j = 0 .. 2**n/4 - 1.

With supp Phi = [0, 12] and a plateau of length >= 6 this gives supports of
length 12 * 2**-n, plateaus covering the circle, and at most three
overlapping supports per coordinate.  Generations 0..3 (whose scaled
support would not fit on the circle) are a single constant function 1.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import BSpline, PPoly

from .dynamics import FrequencyMatrix, TorusPoint, orbit, usr_certificate, wrap

__all__ = [
    "phi_c1_eval",
    "MotherFunction",
    "make_mother",
    "ThetaSample",
    "theta_values",
    "RandeletteEnsemble",
    "make_ensemble",
    "randelette_eval",
    "hull_eval",
    "hull_eval_batch",
    "hull_gradient",
    "hull_gradient_batch",
    "overlap_count",
    "plateau_index",
    "SeparationGeneration",
    "separation_generation",
    "support_separation_check",
    "LvbReport",
    "lvb_experiment",
]

SUPPORT = 12.0
STEP = 4.0
LN2 = math.log(2.0)


def phi_c1_eval(t):
    """The C^1 ramp t^2/2 on [0,1), 1-(t-2)^2/2 on [1,2), 1 beyond, 0 below."""
    t = np.asarray(t, dtype=float)
    out = np.where(t < 1.0, 0.5 * t * t, 1.0 - 0.5 * (t - 2.0) ** 2)
    out = np.where(t >= 2.0, 1.0, out)
    out = np.where(t < 0.0, 0.0, out)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class MotherFunction:
    """Bump Phi on [0, 12]: a C^M ramp of width w, plateau [w, 12-w], mirrored ramp.

    The ramp is the antiderivative of the normalised B-spline of degree M on
    M + 2 equally spaced knots in [0, w]; for M = 1, w = 2 it is exactly
    the explicit quadratic ramp ``phi_c1_eval``.
    """

    M: int
    width: float
    ramp: PPoly = field(repr=False)

    @property
    def support_length(self) -> float:
        return SUPPORT

    @property
    def plateau(self) -> tuple[float, float]:
        return (self.width, SUPPORT - self.width)

    @property
    def breakpoints(self) -> np.ndarray:
        return self.ramp.x

    @property
    def coefficients(self) -> np.ndarray:
        return self.ramp.c

    def __call__(self, t, nu: int = 0):
        """Phi or its derivative of order ``nu`` at real arguments ``t``."""
        t = np.asarray(t, dtype=float)
        w = self.width
        left = (t > 0.0) & (t < w)
        right = (t > SUPPORT - w) & (t < SUPPORT)
        out = np.zeros_like(t)
        if nu == 0:
            out = np.where((t >= w) & (t <= SUPPORT - w), 1.0, out)
        if left.any():
            out[left] = self.ramp(t[left], nu)
        if right.any():
            out[right] = (-1.0) ** nu * self.ramp(SUPPORT - t[right], nu)
        if nu == 0:
            # polynomial rounding can overshoot the plateau value by an ulp
            np.clip(out, 0.0, 1.0, out=out)
        return float(out) if out.ndim == 0 else out

    @cached_property
    def c1_norm(self) -> float:
        """max(sup|Phi|, sup|Phi'|); the ramp derivative peaks at w/2."""
        return max(1.0, float(self.ramp(self.width / 2.0, 1)))

    def derivative_sup(self, order: int) -> float:
        """sup |Phi^(order)| from the piecewise polynomial (order <= M + 1)."""
        if order == 0:
            return 1.0
        grid = np.linspace(0.0, self.width, 4001)
        pp = self.ramp.derivative(order)
        vals = np.abs(pp(grid))
        # also the breakpoints from both sides
        xs = self.ramp.x
        vals_bp = np.abs(np.concatenate([pp(xs[:-1]), pp(np.nextafter(xs[1:], -np.inf))]))
        return float(max(vals.max(), vals_bp.max()))


def make_mother(M: int = 1) -> MotherFunction:
    """Mother randelette of smoothness class C^M.

    M = 1 reproduces Phi(t) = phi(t) phi(12 - t) with plateau [2, 10]; for
    M >= 2 the ramp is widened to 3 so that Phi = 1 on the middle half [3, 9].
    """
    M = int(M)
    if M < 1:
        raise ValueError("smoothness class M must be >= 1")
    width = 2.0 if M == 1 else 3.0
    knots = np.linspace(0.0, width, M + 2)
    bump = BSpline.basis_element(knots, extrapolate=False)
    # basis element integrates to width / (M + 1)
    tck = bump.tck
    spline = BSpline(tck[0], tck[1] * (M + 1) / width, tck[2], extrapolate=False)
    ramp = PPoly.from_spline(spline.antiderivative())
    # keep only the pieces inside [0, width]
    keep = (ramp.x[:-1] >= 0.0) & (ramp.x[1:] <= width) & (np.diff(ramp.x) > 0)
    idx = np.nonzero(keep)[0]
    x = np.append(ramp.x[idx], ramp.x[idx[-1] + 1])
    ramp = PPoly(ramp.c[:, idx], x, extrapolate=True)
    return MotherFunction(M=M, width=width, ramp=ramp)


# ---------------------------------------------------------------------------
# counter-based coefficients


_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


def _mix64(z: np.ndarray) -> np.ndarray:
    # SplitMix64 finaliser
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def theta_values(seed, n, k) -> np.ndarray:
    """Uniform [0, 1) coefficient theta_{n,k} as a pure function of (seed, n, k)."""
    with np.errstate(over="ignore"):
        s = np.asarray(seed, dtype=np.int64).astype(np.uint64)
        h = _mix64(s ^ np.uint64(0x9E3779B97F4A7C15))
        h = _mix64(h + np.asarray(n, dtype=np.int64).astype(np.uint64))
        h = _mix64(h + np.asarray(k, dtype=np.int64).astype(np.uint64))
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


@dataclass(frozen=True)
class ThetaSample:
    """Coefficients theta_{n,k} in [0, 1], generated lazily from ``seed``.

    ``overrides`` maps (n, k) to a fixed value; ``constant`` replaces every
    coefficient by one value (e.g. 0.0 for the zero hull).
    """

    seed: int = 0
    overrides: tuple = ()
    constant: float | None = None

    def __post_init__(self):
        items = dict(self.overrides).items() if not isinstance(self.overrides, dict) else self.overrides.items()
        clean = tuple(sorted(((int(n), int(k)), float(v)) for (n, k), v in items))
        for _, v in clean:
            if not 0.0 <= v <= 1.0:
                raise ValueError("theta coefficients must lie in [0, 1]")
        object.__setattr__(self, "overrides", clean)
        if self.constant is not None and not 0.0 <= self.constant <= 1.0:
            raise ValueError("theta coefficients must lie in [0, 1]")

    def with_override(self, n: int, k: int, value: float) -> "ThetaSample":
        d = dict(self.overrides)
        d[(int(n), int(k))] = float(value)
        return ThetaSample(self.seed, tuple(d.items()), self.constant)

    def values(self, n: int, k) -> np.ndarray:
        k = np.asarray(k, dtype=np.int64)
        if self.constant is not None:
            out = np.full(k.shape, self.constant)
        else:
            out = theta_values(self.seed, n, k)
        for (nn, kk), v in self.overrides:
            if nn == n:
                out = np.where(k == kk, v, out)
        return out

    def __call__(self, n: int, k: int) -> float:
        return float(self.values(n, np.array(k)))


# ---------------------------------------------------------------------------
# the ensemble


@dataclass(frozen=True)
class RandeletteEnsemble:
    """Hull parameters: mother, decay rate c (a_n = e^{-cn}), truncation and nu."""

    mother: MotherFunction
    c: float
    N_max: int
    nu: int = 1

    def __post_init__(self):
        if self.nu < 1:
            raise ValueError("phase dimension nu must be >= 1")
        if self.N_max < 0:
            raise ValueError("N_max must be >= 0")
        if not self.c > LN2 * max(1, self.mother.M):
            raise ValueError(
                f"decay rate c={self.c} must exceed ln2*max(1,M)={LN2 * max(1, self.mother.M):.6g} "
                "for the derivative series to converge")

    @property
    def M(self) -> int:
        return self.mother.M

    @staticmethod
    def is_local(n: int) -> bool:
        """Generations whose scaled support (12 * 2**-n) fits on the circle."""
        return n >= 4

    def copies_per_axis(self, n: int) -> int:
        return 2 ** (n - 2) if self.is_local(n) else 1

    def K(self, n: int) -> int:
        return self.copies_per_axis(n) ** self.nu

    @property
    def K_prime(self) -> int:
        """Overlap bound: three supports per coordinate."""
        return 3 ** self.nu

    def amplitude(self, n) -> np.ndarray | float:
        return np.exp(-self.c * np.asarray(n, dtype=float))

    def shift_step(self, n: int) -> float:
        return STEP * 2.0 ** -n

    def tail_bound(self) -> float:
        """Sup-norm bound on the discarded generations n > N_max."""
        return self.K_prime * math.exp(-self.c * (self.N_max + 1)) / (1.0 - math.exp(-self.c))

    def gradient_bound(self) -> float:
        """Uniform bound on |d v / d omega_i| for every theta."""
        return self.K_prime * self.mother.c1_norm / (1.0 - math.exp(-(self.c - LN2)))


def make_ensemble(M: int = 1, c: float | None = None, N_max: int = 40, nu: int = 1) -> RandeletteEnsemble:
    """Ensemble with the default decay rate c = (M + 1) ln 2 + 0.5."""
    if c is None:
        c = (M + 1) * LN2 + 0.5
    return RandeletteEnsemble(make_mother(M), float(c), int(N_max), int(nu))


def _local_candidates(t: np.ndarray, n: int, ncopies: int):
    """Per coordinate: the three shift indices whose support may contain t.

    Returns (j, tau) with shapes t.shape + (3,): shift index modulo the
    number of copies and the local coordinate tau = 2**n t - 4 j in [0, 12).
    """
    u = t * (2.0 ** n)  # exact scaling
    j0 = np.floor(u / STEP)
    offs = np.array([0.0, 1.0, 2.0])
    j = j0[..., None] - offs
    tau = (u - STEP * j0)[..., None] + STEP * offs
    return np.mod(j, ncopies).astype(np.int64), tau


def _generation_terms(ens: RandeletteEnsemble, n: int, pts: np.ndarray, nu_deriv: int = 0):
    """Flat indices k (1-based) and values of the generation-n randelettes at pts.

    pts has shape (P, nu).  Returns k of shape (P, 3**nu) and values of the
    same shape; with ``nu_deriv=1`` also the partial derivatives, shape
    (P, 3**nu, nu).
    """
    P = pts.shape[0]
    if not ens.is_local(n):
        k = np.ones((P, 1), dtype=np.int64)
        val = np.ones((P, 1))
        if nu_deriv:
            return k, val, np.zeros((P, 1, ens.nu))
        return k, val
    ncop = ens.copies_per_axis(n)
    js, vals, ders = [], [], []
    for i in range(ens.nu):
        j, tau = _local_candidates(pts[:, i], n, ncop)
        js.append(j)
        vals.append(ens.mother(tau))
        if nu_deriv:
            ders.append(ens.mother(tau, 1) * 2.0 ** n)
    combos = list(itertools.product(range(3), repeat=ens.nu))
    k = np.empty((P, len(combos)), dtype=np.int64)
    val = np.empty((P, len(combos)))
    grad = np.empty((P, len(combos), ens.nu)) if nu_deriv else None
    for c_idx, combo in enumerate(combos):
        flat = np.zeros(P, dtype=np.int64)
        prod = np.ones(P)
        for i, o in enumerate(combo):
            flat = flat * ncop + js[i][:, o]
            prod = prod * vals[i][:, o]
        k[:, c_idx] = flat + 1
        val[:, c_idx] = prod
        if nu_deriv:
            for a in range(ens.nu):
                g = np.ones(P)
                for i, o in enumerate(combo):
                    g = g * (ders[i][:, o] if i == a else vals[i][:, o])
                grad[:, c_idx, a] = g
    if nu_deriv:
        return k, val, grad
    return k, val


def _as_points(omega, nu: int) -> np.ndarray:
    w = omega.array if isinstance(omega, TorusPoint) else np.asarray(omega, dtype=float)
    w = np.atleast_1d(w)
    if w.shape[-1] != nu:
        raise ValueError(f"torus point dimension {w.shape[-1]} does not match nu={nu}")
    return wrap(w)


def randelette_eval(ens: RandeletteEnsemble, n: int, k: int, omega) -> float | np.ndarray:
    """phi_{n,k}(omega) for 0 <= n <= N_max and 1 <= k <= K_n."""
    if not 0 <= n <= ens.N_max:
        raise IndexError(f"generation {n} outside [0, {ens.N_max}]")
    if not 1 <= k <= ens.K(n):
        raise IndexError(f"randelette index {k} outside [1, {ens.K(n)}]")
    pts = _as_points(omega, ens.nu)
    flat = pts.reshape(-1, ens.nu)
    if not ens.is_local(n):
        out = np.ones(flat.shape[0])
    else:
        ncop = ens.copies_per_axis(n)
        idx = np.unravel_index(k - 1, (ncop,) * ens.nu)
        out = np.ones(flat.shape[0])
        for i in range(ens.nu):
            tau = wrap(flat[:, i] - idx[i] * ens.shift_step(n)) * 2.0 ** n
            out = out * ens.mother(tau)
    out = out.reshape(pts.shape[:-1])
    return float(out) if out.ndim == 0 else out


def _hull_kernel(ens, seeds, pts, theta: ThetaSample | None, gradient=False):
    P = pts.shape[0]
    total = np.zeros(P)
    grad = np.zeros((P, ens.nu)) if gradient else None
    for n in range(ens.N_max + 1):
        a_n = math.exp(-ens.c * n)
        if gradient:
            if not ens.is_local(n):
                continue
            k, val, der = _generation_terms(ens, n, pts, 1)
        else:
            k, val = _generation_terms(ens, n, pts)
        if theta is None:
            th = theta_values(seeds[:, None], n, k)
        else:
            th = theta.values(n, k)
        if gradient:
            grad += a_n * np.einsum("pk,pka->pa", th, der)
        else:
            total += a_n * np.sum(th * val, axis=1)
    return grad if gradient else total


def hull_eval(ens: RandeletteEnsemble, theta: ThetaSample, omega) -> float | np.ndarray:
    """Truncated hull sum over n <= N_max at one or many torus points.

    The discarded tail is bounded by ``ens.tail_bound()``.
    """
    pts = _as_points(omega, ens.nu)
    flat = pts.reshape(-1, ens.nu)
    out = _hull_kernel(ens, None, flat, theta).reshape(pts.shape[:-1])
    return float(out) if out.ndim == 0 else out


def hull_eval_batch(ens: RandeletteEnsemble, seeds, omega) -> np.ndarray:
    """Hull values for many independent samples at once.

    ``seeds`` has shape (P,) and ``omega`` shape (P, nu): point p is
    evaluated with ThetaSample(seeds[p]).  Results are bit-identical to
    per-sample ``hull_eval`` calls.
    """
    pts = _as_points(omega, ens.nu).reshape(-1, ens.nu)
    seeds = np.asarray(seeds, dtype=np.int64).reshape(-1)
    if seeds.shape[0] != pts.shape[0]:
        raise ValueError("one seed per point is required")
    return _hull_kernel(ens, seeds, pts, None)


def hull_gradient(ens: RandeletteEnsemble, theta: ThetaSample, omega) -> np.ndarray:
    """Analytic gradient of the truncated hull, shape omega.shape[:-1] + (nu,)."""
    pts = _as_points(omega, ens.nu)
    flat = pts.reshape(-1, ens.nu)
    return _hull_kernel(ens, None, flat, theta, gradient=True).reshape(pts.shape)


def hull_gradient_batch(ens: RandeletteEnsemble, seeds, omega) -> np.ndarray:
    """Gradients for many independent samples, shape (P, nu); see hull_eval_batch."""
    pts = _as_points(omega, ens.nu).reshape(-1, ens.nu)
    seeds = np.asarray(seeds, dtype=np.int64).reshape(-1)
    if seeds.shape[0] != pts.shape[0]:
        raise ValueError("one seed per point is required")
    return _hull_kernel(ens, seeds, pts, None, gradient=True)


def overlap_count(ens: RandeletteEnsemble, n: int, omega) -> int | np.ndarray:
    """Number of generation-n randelettes whose (open) support contains omega."""
    pts = _as_points(omega, ens.nu)
    flat = pts.reshape(-1, ens.nu)
    if not ens.is_local(n):
        out = np.ones(flat.shape[0], dtype=np.int64)
    else:
        ncop = ens.copies_per_axis(n)
        out = np.ones(flat.shape[0], dtype=np.int64)
        for i in range(ens.nu):
            _, tau = _local_candidates(flat[:, i], n, ncop)
            out = out * np.sum((tau > 0.0) & (tau < SUPPORT), axis=1)
    out = out.reshape(pts.shape[:-1])
    return int(out) if out.ndim == 0 else out


def plateau_index(ens: RandeletteEnsemble, n: int, omega) -> int:
    """A 1-based index k with phi_{n,k}(omega) = 1 (plateau covering omega)."""
    pts = _as_points(omega, ens.nu).reshape(ens.nu)
    if not ens.is_local(n):
        return 1
    ncop = ens.copies_per_axis(n)
    lo, hi = ens.mother.plateau
    flat = 0
    for i in range(ens.nu):
        j, tau = _local_candidates(pts[i:i + 1], n, ncop)
        ok = np.nonzero((tau[0] >= lo) & (tau[0] <= hi))[0]
        if ok.size == 0:  # pragma: no cover - plateaus cover the circle
            raise RuntimeError("no plateau covers the point")
        flat = flat * ncop + int(j[0, ok[0]])
    return flat + 1


# ---------------------------------------------------------------------------
# separation and the local variation bound


@dataclass(frozen=True)
class SeparationGeneration:
    """First generation whose supports separate all orbit points of a radius-L cube."""

    A: float
    C: float
    L: int
    N_raw: float
    N_min: int

    @property
    def density_exponent(self) -> float:
        """Coefficient A / ln 2 of ln L in N; the density of the separating
        generation grows like L^B with B = c A / ln 2 for decay rate c."""
        return self.A / LN2


def separation_generation(L: int, A: float, C: float) -> SeparationGeneration:
    """N(L, A, C) = (A / ln 2) ln L + A + 5 - ln C / ln 2 and N_min = floor(N) + 1."""
    if L < 2:
        raise ValueError("L must be >= 2")
    if not (A > 0 and C > 0):
        raise ValueError("A and C must be positive")
    n_raw = (A / LN2) * math.log(L) + (A + 5.0 - math.log(C) / LN2)
    return SeparationGeneration(float(A), float(C), int(L), n_raw, int(math.floor(n_raw)) + 1)


def _support_ids(ens: RandeletteEnsemble, n: int, pts: np.ndarray) -> np.ndarray:
    """Flat ids of generation-n supports containing each point; -1 where absent."""
    k, _ = _generation_terms(ens, n, pts)
    if not ens.is_local(n):
        return k
    ncop = ens.copies_per_axis(n)
    inside = np.ones(k.shape, dtype=bool)
    combos = list(itertools.product(range(3), repeat=ens.nu))
    taus = [_local_candidates(pts[:, i], n, ncop)[1] for i in range(ens.nu)]
    for c_idx, combo in enumerate(combos):
        for i, o in enumerate(combo):
            inside[:, c_idx] &= (taus[i][:, o] > 0.0) & (taus[i][:, o] < SUPPORT)
    return np.where(inside, k, -1)


def support_separation_check(ens: RandeletteEnsemble, freqs: FrequencyMatrix, cube, omega, N: int) -> bool:
    """True iff no generation n in [N, N_max] has a support holding two orbit points of the cube."""
    if N > ens.N_max:
        raise ValueError("N must not exceed N_max")
    pts = orbit(_as_points(omega, ens.nu), cube.sites(), freqs)
    if pts.shape[0] < 2:
        return True
    for n in range(max(N, 0), ens.N_max + 1):
        ids = _support_ids(ens, n, pts)
        # a support id may repeat within a row only through wrap-around of a
        # short cycle; count each point once per id
        seen: dict[int, int] = {}
        for row, ks in enumerate(ids):
            for kk in set(int(v) for v in ks if v >= 0):
                if kk in seen and seen[kk] != row:
                    return False
                seen[kk] = row
    return True


@dataclass(frozen=True)
class LvbReport:
    """Outcome of freezing all coefficients but the plateau one covering T^x omega."""

    site: tuple
    generation: int
    k: int
    amplitude: float
    slope: float
    frozen_ok: bool
    density_bound: float
    g: float = 1.0

    @property
    def slope_error(self) -> float:
        return abs(self.slope - self.amplitude)

    @property
    def scaled_density_bound(self) -> float:
        """Density bound of g v(T^x omega) (divided by g)."""
        return self.density_bound / self.g


def lvb_experiment(ens: RandeletteEnsemble, freqs: FrequencyMatrix, cube, x, omega, trials: int = 8,
                   rng_seed=0, usr=None, theta: ThetaSample | None = None, g: float = 1.0) -> LvbReport:
    """Resample the generation-N_min plateau coefficient at site x.

    Checks that the potential at every other site of the cube is unchanged
    (bitwise) and that v(T^x omega) moves affinely with slope a_{N_min}.
    ``usr`` defaults to a certificate with A = 1 on the range 2L.
    """
    if trials < 2:
        raise ValueError("need at least two trials for a slope")
    L = max(int(cube.radius), 2)
    if usr is None:
        usr = usr_certificate(freqs, 1.0, 2 * L)
    if not usr.holds:
        raise ValueError("USR certificate does not hold; no separating generation exists")
    sep = separation_generation(L, usr.A, usr.C)
    N = sep.N_min
    if N > ens.N_max:
        raise ValueError(f"separating generation {N} exceeds N_max={ens.N_max}")
    sites = cube.sites()
    x = np.asarray(x).reshape(-1)
    pos = np.nonzero(np.all(sites == x, axis=1))[0]
    if pos.size != 1:
        raise ValueError("site x is not in the cube")
    i = int(pos[0])
    w = _as_points(omega, ens.nu)
    pts = orbit(w, sites, freqs)
    kstar = plateau_index(ens, N, pts[i])
    base = theta if theta is not None else ThetaSample(int(rng_seed))
    rng = np.random.default_rng(rng_seed)
    ts = rng.random(trials)
    ref = hull_eval(ens, base.with_override(N, kstar, float(ts[0])), pts)
    vals = [ref[i]]
    frozen = True
    for t in ts[1:]:
        v = hull_eval(ens, base.with_override(N, kstar, float(t)), pts)
        frozen &= bool(np.array_equal(np.delete(v, i), np.delete(ref, i)))
        vals.append(v[i])
    slope = float(np.polyfit(ts, np.array(vals), 1)[0])
    return LvbReport(site=tuple(int(v) for v in x), generation=N, k=kstar,
                     amplitude=math.exp(-ens.c * N), slope=slope, frozen_ok=frozen,
                     density_bound=1.0 / abs(slope) if slope != 0 else math.inf, g=float(g))
