"""Torus phase space, rotation dynamics and numerical USR / DIV certificates.

Points of the torus T^nu are stored as float64 arrays with coordinates in
[0, 1).  A lattice site x in Z^d acts by the rotation

    T^x omega = omega + x_1 alpha_1 + ... + x_d alpha_d  (mod 1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

__all__ = [
    "TorusPoint",
    "FrequencyMatrix",
    "UsrCertificate",
    "DivCertificate",
    "wrap",
    "translate",
    "orbit",
    "torus_distance",
    "usr_certificate",
    "div_certificate",
    "diophantine_frequency",
    "continued_fraction_value",
]


def wrap(x):
    """Reduce coordinates mod 1 into [0, 1).

    ``np.mod`` can return exactly 1.0 for tiny negative inputs; those are
    folded back to 0.0.
    """
    y = np.mod(np.asarray(x, dtype=float), 1.0)
    return np.where(y >= 1.0, 0.0, y)


@dataclass(frozen=True)
class TorusPoint:
    """A point of T^nu; coordinates are reduced mod 1 on construction."""

    coords: tuple

    def __post_init__(self):
        arr = wrap(np.atleast_1d(np.asarray(self.coords, dtype=float)))
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("a torus point needs at least one coordinate")
        object.__setattr__(self, "coords", tuple(float(c) for c in arr))

    @property
    def nu(self) -> int:
        return len(self.coords)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.coords, dtype=float)


@dataclass(frozen=True)
class FrequencyMatrix:
    """The d frequency vectors alpha_1..alpha_d, each a point of T^nu.

    ``vectors`` has shape (d, nu).  Values are kept exactly as supplied
    apart from the reduction mod 1.
    """

    vectors: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError("frequency matrix must have shape (d, nu) with d, nu >= 1")
        v = wrap(v)
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def d(self) -> int:
        return self.vectors.shape[0]

    @property
    def nu(self) -> int:
        return self.vectors.shape[1]

    def to_strings(self) -> list[list[str]]:
        """Decimal strings with 17 significant digits (bit-exact round trip)."""
        return [[f"{a:.17g}" for a in row] for row in self.vectors]

    @classmethod
    def from_strings(cls, rows) -> "FrequencyMatrix":
        return cls(np.array([[float(a) for a in row] for row in rows], dtype=float))

    def __repr__(self) -> str:
        return f"FrequencyMatrix(d={self.d}, nu={self.nu}, vectors={self.to_strings()})"


def _split(a: np.ndarray):
    # Dekker split: the high part has at most 26 significant bits so that
    # integer multiples up to 2**27 are exact.
    factor = 134217729.0  # 2**27 + 1
    t = factor * a
    hi = t - (t - a)
    return hi, a - hi


def _frac_shift(x: np.ndarray, freqs: FrequencyMatrix) -> np.ndarray:
    """(x . alpha) mod 1 for integer sites x of shape (..., d), accurately.

    The product is formed from the 26-bit split of each frequency, so the
    dominant part is an exact multiple whose fractional part is exact.
    """
    x = np.asarray(x, dtype=float)
    hi, lo = _split(freqs.vectors)
    out = np.zeros(x.shape[:-1] + (freqs.nu,))
    for j in range(freqs.d):
        xj = x[..., j, None]
        out = wrap(out + wrap(xj * hi[j]))
        out = out + xj * lo[j]
    return wrap(out)


def _check_sites(x, freqs: FrequencyMatrix) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != freqs.d:
        raise ValueError(f"lattice vector has dimension {x.shape[-1]}, frequencies have d={freqs.d}")
    if not np.all(np.equal(np.mod(x, 1), 0)):
        raise ValueError("lattice vectors must have integer entries")
    return x


def translate(omega, x, freqs: FrequencyMatrix) -> TorusPoint:
    """T^x omega for a single point and a single lattice vector."""
    w = omega.array if isinstance(omega, TorusPoint) else np.atleast_1d(np.asarray(omega, float))
    if w.shape != (freqs.nu,):
        raise ValueError(f"torus point has dimension {w.shape}, frequencies have nu={freqs.nu}")
    xs = _check_sites(x, freqs)
    if xs.ndim != 1:
        raise ValueError("translate takes a single lattice vector; use orbit() for many")
    return TorusPoint(tuple(wrap(w + _frac_shift(xs, freqs))))


def orbit(omega, sites, freqs: FrequencyMatrix) -> np.ndarray:
    """Vectorised T^x omega.

    ``omega`` has shape (nu,) or (..., nu); ``sites`` has shape (n, d).
    Returns an array of shape omega.shape[:-1] + (n, nu).
    """
    w = omega.array if isinstance(omega, TorusPoint) else np.asarray(omega, float)
    sites = _check_sites(np.atleast_2d(sites), freqs)
    shift = _frac_shift(sites, freqs)  # (n, nu)
    return wrap(w[..., None, :] + shift)


def torus_distance(a, b) -> float | np.ndarray:
    """Max over coordinates of the circle distance; broadcasts over leading axes."""
    a = a.array if isinstance(a, TorusPoint) else np.asarray(a, float)
    b = b.array if isinstance(b, TorusPoint) else np.asarray(b, float)
    if a.shape[-1:] != b.shape[-1:]:
        raise ValueError("torus points of different dimension")
    diff = np.abs(wrap(a) - wrap(b))
    circ = np.minimum(diff, 1.0 - diff)
    out = circ.max(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class UsrCertificate:
    """Uniformly-slow-returns certificate on the finite range 0 < |x - y| <= R.

    ``c_min`` is one quarter of the minimum of dist(T^n w, w) * |n|^A; a
    positive value certifies dist(T^x w, T^y w) >= 4 c_min |x - y|^-A for
    all pairs within range.  ``argmin`` is the lattice difference attaining
    the minimum.
    """

    A: float
    R: int
    c_min: float
    argmin: tuple = ()

    @property
    def C(self) -> float:
        return self.c_min

    @property
    def holds(self) -> bool:
        return self.c_min > 0.0


def _half_lattice(R: int, d: int, chunk: int = 1 << 20):
    """Nonzero vectors with max-norm <= R, one of each pair {n, -n}, in chunks."""
    if d == 1:
        for start in range(1, R + 1, chunk):
            yield np.arange(start, min(R, start + chunk - 1) + 1, dtype=float)[:, None]
        return
    # first nonzero coordinate positive
    for lead in range(d):
        tail = d - lead - 1
        first = np.arange(1, R + 1, dtype=float)
        if tail == 0:
            block = np.zeros((R, d))
            block[:, lead] = first
            yield block
            continue
        rest = np.arange(-R, R + 1, dtype=float)
        grid = np.stack(np.meshgrid(first, *([rest] * tail), indexing="ij"), axis=-1).reshape(-1, tail + 1)
        for start in range(0, len(grid), chunk):
            part = grid[start:start + chunk]
            block = np.zeros((len(part), d))
            block[:, lead:] = part
            yield block


def usr_certificate(freqs: FrequencyMatrix, A: float, R: int, omega=None) -> UsrCertificate:
    """Brute-force USR constant over all lattice differences with 0 < |n| <= R.

    The minimum is taken at the base point ``omega`` (default 0).  For
    rotations the result does not depend on the base point.
    """
    if not A > 0:
        raise ValueError("USR exponent A must be positive")
    if R < 1:
        raise ValueError("USR range R must be >= 1")
    w = np.zeros(freqs.nu) if omega is None else (
        omega.array if isinstance(omega, TorusPoint) else np.asarray(omega, float))
    best = math.inf
    best_n: tuple = ()
    for block in _half_lattice(int(R), freqs.d):
        moved = wrap(w + _frac_shift(block, freqs))
        dist = torus_distance(moved, w)
        norm = np.abs(block).max(axis=1)
        score = np.atleast_1d(dist) * norm ** A
        i = int(np.argmin(score))
        if score[i] < best:
            best = float(score[i])
            best_n = tuple(int(v) for v in block[i])
    return UsrCertificate(A=float(A), R=int(R), c_min=best / 4.0, argmin=best_n)


@dataclass(frozen=True)
class DivCertificate:
    """Local divergence certificate dist(T^x w, T^x w') <= C' |x|^A' dist(w, w')."""

    A_prime: float
    C_prime: float
    R: int
    max_ratio: float
    trials: int

    @property
    def accepted(self) -> bool:
        return self.max_ratio <= self.C_prime * (1.0 + 1e-12)


def div_certificate(freqs: FrequencyMatrix, R: int, trials: int, rng_seed=0,
                    min_separation: float = 1e-3) -> DivCertificate:
    """Sample pairs (w, w') and sites |x| <= R; record the worst distance ratio.

    Rotations are isometries, so the certificate claims A' = 0, C' = 1.
    Pairs closer than ``min_separation`` are resampled: for them rounding
    of the translated coordinates dominates the ratio.
    """
    if R < 0:
        raise ValueError("R must be >= 0")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(rng_seed)
    worst = 0.0
    done = 0
    while done < trials:
        w1 = rng.random(freqs.nu)
        w2 = rng.random(freqs.nu)
        base = torus_distance(w1, w2)
        if base < min_separation:
            continue
        x = rng.integers(-R, R + 1, size=freqs.d)
        ratio = torus_distance(translate(w1, x, freqs), translate(w2, x, freqs)) / base
        worst = max(worst, ratio)
        done += 1
    return DivCertificate(A_prime=0.0, C_prime=1.0, R=int(R), max_ratio=float(worst), trials=int(trials))


# squarefree radicands for additional coordinates: sqrt(p) are linearly
# independent over Q together with sqrt(5)
_RADICANDS = (2, 3, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47)


def continued_fraction_value(quotients, max_terms: int = 200) -> float:
    """Value of the purely periodic continued fraction [0; a1, a2, ..., a1, a2, ...]."""
    qs = [int(a) for a in quotients]
    if not qs or any(a < 1 for a in qs):
        raise ValueError("continued fraction needs positive partial quotients")
    value = Fraction(0)
    for i in range(max_terms):
        value = 1 / (qs[(max_terms - 1 - i) % len(qs)] + value)
    return float(value)


def diophantine_frequency(kind: str, nu: int = 1, d: int = 1, quotients=None) -> FrequencyMatrix:
    """Concrete badly approximable frequency vectors.

    ``golden`` starts from (sqrt 5 - 1)/2, ``silver`` from sqrt 2 - 1 and
    ``cf`` from the periodic continued fraction with the given partial
    quotients.  The remaining nu*d - 1 entries are fractional parts of
    sqrt(p) for distinct squarefree p, which keeps all entries rationally
    independent together with 1.
    """
    if nu < 1 or d < 1:
        raise ValueError("nu and d must be >= 1")
    if kind == "golden":
        first = (math.sqrt(5.0) - 1.0) / 2.0
        skip = ()
    elif kind == "silver":
        first = math.sqrt(2.0) - 1.0
        skip = (2,)
    elif kind in ("cf", "custom"):
        if quotients is None:
            raise ValueError("custom continued fraction needs partial quotients")
        first = continued_fraction_value(quotients)
        skip = ()
    else:
        raise ValueError(f"unsupported frequency kind {kind!r}")
    pool = [first] + [math.sqrt(p) - math.isqrt(p) for p in _RADICANDS if p not in skip]
    if nu * d > len(pool):
        raise ValueError("too many frequency coordinates requested")
    return FrequencyMatrix(np.array(pool[: nu * d]).reshape(d, nu))
