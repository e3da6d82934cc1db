"""Finite-cube Hamiltonians, their spectra and Green functions.

On a cube the operator is the Dirichlet restriction

    (H f)(x) = sum_{|y - x|_1 = 1, y in cube} f(y) + V(x) f(x),   V(x) = g v(T^x omega, theta),

and the Green function is G = (H - E)^{-1}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded

from .dynamics import FrequencyMatrix, orbit
from .lattice import Cube, ScaleSchedule, gamma
from .randelette import RandeletteEnsemble, ThetaSample, hull_eval

__all__ = [
    "ResonantEnergyError",
    "SpectralError",
    "HullPotential",
    "HamiltonianMatrix",
    "SpectralData",
    "GreenQuery",
    "hopping_matrix",
    "assemble",
    "assemble_potential",
    "spectrum",
    "green",
    "green_matrix",
    "resolvent_column",
    "write_spectrum_csv",
    "write_eigenvectors",
    "read_eigenvectors",
    "gri_terms",
    "gri_residual",
    "InitialScaleCheck",
    "initial_scale_predicate",
    "coupling_for_margin",
]


class ResonantEnergyError(ArithmeticError):
    """The requested energy lies (numerically) in the spectrum."""


class SpectralError(ArithmeticError):
    """Eigendecomposition failed or did not meet the residual tolerance."""


class HullPotential:
    """Site potential V(x) = g v(T^x omega, theta) with per-site caching.

    Any callable mapping an (n, d) integer site array to n reals can be used
    wherever a potential is expected; this one realises the hull.
    """

    def __init__(self, ens: RandeletteEnsemble, theta: ThetaSample, freqs: FrequencyMatrix, omega, g: float):
        self.ens, self.theta, self.freqs, self.g = ens, theta, freqs, float(g)
        self.omega = np.atleast_1d(np.asarray(getattr(omega, "array", omega), dtype=float))
        self._cache: dict[tuple, float] = {}

    def __call__(self, sites) -> np.ndarray:
        sites = np.asarray(sites, dtype=np.int64).reshape(-1, self.freqs.d)
        keys = [tuple(s) for s in sites.tolist()]
        missing = [i for i, k in enumerate(keys) if k not in self._cache]
        if missing:
            pts = orbit(self.omega, sites[missing], self.freqs)
            vals = self.g * np.atleast_1d(hull_eval(self.ens, self.theta, pts))
            for i, v in zip(missing, vals.tolist()):
                self._cache[keys[i]] = v
        return np.array([self._cache[k] for k in keys])


def hopping_matrix(cube: Cube) -> np.ndarray:
    """Adjacency matrix of the cube (unit hopping, Dirichlet truncation)."""
    n = cube.size
    A = np.zeros((n, n))
    shape = (cube.side,) * cube.d
    idx = np.arange(n).reshape(shape)
    for axis in range(cube.d):
        a = np.take(idx, np.arange(cube.side - 1), axis=axis).ravel()
        b = np.take(idx, np.arange(1, cube.side), axis=axis).ravel()
        A[a, b] = 1.0
        A[b, a] = 1.0
    return A


@dataclass(frozen=True, eq=False)
class HamiltonianMatrix:
    """Dense symmetric H on a cube; row i corresponds to ``cube.sites()[i]``."""

    cube: Cube
    matrix: np.ndarray = field(repr=False)
    potential: np.ndarray = field(repr=False)

    def index(self, x) -> int:
        return self.cube.index(x)


def assemble_potential(cube: Cube, potential) -> HamiltonianMatrix:
    """H = adjacency + diag(potential); ``potential`` is an array or a site callable."""
    vals = potential(cube.sites()) if callable(potential) else np.asarray(potential, dtype=float)
    vals = np.asarray(vals, dtype=float).reshape(-1)
    if vals.shape[0] != cube.size:
        raise ValueError(f"potential has {vals.shape[0]} values for {cube.size} sites")
    H = hopping_matrix(cube)
    H[np.diag_indices_from(H)] = vals
    H.setflags(write=False)
    vals.setflags(write=False)
    return HamiltonianMatrix(cube, H, vals)


def assemble(cube: Cube, omega, theta: ThetaSample, g: float, ens: RandeletteEnsemble,
             freqs: FrequencyMatrix) -> HamiltonianMatrix:
    """Hamiltonian with diagonal g v(T^x omega, theta)."""
    if freqs.d != cube.d:
        raise ValueError("frequency matrix and cube dimensions differ")
    return assemble_potential(cube, HullPotential(ens, theta, freqs, omega, g))


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Eigenvalues (ascending), orthonormal eigenvectors (columns) and residual."""

    cube: Cube
    eigenvalues: np.ndarray = field(repr=False)
    eigenvectors: np.ndarray = field(repr=False)
    residual: float = 0.0

    def dist(self, E: float) -> float:
        """dist(spectrum, E)."""
        ev = self.eigenvalues
        i = np.searchsorted(ev, E)
        best = math.inf
        if i < ev.size:
            best = ev[i] - E
        if i > 0:
            best = min(best, E - ev[i - 1])
        return float(best)

    @property
    def scale(self) -> float:
        return float(max(1.0, np.max(np.abs(self.eigenvalues))))


def spectrum(H: HamiltonianMatrix | np.ndarray, cube: Cube | None = None, tol: float = 1e-10) -> SpectralData:
    """Full symmetric eigendecomposition with a relative residual check."""
    if isinstance(H, HamiltonianMatrix):
        cube, M = H.cube, H.matrix
    else:
        M = np.asarray(H, dtype=float)
    if not np.array_equal(M, M.T):
        raise ValueError("matrix is not symmetric")
    try:
        w, V = np.linalg.eigh(M)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise SpectralError(f"eigh failed: {exc}; max|H| = {np.max(np.abs(M)):.3g}") from exc
    norm = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
    res = float(np.max(np.linalg.norm(M @ V - V * w, axis=0))) if w.size else 0.0
    if res > tol * norm:
        raise SpectralError(f"eigen-residual {res:.3g} exceeds {tol:g} * {norm:.3g}")
    w.setflags(write=False)
    V.setflags(write=False)
    return SpectralData(cube, w, V, res / norm)


@dataclass(frozen=True)
class GreenQuery:
    E: float
    x: tuple
    y: tuple
    value: float
    dist: float


def _check_energy(spec: SpectralData, E: float) -> float:
    d = spec.dist(E)
    if d <= 1e-12 * spec.scale:
        raise ResonantEnergyError(f"E={E!r} is within {d:.3g} of the spectrum")
    return d


def green(spec: SpectralData, E: float, x, y) -> GreenQuery:
    """G(x, y; E) = sum_j psi_j(x) psi_j(y) / (lambda_j - E)."""
    d = _check_energy(spec, E)
    i, j = spec.cube.index(x), spec.cube.index(y)
    V = spec.eigenvectors
    val = float(np.sum(V[i] * V[j] / (spec.eigenvalues - E)))
    return GreenQuery(float(E), tuple(np.atleast_1d(x).tolist()), tuple(np.atleast_1d(y).tolist()), val, d)


def green_matrix(spec: SpectralData, E: float, rows=None, cols=None) -> np.ndarray:
    """Block of (H - E)^{-1}; ``rows``/``cols`` are index arrays (default all)."""
    _check_energy(spec, E)
    V = spec.eigenvectors
    Vr = V if rows is None else V[np.asarray(rows)]
    Vc = V if cols is None else V[np.asarray(cols)]
    return (Vr / (spec.eigenvalues - E)) @ Vc.T


def resolvent_column(H: HamiltonianMatrix, E: float, y) -> np.ndarray:
    """Column G(., y; E) by a direct solve.

    In d = 1 the tridiagonal solve keeps relative accuracy for entries far
    below machine epsilon times the largest one, which the eigen-expansion
    cannot.
    """
    n = H.cube.size
    rhs = np.zeros(n)
    rhs[H.index(y)] = 1.0
    if H.cube.d == 1:
        ab = np.zeros((3, n))
        ab[0, 1:] = 1.0
        ab[1] = H.potential - E
        ab[2, :-1] = 1.0
        return solve_banded((1, 1), ab, rhs)
    return np.linalg.solve(H.matrix - E * np.eye(n), rhs)


def write_spectrum_csv(spec: SpectralData, path) -> None:
    """Write ``index,eigenvalue`` rows (repr precision)."""
    lines = ["index,eigenvalue"] + [f"{i},{v!r}" for i, v in enumerate(spec.eigenvalues.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


_EIG_MAGIC = b"MSALEIG1"


def write_eigenvectors(spec: SpectralData, path, seed: int = 0) -> None:
    """Dump the eigenvector matrix as little-endian float64 with a fixed header.

    Layout: 8-byte magic ``MSALEIG1``; int64 d, radius, seed, rows, cols;
    d int64 center coordinates; then rows * cols float64 in row-major order
    (column j is the eigenvector of the j-th smallest eigenvalue).
    """
    cube = spec.cube
    V = np.ascontiguousarray(spec.eigenvectors, dtype="<f8")
    head = np.array([cube.d, cube.radius, seed, V.shape[0], V.shape[1], *cube.center], dtype="<i8")
    with open(path, "wb") as fh:
        fh.write(_EIG_MAGIC)
        fh.write(head.tobytes())
        fh.write(V.tobytes())


def read_eigenvectors(path) -> tuple[Cube, int, np.ndarray]:
    """Inverse of :func:`write_eigenvectors`; returns (cube, seed, matrix)."""
    raw = Path(path).read_bytes()
    if raw[:8] != _EIG_MAGIC:
        raise ValueError(f"{path} is not an eigenvector dump")
    d, radius, seed, rows, cols = np.frombuffer(raw, dtype="<i8", count=5, offset=8).tolist()
    center = np.frombuffer(raw, dtype="<i8", count=d, offset=48).tolist()
    V = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=48 + 8 * d).reshape(rows, cols)
    return Cube(tuple(center), radius), seed, V.copy()


def gri_terms(host: Cube, inner: Cube) -> tuple[np.ndarray, np.ndarray]:
    """Boundary pairs (w, w') of ``inner`` whose outer member w' lies in ``host``."""
    bd = inner.boundary()
    keep = np.array([host.contains(w2) for w2 in bd.outer], dtype=bool)
    return bd.inner[keep], bd.outer[keep]


def gri_residual(host: Cube, inner: Cube, potential, E: float, u, y,
                 host_spec: SpectralData | None = None, inner_spec: SpectralData | None = None) -> float:
    """|LHS - RHS| of the geometric resolvent identity.

        G_host(u, y) = - sum_{(w, w') in bd inner, w' in host} G_inner(u, w) G_host(w', y)

    for u in ``inner`` and y in ``host`` outside ``inner`` (unit hopping
    enters with a minus sign).  ``potential`` is a site callable or a
    HullPotential.
    """
    if not host.contains_cube(inner):
        raise ValueError("inner cube is not inside the host")
    if not inner.contains(u):
        raise ValueError("u must lie in the inner cube")
    if not host.contains(y) or inner.contains(y):
        raise ValueError("y must lie in the host but outside the inner cube")
    if host_spec is None:
        host_spec = spectrum(assemble_potential(host, potential))
    if inner_spec is None:
        inner_spec = spectrum(assemble_potential(inner, potential))
    lhs = green(host_spec, E, u, y).value
    ws, wps = gri_terms(host, inner)
    rhs = 0.0
    if len(ws):
        g_in = green_matrix(inner_spec, E, rows=[inner.index(u)], cols=[inner.index(w) for w in ws])[0]
        g_out = green_matrix(host_spec, E, rows=[host.index(w) for w in wps], cols=[host.index(y)])[:, 0]
        rhs = -float(np.dot(g_in, g_out))
    return abs(lhs - rhs)


@dataclass(frozen=True)
class InitialScaleCheck:
    """g delta_0 against 2d + 4d e^{4 gamma(m, L_0)}; ratio > 1 means pass."""

    lhs: float
    rhs: float

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs

    @property
    def passed(self) -> bool:
        return self.lhs > self.rhs

    def __bool__(self) -> bool:
        return self.passed


def initial_scale_predicate(sched: ScaleSchedule, d: int, m: float) -> InitialScaleCheck:
    """Whether g delta_0 > 2d + 4d exp(4 gamma(m, L_0))."""
    rhs = 2 * d + 4 * d * math.exp(4.0 * gamma(m, sched.L0))
    return InitialScaleCheck(sched.g_delta(0), rhs)


def coupling_for_margin(L0: int, d: int, m: float, margin: float = 2.0) -> float:
    """Coupling g at which g delta_0 equals ``margin`` times the right-hand side."""
    rhs = 2 * d + 4 * d * math.exp(4.0 * gamma(m, L0))
    # g delta_0 = sqrt(g) exp(-4 sqrt(L0))
    return (margin * rhs * math.exp(4.0 * math.sqrt(L0))) ** 2
