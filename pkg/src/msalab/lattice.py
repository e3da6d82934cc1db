"""Cubes in Z^d (max-norm balls), their boundaries, and the multi-scale schedule."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .dynamics import TorusPoint

__all__ = [
    "Cube",
    "BoundaryPairSet",
    "ScaleSchedule",
    "next_scale",
    "gamma",
    "decay_exponent",
    "enumerate_disjoint_subcubes",
    "max_disjoint_count",
    "covering_grid",
    "covering_grid_size",
]


@dataclass(frozen=True)
class Cube:
    """The max-norm ball {x in Z^d : |x - center| <= radius}."""

    center: tuple
    radius: int

    def __post_init__(self):
        c = tuple(int(v) for v in np.atleast_1d(self.center))
        if len(c) < 1:
            raise ValueError("cube needs a center in Z^d, d >= 1")
        if int(self.radius) < 0:
            raise ValueError("radius must be >= 0")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", int(self.radius))

    @classmethod
    def around(cls, center, radius: int) -> "Cube":
        return cls(tuple(np.atleast_1d(center).tolist()), radius)

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def side(self) -> int:
        return 2 * self.radius + 1

    @property
    def size(self) -> int:
        return self.side ** self.d

    @property
    def diameter(self) -> int:
        """Number of sites along one edge, 2L + 1."""
        return self.side

    @cached_property
    def _sites(self) -> np.ndarray:
        axes = [np.arange(c - self.radius, c + self.radius + 1) for c in self.center]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.d)
        grid.setflags(write=False)
        return grid

    def sites(self) -> np.ndarray:
        """All sites in lexicographic order, shape (size, d)."""
        return self._sites

    def index(self, x) -> int:
        """Position of site x in ``sites()``."""
        x = np.atleast_1d(np.asarray(x, dtype=np.int64))
        off = x - np.asarray(self.center) + self.radius
        if x.shape != (self.d,) or np.any(off < 0) or np.any(off > 2 * self.radius):
            raise KeyError(f"site {tuple(x)} not in {self}")
        return int(np.ravel_multi_index(tuple(off), (self.side,) * self.d))

    def contains(self, x) -> bool:
        x = np.atleast_1d(np.asarray(x))
        return bool(np.max(np.abs(x - np.asarray(self.center))) <= self.radius)

    def contains_cube(self, other: "Cube") -> bool:
        gap = np.max(np.abs(np.asarray(other.center) - np.asarray(self.center)))
        return bool(gap + other.radius <= self.radius)

    def disjoint(self, other: "Cube") -> bool:
        gap = np.max(np.abs(np.asarray(other.center) - np.asarray(self.center)))
        return bool(gap > self.radius + other.radius)

    def inner_boundary(self) -> np.ndarray:
        s = self.sites()
        return s[np.max(np.abs(s - np.asarray(self.center)), axis=1) == self.radius]

    def boundary(self) -> "BoundaryPairSet":
        """Nearest-neighbour pairs (x, y) with x in the cube and y outside."""
        inner, outer = [], []
        c = np.asarray(self.center)
        for x in self.inner_boundary():
            for axis in range(self.d):
                for step in (-1, 1):
                    y = x.copy()
                    y[axis] += step
                    if abs(y[axis] - c[axis]) > self.radius:
                        inner.append(x)
                        outer.append(y)
        return BoundaryPairSet(np.array(inner).reshape(-1, self.d), np.array(outer).reshape(-1, self.d))

    def subcube(self, center, radius: int) -> "Cube":
        sub = Cube.around(center, radius)
        if not self.contains_cube(sub):
            raise ValueError(f"{sub} is not inside {self}")
        return sub

    def subcube_centers(self, radius: int, step: int = 1) -> np.ndarray:
        """Centers of every radius-r sub-cube, on a grid with the given step."""
        if radius > self.radius:
            return np.empty((0, self.d), dtype=np.int64)
        span = self.radius - radius
        axes = []
        for c in self.center:
            ax = np.arange(c - span, c + span + 1, step)
            if ax[-1] != c + span:
                ax = np.append(ax, c + span)
            axes.append(ax)
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.d)


@dataclass(frozen=True)
class BoundaryPairSet:
    """Pairs (inner[i], outer[i]) of nearest neighbours straddling a cube boundary."""

    inner: np.ndarray
    outer: np.ndarray

    def __len__(self) -> int:
        return int(self.inner.shape[0])

    def __iter__(self):
        return iter(zip(map(tuple, self.inner.tolist()), map(tuple, self.outer.tolist())))


def next_scale(L: int) -> int:
    """floor(L^{3/2}) + 1 computed in exact integer arithmetic."""
    return math.isqrt(L ** 3) + 1


def gamma(m: float, L: int) -> float:
    """Decay rate m (1 + L^{-1/8}); strictly larger than m."""
    if L < 1:
        raise ValueError("L must be >= 1")
    return m * (1.0 + L ** -0.125)


def decay_exponent(m: float, L: int) -> float:
    """gamma(m, L) * L written as m (L + L^{7/8}); zero for L = 0."""
    return m * (L + L ** 0.875)


@dataclass(frozen=True)
class ScaleSchedule:
    """Scales L_k, resonance widths delta_k and grid radii r_k of the multi-scale scheme.

    Parameters
    ----------
    L0 : int
        Initial scale, > 2.
    g : float
        Coupling constant; only the combinations g * delta_k = sqrt(g) e^{-4 sqrt(L_k)}
        and delta_k = e^{-4 sqrt(L_k)} / sqrt(g) are used.
    nu : int
        Phase-space dimension, enters r_k and J.
    """

    L0: int
    g: float
    nu: int = 1
    alpha: float = 1.5
    a: float = 0.5
    b: float = 0.5

    def __post_init__(self):
        if int(self.L0) != self.L0 or self.L0 <= 2:
            raise ValueError("L0 must be an integer > 2")
        if not self.g >= 0:
            raise ValueError("coupling g must be >= 0")
        if self.nu < 1:
            raise ValueError("nu must be >= 1")
        if (self.alpha, self.a, self.b) != (1.5, 0.5, 0.5):
            raise ValueError("only alpha = 3/2, a = b = 1/2 are supported")

    def scale(self, k: int) -> int:
        if k < -1:
            raise ValueError("k must be >= -1")
        if k == -1:
            return 0
        L = int(self.L0)
        for _ in range(k):
            L = next_scale(L)
        return L

    def scales(self, kmax: int) -> list[int]:
        return [self.scale(k) for k in range(kmax + 1)]

    def log_delta(self, k: int) -> float:
        if k < 0:
            raise ValueError("k must be >= 0")
        if self.g == 0:
            return math.inf
        return -0.5 * math.log(self.g) - 4.0 * math.sqrt(self.scale(k))

    def delta(self, k: int) -> float:
        return math.exp(self.log_delta(k)) if self.g > 0 else math.inf

    def g_delta(self, k: int) -> float:
        """Resonance width g * delta_k = sqrt(g) e^{-4 sqrt(L_k)} (0 when g = 0)."""
        return math.sqrt(self.g) * math.exp(-4.0 * math.sqrt(self.scale(k)))

    def log_r(self, k: int) -> float:
        return (1.0 + 1.0 / (2 * self.nu)) * self.log_delta(k)

    def r(self, k: int) -> float:
        return math.exp(self.log_r(k))

    @property
    def J(self) -> int:
        return self.nu + 2

    def with_g(self, g: float) -> "ScaleSchedule":
        return ScaleSchedule(self.L0, g, self.nu)


def _greedy_1d(intervals: list[tuple[int, int]]) -> list[int]:
    order = sorted(range(len(intervals)), key=lambda i: (intervals[i][1], intervals[i][0]))
    chosen, last = [], None
    for i in order:
        lo, hi = intervals[i]
        if last is None or lo > last:
            chosen.append(i)
            last = hi
    return chosen


def max_disjoint_count(cubes: list[Cube], limit: int | None = None) -> tuple[int, list[Cube], bool]:
    """Largest pairwise-disjoint subfamily of ``cubes``.

    Exact (right-endpoint greedy) in d = 1; greedy packing in lexicographic
    order otherwise, which is a lower bound.  Returns (count, family, exact).
    """
    if not cubes:
        return 0, [], True
    d = cubes[0].d
    if d == 1:
        iv = [(c.center[0] - c.radius, c.center[0] + c.radius) for c in cubes]
        idx = _greedy_1d(iv)
        fam = [cubes[i] for i in idx]
        exact = True
    else:
        fam = []
        for c in sorted(cubes, key=lambda c: tuple(v + c.radius for v in c.center)):
            if all(c.disjoint(f) for f in fam):
                fam.append(c)
        exact = False
    if limit is not None:
        fam = fam[:limit]
    return len(fam), fam, exact


def enumerate_disjoint_subcubes(host: Cube, radius: int, max_count: int | None = None) -> tuple[list[Cube], bool]:
    """A maximum family of pairwise-disjoint radius-r sub-cubes of ``host``.

    Returns (family, exact).  In d = 1 the family is a true maximum; in
    higher dimension it is a greedy packing (a certified lower bound).
    """
    if radius > host.radius:
        raise ValueError("sub-cube radius exceeds host radius")
    cubes = [Cube.around(c, radius) for c in host.subcube_centers(radius)]
    _, fam, exact = max_disjoint_count(cubes, max_count)
    return fam, exact


def covering_grid_size(r: float, nu: int) -> int:
    """Number of centers (ceil(1 / 2r))^nu of the covering grid."""
    if not 0 < r <= 0.5:
        raise ValueError("grid radius must lie in (0, 1/2]")
    return math.ceil(1.0 / (2.0 * r)) ** nu


def covering_grid(sched: ScaleSchedule | float, k: int | None = None, nu: int | None = None,
                  max_points: int = 1_000_000) -> list[TorusPoint]:
    """Centers ((2l+1) r mod 1, ...) covering T^nu within sup-distance r.

    ``sched`` may be a ScaleSchedule (radius r_k) or the radius itself.
    Raises OverflowError instead of materialising more than ``max_points``.
    """
    if isinstance(sched, ScaleSchedule):
        r = sched.r(k)
        nu = sched.nu if nu is None else nu
    else:
        r = float(sched)
        nu = 1 if nu is None else nu
    if not 0 < r <= 0.5:
        raise ValueError("grid radius must lie in (0, 1/2]")
    N = math.ceil(1.0 / (2.0 * r))
    if N ** nu > max_points:
        raise OverflowError(f"covering grid has {N}^{nu} points; use covering_grid_size instead")
    axis = np.mod((2 * np.arange(N) + 1) * r, 1.0)
    return [TorusPoint(tuple(p)) for p in itertools.product(axis.tolist(), repeat=nu)]
