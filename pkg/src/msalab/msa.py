"""Multi-scale classification of cubes: resonance, singularity, tunneling,
multi-resonance, localization, and radial-descent bounds.

Conventions
-----------
* A cube is E-resonant at level k iff dist(spectrum, E) < g delta_k; a tie
  counts as non-resonant.
* Existential-energy questions ("is there an E at which two / J cubes are
  all resonant?") are decided exactly from the spectra using the closed
  neighbourhoods [lambda - g delta_k, lambda + g delta_k]: two cubes share
  such an E iff their spectral gap is <= 2 g delta_k.
* (E, m)-singularity of a cube of radius L at level k compares
      max_{|x - u| <= L_{k-1}} sum_{(y, y') boundary pairs} |G(x, y; E)|
  with exp(-gamma(m, L) L), where y is the inner member of each pair.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import maximum_filter

from .lattice import Cube, ScaleSchedule, decay_exponent, gamma, max_disjoint_count
from .operator import (HamiltonianMatrix, HullPotential, SpectralData, assemble_potential,
                       green_matrix, gri_terms, resolvent_column, spectrum)

__all__ = [
    "ClassificationConfig",
    "MsaState",
    "is_resonant",
    "candidate_subcubes",
    "resonant_subcubes",
    "is_cnr",
    "ns_threshold",
    "ns_lhs",
    "is_ns",
    "pair_resonance_gap",
    "common_resonant_energy",
    "is_tunneling",
    "is_multiresonant",
    "singular_cluster_count",
    "sparse_count",
    "localization_gamma",
    "is_localized",
    "SubharmonicCheck",
    "subharmonic_check",
    "annulus_radius",
    "SubharmonicWitness",
    "radial_descent_bound",
    "GreenProfile",
    "gri_profile",
    "CubeReport",
    "classify_cube",
]


@dataclass(frozen=True)
class ClassificationConfig:
    """Level-k classification parameters.

    ``center_step`` > 1 coarsens the sub-cube center grid; verdicts of
    the form "a bad sub-cube exists" stay certified, "none exists" becomes
    "none found".  ``sparse_host_radius`` defaults to min(L_k^4, L_{k+1}).
    """

    sched: ScaleSchedule
    m: float
    k: int = 0
    center_step: int = 1
    sparse_host_radius: int | None = None

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("mass m must be positive")
        if self.k < 0:
            raise ValueError("level k must be >= 0")
        if self.center_step < 1:
            raise ValueError("center_step must be >= 1")

    @property
    def L(self) -> int:
        return self.sched.scale(self.k)

    @property
    def L_prev(self) -> int:
        return self.sched.scale(self.k - 1)

    @property
    def g_delta(self) -> float:
        return self.sched.g_delta(self.k)

    @property
    def J(self) -> int:
        return self.sched.J

    @property
    def nu(self) -> int:
        return self.sched.nu

    @property
    def coarse(self) -> bool:
        return self.center_step > 1

    def host_radius_for_sparse(self) -> int:
        if self.sparse_host_radius is not None:
            return int(self.sparse_host_radius)
        return min(self.L ** 4, self.sched.scale(self.k + 1))

    def at_level(self, k: int) -> "ClassificationConfig":
        return ClassificationConfig(self.sched, self.m, k, self.center_step, self.sparse_host_radius)


class MsaState:
    """One realisation (omega, theta) or any fixed potential, with cached cube data."""

    def __init__(self, potential, d: int = 1):
        self.potential = potential
        self.d = int(getattr(getattr(potential, "freqs", None), "d", d))
        self._H: dict[Cube, HamiltonianMatrix] = {}
        self._spec: dict[Cube, SpectralData] = {}

    @classmethod
    def from_hull(cls, ens, theta, freqs, omega, g: float) -> "MsaState":
        return cls(HullPotential(ens, theta, freqs, omega, g))

    def hamiltonian(self, cube: Cube) -> HamiltonianMatrix:
        H = self._H.get(cube)
        if H is None:
            H = self._H[cube] = assemble_potential(cube, self.potential)
        return H

    def spectrum(self, cube: Cube) -> SpectralData:
        s = self._spec.get(cube)
        if s is None:
            s = self._spec[cube] = spectrum(self.hamiltonian(cube))
        return s


# ---------------------------------------------------------------------------
# resonance


def is_resonant(spec: SpectralData, E: float, sched: ScaleSchedule, k: int) -> bool:
    """dist(spectrum, E) < g delta_k (ties are non-resonant)."""
    return bool(spec.dist(E) < sched.g_delta(k))


def candidate_subcubes(host: Cube, rmin: int, step: int = 1, rmax: int | None = None) -> list[Cube]:
    """Sub-cubes of ``host`` with radius in [rmin, rmax], host included."""
    rmax = host.radius if rmax is None else min(rmax, host.radius)
    out = []
    for r in range(max(rmin, 0), rmax + 1):
        out.extend(Cube.around(c, r) for c in host.subcube_centers(r, step))
    return out


def resonant_subcubes(host: Cube, E: float, config: ClassificationConfig, state: MsaState) -> list[Cube]:
    gd = config.g_delta
    return [q for q in candidate_subcubes(host, config.L_prev, config.center_step)
            if state.spectrum(q).dist(E) < gd]


def is_cnr(host: Cube, E: float, config: ClassificationConfig, state: MsaState) -> bool:
    """No E-resonant sub-cube of radius >= L_{k-1}, the host included."""
    gd = config.g_delta
    if state.spectrum(host).dist(E) < gd:
        return False
    for q in candidate_subcubes(host, config.L_prev, config.center_step):
        if state.spectrum(q).dist(E) < gd:
            return False
    return True


# ---------------------------------------------------------------------------
# singularity


def ns_threshold(m: float, radius: int) -> float:
    """exp(-gamma(m, L) L) for a cube of radius L (1 for a single site)."""
    return math.exp(-decay_exponent(m, radius))


def _core_and_boundary(cube: Cube, core_radius: int):
    core = Cube(cube.center, min(core_radius, cube.radius))
    rows = np.array([cube.index(x) for x in core.sites()])
    bd = cube.boundary()
    cols_all = np.array([cube.index(y) for y in bd.inner])
    cols, weights = np.unique(cols_all, return_counts=True)
    return rows, cols, weights


def ns_lhs(op: HamiltonianMatrix | SpectralData, cube: Cube, energies, core_radius: int,
           spec: SpectralData | None = None) -> np.ndarray:
    """max over the core of the boundary-summed |G(x, y; E)|, for each energy.

    With a HamiltonianMatrix the resolvent columns are obtained by direct
    (pivoted LU) solves, which keep relative accuracy in entries far below
    the largest one; with SpectralData the eigen-expansion is used.  Energies
    in the spectrum give +inf.
    """
    energies = np.atleast_1d(np.asarray(energies, dtype=float))
    rows, cols, weights = _core_and_boundary(cube, core_radius)
    if spec is None and isinstance(op, SpectralData):
        spec = op
    out = np.full(energies.shape, np.inf)
    if spec is not None:
        ok = np.array([spec.dist(E) > 1e-12 * spec.scale for E in energies], dtype=bool)
    else:
        ok = np.ones(energies.shape, dtype=bool)
    if not ok.any():
        return out
    Es = energies[ok]
    if isinstance(op, SpectralData):
        V = op.eigenvectors
        denom = op.eigenvalues[None, :] - Es[:, None]
        blocks = np.einsum("rj,ej,cj->erc", V[rows], 1.0 / denom, V[cols])
    else:
        n = cube.size
        M = op.matrix[None, :, :] - Es[:, None, None] * np.eye(n)[None]
        rhs = np.zeros((n, cols.size))
        rhs[cols, np.arange(cols.size)] = 1.0
        try:
            sol = np.linalg.solve(M, np.broadcast_to(rhs, (Es.size, n, cols.size)))
        except np.linalg.LinAlgError:
            sol = np.stack([_safe_solve(Mi, rhs) for Mi in M])
        blocks = sol[:, rows, :]
    out[ok] = np.max(np.abs(blocks) @ weights, axis=1)
    return out


def _safe_solve(M, rhs):
    try:
        return np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        return np.full(rhs.shape, np.inf)


def is_ns(op: HamiltonianMatrix | SpectralData, cube: Cube, E: float, config: ClassificationConfig,
          spec: SpectralData | None = None) -> tuple[bool, float]:
    """(E, m)-non-singularity at level k; returns (verdict, measured LHS)."""
    lhs = float(ns_lhs(op, cube, [E], config.L_prev, spec)[0])
    return bool(lhs <= ns_threshold(config.m, cube.radius)), lhs


# ---------------------------------------------------------------------------
# existential-energy reductions


def pair_resonance_gap(a, b) -> float:
    """min |lambda - mu| over the two spectra."""
    a = np.sort(np.asarray(getattr(a, "eigenvalues", a), dtype=float))
    b = np.sort(np.asarray(getattr(b, "eigenvalues", b), dtype=float))
    if a.size == 0 or b.size == 0:
        return math.inf
    i = np.clip(np.searchsorted(a, b), 1, a.size - 1) if a.size > 1 else np.zeros(b.size, dtype=int)
    best = np.min(np.abs(a[i] - b))
    if a.size > 1:
        best = min(best, np.min(np.abs(a[i - 1] - b)))
    return float(best)


def common_resonant_energy(spectra, width: float):
    """An energy within ``width`` (closed) of every spectrum, or None.

    Sweeps the endpoints of the intervals [lambda - w, lambda + w], opening
    before closing at equal coordinates.
    """
    J = len(spectra)
    if J == 0:
        return None
    events = []
    for j, s in enumerate(spectra):
        for lam in np.asarray(getattr(s, "eigenvalues", s), dtype=float):
            events.append((lam - width, 0, j))
            events.append((lam + width, 1, j))
    events.sort()
    depth = np.zeros(J, dtype=np.int64)
    covered = 0
    for x, kind, j in events:
        if kind == 0:
            depth[j] += 1
            if depth[j] == 1:
                covered += 1
                if covered == J:
                    return float(x)
        else:
            depth[j] -= 1
            if depth[j] == 0:
                covered -= 1
    return None


def is_tunneling(host: Cube, config: ClassificationConfig, state: MsaState):
    """Two disjoint partially resonant sub-cubes at a common energy.

    Returns (verdict, witness pair or None).  Since ceil(L_k^{1/4}) <= L_{k-1}
    on the schedule, each resonant cube of radius >= L_{k-1} is its own
    partially resonant container, so the test reduces to a pair of disjoint
    cubes of radius >= L_{k-1} with spectral gap <= 2 g delta_k.
    """
    if config.k < 1:
        raise ValueError("tunneling is defined for k >= 1")
    rho = math.ceil(config.L ** 0.25)
    if rho > config.L_prev:
        raise NotImplementedError("container radius exceeds L_{k-1}")
    cands = candidate_subcubes(host, config.L_prev, config.center_step)
    width = 2.0 * config.g_delta
    specs = [state.spectrum(q).eigenvalues for q in cands]
    for i, qa in enumerate(cands):
        for j in range(i + 1, len(cands)):
            qb = cands[j]
            if qa.disjoint(qb) and pair_resonance_gap(specs[i], specs[j]) <= width:
                return True, (qa, qb)
    return False, None


def is_multiresonant(host: Cube, config: ClassificationConfig, state: MsaState):
    """At least J = nu + 2 disjoint resonant radius-L_{k-1} cubes at a common E.

    Returns (verdict, witness energy or None, family).  Sweeps the left
    endpoints lambda - g delta_k, which contain every maximal intersection.
    """
    if config.k < 1:
        raise ValueError("multi-resonance is defined for k >= 1")
    r = config.L_prev
    cubes = [Cube.around(c, r) for c in host.subcube_centers(r, config.center_step)]
    w = config.g_delta
    specs = [state.spectrum(q).eigenvalues for q in cubes]
    energies = np.unique(np.concatenate([s - w for s in specs])) if specs else np.array([])
    for E in energies:
        active = [q for q, s in zip(cubes, specs) if np.any(np.abs(s - E) <= w)]
        if len(active) < config.J:
            continue
        n, fam, _ = max_disjoint_count(active)
        if n >= config.J:
            return True, float(E), fam
    return False, None, []


def singular_cluster_count(host: Cube, E: float, config: ClassificationConfig, state: MsaState):
    """Maximum number of pairwise-disjoint (E, m)-singular radius-L_k sub-cubes.

    Exact in d = 1, a certified lower bound otherwise.  Returns (count, family).
    """
    r = config.L
    if r > host.radius:
        raise ValueError("host is smaller than the sub-cube radius")
    cubes = [Cube.around(c, r) for c in host.subcube_centers(r, config.center_step)]
    singular = [q for q in cubes
                if not is_ns(state.hamiltonian(q), q, E, config, state.spectrum(q))[0]]
    n, fam, _ = max_disjoint_count(singular)
    return n, fam


def sparse_count(host: Cube, config: ClassificationConfig, state: MsaState, energies=None):
    """Largest singular-cluster count over the energies.

    Default energies: every eigenvalue of every radius-L_k sub-cube (where
    that sub-cube is singular), which is where clusters can form.  Returns
    (count, energy attaining it).
    """
    r = config.L
    cubes = [Cube.around(c, r) for c in host.subcube_centers(r, config.center_step)]
    if energies is None:
        energies = np.unique(np.concatenate([state.spectrum(q).eigenvalues for q in cubes]))
    energies = np.atleast_1d(np.asarray(energies, dtype=float))
    thr = ns_threshold(config.m, r)
    sing = np.zeros((len(cubes), energies.size), dtype=bool)
    for i, q in enumerate(cubes):
        lhs = ns_lhs(state.hamiltonian(q), q, energies, config.L_prev, state.spectrum(q))
        sing[i] = ~(lhs <= thr)
    best, best_E = 0, None
    for e in range(energies.size):
        idx = np.nonzero(sing[:, e])[0]
        if idx.size <= best:
            continue
        n, _, _ = max_disjoint_count([cubes[i] for i in idx])
        if n > best:
            best, best_E = n, float(energies[e])
    return best, best_E


# ---------------------------------------------------------------------------
# localization


def localization_gamma(config: ClassificationConfig) -> float:
    """gamma(m, L_{k-1}) for k >= 1; gamma(m, L_0) at k = 0 where L_{-1} = 0."""
    return gamma(config.m, config.L_prev if config.k >= 1 else config.sched.L0)


def is_localized(spec: SpectralData, cube: Cube, config: ClassificationConfig):
    """|psi_j(x) psi_j(y)| <= exp(-gamma |x - y|) whenever |x - y| >= L^{7/8}.

    L is the cube radius.  Returns (verdict, worst pair (x, y, j, log-excess)
    or None when no pair is far enough apart).
    """
    sites = cube.sites()
    dist = np.max(np.abs(sites[:, None, :] - sites[None, :, :]), axis=2)
    far = dist >= cube.radius ** 0.875 if cube.radius > 0 else np.zeros_like(dist, dtype=bool)
    far &= dist > 0
    if not far.any():
        return True, None
    g = localization_gamma(config)
    with np.errstate(divide="ignore"):
        logpsi = np.log(np.abs(spec.eigenvectors))  # sites x eigen-index
    # log|psi_j(x) psi_j(y)| maximised over j
    prod = logpsi[:, None, :] + logpsi[None, :, :]
    jbest = np.argmax(prod, axis=2)
    best = np.take_along_axis(prod, jbest[..., None], axis=2)[..., 0]
    excess = np.where(far, best + g * dist, -np.inf)
    fi, fj = np.nonzero(far)
    pick = int(np.argmax(excess[fi, fj]))
    i, j = fi[pick], fj[pick]
    worst = (tuple(sites[i].tolist()), tuple(sites[j].tolist()), int(jbest[i, j]), float(excess[i, j]))
    return bool(excess[i, j] <= 0.0), worst


# ---------------------------------------------------------------------------
# subharmonicity and radial descent


def _grid(values, cube: Cube) -> np.ndarray:
    return np.abs(np.asarray(values, dtype=float)).reshape((cube.side,) * cube.d)


def _boundary_distance(cube: Cube) -> np.ndarray:
    return cube.radius - np.max(np.abs(cube.sites() - np.asarray(cube.center)), axis=1)


def annulus_radius(x, cube: Cube, ell: int, S_mask) -> int | None:
    """min{r >= ell + 1 : ball_{r+ell}(x) minus ball_{r-ell}(x) lies in cube \\ S}, or None."""
    S = np.asarray(S_mask, dtype=bool).reshape(-1)
    sites = cube.sites()
    d_to = np.max(np.abs(sites - np.asarray(x)), axis=1)
    room = cube.radius - int(np.max(np.abs(np.asarray(x) - np.asarray(cube.center))))
    for r in range(ell + 1, room - ell + 1):
        ann = (d_to <= r + ell) & (d_to > r - ell)
        if not S[ann].any():
            return r
    return None


@dataclass(frozen=True)
class SubharmonicCheck:
    ok: bool
    violations: tuple
    constrained: int


def subharmonic_check(f, cube: Cube, ell: int, q: float, S_mask=None, rtol: float = 1e-9) -> SubharmonicCheck:
    """Check (ell, q, S)-subharmonicity of the site function ``f`` on ``cube``.

    Points u outside S at distance >= ell from the boundary must satisfy
    |f(u)| <= q max_{|y-u| <= ell+1} |f(y)|; points x in S need the same with
    radius r(x) + ell when r(x) exists, and are unconstrained otherwise.
    """
    if ell < 1 or not q > 0:
        raise ValueError("need ell >= 1 and q > 0")
    F = _grid(f, cube)
    flat = F.reshape(-1)
    S = np.zeros(cube.size, dtype=bool) if S_mask is None else np.asarray(S_mask, dtype=bool).reshape(-1)
    inner = _boundary_distance(cube) >= ell
    local = maximum_filter(F, size=2 * (ell + 1) + 1, mode="constant", cval=0.0).reshape(-1)
    bad, count = [], 0
    sites = cube.sites()
    for i in np.nonzero(inner)[0]:
        if S[i]:
            r = annulus_radius(sites[i], cube, ell, S)
            if r is None:
                continue
            ball = np.max(np.abs(sites - sites[i]), axis=1) <= r + ell
            m = flat[ball].max()
        else:
            m = local[i]
        count += 1
        if flat[i] > q * m * (1.0 + rtol):
            bad.append(tuple(sites[i].tolist()))
    return SubharmonicCheck(not bad, tuple(bad), count)


@dataclass(frozen=True)
class SubharmonicWitness:
    """Radial-descent bound q^{floor((L - W) / ell)} M at the cube center."""

    ell: int
    q: float
    W: int
    M: float
    exponent: int
    bound: float
    value: float

    @property
    def holds(self) -> bool:
        return self.value <= self.bound * (1.0 + 1e-12)

    @property
    def slack(self) -> float:
        """log(bound / |f(center)|); nonnegative when the bound holds."""
        if self.value == 0:
            return math.inf
        return math.log(self.bound) - math.log(self.value) if self.bound > 0 else -math.inf


def radial_descent_bound(f, cube: Cube, ell: int, q: float, S_cover=()) -> SubharmonicWitness:
    """Bound |f(center)| by q^{floor((L - W)/ell)} max|f|, W = sum of diameters 2r+1.

    The exponent is clamped at 0 when W >= L, leaving the trivial bound M.
    """
    F = _grid(f, cube).reshape(-1)
    W = int(sum(c.diameter for c in S_cover))
    M = float(F.max())
    e = max(0, (cube.radius - W) // ell)
    bound = M * q ** e
    return SubharmonicWitness(int(ell), float(q), W, M, int(e), float(bound),
                              float(F[cube.index(cube.center)]))


@dataclass(frozen=True)
class GreenProfile:
    """f(x) = G_host(x, y; E) with the subharmonicity data read off the GRI."""

    host: Cube
    y: tuple
    E: float
    ell: int
    f: np.ndarray = field(repr=False)
    q: float
    S_mask: np.ndarray = field(repr=False)
    S_cover: tuple


def gri_profile(state: MsaState, host: Cube, E: float, y, ell: int) -> GreenProfile:
    """Green-function profile and the constant q from the resolvent identity.

    For every u whose ell-cube fits inside the host and misses y,
    |f(u)| <= q(u) max_{|v-u| = ell+1} |f(v)| with q(u) the boundary sum of
    |G_{ell-cube}(u, w)|.  q is the largest q(u); the singular set S is the
    closed ell-neighbourhood of y, covered by one cube.
    """
    H = state.hamiltonian(host)
    f = resolvent_column(H, E, y)
    sites = host.sites()
    yv = np.asarray(y)
    near_y = np.max(np.abs(sites - yv), axis=1) <= ell
    inner = _boundary_distance(host) >= ell
    q = 0.0
    for i in np.nonzero(inner & ~near_y)[0]:
        u = sites[i]
        sub = Cube.around(u, ell)
        ws, _ = gri_terms(host, sub)
        Hs = state.hamiltonian(sub)
        col = resolvent_column(Hs, E, u)  # G(., u) = G(u, .)
        qu = float(sum(abs(col[sub.index(w)]) for w in ws))
        q = max(q, qu)
    cover = (Cube.around(y, ell),)
    return GreenProfile(host, tuple(yv.tolist()), float(E), int(ell), f, q, near_y, cover)


# ---------------------------------------------------------------------------
# reports


@dataclass
class CubeReport:
    center: tuple
    radius: int
    k: int
    g: float
    m: float
    energies: list
    resonant: list
    cnr: list
    ns: list
    ns_lhs: list
    tunneling: bool | None
    multiresonant: bool | None
    mr_witness: float | None
    localized: bool
    worst_pair: tuple | None
    coarse_grid: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ns_lhs"] = [v if math.isfinite(v) else "inf" for v in self.ns_lhs]
        return d

    @property
    def consistent(self) -> bool:
        """CNR at an energy excludes resonance of the host at that energy."""
        return all(not (c and r) for c, r in zip(self.cnr, self.resonant))


def classify_cube(host: Cube, config: ClassificationConfig, state: MsaState, energies=(0.0,),
                  include_spectral: bool = False) -> CubeReport:
    """Full classification of ``host`` at level ``config.k``.

    Per-energy verdicts are given for ``energies`` (plus every sub-cube
    eigenvalue when ``include_spectral``); tunneling and multi-resonance are
    existential in E and decided by the exact spectral reductions.
    """
    Es = [float(E) for E in energies]
    if include_spectral:
        extra = set()
        for q in candidate_subcubes(host, config.L_prev, config.center_step):
            extra.update(state.spectrum(q).eigenvalues.tolist())
        Es = sorted(set(Es) | extra)
    spec = state.spectrum(host)
    H = state.hamiltonian(host)
    lhs = ns_lhs(H, host, Es, config.L_prev, spec) if Es else np.array([])
    thr = ns_threshold(config.m, host.radius)
    res = [is_resonant(spec, E, config.sched, config.k) for E in Es]
    cnr = [is_cnr(host, E, config, state) for E in Es]
    tun = mr = mrE = None
    if config.k >= 1:
        tun = is_tunneling(host, config, state)[0]
        mr, mrE, _ = is_multiresonant(host, config, state)
    loc, worst = is_localized(spec, host, config)
    return CubeReport(center=host.center, radius=host.radius, k=config.k, g=config.sched.g, m=config.m,
                      energies=Es, resonant=res, cnr=cnr, ns=[bool(v <= thr) for v in lhs],
                      ns_lhs=[float(v) for v in lhs], tunneling=tun, multiresonant=mr, mr_witness=mrE,
                      localized=loc, worst_pair=worst, coarse_grid=config.coarse)
