"""
Exact finite-system probabilities.

Two independent routes to P^Y(x_m(t) <= x) for a handful of particles:
    - the Kolmogorov forward equations on a truncated lattice window;
    - the multi-contour integral over subsets S of particle labels.
Plus the two algebraic identities the contour formula rests on.
"""
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.integrate import solve_ivp

from config.config import (
    DENOMINATOR_FLOOR,
    IMAG_RESIDUAL_FINITE,
    MASTER_ATOL,
    MASTER_LEAK_THRESHOLD,
    MASTER_RTOL,
    MASTER_WINDOW_HALF_WIDTH,
    QUAD_TOLERANCE,
)
from src.model import (
    DistributionResult,
    Estimate,
    ModelParams,
    left_rates,
    right_rates,
    uv_bracket_binomial,
)
from utils.errors import ToleranceError, ValidationError, WindowLeakError
from utils.quadrature import circle_nodes, node_count

logger = logging.getLogger(__name__)

MAX_EXACT_PARTICLES = 4


def _check_particles(Y, m):
    if not 1 <= len(Y) <= MAX_EXACT_PARTICLES:
        raise ValidationError(f"exact evaluation supports 1..{MAX_EXACT_PARTICLES} particles, got {len(Y)}")
    if not 1 <= m <= len(Y):
        raise ValidationError(f"particle index m={m} outside 1..{len(Y)}")


# ---------------------------------------------------------------------------
# Master equation
# ---------------------------------------------------------------------------

@dataclass
class TruncatedLattice:
    """All sorted N-tuples of positions inside [x_lo, x_hi], indexed."""

    x_lo: int
    x_hi: int
    n_particles: int
    states: List[Tuple[int, ...]] = field(init=False)
    index: Dict[Tuple[int, ...], int] = field(init=False)

    def __post_init__(self):
        if self.x_hi < self.x_lo:
            raise ValidationError(f"empty lattice window [{self.x_lo}, {self.x_hi}]")
        sites = range(self.x_lo, self.x_hi + 1)
        self.states = list(itertools.combinations_with_replacement(sites, self.n_particles))
        self.index = {s: i for i, s in enumerate(self.states)}

    @property
    def size(self):
        return len(self.states)

    def generator(self, params: ModelParams) -> sparse.csr_matrix:
        """
        Forward generator A with dp/dt = A p.

        Jumps leaving the window are kept on the diagonal as outflow, so
        1 - sum(p) measures the mass lost to truncation.
        """
        n = self.n_particles
        right = right_rates(n, params)
        left = left_rates(n, params)
        rows, cols, vals = [], [], []
        diag = np.zeros(self.size)
        for i, state in enumerate(self.states):
            for site, count in _stacks(state):
                for k in range(1, count + 1):
                    for step, rate in ((1, right[k - 1]), (-1, left[k - 1])):
                        if rate == 0.0:
                            continue
                        diag[i] -= rate
                        target = _move(state, site, k, step)
                        j = self.index.get(target)
                        if j is not None:
                            rows.append(j)
                            cols.append(i)
                            vals.append(rate)
        rows.extend(range(self.size))
        cols.extend(range(self.size))
        vals.extend(diag)
        return sparse.csr_matrix((vals, (rows, cols)), shape=(self.size, self.size))


def _stacks(state):
    out = []
    for site in state:
        if out and out[-1][0] == site:
            out[-1][1] += 1
        else:
            out.append([site, 1])
    return out


def _move(state, site, k, step):
    moved = list(state)
    first = moved.index(site)
    for i in range(first, first + k):
        moved[i] = site + step
    return tuple(sorted(moved))


def _evolve(lattice: TruncatedLattice, y0, t_physical, params):
    a = lattice.generator(params)

    def rhs(_, p):
        return a @ p

    logger.info(f"Master equation: {lattice.size} states on [{lattice.x_lo}, {lattice.x_hi}], t={t_physical:g}")
    sol = solve_ivp(rhs, (0.0, t_physical), y0, method="DOP853", rtol=MASTER_RTOL, atol=MASTER_ATOL)
    if not sol.success:
        logger.warning(f"DOP853 failed ({sol.message}); retrying with BDF")
        sol = solve_ivp(rhs, (0.0, t_physical), y0, method="BDF", jac=a, rtol=MASTER_RTOL, atol=MASTER_ATOL)
        if not sol.success:
            raise ToleranceError(f"master equation integration failed: {sol.message}")
    return sol.y[:, -1]


def master_equation_cdf(Y: Sequence[int], m: int, x_grid, t_physical: float, params: ModelParams,
                        window: Optional[Tuple[int, int]] = None,
                        leak_threshold: float = MASTER_LEAK_THRESHOLD) -> DistributionResult:
    """P^Y(x_m(t) <= x) for every x in ``x_grid`` from one forward integration."""
    Y = tuple(sorted(int(y) for y in Y))
    _check_particles(Y, m)
    if t_physical < 0:
        raise ValidationError(f"time must be non-negative, got {t_physical}")
    x_grid = [int(x) for x in x_grid]
    if window is None:
        window = (Y[0] - MASTER_WINDOW_HALF_WIDTH, Y[-1] + MASTER_WINDOW_HALF_WIDTH)
    meta = {"method": "master_equation", "Y": list(Y), "m": m, "t_physical": t_physical,
            "window": list(window)}

    if t_physical == 0.0:
        values = [float(Y[m - 1] <= x) for x in x_grid]
        return DistributionResult.from_estimates(x_grid, [Estimate(v) for v in values], {**meta, "leak": 0.0})

    lattice = TruncatedLattice(window[0], window[1], len(Y))
    if Y not in lattice.index:
        raise ValidationError(f"initial positions {Y} lie outside the window {window}")
    y0 = np.zeros(lattice.size)
    y0[lattice.index[Y]] = 1.0
    p = _evolve(lattice, y0, t_physical, params)

    leak = max(0.0, 1.0 - float(np.sum(p)))
    meta["leak"] = leak
    if leak > leak_threshold:
        raise WindowLeakError(f"window {window} leaked {leak:.3e} of the mass (threshold {leak_threshold:.0e})",
                              value=leak, threshold=leak_threshold)
    if leak > 0.1 * leak_threshold:
        logger.warning(f"Window leak {leak:.2e} is within a decade of the threshold")

    xm = np.array([s[m - 1] for s in lattice.states])
    estimates = [Estimate(float(np.sum(p[xm <= x])), leak) for x in x_grid]
    return DistributionResult.from_estimates(x_grid, estimates, meta)


def master_equation_prob(Y: Sequence[int], m: int, x: int, t_physical: float, params: ModelParams,
                         window: Optional[Tuple[int, int]] = None) -> Estimate:
    """Single-point P^Y(x_m(t) <= x); ``error`` is the window leak."""
    result = master_equation_cdf(Y, m, [x], t_physical, params, window)
    return Estimate(float(result.values[0]), float(result.errors[0]), result.meta)


# ---------------------------------------------------------------------------
# Multi-contour formula
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SubsetTerm:
    """An index set S = {z_1 < ... < z_k} of particle labels (1-based)."""

    S: Tuple[int, ...]

    @property
    def k(self):
        return len(self.S)

    @property
    def sigma_S(self):
        return sum(self.S)

    def prefactor(self, m: int, params: ModelParams) -> float:
        k = self.k
        u, v = params.u, params.v
        return ((-1) ** m * (u * v) ** (m * (m - 1) // 2)
                * uv_bracket_binomial(k - 1, k - m, params)
                * v ** (self.sigma_S - m * k)
                / u ** (self.sigma_S - k * (k + 1) // 2))


def subset_terms(N: int, m: int) -> List[SubsetTerm]:
    """All S with |S| >= m, enumerated by bitmask."""
    terms = []
    for mask in range(1, 1 << N):
        S = tuple(i + 1 for i in range(N) if mask >> i & 1)
        if len(S) >= m:
            terms.append(SubsetTerm(S))
    return terms


def default_radii(N: int, params: ModelParams) -> List[float]:
    step = (1.0 / params.tau - 1.0) / (N + 2)
    return [1.0 + i * step for i in range(1, N + 1)]


def _check_radii(radii, params):
    inv_tau = 1.0 / params.tau
    for i, r in enumerate(radii):
        if not 1.0 < r < inv_tau:
            raise ValidationError(f"contour radius R_{i + 1}={r} outside (1, 1/tau={inv_tau:.6g})")
        if i and r <= radii[i - 1]:
            raise ValidationError(f"contour radii must increase, got R_{i}={radii[i - 1]} >= R_{i + 1}={r}")


def aliasing_ratio(radii, params: ModelParams) -> float:
    """
    Worst radius ratio between a contour and the nearest singularity across it.

    Inside C_i: the pole at 1 and, for j < i, the pair pole u/(1 - v xi_j).
    Outside C_i: for j > i, the pair pole 1/v - u/(v xi_j).
    """
    u, v = params.u, params.v
    worst = 0.0
    for i, r in enumerate(radii):
        worst = max(worst, 1.0 / r)
        for j, rj in enumerate(radii):
            if j < i:
                worst = max(worst, u / (1.0 - v * rj) / r)
            elif j > i:
                worst = max(worst, r / (1.0 / v - u / (v * rj)))
    if worst >= 1.0:
        raise ValidationError(f"radii {radii} leave a pole on a contour (ratio {worst:.4f})")
    return worst


def _kfold(g: List[np.ndarray], pair: Dict[Tuple[int, int], np.ndarray]) -> complex:
    """sum over node tuples of prod_i g_i * prod_{i<j} pair[i,j]."""
    k = len(g)
    if k == 1:
        return complex(np.sum(g[0]))
    if k == 2:
        return complex(g[0] @ pair[0, 1] @ g[1])
    total = 0.0 + 0.0j
    rest_pairs = {(i - 1, j - 1): a for (i, j), a in pair.items() if i > 0}
    for a in range(len(g[0])):
        rest_g = [g[l] * pair[0, l][a, :] for l in range(1, k)]
        total += g[0][a] * _kfold(rest_g, rest_pairs)
    return total


class ContourGrid:
    """Per-particle circle nodes for the multi-contour formula."""

    def __init__(self, params: ModelParams, N: int, radii=None, nodes=None, tol=QUAD_TOLERANCE):
        self.params = params
        self.radii = list(radii) if radii is not None else default_radii(N, params)
        if len(self.radii) != N:
            raise ValidationError(f"need {N} radii, got {len(self.radii)}")
        _check_radii(self.radii, params)
        self.ratio = aliasing_ratio(self.radii, params)
        if nodes is None:
            nodes = node_count(self.ratio, tol)
        self.nodes = int(nodes)
        self.xi = []
        self.w = []
        for r in self.radii:
            z, w = circle_nodes(r, self.nodes)
            self.xi.append(z)
            self.w.append(w)
        self._pairs = {}
        self.min_den = self._min_denominator()

    def pair_factor(self, i: int, j: int) -> np.ndarray:
        """(xi_i - xi_j)/(u + v xi_i xi_j - xi_j) on the node grid, i < j (0-based labels)."""
        key = (i, j)
        if key not in self._pairs:
            a = self.xi[i][:, None]
            b = self.xi[j][None, :]
            self._pairs[key] = (a - b) / (self.params.u + self.params.v * a * b - b)
        return self._pairs[key]

    def _min_denominator(self) -> float:
        """Smallest |u + v xi_i xi_j - xi_j| over the grid; the pole-avoidance report."""
        u, v = self.params.u, self.params.v
        best = math.inf
        for i in range(len(self.radii)):
            for j in range(i + 1, len(self.radii)):
                a = self.xi[i][:, None]
                b = self.xi[j][None, :]
                best = min(best, float(np.min(np.abs(u + v * a * b - b))))
        return best


def contour_prob_finite(Y: Sequence[int], m: int, x: int, t: float, params: ModelParams,
                        nodes: Optional[int] = None, radii=None, grid: Optional[ContourGrid] = None) -> Estimate:
    """
    P^Y(x_m(t) <= x) from the sum over index sets S, |S| >= m.

    ``t`` enters the integrand as exp(eps(xi) t) and is the time of the
    finite system itself. Every k-fold integral uses the periodic trapezoid
    rule; ``error`` is the imaginary residual of the sum.
    """
    Y = tuple(sorted(int(y) for y in Y))
    _check_particles(Y, m)
    if t < 0:
        raise ValidationError(f"time must be non-negative, got {t}")
    N = len(Y)
    if grid is None:
        grid = ContourGrid(params, N, radii, nodes)
    min_den = grid.min_den
    if min_den < DENOMINATOR_FLOOR:
        raise ToleranceError(f"contour grid passes within {min_den:.2e} of a pair pole",
                             value=min_den, threshold=DENOMINATOR_FLOOR)

    p, q = params.p, params.q
    single = []
    for i in range(N):
        xi = grid.xi[i]
        eps = p / xi + q * xi - 1.0
        single.append(grid.w[i] * xi ** (x - Y[i]) * np.exp(eps * t) / (1.0 - xi))

    total = 0.0 + 0.0j
    for term in subset_terms(N, m):
        labels = [z - 1 for z in term.S]
        g = [single[z] for z in labels]
        pairs = {(a, b): grid.pair_factor(labels[a], labels[b])
                 for a in range(term.k) for b in range(a + 1, term.k)}
        total += term.prefactor(m, params) * _kfold(g, pairs)

    residual = abs(total.imag)
    details = {"nodes": grid.nodes, "radii": grid.radii, "aliasing_ratio": grid.ratio,
               "min_denominator": min_den}
    if residual > IMAG_RESIDUAL_FINITE:
        raise ToleranceError(f"imaginary residual {residual:.2e} exceeds {IMAG_RESIDUAL_FINITE:.0e} "
                             f"(radii {grid.radii}, {grid.nodes} nodes)",
                             value=residual, threshold=IMAG_RESIDUAL_FINITE)
    return Estimate(float(total.real), residual, details)


def contour_cdf_finite(Y: Sequence[int], m: int, x_grid, t: float, params: ModelParams,
                       nodes: Optional[int] = None, radii=None) -> DistributionResult:
    grid = ContourGrid(params, len(Y), radii, nodes)
    estimates = [contour_prob_finite(Y, m, x, t, params, grid=grid) for x in x_grid]
    meta = {"method": "contour", "Y": sorted(int(y) for y in Y), "m": m, "t": t,
            "nodes": grid.nodes, "radii": grid.radii}
    return DistributionResult.from_estimates(x_grid, estimates, meta)


# ---------------------------------------------------------------------------
# Algebraic identities
# ---------------------------------------------------------------------------

def strict_partition_sum_check(k: int, tau: float, N_cap: int) -> Tuple[float, float]:
    """
    Sum of tau^(z_1 + ... + z_k) over strict k-subsets of {1..N_cap} against
    tau^(k(k+1)/2) / prod_{i<=k}(1 - tau^i).

    The subsets are not enumerated: the left side is the elementary symmetric
    polynomial e_k(tau, tau^2, ..., tau^N_cap), built by the one-variable-at-a-time
    recurrence e_j <- e_j + tau^z e_{j-1}, which equals the strict-subset sum term
    for term. Cost is O(k N_cap).
    """
    if not 1 <= k <= 6:
        raise ValidationError(f"strict partition check supports 1 <= k <= 6, got {k}")
    if N_cap < k:
        raise ValidationError(f"N_cap={N_cap} smaller than k={k}")
    # elementary symmetric polynomial e_k(tau, tau^2, ..., tau^N_cap)
    e = np.zeros(k + 1)
    e[0] = 1.0
    for z in range(1, N_cap + 1):
        e[1:] = e[1:] + tau ** z * e[:-1]
    lhs = float(e[k])
    rhs = tau ** (k * (k + 1) // 2) / float(np.prod([1.0 - tau ** i for i in range(1, k + 1)]))
    return lhs, rhs


def _symmetrized(points: np.ndarray, params: ModelParams) -> np.ndarray:
    u, v = params.u, params.v
    k = points.shape[1]
    total = np.zeros(points.shape[0], dtype=complex)
    for perm in itertools.permutations(range(k)):
        prod = np.ones(points.shape[0], dtype=complex)
        for i in range(k):
            for j in range(i + 1, k):
                a = points[:, perm[i]]
                b = points[:, perm[j]]
                prod *= (u + v * a * b - a) / (b - a)
        total += prod
    return total


def symmetrization_identity_check(k: int, params: ModelParams, samples: int = 100, seed: int = 0,
                                  min_separation: float = 1e-6) -> float:
    """
    Max |lhs - rhs| of the symmetrization identity over random complex points,
    rhs = u^(k(k-1)/2) prod_{i<=k}(1 - tau^i)/(1 - tau).
    """
    if not 1 <= k <= 5:
        raise ValidationError(f"symmetrization check supports 1 <= k <= 5, got {k}")
    rng = np.random.default_rng(seed)
    points = np.empty((samples, k), dtype=complex)
    for s in range(samples):
        while True:
            z = rng.uniform(0.5, 1.5, k) * np.exp(2j * np.pi * rng.random(k))
            gaps = np.abs(z[:, None] - z[None, :]) + np.eye(k)
            if np.min(gaps) >= min_separation:
                break
        points[s] = z
    tau = params.tau
    rhs = params.u ** (k * (k - 1) // 2) * np.prod([(1.0 - tau ** i) / (1.0 - tau) for i in range(1, k + 1)])
    lhs = _symmetrized(points, params)
    return float(np.max(np.abs(lhs - rhs)))
