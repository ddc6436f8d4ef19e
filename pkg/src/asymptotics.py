"""
Tracy–Widom F2 from the Airy-kernel Fredholm determinant, and the Monte Carlo
check of the KPZ scaling of x_m under the step initial condition.

Airy values come from the Maclaurin series (summed by mpmath at
AIRY_SERIES_DPS digits) for |x| <= AIRY_SERIES_RADIUS and from the optimally
truncated asymptotic expansions beyond it.
"""
import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence

import mpmath
import numpy as np

from config.config import (
    AIRY_DOMAIN,
    AIRY_SERIES_DPS,
    AIRY_SERIES_RADIUS,
    DEFAULT_SEED,
    F2_DEFAULT_ORDER,
)
from src.model import Configuration, ModelParams
from src.simulator import SimConfig, order_statistic_samples
from utils.errors import ToleranceError, ValidationError
from utils.linalg import lu_det
from utils.quadrature import gauss_legendre, half_line_algebraic

logger = logging.getLogger(__name__)

F2_DOMAIN = (-10.0, 6.0)
F2_CONVERGENCE_TOLERANCE = 1e-10
# truncated interval [s, max(F2_RIGHT_END, s + F2_MIN_LENGTH)]
F2_RIGHT_END = 8.0
F2_MIN_LENGTH = 8.0
DIAGONAL_GAP = 1e-6
AIRY_CROSSOVER_TOLERANCE = 1e-11
ODE_STEP = 2e-3

Transform = Literal["truncated", "algebraic"]

_ASYMPTOTIC_TERMS = 48


def _asymptotic_coefficients(n):
    """u_k and v_k of the Airy asymptotic expansions."""
    u = np.empty(n)
    u[0] = 1.0
    for k in range(1, n):
        u[k] = u[k - 1] * (6 * k - 5) * (6 * k - 3) * (6 * k - 1) / (216.0 * (2 * k - 1) * k)
    k = np.arange(n)
    v = -(6 * k + 1) / (6 * k - 1) * u
    return u, v


_U, _V = _asymptotic_coefficients(_ASYMPTOTIC_TERMS)


def _check_domain(x):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValidationError("Airy argument must be finite")
    worst = float(np.max(np.abs(arr))) if arr.size else 0.0
    if worst > AIRY_DOMAIN:
        raise ValidationError(f"Airy argument {worst} outside |x| <= {AIRY_DOMAIN}")
    return arr


def _airy_series(x):
    """(Ai, Ai') from the two Maclaurin solutions f, g with Ai = c1 f - c2 g."""
    with mpmath.workdps(AIRY_SERIES_DPS):
        x = mpmath.mpf(x)
        z = x ** 3 / 9
        third = mpmath.mpf(1) / 3
        c1 = 1 / (mpmath.cbrt(9) * mpmath.gamma(2 * third))
        c2 = 1 / (mpmath.cbrt(3) * mpmath.gamma(third))
        f = mpmath.hyp0f1(2 * third, z)
        g = x * mpmath.hyp0f1(4 * third, z)
        df = x ** 2 / 2 * mpmath.hyp0f1(5 * third, z)
        dg = mpmath.hyp0f1(third, z)
        return float(c1 * f - c2 * g), float(c1 * df - c2 * dg)


def _airy_asymptotic(x):
    """(Ai, Ai') from the large-|x| expansions, cut at the smallest term."""
    z = abs(x)
    zeta = 2.0 / 3.0 * z ** 1.5
    k = np.arange(_ASYMPTOTIC_TERMS)
    powers = zeta ** (-k.astype(float))
    tu = _U * powers
    tv = _V * powers
    stop = int(np.argmin(np.abs(tu))) + 1
    tu, tv, k = tu[:stop], tv[:stop], k[:stop]

    if x > 0:
        sign = (-1.0) ** k
        pref = math.exp(-zeta) / (2.0 * math.sqrt(math.pi))
        ai = pref * z ** -0.25 * float(np.sum(sign * tu))
        aip = -pref * z ** 0.25 * float(np.sum(sign * tv))
        return ai, aip

    sign = (-1.0) ** (k // 2)
    even = k % 2 == 0
    theta = zeta - math.pi / 4.0
    c, s = math.cos(theta), math.sin(theta)
    u_even = float(np.sum((sign * tu)[even]))
    u_odd = float(np.sum((sign * tu)[~even]))
    v_even = float(np.sum((sign * tv)[even]))
    v_odd = float(np.sum((sign * tv)[~even]))
    ai = (c * u_even + s * u_odd) / (math.sqrt(math.pi) * z ** 0.25)
    aip = z ** 0.25 * (s * v_even - c * v_odd) / math.sqrt(math.pi)
    return ai, aip


@functools.lru_cache(maxsize=1 << 16)
def _airy_pair(x: float):
    if abs(x) <= AIRY_SERIES_RADIUS:
        return _airy_series(x)
    return _airy_asymptotic(x)


def airy_values(x):
    """Ai and Ai' at x (scalar or array), |x| <= AIRY_DOMAIN."""
    arr = _check_domain(x)
    pairs = [_airy_pair(float(v)) for v in arr.ravel()]
    ai = np.array([p[0] for p in pairs], dtype=float).reshape(arr.shape)
    aip = np.array([p[1] for p in pairs], dtype=float).reshape(arr.shape)
    if arr.ndim == 0:
        return float(ai), float(aip)
    return ai, aip


def airy_ai(x):
    return airy_values(x)[0]


def airy_ai_prime(x):
    return airy_values(x)[1]


def airy_crossover_gap(points: Sequence[float] = (-9.0, -8.5, -8.0, 8.0, 8.5, 9.0)) -> float:
    """
    Largest disagreement between the series and the asymptotic expansions
    for Ai and Ai' over ``points`` near the crossover radius.
    """
    gap = 0.0
    for x in points:
        _check_domain(x)
        series = _airy_series(x)
        asym = _airy_asymptotic(x)
        gap = max(gap, abs(series[0] - asym[0]), abs(series[1] - asym[1]))
    logger.debug(f"Airy crossover gap {gap:.3e} over {list(points)}")
    return gap


def check_airy_crossover(tol: float = AIRY_CROSSOVER_TOLERANCE) -> float:
    gap = airy_crossover_gap()
    if gap > tol:
        raise ToleranceError(f"Airy series/asymptotic crossover gap {gap:.3e} exceeds {tol:.1e}", gap, tol)
    return gap


def airy_ode_residual(x: float, h: float = ODE_STEP) -> float:
    """
    |Ai''(x) - x Ai(x)| with Ai'' from a Richardson-extrapolated central
    difference of Ai'. Neighbouring points are evaluated on the same branch
    (series or asymptotic) as x itself.
    """
    _check_domain([x - h, x + h])
    branch = _airy_series if abs(x) <= AIRY_SERIES_RADIUS else _airy_asymptotic

    def central(step):
        return (branch(x + step)[1] - branch(x - step)[1]) / (2.0 * step)

    second = (4.0 * central(h / 2.0) - central(h)) / 3.0
    return abs(second - x * branch(x)[0])


def airy_kernel(x, y):
    """
    K_Airy(x, y) = (Ai(x)Ai'(y) - Ai'(x)Ai(y)) / (x - y), broadcasting over
    x and y; the diagonal value Ai'(x)^2 - x Ai(x)^2 is used when
    |x - y| < DIAGONAL_GAP.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ax, dax = airy_values(x)
    ay, day = airy_values(y)
    diff = x - y
    close = np.abs(diff) < DIAGONAL_GAP
    safe = np.where(close, 1.0, diff)
    off = (ax * day - dax * ay) / safe
    diag = dax ** 2 - x * ax ** 2
    out = np.where(close, diag, off)
    if out.ndim == 0:
        return float(out)
    return out


def f2_nodes(s: float, order: int, transform: Transform = "truncated"):
    """Gauss–Legendre nodes and weights standing in for (s, inf)."""
    if order < 1:
        raise ValidationError(f"quadrature order must be positive, got {order}")
    if transform == "truncated":
        return gauss_legendre(order, s, max(F2_RIGHT_END, s + F2_MIN_LENGTH))
    if transform == "algebraic":
        x, w = half_line_algebraic(order, s)
        # Ai is below 1e-70 past the Airy domain
        keep = x <= AIRY_DOMAIN
        return np.where(keep, x, AIRY_DOMAIN), np.where(keep, w, 0.0)
    raise ValidationError(f"unknown F2 transform {transform!r} (expected 'truncated' or 'algebraic')")


def _f2_value(s, order, transform):
    x, w = f2_nodes(s, order, transform)
    root = np.sqrt(w)
    a = root[:, None] * airy_kernel(x[:, None], x[None, :]) * root[None, :]
    det = float(np.real(lu_det(np.eye(order) - a)))
    return min(1.0, max(0.0, det))


def f2(s: float, order: int = F2_DEFAULT_ORDER, transform: Transform = "truncated",
       check: bool = False) -> float:
    """
    Tracy–Widom GUE distribution F2(s) = det(I - K_Airy) on L^2(s, inf),
    evaluated by symmetrized Nyström quadrature.

    Args:
        s: argument in F2_DOMAIN
        order: Gauss–Legendre node count
        transform: "truncated" for [s, max(8, s + 8)], "algebraic" for
            xi = s + w/(1 - w)
        check: also evaluate at 2 * order and raise ToleranceError when the two
            disagree by more than F2_CONVERGENCE_TOLERANCE

    Returns:
        F2(s) in [0, 1]
    """
    if not F2_DOMAIN[0] <= s <= F2_DOMAIN[1]:
        raise ValidationError(f"F2 argument s={s} outside [{F2_DOMAIN[0]}, {F2_DOMAIN[1]}]")
    value = _f2_value(s, order, transform)
    if check:
        finer = _f2_value(s, 2 * order, transform)
        delta = abs(finer - value)
        if delta > F2_CONVERGENCE_TOLERANCE:
            raise ToleranceError(
                f"F2({s}) not converged: orders {order} and {2 * order} differ by {delta:.3e}",
                delta, F2_CONVERGENCE_TOLERANCE,
            )
        value = finer
    return value


def f2_grid(s_values, order: int = F2_DEFAULT_ORDER, transform: Transform = "truncated") -> np.ndarray:
    return np.array([f2(float(s), order, transform) for s in np.asarray(s_values, dtype=float)])


@dataclass(frozen=True)
class ScalingConstants:
    """Centering and scale of x_m(t/gamma) for m = sigma * t."""

    sigma: float
    c1: float
    c2: float


def scaling_constants(sigma: float) -> ScalingConstants:
    if not (math.isfinite(sigma) and 0.0 < sigma < 1.0):
        raise ValidationError(f"sigma must lie in (0, 1), got {sigma}")
    root = math.sqrt(sigma)
    return ScalingConstants(
        sigma=sigma,
        c1=-1.0 + 2.0 * root,
        c2=sigma ** (-1.0 / 6.0) * (1.0 - root) ** (2.0 / 3.0),
    )


def tw_limit(s_grid, order: int = F2_DEFAULT_ORDER) -> np.ndarray:
    """
    Limit CDF s -> 1 - F2(-s) of the rescaled x_m. Arguments with -s outside
    F2_DOMAIN take the saturated values 0 (F2 = 1) and 1 (F2 = 0).
    """
    s = np.asarray(s_grid, dtype=float)
    out = np.empty_like(s)
    for i, value in enumerate(s):
        arg = -value
        if arg > F2_DOMAIN[1]:
            out[i] = 0.0
        elif arg < F2_DOMAIN[0]:
            out[i] = 1.0
        else:
            out[i] = 1.0 - f2(arg, order)
    return out


def default_s_grid() -> np.ndarray:
    return np.round(np.linspace(-3.0, 5.0, 81), 10)


@dataclass(frozen=True)
class TWComparison:
    """Rescaled empirical CDF of x_m against its Tracy–Widom limit."""

    s: np.ndarray
    empirical: np.ndarray
    limit: np.ndarray
    stderr: np.ndarray
    ks_distance: float
    scaling: ScalingConstants
    m: int
    t: float
    replicas: int
    rescaled: np.ndarray = field(repr=False)

    def rows(self) -> List[tuple]:
        return [
            (float(s), float(e), float(l), float(se))
            for s, e, l, se in zip(self.s, self.empirical, self.limit, self.stderr)
        ]

    def summary(self) -> Dict[str, float]:
        return {
            "ks_distance": self.ks_distance,
            "sigma_realized": self.scaling.sigma,
            "c1": self.scaling.c1,
            "c2": self.scaling.c2,
            "m": self.m,
            "t": self.t,
            "replicas": self.replicas,
        }


def tw_experiment(sigma: float, t: float, params: ModelParams, replicas: int,
                  seed: int = DEFAULT_SEED, s_grid=None, n_big: Optional[int] = None,
                  step_scheme: Literal["stack", "infinite"] = "stack",
                  order: int = F2_DEFAULT_ORDER, workers: Optional[int] = None) -> TWComparison:
    """
    Simulate the step initial condition to physical time t/gamma and compare
    the law of (x_m + c1 t) / (c2 t^(1/3)) with s -> 1 - F2(-s).

    m is round(sigma * t); the realized m / t sets c1 and c2. ``n_big``
    defaults to max(64, 4m).
    """
    if not params.is_one_parameter:
        raise ValidationError(f"the scaling limit needs one-parameter rates (p = u), got u={params.u}, p={params.p}")
    if not (math.isfinite(t) and t > 0):
        raise ValidationError(f"time must be positive, got {t}")
    scaling_constants(sigma)
    m = int(round(sigma * t))
    if m < 1:
        raise ValidationError(f"sigma * t = {sigma * t} rounds to no particle")
    scaling = scaling_constants(m / t)
    if n_big is None:
        n_big = max(64, 4 * m)
    s = default_s_grid() if s_grid is None else np.asarray(s_grid, dtype=float)
    if s.size == 0:
        raise ValidationError("empty s-grid")

    simcfg = SimConfig.build(
        params=params,
        init=Configuration.step_initial(0),
        t_end_physical=t / params.gamma,
        replicas=replicas,
        seed=seed,
        n_big=n_big,
        step_scheme=step_scheme,
    )
    logger.info(
        f"Tracy–Widom run: m={m} t={t} (physical {simcfg.t_end_physical:.3f}), "
        f"sigma={scaling.sigma:.4f}, replicas={replicas}, n_big={n_big}, scheme={step_scheme}"
    )
    samples = order_statistic_samples(simcfg, m, workers)
    rescaled = (samples + scaling.c1 * t) / (scaling.c2 * t ** (1.0 / 3.0))

    ordered = np.sort(rescaled)
    empirical = np.searchsorted(ordered, s, side="right") / len(ordered)
    stderr = np.sqrt(empirical * (1.0 - empirical) / len(ordered))
    limit = tw_limit(s, order)
    ks = float(np.max(np.abs(empirical - limit)))
    logger.info(f"Kolmogorov–Smirnov distance {ks:.4f} at t={t}")
    return TWComparison(
        s=s, empirical=empirical, limit=limit, stderr=stderr, ks_distance=ks,
        scaling=scaling, m=m, t=t, replicas=len(ordered), rescaled=rescaled,
    )
