"""
Model core: parameters, q-deformed combinatorics, jump rates and configurations
of the multi-particle hopping asymmetric diffusion model (MADM).
"""
import enum
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
from scipy.stats import poisson
from pydantic import BaseModel, ConfigDict, Field, model_validator
from pydantic import ValidationError as PydanticValidationError

from config.config import BRACKET_BINOMIAL_CAP, CONSTRAINT_TOLERANCE
from utils.errors import ValidationError

logger = logging.getLogger(__name__)


class Infinity(enum.Enum):
    """Distinguished value for an infinite stack or an infinite index."""

    INFINITE = "inf"

    def __repr__(self):
        return "INFINITE"


INFINITE = Infinity.INFINITE
INFINITY = Infinity.INFINITE

StackSize = Union[int, Infinity]


class ModelParams(BaseModel):
    """
    Asymmetry parameters of the two-parameter MADM.

    Built from (u, p); v, q, tau and gamma are derived once and stored so that
    every consumer sees the same rounding of v/u.
    """

    model_config = ConfigDict(frozen=True)

    u: float = Field(gt=0.5, lt=1.0)
    p: float = Field(ge=0.0, le=1.0)
    v: float
    q: float
    tau: float
    gamma: float

    @model_validator(mode="before")
    @classmethod
    def _derive(cls, data):
        if isinstance(data, dict) and "u" in data and "p" in data:
            data = dict(data)
            u, p = float(data["u"]), float(data["p"])
            data.setdefault("v", 1.0 - u)
            data.setdefault("q", 1.0 - p)
            data.setdefault("tau", (1.0 - u) / u)
            data.setdefault("gamma", u - (1.0 - u))
        return data

    @model_validator(mode="after")
    def _check(self):
        if abs(self.u + self.v - 1.0) > CONSTRAINT_TOLERANCE:
            raise ValueError(f"u + v must equal 1, got {self.u + self.v!r}")
        if abs(self.p + self.q - 1.0) > CONSTRAINT_TOLERANCE:
            raise ValueError(f"p + q must equal 1, got {self.p + self.q!r}")
        if not self.u > self.v > 0.0:
            raise ValueError(f"u > v > 0 required, got u={self.u}, v={self.v}")
        if abs(self.tau - self.v / self.u) > CONSTRAINT_TOLERANCE:
            raise ValueError(f"tau must equal v/u, got {self.tau}")
        if abs(self.gamma - (self.u - self.v)) > CONSTRAINT_TOLERANCE:
            raise ValueError(f"gamma must equal u - v, got {self.gamma}")
        return self

    @classmethod
    def from_up(cls, u: float, p: float) -> "ModelParams":
        try:
            return cls(u=u, p=p)
        except PydanticValidationError as e:
            raise ValidationError(f"invalid model parameters (u={u}, p={p}): {e}") from e

    @classmethod
    def one_parameter(cls, u: float) -> "ModelParams":
        """One-parameter rates: p = u, q = v."""
        return cls.from_up(u, u)

    @property
    def is_one_parameter(self) -> bool:
        return abs(self.p - self.u) <= CONSTRAINT_TOLERANCE

    def to_json(self) -> str:
        return json.dumps({"u": self.u, "p": self.p})

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ValidationError(f"parameters are not valid JSON: {e}") from e
        if not isinstance(data, dict) or "u" not in data or "p" not in data:
            raise ValidationError("parameter JSON must be an object with keys 'u' and 'p'")
        return cls.from_up(data["u"], data["p"])


class QueryPoint(BaseModel):
    """Particle index m, formula time t (physical time t/gamma) and position x."""

    model_config = ConfigDict(frozen=True)

    m: int = Field(ge=1)
    t: float = Field(gt=0.0)
    x: int

    @classmethod
    def of(cls, m: int, t: float, x: int) -> "QueryPoint":
        try:
            return cls(m=m, t=t, x=x)
        except PydanticValidationError as e:
            raise ValidationError(f"invalid query point (m={m}, t={t}, x={x}): {e}") from e

    def physical_time(self, params: ModelParams) -> float:
        return self.t / params.gamma


# ---------------------------------------------------------------------------
# q-combinatorics
# ---------------------------------------------------------------------------

def _check_tau(tau: float):
    if not 0.0 < tau < 1.0:
        raise ValidationError(f"tau must lie in (0,1), got {tau}")


def q_bracket(n: StackSize, tau: float) -> float:
    """[n]_tau = (1 - tau^n)/(1 - tau); [INFINITY]_tau = 1/(1 - tau)."""
    _check_tau(tau)
    if n is INFINITY:
        return 1.0 / (1.0 - tau)
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
        raise ValidationError(f"q_bracket needs a positive integer or INFINITY, got {n!r}")
    return (1.0 - tau ** int(n)) / (1.0 - tau)


def rate_right(n: StackSize, params: ModelParams) -> float:
    """R_n = p/[n]_tau, with R_INFINITY = p(1 - tau)."""
    return params.p / q_bracket(n, params.tau)


def rate_left(n: StackSize, params: ModelParams) -> float:
    """L_n = q/[n]_{1/tau} = q tau^{n-1}(1 - tau)/(1 - tau^n); L_INFINITY = 0."""
    if n is INFINITY:
        return 0.0
    q_bracket(n, params.tau)  # argument validation
    tau = params.tau
    n = int(n)
    return params.q * tau ** (n - 1) * (1.0 - tau) / (1.0 - tau ** n)


def right_rates(n_max: int, params: ModelParams) -> np.ndarray:
    """Array of R_1..R_{n_max}."""
    n = np.arange(1, n_max + 1, dtype=float)
    return params.p * (1.0 - params.tau) / (1.0 - params.tau ** n)


def left_rates(n_max: int, params: ModelParams) -> np.ndarray:
    """Array of L_1..L_{n_max}."""
    n = np.arange(1, n_max + 1, dtype=float)
    tau = params.tau
    return params.q * tau ** (n - 1.0) * (1.0 - tau) / (1.0 - tau ** n)


def left_tail_depth(params: ModelParams, tol: float) -> int:
    """Smallest N with sum_{n>N} L_n < tol, from the bound L_n <= q tau^{n-1}."""
    if params.q == 0.0:
        return 1
    tau = params.tau
    bound = tol * (1.0 - tau) / params.q
    if bound >= 1.0:
        return 1
    return max(1, int(math.ceil(math.log(bound) / math.log(tau))))


def gaussian_binomial(m: int, r: int, tau: float) -> float:
    """Gaussian binomial coefficient {m brack r}_tau."""
    if m < 0 or r < 0:
        raise ValidationError(f"gaussian_binomial needs non-negative arguments, got m={m}, r={r}")
    if r > m:
        raise ValidationError(f"gaussian_binomial needs r <= m, got m={m}, r={r}")
    num = 1.0
    den = 1.0
    for j in range(r):
        num *= 1.0 - tau ** (m - j)
        den *= 1.0 - tau ** (j + 1)
    return num / den


def uv_bracket(n: int, params: ModelParams) -> float:
    """[n] = (u^n - v^n)/(u - v), evaluated as u^{n-1}[n]_tau."""
    if n < 0:
        raise ValidationError(f"uv_bracket needs n >= 0, got {n}")
    if n == 0:
        return 0.0
    return params.u ** (n - 1) * q_bracket(n, params.tau)


def uv_bracket_factorial(n: int, params: ModelParams) -> float:
    out = 1.0
    for k in range(1, n + 1):
        out *= uv_bracket(k, params)
    return out


def uv_bracket_binomial(N: int, m: int, params: ModelParams) -> float:
    """{N brack m} = [N]!/([m]![N-m]!) built from the (u,v) brackets."""
    if N > BRACKET_BINOMIAL_CAP:
        raise ValidationError(f"uv_bracket_binomial supports N <= {BRACKET_BINOMIAL_CAP}, got {N}")
    if not 0 <= m <= N:
        raise ValidationError(f"uv_bracket_binomial needs 0 <= m <= N, got N={N}, m={m}")
    return uv_bracket_factorial(N, params) / (
        uv_bracket_factorial(m, params) * uv_bracket_factorial(N - m, params))


# ---------------------------------------------------------------------------
# Configurations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Configuration:
    """
    Site-occupancy map of a finite system or of a step-initialised system.

    ``sites`` holds (site, count) pairs sorted by site with count > 0; a count
    may be INFINITE for at most one site, and nothing may sit to its right.
    """

    sites: Tuple[Tuple[int, StackSize], ...]
    particle_total: Optional[int] = field(default=None)

    def __post_init__(self):
        cleaned = []
        last = None
        infinite_at = None
        for site, count in self.sites:
            if last is not None and site <= last:
                raise ValidationError(f"configuration sites must be strictly increasing, got {site} after {last}")
            last = site
            if count is INFINITE:
                if infinite_at is not None:
                    raise ValidationError("at most one site may carry an infinite stack")
                infinite_at = site
            elif not isinstance(count, (int, np.integer)) or count < 0:
                raise ValidationError(f"occupancy must be a non-negative integer or INFINITE, got {count!r}")
            elif count == 0:
                continue
            if infinite_at is not None and site > infinite_at:
                raise ValidationError(f"site {site} is occupied to the right of the infinite stack at {infinite_at}")
            cleaned.append((int(site), count if count is INFINITE else int(count)))
        object.__setattr__(self, "sites", tuple(cleaned))
        finite_sum = sum(c for _, c in cleaned if c is not INFINITE)
        if infinite_at is None:
            if self.particle_total is None:
                object.__setattr__(self, "particle_total", finite_sum)
            elif self.particle_total != finite_sum:
                raise ValidationError(
                    f"particle_total {self.particle_total} does not match occupancy sum {finite_sum}")
        elif self.particle_total is not None:
            raise ValidationError("particle_total is undefined for a configuration with an infinite stack")

    @classmethod
    def from_occupancy(cls, occupancy: Dict[int, StackSize]) -> "Configuration":
        return cls(tuple(sorted(occupancy.items())))

    @classmethod
    def from_positions(cls, positions: Iterable[int]) -> "Configuration":
        occ: Dict[int, int] = {}
        for x in positions:
            occ[int(x)] = occ.get(int(x), 0) + 1
        return cls.from_occupancy(occ)

    @classmethod
    def stack(cls, n: int, site: int = 0) -> "Configuration":
        """n particles piled at one site (finite approximation of the step)."""
        return cls(((site, n),))

    @classmethod
    def step_initial(cls, site: int = 0) -> "Configuration":
        """Infinitely many particles at one site, all other sites empty."""
        return cls(((site, INFINITE),))

    @property
    def occupancy(self) -> Dict[int, StackSize]:
        return dict(self.sites)

    @property
    def infinite_site(self) -> Optional[int]:
        for site, count in self.sites:
            if count is INFINITE:
                return site
        return None

    @property
    def is_infinite(self) -> bool:
        return self.infinite_site is not None

    def positions(self) -> List[int]:
        """Sorted finite-particle positions (the infinite stack is skipped)."""
        out: List[int] = []
        for site, count in self.sites:
            if count is not INFINITE:
                out.extend([site] * count)
        return out

    def order_statistic(self, m: int) -> int:
        """Position of the m-th left-most particle."""
        if m < 1:
            raise ValidationError(f"particle index must be >= 1, got {m}")
        seen = 0
        for site, count in self.sites:
            if count is INFINITE:
                return site
            seen += count
            if seen >= m:
                return site
        raise ValidationError(f"configuration holds only {seen} particles, asked for m={m}")


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Estimate:
    """A single probability with its error indicator and provenance."""

    value: float
    error: float = 0.0
    details: Dict = field(default_factory=dict)


@dataclass(frozen=True)
class DistributionResult:
    """Per-x probabilities with error estimates and full provenance metadata."""

    x: np.ndarray
    values: np.ndarray
    errors: np.ndarray
    meta: Dict = field(default_factory=dict)

    @classmethod
    def from_estimates(cls, x_grid, estimates: List[Estimate], meta: Optional[Dict] = None):
        return cls(
            x=np.asarray(list(x_grid)),
            values=np.array([e.value for e in estimates]),
            errors=np.array([e.error for e in estimates]),
            meta=dict(meta or {}),
        )

    def rows(self):
        return [(int(x), float(v), float(e)) for x, v, e in zip(self.x, self.values, self.errors)]


def skellam_cdf(d, right_mean: float, left_mean: float) -> float:
    """
    P(A - B <= d) for independent A ~ Poisson(right_mean), B ~ Poisson(left_mean).

    Exact law of a lone particle's displacement after time t with
    right_mean = p t and left_mean = q t.
    """
    if left_mean == 0.0:
        return float(poisson.cdf(d, right_mean)) if right_mean > 0 else float(d >= 0)
    b_max = int(poisson.isf(1e-17, left_mean)) + 1
    b = np.arange(0, b_max + 1)
    if right_mean == 0.0:
        inner = (d + b >= 0).astype(float)
    else:
        inner = poisson.cdf(d + b, right_mean)
    return float(np.sum(poisson.pmf(b, left_mean) * inner))
