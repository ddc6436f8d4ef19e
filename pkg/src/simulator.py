"""
Kinetic Monte Carlo for the MADM.

Finite configurations (including the n_big stack that stands in for the step
initial condition) run through the compiled loop in ``src.stack_kernel``. The
literal infinite-site system is simulated object by object with
``enabled_events`` / ``step``.
"""
import enum
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Literal, NamedTuple, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from pydantic import ValidationError as PydanticValidationError

from config.config import (
    DEFAULT_SEED,
    EVENT_GUARD,
    PEEL_TAIL_TOLERANCE,
    REPLICA_CHUNK,
    WORKERS,
)
from src.model import (
    INFINITE,
    Configuration,
    ModelParams,
    StackSize,
    left_rates,
    left_tail_depth,
    rate_left,
    rate_right,
    right_rates,
)
from src.stack_kernel import STATUS_OVERFLOW, STATUS_RUNAWAY, prefix_rates, run_stack
from utils.errors import RunawayError, ValidationError

logger = logging.getLogger(__name__)

# the whole infinite stack moves as one
ALL = INFINITE


class Direction(enum.Enum):
    RIGHT = 1
    LEFT = -1


class Event(NamedTuple):
    site: int
    direction: Direction
    size: StackSize
    rate: float


class SimConfig(BaseModel):
    """One Monte Carlo experiment: model, start, horizon and replica budget."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    params: ModelParams
    init: Configuration
    t_end_physical: float = Field(ge=0.0)
    replicas: int = Field(ge=1)
    seed: int = Field(default=DEFAULT_SEED, ge=0, lt=2 ** 64)
    n_big: int = Field(default=64, ge=16)
    n_max_peel: Optional[int] = Field(default=None, ge=1)
    step_scheme: Literal["stack", "infinite"] = "stack"
    event_guard: int = Field(default=EVENT_GUARD, ge=1)

    @model_validator(mode="after")
    def _fill_peel_depth(self):
        if self.n_max_peel is None:
            depth = left_tail_depth(self.params, PEEL_TAIL_TOLERANCE)
            object.__setattr__(self, "n_max_peel", depth)
        return self

    @classmethod
    def build(cls, **kwargs) -> "SimConfig":
        try:
            return cls(**kwargs)
        except PydanticValidationError as e:
            raise ValidationError(f"invalid simulation config: {e}") from e

    @property
    def step_mode(self) -> bool:
        return self.init.is_infinite

    @property
    def tracked(self) -> int:
        """Number of positions reported per replica."""
        if self.step_mode:
            return self.n_big
        return self.init.particle_total

    def describe(self) -> dict:
        return {
            "params": {"u": self.params.u, "p": self.params.p},
            "init": [[s, "inf" if c is INFINITE else c] for s, c in self.init.sites],
            "t_end_physical": self.t_end_physical,
            "replicas": self.replicas,
            "seed": self.seed,
            "n_big": self.n_big,
            "n_max_peel": self.n_max_peel,
            "step_scheme": self.step_scheme,
        }


@dataclass(frozen=True)
class EmpiricalCDF:
    """Monte Carlo estimate of P(x_m <= x) on an integer grid."""

    x: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    replicas: int

    @property
    def as_map(self) -> Dict[int, Tuple[float, float]]:
        return {int(x): (float(v), float(s)) for x, v, s in zip(self.x, self.values, self.stderr)}

    def rows(self) -> List[tuple]:
        return [(int(x), float(v), float(s)) for x, v, s in zip(self.x, self.values, self.stderr)]


def replica_rng(seed: int, replica: int) -> np.random.Generator:
    """Counter-based stream owned by one replica."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(replica,))))


# ---------------------------------------------------------------------------
# Object-level rules
# ---------------------------------------------------------------------------

def enabled_events(config: Configuration, params: ModelParams, n_max_peel: Optional[int] = None) -> List[Event]:
    """Every clock that can ring in ``config``, in site order."""
    if n_max_peel is None:
        n_max_peel = left_tail_depth(params, PEEL_TAIL_TOLERANCE)
    events: List[Event] = []
    for site, count in config.sites:
        if count is INFINITE:
            events.append(Event(site, Direction.RIGHT, ALL, rate_right(INFINITE, params)))
            for n in range(1, n_max_peel + 1):
                events.append(Event(site, Direction.LEFT, n, rate_left(n, params)))
            continue
        for n in range(1, count + 1):
            events.append(Event(site, Direction.RIGHT, n, rate_right(n, params)))
            events.append(Event(site, Direction.LEFT, n, rate_left(n, params)))
    return [e for e in events if e.rate > 0.0]


def apply_event(config: Configuration, event: Event) -> Configuration:
    """Move ``event.size`` particles one site in ``event.direction``."""
    occ = config.occupancy
    here = occ.get(event.site)
    if here is None:
        raise ValidationError(f"no particles at site {event.site}")
    dest = event.site + event.direction.value

    if here is INFINITE:
        if event.size is ALL:
            if event.direction is not Direction.RIGHT:
                raise ValidationError("only a right jump can move the whole infinite stack")
            del occ[event.site]
            occ[dest] = INFINITE
            return Configuration.from_occupancy(occ)
    elif event.size is ALL or event.size > here:
        raise ValidationError(f"cannot move {event.size!r} particles from a stack of {here}")
    else:
        occ[event.site] = here - event.size

    there = occ.get(dest, 0)
    occ[dest] = INFINITE if there is INFINITE else there + event.size
    return Configuration.from_occupancy(occ)


def step(config: Configuration, params: ModelParams, rng: np.random.Generator,
         n_max_peel: Optional[int] = None) -> Tuple[Configuration, float]:
    """One Gillespie step: exponential holding time, then a rate-weighted event."""
    events = enabled_events(config, params, n_max_peel)
    if not events:
        raise ValidationError("no enabled events: the system is empty")
    rates = np.fromiter((e.rate for e in events), dtype=float, count=len(events))
    cumulative = np.cumsum(rates)
    total = cumulative[-1]
    elapsed = rng.exponential(1.0 / total)
    index = int(np.searchsorted(cumulative, rng.random() * total, side="right"))
    index = min(index, len(events) - 1)
    return apply_event(config, events[index]), elapsed


def _leftmost(config: Configuration, k: int) -> np.ndarray:
    """The k left-most positions, the infinite stack supplying the remainder."""
    return np.fromiter((config.order_statistic(i) for i in range(1, k + 1)), dtype=np.int64, count=k)


def _run_infinite(simcfg: SimConfig, rng: np.random.Generator) -> np.ndarray:
    config = simcfg.init
    t = 0.0
    events = 0
    while True:
        config_next, elapsed = step(config, simcfg.params, rng, simcfg.n_max_peel)
        t += elapsed
        if t > simcfg.t_end_physical:
            break
        config = config_next
        events += 1
        if events > simcfg.event_guard:
            raise RunawayError(f"replica exceeded {simcfg.event_guard} events")
    return _leftmost(config, simcfg.n_big)


# ---------------------------------------------------------------------------
# Compiled finite-stack path
# ---------------------------------------------------------------------------

def _initial_window(simcfg: SimConfig) -> Tuple[Configuration, int]:
    if simcfg.step_mode:
        start = Configuration.stack(simcfg.n_big, simcfg.init.infinite_site)
    else:
        start = simcfg.init
    sites = [s for s, _ in start.sites]
    span = sites[-1] - sites[0] if sites else 0
    # displacement grows at most linearly with the number of jumps
    half = 16 + span + int(math.ceil(6.0 * simcfg.t_end_physical + 6.0 * math.sqrt(simcfg.t_end_physical)))
    return start, half


def _run_finite(simcfg: SimConfig, replica: int) -> np.ndarray:
    start, half = _initial_window(simcfg)
    total = start.particle_total
    cum_right = prefix_rates(right_rates(total, simcfg.params))
    cum_left = prefix_rates(left_rates(total, simcfg.params))
    origin = start.sites[0][0] if start.sites else 0
    while True:
        width = 2 * half + 1
        occ = np.zeros(width, dtype=np.int64)
        for site, count in start.sites:
            occ[site - origin + half] = count
        rng = replica_rng(simcfg.seed, replica)
        status, events = run_stack(occ, cum_right, cum_left, float(simcfg.t_end_physical), rng,
                                   simcfg.event_guard)
        if status == STATUS_RUNAWAY:
            raise RunawayError(f"replica {replica} exceeded {simcfg.event_guard} events")
        if status != STATUS_OVERFLOW:
            break
        logger.debug(f"Replica {replica}: window half-width {half} overflowed, doubling")
        half *= 2
    sites = np.nonzero(occ)[0]
    return np.repeat(sites - half + origin, occ[sites])


def run_replica(simcfg: SimConfig, replica: int) -> np.ndarray:
    """Sorted positions of one replica at ``t_end_physical``; deterministic in (seed, replica)."""
    if simcfg.step_mode and simcfg.step_scheme == "infinite":
        if simcfg.t_end_physical == 0.0:
            return _leftmost(simcfg.init, simcfg.n_big)
        return _run_infinite(simcfg, replica_rng(simcfg.seed, replica))
    positions = _run_finite(simcfg, replica)
    return positions[:simcfg.tracked]


def _run_chunk(simcfg: SimConfig, start: int, stop: int) -> np.ndarray:
    out = np.empty((stop - start, simcfg.tracked), dtype=np.int64)
    for row, r in enumerate(range(start, stop)):
        out[row] = run_replica(simcfg, r)
    return out


def simulate_positions(simcfg: SimConfig, workers: Optional[int] = None) -> np.ndarray:
    """
    Positions of every replica, shape (replicas, tracked), rows in replica order.

    Chunks of replicas go to a process pool; the result does not depend on
    the number of workers.
    """
    if simcfg.step_mode and simcfg.step_scheme == "infinite":
        logger.warning("Infinite-site step scheme: the stack only moves right as a whole, so its law differs "
                       "from the finite-stack scheme and the Fredholm formulas; use step_scheme=\"stack\" to compare")
    workers = WORKERS if workers is None else max(1, workers)
    chunks = [(a, min(a + REPLICA_CHUNK, simcfg.replicas)) for a in range(0, simcfg.replicas, REPLICA_CHUNK)]
    logger.info(f"Simulating {simcfg.replicas} replicas to t={simcfg.t_end_physical:g} "
                f"({len(chunks)} chunks, {workers} workers)")
    if workers == 1 or len(chunks) == 1:
        parts = [_run_chunk(simcfg, a, b) for a, b in chunks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_chunk, simcfg, a, b) for a, b in chunks]
            parts = [f.result() for f in futures]
    return np.vstack(parts)


def order_statistic_samples(simcfg: SimConfig, m: int, workers: Optional[int] = None) -> np.ndarray:
    """Samples of x_m, the m-th left-most position, one per replica."""
    if m < 1:
        raise ValidationError(f"particle index must be >= 1, got {m}")
    if simcfg.step_mode:
        if simcfg.n_big < max(16, 4 * m):
            raise ValidationError(f"n_big={simcfg.n_big} too small for m={m} (need n_big >= max(16, 4m))")
    elif m > simcfg.init.particle_total:
        raise ValidationError(f"m={m} exceeds the particle total {simcfg.init.particle_total}")
    return simulate_positions(simcfg, workers)[:, m - 1]


def cdf_from_samples(samples: np.ndarray, x_grid) -> EmpiricalCDF:
    x = np.asarray(x_grid)
    ordered = np.sort(samples)
    values = np.searchsorted(ordered, x, side="right") / len(samples)
    stderr = np.sqrt(values * (1.0 - values) / len(samples))
    return EmpiricalCDF(x=x, values=values, stderr=stderr, replicas=len(samples))


def empirical_cdf(simcfg: SimConfig, m: int, x_grid, workers: Optional[int] = None) -> EmpiricalCDF:
    """Monte Carlo P(x_m(t_end_physical) <= x) with binomial standard errors."""
    return cdf_from_samples(order_statistic_samples(simcfg, m, workers), x_grid)
