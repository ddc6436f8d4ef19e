"""
Command-line surface: one ExperimentSpec per run, one handler per subcommand,
a CSV table plus JSON sidecar per result.
"""
import argparse
import logging
import math
import os
import re
import sys
from typing import Callable, Dict, List, Literal, NamedTuple, Optional, Tuple, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic import ValidationError as PydanticValidationError

from config.config import DEFAULT_SEED, F2_DEFAULT_ORDER, OUTPUT_DIR, QUAD_TOLERANCE, TAIL_TOLERANCE
from src.asymptotics import check_airy_crossover, tw_experiment
from src.exact_oracle import (
    contour_cdf_finite,
    contour_prob_finite,
    master_equation_cdf,
    strict_partition_sum_check,
    symmetrization_identity_check,
)
from src.fredholm import (
    FORMULAS,
    KernelParams,
    QuadratureSpec,
    fredholm_cdf,
    prob_one_param,
    prob_two_param,
    product_identity,
    transport_identity,
)
from src.model import (
    Configuration,
    ModelParams,
    QueryPoint,
    gaussian_binomial,
    q_bracket,
    skellam_cdf,
    uv_bracket,
    uv_bracket_binomial,
)
from src.simulator import SimConfig, empirical_cdf
from utils.errors import EXIT_OK, EXIT_TOLERANCE, EXIT_VALIDATION, MadmError, ValidationError
from utils.output import sidecar_path, write_csv, write_sidecar

logger = logging.getLogger(__name__)

Command = Literal["simulate", "exact", "fredholm", "identities", "tw", "cross-validate"]
IDENTITIES = ("q-combinatorics", "partition", "symmetrization", "product", "transport")
IDENTITY_ALIASES = {"prop13": "transport", "prop14": "product"}
RANGE_FLAGS = ("--x", "--s")
_RANGE_VALUE = re.compile(r"^-\d+(\.\d*)?\.\.")


class ExperimentSpec(BaseModel):
    """Everything a run needs; replaying a spec reproduces its outputs."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    command: Command
    u: float = 0.6
    p: Optional[float] = None
    m: int = Field(default=1, ge=1)
    t: float = Field(default=1.0, ge=0.0)
    # finite-system time; defaults to t / gamma
    t_physical: Optional[float] = Field(default=None, ge=0.0)
    x_range: Tuple[int, int] = (-3, 5)
    initial: Union[Literal["step"], List[int]] = "step"
    formula: str = "one-param"
    method: Literal["contour", "master"] = "contour"
    nodes: Optional[int] = Field(default=None, ge=1)
    outer_nodes: Optional[int] = Field(default=None, ge=1)
    tol: float = Field(default=QUAD_TOLERANCE, gt=0.0)
    replicas: int = Field(default=10_000, ge=1)
    seed: int = Field(default=DEFAULT_SEED, ge=0)
    n_big: Optional[int] = Field(default=None, ge=16)
    step_scheme: Literal["stack", "infinite"] = "stack"
    which: List[str] = Field(default_factory=lambda: list(IDENTITIES))
    sigma: float = 0.25
    s_range: Tuple[float, float] = (-3.0, 5.0)
    s_step: float = Field(default=0.1, gt=0.0)
    order: int = Field(default=F2_DEFAULT_ORDER, ge=4)
    export_samples: bool = False
    output: Optional[str] = None
    workers: Optional[int] = Field(default=None, ge=1)

    @field_validator("which", mode="before")
    @classmethod
    def _resolve_aliases(cls, which):
        if isinstance(which, (list, tuple)):
            return [IDENTITY_ALIASES.get(name, name) for name in which]
        return which

    @model_validator(mode="after")
    def _check(self):
        if self.x_range[0] > self.x_range[1]:
            raise ValueError(f"x-range {self.x_range[0]}..{self.x_range[1]} is empty")
        if self.formula not in FORMULAS:
            raise ValueError(f"unknown formula {self.formula!r}; choose from {sorted(FORMULAS)}")
        unknown = sorted(set(self.which) - set(IDENTITIES))
        if unknown:
            raise ValueError(f"unknown identities {unknown}; choose from {list(IDENTITIES)}")
        if self.s_range[0] > self.s_range[1]:
            raise ValueError(f"s-range {self.s_range} is empty")
        return self

    @classmethod
    def build(cls, **kwargs) -> "ExperimentSpec":
        try:
            return cls(**kwargs)
        except PydanticValidationError as e:
            raise ValidationError(f"invalid experiment spec: {e}") from e

    @classmethod
    def from_yaml(cls, path: str, **overrides) -> "ExperimentSpec":
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise ValidationError(f"spec file {path} must hold a mapping")
        data.update(overrides)
        return cls.build(**data)

    def params(self) -> ModelParams:
        return ModelParams.from_up(self.u, self.u if self.p is None else self.p)

    def physical_time(self, params: ModelParams) -> float:
        return self.t / params.gamma if self.t_physical is None else self.t_physical

    def x_grid(self) -> List[int]:
        return list(range(self.x_range[0], self.x_range[1] + 1))

    def s_grid(self) -> np.ndarray:
        count = int(math.floor((self.s_range[1] - self.s_range[0]) / self.s_step + 1e-9)) + 1
        return np.round(self.s_range[0] + self.s_step * np.arange(count), 10)

    def quadrature(self) -> QuadratureSpec:
        return QuadratureSpec(nodes=self.nodes, outer_nodes=self.outer_nodes, tol=self.tol)

    def output_path(self) -> str:
        return self.output or os.path.join(OUTPUT_DIR, f"{self.command}.csv")


class Outcome(NamedTuple):
    """What a handler produced: a table, its metadata and the tolerance verdict."""

    header: List[str]
    rows: List[tuple]
    meta: Dict
    passed: bool = True


def _initial(spec: ExperimentSpec) -> Configuration:
    if spec.initial == "step":
        return Configuration.step_initial(0)
    return Configuration.from_positions(spec.initial)


def _finite_positions(spec: ExperimentSpec) -> List[int]:
    if spec.initial == "step":
        raise ValidationError("the finite-system oracles need explicit initial positions, not 'step'")
    return list(spec.initial)


def _sim_config(spec: ExperimentSpec, params: ModelParams) -> SimConfig:
    kwargs = dict(params=params, init=_initial(spec), t_end_physical=spec.physical_time(params),
                  replicas=spec.replicas, seed=spec.seed, step_scheme=spec.step_scheme)
    if spec.n_big is not None:
        kwargs["n_big"] = spec.n_big
    return SimConfig.build(**kwargs)


def command_simulate(spec: ExperimentSpec) -> Outcome:
    params = spec.params()
    simcfg = _sim_config(spec, params)
    cdf = empirical_cdf(simcfg, spec.m, spec.x_grid(), spec.workers)
    meta = {"simulation": simcfg.describe(), "m": spec.m, "t": spec.t}
    return Outcome(["x", "cdf", "stderr"], cdf.rows(), meta)


def command_exact(spec: ExperimentSpec) -> Outcome:
    params = spec.params()
    Y = _finite_positions(spec)
    t_phys = spec.physical_time(params)
    if spec.method == "master":
        result = master_equation_cdf(Y, spec.m, spec.x_grid(), t_phys, params)
    else:
        result = contour_cdf_finite(Y, spec.m, spec.x_grid(), t_phys, params, nodes=spec.nodes)
    return Outcome(["x", "prob", "err"], result.rows(), result.meta)


def command_fredholm(spec: ExperimentSpec) -> Outcome:
    params = spec.params()
    result = fredholm_cdf(spec.formula, spec.m, spec.t, spec.x_grid(), params, spec.quadrature())
    rows = []
    for x, value, residual, details in zip(result.x, result.values, result.errors, result.meta["contours"]):
        rows.append((int(x), float(value), float(residual), float(details.get("refine_delta", float("nan")))))
    return Outcome(["x", "prob", "imag_residual", "refine_delta"], rows, result.meta)


def _identity_row(name, case, deviation, threshold):
    return (name, case, float(deviation), float(threshold), bool(deviation < threshold))


def _q_combinatorics_rows(rng) -> List[tuple]:
    worst = {"uv-bracket": 0.0, "bracket-binomial": 0.0, "q-pascal": 0.0}
    for _ in range(200):
        params = ModelParams.from_up(float(rng.uniform(0.55, 0.95)), float(rng.uniform(0.0, 1.0)))
        tau = params.tau
        N = int(rng.integers(1, 21))
        m = int(rng.integers(0, N + 1))
        lhs = uv_bracket(N, params)
        rhs = params.u ** (N - 1) * q_bracket(N, tau)
        worst["uv-bracket"] = max(worst["uv-bracket"], abs(lhs - rhs) / abs(rhs))
        lhs = uv_bracket_binomial(N, m, params)
        rhs = params.u ** (m * (N - m)) * gaussian_binomial(N, m, tau)
        worst["bracket-binomial"] = max(worst["bracket-binomial"], abs(lhs - rhs) / abs(rhs))
        if 1 <= m < N:
            lhs = gaussian_binomial(N, m, tau)
            rhs = gaussian_binomial(N - 1, m - 1, tau) + tau ** m * gaussian_binomial(N - 1, m, tau)
            worst["q-pascal"] = max(worst["q-pascal"], abs(lhs - rhs) / abs(rhs))
    return [_identity_row("q-combinatorics", case, dev, 1e-12) for case, dev in worst.items()]


def _partition_rows(params: ModelParams) -> List[tuple]:
    rows = []
    for k in range(1, 7):
        lhs, rhs = strict_partition_sum_check(k, params.tau, 400)
        rows.append(_identity_row("partition", f"k={k}", abs(lhs - rhs) / rhs, 1e-12))
    return rows


def _symmetrization_rows(params: ModelParams, seed: int) -> List[tuple]:
    return [_identity_row("symmetrization", f"k={k}", symmetrization_identity_check(k, params, seed=seed), 1e-8)
            for k in range(1, 5)]


def _product_rows(params: ModelParams, rng) -> List[tuple]:
    kp = KernelParams(2, 1.0, 0, params)
    rows = []
    for _ in range(20):
        lam = float(rng.uniform(0.0, 1.0)) * np.exp(2j * np.pi * rng.random())
        check = product_identity(kp, lam)
        rows.append(_identity_row("product", f"lambda={lam:.4f}", check.deviation, 1e-8))
    return rows


def _transport_rows(params: ModelParams, rng) -> List[tuple]:
    if not params.is_one_parameter:
        logger.warning("Transport identity skipped: it needs p = u")
        return []
    rows = []
    for _ in range(10):
        x = int(rng.integers(-3, 4))
        t = float(rng.uniform(0.0, 2.0))
        lam = float(rng.uniform(0.0, 1.0)) * np.exp(2j * np.pi * rng.random())
        check = transport_identity(KernelParams(x, t, 0, params), lam)
        rows.append(_identity_row("transport", f"x={x} t={t:.3f} lambda={lam:.4f}", check.deviation, 1e-8))
    return rows


def command_identities(spec: ExperimentSpec) -> Outcome:
    params = spec.params()
    rng = np.random.default_rng(spec.seed)
    builders = {
        "q-combinatorics": lambda: _q_combinatorics_rows(rng),
        "partition": lambda: _partition_rows(params),
        "symmetrization": lambda: _symmetrization_rows(params, spec.seed),
        "product": lambda: _product_rows(params, rng),
        "transport": lambda: _transport_rows(params, rng),
    }
    rows = []
    for name in spec.which:
        rows.extend(builders[name]())
    failed = [r for r in rows if not r[4]]
    for r in failed:
        logger.error(f"Identity {r[0]} ({r[1]}) deviates by {r[2]:.3e} (threshold {r[3]:.0e})")
    meta = {"params": {"u": params.u, "p": params.p}, "which": spec.which, "seed": spec.seed,
            "tail_tolerance": TAIL_TOLERANCE}
    return Outcome(["identity", "case", "deviation", "threshold", "passed"], rows, meta, not failed)


def command_tw(spec: ExperimentSpec) -> Outcome:
    params = spec.params()
    comparison = tw_experiment(spec.sigma, spec.t, params, spec.replicas, seed=spec.seed,
                               s_grid=spec.s_grid(), n_big=spec.n_big, step_scheme=spec.step_scheme,
                               order=spec.order, workers=spec.workers)
    meta = {"summary": comparison.summary(), "order": spec.order, "step_scheme": spec.step_scheme,
            "airy_crossover_gap": check_airy_crossover()}
    if spec.export_samples:
        root, _ = os.path.splitext(spec.output_path())
        path = write_csv(root + ".samples.csv", ["rescaled"], [(float(v),) for v in comparison.rescaled])
        meta["samples"] = path
    return Outcome(["s", "empirical", "limit", "stderr"], comparison.rows(), meta)


def _matrix_row(check, deviation, threshold):
    return (check, float(deviation), float(threshold), bool(deviation <= threshold))


def command_cross_validate(spec: ExperimentSpec) -> Outcome:
    """Simulator, master equation, contour formula and Fredholm formulas against each other."""
    params = ModelParams.one_parameter(spec.u)
    rows = []

    # a lone particle: every method against the Skellam law
    t_phys = spec.physical_time(params)
    xs = list(range(-3, 4))
    skellam = np.array([skellam_cdf(x, params.p * t_phys, params.q * t_phys) for x in xs])
    contour = contour_cdf_finite([0], 1, xs, t_phys, params)
    master = master_equation_cdf([0], 1, xs, t_phys, params)
    rows.append(_matrix_row("skellam/contour", np.max(np.abs(contour.values - skellam)), 1e-8))
    rows.append(_matrix_row("skellam/master", np.max(np.abs(master.values - skellam)), 1e-9))
    lone = SimConfig.build(params=params, init=Configuration.from_positions([0]), t_end_physical=t_phys,
                           replicas=spec.replicas, seed=spec.seed)
    mc = empirical_cdf(lone, 1, xs, spec.workers)
    rows.append(_matrix_row("skellam/simulation",
                            np.max(np.abs(mc.values - skellam) - 3.0 * mc.stderr), 1.0 / spec.replicas))

    # two particles at the origin
    for m in (1, 2):
        a = np.array([contour_prob_finite([0, 0], m, x, 0.5, params).value for x in range(-4, 5)])
        b = master_equation_cdf([0, 0], m, range(-4, 5), 0.5, params).values
        rows.append(_matrix_row(f"contour/master m={m}", np.max(np.abs(a - b)), 1e-6))

    # the two Fredholm formulas, and the one-parameter formula against the step simulation
    quad = spec.quadrature()
    fred_x = list(range(-2, 3))
    one = np.array([prob_one_param(QueryPoint.of(spec.m, spec.t, x), params, quad).value for x in fred_x])
    two = np.array([prob_two_param(QueryPoint.of(spec.m, spec.t, x), params, quad).value for x in fred_x])
    rows.append(_matrix_row("two-param/one-param", np.max(np.abs(one - two)), 1e-6))
    step = SimConfig.build(params=params, init=Configuration.step_initial(0),
                           t_end_physical=spec.t / params.gamma, replicas=spec.replicas, seed=spec.seed,
                           n_big=spec.n_big or max(64, 4 * spec.m))
    mc = empirical_cdf(step, spec.m, fred_x, spec.workers)
    rows.append(_matrix_row("one-param/simulation",
                            np.max(np.abs(mc.values - one) - 3.0 * mc.stderr), 1.0 / spec.replicas))

    failed = [r[0] for r in rows if not r[3]]
    if failed:
        logger.error(f"Cross-validation failed: {', '.join(failed)}")
    meta = {"params": {"u": params.u, "p": params.p}, "m": spec.m, "t": spec.t,
            "replicas": spec.replicas, "seed": spec.seed}
    return Outcome(["check", "deviation", "threshold", "passed"], rows, meta, not failed)


COMMANDS: Dict[str, Callable[[ExperimentSpec], Outcome]] = {
    "simulate": command_simulate,
    "exact": command_exact,
    "fredholm": command_fredholm,
    "identities": command_identities,
    "tw": command_tw,
    "cross-validate": command_cross_validate,
}


def run(spec: ExperimentSpec) -> int:
    """Execute ``spec``, write its CSV and sidecar, and return the process exit code."""
    handler = COMMANDS[spec.command]
    logger.info(f"Running {spec.command}")
    try:
        outcome = handler(spec)
    except MadmError as e:
        logger.error(f"{spec.command} failed: {e}")
        return e.exit_code
    path = write_csv(spec.output_path(), outcome.header, outcome.rows)
    meta = {"spec": spec.model_dump(mode="json"), "passed": outcome.passed, **outcome.meta}
    write_sidecar(path, meta)
    logger.info(f"Metadata written to {sidecar_path(path)}")
    if not outcome.passed:
        logger.error(f"{spec.command}: tolerance check failed")
        return EXIT_TOLERANCE
    return EXIT_OK


def _parse_range(text: str) -> Tuple[int, int]:
    """'-3..5' -> (-3, 5)."""
    try:
        lo, hi = text.split("..")
        return int(lo), int(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a range like -3..5, got {text!r}")


def _parse_float_range(text: str) -> Tuple[float, float]:
    try:
        lo, hi = text.split("..")
        return float(lo), float(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a range like -3..5, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="madm", description="MADM numerical laboratory")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--spec", dest="spec_file", default=None, help="YAML experiment spec")
    common.add_argument("--u", type=float, default=None)
    common.add_argument("--p", type=float, default=None)
    common.add_argument("--m", type=int, default=None)
    common.add_argument("--t", type=float, default=None, help="formula time (physical time is t/gamma)")
    common.add_argument("--t-physical", dest="t_physical", type=float, default=None)
    common.add_argument("--x", dest="x_range", type=_parse_range, default=None, help="integer range, e.g. --x=-3..5")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--workers", type=int, default=None)
    common.add_argument("--output", default=None, help="CSV path; the sidecar goes next to it")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo CDF of x_m")
    p.add_argument("--initial", nargs="+", default=None, help="'step' or initial positions")
    p.add_argument("--replicas", type=int, default=None)
    p.add_argument("--n-big", dest="n_big", type=int, default=None)
    p.add_argument("--scheme", dest="step_scheme", choices=["stack", "infinite"], default=None)

    p = sub.add_parser("exact", parents=[common], help="finite-system oracles")
    p.add_argument("--initial", nargs="+", default=None, help="initial positions")
    p.add_argument("--method", choices=["contour", "master"], default=None)
    p.add_argument("--nodes", type=int, default=None)

    p = sub.add_parser("fredholm", parents=[common], help="Fredholm determinant formulas")
    p.add_argument("--formula", choices=sorted(FORMULAS), default=None)
    p.add_argument("--nodes", type=int, default=None)
    p.add_argument("--outer-nodes", dest="outer_nodes", type=int, default=None)
    p.add_argument("--tol", type=float, default=None, help="quadrature tail target")

    p = sub.add_parser("identities", parents=[common], help="algebraic and kernel identities")
    p.add_argument("--which", nargs="+", choices=list(IDENTITIES) + sorted(IDENTITY_ALIASES), default=None)

    p = sub.add_parser("tw", parents=[common], help="Tracy–Widom scaling experiment")
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--replicas", type=int, default=None)
    p.add_argument("--n-big", dest="n_big", type=int, default=None)
    p.add_argument("--scheme", dest="step_scheme", choices=["stack", "infinite"], default=None)
    p.add_argument("--s", dest="s_range", type=_parse_float_range, default=None)
    p.add_argument("--s-step", dest="s_step", type=float, default=None)
    p.add_argument("--order", type=int, default=None)
    p.add_argument("--export-samples", dest="export_samples", action="store_true", default=None)

    p = sub.add_parser("cross-validate", parents=[common], help="oracle chain pass/fail matrix")
    p.add_argument("--replicas", type=int, default=None)
    p.add_argument("--n-big", dest="n_big", type=int, default=None)

    return parser


def spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    values = {k: v for k, v in vars(args).items() if v is not None and k not in ("spec_file", "log_level")}
    initial = values.get("initial")
    if initial is not None:
        values["initial"] = "step" if initial == ["step"] else [int(v) for v in initial]
    if args.spec_file:
        return ExperimentSpec.from_yaml(args.spec_file, **values)
    return ExperimentSpec.build(**values)


def _attach_range_values(argv: List[str]) -> List[str]:
    """Rewrite `--x -3..5` as `--x=-3..5`; argparse reads a leading minus as a new flag."""
    out: List[str] = []
    i = 0
    while i < len(argv):
        if argv[i] in RANGE_FLAGS and i + 1 < len(argv) and _RANGE_VALUE.match(argv[i + 1]):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
            continue
        out.append(argv[i])
        i += 1
    return out


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(_attach_range_values(sys.argv[1:] if argv is None else list(argv)))
    if args.log_level:
        logging.getLogger().setLevel(args.log_level.upper())
    try:
        spec = spec_from_args(args)
    except (ValidationError, ValueError) as e:
        logger.error(f"Invalid experiment: {e}")
        return EXIT_VALIDATION
    return run(spec)
