"""
Fredholm determinant formulas for the step-initialised MADM.

Every integral operator is discretised by the periodic trapezoid rule on a
counterclockwise circle (Nyström). Single determinants come from a complex LU
factorisation; contour integrals over lambda or mu reuse one eigenvalue solve
of the Nyström matrix for all of their nodes.

Kernels:
    kernel_K   two-parameter kernel on C_R, R in (1, 1/tau)
    kernel_K1  phi(tau eta)/(eta' - tau eta)
    kernel_K2  phi(eta')/(eta' - tau eta), the image of kernel_K under
               xi = (1 - eta)/(1 - tau eta) when p = u
    kernel_J   mu-dependent kernel built from f(mu, z) and an inner zeta integral
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, NamedTuple, Optional

import numpy as np

from config.config import (
    DENOMINATOR_FLOOR,
    IMAG_RESIDUAL_FREDHOLM,
    LAMBDA_RADIUS_CAP,
    LAMBDA_RADIUS_FACTOR,
    POLE_PROXIMITY,
    PREFACTOR_PRODUCT_TOLERANCE,
    QUAD_TOLERANCE,
    TAIL_TOLERANCE,
)
from src.model import DistributionResult, Estimate, ModelParams, QueryPoint
from utils.errors import ToleranceError, ValidationError
from utils.linalg import det_i_minus
from utils.quadrature import circle_nodes, geometric_depth, node_count

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Contours and discretised operators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContourSpec:
    """Counterclockwise circle |z - center| = radius carrying ``nodes`` trapezoid nodes."""

    radius: float
    nodes: int
    center: complex = 0.0
    orientation: str = "counterclockwise"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValidationError(f"contour radius must be positive, got {self.radius}")
        if self.nodes < 1:
            raise ValidationError(f"contour needs at least one node, got {self.nodes}")
        if self.orientation != "counterclockwise":
            raise ValidationError(f"only counterclockwise contours are supported, got {self.orientation!r}")

    def discretize(self):
        return circle_nodes(self.radius, self.nodes, self.center)


def _envelope(fn: Callable, radius: float, samples: int = 256) -> float:
    z = radius * np.exp(2j * np.pi * (np.arange(samples) + 0.5) / samples)
    with np.errstate(over="ignore", invalid="ignore"):
        vals = np.abs(fn(z))
    vals = vals[np.isfinite(vals)]
    return float(np.max(vals)) if vals.size else 1.0


def _in_range(name, value, lo, hi):
    if not lo < value < hi:
        raise ValidationError(f"{name} radius {value:.6g} outside ({lo:.6g}, {hi:.6g})")


@dataclass(frozen=True)
class DiscretizedOperator:
    """Nyström matrix A_jk = kernel(z_j, z_k) w_k of an operator on a circle."""

    nodes: np.ndarray
    weights: np.ndarray
    matrix: np.ndarray

    @classmethod
    def build(cls, kernel: Callable, contour: ContourSpec) -> "DiscretizedOperator":
        z, w = contour.discretize()
        a = kernel(z[:, None], z[None, :]) * w[None, :]
        if not np.all(np.isfinite(a)):
            raise ValidationError("kernel produced non-finite values on the contour")
        return cls(z, w, a)

    def det(self, lam: complex) -> complex:
        """det(I - lam A)."""
        return complex(det_i_minus(self.matrix, lam))

    def det_many(self, lams) -> np.ndarray:
        """det(I - lam A) for many lam from one eigenvalue solve: prod_i (1 - lam e_i)."""
        eig = np.linalg.eigvals(self.matrix)
        return np.prod(1.0 - np.outer(np.asarray(lams), eig), axis=1)


@dataclass(frozen=True)
class KernelParams:
    """Position, formula time and particle index feeding the kernels, with the tail target."""

    x: int
    t: float
    m: int
    params: ModelParams
    tol: float = TAIL_TOLERANCE

    def __post_init__(self):
        if int(self.x) != self.x:
            raise ValidationError(f"x must be an integer, got {self.x}")
        if self.t < 0:
            raise ValidationError(f"t must be non-negative, got {self.t}")
        if self.m < 0:
            raise ValidationError(f"m must be non-negative, got {self.m}")

    @classmethod
    def from_query(cls, qp: QueryPoint, params: ModelParams, tol: float = TAIL_TOLERANCE) -> "KernelParams":
        return cls(qp.x, qp.t, qp.m, params, tol)

    @property
    def tau(self):
        return self.params.tau


@dataclass(frozen=True)
class QuadratureSpec:
    """Node counts (None: chosen from aliasing bounds) and refinement switch."""

    nodes: Optional[int] = None
    outer_nodes: Optional[int] = None
    inner_nodes: Optional[int] = None
    tol: float = QUAD_TOLERANCE
    refine: bool = True

    def doubled(self, nodes: int, outer: int) -> "QuadratureSpec":
        return QuadratureSpec(2 * nodes, 2 * outer, None, self.tol, refine=False)


class IdentityCheck(NamedTuple):
    lhs: complex
    rhs: complex
    deviation: float
    details: Dict


def nystrom_det(kernel, contour: ContourSpec, lam: complex) -> complex:
    """det(I - lam K) with K discretised on ``contour``; accepts a prebuilt operator."""
    op = kernel if isinstance(kernel, DiscretizedOperator) else DiscretizedOperator.build(kernel, contour)
    return op.det(lam)


def fredholm_series_det(kernel, contour: ContourSpec, lam: complex, k_max: int = 3,
                        tail_tol: float = 1e-9) -> complex:
    """
    sum_{k <= k_max} (-lam)^k / k! * (k-fold trapezoid sum of det[K(z_i, z_j)]).

    Brute-force index sums, independent of any factorisation. The tail is
    estimated from the ratio of the last two terms.
    """
    if not 0 <= k_max <= 3:
        raise ValidationError(f"series determinant supports k_max in 0..3, got {k_max}")
    op = kernel if isinstance(kernel, DiscretizedOperator) else DiscretizedOperator.build(kernel, contour)
    a = op.matrix
    d = np.diag(a)
    minors = [1.0 + 0.0j]
    if k_max >= 1:
        minors.append(np.sum(d))
    if k_max >= 2:
        minors.append(np.einsum("i,j->", d, d) - np.einsum("ij,ji->", a, a))
    if k_max >= 3:
        minors.append(np.einsum("i,j,k->", d, d, d)
                      - 3.0 * np.einsum("i,jk,kj->", d, a, a)
                      + 2.0 * np.einsum("ij,jk,ki->", a, a, a))
    terms = [(-lam) ** k / math.factorial(k) * minors[k] for k in range(k_max + 1)]
    if k_max >= 1 and abs(terms[-1]) > 0:
        prev = abs(terms[-2])
        ratio = abs(terms[-1]) / prev if prev > 0 else math.inf
        tail = abs(terms[-1]) * ratio / (1.0 - ratio) if ratio < 1 else math.inf
        if tail > tail_tol:
            raise ToleranceError(f"series tail estimate {tail:.2e} exceeds {tail_tol:.0e} at lambda={lam}",
                                 value=tail, threshold=tail_tol)
    return complex(sum(terms))


# ---------------------------------------------------------------------------
# Two-parameter kernel
# ---------------------------------------------------------------------------

def epsilon(xi, params: ModelParams):
    return params.p / xi + params.q * xi - 1.0


def kernel_K(xi, xi_p, kp: KernelParams):
    """v xi'^x e^{eps(xi') t/gamma} / (u + v xi xi' - xi) * (tau xi' - 1)/(1 - tau)."""
    pr = kp.params
    den = pr.u + pr.v * xi * xi_p - xi
    if np.min(np.abs(den)) < DENOMINATOR_FLOOR:
        raise ToleranceError("kernel_K denominator u + v xi xi' - xi vanishes on the grid",
                             value=float(np.min(np.abs(den))), threshold=DENOMINATOR_FLOOR)
    weight = np.power(xi_p, kp.x) * np.exp(epsilon(xi_p, pr) * kp.t / pr.gamma)
    return pr.v * weight / den * (pr.tau * xi_p - 1.0) / (1.0 - pr.tau)


def xi_contour(kp: KernelParams, radius: Optional[float] = None, nodes: Optional[int] = None,
               tol: float = QUAD_TOLERANCE) -> ContourSpec:
    """C_R with R = tau^{-1/2} unless given; node count from the pole ratios of kernel_K."""
    pr = kp.params
    r = pr.tau ** -0.5 if radius is None else radius
    _in_range("xi-contour", r, 1.0, 1.0 / pr.tau)
    if nodes is None:
        ratio = max(pr.v * r * r / (r - pr.u), pr.u / ((1.0 - pr.v * r) * r))
        scale = _envelope(lambda z: np.power(z, kp.x) * np.exp(epsilon(z, pr) * kp.t / pr.gamma), r)
        nodes = node_count(ratio, tol, scale)
    return ContourSpec(r, nodes)


def lambda_contour(m: int, params: ModelParams, nodes: Optional[int] = None,
                   tol: float = QUAD_TOLERANCE) -> ContourSpec:
    r = LAMBDA_RADIUS_FACTOR * params.tau ** -m
    if r > LAMBDA_RADIUS_CAP:
        limit = int(math.log(LAMBDA_RADIUS_CAP / LAMBDA_RADIUS_FACTOR) / math.log(1.0 / params.tau))
        raise ValidationError(f"m={m} puts the lambda-circle at radius {r:.3g} > {LAMBDA_RADIUS_CAP:g}; "
                              f"the two-parameter formula is limited to m <= {limit} at tau={params.tau:.4g}")
    if nodes is None:
        nodes = node_count(1.0 / LAMBDA_RADIUS_FACTOR, tol)
    return ContourSpec(r, nodes)


def _prefactor_poles(lam, m, tau):
    out = np.ones_like(lam)
    for i in range(1, m + 1):
        out = out * (1.0 - lam * tau ** i)
    return out


def _outer_sum(values, residual_limit, label):
    total = complex(np.sum(values))
    residual = abs(total.imag)
    if residual > residual_limit:
        raise ToleranceError(f"{label}: imaginary residual {residual:.2e} exceeds {residual_limit:.0e}",
                             value=residual, threshold=residual_limit)
    return total.real, residual


def _two_param_value(kp: KernelParams, quad: QuadratureSpec):
    xc = xi_contour(kp, nodes=quad.nodes, tol=quad.tol)
    lc = lambda_contour(kp.m, kp.params, quad.outer_nodes, quad.tol)
    op = DiscretizedOperator.build(lambda a, b: kernel_K(a, b, kp), xc)
    lam, w = lc.discretize()
    dets = op.det_many(lam)
    integrand = dets / (lam * _prefactor_poles(lam, kp.m, kp.tau)) * w
    value, residual = _outer_sum(integrand, IMAG_RESIDUAL_FREDHOLM, "two-parameter formula")
    return value, residual, xc, lc


def prob_two_param(qp: QueryPoint, params: ModelParams, quad: QuadratureSpec = QuadratureSpec()) -> Estimate:
    """
    P(x_m(t/gamma) <= x) as the lambda-contour integral of
    det(I - lam K_{x,t}) / (lam prod_{i<=m}(1 - lam tau^i)).
    """
    kp = KernelParams.from_query(qp, params)
    value, residual, xc, lc = _two_param_value(kp, quad)
    details = {"xi_radius": xc.radius, "xi_nodes": xc.nodes,
               "lambda_radius": lc.radius, "lambda_nodes": lc.nodes, "imag_residual": residual}
    if quad.refine:
        fine, _, _, _ = _two_param_value(kp, quad.doubled(xc.nodes, lc.nodes))
        details["refine_delta"] = abs(fine - value)
        if details["refine_delta"] > 1e-8:
            logger.warning(f"Two-parameter value at x={qp.x} moved by {details['refine_delta']:.2e} on refinement")
    return Estimate(value, residual, details)


# ---------------------------------------------------------------------------
# Transported kernels
# ---------------------------------------------------------------------------

def _check_away(z, point, name):
    gap = float(np.min(np.abs(np.asarray(z) - point)))
    if gap < POLE_PROXIMITY:
        raise ValidationError(f"{name}: argument within {gap:.1e} of the singularity at {point}")


def phi(eta, kp: KernelParams):
    """((1 - eta)/(1 - tau eta))^x e^{[1/(1 - eta) - 1/(1 - tau eta)] t} / (1/tau - eta)."""
    tau = kp.tau
    _check_away(eta, 1.0, "phi")
    _check_away(eta, 1.0 / tau, "phi")
    a = 1.0 - eta
    b = 1.0 - tau * eta
    return np.power(a / b, kp.x) * np.exp((1.0 / a - 1.0 / b) * kp.t) / (1.0 / tau - eta)


def kernel_K1(eta, eta_p, kp: KernelParams):
    return phi(kp.tau * eta, kp) / (eta_p - kp.tau * eta)


def kernel_K2(eta, eta_p, kp: KernelParams):
    return phi(eta_p, kp) / (eta_p - kp.tau * eta)


def gamma_contour(kp: KernelParams, radius: Optional[float] = None, nodes: Optional[int] = None,
                  tol: float = QUAD_TOLERANCE) -> ContourSpec:
    """Circle around 0 and 1 with 1/tau outside; default radius tau^{-1/2}."""
    tau = kp.tau
    r = tau ** -0.5 if radius is None else radius
    _in_range("Gamma", r, 1.0, 1.0 / tau)
    if nodes is None:
        ratio = max(1.0 / r, r * tau, tau)
        nodes = node_count(ratio, tol, _envelope(lambda z: phi(z, kp), r))
    return ContourSpec(r, nodes)


def k1_contour(kp: KernelParams, radius: float = 1.0, nodes: Optional[int] = None,
               tol: float = QUAD_TOLERANCE) -> ContourSpec:
    """Circle for kernel_K1; any radius below 1/tau works, 1 keeps phi(tau eta) furthest from its poles."""
    tau = kp.tau
    _in_range("K1", radius, 0.0, 1.0 / tau)
    if nodes is None:
        ratio = max(radius * tau, tau)
        nodes = node_count(ratio, tol, _envelope(lambda z: phi(tau * z, kp), radius))
    return ContourSpec(radius, nodes)


def transport_identity(kp: KernelParams, lam: complex, xi_c: Optional[ContourSpec] = None,
                       gamma_c: Optional[ContourSpec] = None) -> IdentityCheck:
    """
    det(I - lam K)_{C_R} against det(I - lam K2)_Gamma under xi = (1 - eta)/(1 - tau eta).

    Only holds with p = u. ``details['difference_kernel_det']`` carries
    det(I - lam (K2 - K1))_Gamma for comparison.
    """
    if not kp.params.is_one_parameter:
        raise ValidationError(f"transport needs p = u, got p={kp.params.p}, u={kp.params.u}")
    xi_c = xi_c or xi_contour(kp)
    gamma_c = gamma_c or gamma_contour(kp)
    lhs = nystrom_det(lambda a, b: kernel_K(a, b, kp), xi_c, lam)
    rhs = nystrom_det(lambda a, b: kernel_K2(a, b, kp), gamma_c, lam)
    diff = nystrom_det(lambda a, b: kernel_K2(a, b, kp) - kernel_K1(a, b, kp), gamma_c, lam)
    details = {"xi_radius": xi_c.radius, "xi_nodes": xi_c.nodes,
               "gamma_radius": gamma_c.radius, "gamma_nodes": gamma_c.nodes,
               "difference_kernel_det": diff}
    return IdentityCheck(lhs, rhs, abs(lhs - rhs), details)


def truncated_product(lam: complex, tau: float, tol: float = TAIL_TOLERANCE, start: int = 1) -> complex:
    """prod_{k >= start} (1 - lam tau^k), cut where the neglected factors deviate from 1 by < tol."""
    depth = geometric_depth(tau, tol, scale=abs(lam) * tau ** start)
    k = np.arange(start, start + depth + 1)
    return complex(np.prod(1.0 - lam * tau ** k))


def product_identity(kp: KernelParams, lam: complex, contour: Optional[ContourSpec] = None) -> IdentityCheck:
    """det(I - lam K1) against prod_{k >= 1}(1 - lam tau^k); the product carries no x or t."""
    contour = contour or k1_contour(kp)
    det = nystrom_det(lambda a, b: kernel_K1(a, b, kp), contour, lam)
    prod = truncated_product(lam, kp.tau, kp.tol)
    return IdentityCheck(det, prod, abs(det - prod), {"radius": contour.radius, "nodes": contour.nodes})


def mu_contour(params: ModelParams, nodes: Optional[int] = None, tol: float = QUAD_TOLERANCE,
               radius: Optional[float] = None) -> ContourSpec:
    inv_tau = 1.0 / params.tau
    r = 0.5 * (1.0 + inv_tau) if radius is None else radius
    _in_range("mu-contour", r, 1.0, inv_tau)
    if nodes is None:
        nodes = node_count(max(1.0 / r, r * params.tau), tol)
    return ContourSpec(r, nodes)


def _one_param_value(kp: KernelParams, quad: QuadratureSpec):
    tau, m = kp.tau, kp.m
    gc = gamma_contour(kp, nodes=quad.nodes, tol=quad.tol)
    mc = mu_contour(kp.params, quad.outer_nodes, quad.tol)
    op = DiscretizedOperator.build(lambda a, b: kernel_K2(a, b, kp), gc)
    mu, w = mc.discretize()
    dets = op.det_many(tau ** -m * mu)
    poles = np.ones_like(mu)
    for i in range(1, m + 1):
        poles = poles * (1.0 - mu * tau ** (i - m))
    value, residual = _outer_sum(dets / (mu * poles) * w, IMAG_RESIDUAL_FREDHOLM, "one-parameter formula")
    return value, residual, gc, mc


def prob_one_param(qp: QueryPoint, params: ModelParams, quad: QuadratureSpec = QuadratureSpec()) -> Estimate:
    """
    One-parameter P(x_m(t/gamma) <= x) with lambda = tau^{-m} mu:
    the mu-contour integral of det(I - tau^{-m} mu K2)_Gamma / (mu prod_{i<=m}(1 - mu tau^{i-m})).
    """
    if not params.is_one_parameter:
        raise ValidationError(f"one-parameter formula needs p = u, got p={params.p}, u={params.u}")
    kp = KernelParams.from_query(qp, params)
    value, residual, gc, mc = _one_param_value(kp, quad)
    details = {"gamma_radius": gc.radius, "gamma_nodes": gc.nodes,
               "mu_radius": mc.radius, "mu_nodes": mc.nodes, "imag_residual": residual}
    if quad.refine:
        fine, _, _, _ = _one_param_value(kp, quad.doubled(gc.nodes, mc.nodes))
        details["refine_delta"] = abs(fine - value)
        if details["refine_delta"] > 1e-8:
            logger.warning(f"One-parameter value at x={qp.x} moved by {details['refine_delta']:.2e} on refinement")
    return Estimate(value, residual, details)


# ---------------------------------------------------------------------------
# mu-dependent kernel J
# ---------------------------------------------------------------------------

def f_sum(mu: complex, z, tau: float, tol: float = TAIL_TOLERANCE):
    """
    f(mu, z) = sum_{k in Z} tau^k z^k / (1 - tau^k mu), for 1 < |z| < 1/tau.

    Both tails are geometric (ratio |tau z| upward, 1/|z| downward); each side
    is cut once its remainder bound drops below ``tol``.
    """
    z = np.asarray(z, dtype=complex)
    mod = np.abs(z)
    if mu == 0:
        raise ValidationError("f(mu, z) needs mu != 0")
    if np.any(mod <= 1.0) or np.any(mod >= 1.0 / tau):
        raise ValidationError(f"f(mu, z) needs 1 < |z| < 1/tau={1.0 / tau:.6g}, "
                              f"got |z| in [{mod.min():.6g}, {mod.max():.6g}]")
    amu = abs(mu)
    up = geometric_depth(float(np.max(mod)) * tau, tol / 2, scale=2.0)
    while amu * tau ** up >= 0.5:
        up += 1
    down = geometric_depth(1.0 / float(np.min(mod)), tol / 2, scale=2.0 / amu)
    while tau ** down >= 0.5 * amu:
        down += 1
    ks = np.arange(-down, up + 1)
    gaps = np.abs(1.0 - tau ** ks.astype(float) * mu)
    if np.min(gaps) < POLE_PROXIMITY * max(1.0, amu):
        k_bad = int(ks[np.argmin(gaps)])
        raise ValidationError(f"mu={mu} lies within {POLE_PROXIMITY:.0e} of the pole tau^{-k_bad}")

    total = 1.0 / (1.0 - mu) * np.ones_like(z)
    tz = tau * z
    power = np.ones_like(z)
    for k in range(1, up + 1):
        power = power * tz
        total = total + power / (1.0 - tau ** k * mu)
    inv = 1.0 / tz
    power = np.ones_like(z)
    for k in range(1, down + 1):
        power = power * inv
        total = total + power / (1.0 - tau ** -k * mu)
    logger.debug(f"f_sum truncated at k in [-{down}, {up}]")
    return total if total.ndim else complex(total)


def lambda_weight(zeta, eta_p, kp: KernelParams):
    """exp(Lambda(zeta) - Lambda(eta')) with integer powers only."""
    a = 1.0 - zeta
    b = 1.0 - eta_p
    return (np.power(a / b, kp.x)
            * np.exp((zeta / a - eta_p / b) * kp.t)
            * np.power(zeta / eta_p, kp.m))


def _product_depth(tau, zmax, tol):
    return geometric_depth(tau, tol, scale=tau * zmax)


def product_tail(z, tau: float, tol: float = TAIL_TOLERANCE):
    """prod_{n >= 0} (1 - tau^{n+1} z), i.e. prod tau (tau^{-1} - tau^n z)."""
    z = np.asarray(z, dtype=complex)
    depth = _product_depth(tau, float(np.max(np.abs(z))) if z.size else 1.0, tol)
    out = np.ones_like(z)
    for n in range(depth + 1):
        out = out * (1.0 - tau ** (n + 1) * z)
    return out


def phi_infinity(eta, kp: KernelParams):
    """(1 - eta)^x e^{eta t/(1 - eta)} prod_{n >= 0} tau^{-1}/(tau^{-1} - tau^n eta)."""
    tau = kp.tau
    _check_away(eta, 1.0, "phi_infinity")
    _check_away(eta, 1.0 / tau, "phi_infinity")
    eta = np.asarray(eta, dtype=complex)
    out = np.power(1.0 - eta, kp.x) * np.exp(eta * kp.t / (1.0 - eta)) / product_tail(eta, tau, kp.tol)
    return out if out.ndim else complex(out)


def eta_contour(params: ModelParams, radius: Optional[float] = None, nodes: Optional[int] = None,
                zeta_radius: Optional[float] = None, tol: float = QUAD_TOLERANCE) -> ContourSpec:
    tau = params.tau
    r = 0.5 * (tau + 1.0) if radius is None else radius
    _in_range("eta-contour", r, tau, 1.0)
    if nodes is None:
        rz = zeta_radius if zeta_radius is not None else 0.5 * (1.0 + r / tau)
        nodes = node_count(max(r / rz, tau * rz / r, r), tol)
    return ContourSpec(r, nodes)


def zeta_contour(params: ModelParams, eta_radius: float, radius: Optional[float] = None,
                 nodes: Optional[int] = None, tol: float = QUAD_TOLERANCE) -> ContourSpec:
    tau = params.tau
    r = 0.5 * (1.0 + eta_radius / tau) if radius is None else radius
    _in_range("zeta-contour", r, 1.0, eta_radius / tau)
    if nodes is None:
        nodes = node_count(max(1.0 / r, r * tau / eta_radius), tol)
    return ContourSpec(r, nodes)


def kernel_J(eta, eta_p, kp: KernelParams, mu: complex, zeta_c: ContourSpec):
    """
    J(eta, eta') as the zeta-trapezoid sum of
    lambda_weight(zeta, eta') * P(eta)/P(zeta) * f(mu, zeta/eta') / (eta' (zeta - eta)),
    with P(z) = prod_{n >= 0}(1 - tau^{n+1} z). Returns the (len(eta), len(eta')) matrix.
    """
    tau = kp.tau
    eta = np.atleast_1d(np.asarray(eta, dtype=complex))
    eta_p = np.atleast_1d(np.asarray(eta_p, dtype=complex))
    zeta, wz = zeta_c.discretize()
    inner = wz[None, :] / ((zeta[None, :] - eta[:, None]) * product_tail(zeta, tau, kp.tol)[None, :])
    ratio = zeta[:, None] / eta_p[None, :]
    outer = lambda_weight(zeta[:, None], eta_p[None, :], kp) * f_sum(mu, ratio, tau, kp.tol) / eta_p[None, :]
    return product_tail(eta, tau, kp.tol)[:, None] * (inner @ outer)


def saddle_form_integrand(mu: complex, kp: KernelParams, eta_c: ContourSpec, zeta_c: ContourSpec) -> complex:
    """prod_{k >= 1}(1 - mu tau^k) * det(I + mu J)."""
    z, w = eta_c.discretize()
    a = kernel_J(z, z, kp, mu, zeta_c) * w[None, :]
    depth = max(1, int(math.ceil(math.log(PREFACTOR_PRODUCT_TOLERANCE / abs(mu)) / math.log(kp.tau))))
    prefactor = np.prod(1.0 - mu * kp.tau ** np.arange(1, depth + 1))
    return complex(prefactor * det_i_minus(a, -mu))


def prob_saddle_form(qp: QueryPoint, params: ModelParams, quad: QuadratureSpec = QuadratureSpec()) -> Estimate:
    """
    mu-contour integral of prod(1 - mu tau^k) det(I + mu J) / mu.

    Diagnostic only: at x = t = 0 the integrand is 1/(mu prod_{j=-m}^{0}(1 - mu tau^j)),
    whose residues cancel, so this does not reproduce P(x_m <= x).
    """
    kp = KernelParams.from_query(qp, params)
    ec = eta_contour(params, nodes=quad.nodes, tol=quad.tol)
    zc = zeta_contour(params, ec.radius, nodes=quad.inner_nodes, tol=quad.tol)
    mc = mu_contour(params, quad.outer_nodes, quad.tol)
    mu, w = mc.discretize()
    vals = np.array([saddle_form_integrand(z, kp, ec, zc) for z in mu]) / mu * w
    total = complex(np.sum(vals))
    details = {"eta_radius": ec.radius, "eta_nodes": ec.nodes, "zeta_radius": zc.radius,
               "zeta_nodes": zc.nodes, "mu_radius": mc.radius, "mu_nodes": mc.nodes}
    return Estimate(total.real, abs(total.imag), details)


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------

FORMULAS = {
    "two-param": prob_two_param,
    "one-param": prob_one_param,
    "saddle": prob_saddle_form,
}


def fredholm_cdf(formula: str, m: int, t: float, x_grid, params: ModelParams,
                 quad: QuadratureSpec = QuadratureSpec()) -> DistributionResult:
    """Evaluate one of ``FORMULAS`` over an integer grid of x."""
    if formula not in FORMULAS:
        raise ValidationError(f"unknown formula {formula!r}; choose from {sorted(FORMULAS)}")
    x_grid = [int(x) for x in x_grid]
    if not x_grid:
        raise ValidationError("x-range is empty")
    fn = FORMULAS[formula]
    estimates = [fn(QueryPoint.of(m, t, x), params, quad) for x in x_grid]
    logger.info(f"{formula}: evaluated {len(x_grid)} points at m={m}, t={t:g}")
    meta = {"formula": formula, "m": m, "t": t, "params": {"u": params.u, "p": params.p},
            "tail_tolerance": TAIL_TOLERANCE, "quad_tolerance": quad.tol,
            "contours": [e.details for e in estimates]}
    return DistributionResult.from_estimates(x_grid, estimates, meta)
