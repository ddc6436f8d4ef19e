import cmath
import math

import numpy as np
import pytest

from src.fredholm import (
    ContourSpec,
    DiscretizedOperator,
    KernelParams,
    QuadratureSpec,
    epsilon,
    eta_contour,
    f_sum,
    fredholm_cdf,
    fredholm_series_det,
    gamma_contour,
    k1_contour,
    kernel_J,
    kernel_K,
    lambda_contour,
    lambda_weight,
    nystrom_det,
    phi,
    phi_infinity,
    prob_one_param,
    prob_two_param,
    product_identity,
    product_tail,
    saddle_form_integrand,
    transport_identity,
    truncated_product,
    xi_contour,
    zeta_contour,
)
from src.model import QueryPoint
from utils.errors import ValidationError


def _rank_three(a, b):
    return 0.2 + 0.1 * a / b + 0.05 * a ** 2 / b ** 2


def test_contour_spec_validation():
    with pytest.raises(ValidationError):
        ContourSpec(0.0, 8)
    with pytest.raises(ValidationError):
        ContourSpec(1.0, 0)
    with pytest.raises(ValidationError):
        ContourSpec(1.0, 8, orientation="clockwise")
    z, w = ContourSpec(2.0, 16).discretize()
    # weights carry 1/(2 pi i): the trapezoid sum of 1/z is 1
    assert np.sum(w / z) == pytest.approx(1.0)


def test_series_matches_lu_for_rank_three_kernel():
    contour = ContourSpec(1.0, 24)
    op = DiscretizedOperator.build(_rank_three, contour)
    for lam in (0.5, -1.3 + 0.4j, 2.0j):
        series = fredholm_series_det(op, contour, lam, k_max=3, tail_tol=math.inf)
        assert series == pytest.approx(nystrom_det(op, contour, lam), abs=1e-12)
        assert op.det_many([lam])[0] == pytest.approx(op.det(lam), abs=1e-12)


def test_series_linear_term_is_trace():
    contour = ContourSpec(1.0, 16)
    op = DiscretizedOperator.build(lambda a, b: np.exp(a * np.conj(b)) / 10.0, contour)
    lam = 0.7 - 0.2j
    value = fredholm_series_det(op, contour, lam, k_max=1, tail_tol=math.inf)
    assert value == pytest.approx(1.0 - lam * np.trace(op.matrix), abs=1e-14)
    with pytest.raises(ValidationError):
        fredholm_series_det(op, contour, lam, k_max=4)


def test_truncated_product_matches_long_product():
    lam = 0.8 * np.exp(1.1j)
    explicit = np.prod(1.0 - lam * 0.5 ** np.arange(1, 61))
    assert truncated_product(lam, 0.5) == pytest.approx(explicit, abs=1e-14)


def test_product_identity_at_tau_half(tau_half):
    kp = KernelParams(2, 1.0, 0, tau_half)
    rng = np.random.default_rng(4)
    for _ in range(5):
        lam = rng.uniform(0, 1) * np.exp(2j * np.pi * rng.random())
        assert product_identity(kp, lam).deviation < 1e-8


def test_product_identity_has_no_x_or_t_dependence(tau_half):
    lam = 0.9j
    first = product_identity(KernelParams(2, 1.0, 0, tau_half), lam)
    second = product_identity(KernelParams(-3, 0.4, 0, tau_half), lam)
    assert abs(first.lhs - second.lhs) < 1e-8
    wide = product_identity(KernelParams(1, 0.5, 0, tau_half), lam, k1_contour(KernelParams(1, 0.5, 0, tau_half), 1.6))
    assert wide.deviation < 1e-8


@pytest.mark.parametrize("x,t,lam", [(0, 0.5, 0.6), (2, 1.0, -0.8j), (-1, 1.5, 0.3 + 0.5j)])
def test_transport_identity(tau_half, x, t, lam):
    check = transport_identity(KernelParams(x, t, 0, tau_half), lam)
    assert check.deviation < 1e-8
    assert "difference_kernel_det" in check.details


def test_transport_identity_needs_one_parameter(two_param):
    with pytest.raises(ValidationError):
        transport_identity(KernelParams(0, 1.0, 0, two_param), 0.5)


def test_contour_radii_are_checked(tau_half):
    kp = KernelParams(0, 1.0, 1, tau_half)
    with pytest.raises(ValidationError):
        xi_contour(kp, radius=2.5)
    with pytest.raises(ValidationError):
        gamma_contour(kp, radius=0.9)
    assert xi_contour(kp).radius == pytest.approx(math.sqrt(2.0))


def test_lambda_contour_refuses_large_m(tau_half):
    assert lambda_contour(3, tau_half).radius == pytest.approx(12.0)
    with pytest.raises(ValidationError):
        lambda_contour(7, tau_half)


def test_kernel_params_validation(tau_half):
    with pytest.raises(ValidationError):
        KernelParams(0.5, 1.0, 1, tau_half)
    with pytest.raises(ValidationError):
        KernelParams(0, -1.0, 1, tau_half)


def test_two_param_small_time_limit(two_param):
    near_zero = prob_two_param(QueryPoint.of(1, 1e-3, 0), two_param, QuadratureSpec(refine=False))
    below = prob_two_param(QueryPoint.of(1, 1e-3, -1), two_param, QuadratureSpec(refine=False))
    assert near_zero.value > 0.99
    assert below.value < 0.01


def test_one_param_is_a_cdf(tau_half):
    result = fredholm_cdf("one-param", 2, 2.0, range(-3, 6), tau_half)
    assert np.all(result.values > -1e-6) and np.all(result.values < 1 + 1e-6)
    assert np.all(np.diff(result.values) > -1e-8)
    assert np.all(result.errors < 1e-7)
    assert all(d["refine_delta"] < 1e-7 for d in result.meta["contours"])


@pytest.mark.parametrize("x", [-1, 0, 2])
def test_two_param_agrees_with_one_param(tau_half, x):
    qp = QueryPoint.of(1, 1.0, x)
    two = prob_two_param(qp, tau_half)
    one = prob_one_param(qp, tau_half)
    assert two.value == pytest.approx(one.value, abs=1e-6)


def test_one_param_rejects_two_parameter_rates(two_param):
    with pytest.raises(ValidationError):
        prob_one_param(QueryPoint.of(1, 1.0, 0), two_param)


def test_fredholm_cdf_validation(tau_half):
    with pytest.raises(ValidationError):
        fredholm_cdf("three-param", 1, 1.0, [0], tau_half)
    with pytest.raises(ValidationError):
        fredholm_cdf("one-param", 1, 1.0, [], tau_half)


def test_f_sum_matches_rearranged_series():
    tau = 0.5
    mu = 1.5 * np.exp(0.3j)
    z = 1.4 * np.exp(1j * np.linspace(0.1, 6.0, 7))
    n = np.arange(0, 200)
    upper = np.sum(mu ** n[:, None] * tau ** (n[:, None] + 1) * z / (1.0 - tau ** (n[:, None] + 1) * z), axis=0)
    k = np.arange(1, 200)
    lower = np.sum(mu ** (-k[:, None]) / (1.0 - tau ** (k[:, None] - 1) / z), axis=0)
    assert np.max(np.abs(f_sum(mu, z, tau) - (upper - lower))) < 1e-10


def test_f_sum_preconditions():
    with pytest.raises(ValidationError):
        f_sum(1.5, 0.9, 0.5)
    with pytest.raises(ValidationError):
        f_sum(0.0, 1.5, 0.5)
    with pytest.raises(ValidationError):
        f_sum(4.0, 1.5, 0.5)


def test_phi_infinity_ratio_identity(tau_half):
    kp = KernelParams(2, 0.7, 1, tau_half)
    tau = tau_half.tau
    for theta in (0.3, 2.0, 4.4):
        eta = 0.6 * np.exp(1j * theta)
        lhs = np.prod([phi(tau ** j * eta, kp) / tau for j in range(3)])
        rhs = phi_infinity(eta, kp) / phi_infinity(tau ** 3 * eta, kp)
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_product_tail_zeros(tau_half):
    assert abs(product_tail(2.0, 0.5)) < 1e-15
    assert abs(product_tail(0.0, 0.5) - 1.0) < 1e-15


def test_saddle_integrand_closed_form_at_origin(tau_half):
    kp = KernelParams(0, 0.0, 1, tau_half)
    ec = eta_contour(tau_half)
    zc = zeta_contour(tau_half, ec.radius)
    tau = tau_half.tau
    for mu in (1.5j, -1.5, 1.5 * np.exp(0.7j)):
        expected = 1.0 / ((1.0 - mu / tau) * (1.0 - mu))
        assert saddle_form_integrand(mu, kp, ec, zc) == pytest.approx(expected, rel=1e-6)


def test_kernel_j_shape(tau_half):
    kp = KernelParams(1, 0.5, 1, tau_half)
    ec = eta_contour(tau_half)
    zc = zeta_contour(tau_half, ec.radius)
    z, _ = ec.discretize()
    j = kernel_J(z[:5], z[:3], kp, 1.5j, zc)
    assert j.shape == (5, 3)
    assert np.all(np.isfinite(j))


def test_epsilon_vanishes_at_one(one_param, two_param):
    assert epsilon(1.0, one_param) == pytest.approx(0.0, abs=1e-15)
    assert epsilon(1.0, two_param) == pytest.approx(0.0, abs=1e-15)


def test_kernel_k_spot_value(one_param):
    kp = KernelParams(2, 1.0, 0, one_param)
    xi, xi_p = 1.2, 1.2j
    u, v, p, q, tau, gamma = 0.6, 0.4, 0.6, 0.4, 2.0 / 3.0, 0.2
    expected = (v * xi_p ** 2 * cmath.exp((p / xi_p + q * xi_p - 1.0) * 1.0 / gamma)
                / (u + v * xi * xi_p - xi) * (tau * xi_p - 1.0) / (1.0 - tau))
    assert complex(kernel_K(xi, xi_p, kp)) == pytest.approx(expected, rel=1e-12)


def test_kernel_k_vanishes_at_inverse_tau(one_param):
    kp = KernelParams(1, 0.8, 0, one_param)
    assert abs(kernel_K(1.2, 1.0 / one_param.tau, kp)) < 1e-12


def test_lambda_weight_against_logarithms(tau_half):
    kp = KernelParams(-2, 1.3, 2, tau_half)
    eta_p = 0.4 * cmath.exp(0.9j)
    assert complex(lambda_weight(eta_p, eta_p, kp)) == pytest.approx(1.0, abs=1e-14)
    for zeta in (1.2 * cmath.exp(0.3j), -1.1, 1.4j):
        expected = cmath.exp(-2 * cmath.log((1 - zeta) / (1 - eta_p))
                             + (zeta / (1 - zeta) - eta_p / (1 - eta_p)) * 1.3
                             + 2 * cmath.log(zeta / eta_p))
        assert complex(lambda_weight(zeta, eta_p, kp)) == pytest.approx(expected, rel=1e-12)


def test_phi_at_origin_is_tau(tau_half, one_param):
    for params in (tau_half, one_param):
        kp = KernelParams(3, 2.0, 1, params)
        assert complex(phi(0.0, kp)) == pytest.approx(params.tau, abs=1e-15)


def test_kernel_j_converges_in_zeta_nodes(tau_half):
    kp = KernelParams(1, 0.5, 1, tau_half)
    ec = eta_contour(tau_half)
    zc = zeta_contour(tau_half, ec.radius)
    fine = zeta_contour(tau_half, ec.radius, nodes=2 * zc.nodes)
    z, _ = ec.discretize()
    coarse_j = kernel_J(z[:6], z[:6], kp, 1.5j, zc)
    fine_j = kernel_J(z[:6], z[:6], kp, 1.5j, fine)
    assert np.max(np.abs(coarse_j - fine_j)) < 1e-9 * max(1.0, np.max(np.abs(fine_j)))


def test_two_param_stable_under_node_doubling(tau_half):
    qp = QueryPoint.of(1, 1.0, 0)
    coarse = prob_two_param(qp, tau_half, QuadratureSpec(refine=False))
    nodes, outer = coarse.details["xi_nodes"], coarse.details["lambda_nodes"]
    fine = prob_two_param(qp, tau_half, QuadratureSpec(nodes=2 * nodes, outer_nodes=2 * outer, refine=False))
    assert fine.details["xi_nodes"] == 2 * nodes
    assert abs(coarse.value - fine.value) < 1e-8
