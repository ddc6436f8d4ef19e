import math

import numpy as np
import pytest
from scipy.stats import skellam

from src.model import (
    INFINITE,
    INFINITY,
    Configuration,
    DistributionResult,
    Estimate,
    ModelParams,
    QueryPoint,
    gaussian_binomial,
    left_rates,
    left_tail_depth,
    q_bracket,
    rate_left,
    rate_right,
    right_rates,
    skellam_cdf,
    uv_bracket,
    uv_bracket_binomial,
)
from utils.errors import ValidationError


def test_params_derive_v_q_tau_gamma():
    params = ModelParams.from_up(0.6, 0.75)
    assert params.v == pytest.approx(0.4)
    assert params.q == pytest.approx(0.25)
    assert params.tau == pytest.approx(2.0 / 3.0)
    assert params.gamma == pytest.approx(0.2)
    assert not params.is_one_parameter


def test_one_parameter_mode(one_param):
    assert one_param.is_one_parameter
    assert one_param.p == one_param.u
    assert rate_right(1, one_param) + rate_left(1, one_param) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("u,p", [(0.5, 0.5), (0.4, 0.5), (1.0, 0.5), (0.7, 1.2), (0.7, -0.1)])
def test_params_reject_invalid(u, p):
    with pytest.raises(ValidationError):
        ModelParams.from_up(u, p)


def test_params_json_round_trip(two_param):
    again = ModelParams.from_json(two_param.to_json())
    assert again == two_param


@pytest.mark.parametrize("text", ["not json", "[1, 2]", '{"u": 0.6}', '{"u": 0.3, "p": 0.3}'])
def test_params_from_bad_json(text):
    with pytest.raises(ValidationError):
        ModelParams.from_json(text)


def test_query_point():
    qp = QueryPoint.of(2, 3.0, -1)
    params = ModelParams.one_parameter(0.75)
    assert qp.physical_time(params) == pytest.approx(6.0)
    with pytest.raises(ValidationError):
        QueryPoint.of(0, 1.0, 0)
    with pytest.raises(ValidationError):
        QueryPoint.of(1, 0.0, 0)


def test_q_bracket_values():
    assert q_bracket(1, 0.5) == 1.0
    assert q_bracket(3, 0.5) == pytest.approx(1.75)
    assert q_bracket(INFINITY, 0.5) == pytest.approx(2.0)
    with pytest.raises(ValidationError):
        q_bracket(0, 0.5)
    with pytest.raises(ValidationError):
        q_bracket(2, 1.0)


def test_rates_at_tau_half():
    params = ModelParams.from_up(2.0 / 3.0, 0.6)
    assert params.tau == pytest.approx(0.5)
    assert rate_right(1, params) == pytest.approx(0.6)
    assert rate_right(2, params) == pytest.approx(0.4)
    assert rate_right(INFINITY, params) == pytest.approx(0.3)
    assert rate_left(1, params) == pytest.approx(0.4)
    assert rate_left(2, params) == pytest.approx(0.4 / 3.0)
    assert rate_left(INFINITY, params) == 0.0


def test_rates_monotone_with_limits(two_param):
    r = right_rates(200, two_param)
    l = left_rates(200, two_param)
    assert np.all(np.diff(r[:60]) < 0)
    assert np.all(np.diff(l[:60]) < 0)
    assert r[-1] == pytest.approx(rate_right(INFINITY, two_param), rel=1e-12)
    # partial sums of L_n settle by n = 200
    assert np.sum(l[150:]) < 1e-12
    assert r[4] == pytest.approx(rate_right(5, two_param))
    assert l[4] == pytest.approx(rate_left(5, two_param))


def test_left_tail_depth_bounds_neglected_rates(two_param):
    depth = left_tail_depth(two_param, 1e-10)
    tail = np.sum(left_rates(depth + 400, two_param)[depth:])
    assert tail < 1e-10
    assert left_tail_depth(ModelParams.from_up(0.6, 1.0), 1e-10) == 1


def test_gaussian_binomial_values():
    assert gaussian_binomial(5, 0, 0.3) == 1.0
    assert gaussian_binomial(2, 1, 0.5) == pytest.approx(1.5)
    tau = 0.5
    assert gaussian_binomial(4, 2, tau) == pytest.approx((1 + tau ** 2) * (1 + tau + tau ** 2))
    with pytest.raises(ValidationError):
        gaussian_binomial(2, 3, 0.5)
    with pytest.raises(ValidationError):
        gaussian_binomial(-1, 0, 0.5)


def test_uv_bracket_binomial_values(one_param):
    assert uv_bracket_binomial(7, 0, one_param) == pytest.approx(1.0)
    assert uv_bracket_binomial(2, 1, one_param) == pytest.approx(1.0)
    expected = 0.6 ** 4 * gaussian_binomial(4, 2, 2.0 / 3.0)
    assert uv_bracket_binomial(4, 2, one_param) == pytest.approx(expected, rel=1e-13)
    with pytest.raises(ValidationError):
        uv_bracket_binomial(65, 3, one_param)


def test_q_combinatorics_identities_random_draws():
    rng = np.random.default_rng(7)
    for _ in range(200):
        params = ModelParams.from_up(float(rng.uniform(0.51, 0.99)), float(rng.uniform(0, 1)))
        u, v, tau = params.u, params.v, params.tau
        N = int(rng.integers(1, 21))
        m = int(rng.integers(0, N + 1))
        direct = (u ** N - v ** N) / (u - v)
        assert uv_bracket(N, params) == pytest.approx(direct, rel=1e-12)
        assert uv_bracket_binomial(N, m, params) == pytest.approx(
            u ** (m * (N - m)) * gaussian_binomial(N, m, tau), rel=1e-12)
        if 1 <= m < N:
            pascal = gaussian_binomial(N - 1, m - 1, tau) + tau ** m * gaussian_binomial(N - 1, m, tau)
            assert gaussian_binomial(N, m, tau) == pytest.approx(pascal, rel=1e-12)


def test_configuration_invariants():
    config = Configuration.from_positions([0, 0, 2, -1])
    assert config.particle_total == 4
    assert config.positions() == [-1, 0, 0, 2]
    assert config.order_statistic(2) == 0
    assert config.order_statistic(4) == 2
    with pytest.raises(ValidationError):
        config.order_statistic(5)
    with pytest.raises(ValidationError):
        Configuration(((0, 1), (0, 2)))
    with pytest.raises(ValidationError):
        Configuration(((0, 2),), particle_total=3)


def test_configuration_infinite_stack_rules():
    step = Configuration.step_initial(0)
    assert step.is_infinite and step.infinite_site == 0
    assert step.order_statistic(1000) == 0
    peeled = Configuration(((-2, 1), (0, INFINITE)))
    assert peeled.order_statistic(1) == -2
    assert peeled.order_statistic(2) == 0
    with pytest.raises(ValidationError):
        Configuration(((0, INFINITE), (1, 1)))
    with pytest.raises(ValidationError):
        Configuration(((0, INFINITE), (-1, INFINITE)))
    with pytest.raises(ValidationError):
        Configuration(((0, INFINITE),), particle_total=3)


def test_skellam_cdf_matches_scipy():
    for d in range(-6, 7):
        assert skellam_cdf(d, 1.2, 0.8) == pytest.approx(skellam.cdf(d, 1.2, 0.8), abs=1e-10)
    assert skellam_cdf(-1, 2.0, 0.0) == 0.0
    assert skellam_cdf(0, 0.0, 0.0) == 1.0


def test_distribution_result_rows():
    result = DistributionResult.from_estimates([0, 1], [Estimate(0.25, 1e-9), Estimate(0.75)], {"k": 1})
    assert result.rows() == [(0, 0.25, 1e-9), (1, 0.75, 0.0)]
    assert math.isclose(result.values.sum(), 1.0)
