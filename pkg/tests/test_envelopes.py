import math

import numpy as np
import pytest

from anchoriter.envelopes import (
    EventSchedule,
    block_products,
    drift_block_lambda,
    envelope_stepwise,
    envelope_uniform_gap,
    envelope_variable,
    km_modulus,
)
from anchoriter.errors import AnchorError

LAMBDA_EXAMPLE = 0.832483208  # 1.01**4 * 0.8, exact in decimal


def test_schedule_validation():
    with pytest.raises(AnchorError):
        EventSchedule((3, 3), 5)
    with pytest.raises(AnchorError):
        EventSchedule((0, 2), 5)
    with pytest.raises(AnchorError):
        EventSchedule((2, 7), 5)


def test_schedule_helpers():
    s = EventSchedule.periodic(5, 20)
    assert s.event_times == (5, 10, 15, 20)
    assert s.gaps() == [5, 5, 5, 5]
    assert s.uniform_gap() == 5
    assert EventSchedule.from_gaps([2, 3, 4]).event_times == (2, 5, 9)
    assert EventSchedule.from_gaps([2, 3, 4]).horizon == 9
    assert list(np.flatnonzero(s.is_event())) == [5, 10, 15, 20]


def test_isometries_give_unit_factors():
    bf = block_products(np.ones(12), EventSchedule((3, 7, 12), 12))
    assert np.array_equal(bf.lambdas, [1.0, 1.0, 1.0])


def test_block_factor_example():
    bf = block_products([1.01, 1.01, 1.01, 1.01, 0.8], EventSchedule((5,), 5))
    assert bf.lambdas[0] == pytest.approx(LAMBDA_EXAMPLE, abs=1e-15)


def test_block_factor_direct_multiplication():
    bf = block_products([2.0, 0.25], EventSchedule((1, 2), 2))
    assert np.array_equal(bf.lambdas, [2.0, 0.25])
    assert np.array_equal(bf.cumulative, [2.0, 0.5])


def test_block_products_need_events_and_moduli():
    with pytest.raises(AnchorError):
        block_products([1.0], EventSchedule((), 1))
    with pytest.raises(AnchorError):
        block_products([1.0], EventSchedule((2,), 2))
    with pytest.raises(AnchorError):
        block_products([-1.0], EventSchedule((1,), 1))


def test_log_space_products_for_long_blocks():
    tau = np.full(20_000, 0.999)
    bf = block_products(tau, EventSchedule((20_000,), 20_000))
    assert bf.lambdas[0] == pytest.approx(math.exp(20_000 * math.log(0.999)), rel=1e-12)


def test_log_space_products_for_tiny_factors():
    bf = block_products([1e-200, 1e-200, 1e200], EventSchedule((3,), 3))
    assert bf.lambdas[0] == pytest.approx(1e-200, rel=1e-12)


def test_envelope_zero_distance():
    assert np.all(envelope_variable(np.full(10, 1.3), EventSchedule.periodic(2, 10), 0.0) == 0.0)


def test_envelope_ten_blocks():
    tau = ([1.01] * 4 + [0.8]) * 10
    env = envelope_variable(tau, EventSchedule.periodic(5, 50), 1.0)
    assert env[-1] == pytest.approx(0.15986552609904663, rel=1e-12)
    assert env[-1] == pytest.approx(0.16, abs=0.005)


def test_envelope_geometric_halving():
    env = envelope_variable(np.full(5, 0.5), EventSchedule.periodic(1, 5), 8.0)
    assert np.array_equal(env, [4.0, 2.0, 1.0, 0.5, 0.25])


def test_stepwise_envelope_includes_step_zero():
    env = envelope_stepwise([2.0, 0.5, 0.5], 3.0)
    assert np.array_equal(env, [3.0, 6.0, 3.0, 1.5])


def test_uniform_gap_envelope():
    assert envelope_uniform_gap(1.0, 5, 5, 3.0, 40) == 3.0
    assert envelope_uniform_gap(0.8325, 5, 5, 1.0, 50) == pytest.approx(0.8325**10)
    assert envelope_uniform_gap(0.8325, 5, 5, 1.0, 50) == pytest.approx(0.1598, abs=1e-4)
    assert envelope_uniform_gap(0.5, 2, 1, 1.0, 4) == pytest.approx(0.25)
    with pytest.raises(AnchorError):
        envelope_uniform_gap(0.5, 2, 5, 1.0, 4)


@pytest.mark.parametrize("alpha, q, expected", [(1.0, 0.5, 0.5), (0.5, 0.0, 0.5), (0.25, 0.8, 0.95)])
def test_km_modulus(alpha, q, expected):
    assert km_modulus(alpha, q) == pytest.approx(expected)


def test_km_modulus_domain():
    with pytest.raises(AnchorError):
        km_modulus(0.0, 0.5)
    with pytest.raises(AnchorError):
        km_modulus(0.5, 1.0)


def test_drift_block_lambda():
    assert drift_block_lambda([1.01] * 4, [0.8]) == pytest.approx(LAMBDA_EXAMPLE, abs=1e-15)
    assert drift_block_lambda([], []) == 1.0
    assert drift_block_lambda([1.05] * 6, [1.0]) == pytest.approx(1.05**6)


def test_drift_block_lambda_warns_on_expansive_event():
    with pytest.warns(UserWarning):
        assert drift_block_lambda([1.0], [1.2]) == pytest.approx(1.2)


def test_log_cumulative_survives_overflow():
    tau = np.full(20_000, 1.05)
    bf = block_products(tau, EventSchedule.periodic(100, 20_000))
    assert np.isinf(bf.cumulative[-1])
    assert bf.log_cumulative[-1] == pytest.approx(20_000 * math.log(1.05), rel=1e-14)
    np.testing.assert_allclose(np.exp(bf.log_lambdas), bf.lambdas, rtol=1e-12)


def test_log_fields_handle_zero_moduli():
    bf = block_products([0.0, 1.0, 2.0], EventSchedule((1, 3), 3))
    assert bf.log_lambdas[0] == -math.inf and bf.log_cumulative[-1] == -math.inf
    assert bf.cumulative[-1] == 0.0
