"""Counting identities, RAM/flash rules, execution-time model, config files."""

import numpy as np
import pytest

from microgest.errors import InvalidParams, UnknownActivationCost
from microgest.estimator import (
    Budget,
    CostModel,
    activation_time,
    check_fit,
    count_activation_calls,
    count_parameters,
    count_ram_variables,
    count_weights,
    estimate_exec_time,
    load_config,
    parse_config_text,
)
from microgest.inference import count_macs, run_ffnn, step_rnn
from microgest.model import Activation, LayerKind, RnnState, chain, parse_arch
from microgest.training import init_params

from conftest import random_spec

D, R = LayerKind.DENSE, LayerKind.RECURRENT
A = Activation


def _rnn17(hidden=A.SIGMOID, out=A.SOFTMAX):
    return chain(12, [(D, 9, hidden), (D, 9, hidden), (R, 17, out)])


# --- counting ----------------------------------------------------------------

def test_tiny_dense_net_counts():
    spec = chain(3, [(D, 3, A.SIGMOID), (D, 2, A.SOFTMAX)])
    assert count_weights(spec) == 15
    assert count_parameters(spec) == 20
    assert count_activation_calls(spec) == 5


def test_tiny_recurrent_net_counts():
    spec = chain(3, [(R, 3, A.SIGMOID), (D, 2, A.SOFTMAX)])
    assert count_weights(spec) == 24
    assert count_parameters(spec) == 29


def test_mid_size_recurrent_net_counts():
    spec = _rnn17()
    assert count_weights(spec) == 631
    assert count_parameters(spec) == 666
    assert count_activation_calls(spec) == 35


@pytest.mark.parametrize(
    "arch, weights, parameters",
    [
        ("180-5-5", 925, 935),
        ("180-8-5", 1480, 1493),
        ("180-10-5", 1850, 1865),
        ("180-15-5", 2775, 2795),
        ("180-20-5", 3700, 3725),
        ("180-10-10-5", 1950, 1975),
        ("180-20-10-5", 3850, 3885),
    ],
)
def test_classifier_family_counts(arch, weights, parameters):
    spec = parse_arch(arch)
    assert count_weights(spec) == weights
    assert count_parameters(spec) == parameters


def test_parameters_minus_weights_is_the_neuron_count():
    rng = np.random.default_rng(0)
    for _ in range(20):
        spec = random_spec(rng)
        neurons = sum(layer.neurons for layer in spec.layers)
        assert count_parameters(spec) - count_weights(spec) == neurons


# --- RAM variables -----------------------------------------------------------

def test_ram_rule_on_the_mixed_net():
    # layers need 21, 18, and max(2*17+9, 3*17) = 51 working variables
    peak, limiting = count_ram_variables(_rnn17())
    assert peak == 51
    assert limiting == 2


def test_ram_rule_for_equal_dense_layers():
    spec = chain(128, [(D, 128, A.SIGMOID), (D, 128, A.SIGMOID)])
    assert count_ram_variables(spec)[0] == 256


def test_ram_rule_for_equal_recurrent_softmax_layers():
    spec = chain(85, [(R, 85, A.SOFTMAX), (R, 85, A.SOFTMAX)])
    assert count_ram_variables(spec)[0] == 255


def test_layerwise_output_can_dominate_ram():
    # 2n beats n + input when the input vector is short
    spec = chain(2, [(D, 10, A.SOFTMAX)])
    assert count_ram_variables(spec)[0] == 20
    spec = chain(2, [(D, 10, A.SIGMOID)])
    assert count_ram_variables(spec)[0] == 12


# --- execution-time model ----------------------------------------------------

def test_mac_portion_is_weights_times_unit_cost():
    spec = _rnn17()
    assert estimate_exec_time(spec) - activation_time(spec) == 631 * 18.0
    assert estimate_exec_time(spec) - activation_time(spec) == pytest.approx(11358.0)


TABLE_ROWS = [
    (A.SIGMOID, A.SOFTMAX, 5.95, 17.31),
    (A.HARD_SIGMOID, A.SOFTMAX, 3.16, 14.52),
    (A.SOFTSIGN, A.SOFTMAX, 3.63, 14.99),
    (A.RELU, A.SOFTMAX, 2.98, 14.34),
    (A.RELU, A.MAX, 0.18, 11.54),
    (A.RELU, A.APPROX_SOFTMAX, 1.50, 12.86),
]


def _row_times_us(hidden, out):
    """Row times for the 631-weight net; the one-hot output cannot sit on a
    recurrent layer, so that row swaps the output activation's cost."""
    if out is A.MAX:
        cost = CostModel()
        base = _rnn17(hidden, A.SOFTMAX)
        act = activation_time(base) - 17 * cost.activation_cost(A.SOFTMAX)
        act += 17 * cost.activation_cost(A.MAX)
        total = count_weights(base) * cost.mac_us + act
        return act, total
    spec = _rnn17(hidden, out)
    return activation_time(spec), estimate_exec_time(spec)


@pytest.mark.parametrize("hidden, out, act_ms, total_ms", TABLE_ROWS)
def test_execution_time_rows(hidden, out, act_ms, total_ms):
    act_us, total_us = _row_times_us(hidden, out)
    assert abs(act_us / 1000.0 - act_ms) <= 0.01
    assert abs(total_us / 1000.0 - total_ms) <= 0.01


def test_exact_row_microseconds():
    assert _row_times_us(A.SIGMOID, A.SOFTMAX) == (5950.0, 17308.0)
    assert _row_times_us(A.RELU, A.MAX) == (175.0, 11533.0)
    assert _row_times_us(A.RELU, A.APPROX_SOFTMAX) == (1501.0, 12859.0)


def test_custom_cost_model_scales_the_estimate():
    spec = chain(3, [(D, 2, A.RELU), (D, 2, A.SOFTMAX)])
    cost = CostModel(mac_us=1.0, activation_us={A.RELU: 2.0, A.SOFTMAX: 3.0})
    assert estimate_exec_time(spec, cost) == 10 * 1.0 + 2 * 2.0 + 2 * 3.0


def test_missing_activation_cost_raises():
    cost = CostModel(activation_us={A.SIGMOID: 170.0})
    assert cost.activation_cost(A.SIGMOID) == 170.0
    with pytest.raises(UnknownActivationCost):
        cost.activation_cost(A.TANH)
    spec = chain(3, [(D, 2, A.TANH), (D, 2, A.SIGMOID)])
    with pytest.raises(UnknownActivationCost):
        estimate_exec_time(spec, cost)


def test_cost_model_rejects_nonpositive_times():
    with pytest.raises(InvalidParams):
        CostModel(mac_us=0.0)
    with pytest.raises(InvalidParams):
        CostModel(activation_us={A.RELU: -1.0})


# --- flash and fit -----------------------------------------------------------

def test_flash_size_of_the_reference_classifier():
    report = check_fit(parse_arch("180-8-5"))
    assert report.parameters == 1493
    assert report.flash_bytes == 5972
    assert report.fits_flash
    assert report.fits


def test_flash_capacity_boundary_at_four_bytes():
    exactly = chain(1023, [(D, 8, A.SOFTMAX)])  # 8 * 1023 + 8 = 8192 parameters
    assert count_parameters(exactly) == 8192
    assert check_fit(exactly).fits_flash
    over = chain(8192, [(D, 1, A.SOFTMAX)])  # 8193 parameters
    assert count_parameters(over) == 8193
    assert not check_fit(over).fits_flash


def test_one_byte_parameters_quadruple_the_capacity():
    over = chain(8192, [(D, 1, A.SOFTMAX)])
    small = Budget(bytes_per_parameter=1)
    assert check_fit(over, small).flash_bytes == 8193
    assert check_fit(over, small).fits_flash


def test_ram_fit_uses_half_the_ram_by_default():
    fits = chain(128, [(D, 128, A.SIGMOID)])  # 256 vars * 4 B = 1024 B
    assert check_fit(fits).fits_ram
    too_big = chain(129, [(D, 129, A.SIGMOID)])  # 258 vars -> 1032 B
    assert not check_fit(too_big).fits_ram


def test_zero_byte_budget_fits_nothing():
    report = check_fit(chain(1, [(D, 1, A.SIGMOID)]),
                       Budget(flash_bytes=0, ram_bytes=0))
    assert not report.fits_flash
    assert not report.fits_ram
    assert not report.fits


def test_budget_validation():
    with pytest.raises(InvalidParams):
        Budget(bytes_per_parameter=3)
    with pytest.raises(InvalidParams):
        Budget(ram_fraction_for_layers=0.0)
    with pytest.raises(InvalidParams):
        Budget(flash_bytes=-1)
    with pytest.raises(InvalidParams):
        Budget(bytes_per_variable=0)


def test_report_carries_all_counts():
    report = check_fit(_rnn17())
    assert report.weights == 631
    assert report.parameters == 666
    assert report.activation_calls == 35
    assert report.ram_variables == 51
    assert report.ram_limiting_layer == 2
    assert report.exec_time_us == pytest.approx(17308.0)


# --- instrumented multiply counts vs static counts ----------------------------

def test_mac_counter_agrees_with_count_weights():
    rng = np.random.default_rng(77)
    for _ in range(10):
        spec = random_spec(rng)
        params = init_params(spec, int(rng.integers(0, 2**31)))
        x = rng.normal(size=spec.features)
        has_recurrent = any(l.kind is R for l in spec.layers)
        with count_macs() as macs:
            if has_recurrent:
                step_rnn(spec, params, x, RnnState(spec))
            else:
                run_ffnn(spec, params, x)
        assert macs.count == count_weights(spec)


# --- configuration files -----------------------------------------------------

def test_config_text_overrides_every_field():
    text = """
    # execution-time constants
    mac_us = 2.5
    approx_exp_us = 10
    sigmoid_us = 100
    tanh_us = 101
    hard_sigmoid_us = 7
    softsign_us = 20
    relu_us = 1
    softmax_us = 99
    max_us = 2
    approx_softmax_us = 40

    flash_bytes = 1000      # smaller part
    ram_bytes = 512
    bytes_per_parameter = 2
    ram_fraction_for_layers = 0.25
    bytes_per_variable = 2
    """
    cost, budget = parse_config_text(text)
    assert cost.mac_us == 2.5
    assert cost.approx_exp_us == 10.0
    assert cost.activation_cost(A.SIGMOID) == 100.0
    assert cost.activation_cost(A.TANH) == 101.0
    assert cost.activation_cost(A.HARD_SIGMOID) == 7.0
    assert cost.activation_cost(A.SOFTSIGN) == 20.0
    assert cost.activation_cost(A.RELU) == 1.0
    assert cost.activation_cost(A.SOFTMAX) == 99.0
    assert cost.activation_cost(A.MAX) == 2.0
    assert cost.activation_cost(A.APPROX_SOFTMAX) == 40.0
    assert budget == Budget(
        flash_bytes=1000,
        ram_bytes=512,
        bytes_per_parameter=2,
        ram_fraction_for_layers=0.25,
        bytes_per_variable=2,
    )


def test_empty_config_gives_defaults():
    cost, budget = parse_config_text("")
    assert cost == CostModel()
    assert budget == Budget()


def test_config_rejects_unknown_keys_and_bad_values():
    with pytest.raises(InvalidParams):
        parse_config_text("made_up_key = 3")
    with pytest.raises(InvalidParams):
        parse_config_text("mac_us = fast")
    with pytest.raises(InvalidParams):
        parse_config_text("just some words")


def test_config_loads_from_a_file(tmp_path):
    path = tmp_path / "target.cfg"
    path.write_text("mac_us = 9\nflash_bytes = 2048\n")
    cost, budget = load_config(path)
    assert cost.mac_us == 9.0
    assert budget.flash_bytes == 2048
