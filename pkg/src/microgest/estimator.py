"""Static resource analysis against 8-bit microcontroller budgets.

Everything here is arithmetic over a :class:`~microgest.model.ModelSpec`;
no network is ever executed.  The execution-time model charges a fixed
cost per multiply-accumulate plus a per-neuron cost for each layer's
activation function.  Cost constants and memory budgets are plain data so
other targets can be modeled by swapping the configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .errors import InvalidParams, UnknownActivationCost
from .model import Activation, LayerKind, ModelSpec, check_spec


def _default_activation_costs() -> dict[Activation, float]:
    # microseconds per neuron, measured on a 16 MHz ATmega328P-class core
    return {
        Activation.SIGMOID: 170.0,
        Activation.TANH: 170.0,
        Activation.HARD_SIGMOID: 15.0,
        Activation.SOFTSIGN: 41.0,
        Activation.RELU: 5.0,
        Activation.SOFTMAX: 170.0,
        Activation.MAX: 5.0,
        Activation.APPROX_SOFTMAX: 83.0,
    }


@dataclass(frozen=True)
class CostModel:
    """Per-operation execution times in microseconds.

    ``mac_us`` covers one weight multiplication plus its accumulation.
    ``activation_us`` maps each activation to its per-neuron evaluation
    time; layer-wise activations (softmax family, max) are also charged
    per neuron.  ``approx_exp_us`` prices one call of the quadratic
    exponential approximation on its own.
    """

    mac_us: float = 18.0
    approx_exp_us: float = 75.0
    activation_us: Mapping[Activation, float] = field(
        default_factory=_default_activation_costs
    )

    def __post_init__(self) -> None:
        if self.mac_us <= 0 or self.approx_exp_us <= 0:
            raise InvalidParams("cost constants must be positive")
        for act, us in self.activation_us.items():
            if us <= 0:
                raise InvalidParams(f"cost for {act.value} must be positive")

    def activation_cost(self, activation: Activation) -> float:
        try:
            return float(self.activation_us[activation])
        except KeyError:
            raise UnknownActivationCost(
                f"no cost configured for activation {activation.value!r}"
            ) from None


@dataclass(frozen=True)
class Budget:
    """Memory limits of the target.

    Defaults describe an ATmega328P: 32 kB flash, 2 kB RAM, 4-byte float
    parameters, and half of the RAM reserved for layer activations.
    Zero-byte budgets are allowed; nothing fits them.
    """

    flash_bytes: int = 32768
    ram_bytes: int = 2048
    bytes_per_parameter: int = 4
    ram_fraction_for_layers: float = 0.5
    bytes_per_variable: int = 4

    def __post_init__(self) -> None:
        if self.flash_bytes < 0 or self.ram_bytes < 0:
            raise InvalidParams("memory sizes must be >= 0")
        if self.bytes_per_parameter not in (1, 2, 4):
            raise InvalidParams("bytes_per_parameter must be 1, 2, or 4")
        if not 0.0 < self.ram_fraction_for_layers <= 1.0:
            raise InvalidParams("ram_fraction_for_layers must be in (0, 1]")
        if self.bytes_per_variable <= 0:
            raise InvalidParams("bytes_per_variable must be positive")


@dataclass(frozen=True)
class ResourceReport:
    """Counts, sizes, and fit verdicts for one model against one budget."""

    weights: int
    parameters: int
    activation_calls: int
    ram_variables: int
    ram_limiting_layer: int
    flash_bytes: int
    ram_bytes_needed: int
    exec_time_us: float
    fits_flash: bool
    fits_ram: bool

    @property
    def fits(self) -> bool:
        return self.fits_flash and self.fits_ram


def count_weights(spec: ModelSpec) -> int:
    """Multiplications per execution: Σ neurons × fan-in.

    A recurrent layer's fan-in includes its own neurons, so its feedback
    edges are counted.
    """
    check_spec(spec)
    return sum(layer.neurons * layer.fan_in for layer in spec.layers)


def count_parameters(spec: ModelSpec) -> int:
    """Weights plus one bias per neuron."""
    return count_weights(spec) + sum(layer.neurons for layer in spec.layers)


def count_activation_calls(spec: ModelSpec) -> int:
    """Per-neuron activation evaluations in one execution."""
    check_spec(spec)
    return sum(layer.neurons for layer in spec.layers)


def _layer_ram_variables(layer) -> int:
    """Working variables one layer needs while it executes.

    A dense layer holds its inputs and its outputs.  A recurrent layer
    additionally holds its previous outputs.  Layer-wise activations
    (softmax family, max) need a second copy of the outputs, which can
    dominate when the input vector is short.
    """
    layerwise = layer.activation.is_layerwise
    if layer.kind is LayerKind.RECURRENT:
        need = 2 * layer.neurons + layer.input_size
        if layerwise:
            need = max(need, 3 * layer.neurons)
    else:
        need = layer.neurons + layer.input_size
        if layerwise:
            need = max(need, 2 * layer.neurons)
    return need


def count_ram_variables(spec: ModelSpec) -> tuple[int, int]:
    """Peak per-layer variable count and the index of the limiting layer."""
    check_spec(spec)
    needs = [_layer_ram_variables(layer) for layer in spec.layers]
    peak = max(needs)
    return peak, needs.index(peak)


def estimate_exec_time(spec: ModelSpec, cost: CostModel | None = None) -> float:
    """Execution time in microseconds: MAC portion plus activation portion."""
    cost = cost or CostModel()
    total = count_weights(spec) * cost.mac_us
    for layer in spec.layers:
        total += layer.neurons * cost.activation_cost(layer.activation)
    return total


def activation_time(spec: ModelSpec, cost: CostModel | None = None) -> float:
    """Just the activation portion of the execution time, in microseconds."""
    cost = cost or CostModel()
    return float(
        sum(
            layer.neurons * cost.activation_cost(layer.activation)
            for layer in spec.layers
        )
    )


def check_fit(
    spec: ModelSpec,
    budget: Budget | None = None,
    cost: CostModel | None = None,
) -> ResourceReport:
    """Assemble the full resource report for one model."""
    budget = budget or Budget()
    weights = count_weights(spec)
    parameters = count_parameters(spec)
    ram_vars, limiting = count_ram_variables(spec)
    flash = parameters * budget.bytes_per_parameter
    ram_needed = ram_vars * budget.bytes_per_variable
    ram_allowed = budget.ram_fraction_for_layers * budget.ram_bytes
    return ResourceReport(
        weights=weights,
        parameters=parameters,
        activation_calls=count_activation_calls(spec),
        ram_variables=ram_vars,
        ram_limiting_layer=limiting,
        flash_bytes=flash,
        ram_bytes_needed=ram_needed,
        exec_time_us=estimate_exec_time(spec, cost),
        fits_flash=flash <= budget.flash_bytes,
        fits_ram=ram_needed <= ram_allowed,
    )


# --- key=value configuration files -------------------------------------------

_COST_KEYS = {
    "mac_us": "mac_us",
    "approx_exp_us": "approx_exp_us",
    "sigmoid_us": Activation.SIGMOID,
    "tanh_us": Activation.TANH,
    "hard_sigmoid_us": Activation.HARD_SIGMOID,
    "softsign_us": Activation.SOFTSIGN,
    "relu_us": Activation.RELU,
    "softmax_us": Activation.SOFTMAX,
    "max_us": Activation.MAX,
    "approx_softmax_us": Activation.APPROX_SOFTMAX,
}

_BUDGET_KEYS = {
    "flash_bytes": int,
    "ram_bytes": int,
    "bytes_per_parameter": int,
    "ram_fraction_for_layers": float,
    "bytes_per_variable": int,
}


def parse_config_text(text: str) -> tuple[CostModel, Budget]:
    """Parse ``key = value`` lines into a cost model and budget.

    Blank lines and ``#`` comments are ignored.  Any key may be omitted
    (its default applies); unknown keys are rejected.
    """
    mac_us = 18.0
    approx_exp_us = 75.0
    activation_us = _default_activation_costs()
    budget_kwargs: dict[str, float | int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidParams(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        try:
            if key in _COST_KEYS:
                target = _COST_KEYS[key]
                if target == "mac_us":
                    mac_us = float(value)
                elif target == "approx_exp_us":
                    approx_exp_us = float(value)
                else:
                    activation_us[target] = float(value)
            elif key in _BUDGET_KEYS:
                budget_kwargs[key] = _BUDGET_KEYS[key](value)
            else:
                raise InvalidParams(f"line {lineno}: unknown key {key!r}")
        except ValueError:
            raise InvalidParams(
                f"line {lineno}: bad value {value!r} for {key}"
            ) from None
    cost = CostModel(
        mac_us=mac_us, approx_exp_us=approx_exp_us, activation_us=activation_us
    )
    return cost, Budget(**budget_kwargs)


def load_config(path: str | Path) -> tuple[CostModel, Budget]:
    """Read a cost-and-budget configuration file."""
    return parse_config_text(Path(path).read_text())
