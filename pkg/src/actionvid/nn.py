"""Parameter initialization and tiny functional layers over the op set."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, add, matmul, relu


def he_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))


def add_linear(params: dict[str, Tensor], rng: np.random.Generator, prefix: str,
               fan_in: int, fan_out: int, *, bias_fill: float = 0.0,
               scale: float = 1.0, zero: bool = False) -> None:
    w = np.zeros((fan_in, fan_out)) if zero else scale * he_init(rng, fan_in, fan_out)
    params[f"{prefix}.w"] = Tensor(w, requires_grad=True)
    params[f"{prefix}.b"] = Tensor(np.full(fan_out, bias_fill), requires_grad=True)


def add_mlp(params: dict[str, Tensor], rng: np.random.Generator, prefix: str,
            fan_in: int, hidden: int, fan_out: int, *, out_bias: float = 0.0,
            out_scale: float = 1.0) -> None:
    add_linear(params, rng, f"{prefix}.l1", fan_in, hidden)
    add_linear(params, rng, f"{prefix}.l2", hidden, fan_out, bias_fill=out_bias,
               scale=out_scale)


def linear(params: dict[str, Tensor], prefix: str, x) -> Tensor:
    return add(matmul(x, params[f"{prefix}.w"]), params[f"{prefix}.b"])


def mlp(params: dict[str, Tensor], prefix: str, x) -> Tensor:
    return linear(params, f"{prefix}.l2", relu(linear(params, f"{prefix}.l1", x)))


def add_conv(params: dict[str, Tensor], rng: np.random.Generator, prefix: str,
             cin: int, cout: int, *, zero: bool = False) -> None:
    fan_in = 9 * cin
    w = np.zeros((3, 3, cin, cout)) if zero else \
        rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(3, 3, cin, cout))
    params[f"{prefix}.w"] = Tensor(w, requires_grad=True)
    params[f"{prefix}.b"] = Tensor(np.zeros(cout), requires_grad=True)
