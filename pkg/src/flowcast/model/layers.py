"""Small shared building blocks for the model components."""

from __future__ import annotations

import numpy as np

from ..autodiff import DiffTensor, ParamRegistry, add, matmul


def glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Affine:
    """y = x W + b along the last axis; leading axes broadcast."""

    def __init__(self, reg: ParamRegistry, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator, bias: bool = True):
        self.W = reg.register(f"{name}/W", glorot(rng, (d_in, d_out)))
        self.b = reg.register(f"{name}/b", np.zeros(d_out)) if bias else None

    def __call__(self, x: DiffTensor) -> DiffTensor:
        y = matmul(x, self.W)
        return y if self.b is None else add(y, self.b)
