"""Multi-graph diffusion convolution with learnable per-term weights.

Propagation recursion over k = 1..depth, run independently in each diffusion
direction (A and Aᵀ get their own coefficient/projection sets):

    X^(k) = α_self·X^(k-1) + Σ_g α_g · Ã_g · X^(k-1)

Each direction contributes ReLU-free partial sums Σ_k X^(k) W^(k) + b^(k);
the directions are added and a single ReLU finishes the op.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import DiffTensor, add, matmul, mul, relu, transpose_last2
from ..errors import ConfigError, ValidationError
from .layers import Affine, glorot

DIRECTIONS = ("fwd", "bwd")


def check_row_normalized(name: str, A: DiffTensor) -> None:
    sums = A.values.sum(axis=-1)
    if (sums > 1.0 + 1e-6).any():
        raise ValidationError(
            f"graph {name!r} is not row-normalized (max row sum {sums.max():.6f})"
        )


class GraphConv:
    """One convolution instance: owns α scalars and per-hop projections."""

    def __init__(self, reg, name: str, graph_names: list[str], d_in: int, d_out: int,
                 depth: int, rng: np.random.Generator):
        if depth < 1:
            raise ConfigError(f"propagation depth must be >= 1, got {depth}")
        if not graph_names:
            raise ConfigError("graph convolution needs at least one graph")
        self.name = name
        self.graph_names = list(graph_names)
        self.depth = depth
        self.calls = 0
        self.alpha = {}
        self.proj = {}
        for direction in DIRECTIONS:
            self.alpha[direction, "self"] = reg.register(
                f"{name}/{direction}/alpha_self", np.array(0.5)
            )
            for g in graph_names:
                self.alpha[direction, g] = reg.register(
                    f"{name}/{direction}/alpha_{g}", np.array(0.5)
                )
            self.proj[direction] = [
                Affine(reg, f"{name}/{direction}/hop{k}", d_in, d_out, rng)
                for k in range(depth + 1)
            ]

    def __call__(self, X0: DiffTensor, graphs: dict[str, DiffTensor]) -> DiffTensor:
        self.calls += 1
        missing = [g for g in self.graph_names if g not in graphs]
        if missing:
            raise ValidationError(f"{self.name}: graphs {missing} not supplied")
        for g in self.graph_names:
            check_row_normalized(g, graphs[g])
        total = None
        for direction in DIRECTIONS:
            Xk = X0
            acc = self.proj[direction][0](Xk)
            for k in range(1, self.depth + 1):
                nxt = mul(self.alpha[direction, "self"], Xk)
                for g in self.graph_names:
                    A = graphs[g]
                    Ad = A if direction == "fwd" else transpose_last2(A)
                    nxt = add(nxt, mul(self.alpha[direction, g], matmul(Ad, Xk)))
                Xk = nxt
                acc = add(acc, self.proj[direction][k](Xk))
            total = acc if total is None else add(total, acc)
        return relu(total)
