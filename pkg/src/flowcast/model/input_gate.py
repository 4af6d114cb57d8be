"""Fuse the three periodic branches and condition them on context.

Each branch (week/day/hour) carries flow‖context per step.  A per-branch
affine map embeds each, the embeddings are concatenated, and a gated residual
unit nudges the fused features by tanh(xΘ1+a)·σ(xΘ2+b) — a perturbation with
sup-norm strictly below 1, so the residual path always dominates.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import DiffTensor, add, concat_lastdim, constant, matmul, mul, sigmoid, tanh
from ..errors import DimensionError
from .layers import Affine, glorot

BRANCHES = ("week", "day", "hour")


class InputGate:
    """Branch fusion + gated residual unit producing (B, N, P, d) features.

    When ``d`` is divisible by 3 each branch embeds to d/3 channels and the
    concatenation is already d wide; otherwise branches embed to ceil(d/3)
    and one extra affine projects down to d so the residual is well-typed.
    ``gate=False`` keeps the fusion/projection stack but skips the gating
    (plain fully connected variant).

    A branch passed as ``None`` (series too short to reach back that far) is
    replaced by a learned per-channel bias.
    """

    def __init__(self, reg, c1: int, c2: int, d: int, rng: np.random.Generator, gate: bool = True):
        self.d = d
        self.gate = gate
        self.calls = 0
        self.glu_calls = 0
        if d % 3 == 0:
            self.d_branch = d // 3
            self.project = None
        else:
            self.d_branch = -(-d // 3)
            self.project = Affine(reg, "input_gate/project", 3 * self.d_branch, d, rng)
        self.branch_maps = {
            name: Affine(reg, f"input_gate/{name}", c1 + c2, self.d_branch, rng)
            for name in BRANCHES
        }
        self.missing_bias = {
            name: reg.register(f"input_gate/{name}/missing_bias", np.zeros(self.d_branch))
            for name in BRANCHES
        }
        if gate:
            self.theta1 = reg.register("input_gate/glu/theta1", glorot(rng, (d, d)))
            self.theta2 = reg.register("input_gate/glu/theta2", glorot(rng, (d, d)))
            self.a = reg.register("input_gate/glu/a", np.zeros(d))
            self.b = reg.register("input_gate/glu/b", np.zeros(d))

    def fuse(self, branches: dict) -> DiffTensor:
        """Embed and concatenate the three branches.

        ``branches[name]`` is a (flow, context) pair of (B, N, P, c) tensors,
        or None for an absent branch.
        """
        ref_shape = None
        for name in BRANCHES:
            if branches.get(name) is not None:
                x, c = branches[name]
                if x.shape[:-1] != c.shape[:-1]:
                    raise DimensionError(
                        f"branch {name!r}: flow {x.shape} and context {c.shape} disagree"
                    )
                if ref_shape is None:
                    ref_shape = x.shape[:-1]
                elif x.shape[:-1] != ref_shape:
                    raise DimensionError(
                        f"branch {name!r} shape {x.shape[:-1]} does not match {ref_shape}"
                    )
        if ref_shape is None:
            raise DimensionError("all three branches are absent")
        parts = []
        for name in BRANCHES:
            if branches.get(name) is None:
                zeros = constant(np.zeros(ref_shape + (self.d_branch,)))
                parts.append(add(zeros, self.missing_bias[name]))
            else:
                x, c = branches[name]
                parts.append(self.branch_maps[name](concat_lastdim([x, c])))
        fused = concat_lastdim(parts)
        if self.project is not None:
            fused = self.project(fused)
        return fused

    def glu(self, x_in: DiffTensor) -> DiffTensor:
        self.glu_calls += 1
        gate = mul(tanh(add(matmul(x_in, self.theta1), self.a)),
                   sigmoid(add(matmul(x_in, self.theta2), self.b)))
        return add(x_in, gate)

    def __call__(self, branches: dict) -> DiffTensor:
        self.calls += 1
        x_in = self.fuse(branches)
        return self.glu(x_in) if self.gate else x_in


class FlowEmbed:
    """Fallback input stage when the gate is ablated: affine map of raw flows."""

    def __init__(self, reg, c1: int, d: int, rng: np.random.Generator):
        self.map = Affine(reg, "flow_embed", c1, d, rng)
        self.calls = 0

    def __call__(self, x_hour: DiffTensor) -> DiffTensor:
        self.calls += 1
        return self.map(x_hour)
