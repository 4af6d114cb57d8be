"""Per-step similarity graph generated from current features and hidden state.

The generator fuses the gated features with the previous hidden state, weighs
nodes by a squeeze-excitation gate, and turns the weighted representations
into a symmetric nonnegative adjacency via relu(tanh(DX·DXᵀ/√d)).  The graph
changes every step, so edges can appear or vanish with conditions.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import (
    DiffTensor,
    add,
    concat_lastdim,
    matmul,
    mul,
    normalize_rows,
    reduce_mean,
    relu,
    reshape,
    sigmoid,
    sub,
    tanh,
    transpose_last2,
)
from ..errors import ConfigError
from .layers import Affine, glorot


class DynGraphGenerator:
    """Builds A_t from (features, previous state); both inputs optional-izable.

    ``use_se=False`` skips the node-weighting gate (DX = I_t).  Disabling one
    of the two fusion sources shrinks the fusion map accordingly; disabling
    both is meaningless and rejected.
    """

    def __init__(
        self,
        reg,
        n_regions: int,
        d: int,
        rng: np.random.Generator,
        use_se: bool = True,
        use_X: bool = True,
        use_H: bool = True,
        leaky: bool = False,
    ):
        if not (use_X or use_H):
            raise ConfigError("dynamic graph generator needs at least one of X/H inputs")
        self.d = d
        self.use_se = use_se
        self.use_X = use_X
        self.use_H = use_H
        self.leaky = leaky
        self.calls = 0
        self.se_calls = 0
        width = d * (int(use_X) + int(use_H))
        self.fuse_map = Affine(reg, "dyn_gen/fuse", width, d, rng)
        self.bottleneck = max(1, n_regions // 16)
        if use_se:
            self.ex1 = reg.register("dyn_gen/se/W1", glorot(rng, (self.bottleneck, n_regions)))
            self.ex2 = reg.register("dyn_gen/se/W2", glorot(rng, (n_regions, self.bottleneck)))

    def fuse(self, Xp: DiffTensor | None, Hprev: DiffTensor | None) -> DiffTensor:
        parts = []
        if self.use_X:
            parts.append(Xp)
        if self.use_H:
            parts.append(Hprev)
        merged = parts[0] if len(parts) == 1 else concat_lastdim(parts)
        return self.fuse_map(merged)

    def squeeze(self, I_t: DiffTensor) -> DiffTensor:
        """Mean over channels: one scalar descriptor per node, shape (..., N)."""
        return reduce_mean(I_t, axis=-1)

    def excite(self, z_s: DiffTensor) -> DiffTensor:
        """Node gate in (0,1), shape (..., N, 1) ready to broadcast over channels."""
        self.se_calls += 1
        col = reshape(z_s, z_s.shape + (1,))
        hidden = relu(matmul(self.ex1, col))
        return sigmoid(matmul(self.ex2, hidden))

    def causal_graph(self, I_t: DiffTensor, z_e: DiffTensor | None) -> DiffTensor:
        DX = I_t if z_e is None else mul(I_t, z_e)
        sim = mul(matmul(DX, transpose_last2(DX)), 1.0 / np.sqrt(self.d))
        t = tanh(sim)
        if self.leaky:
            return sub(relu(t), mul(0.01, relu(mul(-1.0, t))))
        return relu(t)

    def __call__(self, Xp, Hprev):
        """Returns (A, Ã): the raw symmetric graph and its row-normalized form."""
        self.calls += 1
        I_t = self.fuse(Xp, Hprev)
        z_e = self.excite(self.squeeze(I_t)) if self.use_se else None
        A = self.causal_graph(I_t, z_e)
        return A, normalize_rows(A)
