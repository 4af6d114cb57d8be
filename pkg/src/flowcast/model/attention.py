"""What-if state reasoning: future context attends over historical context.

Queries come from the future context window, keys from the concatenated
week‖day‖hour historical contexts, values from the encoder state history.
The attended result is a per-future-step state estimate under the queried
conditions; flattened and projected, it initializes the decoder.  Because
queries depend only on context, swapping in a hypothetical future context
changes the decoder trajectory without touching the encoder.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import DiffTensor, matmul, mul, reshape, softmax_lastdim, transpose_last2
from .layers import Affine, glorot


class CounterfactualReasoner:
    """Attention shared across layers; values/init maps are per-layer."""

    def __init__(self, reg, c2: int, d: int, Q: int, layers: int, rng: np.random.Generator):
        self.d = d
        self.Q = Q
        self.calls = 0
        # no bias on the key embedding: a shared key offset shifts every
        # logit of a query row equally, which the softmax cancels, leaving
        # the parameter unidentifiable
        self.fc_hist = Affine(reg, "whatif/hist_embed", 3 * c2, d, rng, bias=False)
        self.fc_fut = Affine(reg, "whatif/future_embed", c2, d, rng)
        self.Wq = reg.register("whatif/Wq", glorot(rng, (d, d)))
        self.Wk = reg.register("whatif/Wk", glorot(rng, (d, d)))
        self.Wv = [reg.register(f"whatif/Wv_layer{i}", glorot(rng, (d, d))) for i in range(layers)]
        self.init_map = [
            Affine(reg, f"whatif/init_layer{i}", Q * d, d, rng) for i in range(layers)
        ]

    def attention_weights(self, C_future: DiffTensor, C_hist: DiffTensor) -> DiffTensor:
        """(B, N, Q, P) rows summing to 1: how much each future step leans on
        each historical step."""
        q = matmul(self.fc_fut(C_future), self.Wq)
        k = matmul(self.fc_hist(C_hist), self.Wk)
        scores = mul(matmul(q, transpose_last2(k)), 1.0 / np.sqrt(self.d))
        return softmax_lastdim(scores)

    def reason(self, attn: DiffTensor, H_hist: DiffTensor, layer: int = 0) -> DiffTensor:
        """Attend over the state history: (B, N, Q, d)."""
        self.calls += 1
        v = matmul(H_hist, self.Wv[layer])
        return matmul(attn, v)

    def init_decoder(self, H_pred: DiffTensor, layer: int = 0) -> DiffTensor:
        """Collapse the Q per-step estimates into one starting state (B, N, d)."""
        lead = H_pred.shape[:-2]
        flat = reshape(H_pred, lead + (self.Q * self.d,))
        return self.init_map[layer](flat)
