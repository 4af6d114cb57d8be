"""Recurrent cell whose gates are graph convolutions instead of dense maps.

Gating follows the usual reset/update pattern; every gate sees the current
features concatenated with the hidden state and mixes information across
regions through the supplied graphs.  Because the candidate state is a tanh
output and the update is a convex combination, states started at zero stay
inside [-1, 1] forever.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import DiffTensor, add, concat_lastdim, constant, mul, sigmoid, sub, tanh
from ..errors import NumericError
from .graph_conv import GraphConv


class RecurrentCell:
    def __init__(self, reg, name: str, graph_names: list[str], d: int, depth: int,
                 rng: np.random.Generator):
        self.d = d
        self.name = name
        self.calls = 0
        self.conv_r = GraphConv(reg, f"{name}/reset", graph_names, 2 * d, d, depth, rng)
        self.conv_z = GraphConv(reg, f"{name}/update", graph_names, 2 * d, d, depth, rng)
        self.conv_h = GraphConv(reg, f"{name}/candidate", graph_names, 2 * d, d, depth, rng)
        self.b_r = reg.register(f"{name}/bias_reset", np.zeros(d))
        self.b_z = reg.register(f"{name}/bias_update", np.zeros(d))
        self.b_h = reg.register(f"{name}/bias_candidate", np.zeros(d))

    def _gate_check(self, gate: str, t: DiffTensor) -> DiffTensor:
        if not np.isfinite(t.values).all():
            raise NumericError(f"non-finite values in {gate} of cell {self.name!r}")
        return t

    def step(self, Xp: DiffTensor, Hprev: DiffTensor, graphs: dict[str, DiffTensor]) -> DiffTensor:
        self.calls += 1
        xh = concat_lastdim([Xp, Hprev])
        r = self._gate_check("reset gate", sigmoid(add(self.conv_r(xh, graphs), self.b_r)))
        z = self._gate_check("update gate", sigmoid(add(self.conv_z(xh, graphs), self.b_z)))
        xrh = concat_lastdim([Xp, mul(r, Hprev)])
        h_cand = self._gate_check(
            "candidate state", tanh(add(self.conv_h(xrh, graphs), self.b_h))
        )
        return self._gate_check(
            "state", add(mul(z, Hprev), mul(sub(1.0, z), h_cand))
        )


def encode(
    xs: list[DiffTensor],
    static_graphs: dict[str, DiffTensor],
    cell: RecurrentCell,
    generator,
    record: dict | None = None,
) -> list[DiffTensor]:
    """Run the cell across a step sequence from a zero initial state.

    ``xs`` is the per-step feature list, each (B, N, d).  When a dynamic-graph
    generator is supplied, its graph is rebuilt every step from the incoming
    features and the previous state.  Returns the full state history.
    """
    lead = xs[0].shape[:-1]
    H = constant(np.zeros(lead + (cell.d,)))
    states = []
    for X in xs:
        graphs = dict(static_graphs)
        if generator is not None:
            A, A_norm = generator(X, H)
            graphs["dyn"] = A_norm
            if record is not None:
                record.setdefault("dyn_graphs", []).append(A.values.copy())
        H = cell.step(X, H, graphs)
        states.append(H)
    if record is not None:
        record.setdefault("states", []).extend(s.values.copy() for s in states)
    return states
