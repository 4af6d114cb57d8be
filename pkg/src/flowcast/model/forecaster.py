"""Encoder-decoder assembly over the graph recurrent cell.

The encoder digests P fused steps; a context-attention module (or a plain
copy of the last state, when ablated) initializes the decoder; the decoder
rolls the horizon forward feeding each prediction (or the teacher-forced
truth) back in, re-deriving the dynamic graph at every step.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..autodiff import (
    DiffTensor,
    ParamRegistry,
    add,
    concat_lastdim,
    constant,
    matmul,
    stack,
)
from ..data import DEFAULT_CONTEXT_SCHEMA, Normalizer, Sample
from ..errors import ConfigError, DimensionError, NumericError, ValidationError
from ..fileio import atomic_write_text
from ..graphs import StaticGraph, row_normalize
from .attention import CounterfactualReasoner
from .cell import RecurrentCell, encode
from .dynamic_graph import DynGraphGenerator
from .input_gate import FlowEmbed, InputGate
from .layers import Affine

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    n_regions: int
    P: int
    Q: int
    d: int = 32
    c1: int = 2
    c2: int = 15
    depth: int = 2
    layers: int = 1
    context_schema: str = DEFAULT_CONTEXT_SCHEMA
    normalization: str = "minmax"
    seed: int = 0

    def __post_init__(self):
        for name in ("n_regions", "P", "Q", "d", "c1", "c2", "depth", "layers"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"ModelConfig.{name} must be positive, got {getattr(self, name)}")
        if self.normalization != "minmax":
            raise ConfigError(f"unsupported normalization {self.normalization!r}")


@dataclass
class AblationSwitches:
    use_geo: bool = True
    use_trans: bool = True
    use_dyn: bool = True
    use_se: bool = True
    use_H_in_generator: bool = True
    use_X_in_generator: bool = True
    use_counterfactual: bool = True
    use_input_gate: bool = True
    gate_glu: bool = True
    leaky_causal: bool = False

    def __post_init__(self):
        if not (self.use_geo or self.use_trans or self.use_dyn):
            raise ConfigError("at least one graph must stay enabled")

    def graph_names(self) -> list[str]:
        names = []
        if self.use_geo:
            names.append("geo")
        if self.use_trans:
            names.append("trans")
        if self.use_dyn:
            names.append("dyn")
        return names


@dataclass
class Batch:
    """Stacked samples; flow tensors already normalized, Y kept raw too."""

    X_hour: np.ndarray  # (B, N, P, c1) normalized
    X_day: np.ndarray
    X_week: np.ndarray
    C_hour: np.ndarray  # (B, N, P, c2)
    C_day: np.ndarray
    C_week: np.ndarray
    C_future: np.ndarray  # (B, N, Q, c2)
    Y: np.ndarray  # (B, N, Q, c1) raw counts
    Y_norm: np.ndarray
    anchors: list[int] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.X_hour.shape[0]


def stack_samples(samples: list[Sample], normalizer: Normalizer) -> Batch:
    if not samples:
        raise ValidationError("cannot stack an empty sample list")
    fields = ["X_hour", "X_day", "X_week", "C_hour", "C_day", "C_week", "C_future", "Y"]
    stacked = {f: np.stack([getattr(s, f) for s in samples]) for f in fields}
    return Batch(
        X_hour=normalizer.forward(stacked["X_hour"]),
        X_day=normalizer.forward(stacked["X_day"]),
        X_week=normalizer.forward(stacked["X_week"]),
        C_hour=stacked["C_hour"],
        C_day=stacked["C_day"],
        C_week=stacked["C_week"],
        C_future=stacked["C_future"],
        Y=stacked["Y"],
        Y_norm=normalizer.forward(stacked["Y"]),
        anchors=[s.t for s in samples],
    )


class ForecastModel:
    """Owns the parameter registry and all components for one configuration.

    ``graphs`` maps graph name to either a StaticGraph or an (N, N) array.
    Inputs are row-normalized here unless ``graphs_normalized`` is set, which
    the checkpoint restore path uses to keep stored weights bit-identical.
    """

    def __init__(
        self,
        cfg: ModelConfig,
        switches: AblationSwitches | None = None,
        graphs: dict | None = None,
        normalizer: Normalizer | None = None,
        graphs_normalized: bool = False,
    ):
        self.cfg = cfg
        self.switches = switches or AblationSwitches()
        self.normalizer = normalizer
        self.params = ParamRegistry()
        rng = np.random.default_rng(cfg.seed)
        graphs = graphs or {}

        self.static_norm: dict[str, np.ndarray] = {}
        for name in ("geo", "trans"):
            if not getattr(self.switches, f"use_{name}"):
                continue
            src = graphs.get(name)
            if src is None:
                raise ConfigError(f"switches enable the {name} graph but none was provided")
            A = src.A if isinstance(src, StaticGraph) else np.asarray(src, dtype=float)
            if A.shape != (cfg.n_regions, cfg.n_regions):
                raise DimensionError(
                    f"{name} graph shape {A.shape} does not match n_regions={cfg.n_regions}"
                )
            self.static_norm[name] = A if graphs_normalized else row_normalize(A)
        self._static_consts = {
            name: constant(A, name=f"graph_{name}") for name, A in self.static_norm.items()
        }

        names = self.switches.graph_names()
        if self.switches.use_input_gate:
            self.input_gate = InputGate(
                self.params, cfg.c1, cfg.c2, cfg.d, rng, gate=self.switches.gate_glu
            )
            self.flow_embed = None
        else:
            self.input_gate = None
            self.flow_embed = FlowEmbed(self.params, cfg.c1, cfg.d, rng)
        if self.switches.use_dyn:
            self.generator = DynGraphGenerator(
                self.params,
                cfg.n_regions,
                cfg.d,
                rng,
                use_se=self.switches.use_se,
                use_X=self.switches.use_X_in_generator,
                use_H=self.switches.use_H_in_generator,
                leaky=self.switches.leaky_causal,
            )
        else:
            self.generator = None
        self.enc_cells = [
            RecurrentCell(self.params, f"encoder{i}", names, cfg.d, cfg.depth, rng)
            for i in range(cfg.layers)
        ]
        self.dec_cells = [
            RecurrentCell(self.params, f"decoder{i}", names, cfg.d, cfg.depth, rng)
            for i in range(cfg.layers)
        ]
        if self.switches.use_counterfactual:
            self.reasoner = CounterfactualReasoner(
                self.params, cfg.c2, cfg.d, cfg.Q, cfg.layers, rng
            )
        else:
            self.reasoner = None
        self.decoder_embed = Affine(self.params, "decoder/input_embed", cfg.c1 + cfg.c2, cfg.d, rng)
        self.output_head = Affine(self.params, "decoder/output_head", cfg.d, cfg.c1, rng)

    # ------------------------------------------------------------------
    def _check_batch(self, batch: Batch) -> None:
        cfg = self.cfg
        want = {
            "X_hour": (cfg.n_regions, cfg.P, cfg.c1),
            "C_hour": (cfg.n_regions, cfg.P, cfg.c2),
            "C_future": (cfg.n_regions, cfg.Q, cfg.c2),
            "Y_norm": (cfg.n_regions, cfg.Q, cfg.c1),
        }
        for name, shape in want.items():
            got = getattr(batch, name).shape
            if got[1:] != shape:
                raise DimensionError(f"batch.{name} has shape {got}, expected (B,) + {shape}")

    def _fused_steps(self, batch: Batch) -> list[DiffTensor]:
        steps = []
        for t in range(self.cfg.P):
            if self.input_gate is not None:
                branches = {
                    name: (
                        constant(getattr(batch, f"X_{name}")[:, :, t]),
                        constant(getattr(batch, f"C_{name}")[:, :, t]),
                    )
                    for name in ("week", "day", "hour")
                }
                steps.append(self.input_gate(branches))
            else:
                steps.append(self.flow_embed(constant(batch.X_hour[:, :, t])))
        return steps

    def forward(
        self,
        batch: Batch,
        teacher_force: np.ndarray | None = None,
        record: dict | None = None,
    ) -> DiffTensor:
        """Normalized predictions (B, N, Q, c1).

        ``teacher_force`` is a per-horizon-step boolean mask; where True the
        decoder is fed the normalized ground truth instead of its own output.
        """
        self._check_batch(batch)
        cfg = self.cfg

        layer_inputs = self._fused_steps(batch)
        histories = []
        for i, cell in enumerate(self.enc_cells):
            rec = record if i == len(self.enc_cells) - 1 else None
            states = encode(layer_inputs, self._static_consts, cell, self.generator, rec)
            histories.append(states)
            layer_inputs = states
        if record is not None:
            record["enc_states"] = [s.values.copy() for s in histories[-1]]

        if self.reasoner is not None:
            c_hist = np.concatenate([batch.C_week, batch.C_day, batch.C_hour], axis=-1)
            attn = self.reasoner.attention_weights(constant(batch.C_future), constant(c_hist))
            if record is not None:
                record["attention"] = attn.values.copy()
            H = [
                self.reasoner.init_decoder(
                    self.reasoner.reason(attn, stack(histories[i], axis=2), i), i
                )
                for i in range(cfg.layers)
            ]
        else:
            H = [histories[i][-1] for i in range(cfg.layers)]

        x_prev = constant(batch.X_hour[:, :, -1])
        preds = []
        for q in range(cfg.Q):
            c_q = constant(batch.C_future[:, :, q])
            inp = self.decoder_embed(concat_lastdim([x_prev, c_q]))
            for i, cell in enumerate(self.dec_cells):
                graphs = dict(self._static_consts)
                if self.generator is not None:
                    A, A_norm = self.generator(inp, H[i])
                    graphs["dyn"] = A_norm
                    if record is not None and i == 0:
                        record.setdefault("dec_dyn_graphs", []).append(A.values.copy())
                H[i] = cell.step(inp, H[i], graphs)
                inp = H[i]
            out = self.output_head(H[-1])
            if not np.isfinite(out.values).all():
                raise NumericError(f"non-finite prediction at horizon step {q + 1}")
            preds.append(out)
            if teacher_force is not None and q < cfg.Q - 1 and bool(teacher_force[q]):
                x_prev = constant(batch.Y_norm[:, :, q])
            else:
                x_prev = out
        return stack(preds, axis=2)

    # ------------------------------------------------------------------
    def predict(self, batch: Batch, record: dict | None = None) -> np.ndarray:
        """Denormalized, nonnegative predictions as a plain array."""
        if self.normalizer is None:
            raise ConfigError("model has no normalizer attached; cannot denormalize")
        out = self.forward(batch, record=record)
        return np.maximum(self.normalizer.inverse(out.values), 0.0)

    def predict_counterfactual_pair(
        self,
        batch: Batch,
        ctx_override: np.ndarray,
        record_base: dict | None = None,
        record_override: dict | None = None,
    ):
        """Two predictions differing only in the future context."""
        ctx_override = np.asarray(ctx_override, dtype=float)
        target = batch.C_future.shape
        if ctx_override.shape[-1] != self.cdim_future():
            raise ValidationError(
                f"override context width {ctx_override.shape[-1]} does not match "
                f"schema width {self.cdim_future()}"
            )
        try:
            override_full = np.broadcast_to(ctx_override, target).copy()
        except ValueError:
            raise ValidationError(
                f"override shape {ctx_override.shape} does not broadcast to {target}"
            )
        base = self.predict(batch, record=record_base)
        alt_batch = replace(batch, C_future=override_full)
        alt = self.predict(alt_batch, record=record_override)
        return base, alt

    def cdim_future(self) -> int:
        return self.cfg.c2

    def components(self) -> dict:
        return {
            "input_gate": self.input_gate,
            "flow_embed": self.flow_embed,
            "generator": self.generator,
            "reasoner": self.reasoner,
        }

    # ------------------------------------------------------------------
    def save_checkpoint(self, path) -> None:
        payload = {
            "format_version": CHECKPOINT_VERSION,
            "config": asdict(self.cfg),
            "switches": asdict(self.switches),
            "normalizer": None
            if self.normalizer is None
            else {"lo": self.normalizer.lo.tolist(), "hi": self.normalizer.hi.tolist()},
            "static_graphs": {k: v.tolist() for k, v in self.static_norm.items()},
            "params": {
                name: {"shape": list(t.shape), "values": t.values.reshape(-1).tolist()}
                for name, t in self.params
            },
        }
        atomic_write_text(path, json.dumps(payload, sort_keys=True))

    @classmethod
    def load_checkpoint(cls, path) -> "ForecastModel":
        with open(path) as fh:
            payload = json.load(fh)
        if payload.get("format_version") != CHECKPOINT_VERSION:
            raise ValidationError(
                f"checkpoint format {payload.get('format_version')!r} not supported"
            )
        cfg = ModelConfig(**payload["config"])
        switches = AblationSwitches(**payload["switches"])
        nz = None
        if payload["normalizer"] is not None:
            nz = Normalizer(
                lo=np.array(payload["normalizer"]["lo"]),
                hi=np.array(payload["normalizer"]["hi"]),
            )
        graphs = {k: np.array(v) for k, v in payload["static_graphs"].items()}
        model = cls(cfg, switches, graphs=graphs, normalizer=nz, graphs_normalized=True)
        state = {
            name: np.array(rec["values"]).reshape(rec["shape"])
            for name, rec in payload["params"].items()
        }
        model.params.load_state(state)
        return model
