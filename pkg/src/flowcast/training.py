"""Optimisation loop, evaluation metrics, and the ablation harness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import absolute, add, constant, mul, reduce_mean, sub
from .data import FlowSeries, Normalizer, Sample
from .errors import ConfigError, DimensionError, NumericError
from .model import AblationSwitches, Batch, ForecastModel, stack_samples

MAPE_FLOOR = 1.0  # absolute truth below this is excluded from percentage error


def denormalized_l1(pred_norm, batch: Batch, nz: Normalizer):
    """Mean absolute error in original flow units, differentiable."""
    span = constant(nz._span())
    lo = constant(nz.lo)
    denorm = add(mul(pred_norm, span), lo)
    return reduce_mean(absolute(sub(denorm, constant(batch.Y))))


def compute_metrics(pred: np.ndarray, truth: np.ndarray) -> dict:
    """MAE / RMSE / masked MAPE, overall and per horizon step.

    MAPE averages ``|err / truth|`` only where ``|truth| >= 1.0``; if nothing
    survives the mask it is reported as None rather than a fake number.
    """
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    if pred.ndim != 4:
        raise DimensionError("metrics expect (samples, regions, horizon, channels)")

    def block(p, y):
        d = p - y
        mae = float(np.mean(np.abs(d)))
        rmse = float(np.sqrt(np.mean(d * d)))
        mask = np.abs(y) >= MAPE_FLOOR
        mape = float(np.mean(np.abs(d[mask] / y[mask])) * 100.0) if mask.any() else None
        return {"mae": mae, "rmse": rmse, "mape": mape}

    out = block(pred, truth)
    out["per_horizon"] = [
        {"horizon": q + 1, **block(pred[:, :, q], truth[:, :, q])}
        for q in range(pred.shape[2])
    ]
    return out


class Adam:
    """Adam with bias correction; operates in place on registry tensors."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr < 0:
            raise ConfigError(f"learning rate must be nonnegative, got {lr}")
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self._m = {name: np.zeros(t.shape) for name, t in params}
        self._v = {name: np.zeros(t.shape) for name, t in params}

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, tensor in self.params:
            g = tensor.grad
            m = self._m[name] = self.b1 * self._m[name] + (1 - self.b1) * g
            v = self._v[name] = self.b2 * self._v[name] + (1 - self.b2) * g * g
            tensor.values = tensor.values - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_global_norm(params, max_norm: float) -> float:
    """Scale all gradients so their joint 2-norm is at most ``max_norm``."""
    total = 0.0
    for _, t in params:
        total += float(np.sum(t.grad * t.grad))
    norm = float(np.sqrt(total))
    if norm > max_norm > 0:
        scale = max_norm / norm
        for _, t in params:
            t.grad = t.grad * scale
    return norm


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 300
    patience: int = 15
    clip_norm: float = 5.0
    seed: int = 0
    teacher_decay_epochs: int | None = None  # default: first half of max_epochs

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, max_epochs and patience must be positive")

    @property
    def decay_epochs(self) -> int:
        if self.teacher_decay_epochs is not None:
            return max(1, self.teacher_decay_epochs)
        return max(1, self.max_epochs // 2)


@dataclass
class TrainResult:
    best_state: dict
    best_epoch: int
    best_val_mae: float
    history: list = field(default_factory=list)
    alpha_history: list = field(default_factory=list)
    diverged: bool = False
    epochs_run: int = 0


def _batches(samples, nz, size, order=None):
    idx = order if order is not None else np.arange(len(samples))
    for s in range(0, len(idx), size):
        yield stack_samples([samples[i] for i in idx[s:s + size]], nz)


def evaluate(model: ForecastModel, samples: list, batch_size: int = 64):
    """Run the model over ``samples`` without teacher forcing.

    Returns (metrics dict, predictions (n, N, Q, c), truths, anchors).
    """
    if not samples:
        raise ConfigError("cannot evaluate on an empty sample list")
    preds, truths, anchors = [], [], []
    for batch in _batches(samples, model.normalizer, batch_size):
        preds.append(model.predict(batch))
        truths.append(batch.Y)
        anchors.extend(batch.anchors)
    pred = np.concatenate(preds, axis=0)
    truth = np.concatenate(truths, axis=0)
    return compute_metrics(pred, truth), pred, truth, anchors


def fit(model: ForecastModel, train: list, val: list, tc: TrainConfig) -> TrainResult:
    """Train with scheduled sampling and early stopping on validation MAE.

    The model is left holding the best-validation parameters. If the loss ever
    goes non-finite the last best state is restored and ``diverged`` is set.
    """
    if model.normalizer is None:
        raise ConfigError("model needs a fitted normalizer before training")
    if not train or not val:
        raise ConfigError("training and validation splits must both be non-empty")

    nz = model.normalizer
    rng = np.random.default_rng(tc.seed)
    opt = Adam(model.params, lr=tc.lr)
    result = TrainResult(best_state=model.params.state_dict(), best_epoch=-1,
                         best_val_mae=float("inf"))
    Q = model.cfg.Q
    stale = 0

    for epoch in range(tc.max_epochs):
        p_teach = max(0.0, 1.0 - epoch / tc.decay_epochs)
        order = rng.permutation(len(train))
        losses = []
        try:
            for batch in _batches(train, nz, tc.batch_size, order):
                mask = rng.random(Q) < p_teach
                model.params.zero_grads()
                loss = denormalized_l1(model.forward(batch, teacher_force=mask), batch, nz)
                if not np.isfinite(loss.values):
                    raise NumericError("training loss went non-finite")
                loss.backward()
                clip_global_norm(model.params, tc.clip_norm)
                opt.step()
                losses.append(float(loss.values))
            val_metrics, _, _, _ = evaluate(model, val, tc.batch_size)
        except NumericError:
            model.params.load_state(result.best_state)
            result.diverged = True
            break

        vm = val_metrics["mae"]
        if not np.isfinite(vm):
            model.params.load_state(result.best_state)
            result.diverged = True
            break

        result.epochs_run = epoch + 1
        result.history.append({
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_mae": vm,
            "val_rmse": val_metrics["rmse"],
            "teacher_p": p_teach,
        })
        result.alpha_history.append({
            "epoch": epoch,
            **{name: float(t.values) for name, t in model.params if "/alpha" in name},
        })

        if vm < result.best_val_mae:
            result.best_val_mae = vm
            result.best_epoch = epoch
            result.best_state = model.params.state_dict()
            stale = 0
        else:
            stale += 1
            if stale >= tc.patience:
                break

    model.params.load_state(result.best_state)
    return result


def historical_average_table(flow: FlowSeries, upto: int, slots: int) -> np.ndarray:
    """(N, slots, c) mean flow per time-of-week slot over ``values[:, :upto]``.

    Slots never observed fall back to the per-channel mean of the visible prefix.
    """
    if upto < 1:
        raise ConfigError("historical average needs at least one visible step")
    vis = flow.values[:, :upto]
    N, _, C = vis.shape
    table = np.zeros((N, slots, C))
    counts = np.zeros(slots, dtype=np.int64)
    for t in range(upto):
        table[:, t % slots] += vis[:, t]
        counts[t % slots] += 1
    seen = counts > 0
    table[:, seen] /= counts[seen, None]
    if not seen.all():
        table[:, ~seen] = vis.mean(axis=(0, 1))
    return table


def historical_average_predict(table: np.ndarray, anchors, Q: int) -> np.ndarray:
    """(n, N, Q, c) baseline forecast: the slot mean at each target step."""
    slots = table.shape[1]
    out = np.empty((len(anchors), table.shape[0], Q, table.shape[2]))
    for b, t in enumerate(anchors):
        for q in range(Q):
            out[b, :, q] = table[:, (t + 1 + q) % slots]
    return out


ABLATION_VARIANTS = {
    "full": {},
    "no_geo_graph": {"use_geo": False},
    "no_trip_graph": {"use_trans": False},
    "no_dynamic_graph": {"use_dyn": False},
    "no_channel_excitation": {"use_se": False},
    "no_state_in_generator": {"use_H_in_generator": False},
    "no_input_in_generator": {"use_X_in_generator": False},
    "no_whatif_decoder_init": {"use_counterfactual": False},
    "fc_instead_of_gate": {"gate_glu": False},
    "hour_flows_only": {"use_input_gate": False},
}


def instrumentation_violations(model: ForecastModel) -> list[str]:
    """Call-counter evidence that a disabled component actually ran."""
    sw = model.switches
    comp = model.components()
    bad = []
    if not sw.use_dyn and comp["generator"] is not None:
        bad.append("generator built while dynamic graph disabled")
    if sw.use_dyn and not sw.use_se and comp["generator"].se_calls:
        bad.append("channel excitation ran while disabled")
    if not sw.use_counterfactual and comp["reasoner"] is not None:
        bad.append("what-if reasoner built while disabled")
    if not sw.use_input_gate and comp["input_gate"] is not None:
        bad.append("input gate built while disabled")
    if sw.use_input_gate and not sw.gate_glu and comp["input_gate"].glu_calls:
        bad.append("gating unit ran while replaced by plain projection")
    return bad


def run_ablation(cfg, graphs, normalizer, train, val, test, tc: TrainConfig):
    """Train and score every switch variant; returns one metrics row each."""
    rows = []
    for name, flags in ABLATION_VARIANTS.items():
        switches = AblationSwitches(**flags)
        model = ForecastModel(cfg, switches, graphs=graphs, normalizer=normalizer)
        result = fit(model, train, val, tc)
        metrics, _, _, _ = evaluate(model, test, tc.batch_size)
        violations = instrumentation_violations(model)
        if violations:
            raise NumericError(f"ablation {name!r}: " + "; ".join(violations))
        rows.append({
            "variant": name,
            "mae": metrics["mae"],
            "rmse": metrics["rmse"],
            "mape": metrics["mape"],
            "best_val_mae": result.best_val_mae,
            "epochs": result.epochs_run,
            "diverged": result.diverged,
        })
    return rows
