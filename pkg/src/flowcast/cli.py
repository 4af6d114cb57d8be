"""Command line interface.

Every value a subcommand needs can come from three places, in priority
order: an explicit flag, a ``section.key`` entry in the ``--config`` INI
file, or the built-in default. Errors map onto exit codes: 2 for bad
configuration, 3 for invalid input data, 4 for numeric failures.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, report
from .data import (
    DEFAULT_CONTEXT_SCHEMA,
    fit_normalizer_on_train,
    format_timestamp,
    load_dataset,
    make_samples,
    parse_context_schema,
    split_60_20_20,
)
from .errors import ConfigError, DimensionError, NumericError, ValidationError
from .fileio import atomic_write_text
from .gradcheck import grad_check
from .graphs import StaticGraph, build_geo_graph, build_trans_graph, export_graph_csv
from .model import AblationSwitches, ForecastModel, ModelConfig, stack_samples
from .synth import SynthScenario, generate, sample_flows
from .training import (
    ABLATION_VARIANTS,
    TrainConfig,
    denormalized_l1,
    evaluate,
    fit,
    run_ablation,
)


def _f(v) -> str:
    return repr(float(v))


def _atomic_csv(path, header: str, rows: list[str]) -> None:
    atomic_write_text(path, header + "\n" + "\n".join(rows) + ("\n" if rows else ""))


def _atomic_json(path, payload) -> None:
    atomic_write_text(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------------------
# option plumbing

class Opt:
    def __init__(self, flag: str, key: str, default, cast, help: str = ""):
        self.flag, self.key, self.default, self.cast = flag, key, default, cast
        self.help = help
        self.attr = flag.lstrip("-").replace("-", "_")


def _load_config(path) -> dict:
    if path is None:
        return {}
    if not Path(path).exists():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    try:
        cp.read(path)
    except configparser.Error as e:
        raise ConfigError(f"cannot parse config file {path}: {e}")
    return {f"{s}.{k}": v for s in cp.sections() for k, v in cp.items(s)}


def _add_opts(parser, opts: list[Opt]) -> None:
    for o in opts:
        parser.add_argument(o.flag, default=None, metavar=o.key.split(".")[1].upper(),
                            help=f"{o.help} [{o.key}, default {o.default}]")


def _resolve(args, conf: dict, opts: list[Opt]) -> dict:
    out = {}
    for o in opts:
        raw = getattr(args, o.attr)
        if raw is None:
            raw = conf.get(o.key)
        if raw is None:
            out[o.attr] = o.default
            continue
        try:
            out[o.attr] = o.cast(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"bad value for {o.key}: {raw!r}")
    return out


DATA_OPTS = [
    Opt("--p", "data.p", 8, int, "history steps per periodic branch"),
    Opt("--q", "data.q", 4, int, "forecast horizon steps"),
    Opt("--delta-minutes", "data.delta_minutes", 30, int, "series step size"),
    Opt("--schema", "data.schema", DEFAULT_CONTEXT_SCHEMA, str, "context feature schema"),
]

MODEL_OPTS = [
    Opt("--d", "model.d", 32, int, "hidden width"),
    Opt("--depth", "model.depth", 2, int, "graph diffusion depth"),
    Opt("--layers", "model.layers", 1, int, "stacked recurrent layers"),
    Opt("--model-seed", "model.seed", 0, int, "parameter init seed"),
]

TRAIN_OPTS = [
    Opt("--lr", "train.lr", 1e-3, float, "Adam learning rate"),
    Opt("--batch-size", "train.batch_size", 16, int, "samples per step"),
    Opt("--max-epochs", "train.max_epochs", 300, int, "epoch cap"),
    Opt("--patience", "train.patience", 15, int, "early-stop patience (epochs)"),
    Opt("--clip", "train.clip_norm", 5.0, float, "global gradient-norm limit"),
    Opt("--train-seed", "train.seed", 0, int, "shuffling/sampling seed"),
]


# ---------------------------------------------------------------------------
# shared helpers

def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_world(data_dir, delta_minutes: int, P: int, Q: int, schema: str) -> dict:
    data = Path(data_dir)
    for name in ("flows", "context", "regions", "trips"):
        if not (data / f"{name}.csv").exists():
            raise ValidationError(f"data directory {data} is missing {name}.csv")
    flow, ctx, regions, trips = load_dataset(
        data / "flows.csv", data / "context.csv", data / "regions.csv",
        data / "trips.csv", schema=schema, delta_minutes=delta_minutes,
    )
    samples = make_samples(flow, ctx, P=P, Q=Q)
    train, val, test = split_60_20_20(samples)
    nz = fit_normalizer_on_train(flow, train, Q)
    graphs = {"geo": build_geo_graph(regions), "trans": build_trans_graph(trips, regions)}
    return dict(flow=flow, ctx=ctx, regions=regions, trips=trips, samples=samples,
                train=train, val=val, test=test, nz=nz, graphs=graphs)


def _model_config(world, vals, schema: str) -> ModelConfig:
    width = len(parse_context_schema(schema).names)
    return ModelConfig(
        n_regions=world["regions"].n, P=vals["p"], Q=vals["q"], d=vals["d"],
        c1=2, c2=width, depth=vals["depth"], layers=vals["layers"],
        context_schema=schema, seed=vals["model_seed"],
    )


def _train_config(vals) -> TrainConfig:
    return TrainConfig(lr=vals["lr"], batch_size=vals["batch_size"],
                       max_epochs=vals["max_epochs"], patience=vals["patience"],
                       clip_norm=vals["clip"], seed=vals["train_seed"])


def _write_predictions(path, flow, anchors, pred, truth) -> None:
    rows = []
    for b, t in enumerate(anchors):
        for q in range(pred.shape[2]):
            ts = format_timestamp(int(flow.timestamps[t + q + 1]))
            for i, rid in enumerate(flow.region_ids):
                rows.append(
                    f"{ts},{rid},{q + 1},{_f(pred[b, i, q, 0])},{_f(pred[b, i, q, 1])},"
                    f"{_f(truth[b, i, q, 0])},{_f(truth[b, i, q, 1])}"
                )
    _atomic_csv(path, "timestamp,region_id,horizon,inflow_pred,outflow_pred,"
                      "inflow_true,outflow_true", rows)


def _metric_cell(v) -> str:
    return "nan" if v is None else _f(v)


def _split_choice(world, name: str) -> list:
    table = {"train": world["train"], "val": world["val"],
             "test": world["test"], "all": world["samples"]}
    if name not in table:
        raise ConfigError(f"unknown split {name!r}; choose from {sorted(table)}")
    return table[name]


# ---------------------------------------------------------------------------
# subcommands

SYNTH_OPTS = [
    Opt("--days", "synth.days", 28, int, "scenario length"),
    Opt("--delta-minutes", "synth.delta_minutes", 30, int, "step size"),
    Opt("--rows", "synth.rows", 2, int, "grid rows"),
    Opt("--cols", "synth.cols", 3, int, "grid columns"),
    Opt("--coupling", "synth.coupling", 0.35, float, "fraction of trips leaving home region"),
    Opt("--base-scale", "synth.base_scale", 30.0, float, "peak demand rate"),
    Opt("--weather", "synth.weather", "random", str, "weather mode: random or flat"),
    Opt("--seed", "synth.seed", 7, int, "sampling seed"),
]


def _parse_forced_days(pairs) -> dict:
    forced = {}
    for item in pairs or []:
        day, _, level = item.partition("=")
        try:
            forced[int(day)] = float(level)
        except ValueError:
            raise ConfigError(f"bad --force-day {item!r}; expected DAY=LEVEL")
    return forced


def _cmd_synth_gen(args) -> int:
    conf = _load_config(args.config)
    vals = _resolve(args, conf, SYNTH_OPTS)
    sc = SynthScenario(
        n_rows=vals["rows"], n_cols=vals["cols"], days=vals["days"],
        delta_s=vals["delta_minutes"] * 60, base_scale=vals["base_scale"],
        coupling=vals["coupling"], weather_mode=vals["weather"], seed=vals["seed"],
        forced_day_levels=_parse_forced_days(args.force_day),
    )
    out = _out_dir(args)
    paths = generate(sc, out)
    if not args.no_figures:
        outfl, infl, _ = sample_flows(sc, np.random.default_rng(sc.seed))
        values = np.stack([infl, outfl], axis=-1).astype(float)
        ids = [f"r{i:02d}" for i in range(sc.n_regions)]
        report.flow_profiles(values, ids, min(sc.n_steps, 2 * sc.steps_per_day),
                             out / "synth_flows.png")
    for key in sorted(paths):
        print(f"wrote {paths[key]}")
    return 0


GRAPH_OPTS = [
    Opt("--epsilon-km", "graphs.epsilon_km", 2.0, float, "distance threshold"),
]


def _cmd_build_graphs(args) -> int:
    conf = _load_config(args.config)
    vals = _resolve(args, conf, GRAPH_OPTS)
    from .graphs import load_regions, load_trips
    regions = load_regions(args.regions)
    trips = load_trips(args.trips)
    geo = build_geo_graph(regions, epsilon_km=vals["epsilon_km"],
                          connect_within=not args.connect_beyond)
    trans = build_trans_graph(trips, regions)
    out = _out_dir(args)
    for g, name in ((geo, "geo"), (trans, "trans")):
        tmp = out / f".{name}.csv.tmp{os.getpid()}"
        export_graph_csv(g, tmp)
        os.replace(tmp, out / f"{name}.csv")
        if not args.no_figures:
            report.graph_heatmap(g.A, regions.ids, f"{name} adjacency",
                                 out / f"{name}.png")
    print(f"geo: sigma2={geo.meta['sigma2']:.4f} km^2, "
          f"{int((geo.A > 0).sum())} edges")
    isolated = trans.meta["isolated_regions"]
    print(f"trans: {len(trips)} trip records"
          + (f", isolated regions: {','.join(isolated)}" if isolated else ""))
    return 0


def _cmd_train(args) -> int:
    conf = _load_config(args.config)
    vals = _resolve(args, conf, DATA_OPTS + MODEL_OPTS + TRAIN_OPTS)
    schema = vals["schema"]
    world = _load_world(args.data, vals["delta_minutes"], vals["p"], vals["q"], schema)
    cfg = _model_config(world, vals, schema)
    switches = AblationSwitches(**ABLATION_VARIANTS[args.variant])
    model = ForecastModel(cfg, switches, graphs=world["graphs"], normalizer=world["nz"])
    result = fit(model, world["train"], world["val"], _train_config(vals))

    out = _out_dir(args)
    model.save_checkpoint(out / "checkpoint.json")
    val_metrics, _, _, _ = evaluate(model, world["val"])
    test_metrics, pred, truth, anchors = evaluate(model, world["test"])
    _atomic_json(out / "metrics.json", {
        "variant": args.variant,
        "config": asdict(cfg),
        "best_epoch": result.best_epoch,
        "best_val_mae": result.best_val_mae,
        "epochs_run": result.epochs_run,
        "diverged": result.diverged,
        "val": val_metrics,
        "test": test_metrics,
    })
    _atomic_csv(out / "training_log.csv", "epoch,train_loss,val_mae,val_rmse,teacher_p",
                [f"{r['epoch']},{_f(r['train_loss'])},{_f(r['val_mae'])},"
                 f"{_f(r['val_rmse'])},{_f(r['teacher_p'])}" for r in result.history])
    alpha_names = sorted(k for k in (result.alpha_history[0] if result.alpha_history else {})
                         if k != "epoch")
    _atomic_csv(out / "alpha_log.csv", "epoch," + ",".join(alpha_names),
                [f"{r['epoch']}," + ",".join(_f(r[k]) for k in alpha_names)
                 for r in result.alpha_history])
    _write_predictions(out / "predictions.csv", world["flow"], anchors, pred, truth)
    if not args.no_figures and result.history:
        report.training_curves(result.history, out / "training_curves.png")
        report.alpha_trajectories(result.alpha_history, out / "alpha_trajectories.png")
        report.prediction_overlay(anchors, pred, truth, world["flow"].region_ids,
                                  out / "predictions.png")
    status = "diverged; kept last good state" if result.diverged else "ok"
    print(f"trained {result.epochs_run} epochs ({status}); best val MAE "
          f"{result.best_val_mae:.4f} at epoch {result.best_epoch}; "
          f"test MAE {test_metrics['mae']:.4f}")
    print(f"artifacts in {out}")
    return 0


def _cmd_evaluate(args) -> int:
    conf = _load_config(args.config)
    vals = _resolve(args, conf, [DATA_OPTS[2], DATA_OPTS[3]])  # delta + schema only
    model = ForecastModel.load_checkpoint(args.checkpoint)
    cfg = model.cfg
    world = _load_world(args.data, vals["delta_minutes"], cfg.P, cfg.Q,
                        cfg.context_schema)
    samples = _split_choice(world, args.split)
    metrics, pred, truth, anchors = evaluate(model, samples)
    out = _out_dir(args)
    _atomic_json(out / "metrics.json", {"split": args.split, "config": asdict(cfg),
                                        "metrics": metrics})
    _write_predictions(out / "predictions.csv", world["flow"], anchors, pred, truth)
    if not args.no_figures:
        report.prediction_overlay(anchors, pred, truth, world["flow"].region_ids,
                                  out / "predictions.png")
    mape = "n/a" if metrics["mape"] is None else f"{metrics['mape']:.2f}%"
    print(f"{args.split}: MAE {metrics['mae']:.4f}, RMSE {metrics['rmse']:.4f}, "
          f"MAPE {mape} over {len(samples)} samples")
    return 0


def _cmd_ablate(args) -> int:
    conf = _load_config(args.config)
    vals = _resolve(args, conf, DATA_OPTS + MODEL_OPTS + TRAIN_OPTS)
    schema = vals["schema"]
    world = _load_world(args.data, vals["delta_minutes"], vals["p"], vals["q"], schema)
    cfg = _model_config(world, vals, schema)
    rows = run_ablation(cfg, world["graphs"], world["nz"], world["train"],
                        world["val"], world["test"], _train_config(vals))
    out = _out_dir(args)
    _atomic_csv(out / "ablation.csv",
                "variant,mae,rmse,mape,best_val_mae,epochs,diverged",
                [f"{r['variant']},{_f(r['mae'])},{_f(r['rmse'])},"
                 f"{_metric_cell(r['mape'])},{_f(r['best_val_mae'])},"
                 f"{r['epochs']},{int(r['diverged'])}" for r in rows])
    if not args.no_figures:
        report.ablation_bars(rows, out / "ablation.png")
    for r in rows:
        print(f"{r['variant']:<28} MAE {r['mae']:.4f}  RMSE {r['rmse']:.4f}")
    print(f"artifacts in {out}")
    return 0


def _parse_overrides(pairs, schema_text: str):
    schema = parse_context_schema(schema_text)
    groups = {g[0]: g for g in schema.onehot_groups}
    if not pairs:
        raise ConfigError("whatif needs at least one --set NAME=VALUE override")
    edits = []
    for item in pairs:
        name, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"bad --set {item!r}; expected NAME=VALUE")
        if name in groups:
            base, start, stop = groups[name]
            try:
                k = int(value)
            except ValueError:
                raise ConfigError(f"one-hot override {name!r} needs a category index")
            if not 0 <= k < stop - start:
                raise ConfigError(
                    f"category {k} out of range for {name!r} ({stop - start} buckets)")
            edits.append(("onehot", start, stop, k))
        elif name in schema.names:
            try:
                edits.append(("scalar", schema.names.index(name), float(value)))
            except ValueError:
                raise ConfigError(f"override {name!r} needs a numeric value")
        else:
            raise ConfigError(f"unknown context feature {name!r}")
    return edits


def _apply_overrides(c_future: np.ndarray, edits) -> np.ndarray:
    out = c_future.copy()
    for edit in edits:
        if edit[0] == "scalar":
            out[..., edit[1]] = edit[2]
        else:
            _, start, stop, k = edit
            out[..., start:stop] = 0.0
            out[..., start + k] = 1.0
    return out


def _cmd_whatif(args) -> int:
    conf = _load_config(args.config)
    vals = _resolve(args, conf, [DATA_OPTS[2]])
    model = ForecastModel.load_checkpoint(args.checkpoint)
    cfg = model.cfg
    world = _load_world(args.data, vals["delta_minutes"], cfg.P, cfg.Q,
                        cfg.context_schema)
    samples = _split_choice(world, args.split)
    edits = _parse_overrides(args.set, cfg.context_schema)
    batch = stack_samples(samples, model.normalizer)
    override = _apply_overrides(batch.C_future, edits)
    base, alt = model.predict_counterfactual_pair(batch, override)

    out = _out_dir(args)
    rows = []
    flow = world["flow"]
    for b, t in enumerate(batch.anchors):
        for q in range(cfg.Q):
            ts = format_timestamp(int(flow.timestamps[t + q + 1]))
            for i, rid in enumerate(flow.region_ids):
                rows.append(f"{ts},{rid},{q + 1},{_f(base[b, i, q, 0])},"
                            f"{_f(base[b, i, q, 1])},{_f(alt[b, i, q, 0])},"
                            f"{_f(alt[b, i, q, 1])}")
    _atomic_csv(out / "whatif.csv",
                "timestamp,region_id,horizon,inflow_base,outflow_base,"
                "inflow_whatif,outflow_whatif", rows)
    per_sample = alt.sum(axis=(1, 2, 3)) - base.sum(axis=(1, 2, 3))
    _atomic_json(out / "whatif_summary.json", {
        "overrides": args.set,
        "split": args.split,
        "samples": int(base.shape[0]),
        "mean_total_delta": float(per_sample.mean()),
        "fraction_reduced": float((per_sample < 0).mean()),
    })
    if not args.no_figures:
        report.whatif_comparison(base, alt, out / "whatif.png")
    print(f"override {args.set} on {base.shape[0]} samples: mean total flow delta "
          f"{per_sample.mean():+.3f}, reduced in {(per_sample < 0).mean():.1%}")
    return 0


GRADCHECK_OPTS = [
    Opt("--n", "gradcheck.n", 4, int, "regions"),
    Opt("--p", "gradcheck.p", 3, int, "history steps"),
    Opt("--q", "gradcheck.q", 2, int, "horizon steps"),
    Opt("--d", "gradcheck.d", 8, int, "hidden width"),
    Opt("--depth", "gradcheck.depth", 2, int, "diffusion depth"),
    Opt("--batch", "gradcheck.batch", 2, int, "batch size"),
    Opt("--eps", "gradcheck.eps", 1e-5, float, "finite-difference step"),
    Opt("--threshold", "gradcheck.threshold", 1e-4, float, "max relative error"),
    Opt("--min-sample", "gradcheck.min_sample", 200, int, "probes when subsampling"),
    Opt("--seed", "gradcheck.seed", 0, int, "instance seed"),
]


def _cmd_gradcheck(args) -> int:
    conf = _load_config(args.config)
    vals = _resolve(args, conf, GRADCHECK_OPTS)
    N, P, Q, d = vals["n"], vals["p"], vals["q"], vals["d"]
    rng = np.random.default_rng(vals["seed"])

    geo = rng.uniform(0, 1, (N, N))
    geo = np.triu(geo, 1) + np.triu(geo, 1).T
    trans = rng.uniform(0, 1, (N, N))
    cfg = ModelConfig(n_regions=N, P=P, Q=Q, d=d, c2=6, depth=vals["depth"],
                      seed=vals["seed"])
    from .data import Normalizer
    nz = Normalizer(lo=np.zeros(2), hi=np.full(2, 10.0))
    model = ForecastModel(cfg, graphs={"geo": geo, "trans": trans}, normalizer=nz)

    from .model import Batch
    B = vals["batch"]
    Y = rng.uniform(0, 10, (B, N, Q, 2))
    batch = Batch(
        X_hour=rng.uniform(0, 1, (B, N, P, 2)), X_day=rng.uniform(0, 1, (B, N, P, 2)),
        X_week=rng.uniform(0, 1, (B, N, P, 2)),
        C_hour=rng.normal(size=(B, N, P, 6)), C_day=rng.normal(size=(B, N, P, 6)),
        C_week=rng.normal(size=(B, N, P, 6)),
        C_future=rng.normal(size=(B, N, Q, 6)),
        Y=Y, Y_norm=nz.forward(Y), anchors=list(range(B)),
    )

    def objective():
        return denormalized_l1(model.forward(batch), batch, nz)

    rep = grad_check(objective, model.params, eps=vals["eps"],
                     min_sample=vals["min_sample"], seed=vals["seed"])
    print(rep.format())
    ok = rep.max_rel_err < vals["threshold"]
    print(f"max relative error {rep.max_rel_err:.3e} "
          f"(threshold {vals['threshold']:.0e}): {'PASS' if ok else 'FAIL'}")
    if not ok:
        raise NumericError(
            f"analytic gradients disagree with finite differences: "
            f"{rep.max_rel_err:.3e} >= {vals['threshold']:.0e}")
    return 0


def _cmd_dump_dyn_graph(args) -> int:
    conf = _load_config(args.config)
    vals = _resolve(args, conf, [DATA_OPTS[2]])
    model = ForecastModel.load_checkpoint(args.checkpoint)
    cfg = model.cfg
    world = _load_world(args.data, vals["delta_minutes"], cfg.P, cfg.Q,
                        cfg.context_schema)
    by_anchor = {s.t: s for s in world["samples"]}
    t = args.anchor if args.anchor is not None else world["test"][0].t
    if t not in by_anchor:
        lo, hi = min(by_anchor), max(by_anchor)
        raise ConfigError(f"no sample anchored at step {t}; valid range {lo}..{hi}")
    if model.generator is None:
        raise ConfigError("this checkpoint was trained without the dynamic graph")
    batch = stack_samples([by_anchor[t]], model.normalizer)
    record: dict = {}
    model.predict(batch, record=record)
    steps = record["dyn_graphs"]
    step = args.step if args.step is not None else len(steps)
    if not 1 <= step <= len(steps):
        raise ConfigError(f"--step must be in 1..{len(steps)}")
    A = steps[step - 1][0]
    out = _out_dir(args)
    path = out / f"dyn_graph_{t}.csv"
    tmp = out / f".dyn.tmp{os.getpid()}"
    export_graph_csv(StaticGraph("dyn", A, world["regions"].ids,
                                 {"anchor": t, "encoder_step": step}), tmp)
    os.replace(tmp, path)
    if not args.no_figures:
        report.graph_heatmap(A, world["regions"].ids,
                             f"inferred influence, anchor {t} step {step}",
                             out / f"dyn_graph_{t}.png")
    print(f"wrote {path} (encoder step {step} of {len(steps)})")
    return 0


# ---------------------------------------------------------------------------
# parser assembly

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="flowcast",
        description="Spatio-temporal bike-flow forecasting on evolving region graphs.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help):
        sp = sub.add_parser(name, help=help, description=help)
        sp.add_argument("--config", default=None,
                        help="INI config file; explicit flags take precedence")
        sp.add_argument("--no-figures", action="store_true",
                        help="skip matplotlib outputs")
        sp.set_defaults(func=func)
        return sp

    sp = add("synth-gen", _cmd_synth_gen, "generate a synthetic city dataset")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--force-day", action="append", metavar="DAY=LEVEL",
                    help="pin the weather level of one day (repeatable)")
    _add_opts(sp, SYNTH_OPTS)

    sp = add("build-graphs", _cmd_build_graphs,
             "derive distance and trip-transition graphs")
    sp.add_argument("--regions", required=True, help="regions.csv")
    sp.add_argument("--trips", required=True, help="trips.csv")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--connect-beyond", action="store_true",
                    help="link regions farther than the threshold instead of nearer")
    _add_opts(sp, GRAPH_OPTS)

    sp = add("train", _cmd_train, "train a forecaster and evaluate on the test split")
    sp.add_argument("--data", required=True, help="directory with the four input CSVs")
    sp.add_argument("--out", required=True, help="artifact directory")
    sp.add_argument("--variant", default="full", choices=sorted(ABLATION_VARIANTS),
                    help="component switch preset")
    _add_opts(sp, DATA_OPTS + MODEL_OPTS + TRAIN_OPTS)

    sp = add("evaluate", _cmd_evaluate, "score a checkpoint on one data split")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    _add_opts(sp, [DATA_OPTS[2], DATA_OPTS[3]])

    sp = add("ablate", _cmd_ablate, "train every component knock-out variant")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    _add_opts(sp, DATA_OPTS + MODEL_OPTS + TRAIN_OPTS)

    sp = add("whatif", _cmd_whatif, "re-predict under an altered future context")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    sp.add_argument("--set", action="append", metavar="NAME=VALUE",
                    help="context feature override (repeatable); one-hot groups "
                         "take a category index")
    _add_opts(sp, [DATA_OPTS[2]])

    sp = add("gradcheck", _cmd_gradcheck,
             "compare analytic gradients against finite differences")
    _add_opts(sp, GRADCHECK_OPTS)

    sp = add("dump-dyn-graph", _cmd_dump_dyn_graph,
             "export the inferred inter-region influence matrix for one sample")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--anchor", type=int, default=None,
                    help="sample anchor step (default: first test sample)")
    sp.add_argument("--step", type=int, default=None,
                    help="encoder step to export, 1-based (default: last)")
    _add_opts(sp, [DATA_OPTS[2]])
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"flowcast: error: config: {e}", file=sys.stderr)
        return 2
    except (ValidationError, DimensionError, OSError) as e:
        print(f"flowcast: error: invalid-input: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"flowcast: error: numeric: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
