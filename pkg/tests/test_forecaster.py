"""End-to-end model assembly: shapes, ablations, checkpoints, what-if runs."""

import numpy as np
import pytest

from flowcast import ConfigError, NumericError, ValidationError
from flowcast.autodiff import absolute, constant, reduce_sum, sub
from flowcast.data import Normalizer
from flowcast.gradcheck import grad_check
from flowcast.graphs import row_normalize
from flowcast.model import AblationSwitches, Batch, ForecastModel, ModelConfig, stack_samples
from flowcast.data import Sample


def toy_graphs(N, seed=0):
    rng = np.random.default_rng(seed)
    geo = rng.uniform(0, 1, (N, N)) * (rng.random((N, N)) > 0.3)
    np.fill_diagonal(geo, 0.0)
    geo = np.triu(geo, 1) + np.triu(geo, 1).T
    trans = rng.uniform(0, 1, (N, N))
    return {"geo": geo, "trans": row_normalize(trans)}


def toy_batch(cfg, B=2, seed=0):
    rng = np.random.default_rng(seed)
    N, P, Q, c1, c2 = cfg.n_regions, cfg.P, cfg.Q, cfg.c1, cfg.c2
    raw = lambda *s: rng.uniform(0, 20, s)
    Y = raw(B, N, Q, c1)
    nz = Normalizer(lo=np.zeros(c1), hi=np.full(c1, 20.0))
    return Batch(
        X_hour=nz.forward(raw(B, N, P, c1)),
        X_day=nz.forward(raw(B, N, P, c1)),
        X_week=nz.forward(raw(B, N, P, c1)),
        C_hour=rng.normal(size=(B, N, P, c2)),
        C_day=rng.normal(size=(B, N, P, c2)),
        C_week=rng.normal(size=(B, N, P, c2)),
        C_future=rng.normal(size=(B, N, Q, c2)),
        Y=Y,
        Y_norm=nz.forward(Y),
        anchors=list(range(B)),
    ), nz


def small_cfg(**kw):
    base = dict(n_regions=4, P=3, Q=2, d=6, c2=5, depth=1, seed=0)
    base.update(kw)
    return ModelConfig(**base)


class TestForward:
    def test_output_shape(self):
        cfg = small_cfg()
        model = ForecastModel(cfg, graphs=toy_graphs(4))
        batch, _ = toy_batch(cfg)
        out = model.forward(batch)
        assert out.shape == (2, 4, 2, 2)

    def test_zero_params_output_is_head_bias(self):
        cfg = small_cfg()
        model = ForecastModel(cfg, graphs=toy_graphs(4))
        for _, t in model.params:
            t.values[...] = 0.0
        model.params["decoder/output_head/b"].values[:] = [1.5, -0.5]
        batch, _ = toy_batch(cfg)
        out = model.forward(batch).values
        np.testing.assert_allclose(out, np.broadcast_to([1.5, -0.5], out.shape), atol=1e-12)

    def test_determinism_across_instances(self):
        cfg = small_cfg(seed=42)
        batch, _ = toy_batch(cfg)
        a = ForecastModel(cfg, graphs=toy_graphs(4)).forward(batch).values
        b = ForecastModel(cfg, graphs=toy_graphs(4)).forward(batch).values
        np.testing.assert_array_equal(a, b)

    def test_teacher_forcing_changes_rollout(self):
        cfg = small_cfg()
        model = ForecastModel(cfg, graphs=toy_graphs(4))
        batch, _ = toy_batch(cfg)
        free = model.forward(batch, teacher_force=np.array([False, False])).values
        forced = model.forward(batch, teacher_force=np.array([True, True])).values
        np.testing.assert_array_equal(free[:, :, 0], forced[:, :, 0])  # first step unaffected
        assert not np.array_equal(free[:, :, 1], forced[:, :, 1])

    def test_nonfinite_output_names_step(self):
        cfg = small_cfg()
        model = ForecastModel(cfg, graphs=toy_graphs(4))
        model.params["decoder/output_head/W"].values[...] = np.nan
        batch, _ = toy_batch(cfg)
        with pytest.raises(NumericError, match="horizon step 1"):
            model.forward(batch)

    def test_two_layers_smoke(self):
        cfg = small_cfg(layers=2)
        model = ForecastModel(cfg, graphs=toy_graphs(4))
        batch, _ = toy_batch(cfg)
        assert model.forward(batch).shape == (2, 4, 2, 2)

    def test_gradients_end_to_end_tiny(self):
        cfg = small_cfg(n_regions=3, P=2, Q=2, d=6, c2=3, depth=1)
        model = ForecastModel(cfg, graphs=toy_graphs(3, seed=1))
        batch, _ = toy_batch(cfg, B=1, seed=2)
        target = constant(batch.Y_norm)

        def f():
            pred = model.forward(batch)
            return reduce_sum(absolute(sub(pred, target)))

        report = grad_check(f, model.params, eps=1e-5, min_sample=150, seed=3)
        assert report.max_rel_err < 1e-4


class TestCounterfactualPair:
    def test_identical_override_identical_outputs(self):
        cfg = small_cfg()
        batch, nz = toy_batch(cfg)
        model = ForecastModel(cfg, graphs=toy_graphs(4), normalizer=nz)
        base, alt = model.predict_counterfactual_pair(batch, batch.C_future.copy())
        np.testing.assert_array_equal(base, alt)

    def test_encoder_states_invariant_under_override(self):
        cfg = small_cfg()
        batch, nz = toy_batch(cfg)
        model = ForecastModel(cfg, graphs=toy_graphs(4), normalizer=nz)
        rng = np.random.default_rng(5)
        rec_a, rec_b = {}, {}
        base, alt = model.predict_counterfactual_pair(
            batch, rng.normal(size=batch.C_future.shape), rec_a, rec_b
        )
        assert not np.array_equal(base, alt)  # decoder side did change
        for sa, sb in zip(rec_a["enc_states"], rec_b["enc_states"]):
            np.testing.assert_array_equal(sa, sb)
        np.testing.assert_array_equal(
            np.array(rec_a["dyn_graphs"]), np.array(rec_b["dyn_graphs"])
        )

    def test_override_broadcasts(self):
        cfg = small_cfg()
        batch, nz = toy_batch(cfg)
        model = ForecastModel(cfg, graphs=toy_graphs(4), normalizer=nz)
        override = np.zeros((cfg.Q, cfg.c2))  # same context for all regions/samples
        base, alt = model.predict_counterfactual_pair(batch, override)
        assert alt.shape == base.shape

    def test_schema_mismatch_rejected(self):
        cfg = small_cfg()
        batch, nz = toy_batch(cfg)
        model = ForecastModel(cfg, graphs=toy_graphs(4), normalizer=nz)
        with pytest.raises(ValidationError, match="width"):
            model.predict_counterfactual_pair(batch, np.zeros((cfg.Q, cfg.c2 + 1)))

    def test_predictions_nonnegative(self):
        cfg = small_cfg()
        batch, nz = toy_batch(cfg)
        model = ForecastModel(cfg, graphs=toy_graphs(4), normalizer=nz)
        assert (model.predict(batch) >= 0).all()


class TestAblations:
    def variant_switches(self):
        return {
            "full": AblationSwitches(),
            "no_geo": AblationSwitches(use_geo=False),
            "no_trans": AblationSwitches(use_trans=False),
            "no_dyn": AblationSwitches(use_dyn=False),
            "no_se": AblationSwitches(use_se=False),
            "no_H": AblationSwitches(use_H_in_generator=False),
            "no_X": AblationSwitches(use_X_in_generator=False),
            "no_cf": AblationSwitches(use_counterfactual=False),
            "no_gate": AblationSwitches(use_input_gate=False),
            "fc_gate": AblationSwitches(gate_glu=False),
        }

    def test_all_variants_run_and_instrument(self):
        cfg = small_cfg()
        batch, _ = toy_batch(cfg)
        for name, sw in self.variant_switches().items():
            model = ForecastModel(cfg, sw, graphs=toy_graphs(4))
            out = model.forward(batch)
            assert out.shape == (2, 4, 2, 2), name
            comp = model.components()
            if not sw.use_dyn:
                assert comp["generator"] is None
            if not sw.use_counterfactual:
                assert comp["reasoner"] is None
            if not sw.use_input_gate:
                assert comp["input_gate"] is None and comp["flow_embed"].calls > 0
            else:
                assert comp["flow_embed"] is None and comp["input_gate"].calls > 0
            if sw.use_dyn and not sw.use_se:
                assert comp["generator"].se_calls == 0
            if sw.use_input_gate and not sw.gate_glu:
                assert comp["input_gate"].glu_calls == 0

    def test_graph_params_absent_when_disabled(self):
        cfg = small_cfg()
        model = ForecastModel(cfg, AblationSwitches(use_dyn=False), graphs=toy_graphs(4))
        assert not any("alpha_dyn" in name for name in model.params.names())

    def test_all_graphs_off_rejected(self):
        with pytest.raises(ConfigError):
            AblationSwitches(use_geo=False, use_trans=False, use_dyn=False)

    def test_missing_required_graph_rejected(self):
        cfg = small_cfg()
        with pytest.raises(ConfigError, match="geo"):
            ForecastModel(cfg, graphs={"trans": toy_graphs(4)["trans"]})


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        cfg = small_cfg(seed=7)
        batch, nz = toy_batch(cfg)
        model = ForecastModel(cfg, graphs=toy_graphs(4), normalizer=nz)
        path = tmp_path / "ckpt.json"
        model.save_checkpoint(path)
        clone = ForecastModel.load_checkpoint(path)
        for (na, ta), (nb, tb) in zip(model.params, clone.params):
            assert na == nb
            np.testing.assert_array_equal(ta.values, tb.values)
        np.testing.assert_array_equal(model.predict(batch), clone.predict(batch))

    def test_bad_version_rejected(self, tmp_path):
        path = tmp_path / "ckpt.json"
        path.write_text('{"format_version": 99}')
        with pytest.raises(ValidationError, match="format"):
            ForecastModel.load_checkpoint(path)


def test_stack_samples_normalizes_flows():
    rng = np.random.default_rng(11)
    N, P, Q, c2 = 3, 2, 2, 4
    mk = lambda t: Sample(
        t=t,
        X_hour=rng.uniform(0, 10, (N, P, 2)),
        X_day=rng.uniform(0, 10, (N, P, 2)),
        X_week=rng.uniform(0, 10, (N, P, 2)),
        C_hour=rng.normal(size=(N, P, c2)),
        C_day=rng.normal(size=(N, P, c2)),
        C_week=rng.normal(size=(N, P, c2)),
        C_future=rng.normal(size=(N, Q, c2)),
        Y=rng.uniform(0, 10, (N, Q, 2)),
    )
    samples = [mk(1), mk(2), mk(3)]
    nz = Normalizer(lo=np.zeros(2), hi=np.full(2, 10.0))
    batch = stack_samples(samples, nz)
    assert batch.size == 3 and batch.anchors == [1, 2, 3]
    np.testing.assert_allclose(batch.X_hour[1], samples[1].X_hour / 10.0, atol=1e-12)
    np.testing.assert_array_equal(batch.Y[2], samples[2].Y)
    np.testing.assert_allclose(batch.Y_norm[0], samples[0].Y / 10.0, atol=1e-12)
