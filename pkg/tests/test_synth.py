"""Synthetic scenario generator: closed-form means, conservation, round trips."""

import numpy as np
import pytest

from flowcast import ConfigError
from flowcast.data import expected_sample_count, load_dataset, make_samples
from flowcast.graphs import haversine_km
from flowcast.synth import (
    SynthScenario,
    destination_matrix,
    expected_inflow,
    expected_outflow,
    generate,
    oracle_effect,
    region_table,
    sample_flows,
    weather_levels,
    weather_series,
)


def small(**kw):
    base = dict(days=14, delta_s=7200, seed=3)
    base.update(kw)
    return SynthScenario(**base)


class TestScenarioValidation:
    def test_too_short(self):
        with pytest.raises(ConfigError, match="14 days"):
            SynthScenario(days=13)

    def test_bad_coupling(self):
        with pytest.raises(ConfigError, match="coupling"):
            SynthScenario(coupling=1.5)

    def test_bad_delta(self):
        with pytest.raises(ConfigError, match="divide"):
            SynthScenario(delta_s=7000)

    def test_forced_day_out_of_range(self):
        with pytest.raises(ConfigError, match="day 30"):
            SynthScenario(days=28, forced_day_levels={30: 0.5})

    def test_forced_level_out_of_range(self):
        with pytest.raises(ConfigError):
            SynthScenario(forced_day_levels={0: 1.5})


class TestGeometryAndWeather:
    def test_grid_spacing(self):
        regions = region_table(small())
        # r00 -> r01 is one column step, r00 -> r03 one row step (3 columns)
        lat, lon = regions.lat, regions.lon
        d_col = haversine_km(lat[0], lon[0], lat[1], lon[1])
        d_row = haversine_km(lat[0], lon[0], lat[3], lon[3])
        assert abs(d_col - 0.9) < 0.01 and abs(d_row - 0.9) < 0.01

    def test_destination_rows_stochastic(self):
        P = destination_matrix(small(coupling=0.4))
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(np.diag(P) == 0.6)
        # corner region r00 has 2 neighbours in a 2x3 grid
        assert P[0, 1] == pytest.approx(0.2) and P[0, 3] == pytest.approx(0.2)

    def test_weather_bounds_and_forcing(self):
        sc = small(weather_mode="random", forced_day_levels={2: 0.2, 5: 1.2})
        w = weather_series(sc)
        assert w.min() >= 0.2 and w.max() <= 1.2
        levels = weather_levels(sc)
        assert levels[2] == 0.2 and levels[5] == 1.2

    def test_flat_weather_is_one(self):
        w = weather_series(small(weather_mode="flat", wiggle=0.0))
        np.testing.assert_array_equal(w, np.ones_like(w))


class TestExpectedChannel:
    def test_daily_stationarity_under_flat_weather(self):
        sc = small(weather_mode="flat", wiggle=0.0)
        lam = expected_outflow(sc)
        spd = sc.steps_per_day
        np.testing.assert_array_equal(lam[:, 2 * spd:3 * spd], lam[:, 9 * spd:10 * spd])

    def test_forced_low_day_scales_exactly(self):
        sc = small(weather_mode="flat", wiggle=0.0, forced_day_levels={3: 0.2, 10: 1.0})
        lam = expected_outflow(sc)
        spd = sc.steps_per_day
        lo = lam[:, 3 * spd:4 * spd]
        hi = lam[:, 10 * spd:11 * spd]
        np.testing.assert_allclose(lo, 0.2 * hi, rtol=0, atol=1e-12)

    def test_two_peaks_and_regional_variation(self):
        sc = small(weather_mode="flat", wiggle=0.0, delta_s=1800)
        lam = expected_outflow(sc)[:, : sc.steps_per_day]
        hours = np.arange(sc.steps_per_day) / 2.0
        morning = lam[:, (hours >= 6) & (hours <= 10)].max(axis=1)
        midday = lam[:, (hours >= 12) & (hours <= 14)].max(axis=1)
        evening = lam[:, (hours >= 16) & (hours <= 20)].max(axis=1)
        assert (morning > midday).all() and (evening > midday).all()
        ratio = morning / evening
        assert ratio.max() / ratio.min() > 1.5  # regions genuinely differ in shape

    def test_expected_conservation(self):
        sc = small(weather_mode="random")
        lam_out, lam_in = expected_outflow(sc), expected_inflow(sc)
        np.testing.assert_allclose(
            lam_in[:, 1:].sum(axis=0), lam_out[:, :-1].sum(axis=0), rtol=0, atol=1e-9
        )

    def test_oracle_effect_closed_form(self):
        sc = small(weather_mode="flat", wiggle=0.0)
        lam = expected_outflow(sc)
        spd = sc.steps_per_day
        day_total = lam[:, 4 * spd:5 * spd].sum()
        assert oracle_effect(sc, 4, 0.2) == pytest.approx(-0.8 * day_total, rel=1e-12)
        assert oracle_effect(sc, 4, 1.0) == pytest.approx(0.0, abs=1e-9)
        with pytest.raises(ConfigError):
            oracle_effect(sc, 99, 0.5)


class TestSampling:
    def test_exact_conservation_per_step(self):
        sc = small()
        out, inn, trips = sample_flows(sc, np.random.default_rng(0))
        np.testing.assert_array_equal(inn[:, 1:].sum(axis=0), out[:, :-1].sum(axis=0))
        assert trips.sum() == out.sum()
        assert np.diag(trips).sum() > 0  # stays are recorded as self-loops

    def test_monte_carlo_matches_expectation(self):
        sc = small()
        lam_out, lam_in = expected_outflow(sc), expected_inflow(sc)
        i, t = 2, 40  # a busy slot
        reps = 400
        sums_out = np.empty(reps)
        sums_in = np.empty(reps)
        for r in range(reps):
            out, inn, _ = sample_flows(sc, np.random.default_rng(1000 + r))
            sums_out[r] = out[i, t]
            sums_in[r] = inn[i, t]
        se_out = np.sqrt(lam_out[i, t] / reps)
        se_in = np.sqrt(lam_in[i, t] / reps)
        assert abs(sums_out.mean() - lam_out[i, t]) < 3 * se_out
        assert abs(sums_in.mean() - lam_in[i, t]) < 3 * se_in


class TestGeneratedFiles:
    def test_determinism(self, tmp_path):
        sc = small()
        pa = generate(sc, tmp_path / "a")
        pb = generate(sc, tmp_path / "b")
        for key in pa:
            assert pa[key].read_bytes() == pb[key].read_bytes(), key

    def test_datapipe_round_trip(self, tmp_path):
        sc = SynthScenario(days=28, delta_s=1800, seed=5)
        paths = generate(sc, tmp_path)
        flow, ctx, regions, trips = load_dataset(
            paths["flows"], paths["context"], paths["regions"], paths["trips"],
            delta_minutes=30,
        )
        assert flow.values.shape == (6, sc.n_steps, 2)
        assert ctx.values.shape[-1] == 15
        samples = make_samples(flow, ctx, P=8, Q=4)
        assert len(samples) == expected_sample_count(sc.n_steps, 8, 4, 7 * 48)
        assert len(samples) > 600

    def test_expected_channel_loads_and_matches(self, tmp_path):
        sc = small()
        paths = generate(sc, tmp_path)
        flow, _, _, _ = load_dataset(
            paths["flows_expected"], paths["context"], paths["regions"], paths["trips"],
            delta_minutes=sc.delta_s // 60,
        )
        np.testing.assert_allclose(flow.values[:, :, 1], expected_outflow(sc), atol=1e-12)
        np.testing.assert_allclose(flow.values[:, :, 0], expected_inflow(sc), atol=1e-12)
