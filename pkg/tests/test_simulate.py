import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from palslab import (
    AnomalyScenario,
    DomainError,
    Histogram,
    RngSeed,
    SpectrometerConfig,
    apply_scenario,
    expected_counts,
    merge_histograms,
    sample_event,
    simulate_spectrum,
)
from palslab.simulate import window_acceptance

from conftest import RATE_OPS_THEORY, three_component_model


class TestApplyScenario:
    def test_standard_qed_is_identity(self, base_model):
        for orientation in ("none", "perpendicular", "parallel"):
            scenario = AnomalyScenario(mode="standard_qed", field_orientation=orientation)
            assert apply_scenario(base_model, scenario) is base_model

    def test_resonance_transfer_and_parallel_suppression(self, base_model):
        scenario = AnomalyScenario(
            mode="resonance", field_orientation="perpendicular", doubling_transfer=0.5
        )
        perp = apply_scenario(base_model, scenario)
        assert perp.components[2].intensity == pytest.approx(0.15)
        assert perp.prompt_fraction == pytest.approx(0.15)
        assert perp.true_fraction_sum == pytest.approx(1.0, abs=1e-12)
        par = apply_scenario(base_model, replace(scenario, field_orientation="parallel"))
        assert par.components[2].intensity == pytest.approx(0.30)
        # delayed long-lived intensity doubles when the field is parallel
        ratio = par.components[2].intensity / perp.components[2].intensity
        assert ratio == pytest.approx(2.0)

    def test_rate_shift_values(self, base_model):
        scenario = AnomalyScenario(
            mode="nonresonance_lambda", field_orientation="none", lambda_shift=0.0019
        )
        shifted = apply_scenario(base_model, scenario)
        assert shifted.components[2].rate == pytest.approx(7.053355, abs=5e-7)
        assert shifted.components[2].intensity == base_model.components[2].intensity
        par = apply_scenario(base_model, replace(scenario, field_orientation="parallel"))
        assert par.components[2].rate == RATE_OPS_THEORY

    def test_requires_three_components(self, base_model):
        bad = replace(base_model, components=base_model.components[:2])
        with pytest.raises(DomainError):
            apply_scenario(bad, AnomalyScenario(mode="resonance"))

    @settings(max_examples=30, deadline=None)
    @given(transfer=st.floats(min_value=0.0, max_value=1.0))
    def test_bookkeeping_preserved(self, transfer):
        base = three_component_model()
        scenario = AnomalyScenario(
            mode="resonance", field_orientation="none", doubling_transfer=transfer
        )
        out = apply_scenario(base, scenario)
        assert out.true_fraction_sum == pytest.approx(base.true_fraction_sum, abs=1e-12)
        # suppressed/active delayed-intensity ratio is 1/(1 - transfer)
        if transfer < 1.0:
            assert base.components[2].intensity / out.components[2].intensity == (
                pytest.approx(1.0 / (1.0 - transfer))
            )


class TestSampleEvent:
    def test_prompt_transfer_centers_on_t0(self, cfg):
        model = three_component_model(prompt=0.3)
        rng = RngSeed(5, 0).generator()
        sigma = cfg.timing_fwhm * 0.4246609001440095
        prompt = [
            e
            for e in (sample_event(cfg, model, rng) for _ in range(400))
            if e.true_channel == "prompt_transfer"
        ]
        assert prompt, "prompt channel never drawn"
        assert all(e.emission_delay == 0.0 for e in prompt)
        delays = np.array([e.measured_delay for e in prompt])
        assert abs(delays.mean() - 50.0) < 5.0 * sigma / math.sqrt(len(prompt))

    def test_pair_production_line_rejected(self, cfg):
        # a 1.022 MeV deposit lies above the stop window and is never accepted
        wide = replace(cfg, stop_deposit_range=(0.0, 1.1))
        model = three_component_model()
        rng = RngSeed(6, 0).generator()
        events = [sample_event(wide, model, rng) for _ in range(3000)]
        low, high = cfg.stop_window
        for e in events:
            assert e.accepted == (low <= e.stop_energy_deposit <= high)
        hot = [e for e in events if abs(e.stop_energy_deposit - 1.022) < 0.05]
        assert hot and not any(e.accepted for e in hot)

    def test_window_deposit_accepted(self, cfg):
        model = three_component_model()
        narrow = replace(cfg, stop_deposit_range=(0.39, 0.41))
        rng = RngSeed(7, 0).generator()
        event = sample_event(narrow, model, rng)
        assert 0.39 <= event.stop_energy_deposit <= 0.41
        assert event.accepted

    def test_start_line_inside_stop_window_rejected_at_config(self):
        with pytest.raises(DomainError):
            SpectrometerConfig(start_energy=0.4)


class TestSimulateSpectrum:
    def test_zero_events_zero_accidentals(self, cfg, base_model, standard_scenario):
        hist = simulate_spectrum(cfg, standard_scenario, base_model, seed=1, n_events=0)
        assert hist.counts.sum() == 0

    def test_accidental_floor(self, base_model, standard_scenario):
        cfg = SpectrometerConfig(accidental_rate=300.0, live_time=3600.0, n_channels=512)
        hist = simulate_spectrum(cfg, standard_scenario, base_model, seed=2, n_events=0)
        per_channel = cfg.accidental_rate * cfg.live_time / cfg.n_channels
        sigma = math.sqrt(per_channel)
        assert np.all(np.abs(hist.counts - per_channel) < 5.0 * sigma)
        outside_3sigma = np.abs(hist.counts - per_channel) > 3.0 * sigma
        assert outside_3sigma.mean() < 0.01

    def test_accidentals_uniform_in_time(self, base_model, standard_scenario):
        # Kolmogorov-Smirnov on the channel positions of ~1e6 accidentals
        cfg = SpectrometerConfig(accidental_rate=278.0, live_time=3600.0)
        hist = simulate_spectrum(cfg, standard_scenario, base_model, seed=3, n_events=0)
        edges = np.arange(cfg.n_channels + 1) / cfg.n_channels
        counts = hist.counts
        cdf_emp = np.cumsum(counts) / counts.sum()
        # KS distance between empirical and uniform CDF at channel resolution
        d_stat = np.max(np.abs(cdf_emp - edges[1:]))
        p = stats.kstwo.sf(d_stat, int(counts.sum()))
        assert p > 1e-3

    def test_counts_match_expectation_chi2(self, cfg, standard_scenario):
        base = three_component_model()
        n_events = 10_000_000
        hist = simulate_spectrum(cfg, standard_scenario, base, seed=4, n_events=n_events)
        model = replace(
            base, total_events=n_events * window_acceptance(cfg)
        )
        mu = expected_counts(model, hist.grid)
        mask = mu > 20.0
        chi2 = float(np.sum((hist.counts[mask] - mu[mask]) ** 2 / mu[mask]))
        dof = int(mask.sum())
        assert stats.chi2.sf(chi2, dof) > 1e-3

    def test_acceptance_logic_never_leaks(self, standard_scenario):
        # with deposits drawn up to 1.1 MeV nothing outside the window lands
        cfg = SpectrometerConfig(stop_deposit_range=(0.0, 1.1))
        base = three_component_model()
        hist = simulate_spectrum(cfg, standard_scenario, base, seed=5, n_events=200_000)
        accepted = int(hist.metadata["accepted_events"])
        expected_rate = window_acceptance(cfg)
        assert accepted == pytest.approx(200_000 * expected_rate, rel=0.05)

    def test_deterministic_across_thread_counts(self, cfg, base_model, standard_scenario):
        runs = [
            simulate_spectrum(
                cfg, standard_scenario, base_model, seed=6, n_events=100_000, threads=t
            )
            for t in (1, 4)
        ]
        np.testing.assert_array_equal(runs[0].counts, runs[1].counts)
        assert runs[0].metadata == runs[1].metadata

    def test_t0_outside_range_rejected(self, cfg, standard_scenario):
        model = three_component_model(t0=-5.0)
        with pytest.raises(DomainError):
            simulate_spectrum(cfg, standard_scenario, model, seed=1, n_events=10)

    def test_metadata_records_inputs(self, cfg, base_model):
        scenario = AnomalyScenario(mode="resonance", field_orientation="perpendicular")
        hist = simulate_spectrum(cfg, scenario, base_model, seed=9, n_events=1000)
        assert hist.metadata["seed"] == "9"
        assert hist.metadata["scenario.mode"] == "resonance"
        assert hist.metadata["scenario.field_orientation"] == "perpendicular"
        assert float(hist.metadata["model.prompt_fraction"]) == pytest.approx(0.15)


class TestMergeHistograms:
    def test_identity_with_zero_histogram(self, cfg, base_model, standard_scenario):
        hist = simulate_spectrum(cfg, standard_scenario, base_model, seed=1, n_events=5000)
        zero = Histogram(
            channel_width=hist.channel_width,
            counts=np.zeros(hist.n_channels, dtype=np.int64),
            live_time=0.0,
            metadata={"seed": ""},
        )
        merged = merge_histograms([hist, zero])
        np.testing.assert_array_equal(merged.counts, hist.counts)
        assert merged.live_time == hist.live_time

    def test_commutative_and_associative(self, cfg, base_model, standard_scenario):
        hists = [
            simulate_spectrum(
                cfg, standard_scenario, base_model, seed=s, n_events=2000
            )
            for s in (1, 2, 3)
        ]
        ab_c = merge_histograms([merge_histograms(hists[:2]), hists[2]])
        a_bc = merge_histograms([hists[0], merge_histograms(hists[1:])])
        cba = merge_histograms(hists[::-1])
        for other in (a_bc, cba):
            np.testing.assert_array_equal(ab_c.counts, other.counts)
            assert ab_c.live_time == other.live_time
            assert ab_c.metadata["seed"] == other.metadata["seed"]

    def test_replica_partition_equals_single_run(self, base_model, standard_scenario):
        # 8 one-stream replicas on streams 0..7 reproduce one 8-stream run
        cfg = SpectrometerConfig()  # accidental_rate 0: counts are stream-determined
        single = simulate_spectrum(
            cfg, standard_scenario, base_model, seed=11, n_events=800_000, n_streams=8
        )
        replicas = [
            simulate_spectrum(
                cfg,
                standard_scenario,
                base_model,
                seed=11,
                n_events=100_000,
                n_streams=1,
                stream_base=r,
            )
            for r in range(8)
        ]
        merged = merge_histograms(replicas)
        np.testing.assert_array_equal(merged.counts, single.counts)

    def test_geometry_mismatch_rejected(self, cfg, base_model, standard_scenario):
        a = simulate_spectrum(cfg, standard_scenario, base_model, seed=1, n_events=100)
        b = Histogram(
            channel_width=1.0,
            counts=np.zeros(cfg.n_channels, dtype=np.int64),
            live_time=1.0,
        )
        with pytest.raises(DomainError):
            merge_histograms([a, b])
