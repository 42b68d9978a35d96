import math
from dataclasses import replace

import numpy as np
import pytest

from palslab import (
    AnomalyScenario,
    DomainError,
    FitSpec,
    Histogram,
    ParamSetting,
    SpectrometerConfig,
    estimate_background,
    expected_counts,
    fit_mle,
    gradient_check,
    simulate_spectrum,
)
from palslab.fitting import param_names, poisson_deviance
from palslab.hypotests import rate_shift_fitspec

from conftest import RATE_OPS_THEORY, three_component_model


def noiseless_histogram(model, n_channels=4096, width=0.5):
    mu = expected_counts(model, (n_channels, width))
    return Histogram(
        channel_width=width,
        counts=np.rint(mu).astype(np.int64),
        live_time=1.0,
        metadata={"seed": "0"},
    )


class TestFitSpec:
    def test_missing_parameter_rejected(self, base_model):
        spec = FitSpec.from_model(base_model, free=("rate2",))
        params = dict(spec.params)
        del params["rate0"]
        with pytest.raises(DomainError):
            FitSpec(params=params)

    def test_remainder_must_be_fraction(self, base_model):
        with pytest.raises(DomainError):
            FitSpec.from_model(base_model, free=("rate2",), remainder="t0")

    def test_remainder_cannot_be_free(self, base_model):
        with pytest.raises(DomainError):
            FitSpec.from_model(
                base_model, free=("intensity1",), remainder="intensity1"
            )

    def test_init_outside_bounds_rejected(self, base_model):
        spec = FitSpec.from_model(base_model, free=("rate2",))
        params = dict(spec.params)
        params["rate2"] = ParamSetting(value=7.0, free=True, lower=8.0, upper=9.0)
        with pytest.raises(DomainError):
            FitSpec(params=params)


class TestSelfConsistency:
    def test_noiseless_fit_stays_at_truth(self):
        # statistics large enough that integer rounding of the expectations
        # perturbs every estimate by less than the 1e-6 contract
        truth = three_component_model(total_events=2.0e9, background=25.0)
        hist = noiseless_histogram(truth)
        spec = FitSpec.from_model(
            truth,
            free=("rate0", "rate1", "rate2", "intensity2", "background"),
            remainder="intensity1",
        )
        result = fit_mle(hist, spec)
        assert result.converged
        for name in result.free_names:
            target = spec.params[name].value
            assert result.estimates[name] == pytest.approx(target, rel=1e-6), name

    def test_round_trip_recovery_within_3_sigma(self, cfg, standard_scenario):
        base = three_component_model()
        hist = simulate_spectrum(
            cfg, standard_scenario, base, seed=41, n_events=1_000_000
        )
        spec = rate_shift_fitspec(base, float(hist.metadata["accepted_events"]))
        result = fit_mle(hist, spec)
        assert result.converged
        pull = (result.estimates["rate2"] - RATE_OPS_THEORY) / result.errors["rate2"]
        assert abs(pull) < 3.0

    def test_covariance_symmetric_psd(self, cfg, standard_scenario):
        base = three_component_model()
        hist = simulate_spectrum(
            cfg, standard_scenario, base, seed=42, n_events=200_000
        )
        spec = rate_shift_fitspec(base, float(hist.metadata["accepted_events"]))
        result = fit_mle(hist, spec)
        cov = result.covariance
        np.testing.assert_allclose(cov, cov.T, rtol=1e-10)
        eigenvalues = np.linalg.eigvalsh(cov)
        assert np.all(eigenvalues > 0.0)

    def test_deviance_monotone_along_iterations(self, cfg, standard_scenario):
        base = three_component_model()
        hist = simulate_spectrum(
            cfg, standard_scenario, base, seed=43, n_events=300_000
        )
        # displaced start exercises several accepted steps
        spec = rate_shift_fitspec(base, float(hist.metadata["accepted_events"]))
        params = dict(spec.params)
        params["rate2"] = replace(params["rate2"], value=9.5)
        params["intensity2"] = replace(params["intensity2"], value=0.2)
        result = fit_mle(hist, replace(spec, params=params))
        assert result.converged
        trace = np.array(result.deviance_trace)
        assert len(trace) > 2
        assert np.all(np.diff(trace) <= 0.0)
        assert result.estimates["rate2"] == pytest.approx(RATE_OPS_THEORY, rel=5e-3)

    def test_nested_models_deviance_inequality(self, cfg, standard_scenario):
        base = three_component_model()
        hist = simulate_spectrum(
            cfg, standard_scenario, base, seed=44, n_events=300_000
        )
        free_spec = rate_shift_fitspec(base, float(hist.metadata["accepted_events"]))
        pinned = dict(free_spec.params)
        pinned["rate2"] = ParamSetting(value=RATE_OPS_THEORY, free=False)
        fixed_spec = replace(free_spec, params=pinned)
        d_free = fit_mle(hist, free_spec).deviance
        d_fixed = fit_mle(hist, fixed_spec).deviance
        assert d_free <= d_fixed + 1e-9

    def test_reparameterization_invariance(self, cfg, standard_scenario):
        base = three_component_model()
        hist = simulate_spectrum(
            cfg, standard_scenario, base, seed=45, n_events=200_000
        )
        spec_us = rate_shift_fitspec(base, float(hist.metadata["accepted_events"]))
        params_ns = {}
        for name, s in spec_us.params.items():
            if name.startswith("rate"):
                params_ns[name] = replace(s, value=s.value / 1000.0)
            else:
                params_ns[name] = s
        spec_ns = replace(spec_us, params=params_ns, rate_unit="per_ns")
        res_us = fit_mle(hist, spec_us)
        res_ns = fit_mle(hist, spec_ns)
        assert res_ns.deviance == pytest.approx(res_us.deviance, rel=1e-12)
        assert res_ns.estimates["rate2"] * 1000.0 == pytest.approx(
            res_us.estimates["rate2"], rel=1e-9
        )
        assert res_ns.errors["rate2"] * 1000.0 == pytest.approx(
            res_us.errors["rate2"], rel=1e-6
        )

    def test_non_convergence_is_explicit(self, cfg, standard_scenario):
        base = three_component_model()
        hist = simulate_spectrum(
            cfg, standard_scenario, base, seed=46, n_events=300_000
        )
        spec = rate_shift_fitspec(base, float(hist.metadata["accepted_events"]))
        params = dict(spec.params)
        params["rate2"] = replace(params["rate2"], value=20.0)
        starved = replace(spec, params=params, max_iterations=1)
        result = fit_mle(hist, starved)
        assert not result.converged
        assert result.message != "converged"

    def test_singular_information_flagged(self, cfg, standard_scenario):
        # with no remainder and zero prompt, total_events is an exact linear
        # combination of the intensity columns
        base = three_component_model()
        hist = simulate_spectrum(
            cfg, standard_scenario, base, seed=47, n_events=100_000
        )
        spec = FitSpec.from_model(
            base,
            free=("intensity0", "intensity1", "intensity2", "total_events"),
            overrides={"total_events": float(hist.metadata["accepted_events"])},
        )
        result = fit_mle(hist, spec)
        assert result.singular
        assert result.covariance is None

    def test_empty_histogram_rejected(self, base_model):
        hist = Histogram(
            channel_width=0.5, counts=np.zeros(128, dtype=np.int64), live_time=1.0
        )
        spec = FitSpec.from_model(base_model, free=("rate2",))
        with pytest.raises(DomainError):
            fit_mle(hist, spec)

    def test_needs_a_free_parameter(self, base_model):
        hist = noiseless_histogram(replace(base_model, total_events=1e6))
        spec = FitSpec.from_model(base_model)
        with pytest.raises(DomainError):
            fit_mle(hist, spec)


class TestGradientCheck:
    def test_default_model_below_tolerance(self, cfg, standard_scenario):
        base = three_component_model(prompt=0.15, i2=0.15, total_events=0.0)
        hist = simulate_spectrum(
            cfg,
            AnomalyScenario(mode="resonance", field_orientation="perpendicular"),
            three_component_model(),
            seed=48,
            n_events=500_000,
        )
        spec = FitSpec.from_model(
            replace(base, total_events=float(hist.metadata["accepted_events"]),
                    background_per_channel=1.0),
            free=(
                "rate0",
                "rate1",
                "rate2",
                "intensity0",
                "intensity2",
                "prompt_fraction",
                "t0",
                "fwhm",
                "background",
                "total_events",
            ),
            remainder="intensity1",
        )
        check = gradient_check(spec, hist)
        assert check.max_relative_deviation <= 1e-5
        assert check.worst_parameter is None

    def test_all_fixed_spec_has_empty_jacobian(self, base_model, cfg, standard_scenario):
        hist = simulate_spectrum(
            cfg, standard_scenario, three_component_model(), seed=49, n_events=10_000
        )
        spec = FitSpec.from_model(base_model)
        check = gradient_check(spec, hist)
        assert check.max_relative_deviation == 0.0
        assert check.per_parameter == {}
        assert check.worst_parameter is None

    def test_offending_parameter_identified(self, cfg, standard_scenario):
        hist = simulate_spectrum(
            cfg, standard_scenario, three_component_model(), seed=50, n_events=10_000
        )
        spec = rate_shift_fitspec(three_component_model(), 1000.0)
        check = gradient_check(spec, hist, threshold=0.0)
        assert check.worst_parameter in check.per_parameter
        assert check.per_parameter[check.worst_parameter] == (
            check.max_relative_deviation
        )


class TestEstimateBackground:
    def test_uniform_window(self):
        counts = np.full(256, 9, dtype=np.int64)
        hist = Histogram(channel_width=0.5, counts=counts, live_time=1.0)
        est = estimate_background(hist, (0, 64), t0=50.0, fwhm=1.7)
        assert est.mean == 9.0
        assert not est.degenerate

    def test_simulated_accidentals_match_rate(self, base_model, standard_scenario):
        cfg = SpectrometerConfig(accidental_rate=200.0, live_time=3600.0)
        hist = simulate_spectrum(cfg, standard_scenario, base_model, seed=51, n_events=0)
        est = estimate_background(hist, (0, 80), t0=50.0, fwhm=1.7)
        expected = cfg.accidental_rate * cfg.live_time / cfg.n_channels
        assert abs(est.mean - expected) < 3.0 * est.stderr

    def test_zero_counts_flagged_degenerate(self):
        hist = Histogram(
            channel_width=0.5, counts=np.zeros(128, dtype=np.int64), live_time=1.0
        )
        est = estimate_background(hist, (0, 32), t0=50.0, fwhm=1.7)
        assert est.mean == 0.0
        assert est.stderr == 0.0
        assert est.degenerate

    def test_window_reaching_the_rise_rejected(self):
        hist = Histogram(
            channel_width=0.5, counts=np.ones(256, dtype=np.int64), live_time=1.0
        )
        with pytest.raises(DomainError):
            estimate_background(hist, (0, 120), t0=50.0, fwhm=1.7)
        with pytest.raises(DomainError):
            estimate_background(hist, (10, 10), t0=50.0, fwhm=1.7)


class TestDeviance:
    def test_zero_for_perfect_model(self):
        counts = np.array([3.0, 0.0, 7.0])
        assert poisson_deviance(counts, counts.copy() + 0.0) == pytest.approx(0.0)

    def test_infinite_when_zero_expectation_under_counts(self):
        assert math.isinf(poisson_deviance(np.array([1.0]), np.array([0.0])))
