import numpy as np
import pytest

from palslab import (
    AnomalyScenario,
    DecayComponent,
    InstrumentResponse,
    SpectrometerConfig,
    SpectrumModel,
)

# Reference long-lived rates (1/us) used throughout the suite: the
# QED value and the historical measured value.
RATE_OPS_THEORY = 7.039979
RATE_OPS_MEASURED = 7.0404


def three_component_model(prompt=0.0, t0=50.0, fwhm=1.7, total_events=0.0,
                          background=0.0, i2=0.30, rate2=RATE_OPS_THEORY):
    # short-lived intensities keep the 0.05 : 0.65 default proportion
    rest = 1.0 - prompt - i2
    i0 = rest / 14.0
    return SpectrumModel(
        components=(
            DecayComponent(rate=8000.0, intensity=i0),
            DecayComponent(rate=250.0, intensity=rest - i0),
            DecayComponent(rate=rate2, intensity=i2),
        ),
        irf=InstrumentResponse(fwhm=fwhm, t0=t0),
        prompt_fraction=prompt,
        background_per_channel=background,
        total_events=total_events,
    )


@pytest.fixture
def base_model():
    return three_component_model()


@pytest.fixture
def cfg():
    return SpectrometerConfig()


@pytest.fixture
def fast_cfg():
    # same 2048 ns span on a quarter of the channels, unit window acceptance
    return SpectrometerConfig(
        channel_width=2.0,
        n_channels=1024,
        stop_deposit_range=(0.34, 0.51),
    )


@pytest.fixture
def standard_scenario():
    return AnomalyScenario(mode="standard_qed", field_orientation="none")


@pytest.fixture
def rng():
    return np.random.default_rng(20240911)
