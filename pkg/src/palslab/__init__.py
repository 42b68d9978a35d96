"""palslab: a desk-scale lifetime-spectroscopy laboratory.

Simulates a fast-slow coincidence lifetime spectrometer, fits the
resulting multi-exponential spectra by Poisson maximum likelihood, and
quantifies the statistical reach of two anomaly protocols (prompt-peak
intensity doubling and a long-lived rate shift), alongside closed-form
checks of the associated lattice-constant identities.
"""

__version__ = "0.1.0"

from .constants import (
    LatticeModel,
    PhysicalConstants,
    n3_from_alpha,
    planck_identity_residual,
    planck_mass,
)
from .fitting import (
    BackgroundEstimate,
    FitResult,
    FitSpec,
    GradientCheck,
    JointFitResult,
    ParamSetting,
    estimate_background,
    fit_joint,
    fit_mle,
    gradient_check,
)
from .formats import FormatError, read_histogram, read_report, write_histogram, write_report
from .hypotests import (
    PowerPoint,
    TestResult,
    lr_test_doubling,
    lr_test_rate_shift,
    power_scan,
)
from .model import (
    ChannelGrid,
    DecayComponent,
    DomainError,
    Histogram,
    InstrumentResponse,
    SpectrumModel,
    eval_component,
    expected_counts,
    mean_lifetime,
)
from .simulate import (
    AnomalyScenario,
    EventRecord,
    RngSeed,
    SpectrometerConfig,
    apply_scenario,
    merge_histograms,
    sample_event,
    simulate_spectrum,
)

__all__ = [
    "__version__",
    "AnomalyScenario",
    "BackgroundEstimate",
    "ChannelGrid",
    "DecayComponent",
    "DomainError",
    "EventRecord",
    "FitResult",
    "FitSpec",
    "FormatError",
    "GradientCheck",
    "Histogram",
    "InstrumentResponse",
    "JointFitResult",
    "LatticeModel",
    "ParamSetting",
    "PhysicalConstants",
    "PowerPoint",
    "RngSeed",
    "SpectrometerConfig",
    "SpectrumModel",
    "TestResult",
    "apply_scenario",
    "estimate_background",
    "eval_component",
    "expected_counts",
    "fit_joint",
    "fit_mle",
    "gradient_check",
    "lr_test_doubling",
    "lr_test_rate_shift",
    "mean_lifetime",
    "merge_histograms",
    "n3_from_alpha",
    "planck_identity_residual",
    "planck_mass",
    "power_scan",
    "read_histogram",
    "read_report",
    "sample_event",
    "simulate_spectrum",
    "write_histogram",
    "write_report",
]
