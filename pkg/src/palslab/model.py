"""Spectral model for lifetime histograms.

A spectrum is a sum of exponential decay components convolved with a
Gaussian timing response, plus an instantaneous (prompt) peak at the
time origin and a flat accidental background.  Each convolved component
is an exponentially modified Gaussian (EMG), which has closed forms for
both the density and the cumulative mass, so per-channel expectations
are computed exactly as differences of the survival function at channel
edges rather than by midpoint quadrature.

Units: decay rates are stored in 1/us (the conventional unit for
annihilation rate constants), times and channel widths in ns.  The
us->ns conversion is internal to the evaluation routines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc, erfcx, ndtr

__all__ = [
    "DomainError",
    "DecayComponent",
    "InstrumentResponse",
    "SpectrumModel",
    "ChannelGrid",
    "Histogram",
    "eval_component",
    "expected_counts",
    "mean_lifetime",
    "FWHM_TO_SIGMA",
]

# sigma = FWHM_TO_SIGMA * fwhm for a Gaussian
FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))

_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Rates are configured in 1/us, the time axis is in ns.
RATE_US_TO_NS = 1.0e-3


class DomainError(ValueError):
    """Raised when an argument violates a documented precondition."""


def _require_finite(name, value):
    if not np.all(np.isfinite(value)):
        raise DomainError(f"{name} must be finite")


@dataclass(frozen=True)
class DecayComponent:
    """One annihilation channel: rate in 1/us and intensity fraction."""

    rate: float
    intensity: float

    def __post_init__(self):
        _require_finite("rate", self.rate)
        _require_finite("intensity", self.intensity)
        if self.rate <= 0.0:
            raise DomainError(f"rate must be > 0, got {self.rate}")
        if self.intensity < 0.0:
            raise DomainError(f"intensity must be >= 0, got {self.intensity}")


@dataclass(frozen=True)
class InstrumentResponse:
    """Gaussian timing response: FWHM and time-zero offset, both in ns."""

    fwhm: float
    t0: float = 0.0

    def __post_init__(self):
        _require_finite("fwhm", self.fwhm)
        _require_finite("t0", self.t0)
        if self.fwhm < 0.0:
            raise DomainError(f"fwhm must be >= 0, got {self.fwhm}")

    @property
    def sigma(self) -> float:
        return self.fwhm * FWHM_TO_SIGMA


@dataclass(frozen=True)
class SpectrumModel:
    """Decay components + instrument response + prompt peak + background.

    ``prompt_fraction`` is the fraction of true coincidences landing in
    the instantaneous peak at t0.  Component intensities plus the prompt
    fraction may not exceed 1; equality means every true event is
    accounted for (required when the model drives the simulator).
    ``total_events`` is the expected number of true coincidences and
    ``background_per_channel`` the flat accidental floor.
    """

    components: tuple[DecayComponent, ...]
    irf: InstrumentResponse
    prompt_fraction: float = 0.0
    background_per_channel: float = 0.0
    total_events: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not self.components:
            raise DomainError("model needs at least one decay component")
        for value, name in (
            (self.prompt_fraction, "prompt_fraction"),
            (self.background_per_channel, "background_per_channel"),
            (self.total_events, "total_events"),
        ):
            _require_finite(name, value)
            if value < 0.0:
                raise DomainError(f"{name} must be >= 0, got {value}")
        if self.prompt_fraction > 1.0:
            raise DomainError("prompt_fraction must lie in [0, 1]")
        if self.true_fraction_sum > 1.0 + 1e-9:
            raise DomainError(
                "component intensities plus prompt_fraction exceed 1 "
                f"(sum = {self.true_fraction_sum})"
            )

    @property
    def true_fraction_sum(self) -> float:
        return sum(c.intensity for c in self.components) + self.prompt_fraction

    def is_normalized(self, tol: float = 1e-9) -> bool:
        """True when intensities + prompt account for every true event."""
        return abs(self.true_fraction_sum - 1.0) <= tol


@dataclass(frozen=True)
class ChannelGrid:
    """Histogram geometry: n_channels bins of channel_width ns from t = 0."""

    n_channels: int
    channel_width: float

    def __post_init__(self):
        if self.n_channels < 1:
            raise DomainError(f"n_channels must be >= 1, got {self.n_channels}")
        _require_finite("channel_width", self.channel_width)
        if self.channel_width <= 0.0:
            raise DomainError(
                f"channel_width must be > 0, got {self.channel_width}"
            )

    @property
    def span(self) -> float:
        return self.n_channels * self.channel_width

    def edges(self) -> np.ndarray:
        """Channel edge times in ns, length n_channels + 1."""
        return np.arange(self.n_channels + 1) * self.channel_width


@dataclass
class Histogram:
    """Per-channel counts with geometry, live time and free-form metadata."""

    channel_width: float
    counts: np.ndarray
    live_time: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or counts.size < 1:
            raise DomainError("counts must be a non-empty 1-d array")
        if not np.issubdtype(counts.dtype, np.integer):
            rounded = np.rint(counts)
            if not np.allclose(counts, rounded):
                raise DomainError("counts must be integers")
            counts = rounded.astype(np.int64)
        else:
            counts = counts.astype(np.int64)
        if np.any(counts < 0):
            raise DomainError("counts must be >= 0")
        self.counts = counts
        _require_finite("channel_width", self.channel_width)
        if self.channel_width <= 0.0:
            raise DomainError("channel_width must be > 0")
        _require_finite("live_time", self.live_time)
        if self.live_time < 0.0:
            raise DomainError("live_time must be >= 0")

    @property
    def n_channels(self) -> int:
        return int(self.counts.size)

    @property
    def grid(self) -> ChannelGrid:
        return ChannelGrid(self.n_channels, self.channel_width)


# ---------------------------------------------------------------------------
# EMG kernels.  All take the offset d = t - t0 in ns and the rate in 1/ns.
#
# The naive closed form (lam/2) exp(lam^2 s^2/2 - lam d) erfc((lam s^2 - d) /
# (s sqrt 2)) overflows when lam*s^2 - d is large, so each quantity is
# evaluated in two branches: through the scaled complement erfcx where the
# erfc argument is positive (the exp factor then collapses to a Gaussian),
# and directly where it is negative (the exp factor is then < 1).
# ---------------------------------------------------------------------------


def _gauss_kernel(d, sigma):
    """exp(-d^2 / (2 sigma^2)) / sqrt(2 pi); shared by all stable branches."""
    return _INV_SQRT2PI * np.exp(-np.square(d) / (2.0 * sigma * sigma))


def _emg_tail_term(d, lam, sigma):
    """exp(lam^2 s^2 / 2 - lam d) * Phi(d/s - lam s), overflow-free.

    This is the non-Gaussian part of the EMG survival function; it also
    carries all the rate dependence of the closed forms below.
    """
    d = np.asarray(d, dtype=float)
    w = (lam * sigma * sigma - d) / (sigma * _SQRT2)
    out = np.empty_like(d)
    pos = w >= 0.0
    out[pos] = 0.5 * erfcx(w[pos]) * _gauss_kernel(d[pos], sigma) / _INV_SQRT2PI
    neg = ~pos
    out[neg] = (
        0.5
        * np.exp(lam * lam * sigma * sigma / 2.0 - lam * d[neg])
        * erfc(w[neg])
    )
    return out


def emg_density(d, lam, sigma):
    """EMG density (1/ns) at offset d for unit intensity.

    Reduces to lam * exp(-lam d) for d > 0 when sigma == 0.
    """
    d = np.asarray(d, dtype=float)
    if sigma == 0.0:
        out = np.where(d > 0.0, lam * np.exp(-lam * np.maximum(d, 0.0)), 0.0)
        return np.where(d == 0.0, 0.5 * lam, out)
    return lam * _emg_tail_term(d, lam, sigma)


def emg_survival(d, lam, sigma):
    """P(T > d) for the EMG with unit intensity; exact in the deep tail.

    Channel masses are differences of this function, which keeps full
    relative precision where the spectrum has decayed by many decades.
    """
    d = np.asarray(d, dtype=float)
    if sigma == 0.0:
        return np.where(d > 0.0, np.exp(-lam * np.maximum(d, 0.0)), 1.0)
    return ndtr(-d / sigma) + _emg_tail_term(d, lam, sigma)


def emg_survival_dlam(d, lam, sigma):
    """d/dlam of emg_survival at fixed d, sigma."""
    d = np.asarray(d, dtype=float)
    tail = _emg_tail_term(d, lam, sigma)
    return (lam * sigma * sigma - d) * tail - sigma * _gauss_kernel(d, sigma)


def emg_survival_dsigma(d, lam, sigma):
    """d/dsigma of emg_survival at fixed d, lam."""
    d = np.asarray(d, dtype=float)
    tail = _emg_tail_term(d, lam, sigma)
    return lam * lam * sigma * tail - lam * _gauss_kernel(d, sigma)


def gaussian_mass(d_lo, d_hi, sigma):
    """Mass of a unit Gaussian at 0 between offsets d_lo and d_hi."""
    if sigma == 0.0:
        lo = np.asarray(d_lo, dtype=float)
        hi = np.asarray(d_hi, dtype=float)
        return np.where((lo <= 0.0) & (hi > 0.0), 1.0, 0.0)
    return ndtr(np.asarray(d_hi) / sigma) - ndtr(np.asarray(d_lo) / sigma)


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def eval_component(c: DecayComponent, irf: InstrumentResponse, t) -> np.ndarray:
    """Density (1/ns) of one decay component convolved with the response.

    Parameters
    ----------
    c : DecayComponent
        Rate in 1/us, intensity as event fraction.
    irf : InstrumentResponse
        Gaussian timing response; a zero FWHM reduces the result to the
        bare exponential intensity * lam * exp(-lam (t - t0)).
    t : array_like
        Times in ns.

    Returns
    -------
    ndarray
        Non-negative density whose integral over all t equals the
        component intensity.
    """
    t = np.asarray(t, dtype=float)
    _require_finite("t", t)
    lam = c.rate * RATE_US_TO_NS
    return c.intensity * emg_density(t - irf.t0, lam, irf.sigma)


def expected_counts(model: SpectrumModel, grid: ChannelGrid) -> np.ndarray:
    """Expected counts per channel for a model on a channel grid.

    Component and prompt masses are integrated exactly over each channel
    (differences of the EMG survival function / Gaussian CDF at channel
    edges), scaled by total_events, plus the flat background.
    """
    if not isinstance(grid, ChannelGrid):
        grid = ChannelGrid(*grid)
    edges = grid.edges() - model.irf.t0
    sigma = model.irf.sigma
    per_event = np.zeros(grid.n_channels)
    for c in model.components:
        lam = c.rate * RATE_US_TO_NS
        sf = emg_survival(edges, lam, sigma)
        per_event += c.intensity * (sf[:-1] - sf[1:])
    if model.prompt_fraction > 0.0:
        per_event += model.prompt_fraction * gaussian_mass(
            edges[:-1], edges[1:], sigma
        )
    return model.total_events * per_event + model.background_per_channel


def mean_lifetime(c: DecayComponent) -> float:
    """Mean lifetime in ns of a component with rate in 1/us."""
    return 1.0 / (c.rate * RATE_US_TO_NS)
