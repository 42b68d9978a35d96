"""Monte Carlo generator for the fast-slow coincidence spectrometer.

The instrument is reduced to what its discriminators actually enforce:
a start line outside the stop energy window, a flat scalar "Compton
deposit" per stop signal checked against the window, Gaussian timing
jitter on true delays, and a residual accidental rate that is uniform
in time.  Anomaly scenarios rewrite the spectral model before any event
is drawn: the resonance mode diverts part of the long-lived intensity
into the prompt peak unless a parallel field suppresses it, and the
rate-shift mode scales the long-lived rate.

Reproducibility: events are generated in independent replicas, one
counter-based RNG stream per replica keyed by (seed, stream_id).  The
histogram for a given (config, scenario, model, seed, n_streams) is
bit-identical regardless of how many threads execute the replicas.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .model import (
    FWHM_TO_SIGMA,
    DomainError,
    DecayComponent,
    Histogram,
    SpectrumModel,
)

__all__ = [
    "MODES",
    "ORIENTATIONS",
    "EVENT_CHANNELS",
    "SpectrometerConfig",
    "AnomalyScenario",
    "EventRecord",
    "RngSeed",
    "apply_scenario",
    "sample_event",
    "simulate_spectrum",
    "merge_histograms",
    "window_acceptance",
]

MODES = ("standard_qed", "resonance", "nonresonance_lambda")
ORIENTATIONS = ("none", "perpendicular", "parallel")
EVENT_CHANNELS = ("pPs", "free_positron", "oPs", "prompt_transfer", "accidental")

_BATCH_EVENTS = 2_000_000  # cap on per-draw array size inside a replica


@dataclass(frozen=True)
class SpectrometerConfig:
    """Instrument settings: energies in MeV, times in ns unless noted."""

    start_energy: float = 1.28
    stop_window: tuple[float, float] = (0.34, 0.51)
    timing_fwhm: float = 1.7
    slow_resolving_time: float = 1.0  # us
    accidental_rate: float = 0.0  # residual accidentals per second of live time
    channel_width: float = 0.5
    n_channels: int = 4096
    live_time: float = 3600.0  # s
    source_activity: float = 0.0  # true coincidences per second of live time
    stop_deposit_range: tuple[float, float] = (0.0, 0.511)

    def __post_init__(self):
        object.__setattr__(self, "stop_window", tuple(self.stop_window))
        object.__setattr__(
            self, "stop_deposit_range", tuple(self.stop_deposit_range)
        )
        low, high = self.stop_window
        if not (0.0 < low < high):
            raise DomainError(f"stop_window must satisfy 0 < low < high, got {self.stop_window}")
        if low <= self.start_energy <= high:
            raise DomainError(
                "start_energy inside the stop window defeats the start/stop "
                f"discrimination ({self.start_energy} in {self.stop_window})"
            )
        dep_low, dep_high = self.stop_deposit_range
        if not (0.0 <= dep_low < dep_high):
            raise DomainError(f"bad stop_deposit_range {self.stop_deposit_range}")
        for name in ("start_energy", "timing_fwhm", "slow_resolving_time",
                     "channel_width", "live_time"):
            if getattr(self, name) <= 0.0:
                raise DomainError(f"{name} must be > 0")
        for name in ("accidental_rate", "source_activity"):
            if getattr(self, name) < 0.0:
                raise DomainError(f"{name} must be >= 0")
        if self.n_channels < 1:
            raise DomainError("n_channels must be >= 1")

    @property
    def time_span(self) -> float:
        return self.n_channels * self.channel_width


@dataclass(frozen=True)
class AnomalyScenario:
    """Experiment mode, field orientation, and anomaly magnitudes.

    ``doubling_transfer`` is the fraction of the long-lived intensity
    diverted to the prompt peak while the resonance anomaly is active;
    ``lambda_shift`` the relative rate excess in the rate-shift mode.
    ``comparative_factor`` stores the reference measured ratio with its
    uncertainty purely for reporting next to the model's exact factor.
    """

    mode: str = "standard_qed"
    field_orientation: str = "none"
    doubling_transfer: float = 0.5
    lambda_shift: float = 0.0019
    comparative_factor: tuple[float, float] = (1.85, 0.1)

    def __post_init__(self):
        if self.mode not in MODES:
            raise DomainError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.field_orientation not in ORIENTATIONS:
            raise DomainError(
                f"field_orientation must be one of {ORIENTATIONS}, "
                f"got {self.field_orientation!r}"
            )
        if not 0.0 <= self.doubling_transfer <= 1.0:
            raise DomainError("doubling_transfer must lie in [0, 1]")
        if self.lambda_shift < 0.0:
            raise DomainError("lambda_shift must be >= 0")
        object.__setattr__(
            self, "comparative_factor", tuple(self.comparative_factor)
        )


@dataclass(frozen=True)
class EventRecord:
    """List-mode view of one spectrometer event."""

    true_channel: str
    emission_delay: float  # ns
    measured_delay: float  # ns
    stop_energy_deposit: float  # MeV
    accepted: bool


@dataclass(frozen=True)
class RngSeed:
    """Replica-addressable RNG state: (seed, stream_id) -> one stream.

    Streams are independent Philox counter-based generators, so replica
    sequences never depend on thread scheduling.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            value = getattr(self, name)
            if not 0 <= int(value) < 2**64:
                raise DomainError(f"{name} must be a 64-bit unsigned integer")

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


def apply_scenario(base: SpectrumModel, scenario: AnomalyScenario) -> SpectrumModel:
    """Map the true physics of a scenario onto observed model parameters.

    resonance with the field off or perpendicular moves
    doubling_transfer * I2 from the long-lived component into the prompt
    peak; a parallel field suppresses the transfer.  nonresonance_lambda
    scales the long-lived rate by (1 + lambda_shift) unless the field is
    parallel.  standard_qed is the identity.  Intensity bookkeeping is
    exact: the sum of intensities plus prompt fraction is preserved.
    """
    if len(base.components) != 3:
        raise DomainError(
            f"scenario mapping expects exactly 3 components, got {len(base.components)}"
        )
    if not base.is_normalized():
        raise DomainError(
            "base model must account for all true events "
            f"(intensities + prompt sum to {base.true_fraction_sum})"
        )
    active = scenario.field_orientation in ("none", "perpendicular")
    if scenario.mode == "standard_qed" or not active:
        return base
    c0, c1, c2 = base.components
    if scenario.mode == "resonance":
        moved = scenario.doubling_transfer * c2.intensity
        new_c2 = DecayComponent(rate=c2.rate, intensity=c2.intensity - moved)
        return replace(
            base,
            components=(c0, c1, new_c2),
            prompt_fraction=base.prompt_fraction + moved,
        )
    # nonresonance_lambda
    new_c2 = DecayComponent(
        rate=c2.rate * (1.0 + scenario.lambda_shift), intensity=c2.intensity
    )
    return replace(base, components=(c0, c1, new_c2))


def window_acceptance(cfg: SpectrometerConfig) -> float:
    """Probability that a flat stop deposit falls inside the stop window."""
    dep_low, dep_high = cfg.stop_deposit_range
    low, high = cfg.stop_window
    overlap = max(0.0, min(high, dep_high) - max(low, dep_low))
    return overlap / (dep_high - dep_low)


def _stop_accepts(cfg: SpectrometerConfig, deposit: float) -> bool:
    low, high = cfg.stop_window
    return low <= deposit <= high


def sample_event(
    cfg: SpectrometerConfig,
    model: SpectrumModel,
    rng: np.random.Generator,
    t0: float | None = None,
) -> EventRecord:
    """Draw one true-coincidence event through the detection chain.

    The channel is chosen by intensity weights, the emission delay is
    exponential with the channel rate (zero for the prompt transfer),
    the measured delay adds Gaussian timing jitter around t0, and the
    stop deposit is a flat draw over the configured Compton range,
    accepted only inside the stop window.
    """
    if not model.is_normalized():
        raise DomainError("model intensities + prompt must sum to 1")
    if t0 is None:
        t0 = model.irf.t0
    weights = [c.intensity for c in model.components] + [model.prompt_fraction]
    labels = ["pPs", "free_positron", "oPs"][: len(model.components)] + [
        "prompt_transfer"
    ]
    idx = rng.choice(len(weights), p=weights)
    if labels[idx] == "prompt_transfer":
        emission = 0.0
    else:
        lam_ns = model.components[idx].rate * 1.0e-3
        emission = rng.exponential(1.0 / lam_ns)
    sigma = cfg.timing_fwhm * FWHM_TO_SIGMA
    measured = t0 + emission + rng.normal(0.0, sigma)
    dep_low, dep_high = cfg.stop_deposit_range
    deposit = rng.uniform(dep_low, dep_high)
    return EventRecord(
        true_channel=labels[idx],
        emission_delay=emission,
        measured_delay=measured,
        stop_energy_deposit=deposit,
        accepted=_stop_accepts(cfg, deposit),
    )


def _replica_counts(n_total: int, n_streams: int) -> list[int]:
    base, extra = divmod(int(n_total), n_streams)
    return [base + (1 if r < extra else 0) for r in range(n_streams)]


def _simulate_replica(cfg, model, seed, stream_id, n_events, live_time):
    """Generate one replica's accepted counts; returns (counts, tallies)."""
    rng = RngSeed(seed, stream_id).generator()
    n_channels = cfg.n_channels
    width = cfg.channel_width
    span = cfg.time_span
    sigma = cfg.timing_fwhm * FWHM_TO_SIGMA
    t0 = model.irf.t0
    dep_low, dep_high = cfg.stop_deposit_range
    win_low, win_high = cfg.stop_window
    intensities = np.array(
        [c.intensity for c in model.components] + [model.prompt_fraction]
    )
    intensities = intensities / intensities.sum()
    scales = np.array(
        [1.0e3 / c.rate for c in model.components] + [0.0]
    )  # mean delay in ns; 0 for the prompt channel
    counts = np.zeros(n_channels, dtype=np.int64)
    accepted_true = 0
    remaining = int(n_events)
    while remaining > 0:
        batch = min(remaining, _BATCH_EVENTS)
        remaining -= batch
        n_cat = rng.multinomial(batch, intensities)
        for cat, n_i in enumerate(n_cat):
            if n_i == 0:
                continue
            if scales[cat] > 0.0:
                emission = rng.exponential(scales[cat], n_i)
            else:
                emission = np.zeros(n_i)
            measured = t0 + emission + rng.normal(0.0, sigma, n_i)
            deposit = rng.uniform(dep_low, dep_high, n_i)
            keep = (deposit >= win_low) & (deposit <= win_high)
            accepted_true += int(np.count_nonzero(keep))
            measured = measured[keep]
            in_range = (measured >= 0.0) & (measured < span)
            channel = (measured[in_range] / width).astype(np.int64)
            channel = np.minimum(channel, n_channels - 1)
            counts += np.bincount(channel, minlength=n_channels)
    n_accidentals = int(rng.poisson(cfg.accidental_rate * live_time))
    done = 0
    while done < n_accidentals:
        batch = min(n_accidentals - done, _BATCH_EVENTS)
        done += batch
        times = rng.uniform(0.0, span, batch)
        channel = np.minimum((times / width).astype(np.int64), n_channels - 1)
        counts += np.bincount(channel, minlength=n_channels)
    return counts, accepted_true, n_accidentals


def simulate_spectrum(
    cfg: SpectrometerConfig,
    scenario: AnomalyScenario,
    base: SpectrumModel,
    seed: int,
    n_events: int | None = None,
    n_streams: int = 8,
    threads: int = 1,
    stream_base: int = 0,
) -> Histogram:
    """Simulate one lifetime spectrum; deterministic per (inputs, seed).

    ``n_events`` true coincidences (default source_activity * live_time)
    are split over ``n_streams`` independent replicas; accidentals are
    Poisson with the configured residual rate, uniform in time.
    ``threads`` only parallelizes replica execution and never changes
    the result.  Replica r draws from stream ``stream_base + r``, so
    callers running many statistically independent spectra under one
    seed hand each run its own stream range.
    """
    observed = apply_scenario(base, scenario)
    t0 = observed.irf.t0
    if not (0.0 <= t0 < cfg.time_span):
        raise DomainError(
            f"channel range [0, {cfg.time_span}) ns does not cover t0 = {t0} ns"
        )
    if n_events is None:
        n_events = int(round(cfg.source_activity * cfg.live_time))
    if n_events < 0:
        raise DomainError("n_events must be >= 0")
    if n_streams < 1:
        raise DomainError("n_streams must be >= 1")
    shares = _replica_counts(n_events, n_streams)
    live_share = cfg.live_time / n_streams

    def run(replica):
        return _simulate_replica(
            cfg, observed, seed, stream_base + replica, shares[replica], live_share
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(n_streams)))
    else:
        results = [run(r) for r in range(n_streams)]
    counts = np.zeros(cfg.n_channels, dtype=np.int64)
    accepted = 0
    accidentals = 0
    for replica_counts, replica_accepted, replica_acc in results:
        counts += replica_counts
        accepted += replica_accepted
        accidentals += replica_acc
    metadata = {
        "seed": str(int(seed)),
        "n_streams": str(n_streams),
        "stream_base": str(stream_base),
        "n_events": str(n_events),
        "accepted_events": str(accepted),
        "accidental_events": str(accidentals),
        "scenario.mode": scenario.mode,
        "scenario.field_orientation": scenario.field_orientation,
        "scenario.doubling_transfer": repr(scenario.doubling_transfer),
        "scenario.lambda_shift": repr(scenario.lambda_shift),
        "model.rates_per_us": " ".join(repr(c.rate) for c in observed.components),
        "model.intensities": " ".join(
            repr(c.intensity) for c in observed.components
        ),
        "model.prompt_fraction": repr(observed.prompt_fraction),
        "model.t0_ns": repr(t0),
        "model.fwhm_ns": repr(observed.irf.fwhm),
        "spectrometer.start_energy_mev": repr(cfg.start_energy),
        "spectrometer.stop_window_mev": f"{cfg.stop_window[0]!r} {cfg.stop_window[1]!r}",
        "spectrometer.stop_deposit_range_mev": (
            f"{cfg.stop_deposit_range[0]!r} {cfg.stop_deposit_range[1]!r}"
        ),
        "spectrometer.timing_fwhm_ns": repr(cfg.timing_fwhm),
        "spectrometer.slow_resolving_time_us": repr(cfg.slow_resolving_time),
        "spectrometer.accidental_rate_per_s": repr(cfg.accidental_rate),
        "spectrometer.source_activity_per_s": repr(cfg.source_activity),
    }
    return Histogram(
        channel_width=cfg.channel_width,
        counts=counts,
        live_time=cfg.live_time,
        metadata=metadata,
    )


def merge_histograms(histograms) -> Histogram:
    """Sum histograms with identical geometry; associative and commutative.

    Counts and live times add.  Metadata keys that agree across inputs
    are kept; seeds are merged into a sorted comma-joined list so the
    result is independent of argument order.
    """
    histograms = list(histograms)
    if not histograms:
        raise DomainError("merge needs at least one histogram")
    first = histograms[0]
    for h in histograms[1:]:
        if h.n_channels != first.n_channels or h.channel_width != first.channel_width:
            raise DomainError(
                "geometry mismatch: "
                f"({h.n_channels}, {h.channel_width}) vs "
                f"({first.n_channels}, {first.channel_width})"
            )
    counts = np.zeros(first.n_channels, dtype=np.int64)
    live_time = 0.0
    for h in histograms:
        counts += h.counts
        live_time += h.live_time
    seeds = sorted(
        {s for h in histograms for s in h.metadata.get("seed", "").split(",") if s}
    )
    metadata = dict(first.metadata)
    for h in histograms[1:]:
        metadata = {
            k: v for k, v in metadata.items() if h.metadata.get(k) == v
        }
    metadata["seed"] = ",".join(seeds) if seeds else "0"
    metadata["merged_from"] = str(len(histograms))
    return Histogram(
        channel_width=first.channel_width,
        counts=counts,
        live_time=live_time,
        metadata=metadata,
    )
