"""Shared plain-text configuration for all commands.

INI-style sections with '=' assignments and '#' comments:

[spectrometer]  instrument settings (field names of SpectrometerConfig)
[model]         spectral model: rates, intensities, prompt_fraction,
                t0, fwhm (defaults to the timing FWHM), plus optional
                background_per_channel and total_events
[scenario]      mode, field_orientation, doubling_transfer,
                lambda_shift, comparative_factor
[run]           n_events, n_streams, seed
[constants]     overrides for the physical-constant set
[fitspec]       free parameter list, remainder, rate_unit, init_*/
                lower_*/upper_* overrides, iteration controls
[experiment]    protocol, significance, lambda_null
[power]         protocol, grid, replicas, significance

Unknown sections or keys are rejected: a typo must fail loudly rather
than silently fall back to a default.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass

from .constants import PhysicalConstants
from .fitting import FitSpec, ParamSetting, param_names
from .model import (
    DecayComponent,
    DomainError,
    InstrumentResponse,
    SpectrumModel,
)
from .simulate import AnomalyScenario, SpectrometerConfig

__all__ = ["ConfigError", "RunSettings", "Config", "load_config"]


class ConfigError(ValueError):
    """Raised for unreadable, unknown, or ill-typed configuration."""


_SECTION_KEYS = {
    "spectrometer": {
        "start_energy",
        "stop_window",
        "timing_fwhm",
        "slow_resolving_time",
        "accidental_rate",
        "channel_width",
        "n_channels",
        "live_time",
        "source_activity",
        "stop_deposit_range",
    },
    "model": {
        "rates",
        "intensities",
        "prompt_fraction",
        "t0",
        "fwhm",
        "background_per_channel",
        "total_events",
    },
    "scenario": {
        "mode",
        "field_orientation",
        "doubling_transfer",
        "lambda_shift",
        "comparative_factor",
    },
    "run": {"n_events", "n_streams", "seed"},
    "constants": {"alpha", "m_p", "m_e", "hbar", "c", "G"},
    "fitspec": {
        "free",
        "remainder",
        "rate_unit",
        "max_iterations",
        "deviance_tol",
        "gradient_tol",
    },
    "experiment": {"protocol", "significance", "lambda_null"},
    "power": {"protocol", "grid", "replicas", "significance"},
}

# [fitspec] also accepts per-parameter init_/lower_/upper_ keys.
_FITSPEC_PREFIXES = ("init_", "lower_", "upper_")


@dataclass
class RunSettings:
    """Event budget and stream layout of one simulation run."""

    n_events: int | None = None
    n_streams: int = 8
    seed: int = 1


class _Section:
    def __init__(self, name, raw):
        self.name = name
        self.raw = dict(raw)

    def _get(self, key):
        return self.raw.get(key)

    def require(self, key):
        if key not in self.raw:
            raise ConfigError(f"[{self.name}] is missing required key '{key}'")
        return self.raw[key]

    def floats(self, key, count=None, default=None):
        text = self._get(key)
        if text is None:
            return default
        try:
            values = [float(v) for v in text.replace(",", " ").split()]
        except ValueError as exc:
            raise ConfigError(f"[{self.name}] {key}: expected numbers, got {text!r}") from exc
        if count is not None and len(values) != count:
            raise ConfigError(
                f"[{self.name}] {key}: expected {count} values, got {len(values)}"
            )
        return values

    def float(self, key, default=None):
        text = self._get(key)
        if text is None:
            return default
        try:
            return float(text)
        except ValueError as exc:
            raise ConfigError(f"[{self.name}] {key}: expected a number, got {text!r}") from exc

    def int(self, key, default=None):
        text = self._get(key)
        if text is None:
            return default
        try:
            return int(text)
        except ValueError as exc:
            raise ConfigError(f"[{self.name}] {key}: expected an integer, got {text!r}") from exc

    def str(self, key, default=None):
        text = self._get(key)
        return default if text is None else text.strip()


class Config:
    """Validated configuration; sections are materialized on demand."""

    def __init__(self, sections: dict, path: str):
        self._sections = sections
        self.path = path

    def has(self, name: str) -> bool:
        return name in self._sections

    def _section(self, name: str) -> _Section:
        if name not in self._sections:
            raise ConfigError(f"{self.path}: missing [{name}] section")
        return self._sections[name]

    def spectrometer(self) -> SpectrometerConfig:
        s = self._section("spectrometer")
        kwargs = {}
        if "stop_window" in s.raw:
            kwargs["stop_window"] = tuple(s.floats("stop_window", 2))
        if "stop_deposit_range" in s.raw:
            kwargs["stop_deposit_range"] = tuple(s.floats("stop_deposit_range", 2))
        for key in (
            "start_energy",
            "timing_fwhm",
            "slow_resolving_time",
            "accidental_rate",
            "channel_width",
            "live_time",
            "source_activity",
        ):
            value = s.float(key)
            if value is not None:
                kwargs[key] = value
        n_channels = s.int("n_channels")
        if n_channels is not None:
            kwargs["n_channels"] = n_channels
        try:
            return SpectrometerConfig(**kwargs)
        except DomainError as exc:
            raise ConfigError(f"[spectrometer]: {exc}") from exc

    def model(self, default_fwhm: float | None = None) -> SpectrumModel:
        s = self._section("model")
        rates = s.floats("rates")
        if rates is None:
            raise ConfigError("[model] is missing required key 'rates'")
        intensities = s.floats("intensities")
        if intensities is None:
            raise ConfigError("[model] is missing required key 'intensities'")
        if len(rates) != len(intensities):
            raise ConfigError("[model] rates and intensities must have equal length")
        fwhm = s.float("fwhm", default_fwhm)
        if fwhm is None:
            raise ConfigError(
                "[model] needs 'fwhm' when no [spectrometer] timing width applies"
            )
        try:
            components = tuple(
                DecayComponent(rate=r, intensity=i)
                for r, i in zip(rates, intensities)
            )
            return SpectrumModel(
                components=components,
                irf=InstrumentResponse(fwhm=fwhm, t0=s.float("t0", 50.0)),
                prompt_fraction=s.float("prompt_fraction", 0.0),
                background_per_channel=s.float("background_per_channel", 0.0),
                total_events=s.float("total_events", 0.0),
            )
        except DomainError as exc:
            raise ConfigError(f"[model]: {exc}") from exc

    def scenario(self) -> AnomalyScenario:
        s = self._section("scenario")
        mode = s.str("mode")
        if mode is None:
            raise ConfigError("[scenario] is missing required key 'mode'")
        orientation = s.str("field_orientation")
        if orientation is None:
            raise ConfigError("[scenario] is missing required key 'field_orientation'")
        kwargs = {"mode": mode, "field_orientation": orientation}
        value = s.float("doubling_transfer")
        if value is not None:
            kwargs["doubling_transfer"] = value
        value = s.float("lambda_shift")
        if value is not None:
            kwargs["lambda_shift"] = value
        if "comparative_factor" in s.raw:
            kwargs["comparative_factor"] = tuple(s.floats("comparative_factor", 2))
        try:
            return AnomalyScenario(**kwargs)
        except DomainError as exc:
            raise ConfigError(f"[scenario]: {exc}") from exc

    def run(self) -> RunSettings:
        if not self.has("run"):
            return RunSettings()
        s = self._section("run")
        settings = RunSettings(
            n_events=s.int("n_events"),
            n_streams=s.int("n_streams", 8),
            seed=s.int("seed", 1),
        )
        if settings.n_streams < 1:
            raise ConfigError("[run] n_streams must be >= 1")
        if settings.n_events is not None and settings.n_events < 0:
            raise ConfigError("[run] n_events must be >= 0")
        return settings

    def constants(self) -> PhysicalConstants:
        if not self.has("constants"):
            return PhysicalConstants()
        s = self._section("constants")
        kwargs = {}
        for key in _SECTION_KEYS["constants"]:
            value = s.float(key)
            if value is not None:
                kwargs[key] = value
        try:
            return PhysicalConstants(**kwargs)
        except DomainError as exc:
            raise ConfigError(f"[constants]: {exc}") from exc

    def fitspec(self, defaults: dict, n_components: int = 3) -> FitSpec:
        """Materialize the [fitspec] section on top of default values.

        ``defaults`` maps every parameter name to its starting value
        (typically the model recorded in a histogram's metadata);
        init_<name> keys override, free/remainder/bounds come from the
        section.
        """
        s = self._section("fitspec")
        free_text = s.str("free")
        if free_text is None:
            raise ConfigError("[fitspec] is missing required key 'free'")
        free = set(free_text.replace(",", " ").split())
        names = param_names(n_components)
        unknown = free - set(names)
        if unknown:
            raise ConfigError(f"[fitspec] unknown free parameters: {', '.join(sorted(unknown))}")
        params = {}
        for name in names:
            value = s.float(f"init_{name}", defaults.get(name))
            if value is None:
                raise ConfigError(f"[fitspec] has no value for parameter '{name}'")
            lower = s.float(f"lower_{name}", -float("inf"))
            upper = s.float(f"upper_{name}", float("inf"))
            params[name] = ParamSetting(
                value=value, free=name in free, lower=lower, upper=upper
            )
        remainder = s.str("remainder", "none")
        try:
            return FitSpec(
                params=params,
                n_components=n_components,
                remainder=None if remainder == "none" else remainder,
                rate_unit=s.str("rate_unit", "per_us"),
                max_iterations=s.int("max_iterations", 200),
                deviance_tol=s.float("deviance_tol", 1e-9),
                gradient_tol=s.float("gradient_tol", 1e-6),
            )
        except DomainError as exc:
            raise ConfigError(f"[fitspec]: {exc}") from exc

    def experiment(self) -> dict:
        s = self._section("experiment")
        protocol = s.str("protocol")
        if protocol is None:
            raise ConfigError("[experiment] is missing required key 'protocol'")
        if protocol not in ("doubling", "rate_shift"):
            raise ConfigError(f"[experiment] unknown protocol {protocol!r}")
        return {
            "protocol": protocol,
            "significance": s.float("significance", 0.05),
            "lambda_null": s.float("lambda_null"),
        }

    def power(self) -> dict:
        s = self._section("power")
        protocol = s.str("protocol")
        if protocol is None:
            raise ConfigError("[power] is missing required key 'protocol'")
        if protocol not in ("doubling", "rate_shift"):
            raise ConfigError(f"[power] unknown protocol {protocol!r}")
        grid = s.floats("grid")
        if grid is None:
            raise ConfigError("[power] is missing required key 'grid'")
        replicas = s.int("replicas")
        if replicas is None:
            raise ConfigError("[power] is missing required key 'replicas'")
        return {
            "protocol": protocol,
            "grid": [int(n) for n in grid],
            "replicas": replicas,
            "significance": s.float("significance", 0.05),
        }


def load_config(path) -> Config:
    """Parse and validate a configuration file."""
    parser = configparser.ConfigParser(
        delimiters=("=",), comment_prefixes=("#",), interpolation=None
    )
    parser.optionxform = str  # keep key case: [constants] G vs g matters
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError:
        raise
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    sections = {}
    for name in parser.sections():
        if name not in _SECTION_KEYS:
            raise ConfigError(f"{path}: unknown section [{name}]")
        allowed = _SECTION_KEYS[name]
        raw = dict(parser.items(name))
        for key in raw:
            if key in allowed:
                continue
            if name == "fitspec" and any(
                key.startswith(p) and key[len(p):] for p in _FITSPEC_PREFIXES
            ):
                continue
            raise ConfigError(f"{path}: unknown key '{key}' in [{name}]")
        sections[name] = _Section(name, raw)
    return Config(sections, str(path))
