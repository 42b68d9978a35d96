"""Poisson maximum-likelihood fitting of lifetime histograms.

The estimator minimizes the Poisson deviance (-2 log L up to a
data-only constant) with a damped Gauss-Newton iteration: steps solve
(H + damp * diag H) dz = -g where H is the Fisher-scoring approximation
of the deviance Hessian, and a step is only accepted when the deviance
decreases, which makes the iteration monotone by construction.

Parameters are the natural spectrum quantities (rates, intensity
fractions, prompt fraction, t0, FWHM, flat background, total events).
Internally every positive parameter is optimized as its logarithm, and
one intensity-like parameter may be designated the "remainder" so the
true-event fractions stay on the simplex (sum with prompt <= 1, equal
to 1 when the remainder is used) without constrained steps.  Steps that
would leave the feasible region evaluate to infinite deviance and are
rejected by the damping loop.

The model Jacobian is analytic (closed forms of the per-channel mass
derivatives); gradient_check compares it against central finite
differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .model import (
    FWHM_TO_SIGMA,
    RATE_US_TO_NS,
    ChannelGrid,
    DecayComponent,
    DomainError,
    Histogram,
    InstrumentResponse,
    SpectrumModel,
    emg_density,
    emg_survival,
    emg_survival_dlam,
    emg_survival_dsigma,
    gaussian_mass,
    _gauss_kernel,
)

__all__ = [
    "ParamSetting",
    "FitSpec",
    "FitResult",
    "JointFitResult",
    "BackgroundEstimate",
    "GradientCheck",
    "fit_mle",
    "fit_joint",
    "gradient_check",
    "estimate_background",
    "param_names",
    "model_from_estimates",
]

RATE_UNITS = ("per_us", "per_ns")

_SCALAR_PARAMS = ("prompt_fraction", "t0", "fwhm", "background", "total_events")


def param_names(n_components: int = 3) -> tuple[str, ...]:
    """Full parameter name set for an n-component model."""
    rates = tuple(f"rate{i}" for i in range(n_components))
    intensities = tuple(f"intensity{i}" for i in range(n_components))
    return rates + intensities + _SCALAR_PARAMS


def _fraction_names(n_components: int) -> tuple[str, ...]:
    return tuple(f"intensity{i}" for i in range(n_components)) + ("prompt_fraction",)


@dataclass(frozen=True)
class ParamSetting:
    """One parameter: starting value, free flag, and box bounds."""

    value: float
    free: bool = False
    lower: float = -math.inf
    upper: float = math.inf


@dataclass
class FitSpec:
    """Which parameters move, where they start, and how the fit stops.

    ``remainder`` names an intensity-like parameter that is derived as
    one minus the other fractions instead of being optimized; use it
    whenever two or more fractions would otherwise trade off against a
    fixed total_events.  ``rate_unit`` selects the unit in which rate
    values, bounds and estimates are expressed.
    """

    params: dict[str, ParamSetting]
    n_components: int = 3
    remainder: str | None = None
    rate_unit: str = "per_us"
    max_iterations: int = 200
    deviance_tol: float = 1e-9
    gradient_tol: float = 1e-6

    def __post_init__(self):
        names = param_names(self.n_components)
        missing = [n for n in names if n not in self.params]
        if missing:
            raise DomainError(f"fit spec missing parameters: {', '.join(missing)}")
        unknown = [n for n in self.params if n not in names]
        if unknown:
            raise DomainError(f"unknown fit parameters: {', '.join(unknown)}")
        if self.rate_unit not in RATE_UNITS:
            raise DomainError(f"rate_unit must be one of {RATE_UNITS}")
        if self.remainder is not None:
            if self.remainder not in _fraction_names(self.n_components):
                raise DomainError(
                    f"remainder must be an intensity or prompt_fraction, "
                    f"got {self.remainder!r}"
                )
            if self.params[self.remainder].free:
                raise DomainError("the remainder parameter cannot also be free")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be >= 1")
        for name, s in self.params.items():
            if not s.lower <= s.value <= s.upper:
                raise DomainError(
                    f"initial value of {name} ({s.value}) outside bounds "
                    f"[{s.lower}, {s.upper}]"
                )
            if s.lower > s.upper:
                raise DomainError(f"inconsistent bounds for {name}")

    @property
    def free_names(self) -> tuple[str, ...]:
        return tuple(n for n in param_names(self.n_components) if self.params[n].free)

    @classmethod
    def from_model(
        cls,
        model: SpectrumModel,
        free=(),
        remainder=None,
        overrides=None,
        **kwargs,
    ) -> "FitSpec":
        """Build a spec with starting values taken from a spectrum model."""
        values = {}
        for i, c in enumerate(model.components):
            values[f"rate{i}"] = c.rate
            values[f"intensity{i}"] = c.intensity
        values["prompt_fraction"] = model.prompt_fraction
        values["t0"] = model.irf.t0
        values["fwhm"] = model.irf.fwhm
        values["background"] = model.background_per_channel
        values["total_events"] = model.total_events
        if overrides:
            values.update(overrides)
        free = set(free)
        params = {
            name: ParamSetting(value=values[name], free=name in free)
            for name in param_names(len(model.components))
        }
        return cls(
            params=params,
            n_components=len(model.components),
            remainder=remainder,
            **kwargs,
        )


@dataclass
class FitResult:
    """Estimates with uncertainties and convergence diagnostics.

    ``estimates`` covers every parameter (fixed ones at their inputs,
    the remainder at its derived value); ``errors`` and ``covariance``
    cover the free parameters in ``free_names`` order.  A fit that stops
    without meeting the convergence criteria comes back with
    ``converged`` False rather than raising.
    """

    estimates: dict
    errors: dict
    free_names: tuple
    covariance: np.ndarray | None
    deviance: float
    degrees_of_freedom: int
    converged: bool
    n_iterations: int
    gradient_norm: float
    singular: bool = False
    message: str = ""
    deviance_trace: tuple = ()


@dataclass
class JointFitResult:
    """Simultaneous fit of several histograms with shared parameters."""

    blocks: tuple[FitResult, ...]
    shared: tuple[str, ...]
    deviance: float
    converged: bool
    n_iterations: int
    singular: bool = False
    message: str = ""


@dataclass(frozen=True)
class BackgroundEstimate:
    """Mean accidental floor from a pre-t0 window, with standard error."""

    mean: float
    stderr: float
    n_channels: int
    degenerate: bool


# ---------------------------------------------------------------------------
# Parameter bookkeeping
# ---------------------------------------------------------------------------


def _rate_scale(rate_unit: str) -> float:
    """Multiplier turning spec-unit rates into internal 1/us."""
    return 1.0 if rate_unit == "per_us" else 1000.0


def _internal_settings(spec: FitSpec) -> dict:
    """Spec parameters with rates converted to internal 1/us units."""
    scale = _rate_scale(spec.rate_unit)
    out = {}
    for name, s in spec.params.items():
        if name.startswith("rate"):
            out[name] = ParamSetting(
                value=s.value * scale,
                free=s.free,
                lower=s.lower * scale,
                upper=s.upper * scale,
            )
        else:
            out[name] = s
    return out


def _is_log_param(name: str) -> bool:
    return name != "t0"


@dataclass
class _Column:
    """One optimized coordinate: which block parameters it drives."""

    name: str
    log: bool
    lower: float
    upper: float
    targets: list = field(default_factory=list)  # (block index, param name)


@dataclass
class _Block:
    counts: np.ndarray
    grid: ChannelGrid
    settings: dict
    remainder: str | None
    n_components: int


class _Problem:
    """Concatenated histograms + shared parameter columns."""

    def __init__(self, blocks, columns):
        self.blocks = blocks
        self.columns = columns
        self.counts = np.concatenate([b.counts for b in blocks])
        self.offsets = np.cumsum([0] + [b.counts.size for b in blocks])

    def x0(self) -> np.ndarray:
        x = np.empty(len(self.columns))
        for j, col in enumerate(self.columns):
            block_idx, name = col.targets[0]
            x[j] = self.blocks[block_idx].settings[name].value
        return x

    def theta(self, block_idx: int, x: np.ndarray):
        """Natural parameter dict for one block, or None if infeasible."""
        block = self.blocks[block_idx]
        theta = {name: s.value for name, s in block.settings.items()}
        for j, col in enumerate(self.columns):
            for bi, name in col.targets:
                if bi == block_idx:
                    theta[name] = x[j]
        fractions = _fraction_names(block.n_components)
        if block.remainder is not None:
            others = sum(theta[f] for f in fractions if f != block.remainder)
            rem = 1.0 - others
            if rem < 0.0:
                return None
            theta[block.remainder] = rem
        if sum(theta[f] for f in fractions) > 1.0 + 1e-9:
            return None
        if any(theta[f] < 0.0 for f in fractions):
            return None
        return theta

    def feasible(self, x: np.ndarray) -> bool:
        for j, col in enumerate(self.columns):
            if not (col.lower <= x[j] <= col.upper):
                return False
        return all(self.theta(bi, x) is not None for bi in range(len(self.blocks)))


def _build_columns(blocks, shared):
    """Create optimization columns; shared names bind across all blocks."""
    columns = []
    seen_shared = {}
    for bi, block in enumerate(blocks):
        for name in param_names(block.n_components):
            s = block.settings[name]
            if not s.free:
                continue
            if name in shared:
                if name in seen_shared:
                    seen_shared[name].targets.append((bi, name))
                    continue
            col = _Column(
                name=name if name not in shared or len(blocks) == 1 else f"{name}(shared)",
                log=_is_log_param(name),
                lower=s.lower,
                upper=s.upper,
            )
            col.targets.append((bi, name))
            if name in shared:
                seen_shared[name] = col
            columns.append(col)
    for col in columns:
        if col.log:
            block_idx, name = col.targets[0]
            if blocks[block_idx].settings[name].value <= 0.0:
                raise DomainError(
                    f"free parameter {name} needs a positive starting value"
                )
    return columns


# ---------------------------------------------------------------------------
# Model evaluation with analytic partial derivatives
# ---------------------------------------------------------------------------


def _theta_model(theta, n_components) -> SpectrumModel:
    components = tuple(
        DecayComponent(rate=theta[f"rate{i}"], intensity=theta[f"intensity{i}"])
        for i in range(n_components)
    )
    return SpectrumModel(
        components=components,
        irf=InstrumentResponse(fwhm=theta["fwhm"], t0=theta["t0"]),
        prompt_fraction=theta["prompt_fraction"],
        background_per_channel=theta["background"],
        total_events=theta["total_events"],
    )


def _expected_and_partials(theta, grid: ChannelGrid, wanted, n_components):
    """Per-channel expectation and d(mu)/d(param) for the wanted names.

    Everything is expressed through channel-edge values of the EMG
    survival function and its closed-form lambda/sigma derivatives, so
    the Jacobian costs about as much as one extra model evaluation.
    """
    edges = grid.edges() - theta["t0"]
    sigma = theta["fwhm"] * FWHM_TO_SIGMA
    amp = theta["total_events"]
    prompt = theta["prompt_fraction"]
    if sigma == 0.0 and any(n in wanted for n in ("t0", "fwhm")):
        raise DomainError("t0/fwhm derivatives need a non-degenerate response")
    per_event = np.zeros(grid.n_channels)
    partials = {}
    dmu_dt0 = np.zeros(grid.n_channels) if "t0" in wanted else None
    dmu_dsigma = np.zeros(grid.n_channels) if "fwhm" in wanted else None
    for i in range(n_components):
        lam = theta[f"rate{i}"] * RATE_US_TO_NS
        intensity = theta[f"intensity{i}"]
        sf = emg_survival(edges, lam, sigma)
        mass = sf[:-1] - sf[1:]
        per_event += intensity * mass
        if f"intensity{i}" in wanted:
            partials[f"intensity{i}"] = amp * mass
        if f"rate{i}" in wanted:
            dsf = emg_survival_dlam(edges, lam, sigma)
            partials[f"rate{i}"] = (
                amp * intensity * (dsf[:-1] - dsf[1:]) * RATE_US_TO_NS
            )
        if dmu_dt0 is not None:
            dens = emg_density(edges, lam, sigma)
            dmu_dt0 += intensity * (dens[:-1] - dens[1:])
        if dmu_dsigma is not None:
            dsf = emg_survival_dsigma(edges, lam, sigma)
            dmu_dsigma += intensity * (dsf[:-1] - dsf[1:])
    gmass = None
    if prompt > 0.0 or "prompt_fraction" in wanted:
        gmass = gaussian_mass(edges[:-1], edges[1:], sigma)
        per_event += prompt * gmass
        if "prompt_fraction" in wanted:
            partials["prompt_fraction"] = amp * gmass
    if dmu_dt0 is not None:
        if prompt > 0.0:
            pdf = _gauss_kernel(edges, sigma) / sigma
            dmu_dt0 += prompt * (pdf[:-1] - pdf[1:])
        partials["t0"] = amp * dmu_dt0
    if dmu_dsigma is not None:
        if prompt > 0.0:
            kern = _gauss_kernel(edges, sigma)
            dg = (edges[:-1] * kern[:-1] - edges[1:] * kern[1:]) / (sigma * sigma)
            dmu_dsigma += prompt * dg
        partials["fwhm"] = amp * dmu_dsigma * FWHM_TO_SIGMA
    mu = amp * per_event + theta["background"]
    if "background" in wanted:
        partials["background"] = np.ones(grid.n_channels)
    if "total_events" in wanted:
        partials["total_events"] = per_event
    return mu, partials


def _problem_eval(problem: _Problem, x, need_jac):
    """Concatenated expectations and (optionally) the natural Jacobian."""
    n_rows = problem.counts.size
    mu = np.empty(n_rows)
    jac = np.zeros((n_rows, len(problem.columns))) if need_jac else None
    col_index = {}
    for j, col in enumerate(problem.columns):
        for target in col.targets:
            col_index.setdefault(target[0], []).append((j, target[1]))
    for bi, block in enumerate(problem.blocks):
        theta = problem.theta(bi, x)
        if theta is None:
            return None, None
        wanted = set()
        remainder_cols = []
        if need_jac:
            for j, name in col_index.get(bi, []):
                wanted.add(name)
                if block.remainder is not None and name in _fraction_names(
                    block.n_components
                ):
                    remainder_cols.append(j)
            if remainder_cols:
                wanted.add(block.remainder)
        lo, hi = problem.offsets[bi], problem.offsets[bi + 1]
        block_mu, partials = _expected_and_partials(
            theta, block.grid, wanted, block.n_components
        )
        mu[lo:hi] = block_mu
        if need_jac:
            for j, name in col_index.get(bi, []):
                jac[lo:hi, j] += partials[name]
            for j in remainder_cols:
                jac[lo:hi, j] -= partials[block.remainder]
    return mu, jac


# ---------------------------------------------------------------------------
# Deviance and the damped Gauss-Newton loop
# ---------------------------------------------------------------------------


def poisson_deviance(counts, mu) -> float:
    """2 sum(mu - y + y log(y/mu)); +inf when mu is 0 under observed counts."""
    counts = np.asarray(counts, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if np.any(mu < 0.0) or not np.all(np.isfinite(mu)):
        return math.inf
    if np.any((mu == 0.0) & (counts > 0.0)):
        return math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        logterm = np.where(counts > 0.0, counts * np.log(counts / np.maximum(mu, 1e-300)), 0.0)
    return float(2.0 * np.sum(mu - counts + logterm))


def _to_internal(x, columns):
    z = np.array(x, dtype=float)
    for j, col in enumerate(columns):
        if col.log:
            z[j] = math.log(z[j])
    return z


def _from_internal(z, columns):
    x = np.array(z, dtype=float)
    for j, col in enumerate(columns):
        if col.log:
            x[j] = math.exp(x[j])
    return x


def _solve_problem(problem: _Problem, max_iterations, deviance_tol, gradient_tol):
    """Damped Gauss-Newton on the internal (log) coordinates."""
    y = problem.counts
    x = problem.x0()
    if not problem.feasible(x):
        raise DomainError("starting point violates the intensity simplex or bounds")
    z = _to_internal(x, problem.columns)
    mu, jac = _problem_eval(problem, x, need_jac=True)
    deviance = poisson_deviance(y, mu)
    if not math.isfinite(deviance):
        raise DomainError("starting point has zero expectation under observed counts")
    damp = 1e-3
    n_iter = 0
    converged = False
    message = "max_iterations reached"
    trace = [deviance]
    scale = np.array([x[j] if col.log else 1.0 for j, col in enumerate(problem.columns)])
    grad_norm = math.inf
    while n_iter < max_iterations:
        n_iter += 1
        safe_mu = np.maximum(mu, 1e-12)
        residual = 1.0 - y / safe_mu
        jac_z = jac * scale  # d mu / d z for log columns
        grad = 2.0 * (jac_z.T @ residual)
        grad_norm = float(np.max(np.abs(grad)))
        hess = 2.0 * (jac_z.T * (1.0 / safe_mu)) @ jac_z
        accepted = False
        while damp < 1e14:
            lhs = hess + damp * np.diag(np.maximum(np.diag(hess), 1e-300))
            try:
                step = np.linalg.solve(lhs, -grad)
            except np.linalg.LinAlgError:
                damp *= 10.0
                continue
            z_new = z + step
            x_new = _from_internal(z_new, problem.columns)
            if problem.feasible(x_new):
                mu_new, _ = _problem_eval(problem, x_new, need_jac=False)
                dev_new = poisson_deviance(y, mu_new)
            else:
                dev_new = math.inf
            if dev_new < deviance:
                rel_drop = (deviance - dev_new) / max(abs(dev_new), 1.0)
                z, x = z_new, x_new
                deviance = dev_new
                trace.append(deviance)
                mu, jac = _problem_eval(problem, x, need_jac=True)
                damp = max(damp / 3.0, 1e-12)
                accepted = True
                if rel_drop < deviance_tol:
                    converged = True
                break
            damp *= 4.0
        if not accepted:
            # no downhill step left at any damping: at a stationary point
            converged = True
        if converged:
            safe_mu = np.maximum(mu, 1e-12)
            jac_z = jac * np.array(
                [x[j] if col.log else 1.0 for j, col in enumerate(problem.columns)]
            )
            grad = 2.0 * (jac_z.T @ (1.0 - y / safe_mu))
            grad_norm = float(np.max(np.abs(grad)))
            if grad_norm > gradient_tol * max(1.0, abs(deviance)):
                converged = False
                message = "stalled above gradient tolerance"
            else:
                message = "converged"
            break
        scale = np.array(
            [x[j] if col.log else 1.0 for j, col in enumerate(problem.columns)]
        )
    # Fisher information in natural coordinates at the final point
    mu, jac = _problem_eval(problem, x, need_jac=True)
    safe_mu = np.maximum(mu, 1e-12)
    info = (jac.T * (1.0 / safe_mu)) @ jac
    singular = False
    covariance = None
    try:
        covariance = np.linalg.inv(info)
        covariance = 0.5 * (covariance + covariance.T)
        if not np.all(np.isfinite(covariance)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        singular = True
        covariance = None
    return {
        "x": x,
        "deviance": deviance,
        "converged": converged,
        "n_iterations": n_iter,
        "gradient_norm": grad_norm,
        "covariance": covariance,
        "singular": singular,
        "message": message,
        "trace": trace,
    }


# ---------------------------------------------------------------------------
# Public fitting API
# ---------------------------------------------------------------------------


def _check_histogram(hist: Histogram):
    if hist.n_channels < 2:
        raise DomainError("histogram is degenerate (needs at least 2 channels)")
    if int(hist.counts.sum()) == 0:
        raise DomainError("histogram is empty")


def _result_for_block(problem, raw, block_idx, spec):
    scale = _rate_scale(spec.rate_unit)
    theta = problem.theta(block_idx, raw["x"])
    estimates = {}
    for name, value in theta.items():
        estimates[name] = value / scale if name.startswith("rate") else value
    free_cols = [
        (j, name)
        for j, col in enumerate(problem.columns)
        for bi, name in col.targets
        if bi == block_idx
    ]
    free_names = tuple(name for _, name in free_cols)
    errors = {}
    cov_block = None
    if raw["covariance"] is not None:
        idx = [j for j, _ in free_cols]
        cov_block = raw["covariance"][np.ix_(idx, idx)].copy()
        conv = np.array(
            [1.0 / scale if name.startswith("rate") else 1.0 for _, name in free_cols]
        )
        cov_block = cov_block * np.outer(conv, conv)
        for k, (_, name) in enumerate(free_cols):
            var = cov_block[k, k]
            errors[name] = math.sqrt(var) if var > 0 else math.nan
    return FitResult(
        estimates=estimates,
        errors=errors,
        free_names=free_names,
        covariance=cov_block,
        deviance=raw["deviance"],
        degrees_of_freedom=problem.counts.size - len(problem.columns),
        converged=raw["converged"],
        n_iterations=raw["n_iterations"],
        gradient_norm=raw["gradient_norm"],
        singular=raw["singular"],
        message=raw["message"],
        deviance_trace=tuple(raw["trace"]),
    )


def fit_mle(hist: Histogram, spec: FitSpec) -> FitResult:
    """Fit a spectrum model to one histogram by Poisson ML.

    Non-convergence is reported through the ``converged`` flag, never
    silently; a singular information matrix leaves ``covariance`` None
    with ``singular`` set.
    """
    if not spec.free_names:
        raise DomainError("fit needs at least one free parameter")
    _check_histogram(hist)
    settings = _internal_settings(spec)
    block = _Block(
        counts=hist.counts.astype(float),
        grid=hist.grid,
        settings=settings,
        remainder=spec.remainder,
        n_components=spec.n_components,
    )
    problem = _Problem([block], _build_columns([block], shared=()))
    raw = _solve_problem(
        problem, spec.max_iterations, spec.deviance_tol, spec.gradient_tol
    )
    return _result_for_block(problem, raw, 0, spec)


def fit_joint(hists, spec: FitSpec, shared) -> JointFitResult:
    """Fit several histograms simultaneously with some parameters shared.

    Every free parameter in ``shared`` becomes a single column driving
    all histograms; the remaining free parameters are independent per
    histogram.  Used for the orientation-pair null hypothesis.
    """
    hists = list(hists)
    if len(hists) < 2:
        raise DomainError("joint fit needs at least two histograms")
    if not spec.free_names:
        raise DomainError("fit needs at least one free parameter")
    shared = tuple(shared)
    for name in shared:
        if not spec.params[name].free:
            raise DomainError(f"shared parameter {name} must be free in the spec")
    settings = _internal_settings(spec)
    blocks = []
    for hist in hists:
        _check_histogram(hist)
        blocks.append(
            _Block(
                counts=hist.counts.astype(float),
                grid=hist.grid,
                settings=dict(settings),
                remainder=spec.remainder,
                n_components=spec.n_components,
            )
        )
    problem = _Problem(blocks, _build_columns(blocks, shared=shared))
    raw = _solve_problem(
        problem, spec.max_iterations, spec.deviance_tol, spec.gradient_tol
    )
    block_results = tuple(
        _result_for_block(problem, raw, bi, spec) for bi in range(len(blocks))
    )
    return JointFitResult(
        blocks=block_results,
        shared=shared,
        deviance=raw["deviance"],
        converged=raw["converged"],
        n_iterations=raw["n_iterations"],
        singular=raw["singular"],
        message=raw["message"],
    )


def model_from_estimates(estimates: dict, n_components: int = 3) -> SpectrumModel:
    """Rebuild a SpectrumModel from a fit's estimate dict (rates per us)."""
    return _theta_model(estimates, n_components)


@dataclass(frozen=True)
class GradientCheck:
    """Analytic-vs-numeric Jacobian comparison at a spec's starting point."""

    max_relative_deviation: float
    per_parameter: dict
    worst_parameter: str | None


def gradient_check(spec: FitSpec, hist: Histogram, threshold: float = 1e-5) -> GradientCheck:
    """Compare the analytic model Jacobian with central finite differences.

    The deviation for a parameter is the max absolute difference over
    channels normalized by the largest derivative magnitude in that
    column.  ``worst_parameter`` identifies the offender whenever the
    overall deviation exceeds ``threshold``.
    """
    settings = _internal_settings(spec)
    block = _Block(
        counts=hist.counts.astype(float),
        grid=hist.grid,
        settings=settings,
        remainder=spec.remainder,
        n_components=spec.n_components,
    )
    problem = _Problem([block], _build_columns([block], shared=()))
    free = [(j, col.targets[0][1]) for j, col in enumerate(problem.columns)]
    if not free:
        return GradientCheck(0.0, {}, None)
    x0 = problem.x0()
    _, jac = _problem_eval(problem, x0, need_jac=True)
    per_parameter = {}
    cube_eps = np.cbrt(np.finfo(float).eps)
    for j, name in free:
        step = cube_eps * max(abs(x0[j]), 1e-6)
        if x0[j] + step == x0[j]:
            raise DomainError(f"finite-difference step underflow for {name}")
        x_hi = x0.copy()
        x_hi[j] += step
        x_lo = x0.copy()
        x_lo[j] -= step
        mu_hi, _ = _problem_eval(problem, x_hi, need_jac=False)
        mu_lo, _ = _problem_eval(problem, x_lo, need_jac=False)
        if mu_hi is None or mu_lo is None:
            raise DomainError(
                f"finite-difference step for {name} leaves the feasible region"
            )
        fd = (mu_hi - mu_lo) / (2.0 * step)
        denom = max(np.max(np.abs(jac[:, j])), np.max(np.abs(fd)))
        dev = float(np.max(np.abs(jac[:, j] - fd)) / denom) if denom > 0 else 0.0
        per_parameter[name] = dev
    worst = max(per_parameter, key=per_parameter.get)
    max_dev = per_parameter[worst]
    return GradientCheck(
        max_relative_deviation=max_dev,
        per_parameter=per_parameter,
        worst_parameter=worst if max_dev > threshold else None,
    )


def estimate_background(
    hist: Histogram, pre_window, t0: float, fwhm: float
) -> BackgroundEstimate:
    """Mean counts per channel over a window entirely before the rise.

    ``pre_window`` is a (first, last) channel pair, last exclusive; its
    upper edge must not reach past t0 - 5 sigma.  A zero-count window is
    returned with zero standard error and flagged degenerate.
    """
    lo, hi = int(pre_window[0]), int(pre_window[1])
    if not (0 <= lo < hi <= hist.n_channels):
        raise DomainError(f"empty or out-of-range pre-t0 window ({lo}, {hi})")
    sigma = fwhm * FWHM_TO_SIGMA
    upper_edge = hi * hist.channel_width
    if upper_edge > t0 - 5.0 * sigma:
        raise DomainError(
            f"pre-t0 window must end before t0 - 5 sigma = {t0 - 5.0 * sigma:.3f} ns, "
            f"got {upper_edge:.3f} ns"
        )
    window = hist.counts[lo:hi]
    total = float(window.sum())
    n = hi - lo
    return BackgroundEstimate(
        mean=total / n,
        stderr=math.sqrt(total) / n,
        n_channels=n,
        degenerate=total == 0.0,
    )
