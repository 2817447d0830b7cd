"""Model structures, parameter states and the log densities of the joint model.

Every structure shares the conditional mean

    mu_ij = beta0 [+ b0_i] [+ b1_i * t_ij] [+ w_ij]

with either independent N(0, sigma^2) errors or AR(1) errors between
consecutive observations of an individual.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np
import numba

from .data import IndividualSeries, LongitudinalDataset

LOG_2PI = math.log(2.0 * math.pi)

# Index layout of the packed scalar-parameter vector used by the samplers.
BETA0, SIGMA, SIGMA0, SIGMA1, SIGMA_W, RHO = range(6)
SCALAR_NAMES = ("beta0", "sigma", "sigma0", "sigma1", "sigma_w", "rho")
SD_NAMES = ("sigma", "sigma0", "sigma1", "sigma_w")

# Guard interval for rho: keeps 1 - rho^2 away from zero.
RHO_EPS = 1e-6


class ModelError(ValueError):
    """State and structure disagree, or a parameter is outside its domain."""


class Structure(enum.Enum):
    S1_FIXED = "S1_FIXED"
    S1_RANDINT = "S1_RANDINT"
    S1_RANDSLOPE = "S1_RANDSLOPE"
    S1_RANDBOTH = "S1_RANDBOTH"
    F_RANDBOTH_IID = "F_RANDBOTH_IID"
    F_SLOPE_ARCOV = "F_SLOPE_ARCOV"
    F_SLOPE_LATENTW = "F_SLOPE_LATENTW"
    # Random intercept and slope with AR(1) errors; the structure whose
    # posterior summary includes sigma0 for the sardine AR model.
    F_RANDBOTH_ARCOV = "F_RANDBOTH_ARCOV"

    @property
    def has_b0(self) -> bool:
        return self in (Structure.S1_RANDINT, Structure.S1_RANDBOTH, Structure.F_RANDBOTH_IID,
                        Structure.F_RANDBOTH_ARCOV)

    @property
    def has_b1(self) -> bool:
        return self not in (Structure.S1_FIXED, Structure.S1_RANDINT)

    @property
    def ar_errors(self) -> bool:
        return self in (Structure.F_SLOPE_ARCOV, Structure.F_RANDBOTH_ARCOV)

    @property
    def latent_w(self) -> bool:
        return self is Structure.F_SLOPE_LATENTW

    @property
    def has_rho(self) -> bool:
        return self.ar_errors or self.latent_w

    @property
    def parameters(self) -> tuple[str, ...]:
        """Scalar parameters owned by the structure, in sampler update order."""
        names = ["beta0", "sigma"]
        if self.has_b0:
            names.append("sigma0")
        if self.has_b1:
            names.append("sigma1")
        if self.latent_w:
            names.append("sigma_w")
        if self.has_rho:
            names.append("rho")
        return tuple(names)

    @property
    def random_effects(self) -> tuple[str, ...]:
        out = []
        if self.has_b0:
            out.append("b0")
        if self.has_b1:
            out.append("b1")
        if self.latent_w:
            out.append("w")
        return tuple(out)


# Aliases matching the model labels used in the three analyses.
MODEL_ALIASES = {
    "study1:M1": Structure.S1_FIXED,
    "study1:M2": Structure.S1_RANDINT,
    "study1:M3": Structure.S1_RANDSLOPE,
    "study1:M4": Structure.S1_RANDBOTH,
    "study2:M1": Structure.F_SLOPE_LATENTW,
    "study2:M2": Structure.F_RANDBOTH_IID,
    "study2:M3": Structure.F_SLOPE_ARCOV,
    "sardine:M1": Structure.F_RANDBOTH_IID,
    "sardine:M2": Structure.F_SLOPE_ARCOV,
    "sardine:M3": Structure.F_SLOPE_LATENTW,
}


def parse_structure(name: str) -> Structure:
    if name in MODEL_ALIASES:
        return MODEL_ALIASES[name]
    try:
        return Structure[name]
    except KeyError:
        raise ModelError(f"unknown model structure {name!r}") from None


@dataclass(frozen=True)
class PriorConfig:
    """Independent priors: beta0 ~ N(0, intercept_sd^2), every sd ~ U(0, upper), rho ~ U(-1, 1).

    ``overrides`` maps an sd name (``sigma0`` etc.) to its own upper bound.
    """

    intercept_sd: float = 10.0
    sd_upper: float = 10.0
    overrides: Mapping[str, float] = field(default_factory=dict)
    rho_bounds: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        if not self.intercept_sd > 0:
            raise ModelError("intercept_sd must be positive")
        if not self.sd_upper > 0:
            raise ModelError("sd_upper must be positive")
        for k, v in self.overrides.items():
            if k not in SD_NAMES:
                raise ModelError(f"override for unknown sd parameter {k!r}")
            if not v > 0:
                raise ModelError(f"upper bound for {k} must be positive")

    def upper(self, name: str) -> float:
        return float(self.overrides.get(name, self.sd_upper))


STUDY_PRIORS = PriorConfig(intercept_sd=10.0, sd_upper=10.0)
SARDINE_PRIORS = PriorConfig(intercept_sd=5.0, sd_upper=5.0)


@dataclass(frozen=True)
class ModelSpec:
    structure: Structure
    priors: PriorConfig = STUDY_PRIORS
    # Parameters held at their initial value by the sampler (test hook).
    fixed: frozenset = frozenset()

    def __post_init__(self):
        if isinstance(self.structure, str):
            object.__setattr__(self, "structure", parse_structure(self.structure))
        object.__setattr__(self, "fixed", frozenset(self.fixed))
        unknown = self.fixed - set(SCALAR_NAMES) - {"b0", "b1", "w"}
        if unknown:
            raise ModelError(f"unknown fixed parameters {sorted(unknown)}")


@dataclass
class ParameterState:
    beta0: float
    sigma: float
    sigma0: Optional[float] = None
    sigma1: Optional[float] = None
    sigma_w: Optional[float] = None
    rho: Optional[float] = None
    b0: Optional[np.ndarray] = None
    b1: Optional[np.ndarray] = None
    w: Optional[np.ndarray] = None  # flat, aligned with LongitudinalDataset.y

    def copy(self) -> "ParameterState":
        return replace(
            self,
            b0=None if self.b0 is None else np.array(self.b0, dtype=float),
            b1=None if self.b1 is None else np.array(self.b1, dtype=float),
            w=None if self.w is None else np.array(self.w, dtype=float),
        )

    def scalars(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in SCALAR_NAMES if getattr(self, k) is not None}

    def w_of(self, data: LongitudinalDataset, i: int) -> np.ndarray:
        return self.w[data.offsets[i]:data.offsets[i + 1]]


def check_state(spec: ModelSpec, state: ParameterState, data: LongitudinalDataset | None = None) -> None:
    s = spec.structure
    owned = set(s.parameters) | set(s.random_effects)
    for name in SCALAR_NAMES[1:] + ("b0", "b1", "w"):
        present = getattr(state, name) is not None
        if present != (name in owned):
            what = "missing" if name in owned else "unexpected"
            raise ModelError(f"{s.name}: {what} field {name!r}")
    if data is not None:
        for name in ("b0", "b1"):
            v = getattr(state, name)
            if v is not None and len(v) != data.n_individuals:
                raise ModelError(f"{name} has length {len(v)}, expected {data.n_individuals}")
        if state.w is not None and len(state.w) != data.n_observations:
            raise ModelError(f"w has length {len(state.w)}, expected {data.n_observations}")


def pack_state(state: ParameterState, data: LongitudinalDataset):
    """Flatten a state into (theta, b0, b1, w) arrays; absent entries are zero."""
    theta = np.zeros(6)
    for k, name in enumerate(SCALAR_NAMES):
        v = getattr(state, name)
        if v is not None:
            theta[k] = v
    n, m = data.n_individuals, data.n_observations
    b0 = np.zeros(n) if state.b0 is None else np.array(state.b0, dtype=float)
    b1 = np.zeros(n) if state.b1 is None else np.array(state.b1, dtype=float)
    w = np.zeros(m) if state.w is None else np.array(state.w, dtype=float)
    return theta, b0, b1, w


def unpack_state(structure: Structure, theta, b0, b1, w) -> ParameterState:
    owned = set(structure.parameters)
    kw = {name: float(theta[k]) for k, name in enumerate(SCALAR_NAMES) if name in owned}
    return ParameterState(
        **kw,
        b0=np.array(b0) if structure.has_b0 else None,
        b1=np.array(b1) if structure.has_b1 else None,
        w=np.array(w) if structure.latent_w else None,
    )


def conditional_mean(spec: ModelSpec, state: ParameterState, individual: IndividualSeries,
                     index: int = 0, offset: int | None = None) -> np.ndarray:
    """Mean vector of one individual.

    ``index`` selects its random effects. For latent-w structures ``offset``
    locates the individual's segment in the flat ``state.w``; it may be
    omitted when ``state.w`` holds exactly this individual's values.
    """
    s = spec.structure
    t = individual.times
    mu = np.full(t.shape, float(state.beta0))
    if s.has_b0:
        if state.b0 is None:
            raise ModelError("state lacks b0")
        mu = mu + state.b0[index]
    if s.has_b1:
        if state.b1 is None:
            raise ModelError("state lacks b1")
        mu = mu + state.b1[index] * t
    if s.latent_w:
        if state.w is None:
            raise ModelError("state lacks w")
        w = np.asarray(state.w, dtype=float)
        if offset is None:
            if w.size != t.size:
                raise ModelError("offset required to locate this individual's w")
            offset = 0
        seg = w[offset:offset + t.size]
        if seg.size != t.size:
            raise ModelError("w segment shorter than the series")
        mu = mu + seg
    return mu


@numba.njit(cache=True)
def loglik_packed(y, t, offsets, theta, b0, b1, w):
    """log f(y | theta, phi) with AR(1) errors; rho = 0 gives independent errors."""
    sigma = theta[1]
    rho = theta[5]
    s2 = sigma * sigma
    one_m = 1.0 - rho * rho
    total = 0.0
    n_ind = offsets.size - 1
    for i in range(n_ind):
        a = offsets[i]
        b = offsets[i + 1]
        prev = 0.0
        q = 0.0
        for j in range(a, b):
            e = y[j] - (theta[0] + b0[i] + b1[i] * t[j] + w[j])
            if j == a:
                q += one_m * e * e
            else:
                d = e - rho * prev
                q += d * d
            prev = e
        n = b - a
        total += -0.5 * n * 1.8378770664093453 - n * np.log(sigma) + 0.5 * np.log(one_m) - 0.5 * q / s2
    return total


def log_conditional_likelihood(spec: ModelSpec, state: ParameterState, data: LongitudinalDataset) -> float:
    check_state(spec, state, data)
    if not state.sigma > 0:
        raise ModelError("sigma must be positive")
    if spec.structure.ar_errors and not abs(state.rho) < 1:
        raise ModelError("|rho| must be < 1")
    theta, b0, b1, w = pack_state(state, data)
    if not spec.structure.ar_errors:
        theta[RHO] = 0.0
    return float(loglik_packed(data.y, data.t, data.offsets, theta, b0, b1, w))


def ar1_covariance(rho: float, sigma: float, times) -> np.ndarray:
    """Stationary AR(1) covariance: sigma^2 / (1 - rho^2) * rho^|t_j - t_l|."""
    if not abs(rho) < 1:
        raise ModelError("|rho| must be < 1")
    if not sigma > 0:
        raise ModelError("sigma must be positive")
    t = np.asarray(times, dtype=float)
    lag = np.abs(t[:, None] - t[None, :])
    if rho < 0 and np.any(lag != np.round(lag)):
        raise ModelError("negative rho needs integer time lags")
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = np.where(lag == 0, 1.0, np.power(rho, lag))
    return sigma**2 / (1.0 - rho**2) * corr


def _norm_logpdf(x, sd):
    x = np.asarray(x, dtype=float)
    return float(np.sum(-0.5 * LOG_2PI - np.log(sd) - 0.5 * (x / sd) ** 2))


def ar1_chain_logpdf(x, rho: float, sd: float) -> float:
    """log density of a stationary AR(1) chain with innovation sd ``sd``."""
    x = np.asarray(x, dtype=float)
    out = _norm_logpdf(x[:1], sd / math.sqrt(1.0 - rho**2))
    if x.size > 1:
        out += _norm_logpdf(x[1:] - rho * x[:-1], sd)
    return out


def log_random_effect_density(spec: ModelSpec, state: ParameterState,
                              data: LongitudinalDataset | None = None) -> float:
    """log f(phi | theta). Latent-w chains need ``data`` to split w by individual."""
    s = spec.structure
    check_state(spec, state, data)
    out = 0.0
    if s.has_b0:
        out += _norm_logpdf(state.b0, state.sigma0)
    if s.has_b1:
        out += _norm_logpdf(state.b1, state.sigma1)
    if s.latent_w:
        if data is None:
            segments = [state.w]
        else:
            segments = [state.w_of(data, i) for i in range(data.n_individuals)]
        for seg in segments:
            out += ar1_chain_logpdf(seg, state.rho, state.sigma_w)
    return out


def log_prior_density(spec: ModelSpec, state: ParameterState) -> float:
    pri = spec.priors
    out = _norm_logpdf(state.beta0, pri.intercept_sd)
    for name in spec.structure.parameters:
        if name in SD_NAMES:
            v, up = getattr(state, name), pri.upper(name)
            if v is None or not 0.0 < v < up:
                return -math.inf
            out -= math.log(up)
        elif name == "rho":
            if state.rho is None or not -1.0 < state.rho < 1.0:
                return -math.inf
            out -= math.log(2.0)
    return out


def log_joint(spec: ModelSpec, state: ParameterState, data: LongitudinalDataset) -> float:
    lp = log_prior_density(spec, state)
    if not math.isfinite(lp):
        return lp
    return log_conditional_likelihood(spec, state, data) + log_random_effect_density(spec, state, data) + lp


def acf(rho: float, lag: float) -> float:
    if lag < 0:
        raise ModelError("lag must be nonnegative")
    if not abs(rho) < 1:
        raise ModelError("|rho| must be < 1")
    return 1.0 if lag == 0 else float(rho) ** lag


def draw_random_effects(spec: ModelSpec, state: ParameterState, data: LongitudinalDataset,
                        rng: np.random.Generator) -> ParameterState:
    """Fill the random effects of ``state`` with a draw from f(phi | theta)."""
    s = spec.structure
    n = data.n_individuals
    state = state.copy()
    if s.has_b0:
        state.b0 = rng.normal(0.0, state.sigma0, size=n)
    if s.has_b1:
        state.b1 = rng.normal(0.0, state.sigma1, size=n)
    if s.latent_w:
        w = np.empty(data.n_observations)
        for i in range(n):
            a, b = data.offsets[i], data.offsets[i + 1]
            w[a] = rng.normal(0.0, state.sigma_w / math.sqrt(1.0 - state.rho**2))
            for j in range(a + 1, b):
                w[j] = rng.normal(state.rho * w[j - 1], state.sigma_w)
        state.w = w
    return state


def init_state(spec: ModelSpec, data: LongitudinalDataset, rng: np.random.Generator) -> ParameterState:
    """Draw parameters from the prior, then random effects given them."""
    s, pri = spec.structure, spec.priors
    kw = {"beta0": float(rng.normal(0.0, pri.intercept_sd))}
    for name in s.parameters[1:]:
        if name == "rho":
            lo, hi = -1.0 + RHO_EPS, 1.0 - RHO_EPS
            kw[name] = float(rng.uniform(lo, hi))
        else:
            # Uniform on the open interval; a 0.0 draw is astronomically rare but invalid.
            v = 0.0
            while v == 0.0:
                v = float(rng.uniform(0.0, pri.upper(name)))
            kw[name] = v
    return draw_random_effects(spec, ParameterState(**kw), data, rng)
