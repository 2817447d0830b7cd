"""Gibbs sampling from power posteriors.

The power posterior at temperature ``tau`` is

    pi_tau(theta, phi | y) ∝ f(y | theta, phi)^tau f(phi | theta) pi(theta).

Location parameters (beta0, b0_i, b1_i, w_ij) have Gaussian full
conditionals and are drawn exactly. Scale parameters and rho have
non-standard conditionals on bounded supports and are drawn by univariate
slice sampling. The hot loop is compiled with numba; the public functions
in this module convert between :class:`ParameterState` and packed arrays.

Under AR(1) errors the likelihood of an individual factorizes into
independent N(0, sigma^2) terms of the whitened residuals

    sqrt(1 - rho^2) e_1,   e_j - rho e_{j-1}  (j >= 2),

so every location conditional, with or without AR errors, is the same
Gaussian regression update on whitened coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numba
import numpy as np

from .data import LongitudinalDataset
from .models import (
    BETA0, RHO, RHO_EPS, SCALAR_NAMES, SIGMA, SIGMA0, SIGMA1, SIGMA_W,
    ModelSpec, ParameterState, check_state, loglik_packed, pack_state, unpack_state,
)


class SamplerError(RuntimeError):
    """Numeric failure inside a Gibbs sweep (non-finite conditional or kernel)."""


@dataclass(frozen=True)
class ChainConfig:
    n_iterations: int
    burn_in: int = 0
    thinning: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be positive")
        if not 0 <= self.burn_in < self.n_iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < n_iterations")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")

    @property
    def n_retained(self) -> int:
        # Iteration k (1-based) is kept when k > burn_in and (k - burn_in) % thinning == 0.
        return (self.n_iterations - self.burn_in) // self.thinning


@dataclass
class ChainTrace:
    """Retained draws of one chain.

    ``theta`` has one row per retained iteration and one column per entry
    of :data:`SCALAR_NAMES`; ``b0``/``b1`` one column per individual; ``w``
    (optional, it can be large) one column per observation.
    """

    spec: ModelSpec
    loglik: np.ndarray
    theta: Optional[np.ndarray] = None
    b0: Optional[np.ndarray] = None
    b1: Optional[np.ndarray] = None
    w: Optional[np.ndarray] = None
    ids: list = field(default_factory=list)
    final_state: Optional[ParameterState] = None

    def __len__(self):
        return len(self.loglik)

    @property
    def loglik_trace(self) -> np.ndarray:
        return self.loglik

    def parameter(self, name: str) -> np.ndarray:
        if name not in self.spec.structure.parameters:
            raise KeyError(f"{name!r} is not a parameter of {self.spec.structure.name}")
        if self.theta is None:
            raise ValueError("trace was run without keeping states")
        return self.theta[:, SCALAR_NAMES.index(name)]

    @property
    def states(self) -> list[ParameterState]:
        if self.theta is None:
            raise ValueError("trace was run without keeping states")
        s = self.spec.structure
        out = []
        for k in range(len(self)):
            out.append(unpack_state(
                s, self.theta[k],
                self.b0[k] if self.b0 is not None else None,
                self.b1[k] if self.b1 is not None else None,
                self.w[k] if self.w is not None else None,
            ))
        return out

    def to_csv(self, path) -> None:
        """Dump ``iteration, loglik`` then the flattened parameters."""
        cols = ["iteration", "loglik"]
        blocks = [np.arange(1, len(self) + 1)[:, None], self.loglik[:, None]]
        if self.theta is not None:
            names = self.spec.structure.parameters
            cols += list(names)
            blocks.append(np.column_stack([self.parameter(n) for n in names]))
            for label, arr in (("b0", self.b0), ("b1", self.b1)):
                if arr is not None and label in self.spec.structure.random_effects:
                    cols += [f"{label}[{i}]" for i in self.ids]
                    blocks.append(arr)
            if self.w is not None:
                cols += [f"w[{j}]" for j in range(self.w.shape[1])]
                blocks.append(self.w)
        np.savetxt(path, np.hstack(blocks), delimiter=",", header=",".join(cols), comments="")


# --------------------------------------------------------------------------
# Slice sampling

# Log-kernel families evaluated inside the compiled sampler.
KIND_SCALE = 0   # -a log x - b / (2 x^2)
KIND_RHO = 1     # 0.5 c log(1 - x^2) - 0.5 d [(1-x^2) A + S00 - 2 x S01 + x^2 S11]
KIND_NORMAL = 2  # -0.5 ((x - m) / s)^2, for testing the compiled sampler


@numba.njit(cache=True)
def _log_kernel(kind, stats, x):
    if kind == KIND_SCALE:
        return -stats[0] * np.log(x) - 0.5 * stats[1] / (x * x)
    if kind == KIND_RHO:
        one_m = 1.0 - x * x
        q = one_m * stats[2] + stats[3] - 2.0 * x * stats[4] + x * x * stats[5]
        return 0.5 * stats[0] * np.log(one_m) - 0.5 * stats[1] * q
    z = (x - stats[0]) / stats[1]
    return -0.5 * z * z


@numba.njit(cache=True)
def slice_kernel(kind, stats, current, lower, upper, width, rng):
    """One slice-sampling update for a compiled log-kernel family.

    Stepping out (width ``width``) is capped at the support bounds, then the
    bracket is shrunk towards ``current`` until a point is accepted.
    """
    f0 = _log_kernel(kind, stats, current)
    if not np.isfinite(f0):
        raise ValueError("slice sampler: log kernel not finite at current point")
    logy = f0 + np.log(rng.random())
    left = current - width * rng.random()
    right = left + width
    while left > lower and _log_kernel(kind, stats, left) > logy:
        left -= width
    while right < upper and _log_kernel(kind, stats, right) > logy:
        right += width
    if left < lower:
        left = lower
    if right > upper:
        right = upper
    for _ in range(200):
        x = left + (right - left) * rng.random()
        if lower < x < upper:
            fx = _log_kernel(kind, stats, x)
            if np.isnan(fx):
                raise ValueError("slice sampler: log kernel is NaN inside the bracket")
            if fx > logy:
                return x
        if x < current:
            left = x
        else:
            right = x
    raise ValueError("slice sampler: shrinkage did not terminate")


def slice_sample_scalar(log_kernel: Callable[[float], float], current: float, lower: float, upper: float,
                        rng: np.random.Generator, width: float | None = None) -> float:
    """Draw from the density proportional to ``exp(log_kernel)`` on ``(lower, upper)``.

    Uses the same stepping-out/shrinkage scheme as the compiled sampler. The
    returned value is a Markov transition that leaves the truncated density
    invariant; iterate it to obtain a chain.
    """
    if not lower < upper:
        raise ValueError("lower must be < upper")
    if not lower < current < upper:
        raise ValueError("current point must lie inside (lower, upper)")
    if width is None:
        width = upper - lower if math.isfinite(upper - lower) else 1.0
    f0 = log_kernel(current)
    if not math.isfinite(f0):
        raise ValueError("log kernel not finite at current point")
    logy = f0 + math.log(rng.random())
    left = current - width * rng.random()
    right = left + width
    while left > lower and log_kernel(left) > logy:
        left -= width
    while right < upper and log_kernel(right) > logy:
        right += width
    left, right = max(left, lower), min(right, upper)
    for _ in range(200):
        x = left + (right - left) * rng.random()
        if lower < x < upper:
            fx = log_kernel(x)
            if math.isnan(fx):
                raise ValueError("log kernel is NaN inside the bracket")
            if fx > logy:
                return x
        if x < current:
            left = x
        else:
            right = x
    raise RuntimeError("slice shrinkage did not terminate")


# --------------------------------------------------------------------------
# Compiled Gibbs sweep

# Flag vector layout: which parts of the structure exist / are sampled.
F_B0, F_B1, F_AR, F_W = range(4)


def _flags(spec: ModelSpec) -> np.ndarray:
    s = spec.structure
    return np.array([s.has_b0, s.has_b1, s.ar_errors, s.latent_w], dtype=np.bool_)


def _update_mask(spec: ModelSpec) -> np.ndarray:
    """Boolean mask over (beta0, sigma, sigma0, sigma1, sigma_w, rho, b0, b1, w)."""
    owned = set(spec.structure.parameters) | set(spec.structure.random_effects)
    names = SCALAR_NAMES + ("b0", "b1", "w")
    return np.array([n in owned and n not in spec.fixed for n in names], dtype=np.bool_)


def _bounds(spec: ModelSpec) -> np.ndarray:
    """Upper bounds for (sigma, sigma0, sigma1, sigma_w), then the prior sd of beta0."""
    p = spec.priors
    return np.array([p.upper("sigma"), p.upper("sigma0"), p.upper("sigma1"), p.upper("sigma_w"),
                     p.intercept_sd])


@numba.njit(cache=True)
def _residuals(y, t, offsets, theta, b0, b1, w, e):
    for i in range(offsets.size - 1):
        for j in range(offsets[i], offsets[i + 1]):
            e[j] = y[j] - (theta[0] + b0[i] + b1[i] * t[j] + w[j])


@numba.njit(cache=True)
def gaussian_location_stats(e, c, a, b, rho):
    """Whitened sufficient statistics (sum c~ e~, sum c~^2) over segment [a, b).

    ``c`` holds the coefficient of the parameter in the mean and ``e`` the
    current residuals y - mu.
    """
    s = np.sqrt(1.0 - rho * rho)
    ce = s * c[a] * s * e[a]
    cc = s * c[a] * s * c[a]
    for j in range(a + 1, b):
        ct = c[j] - rho * c[j - 1]
        ce += ct * (e[j] - rho * e[j - 1])
        cc += ct * ct
    return ce, cc


@numba.njit(cache=True)
def _draw_location(current, ce, cc, tau, s2, prior_var, rng):
    """Gaussian full conditional for a location parameter with N(0, prior_var) prior."""
    prec = 1.0 / prior_var + tau * cc / s2
    mean = tau * (ce + current * cc) / s2 / prec
    if not (np.isfinite(mean) and np.isfinite(prec) and prec > 0.0):
        raise ValueError("non-finite Gaussian conditional")
    return mean + rng.standard_normal() / np.sqrt(prec)


@numba.njit(cache=True)
def _sweep(y, t, offsets, theta, b0, b1, w, e, ones, flags, mask, bounds, tau, rng):
    n_ind = offsets.size - 1
    n_obs = y.size
    rho_e = theta[5] if flags[2] else 0.0
    s2 = theta[1] * theta[1]
    _residuals(y, t, offsets, theta, b0, b1, w, e)

    # beta0
    if mask[0]:
        ce = 0.0
        cc = 0.0
        for i in range(n_ind):
            a, b = offsets[i], offsets[i + 1]
            x1, x2 = gaussian_location_stats(e, ones, a, b, rho_e)
            ce += x1
            cc += x2
        new = _draw_location(theta[0], ce, cc, tau, s2, bounds[4] * bounds[4], rng)
        d = new - theta[0]
        theta[0] = new
        for j in range(n_obs):
            e[j] -= d

    # b0_i
    if flags[0] and mask[6]:
        v0 = theta[2] * theta[2]
        for i in range(n_ind):
            a, b = offsets[i], offsets[i + 1]
            ce, cc = gaussian_location_stats(e, ones, a, b, rho_e)
            new = _draw_location(b0[i], ce, cc, tau, s2, v0, rng)
            d = new - b0[i]
            b0[i] = new
            for j in range(a, b):
                e[j] -= d

    # b1_i
    if flags[1] and mask[7]:
        v1 = theta[3] * theta[3]
        for i in range(n_ind):
            a, b = offsets[i], offsets[i + 1]
            ce, cc = gaussian_location_stats(e, t, a, b, rho_e)
            new = _draw_location(b1[i], ce, cc, tau, s2, v1, rng)
            d = new - b1[i]
            b1[i] = new
            for j in range(a, b):
                e[j] -= d * t[j]

    # w_ij, single-site, independent errors; prior is the stationary AR(1) chain.
    if flags[3] and mask[8]:
        rho_w = theta[5]
        vw = theta[4] * theta[4]
        for i in range(n_ind):
            a, b = offsets[i], offsets[i + 1]
            for j in range(a, b):
                r = e[j] + w[j]
                if b - a == 1:
                    pp = (1.0 - rho_w * rho_w) / vw
                    lin = 0.0
                elif j == a:
                    pp = 1.0 / vw
                    lin = rho_w * w[j + 1] / vw
                elif j == b - 1:
                    pp = 1.0 / vw
                    lin = rho_w * w[j - 1] / vw
                else:
                    pp = (1.0 + rho_w * rho_w) / vw
                    lin = rho_w * (w[j - 1] + w[j + 1]) / vw
                prec = pp + tau / s2
                mean = (tau * r / s2 + lin) / prec
                if not (np.isfinite(mean) and prec > 0.0):
                    raise ValueError("non-finite w conditional")
                new = mean + rng.standard_normal() / np.sqrt(prec)
                e[j] = r - new
                w[j] = new

    stats = np.zeros(6)

    # sigma: kernel sigma^(-tau n) exp(-tau S / (2 sigma^2)), S the whitened sum of squares.
    if mask[1]:
        q = 0.0
        one_m = 1.0 - rho_e * rho_e
        for i in range(n_ind):
            a, b = offsets[i], offsets[i + 1]
            q += one_m * e[a] * e[a]
            for j in range(a + 1, b):
                d = e[j] - rho_e * e[j - 1]
                q += d * d
        stats[0] = tau * n_obs
        stats[1] = tau * q
        theta[1] = slice_kernel(0, stats, theta[1], 0.0, bounds[0], bounds[0], rng)
        s2 = theta[1] * theta[1]

    if flags[0] and mask[2]:
        q = 0.0
        for i in range(n_ind):
            q += b0[i] * b0[i]
        stats[0] = n_ind
        stats[1] = q
        theta[2] = slice_kernel(0, stats, theta[2], 0.0, bounds[1], bounds[1], rng)

    if flags[1] and mask[3]:
        q = 0.0
        for i in range(n_ind):
            q += b1[i] * b1[i]
        stats[0] = n_ind
        stats[1] = q
        theta[3] = slice_kernel(0, stats, theta[3], 0.0, bounds[2], bounds[2], rng)

    # AR(1) sufficient statistics of either the latent chain or the residuals.
    if flags[3] or flags[2]:
        x = w if flags[3] else e
        A = 0.0
        s00 = 0.0
        s01 = 0.0
        s11 = 0.0
        for i in range(n_ind):
            a, b = offsets[i], offsets[i + 1]
            A += x[a] * x[a]
            for j in range(a + 1, b):
                s00 += x[j] * x[j]
                s01 += x[j] * x[j - 1]
                s11 += x[j - 1] * x[j - 1]

        if flags[3] and mask[4]:
            rho_w = theta[5]
            stats[0] = n_obs
            stats[1] = (1.0 - rho_w * rho_w) * A + s00 - 2.0 * rho_w * s01 + rho_w * rho_w * s11
            theta[4] = slice_kernel(0, stats, theta[4], 0.0, bounds[3], bounds[3], rng)

        if mask[5]:
            if flags[3]:
                stats[0] = n_ind
                stats[1] = 1.0 / (theta[4] * theta[4])
            else:
                stats[0] = tau * n_ind
                stats[1] = tau / s2
            stats[2] = A
            stats[3] = s00
            stats[4] = s01
            stats[5] = s11
            lo = -1.0 + 1e-6
            hi = 1.0 - 1e-6
            theta[5] = slice_kernel(1, stats, theta[5], lo, hi, hi - lo, rng)


@numba.njit(cache=True)
def _run(y, t, offsets, theta, b0, b1, w, flags, mask, bounds, tau, n_iter, burn, thin,
         keep, keep_w, rng):
    n_ret = (n_iter - burn) // thin
    n_ind = offsets.size - 1
    e = np.empty(y.size)
    ones = np.ones(y.size)
    ll = np.empty(n_ret)
    th = np.empty((n_ret if keep else 0, 6))
    bb0 = np.empty((n_ret if keep else 0, n_ind))
    bb1 = np.empty((n_ret if keep else 0, n_ind))
    ww = np.empty((n_ret if keep_w else 0, y.size))
    theta_ll = theta.copy()
    k = 0
    for it in range(1, n_iter + 1):
        _sweep(y, t, offsets, theta, b0, b1, w, e, ones, flags, mask, bounds, tau, rng)
        if it > burn and (it - burn) % thin == 0:
            theta_ll[:] = theta
            if not flags[2]:
                theta_ll[5] = 0.0
            v = loglik_packed(y, t, offsets, theta_ll, b0, b1, w)
            if not np.isfinite(v):
                raise ValueError("non-finite log-likelihood")
            ll[k] = v
            if keep:
                th[k] = theta
                bb0[k] = b0
                bb1[k] = b1
            if keep_w:
                ww[k] = w
            k += 1
    return ll, th, bb0, bb1, ww


def _prepare(spec: ModelSpec, state: ParameterState, data: LongitudinalDataset):
    check_state(spec, state, data)
    s = spec.structure
    if s.ar_errors and s.latent_w:
        raise SamplerError("AR errors combined with a latent AR chain are not supported")
    theta, b0, b1, w = pack_state(state, data)
    lo = -1.0 + RHO_EPS
    if s.has_rho and not lo < theta[RHO] < -lo:
        theta[RHO] = float(np.clip(theta[RHO], lo * 0.999999, -lo * 0.999999))
    return theta, b0, b1, w


def gibbs_sweep(spec: ModelSpec, state: ParameterState, data: LongitudinalDataset, tau: float,
                rng: np.random.Generator) -> ParameterState:
    """One deterministic-scan Gibbs update of every parameter and random effect."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    theta, b0, b1, w = _prepare(spec, state, data)
    e = np.empty(data.n_observations)
    ones = np.ones(data.n_observations)
    try:
        _sweep(data.y, data.t, data.offsets, theta, b0, b1, w, e, ones, _flags(spec),
               _update_mask(spec), _bounds(spec), float(tau), rng)
    except (ValueError, ZeroDivisionError) as exc:
        raise SamplerError(f"{exc} (tau={tau})") from exc
    return unpack_state(spec.structure, theta, b0, b1, w)


def run_chain(spec: ModelSpec, data: LongitudinalDataset, tau: float, config: ChainConfig,
              init: ParameterState, rng: np.random.Generator, keep_states: bool = True,
              keep_w: bool = False) -> ChainTrace:
    """Run ``config.n_iterations`` sweeps at temperature ``tau``.

    The log-likelihood is recorded at every retained iteration. With
    ``keep_states=False`` only the log-likelihood trace and the final state
    are returned, which is all the evidence computation needs.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    theta, b0, b1, w = _prepare(spec, init, data)
    try:
        ll, th, bb0, bb1, ww = _run(
            data.y, data.t, data.offsets, theta, b0, b1, w, _flags(spec), _update_mask(spec),
            _bounds(spec), float(tau), config.n_iterations, config.burn_in, config.thinning,
            keep_states, keep_w and spec.structure.latent_w, rng)
    except (ValueError, ZeroDivisionError) as exc:
        raise SamplerError(f"{exc} (tau={tau}, structure={spec.structure.name})") from exc
    s = spec.structure
    return ChainTrace(
        spec=spec,
        loglik=ll,
        theta=th if keep_states else None,
        b0=bb0 if keep_states and s.has_b0 else None,
        b1=bb1 if keep_states and s.has_b1 else None,
        w=ww if keep_w and s.latent_w else None,
        ids=data.ids,
        final_state=unpack_state(s, theta, b0, b1, w),
    )
