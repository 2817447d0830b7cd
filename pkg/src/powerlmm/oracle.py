"""Brute-force log evidence for tiny datasets, by analytic marginalization plus quadrature.

Only the intercept-only and random-intercept structures are covered: their
random effects and beta0 integrate out in closed form, leaving at most a
two-dimensional integral over the standard deviations.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import integrate, optimize

from .data import LongitudinalDataset
from .models import PriorConfig

LOG_2PI = math.log(2.0 * math.pi)


class OracleError(RuntimeError):
    pass


def _suffstats(data: LongitudinalDataset):
    n = data.sizes.astype(float)
    means = np.array([ind.responses.mean() for ind in data.individuals])
    ss = np.array([np.sum((ind.responses - ind.responses.mean()) ** 2) for ind in data.individuals])
    return n, means, ss


def log_marginal_fixed(sigma: float, data: LongitudinalDataset, intercept_sd: float,
                       prior_mean: float = 0.0) -> float:
    """log p(y | sigma) with beta0 ~ N(prior_mean, intercept_sd^2) integrated out."""
    y = data.y - prior_mean
    n = y.size
    ybar = y.mean()
    ss = np.sum((y - ybar) ** 2)
    d = sigma**2 + n * intercept_sd**2
    return (-0.5 * n * LOG_2PI - (n - 1) * math.log(sigma) - 0.5 * math.log(d)
            - 0.5 * ss / sigma**2 - 0.5 * n * ybar**2 / d)


def log_marginal_random_intercept(sigma: float, sigma0: float, data: LongitudinalDataset,
                                  intercept_sd: float, prior_mean: float = 0.0) -> float:
    """log p(y | sigma, sigma0) with b0_i and beta0 integrated out.

    Per individual y_i | beta0 ~ N(beta0 1, sigma^2 I + sigma0^2 J), whose
    quadratic form splits into the within-individual sum of squares and the
    individual mean.
    """
    n, means, ss = _suffstats(data)
    means = means - prior_mean
    d = sigma**2 + n * sigma0**2
    a = n / d
    s2 = intercept_sd**2
    prec = 1.0 / s2 + a.sum()
    lin = np.sum(a * means)
    quad = np.sum(a * means**2)
    return float(np.sum(-0.5 * n * LOG_2PI - (n - 1) * math.log(sigma) - 0.5 * np.log(d) - 0.5 * ss / sigma**2)
                 - 0.5 * math.log(s2 * prec) - 0.5 * (quad - lin**2 / prec))


def _quad(f, a, b, points, epsrel):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.quad(f, a, b, points=points, epsabs=0.0, epsrel=epsrel, limit=500)
        except integrate.IntegrationWarning as exc:
            raise OracleError(f"quadrature did not converge: {exc}") from exc
    return val


def oracle_evidence_fixed(data: LongitudinalDataset, priors: PriorConfig, epsrel: float = 1e-8,
                          prior_mean: float = 0.0) -> float:
    """log m(y) for y_ij ~ N(beta0, sigma^2), beta0 ~ N(prior_mean, sd^2), sigma ~ U(0, upper)."""
    upper = priors.upper("sigma")
    sd = priors.intercept_sd

    def logf(s):
        return log_marginal_fixed(s, data, sd, prior_mean)

    res = optimize.minimize_scalar(lambda s: -logf(s), bounds=(upper * 1e-9, upper), method="bounded",
                                   options={"xatol": upper * 1e-10})
    mode, peak = float(res.x), -float(res.fun)
    val = _quad(lambda s: math.exp(logf(s) - peak) if s > 0 else 0.0, 0.0, upper,
                [mode] if 0 < mode < upper else None, epsrel)
    return peak + math.log(val) - math.log(upper)


def oracle_evidence_random_intercept(data: LongitudinalDataset, priors: PriorConfig, epsrel: float = 1e-8,
                                     prior_mean: float = 0.0) -> float:
    """log m(y) for y_ij ~ N(beta0 + b0_i, sigma^2), b0_i ~ N(0, sigma0^2).

    The remaining integral over (sigma, sigma0) is done by nested adaptive
    quadrature around the joint mode.
    """
    u_s, u_0 = priors.upper("sigma"), priors.upper("sigma0")
    sd = priors.intercept_sd

    def logf(s, s0):
        return log_marginal_random_intercept(s, s0, data, sd, prior_mean)

    # Coarse search for the peak, then a local refinement inside the box.
    gs = np.linspace(u_s * 1e-3, u_s, 60)
    g0 = np.linspace(u_0 * 1e-3, u_0, 60)
    vals = np.array([[logf(a, b) for b in g0] for a in gs])
    ia, ib = np.unravel_index(np.argmax(vals), vals.shape)
    res = optimize.minimize(lambda p: -logf(*p), x0=[gs[ia], g0[ib]], method="L-BFGS-B",
                            bounds=[(u_s * 1e-9, u_s), (u_0 * 1e-9, u_0)])
    peak = max(-float(res.fun), float(vals[ia, ib]))
    m_s, m_0 = float(res.x[0]), float(res.x[1])

    def inner(s):
        if s <= 0:
            return 0.0
        pts = [m_0] if 0 < m_0 < u_0 else None
        return _quad(lambda s0: math.exp(logf(s, s0) - peak) if s0 > 0 else 0.0, 0.0, u_0, pts, epsrel)

    val = _quad(inner, 0.0, u_s, [m_s] if 0 < m_s < u_s else None, epsrel)
    if not val > 0:
        raise OracleError("integral underflowed")
    return peak + math.log(val) - math.log(u_s) - math.log(u_0)
