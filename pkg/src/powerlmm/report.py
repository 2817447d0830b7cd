"""Posterior fit at tau = 1 and its summaries."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .data import LongitudinalDataset
from .kernels import ChainConfig, ChainTrace, run_chain
from .models import ModelSpec, init_state
from .thermo import chain_stream

QUANTILES = (0.025, 0.975)


def fit_posterior(spec: ModelSpec, data: LongitudinalDataset, config: ChainConfig,
                  rng: np.random.Generator | None = None, model_id: str = "fit",
                  keep_w: bool = False) -> ChainTrace:
    """Sample the ordinary posterior, starting from a prior draw."""
    if rng is None:
        rng = chain_stream(config.seed, model_id, 0, 0)
    init = init_state(spec, data, rng)
    return run_chain(spec, data, 1.0, config, init, rng, keep_states=True, keep_w=keep_w)


def _summary(x: np.ndarray) -> dict:
    # Linear interpolation between order statistics (numpy's default).
    lo, hi = np.quantile(x, QUANTILES)
    return {
        "mean": float(np.mean(x)),
        "sd": float(np.std(x, ddof=1)) if x.size > 1 else 0.0,
        "q0.025": float(lo),
        "q0.975": float(hi),
    }


def summarize_parameters(trace: ChainTrace) -> dict[str, dict]:
    if len(trace) == 0:
        raise ValueError("empty trace")
    return {name: _summary(trace.parameter(name)) for name in trace.spec.structure.parameters}


def summarize_random_effects(trace: ChainTrace, effects=None) -> dict[str, dict]:
    """Posterior means of b0_i / b1_i keyed by individual id."""
    owned = [e for e in ("b0", "b1") if e in trace.spec.structure.random_effects]
    effects = tuple(effects) if effects is not None else tuple(owned)
    missing = [e for e in effects if e not in owned]
    if not effects or missing:
        raise ValueError(f"{trace.spec.structure.name} has no random effect(s) {missing or ['b0', 'b1']}")
    if len(trace) == 0:
        raise ValueError("empty trace")
    means = {e: getattr(trace, e).mean(axis=0) for e in effects}
    return {ind: {e: float(means[e][k]) for e in effects} for k, ind in enumerate(trace.ids)}


def acf_band(trace: ChainTrace, max_lag: int) -> list[dict]:
    """Posterior mean and 95% interval of rho^h, h = 0..max_lag."""
    if not trace.spec.structure.has_rho:
        raise ValueError(f"{trace.spec.structure.name} has no autoregressive parameter")
    if max_lag < 1:
        raise ValueError("max_lag must be positive")
    rho = trace.parameter("rho")
    out = []
    for h in range(max_lag + 1):
        v = np.ones_like(rho) if h == 0 else rho**h
        lo, hi = np.quantile(v, QUANTILES)
        out.append({"lag": h, "mean": float(v.mean()), "q0.025": float(lo), "q0.975": float(hi)})
    return out


def _write_rows(path, header, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_parameter_table(path, table: dict[str, dict]) -> None:
    cols = ["mean", "sd", "q0.025", "q0.975"]
    _write_rows(path, ["parameter"] + cols, [[k] + [repr(v[c]) for c in cols] for k, v in table.items()])


def write_random_effects(path, effects: dict[str, dict]) -> None:
    keys = sorted({k for v in effects.values() for k in v})
    _write_rows(path, ["id"] + [f"mean_{k}" for k in keys],
                [[i] + [repr(v[k]) for k in keys] for i, v in effects.items()])


def write_acf_band(path, band: list[dict]) -> None:
    cols = ["lag", "mean", "q0.025", "q0.975"]
    _write_rows(path, cols, [[r["lag"]] + [repr(r[c]) for c in cols[1:]] for r in band])
