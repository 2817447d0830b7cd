"""Log evidence by thermodynamic integration over a temperature ladder.

The derivative of log m(y | tau) in tau is the power-posterior expectation
of the log-likelihood, so log m(y) is the integral of that expectation over
[0, 1]. Expectations are estimated by Gibbs chains at each rung of the
ladder and the integral by the trapezoidal rule.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import LongitudinalDataset
from .kernels import ChainConfig, SamplerError, run_chain
from .models import ModelSpec, init_state

log = logging.getLogger(__name__)

REPORT_SCHEMA = "powerlmm.evidence/1"


@dataclass(frozen=True)
class TemperatureLadder:
    taus: np.ndarray
    exponent: float

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=float)
        if taus.size < 2 or taus[0] != 0.0 or taus[-1] != 1.0 or np.any(np.diff(taus) <= 0):
            raise ValueError("ladder must increase strictly from 0 to 1")
        object.__setattr__(self, "taus", taus)

    def __len__(self):
        return self.taus.size


def build_ladder(count: int, exponent: float = 5.0) -> TemperatureLadder:
    """tau_r = (r / (count - 1)) ** exponent, r = 0..count-1."""
    if count < 2:
        raise ValueError("a ladder needs at least two temperatures")
    if not exponent > 0:
        raise ValueError("exponent must be positive")
    r = np.arange(count, dtype=float)
    taus = (r / (count - 1)) ** exponent
    taus[-1] = 1.0
    return TemperatureLadder(taus, float(exponent))


@dataclass(frozen=True)
class TemperatureRecord:
    tau: float
    mean_loglik: float
    var_loglik: float
    ess: float

    @property
    def stderr(self) -> float:
        return math.sqrt(self.var_loglik / self.ess) if self.ess > 0 else math.inf


@dataclass
class EvidenceEstimate:
    log_evidence: float
    records: list
    model_id: str = ""
    fingerprint: str = ""


@dataclass
class ReplicateSummary:
    replicates: np.ndarray
    estimates: list = field(default_factory=list, repr=False)

    @property
    def mean(self) -> float:
        return float(np.mean(self.replicates))

    @property
    def sd(self) -> float:
        """Sample sd (ddof=1); 0.0 for a single replicate, see ``sd_available``."""
        if len(self.replicates) < 2:
            return 0.0
        return float(np.std(self.replicates, ddof=1))

    @property
    def sd_available(self) -> bool:
        return len(self.replicates) >= 2


def effective_sample_size(x) -> float:
    """ESS via Geyer's initial positive sequence of paired autocorrelations."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    xc = x - x.mean()
    var = np.dot(xc, xc) / n
    if var <= 0 or not np.isfinite(var):
        return float(n)
    m = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n] / n
    rho = acov / acov[0]
    tau_int = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau_int += 2.0 * pair
    tau_int = max(tau_int, 1.0 / n)
    return float(min(n / tau_int, n))


def _record(tau: float, loglik: np.ndarray) -> TemperatureRecord:
    var = float(np.var(loglik, ddof=1)) if loglik.size > 1 else 0.0
    return TemperatureRecord(float(tau), float(np.mean(loglik)), var, effective_sample_size(loglik))


def model_code(model_id: str) -> int:
    return zlib.crc32(model_id.encode("utf-8"))


def chain_stream(master_seed: int, model_id: str, replicate: int, temp_index: int) -> np.random.Generator:
    """Independent stream for one chain; temp_index 0 is reserved for the initial state."""
    ss = np.random.SeedSequence(entropy=int(master_seed),
                                spawn_key=(model_code(model_id), int(replicate), int(temp_index)))
    return np.random.default_rng(ss)


def _cold_chain(args):
    spec, data, tau, config, seed, model_id, replicate, r = args
    rng = chain_stream(seed, model_id, replicate, r + 1)
    init = init_state(spec, data, rng)
    trace = run_chain(spec, data, tau, config, init, rng, keep_states=False)
    return _record(tau, trace.loglik)


def power_expectations(spec: ModelSpec, data: LongitudinalDataset, ladder: TemperatureLadder,
                       config: ChainConfig, rng: np.random.Generator | None = None, *,
                       model_id: str = "", replicate: int = 0, warm_start: bool = True,
                       workers: int = 1) -> list[TemperatureRecord]:
    """Mean and variance of the log-likelihood under each power posterior.

    With ``warm_start`` (default) the chain at each temperature starts from
    the final state of the previous one; the first chain starts from a prior
    draw. Every chain has its own stream derived from ``config.seed``,
    ``model_id``, ``replicate`` and the rung index. Passing ``rng`` instead
    uses that single stream for everything, sequentially.
    """
    records = []
    if warm_start or rng is not None:
        own = rng is None
        r0 = chain_stream(config.seed, model_id, replicate, 0) if own else rng
        state = init_state(spec, data, r0)
        for r, tau in enumerate(ladder.taus):
            chain_rng = chain_stream(config.seed, model_id, replicate, r + 1) if own else rng
            if not warm_start:
                state = init_state(spec, data, chain_rng)
            try:
                trace = run_chain(spec, data, float(tau), config, state, chain_rng, keep_states=False)
            except SamplerError as exc:
                raise SamplerError(f"chain failed at rung {r} (tau={tau:.6g}): {exc}") from exc
            state = trace.final_state
            records.append(_record(tau, trace.loglik))
        return records

    jobs = [(spec, data, float(tau), config, config.seed, model_id, replicate, r)
            for r, tau in enumerate(ladder.taus)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_cold_chain, jobs))
    else:
        records = [_cold_chain(j) for j in jobs]
    # Results come back in ladder order regardless of completion order.
    return records


FIRST_PANEL_RULES = ("right", "trapezoid")


def trapezoid_log_evidence(records: Sequence[TemperatureRecord], first_panel: str = "trapezoid") -> float:
    """Trapezoid rule for the integral of mean_loglik over tau in [0, 1].

    ``first_panel="right"`` uses the height at tau_1 for the panel [0, tau_1]
    instead of the average of both ends. Under uniform priors on the
    standard deviations the tau = 0 expectation is -inf, so its Monte Carlo
    average has unbounded variance; the right-endpoint panel keeps the
    estimate finite-variance while changing it by O(tau_1).
    """
    taus = np.array([r.tau for r in records], dtype=float)
    means = np.array([r.mean_loglik for r in records], dtype=float)
    if taus.size < 2 or np.any(np.diff(taus) <= 0):
        raise ValueError("records must be sorted by strictly increasing tau")
    if taus[0] != 0.0 or taus[-1] != 1.0:
        raise ValueError("records must span tau = 0 to tau = 1")
    if first_panel not in FIRST_PANEL_RULES:
        raise ValueError(f"first_panel must be one of {FIRST_PANEL_RULES}")
    if first_panel == "right":
        means = means.copy()
        means[0] = means[1]
    return float(np.sum(np.diff(taus) * 0.5 * (means[:-1] + means[1:])))


def fingerprint(spec: ModelSpec, data: LongitudinalDataset, ladder: TemperatureLadder,
                config: ChainConfig, **extra) -> str:
    payload = {
        "structure": spec.structure.name,
        "priors": {"intercept_sd": spec.priors.intercept_sd, "sd_upper": spec.priors.sd_upper,
                   "overrides": dict(sorted(spec.priors.overrides.items()))},
        "fixed": sorted(spec.fixed),
        "data": hashlib.sha256(data.y.tobytes() + data.t.tobytes() + data.offsets.tobytes()).hexdigest(),
        "ladder": {"count": len(ladder), "exponent": ladder.exponent},
        "chain": asdict(config),
        **extra,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def estimate_log_evidence(spec: ModelSpec, data: LongitudinalDataset, ladder: TemperatureLadder,
                          config: ChainConfig, rng: np.random.Generator | None = None, *,
                          model_id: str = "", replicate: int = 0, warm_start: bool = True,
                          workers: int = 1, first_panel: str = "right") -> EvidenceEstimate:
    records = power_expectations(spec, data, ladder, config, rng, model_id=model_id,
                                 replicate=replicate, warm_start=warm_start, workers=workers)
    value = trapezoid_log_evidence(records, first_panel)
    if not math.isfinite(value):
        raise SamplerError("log evidence is not finite")
    return EvidenceEstimate(value, records, model_id or spec.structure.name,
                            fingerprint(spec, data, ladder, config, replicate=replicate,
                                        warm_start=warm_start, first_panel=first_panel))


def _replicate_job(args):
    spec, data, ladder, config, model_id, k, warm_start, first_panel = args
    est = estimate_log_evidence(spec, data, ladder, config, model_id=model_id, replicate=k,
                                warm_start=warm_start, first_panel=first_panel)
    log.info("%s replicate %d: log evidence %.4f", model_id, k, est.log_evidence)
    return est


def replicate_evidence(spec: ModelSpec, data: LongitudinalDataset, ladder: TemperatureLadder,
                       config: ChainConfig, replicates: int = 1, master_seed: int | None = None, *,
                       model_id: str = "", warm_start: bool = True, workers: int = 1,
                       first_panel: str = "right") -> ReplicateSummary:
    """Repeat the estimate with independent streams; replicate k uses spawn key k."""
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    if master_seed is not None and master_seed != config.seed:
        config = ChainConfig(config.n_iterations, config.burn_in, config.thinning, int(master_seed))
    model_id = model_id or spec.structure.name
    jobs = [(spec, data, ladder, config, model_id, k, warm_start, first_panel) for k in range(replicates)]
    if workers > 1 and replicates > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            estimates = list(pool.map(_replicate_job, jobs))
    else:
        estimates = [_replicate_job(j) for j in jobs]
    return ReplicateSummary(np.array([e.log_evidence for e in estimates]), estimates)


@dataclass(frozen=True)
class BayesFactor:
    log_bf: float
    bf: float | None  # None when exp(log_bf) overflows

    def __float__(self):
        return self.bf if self.bf is not None else math.inf


def bayes_factor(log_m1: float, log_m2: float) -> BayesFactor:
    """B_12 = m_1 / m_2 from log evidences."""
    if not (math.isfinite(log_m1) and math.isfinite(log_m2)):
        raise ValueError("log evidences must be finite")
    lb = float(log_m1 - log_m2)
    try:
        bf = math.exp(lb)
    except OverflowError:
        bf = None
    return BayesFactor(lb, bf)


# --------------------------------------------------------------------------
# Evidence report files

def write_report(path, summary: ReplicateSummary, *, model_id: str, spec: ModelSpec,
                 ladder: TemperatureLadder, config: ChainConfig, data_label: str = "",
                 config_fingerprint: str = "", first_panel: str = "right") -> dict:
    """Write a JSON evidence report and return the written document.

    Layout: ``schema``, run metadata, ``replicates`` (one entry per
    replicate with its per-temperature ``records``) and a ``summary`` footer
    with ``log_evidence`` (replicate mean), ``sd`` (null for one replicate)
    and ``n_replicates``.
    """
    doc = {
        "schema": REPORT_SCHEMA,
        "model_id": model_id,
        "structure": spec.structure.name,
        "priors": {"intercept_sd": spec.priors.intercept_sd, "sd_upper": spec.priors.sd_upper,
                   "overrides": dict(spec.priors.overrides)},
        "data": data_label,
        "ladder": {"count": len(ladder), "exponent": ladder.exponent, "first_panel": first_panel},
        "chain": asdict(config),
        "config_fingerprint": config_fingerprint,
        "replicates": [
            {
                "log_evidence": est.log_evidence,
                "fingerprint": est.fingerprint,
                "records": [asdict(r) for r in est.records],
            }
            for est in summary.estimates
        ],
        "summary": {
            "log_evidence": summary.mean,
            "sd": summary.sd if summary.sd_available else None,
            "n_replicates": int(len(summary.replicates)),
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1))
    return doc


def read_report(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != REPORT_SCHEMA:
        raise ValueError(f"{path}: unsupported report schema {doc.get('schema')!r}, expected {REPORT_SCHEMA!r}")
    return doc


def compare_reports(docs: Sequence[dict]) -> dict:
    """Ranking by mean log evidence plus every pairwise Bayes factor."""
    if len(docs) < 2:
        raise ValueError("need at least two reports")
    entries = [(d["model_id"], float(d["summary"]["log_evidence"])) for d in docs]
    ranking = sorted(entries, key=lambda e: -e[1])
    pairs = []
    for a in range(len(entries)):
        for b in range(a + 1, len(entries)):
            bf = bayes_factor(entries[a][1], entries[b][1])
            pairs.append({"model_1": entries[a][0], "model_2": entries[b][0],
                          "log_bf": bf.log_bf, "bf": bf.bf})
    return {"ranking": [{"model_id": m, "log_evidence": v} for m, v in ranking], "pairs": pairs}
