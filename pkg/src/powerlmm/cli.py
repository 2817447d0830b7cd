"""Command line front end.

    powerlmm simulate --study 1 --seed 3 --out data.csv
    powerlmm evidence --config run.toml [--out report.json]
    powerlmm compare a.json b.json [--out table.csv]
    powerlmm fit --config run.toml [--out outdir/]

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.
Environment: POWERLMM_THREADS (worker processes), POWERLMM_LOG_LEVEL.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import data as data_mod
from .kernels import ChainConfig
from .models import ModelError, ModelSpec, PriorConfig, parse_structure
from .oracle import oracle_evidence_fixed, oracle_evidence_random_intercept
from .report import (
    acf_band, fit_posterior, summarize_parameters, summarize_random_effects,
    write_acf_band, write_parameter_table, write_random_effects,
)
from .thermo import FIRST_PANEL_RULES, build_ladder, compare_reports, read_report, replicate_evidence, write_report

log = logging.getLogger("powerlmm")


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class RunConfig:
    path: Path
    raw: dict
    data: data_mod.LongitudinalDataset
    model_id: str
    spec: ModelSpec
    chain: ChainConfig
    ladder_count: int
    ladder_exponent: float
    first_panel: str
    replicates: int
    warm_start: bool
    threads: int
    report: Path | None
    fit_dir: Path | None
    max_lag: int
    fingerprint: str


def _get(tbl, key, kind, problems, where, default=None, required=False):
    if key not in tbl:
        if required:
            problems.append(f"{where}.{key}: required")
        return default
    v = tbl[key]
    if kind is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if not isinstance(v, kind) or (kind is int and isinstance(v, bool)):
        problems.append(f"{where}.{key}: expected {kind.__name__}, got {type(v).__name__}")
        return default
    return v


def load_config(path, seed: int | None = None, threads: int | None = None) -> RunConfig:
    """Parse and validate a TOML run configuration.

    Relative paths resolve against the configuration file's directory.
    Every problem found is reported at once through :class:`ConfigError`.
    """
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"]) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"{path}: {exc}"]) from None
    base = path.parent
    problems: list[str] = []

    dtbl = raw.get("data", {})
    dataset = None
    if not isinstance(dtbl, dict) or not dtbl:
        problems.append("data: table required (path = ... or simulate = 1|2)")
    else:
        sim = _get(dtbl, "simulate", int, problems, "data")
        dpath = _get(dtbl, "path", str, problems, "data")
        if sim is None and dpath is None:
            problems.append("data: one of 'path' or 'simulate' is required")
        elif sim is not None and sim not in (1, 2):
            problems.append("data.simulate: must be 1 or 2")
        elif sim is not None:
            sim_seed = _get(dtbl, "seed", int, problems, "data", default=0)
            dataset = (data_mod.simulate_study1 if sim == 1 else data_mod.simulate_study2)(sim_seed)
        else:
            mapping = dtbl.get("mapping", {})
            try:
                dataset = data_mod.load_csv(base / dpath, mapping)
            except data_mod.DataError as exc:
                problems.append(f"data.path: {exc}")

    mtbl = raw.get("model", {})
    model_id = _get(mtbl, "id", str, problems, "model", required=True)
    structure_name = _get(mtbl, "structure", str, problems, "model", default=model_id)
    structure = None
    if structure_name is not None:
        try:
            structure = parse_structure(structure_name)
        except ModelError as exc:
            problems.append(f"model.structure: {exc}")

    ptbl = raw.get("priors", {})
    priors = None
    try:
        priors = PriorConfig(
            intercept_sd=_get(ptbl, "intercept_sd", float, problems, "priors", default=10.0),
            sd_upper=_get(ptbl, "sd_upper", float, problems, "priors", default=10.0),
            overrides={k: float(v) for k, v in ptbl.get("overrides", {}).items()},
        )
    except (ModelError, TypeError, ValueError) as exc:
        problems.append(f"priors: {exc}")

    ltbl = raw.get("ladder", {})
    count = _get(ltbl, "count", int, problems, "ladder", default=200)
    exponent = _get(ltbl, "exponent", float, problems, "ladder", default=5.0)
    if count is not None and count < 2:
        problems.append("ladder.count: must be >= 2")
    if exponent is not None and not exponent > 0:
        problems.append("ladder.exponent: must be positive")
    first_panel = _get(ltbl, "first_panel", str, problems, "ladder", default="right")
    if first_panel not in FIRST_PANEL_RULES:
        problems.append(f"ladder.first_panel: must be one of {FIRST_PANEL_RULES}")

    ctbl = raw.get("chain", {})
    iterations = _get(ctbl, "iterations", int, problems, "chain", required=True)
    burn = _get(ctbl, "burn_in", int, problems, "chain")
    thin = _get(ctbl, "thinning", int, problems, "chain", default=1)
    run_seed = seed if seed is not None else _get(raw, "seed", int, problems, "", default=0)
    chain = None
    if iterations is not None:
        if burn is None:
            burn = iterations // 10
        try:
            chain = ChainConfig(iterations, burn, thin or 1, run_seed)
        except ValueError as exc:
            problems.append(f"chain: {exc}")

    replicates = _get(raw, "replicates", int, problems, "", default=1)
    if replicates is not None and replicates < 1:
        problems.append("replicates: must be >= 1")
    warm = _get(raw, "warm_start", bool, problems, "", default=True)
    if threads is None:
        env = os.environ.get("POWERLMM_THREADS")
        threads = int(env) if env else _get(raw, "threads", int, problems, "", default=1)

    otbl = raw.get("output", {})
    report = _get(otbl, "report", str, problems, "output")
    fit_dir = _get(otbl, "fit_dir", str, problems, "output")
    max_lag = _get(raw.get("fit", {}), "max_lag", int, problems, "fit", default=20)

    if problems:
        raise ConfigError(problems)
    spec = ModelSpec(structure, priors)
    fp = hashlib.sha256(json.dumps({**raw, "seed": run_seed}, sort_keys=True, default=str).encode()).hexdigest()[:16]
    return RunConfig(path, raw, dataset, model_id, spec, chain, count, exponent, first_panel, replicates, warm,
                     threads, base / report if report else None, base / fit_dir if fit_dir else None,
                     max_lag, fp)


def cmd_simulate(args) -> int:
    fn = data_mod.simulate_study1 if args.study == 1 else data_mod.simulate_study2
    ds = fn(args.seed)
    try:
        data_mod.write_csv(ds, args.out)
    except OSError as exc:
        log.error("cannot write %s: %s", args.out, exc)
        return 1
    print(f"study {args.study}, seed {args.seed}: N={ds.n_individuals}, n_obs={ds.n_observations} -> {args.out}")
    return 0


def cmd_evidence(args) -> int:
    cfg = load_config(args.config, seed=args.seed, threads=args.threads)
    out = Path(args.out) if args.out else cfg.report or cfg.path.with_suffix(".evidence.json")
    ladder = build_ladder(cfg.ladder_count, cfg.ladder_exponent)
    summary = replicate_evidence(cfg.spec, cfg.data, ladder, cfg.chain, cfg.replicates,
                                 model_id=cfg.model_id, warm_start=cfg.warm_start, workers=cfg.threads,
                                 first_panel=cfg.first_panel)
    write_report(out, summary, model_id=cfg.model_id, spec=cfg.spec, ladder=ladder, config=cfg.chain,
                 data_label=cfg.data.label, config_fingerprint=cfg.fingerprint, first_panel=cfg.first_panel)
    sd = f"{summary.sd:.3f}" if summary.sd_available else "n/a"
    print(f"{cfg.model_id}: log evidence {summary.mean:.4f} (sd {sd}, {len(summary.replicates)} replicate(s)) -> {out}")
    return 0


def cmd_compare(args) -> int:
    try:
        docs = [read_report(p) for p in args.reports]
    except ValueError as exc:
        log.error("%s", exc)
        return 2
    table = compare_reports(docs)
    lines = ["rank,model_id,log_evidence"]
    lines += [f"{k + 1},{r['model_id']},{r['log_evidence']:.6f}" for k, r in enumerate(table["ranking"])]
    lines.append("")
    lines.append("model_1,model_2,log_bf,bf")
    for p in table["pairs"]:
        bf = "overflow" if p["bf"] is None else f"{p['bf']:.6g}"
        lines.append(f"{p['model_1']},{p['model_2']},{p['log_bf']:.6f},{bf}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def cmd_fit(args) -> int:
    cfg = load_config(args.config, seed=args.seed, threads=args.threads)
    out = Path(args.out) if args.out else cfg.fit_dir or cfg.path.parent / f"{cfg.path.stem}_fit"
    out.mkdir(parents=True, exist_ok=True)
    trace = fit_posterior(cfg.spec, cfg.data, cfg.chain, model_id=cfg.model_id)
    table = summarize_parameters(trace)
    write_parameter_table(out / "parameters.csv", table)
    s = cfg.spec.structure
    if s.has_b0 or s.has_b1:
        write_random_effects(out / "random_effects.csv", summarize_random_effects(trace))
    if s.has_rho:
        write_acf_band(out / "acf.csv", acf_band(trace, cfg.max_lag))
    else:
        log.info("%s has no rho: acf.csv not written", s.name)
    (out / "fingerprint.txt").write_text(cfg.fingerprint + "\n")
    for k, v in table.items():
        print(f"{k:8s} mean {v['mean']:.4f} sd {v['sd']:.4f} [{v['q0.025']:.4f}, {v['q0.975']:.4f}]")
    return 0


def cmd_oracle(args) -> int:
    cfg = load_config(args.config)
    s = cfg.spec.structure.name
    if s == "S1_FIXED":
        v = oracle_evidence_fixed(cfg.data, cfg.spec.priors)
    elif s == "S1_RANDINT":
        v = oracle_evidence_random_intercept(cfg.data, cfg.spec.priors)
    else:
        log.error("oracle covers S1_FIXED and S1_RANDINT only, not %s", s)
        return 2
    print(f"{cfg.model_id}: oracle log evidence {v:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="powerlmm", description="Power-posterior evidence for longitudinal LMMs")
    p.add_argument("--verbose", "-v", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="{simulate,evidence,compare,fit}")

    s = sub.add_parser("simulate", help="write a simulated study dataset")
    s.add_argument("--study", type=int, choices=(1, 2), required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    for name, func, helptext in (("evidence", cmd_evidence, "estimate log evidence"),
                                 ("fit", cmd_fit, "fit at tau=1 and write summaries")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--config", required=True)
        e.add_argument("--out")
        e.add_argument("--seed", type=int)
        e.add_argument("--threads", type=int)
        e.set_defaults(func=func)

    c = sub.add_parser("compare", help="rank evidence reports and compute Bayes factors")
    c.add_argument("reports", nargs="+")
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)

    o = sub.add_parser("oracle")
    o.add_argument("--config", required=True)
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = "DEBUG" if args.verbose else os.environ.get("POWERLMM_LOG_LEVEL", "WARNING")
    logging.basicConfig(level=level.upper(), format="%(levelname)s %(name)s: %(message)s")
    if args.command == "compare" and len(args.reports) < 2:
        parser.error("compare needs at least two report files")
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level runtime failure
        log.error("%s: %s", type(exc).__name__, exc)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
