"""Command-line front end.

Subcommands: ``estimate`` (fit parameters from a histogram log),
``design`` (one quantizer/rule design pass at the configured truth),
``trace`` (single seeded feedback run with full stage logs), ``rmse``
and ``roc`` (Monte-Carlo experiments). Tabular results go to ``--out``
or stdout as CSV; run metadata goes to stderr so redirected output
stays byte-stable. Exit codes: 0 success, 2 configuration error, 3
experiment failure thresholds exceeded.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from . import harness
from .config import ConfigError, load_config
from .design import bank_metrics, optimize_quantizers
from .estimation import fisher_crlb, fisher_info, mle_fit
from .harness import ExperimentFailure
from .quantizers import _bank_to_json, read_histogram_log, write_histogram_log


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="detfuse",
        description="distributed detection with dependent sensors: "
        "estimation, design, and Monte-Carlo experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, seed=True, replicates=False, fmt=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="TOML experiment config")
        p.add_argument("--out", help="output path (default: stdout)")
        if seed:
            p.add_argument("--seed", type=int, help="override the configured seed")
        if replicates:
            p.add_argument(
                "--replicates", type=int, help="override the configured replicate count"
            )
        if fmt:
            p.add_argument(
                "--format", choices=["csv"], default="csv", help="output format"
            )
        return p

    p = add("estimate", "fit free parameters from a histogram log")
    p.add_argument("--hist", required=True, help="histogram log (JSON lines)")

    add("design", "one quantizer and fusion-rule design pass at the truth", seed=False)

    p = add("trace", "single seeded feedback run with per-stage logs")
    p.add_argument("--hist-out", help="also write the accumulated histogram log here")

    add("rmse", "estimation-error experiment", replicates=True, fmt=True)
    add("roc", "detector operating-point experiment", replicates=True, fmt=True)
    return parser


def _emit(text: str, out_path) -> None:
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cmd_estimate(cfg, args) -> int:
    hist = read_histogram_log(args.hist)
    opts = cfg.mle if args.seed is None else replace(cfg.mle, seed=args.seed)
    fit = mle_fit(cfg.scenario, hist, opts)
    crlb_sqrt = None
    info = fisher_info(
        cfg.scenario,
        fit.estimate,
        [g.bank for g in hist.groups],
        weights=[g.n / hist.n_total for g in hist.groups],
    )
    cov = fisher_crlb(info, hist.n_total)
    if cov is not None:
        crlb_sqrt = dict(
            zip(fit.free_names, [float(v) for v in np.sqrt(np.diag(cov))])
        )
    est = fit.estimate
    out = {
        "estimate": dict(zip(est.names(), [float(v) for v in est.values()])),
        "free": list(fit.free_names),
        "log_likelihood": fit.log_likelihood,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "restarts_used": fit.restarts_used,
        "grad_norm": fit.grad_norm,
        "n_total": hist.n_total,
        "crlb_sqrt": crlb_sqrt,
    }
    _emit(json.dumps(out, indent=2) + "\n", args.out)
    return 0


def _cmd_design(cfg, args) -> int:
    state = optimize_quantizers(
        cfg.scenario,
        cfg.scenario.params,
        cfg.init_bank(),
        cfg.init_rule(),
        cfg.costs,
    )
    metrics = bank_metrics(
        cfg.scenario, cfg.scenario.params, state.bank, state.rule, cfg.costs
    )
    out = {
        "converged": state.converged,
        "n_sweeps": state.n_sweeps,
        "cost_trace": [float(c) for c in state.cost_trace],
        "rule": state.rule.to_hex(),
        "quantizers": _bank_to_json(state.bank),
        "metrics": {
            "p_false_alarm": metrics.p_false_alarm,
            "p_detect": metrics.p_detect,
            "bayes_cost": metrics.bayes_cost,
        },
    }
    _emit(json.dumps(out, indent=2) + "\n", args.out)
    return 0


def _cmd_trace(cfg, args) -> int:
    records = harness.run_trace(cfg, seed=args.seed)
    harness.write_stage_trace(records, args.out if args.out else sys.stdout)
    if args.hist_out:
        write_histogram_log(harness.trace_histogram(records), args.hist_out)
    return 0


def _cmd_experiment(cfg, args, runner) -> int:
    report = runner(cfg, seed=args.seed, replicates=args.replicates)
    if args.out:
        harness.write_csv(report, args.out)
    else:
        harness.write_csv(report, sys.stdout)
    meta = dict(report.metadata)
    meta["kind"] = report.kind
    print(json.dumps(meta), file=sys.stderr)
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "estimate":
            return _cmd_estimate(cfg, args)
        if args.command == "design":
            return _cmd_design(cfg, args)
        if args.command == "trace":
            return _cmd_trace(cfg, args)
        if args.command == "rmse":
            return _cmd_experiment(cfg, args, harness.run_rmse_experiment)
        return _cmd_experiment(cfg, args, harness.run_roc_experiment)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ExperimentFailure as exc:
        print(f"experiment failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
