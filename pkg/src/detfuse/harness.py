"""Monte-Carlo experiment harness: seeded data generation, the RMSE,
estimator-efficiency, and ROC suites, single-run stage traces, and
CSV/JSONL reporting.

Every experiment is driven by an `ExperimentConfig` and a base seed.
Replicate r uses seed ``base_seed XOR r``; named substreams inside a
replicate come from ``numpy.random.default_rng([seed, tag, ...])``, so
results are bit-reproducible and independent of execution order.
Replicates run serially in one process (aggregation sorts rows before
writing, so the output would be identical under any schedule).

Reports carry their tabular rows plus metadata (config hash, seed,
runtime). CSV output contains only the header and rows: everything
runtime-dependent stays out of the file, which is what makes reruns
byte-identical.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, replace

import numpy as np

from .config import ConfigError, ExperimentConfig
from .copulas import CopulaFamily, CopulaModel
from .design import (
    CostCoefficients,
    FusionRule,
    bank_metrics,
    empirical_rates,
    optimize_quantizers_multistart,
    run_feedback_loop,
)
from .estimation import FisherInfo, fisher_crlb, fisher_info, mle_fit
from .models import HypothesisParams, MixtureModel, ParamVector, Scenario
from .quantizers import (
    HistogramGroup,
    QuantizedHistogram,
    QuantizerBank,
    _bank_from_json,
    _bank_to_json,
    count_outcomes,
)


class ExperimentFailure(Exception):
    """An experiment exceeded its failure thresholds (e.g. too many
    non-converged fits to trust the aggregates)."""


# Fraction of replicates allowed to be dropped for failed fits before the
# whole experiment is declared unusable.
MAX_FAILURE_FRACTION = 0.05


@dataclass
class ExperimentReport:
    """Tabular experiment result plus run metadata (not serialized)."""

    kind: str
    columns: tuple
    rows: list
    metadata: dict


def generate_observations(model, n: int, rng: np.random.Generator):
    """Draw joint observations from a hypothesis or mixture model.

    Returns
    -------
    (y, labels)
        labels is None for a single-hypothesis model and the 0/1 latent
        hypothesis indicators for a mixture.
    """
    if isinstance(model, MixtureModel):
        return model.sample(n, rng)
    return model.sample(n, rng), None


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(report: ExperimentReport, path) -> None:
    """Write header plus rows, RFC-4180 (CRLF, minimal quoting).

    Floats are rendered with shortest round-trip repr, so identical
    results are identical bytes.
    """
    close = False
    if hasattr(path, "write"):
        fh = path
    else:
        fh = open(path, "w", encoding="utf-8", newline="")
        close = True
    try:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(report.columns)
        for row in report.rows:
            writer.writerow([_cell(v) for v in row])
    finally:
        if close:
            fh.close()


def _require(section, name: str):
    if section is None:
        raise ConfigError(f"config has no [{name}] section")
    return section


def run_trace(cfg: ExperimentConfig, seed=None) -> list:
    """One seeded feedback run from the config's initial design.

    Returns the per-stage records (see `run_feedback_loop`).
    """
    sec = _require(cfg.trace, "trace")
    return run_feedback_loop(
        cfg.scenario,
        cfg.init_bank(),
        cfg.init_rule(),
        cfg.costs,
        sec.samples_per_stage,
        seed=sec.seed if seed is None else seed,
        mle_opts=cfg.mle,
        warm_start_chain=sec.warm_start_chain,
        design_restarts=sec.design_restarts,
    )


def trace_histogram(records) -> QuantizedHistogram:
    """The accumulated histogram of a feedback run's stages."""
    return QuantizedHistogram([rec.group for rec in records])


def _metrics_json(m) -> dict:
    return {
        "p_false_alarm": m.p_false_alarm,
        "p_detect": m.p_detect,
        "bayes_cost": m.bayes_cost,
    }


def _bank_changes(prev: QuantizerBank, new: QuantizerBank) -> list:
    changes = []
    for i, (a, b) in enumerate(zip(prev.bits, new.bits)):
        for t, m in np.argwhere(a != b):
            changes.append([i, int(t), int(m), int(b[t, m])])
    return changes


def write_stage_trace(records, path) -> None:
    """Line-delimited JSON stage trace.

    The first stage serializes its designed quantizer bank in full;
    later stages record only the changed bits relative to the previous
    stage's design (sensor, bit row, cell, new value), mirroring a
    feedback link that transmits only quantizer updates.
    """
    close = False
    if hasattr(path, "write"):
        fh = path
    else:
        fh = open(path, "w", encoding="utf-8")
        close = True
    try:
        prev_bank = None
        for rec in records:
            est = rec.estimate
            obj = {
                "stage": rec.stage,
                "n": rec.n,
                "estimate": dict(zip(est.names(), [float(v) for v in est.values()])),
                "free": list(est.free),
                "converged": bool(rec.fit.converged),
                "used_fallback": bool(rec.used_fallback),
                "log_likelihood": float(rec.fit.log_likelihood),
                "grad_norm": float(rec.fit.grad_norm),
                "n_sweeps": rec.design.n_sweeps,
                "cost_trace": [float(c) for c in rec.design.cost_trace],
                "rule": rec.design.rule.to_hex(),
                "metrics_design": _metrics_json(rec.metrics_design),
                "metrics_true": _metrics_json(rec.metrics_true),
            }
            if prev_bank is None:
                obj["quantizers"] = _bank_to_json(rec.design.bank)
            else:
                obj["quantizer_changes"] = _bank_changes(prev_bank, rec.design.bank)
            prev_bank = rec.design.bank
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")
    finally:
        if close:
            fh.close()


def read_stage_trace(path) -> list:
    """Read a stage trace back into dict records.

    Each record carries the parsed JSON fields plus reconstructed "bank"
    (QuantizerBank) and "fusion_rule" (FusionRule) objects, with the
    delta encoding resolved against the preceding stages.
    """
    out = []
    bank = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if "quantizers" in rec:
                bank = _bank_from_json(rec["quantizers"])
            else:
                if bank is None:
                    raise ValueError(
                        "stage trace starts with a delta record; full "
                        "quantizers must come first"
                    )
                bits = [b.copy() for b in bank.bits]
                for sensor, t, m, val in rec["quantizer_changes"]:
                    bits[sensor][t, m] = val
                bank = QuantizerBank(bank.grids, bits)
            rec["bank"] = bank
            rec["fusion_rule"] = FusionRule.from_hex(rec["rule"], bank.n_outcomes)
            out.append(rec)
    return out


def _crlb_for_first_groups(per_group, n_per_group: int, j: int):
    """CRLB sqrt-diagonal using the first j per-group Fisher matrices."""
    combined = np.mean(per_group[:j], axis=0)
    info = FisherInfo(
        matrix=combined,
        per_group=[],
        weights=np.full(j, 1.0 / j),
        free_names=(),
        min_eigenvalue=float(np.linalg.eigvalsh(combined).min()),
    )
    cov = fisher_crlb(info, j * n_per_group)
    if cov is None:
        return None
    return np.sqrt(np.diag(cov))


def run_rmse_experiment(
    cfg: ExperimentConfig, seed=None, replicates=None
) -> ExperimentReport:
    """Feedback-loop estimation error versus stage count and dependence.

    For each configured (rho, theta) pair, runs `replicates` independent
    feedback loops and aggregates, per stage count J, the RMSE of the
    estimated prior and dependence parameter over replicates, alongside
    the CRLB square roots at the truth for the quantizer sequences the
    loops actually used. From the first stage at which a replicate's fit
    fell back to a previous estimate, that replicate is excluded from
    the J-row aggregates; if any row loses more than
    MAX_FAILURE_FRACTION of its replicates the experiment raises
    ExperimentFailure.
    """
    t_start = time.monotonic()
    sec = _require(cfg.rmse, "rmse")
    base_seed = sec.base_seed if seed is None else int(seed)
    reps = sec.replicates if replicates is None else int(replicates)
    rows = []
    excluded = {}
    for rho_idx, (rho, theta) in enumerate(zip(sec.rho_values, sec.theta_values)):
        scen = cfg.scenario_with_dependence(theta)
        truth = scen.params
        stages = sec.stages
        errs = {j: [] for j in range(1, stages + 1)}
        crlbs = {j: [] for j in range(1, stages + 1)}
        n_excluded = {j: 0 for j in range(1, stages + 1)}
        for r in range(reps):
            rep_seed = base_seed ^ r
            records = run_feedback_loop(
                scen,
                cfg.init_bank(),
                cfg.init_rule(),
                cfg.costs,
                [sec.samples_per_stage] * stages,
                seed=(rep_seed, rho_idx),
                mle_opts=cfg.mle,
                design_restarts=sec.design_restarts,
            )
            first_fallback = next(
                (rec.stage for rec in records if rec.used_fallback), stages + 1
            )
            banks = [rec.group.bank for rec in records]
            info = fisher_info(scen, truth, banks)
            for j in range(1, stages + 1):
                if j >= first_fallback:
                    n_excluded[j] += 1
                    continue
                est = records[j - 1].estimate
                errs[j].append((est.p1 - truth.p1, est.h1.dependence - theta))
                cs = _crlb_for_first_groups(info.per_group, sec.samples_per_stage, j)
                crlbs[j].append(
                    (np.nan, np.nan) if cs is None else (cs[0], cs[1])
                )
        for j in range(1, stages + 1):
            if n_excluded[j] / reps > MAX_FAILURE_FRACTION:
                raise ExperimentFailure(
                    f"rho={rho} J={j}: {n_excluded[j]}/{reps} replicates "
                    f"excluded for non-converged fits"
                )
            e = np.array(errs[j])
            c = np.array(crlbs[j])
            rows.append(
                (
                    rho,
                    j,
                    j * sec.samples_per_stage,
                    float(np.sqrt(np.mean(e[:, 0] ** 2))),
                    float(np.sqrt(np.mean(e[:, 1] ** 2))),
                    float(np.nanmean(c[:, 0])),
                    float(np.nanmean(c[:, 1])),
                )
            )
            excluded[f"rho={rho},j={j}"] = n_excluded[j]
    rows.sort(key=lambda r: (r[0], r[1]))
    return ExperimentReport(
        kind="rmse",
        columns=(
            "rho",
            "j",
            "n_total",
            "rmse_p1",
            "rmse_theta1",
            "crlb_sqrt_p1",
            "crlb_sqrt_theta1",
        ),
        rows=rows,
        metadata={
            "config_sha256": cfg.sha256,
            "seed": base_seed,
            "replicates": reps,
            "excluded": excluded,
            "runtime_s": time.monotonic() - t_start,
        },
    )


def run_efficiency_experiment(
    cfg: ExperimentConfig, seed=None, replicates=None
) -> ExperimentReport:
    """Estimator efficiency against the CRLB on fixed quantizer groups.

    Draws `groups` histogram groups per replicate, one per configured
    threshold pair, fits by maximum likelihood, and reports median
    absolute errors and RMSEs next to the CRLB square roots from the
    weighted Fisher combination at the truth.
    """
    t_start = time.monotonic()
    sec = _require(cfg.efficiency, "efficiency")
    base_seed = sec.base_seed if seed is None else int(seed)
    reps = sec.replicates if replicates is None else int(replicates)
    scen = cfg.scenario_with_dependence(sec.theta)
    truth = scen.params
    grids = [cfg.grid] * scen.n_sensors
    banks = [
        QuantizerBank.from_indicators(grids, [[(1.0, -t1)], [(-1.0, t2)]])
        for t1, t2 in zip(sec.thresholds1, sec.thresholds2)
    ]
    info = fisher_info(scen, truth, banks)
    n_total = sec.groups * sec.samples_per_group
    cov = fisher_crlb(info, n_total)
    if cov is None:
        raise ExperimentFailure("CRLB unavailable: combined Fisher matrix singular")
    crlb_sqrt = np.sqrt(np.diag(cov))
    opts = replace(cfg.mle, restarts=sec.mle_restarts)
    mix = scen.mixture()
    errors = []
    n_failed = 0
    for r in range(reps):
        rep_seed = base_seed ^ r
        groups = []
        for j, bank in enumerate(banks, start=1):
            rng = np.random.default_rng([rep_seed, 3, j])
            y, _ = mix.sample(sec.samples_per_group, rng)
            groups.append(
                HistogramGroup(
                    stage=j, n=sec.samples_per_group, bank=bank,
                    counts=count_outcomes(bank, y),
                )
            )
        fit = mle_fit(scen, QuantizedHistogram(groups), opts)
        if not fit.converged:
            n_failed += 1
            continue
        errors.append(
            (fit.estimate.p1 - truth.p1, fit.estimate.h1.dependence - sec.theta)
        )
    if n_failed / reps > MAX_FAILURE_FRACTION:
        raise ExperimentFailure(
            f"{n_failed}/{reps} replicates failed to converge"
        )
    e = np.array(errors)
    rows = [
        (
            sec.rho,
            sec.groups,
            n_total,
            float(np.median(np.abs(e[:, 0]))),
            float(np.median(np.abs(e[:, 1]))),
            float(np.sqrt(np.mean(e[:, 0] ** 2))),
            float(np.sqrt(np.mean(e[:, 1] ** 2))),
            float(crlb_sqrt[0]),
            float(crlb_sqrt[1]),
            len(errors),
            n_failed,
        )
    ]
    return ExperimentReport(
        kind="efficiency",
        columns=(
            "rho",
            "groups",
            "n_total",
            "median_abs_err_p1",
            "median_abs_err_theta1",
            "rmse_p1",
            "rmse_theta1",
            "crlb_sqrt_p1",
            "crlb_sqrt_theta1",
            "replicates_used",
            "n_failed",
        ),
        rows=rows,
        metadata={
            "config_sha256": cfg.sha256,
            "seed": base_seed,
            "replicates": reps,
            "runtime_s": time.monotonic() - t_start,
        },
    )


def _independence_benchmark(scen: Scenario) -> Scenario:
    """The same scenario with H1 dependence dropped (known parameters)."""
    pv = scen.params
    ind = CopulaModel(CopulaFamily.INDEPENDENCE, dim=scen.n_sensors)
    pv_ind = ParamVector(
        pv.p0, pv.h0, HypothesisParams(None, pv.h1.marginals), free=()
    )
    return Scenario(scen.copula0, ind, pv_ind)


def run_roc_experiment(
    cfg: ExperimentConfig, seed=None, replicates=None
) -> ExperimentReport:
    """Operating points of benchmark and feedback detectors across costs.

    Detectors: "clairvoyant" (designed at the true parameters),
    "independence" (designed assuming independent sensors under H1 with
    known priors), and one "feedback_{stages}x{samples}" per configured
    budget (full feedback loop per replicate, deploying the final
    stage's design). Every design step uses the same multistart search
    (design_restarts random starts); the detectors differ only in the
    parameters it runs under: truth, the independence model, or the
    loop's per-stage estimates. Benchmark designs are deterministic, so
    their spread across replicates comes from the shared test sets
    alone. Every detector is evaluated on the same per-replicate test
    sets drawn from the true model.
    """
    t_start = time.monotonic()
    sec = _require(cfg.roc, "roc")
    base_seed = sec.base_seed if seed is None else int(seed)
    reps = sec.replicates if replicates is None else int(replicates)
    scen = cfg.scenario_with_dependence(sec.theta)
    scen_ind = _independence_benchmark(scen)
    init_bank, init_rule = cfg.init_bank(), cfg.init_rule()

    def costs_at(c01):
        return CostCoefficients(cfg.costs.c00, c01, cfg.costs.c10, cfg.costs.c11)

    static = {}
    for pi, c01 in enumerate(sec.c01_values):
        costs = costs_at(c01)
        for name, s in (("clairvoyant", scen), ("independence", scen_ind)):
            st = optimize_quantizers_multistart(
                s,
                s.params,
                init_bank,
                init_rule,
                costs,
                n_restarts=sec.design_restarts,
                seed=(sec.design_seed, pi),
            )
            static[name, c01] = (st.bank, st.rule)

    budget_labels = [(f"feedback_{t}x{n}", t, n) for t, n in sec.budgets]
    points = {}
    final_fallbacks = 0
    n_loops = 0
    h0_true, h1_true = scen.hypothesis(0), scen.hypothesis(1)
    for r in range(reps):
        rep_seed = base_seed ^ r
        y0 = h0_true.sample(sec.n_test_h0, np.random.default_rng([rep_seed, 11]))
        y1 = h1_true.sample(sec.n_test_h1, np.random.default_rng([rep_seed, 12]))
        for (name, c01), (bank, rule) in static.items():
            points.setdefault((name, c01), []).append(
                empirical_rates(bank, rule, y0, y1)
            )
        for bi, (label, t_stages, n_per) in enumerate(budget_labels):
            for pi, c01 in enumerate(sec.c01_values):
                records = run_feedback_loop(
                    scen,
                    init_bank,
                    init_rule,
                    costs_at(c01),
                    [n_per] * t_stages,
                    seed=(rep_seed, 50 + bi, pi),
                    mle_opts=cfg.mle,
                    design_restarts=sec.design_restarts,
                )
                n_loops += 1
                final = records[-1]
                if final.used_fallback:
                    final_fallbacks += 1
                points.setdefault((label, c01), []).append(
                    empirical_rates(final.design.bank, final.design.rule, y0, y1)
                )
    if n_loops and final_fallbacks / n_loops > MAX_FAILURE_FRACTION:
        raise ExperimentFailure(
            f"{final_fallbacks}/{n_loops} feedback loops ended on a "
            f"fallback estimate"
        )
    rows = []
    for (name, c01), vals in points.items():
        arr = np.array(vals)
        n = arr.shape[0]
        std = arr.std(axis=0, ddof=1) if n > 1 else np.zeros(2)
        rows.append(
            (
                sec.rho,
                name,
                c01,
                float(arr[:, 0].mean()),
                float(arr[:, 1].mean()),
                float(std[0]),
                float(std[1]),
            )
        )
    rows.sort(key=lambda r: (r[1], r[2]))
    return ExperimentReport(
        kind="roc",
        columns=(
            "rho",
            "detector",
            "c01",
            "pf_mean",
            "pd_mean",
            "pf_std",
            "pd_std",
        ),
        rows=rows,
        metadata={
            "config_sha256": cfg.sha256,
            "seed": base_seed,
            "replicates": reps,
            "final_fallback_fraction": (final_fallbacks / n_loops) if n_loops else 0.0,
            "runtime_s": time.monotonic() - t_start,
        },
    )
