"""Bayes-optimal fusion rules, quantizer co-design, and the closed-loop
feedback procedure that alternates estimation with redesign.

For a fusion rule d: outcomes -> {0, 1} with false-alarm rate Pf and
detection rate Pd under prior (p0, p1) and decision costs C_ij (cost of
deciding i when j holds), the Bayes cost is

    R = C00 p0 (1 - Pf) + C10 p0 Pf + C01 p1 (1 - Pd) + C11 p1 Pd.

The cost-minimizing rule is the likelihood-ratio test on the quantized
pmfs: decide 1 iff p1 (C01 - C11) f1(u) >= p0 (C10 - C00) f0(u), with
outcomes of zero probability under both hypotheses decided 0.

Quantizer optimization is coordinate descent over grid cells: for one
sensor at a time, each cell's code is re-chosen to exactly minimize the
Bayes cost with everything else held fixed (strict-decrease acceptance,
ties keep the incumbent); after each full pass over all sensors the
fusion rule is recomputed, until neither changes. The cost trace is
non-increasing and the search terminates because the configuration space
is finite and accepted moves strictly decrease the cost.

The feedback loop ties everything together: quantize a batch under the
current design, refit the parameters on all histograms collected so far,
redesign quantizers and rule under the fitted model, and repeat.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._kernels import sweep_cells
from .estimation import (
    MleOptions,
    MleResult,
    _RESTART_BOX,
    _kind,
    mle_fit,
)
from .models import ParamVector, Scenario
from .quantizers import (
    HistogramGroup,
    QuantizedHistogram,
    QuantizerBank,
    cell_mass,
    count_outcomes,
    pack_bits,
    quantized_pmf,
    unpack_bits,
)


@dataclass(frozen=True)
class CostCoefficients:
    """Decision costs C_ij for deciding i when hypothesis j holds."""

    c00: float
    c01: float
    c10: float
    c11: float

    def __post_init__(self):
        for name in ("c00", "c01", "c10", "c11"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0.0):
                raise ValueError(f"cost {name} must be finite and >= 0, got {v}")
        if not self.c10 > self.c00:
            raise ValueError("false alarms must cost more than correct rejections")
        if not self.c01 > self.c11:
            raise ValueError("misses must cost more than correct detections")


@dataclass
class DetectionMetrics:
    """Operating point and Bayes cost of a rule."""

    p_false_alarm: float
    p_detect: float
    bayes_cost: float


class FusionRule:
    """Fusion-center decision per quantized outcome (True decides H1)."""

    def __init__(self, decisions):
        dec = np.asarray(decisions)
        if dec.ndim != 1 or dec.size < 1:
            raise ValueError(f"decisions must be a nonempty vector, got {dec.shape}")
        if dec.dtype != bool and not np.all((dec == 0) | (dec == 1)):
            raise ValueError("decisions must be boolean or 0/1")
        self.decisions = dec.astype(bool)
        self.decisions.setflags(write=False)

    @property
    def n_outcomes(self) -> int:
        return self.decisions.size

    @classmethod
    def or_rule(cls, n_outcomes: int) -> "FusionRule":
        """Decide 1 unless every received bit is 0."""
        return cls(np.arange(n_outcomes) != 0)

    @classmethod
    def and_rule(cls, n_outcomes: int) -> "FusionRule":
        """Decide 1 only when every received bit is 1."""
        return cls(np.arange(n_outcomes) == n_outcomes - 1)

    def to_hex(self) -> str:
        return pack_bits(self.decisions.astype(np.uint8))

    @classmethod
    def from_hex(cls, packed: str, n_outcomes: int) -> "FusionRule":
        return cls(unpack_bits(packed, n_outcomes))

    def __eq__(self, other):
        if not isinstance(other, FusionRule):
            return NotImplemented
        return np.array_equal(self.decisions, other.decisions)

    __hash__ = None

    def __repr__(self):
        return f"FusionRule({self.to_hex()!r}, n_outcomes={self.n_outcomes})"


def _optimal_decisions(pmf0, pmf1, p0: float, costs: CostCoefficients) -> np.ndarray:
    lhs = (1.0 - p0) * (costs.c01 - costs.c11) * pmf1
    rhs = p0 * (costs.c10 - costs.c00) * pmf0
    dec = lhs >= rhs
    dead = (pmf0 == 0.0) & (pmf1 == 0.0)
    return np.where(dead, False, dec)


def optimal_fusion_rule(pmf0, pmf1, p0: float, costs: CostCoefficients) -> FusionRule:
    """Bayes-cost-minimizing rule for given quantized pmfs.

    Parameters
    ----------
    pmf0, pmf1 : array_like
        Outcome pmfs under H0 and H1 (renormalized over the window).
    p0 : float
        Prior probability of H0, strictly inside (0, 1).
    costs : CostCoefficients
    """
    pmf0 = np.asarray(pmf0, dtype=float)
    pmf1 = np.asarray(pmf1, dtype=float)
    if pmf0.shape != pmf1.shape or pmf0.ndim != 1:
        raise ValueError(f"pmf shapes differ: {pmf0.shape} vs {pmf1.shape}")
    if not 0.0 < p0 < 1.0:
        raise ValueError(f"prior p0 must lie strictly in (0, 1), got {p0}")
    return FusionRule(_optimal_decisions(pmf0, pmf1, p0, costs))


def bayes_cost(rule: FusionRule, pmf0, pmf1, p0: float, costs: CostCoefficients) -> float:
    """Bayes cost of a rule on given quantized pmfs."""
    return rule_metrics(rule, pmf0, pmf1, p0, costs).bayes_cost


def rule_metrics(rule: FusionRule, pmf0, pmf1, p0: float, costs: CostCoefficients) -> DetectionMetrics:
    """Operating point and Bayes cost of a rule on given pmfs."""
    dec = rule.decisions.astype(float)
    pf = float(np.asarray(pmf0, dtype=float) @ dec)
    pd = float(np.asarray(pmf1, dtype=float) @ dec)
    cost = (
        costs.c00 * p0 * (1.0 - pf)
        + costs.c10 * p0 * pf
        + costs.c01 * (1.0 - p0) * (1.0 - pd)
        + costs.c11 * (1.0 - p0) * pd
    )
    return DetectionMetrics(p_false_alarm=pf, p_detect=pd, bayes_cost=cost)


def bank_metrics(
    scenario: Scenario,
    params: ParamVector,
    bank: QuantizerBank,
    rule: FusionRule,
    costs: CostCoefficients,
) -> DetectionMetrics:
    """Metrics of (bank, rule) under the model at `params`."""
    pmf0 = quantized_pmf(scenario.hypothesis(0, params), bank).probabilities
    pmf1 = quantized_pmf(scenario.hypothesis(1, params), bank).probabilities
    return rule_metrics(rule, pmf0, pmf1, params.p0, costs)


def empirical_rates(bank: QuantizerBank, rule: FusionRule, y0, y1) -> tuple[float, float]:
    """Monte-Carlo (Pf, Pd) of a design on labeled test observations."""
    u0 = bank.quantize(np.asarray(y0, dtype=float))
    u1 = bank.quantize(np.asarray(y1, dtype=float))
    return float(rule.decisions[u0].mean()), float(rule.decisions[u1].mean())


@dataclass
class DesignState:
    """One co-design outcome: bank, rule, and the search's cost history."""

    stage: int
    bank: QuantizerBank
    rule: FusionRule
    estimate: ParamVector
    cost_trace: list
    n_sweeps: int = 0
    converged: bool = True


def _onehot_from(assign: np.ndarray, n_codes: int) -> np.ndarray:
    out = np.zeros((assign.size, n_codes))
    out[np.arange(assign.size), assign] = 1.0
    return out


def optimize_quantizers(
    scenario: Scenario,
    params: ParamVector,
    bank: QuantizerBank,
    rule: FusionRule,
    costs: CostCoefficients,
    max_sweeps: int = 200,
    stage: int = 0,
    force_python: bool = False,
) -> DesignState:
    """Coordinate-descent co-design of quantizer bits and fusion rule.

    Starts from the given (bank, rule), which makes the procedure a
    warm-started refinement inside a feedback loop. Implemented for one
    or two sensors (the dependence models in this package are bivariate).

    Returns
    -------
    DesignState
        With the final bank and rule, the full Bayes-cost trace (initial
        cost, then one entry after each sensor pass and each rule
        update), and `converged` False only if `max_sweeps` ran out.
    """
    n = bank.n_sensors
    if n > 2:
        raise ValueError("quantizer optimization is implemented for 1 or 2 sensors")
    if rule.n_outcomes != bank.n_outcomes:
        raise ValueError(
            f"rule covers {rule.n_outcomes} outcomes, bank has {bank.n_outcomes}"
        )
    grids = bank.grids
    t0 = cell_mass(scenario.hypothesis(0, params), grids)
    t1 = cell_mass(scenario.hypothesis(1, params), grids)
    s0, s1 = t0.sum(), t1.sum()
    p0 = params.p0
    rates = bank.rates
    assigns = [bank.local_outcomes(i) for i in range(n)]
    dec = rule.decisions.copy()

    def canonical_masses():
        if n == 1:
            table = assigns[0]
        else:
            table = assigns[0][:, None] + (assigns[1][None, :] << rates[0])
        m0 = np.bincount(table.ravel(), weights=t0.ravel(), minlength=bank.n_outcomes)
        m1 = np.bincount(table.ravel(), weights=t1.ravel(), minlength=bank.n_outcomes)
        return m0, m1

    def cost_weights(d):
        c0 = np.where(d, costs.c10, costs.c00) * (p0 / s0)
        c1 = np.where(d, costs.c11, costs.c01) * ((1.0 - p0) / s1)
        return c0, c1

    c0v, c1v = cost_weights(dec)
    m0, m1 = canonical_masses()
    cost_trace = [float(c0v @ m0 + c1v @ m1)]

    converged = False
    n_sweeps = 0
    for _ in range(max_sweeps):
        n_sweeps += 1
        n_changed = 0
        for i in range(n):
            if n == 1:
                a0 = np.ascontiguousarray(t0[:, None])
                a1 = np.ascontiguousarray(t1[:, None])
                combine = np.arange(1 << rates[0], dtype=np.int64)[:, None]
            elif i == 0:
                h = _onehot_from(assigns[1], 1 << rates[1])
                a0, a1 = t0 @ h, t1 @ h
                combine = (
                    np.arange(1 << rates[0], dtype=np.int64)[:, None]
                    + (np.arange(1 << rates[1], dtype=np.int64)[None, :] << rates[0])
                )
            else:
                h = _onehot_from(assigns[0], 1 << rates[0])
                a0, a1 = t0.T @ h, t1.T @ h
                combine = (
                    np.arange(1 << rates[1], dtype=np.int64)[:, None] << rates[0]
                ) + np.arange(1 << rates[0], dtype=np.int64)[None, :]
            n_changed += sweep_cells(
                assigns[i],
                np.ascontiguousarray(a0),
                np.ascontiguousarray(a1),
                c0v,
                c1v,
                combine,
                force_python=force_python,
            )
            m0, m1 = canonical_masses()
            cost_trace.append(float(c0v @ m0 + c1v @ m1))
        new_dec = _optimal_decisions(m0 / s0, m1 / s1, p0, costs)
        rule_changed = not np.array_equal(new_dec, dec)
        dec = new_dec
        c0v, c1v = cost_weights(dec)
        cost_trace.append(float(c0v @ m0 + c1v @ m1))
        if n_changed == 0 and not rule_changed:
            converged = True
            break

    new_bits = [
        ((assigns[i][None, :] >> np.arange(rates[i])[:, None]) & 1).astype(np.uint8)
        for i in range(n)
    ]
    return DesignState(
        stage=stage,
        bank=QuantizerBank(grids, new_bits),
        rule=FusionRule(dec),
        estimate=params,
        cost_trace=cost_trace,
        n_sweeps=n_sweeps,
        converged=converged,
    )


def _seed_tuple(seed) -> tuple:
    if isinstance(seed, (tuple, list)):
        return tuple(int(s) for s in seed)
    return (int(seed),)


def optimize_quantizers_multistart(
    scenario: Scenario,
    params: ParamVector,
    init_bank: QuantizerBank,
    init_rule: FusionRule,
    costs: CostCoefficients,
    n_restarts: int = 8,
    seed=0,
    max_sweeps: int = 200,
    stage: int = 0,
) -> DesignState:
    """Co-design from the given initial state plus seeded random starts.

    The coordinate descent is a local search; with some cost settings the
    all-reject design is a fixed point that single-start descent cannot
    leave (every cell move is cost-neutral under a constant rule). For a
    design that will actually be deployed, this multistart picks the
    lowest-cost local optimum over the given start and `n_restarts`
    random (bank, rule) starts, deterministically for a fixed seed.
    """
    states = [
        optimize_quantizers(
            scenario, params, init_bank, init_rule, costs, max_sweeps, stage=stage
        )
    ]
    rates = init_bank.rates
    for k in range(n_restarts):
        rng = np.random.default_rng([*_seed_tuple(seed), k])
        bank = QuantizerBank.random(init_bank.grids, rates, rng)
        rule = FusionRule(rng.integers(0, 2, init_bank.n_outcomes))
        states.append(
            optimize_quantizers(
                scenario, params, bank, rule, costs, max_sweeps, stage=stage
            )
        )
    costs_final = [s.cost_trace[-1] for s in states]
    return states[int(np.argmin(costs_final))]


@dataclass
class StageRecord:
    """Everything produced by one feedback stage."""

    stage: int
    n: int
    group: HistogramGroup
    fit: MleResult
    used_fallback: bool
    estimate: ParamVector
    design: DesignState
    metrics_design: DetectionMetrics
    metrics_true: DetectionMetrics


def _fallback_estimate(template: ParamVector) -> ParamVector:
    """Restart-box centers, used when a stage's fit fails to converge and
    no earlier estimate exists."""
    vals = []
    for name in template.free:
        lo, hi = _RESTART_BOX[_kind(name)]
        vals.append(0.5 * (lo + hi) if name == "p0" else float(np.sqrt(lo * hi)))
    return template.replace_free(vals)


def run_feedback_loop(
    scenario: Scenario,
    init_bank: QuantizerBank,
    init_rule: FusionRule,
    costs: CostCoefficients,
    stage_sizes,
    seed,
    mle_opts: MleOptions | None = None,
    warm_start_chain: bool = True,
    design_max_sweeps: int = 200,
    design_restarts: int = 0,
) -> list:
    """Closed-loop quantizer feedback: collect, refit, redesign, repeat.

    Stage t (1-based) quantizes stage_sizes[t-1] fresh observations from
    the true mixture under the previous stage's design, refits the free
    parameters by maximum likelihood on all histograms collected so far,
    and redesigns quantizers and fusion rule under the fitted model. A
    stage whose fit does not converge keeps the previous usable estimate
    (restart-box centers at stage 1) and is flagged in its record.

    With design_restarts > 0 every redesign is a seeded multistart over
    the warm incumbent plus that many random starts. The single-start
    descent can get trapped in the all-reject fixed point (every cell
    move ties under a constant rule, so the bank freezes); a frozen bank
    then collects outcomes that barely identify the free parameters, and
    the poor estimates keep the next redesign frozen. The multistart
    breaks that loop whenever the current estimate supports a live
    design, at roughly design_restarts extra descents per stage.

    Sampling is deterministic for a fixed seed (an int or a tuple of
    ints); each stage draws from an independent substream.

    Returns
    -------
    list of StageRecord
    """
    stage_sizes = [int(n) for n in stage_sizes]
    if not stage_sizes or any(n < 1 for n in stage_sizes):
        raise ValueError(f"stage sizes must be positive, got {stage_sizes}")
    base = mle_opts or MleOptions()
    seed_key = _seed_tuple(seed)
    mix_true = scenario.mixture()
    groups = []
    records = []
    bank, rule = init_bank, init_rule
    prev_estimate = None
    for t, n_t in enumerate(stage_sizes, start=1):
        rng = np.random.default_rng([*seed_key, t])
        y, _ = mix_true.sample(n_t, rng)
        groups.append(HistogramGroup(stage=t, n=n_t, bank=bank, counts=count_outcomes(bank, y)))
        hist = QuantizedHistogram(list(groups))
        if warm_start_chain and prev_estimate is not None:
            opts_t = replace(base, warm_start=tuple(prev_estimate.free_values()))
        else:
            opts_t = base
        fit = mle_fit(scenario, hist, opts_t)
        fallback = not (fit.converged and np.isfinite(fit.log_likelihood))
        if fallback:
            estimate = (
                prev_estimate
                if prev_estimate is not None
                else _fallback_estimate(scenario.params)
            )
        else:
            estimate = fit.estimate
        if design_restarts > 0:
            design = optimize_quantizers_multistart(
                scenario,
                estimate,
                bank,
                rule,
                costs,
                n_restarts=design_restarts,
                seed=(*seed_key, 7, t),
                max_sweeps=design_max_sweeps,
                stage=t,
            )
        else:
            design = optimize_quantizers(
                scenario,
                estimate,
                bank,
                rule,
                costs,
                max_sweeps=design_max_sweeps,
                stage=t,
            )
        records.append(
            StageRecord(
                stage=t,
                n=n_t,
                group=groups[-1],
                fit=fit,
                used_fallback=fallback,
                estimate=estimate,
                design=design,
                metrics_design=bank_metrics(scenario, estimate, design.bank, design.rule, costs),
                metrics_true=bank_metrics(scenario, scenario.params, design.bank, design.rule, costs),
            )
        )
        bank, rule = design.bank, design.rule
        prev_estimate = estimate
    return records
