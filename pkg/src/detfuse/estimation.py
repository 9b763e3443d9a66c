"""Maximum-likelihood estimation from quantized histograms, with Fisher
information and Cramer-Rao bounds.

The data are outcome histograms collected in stages, possibly under a
different quantizer bank per stage. With group j holding counts K_jm
under bank B_j, the log-likelihood of the scenario parameters is

    l(params) = sum_j sum_m K_jm log f_j(m | params),

where f_j is the renormalized quantized mixture pmf of bank B_j. Any
outcome with positive count but zero model probability sends the
log-likelihood to -inf.

`mle_fit` maximizes l with Nelder-Mead in a transformed space (logit for
the prior, log for positive parameters) whose inverse transform clips to
a hard admissible box, so the simplex sees a plateau beyond the box
instead of an error; fits whose truth sits outside the box land on the
bound. Multistart initial points are quasi-random (Halton) over a
restart box, deterministic for a fixed seed.

Fisher information per bank follows the outer-product form

    I_j = sum_m (grad f_jm)(grad f_jm)^T / f_jm

with central finite-difference gradients in the free parameters, and the
weighted combination sum_j (N_j / N) I_j inverts (when nonsingular) to
the Cramer-Rao covariance bound at sample size N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .copulas import CopulaFamily, THETA_MAX, THETA_MIN, clayton_density_grid
from .models import GammaMarginal, ParamVector, Scenario
from .quantizers import QuantizedHistogram, quantized_pmf

# Hard admissible boxes by parameter kind; the transform clips to these.
P0_BOUNDS = (1e-4, 1.0 - 1e-4)
DEP_BOUNDS = (THETA_MIN, THETA_MAX)
MARGINAL_BOUNDS = (1e-3, 1e3)

# Multistart sampling boxes (inside the hard boxes).
_RESTART_BOX = {"p0": (0.05, 0.95), "dep": (0.1, 10.0), "marginal": (0.5, 20.0)}


def _kind(name: str) -> str:
    if name == "p0":
        return "p0"
    return "dep" if name.endswith("_dep") else "marginal"


def _hard_bounds(name: str) -> tuple[float, float]:
    return {"p0": P0_BOUNDS, "dep": DEP_BOUNDS, "marginal": MARGINAL_BOUNDS}[_kind(name)]


def _to_x(name: str, value: float) -> float:
    """Natural value -> unconstrained coordinate (logit / log)."""
    lo, hi = _hard_bounds(name)
    value = min(max(value, lo), hi)
    if name == "p0":
        return math.log(value / (1.0 - value))
    return math.log(value)


def _from_x(name: str, x: float) -> float:
    """Unconstrained coordinate -> natural value, clipped to the hard box."""
    lo, hi = _hard_bounds(name)
    if name == "p0":
        x = min(max(x, math.log(lo / (1 - lo))), math.log(hi / (1 - hi)))
        return 1.0 / (1.0 + math.exp(-x))
    x = min(max(x, math.log(lo)), math.log(hi))
    return math.exp(x)


class LoglikEvaluator:
    """Reusable fast evaluator of the histogram log-likelihood.

    Precomputes per-group one-hot code matrices and, when a hypothesis
    has no free parameters, that hypothesis's outcome masses. The
    two-sensor case runs through a single density-grid build plus one
    stacked matrix product per evaluation; other dimensions fall back to
    a generic (slower) cell-mass path.
    """

    def __init__(self, scenario: Scenario, hist: QuantizedHistogram):
        if not hist.groups:
            raise ValueError("histogram has no groups")
        self.scenario = scenario
        self.template = scenario.params
        self.free = self.template.free
        self.groups = hist.groups
        for g in self.groups:
            if g.bank.n_sensors != scenario.n_sensors:
                raise ValueError(
                    f"group stage {g.stage}: bank has {g.bank.n_sensors} sensors, "
                    f"scenario has {scenario.n_sensors}"
                )
        self._h_free = (
            any(n.startswith("h0_") for n in self.free),
            any(n.startswith("h1_") for n in self.free),
        )
        self._fast = scenario.n_sensors == 2
        if self._fast:
            self._build_blocks()
        self._support = [np.flatnonzero(g.counts > 0) for g in self.groups]
        self._counts_nz = [
            g.counts[idx].astype(float) for g, idx in zip(self.groups, self._support)
        ]
        # Masses of a fully-fixed hypothesis never change across calls.
        self._fixed_mass = [None, None]
        for j in (0, 1):
            if not self._h_free[j]:
                self._fixed_mass[j] = self._hyp_masses(j, self.template)

    def _build_blocks(self):
        self._blocks = {}
        self._group_block = []
        self._h1mats = []
        self._cols = []
        for g in self.groups:
            key = g.bank.grids
            blk = self._blocks.get(key)
            if blk is None:
                blk = {
                    "grids": key,
                    "mids": [grid.midpoints() for grid in key],
                    "h2_cols": [],
                    "members": [],
                }
                self._blocks[key] = blk
            self._group_block.append(blk)
            self._h1mats.append(g.bank.onehot(0))
            start = sum(c.shape[1] for c in blk["h2_cols"])
            h2 = g.bank.onehot(1)
            blk["h2_cols"].append(h2)
            blk["members"].append(len(self._group_block) - 1)
            self._cols.append((start, start + h2.shape[1]))
        for blk in self._blocks.values():
            blk["h2"] = np.hstack(blk["h2_cols"])

    def _hyp_params(self, j: int, pv: ParamVector):
        h = pv.h0 if j == 0 else pv.h1
        cop = self.scenario.copula0 if j == 0 else self.scenario.copula1
        margs = [GammaMarginal(shape, scale) for shape, scale in h.marginals]
        return cop, h.dependence, margs

    def _hyp_masses(self, j: int, pv: ParamVector) -> list:
        """Raw (unnormalized, window-truncated) outcome masses of
        hypothesis j for every group, each divided by its window total."""
        cop, dep, margs = self._hyp_params(j, pv)
        out = [None] * len(self.groups)
        if self._fast:
            for blk in self._blocks.values():
                grids = blk["grids"]
                w = [
                    m.pdf(x) * grid.delta
                    for m, grid, x in zip(margs, grids, blk["mids"])
                ]
                if cop.family is CopulaFamily.CLAYTON:
                    u = [m.cdf(x) for m, x in zip(margs, blk["mids"])]
                    q = clayton_density_grid(u[0], u[1], dep) * np.multiply.outer(
                        w[0], w[1]
                    )
                    total = q.sum()
                    t = q @ blk["h2"]
                    for gi in blk["members"]:
                        lo, hi = self._cols[gi]
                        m = self._h1mats[gi].T @ t[:, lo:hi]
                        out[gi] = m.ravel(order="F") / total
                else:
                    total = w[0].sum() * w[1].sum()
                    for gi in blk["members"]:
                        lo, hi = self._cols[gi]
                        v1 = w[0] @ self._h1mats[gi]
                        v2 = w[1] @ blk["h2"][:, lo:hi]
                        out[gi] = np.multiply.outer(v1, v2).ravel(order="F") / total
        else:
            model = self.scenario.hypothesis(j, pv)
            for gi, g in enumerate(self.groups):
                out[gi] = quantized_pmf(model, g.bank).probabilities
        return out

    def group_pmfs(self, pv: ParamVector) -> list:
        """Renormalized mixture pmf per group at the given parameters."""
        masses = []
        for j in (0, 1):
            cached = self._fixed_mass[j]
            # The cache only holds when the caller has not altered the
            # fixed hypothesis by hand (replace_free never does).
            same = cached is not None and (
                (pv.h0 if j == 0 else pv.h1)
                == (self.template.h0 if j == 0 else self.template.h1)
            )
            if same:
                masses.append(cached)
            else:
                masses.append(self._hyp_masses(j, pv))
        p0 = pv.p0
        return [
            p0 * m0 + (1.0 - p0) * m1 for m0, m1 in zip(masses[0], masses[1])
        ]

    def loglik_params(self, pv: ParamVector) -> float:
        """Log-likelihood at a full parameter vector."""
        total = 0.0
        for pmf, idx, counts in zip(
            self.group_pmfs(pv), self._support, self._counts_nz
        ):
            p = pmf[idx]
            if np.any(p <= 0.0) or not np.all(np.isfinite(p)):
                return -np.inf
            total += float(counts @ np.log(p))
        return total

    def loglik(self, free_values) -> float:
        """Log-likelihood at the template with free entries replaced."""
        return self.loglik_params(self.template.replace_free(free_values))


def log_likelihood(
    scenario: Scenario, hist: QuantizedHistogram, params: ParamVector | None = None
) -> float:
    """Histogram log-likelihood at the given (or scenario truth) parameters.

    Independent of the evaluator fast path; used as its cross-check in
    the test suite.
    """
    pv = scenario.params if params is None else params
    mix = scenario.mixture(pv)
    total = 0.0
    for g in hist.groups:
        pmf = quantized_pmf(mix, g.bank).probabilities
        idx = g.counts > 0
        p = pmf[idx]
        if np.any(p <= 0.0):
            return -np.inf
        total += float(g.counts[idx].astype(float) @ np.log(p))
    return total


@dataclass
class MleOptions:
    """Knobs for `mle_fit`.

    restarts quasi-random starts are drawn from the restart box; a warm
    start, when given (natural-space values aligned with the free
    parameter order), is tried first in addition to them.
    """

    restarts: int = 5
    seed: int = 0
    xatol: float = 1e-6
    fatol: float = 1e-6
    maxiter: int = 2000
    warm_start: tuple | None = None


@dataclass
class MleResult:
    """Outcome of a maximum-likelihood fit."""

    estimate: ParamVector
    free_names: tuple
    log_likelihood: float
    converged: bool
    iterations: int
    restarts_used: int
    grad_norm: float


def _restart_points(free, opts: MleOptions) -> np.ndarray:
    """Quasi-random starts in transformed space, shape (restarts, d)."""
    d = len(free)
    sampler = qmc.Halton(d=d, scramble=True, seed=opts.seed)
    u = sampler.random(opts.restarts)
    lo = np.array([_to_x(n, _RESTART_BOX[_kind(n)][0]) for n in free])
    hi = np.array([_to_x(n, _RESTART_BOX[_kind(n)][1]) for n in free])
    return lo + u * (hi - lo)


def mle_fit(
    scenario: Scenario, hist: QuantizedHistogram, opts: MleOptions | None = None
) -> MleResult:
    """Maximum-likelihood fit of the scenario's free parameters.

    Deterministic for fixed (scenario, hist, opts). The best start by
    final log-likelihood wins; `converged` reports whether that start's
    simplex met the tolerance within the iteration budget and reached a
    finite optimum.
    """
    opts = opts or MleOptions()
    free = scenario.params.free
    if not free:
        raise ValueError("scenario has no free parameters to fit")
    if opts.restarts < 1 and opts.warm_start is None:
        raise ValueError("need at least one start")
    ev = LoglikEvaluator(scenario, hist)

    def neg_ll(x):
        vals = [_from_x(n, xi) for n, xi in zip(free, x)]
        ll = ev.loglik(np.array(vals))
        return np.inf if not np.isfinite(ll) else -ll

    starts = []
    if opts.warm_start is not None:
        if len(opts.warm_start) != len(free):
            raise ValueError(
                f"warm start has {len(opts.warm_start)} values for "
                f"{len(free)} free parameters"
            )
        starts.append(np.array([_to_x(n, v) for n, v in zip(free, opts.warm_start)]))
    if opts.restarts >= 1:
        starts.extend(_restart_points(free, opts))

    best = None
    for x0 in starts:
        res = minimize(
            neg_ll,
            x0,
            method="Nelder-Mead",
            options={
                "xatol": opts.xatol,
                "fatol": opts.fatol,
                "maxiter": opts.maxiter,
                "maxfev": 2 * opts.maxiter,
            },
        )
        if best is None or res.fun < best.fun:
            best = res

    x = np.asarray(best.x, dtype=float)
    values = np.array([_from_x(n, xi) for n, xi in zip(free, x)])
    converged = bool(best.success and np.isfinite(best.fun))
    # Post-hoc gradient norm in the transformed space, reported as a
    # diagnostic; plateau clipping can legitimately leave it nonzero at a
    # box bound.
    h = 1e-6
    grad = np.zeros(len(free))
    if np.isfinite(best.fun):
        for k in range(len(free)):
            e = np.zeros(len(free))
            e[k] = h
            fp, fm = neg_ll(x + e), neg_ll(x - e)
            grad[k] = (fp - fm) / (2 * h) if np.isfinite(fp) and np.isfinite(fm) else np.nan
    return MleResult(
        estimate=scenario.params.replace_free(values),
        free_names=free,
        log_likelihood=-float(best.fun),
        converged=converged,
        iterations=int(best.nit),
        restarts_used=len(starts),
        grad_norm=float(np.linalg.norm(grad)),
    )


@dataclass
class FisherInfo:
    """Per-sample Fisher information of the free parameters.

    `matrix` is the weight-combined information (symmetrized), and
    `per_group` holds the per-bank contributions in group order.
    """

    matrix: np.ndarray
    per_group: list
    weights: np.ndarray
    free_names: tuple
    min_eigenvalue: float

    @property
    def singular(self) -> bool:
        return not np.isfinite(np.linalg.cond(self.matrix)) or np.linalg.cond(
            self.matrix
        ) > 1e12


def fisher_info(
    scenario: Scenario,
    params: ParamVector,
    banks,
    weights=None,
    rel_step: float = 1e-5,
) -> FisherInfo:
    """Fisher information of the free parameters at `params`.

    Parameters
    ----------
    scenario : Scenario
    params : ParamVector
        Evaluation point; its free subset defines the parameter axes.
    banks : sequence of QuantizerBank
        One per observation group.
    weights : array_like, optional
        Group sampling fractions N_j / N; uniform when omitted.
        Normalized to sum to 1.
    rel_step : float, optional
        Relative central-difference step per parameter.
    """
    banks = list(banks)
    if not banks:
        raise ValueError("need at least one bank")
    if weights is None:
        weights = np.full(len(banks), 1.0 / len(banks))
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(banks),) or np.any(weights < 0) or weights.sum() <= 0:
        raise ValueError("weights must be nonnegative, one per bank")
    weights = weights / weights.sum()
    free = params.free
    if not free:
        raise ValueError("params has no free entries")

    def pmfs(pv):
        mix = scenario.mixture(pv)
        return [quantized_pmf(mix, b).probabilities for b in banks]

    v0 = params.free_values()
    grads = [np.zeros((len(free), b.n_outcomes)) for b in banks]
    for k, vk in enumerate(v0):
        h = rel_step * abs(vk)
        vp, vm = v0.copy(), v0.copy()
        vp[k] += h
        vm[k] -= h
        fp = pmfs(params.replace_free(vp))
        fm = pmfs(params.replace_free(vm))
        for gi in range(len(banks)):
            grads[gi][k] = (fp[gi] - fm[gi]) / (2 * h)

    f0 = pmfs(params)
    per_group = []
    for gi in range(len(banks)):
        f = f0[gi]
        g = grads[gi]
        pos = f > 0
        mat = np.einsum("ku,lu->kl", g[:, pos] / f[pos], g[:, pos])
        per_group.append(0.5 * (mat + mat.T))
    combined = sum(w * m for w, m in zip(weights, per_group))
    combined = 0.5 * (combined + combined.T)
    min_eig = float(np.linalg.eigvalsh(combined).min())
    return FisherInfo(
        matrix=combined,
        per_group=per_group,
        weights=weights,
        free_names=free,
        min_eigenvalue=min_eig,
    )


def fisher_crlb(info: FisherInfo, n_total: int) -> np.ndarray | None:
    """Cramer-Rao covariance bound at sample size n_total.

    Returns None (rather than raising) when the combined information is
    singular or numerically unusable.
    """
    if n_total < 1:
        raise ValueError(f"sample size must be >= 1, got {n_total}")
    mat = n_total * info.matrix
    if not np.all(np.isfinite(mat)):
        return None
    cond = np.linalg.cond(mat)
    if not np.isfinite(cond) or cond > 1e12:
        return None
    try:
        return np.linalg.inv(mat)
    except np.linalg.LinAlgError:
        return None
