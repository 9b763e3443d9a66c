"""Hypothesis models: gamma marginals coupled by a copula, plus the
parameter bookkeeping shared by estimation and design.

A scenario has two hypotheses H0 and H1 with prior (p0, 1 - p0). Under
each hypothesis the L sensor observations have gamma marginals tied
together by a copula (Sklar construction), so the joint density is

    f_j(y) = c_j(F_j1(y1), ..., F_jL(yL)) * prod_i p_ji(y_i).

ParamVector flattens every scalar in that description into one named
vector with a canonical order and records which entries are free, which
is the interface the maximum-likelihood and Fisher-information code work
against.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammainc, gammaincinv, gammaln

from .copulas import CopulaFamily, CopulaModel, _check_theta, copula_density, sample_copula


@dataclass(frozen=True)
class GammaMarginal:
    """Gamma distribution in shape/scale parameterization (mean = shape * scale)."""

    shape: float
    scale: float

    def __post_init__(self):
        for name in ("shape", "scale"):
            val = getattr(self, name)
            if not np.isfinite(val) or val <= 0.0:
                raise ValueError(f"gamma {name} must be finite and > 0, got {val}")

    @property
    def mean(self) -> float:
        return self.shape * self.scale

    def pdf(self, y) -> np.ndarray:
        """Density, elementwise; 0 for y < 0 and the one-sided limit at y = 0."""
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape)
        pos = y > 0.0
        yp = y[pos]
        out[pos] = np.exp(
            (self.shape - 1.0) * np.log(yp)
            - yp / self.scale
            - gammaln(self.shape)
            - self.shape * np.log(self.scale)
        )
        at_zero = y == 0.0
        if np.any(at_zero):
            if self.shape < 1.0:
                out[at_zero] = np.inf
            elif self.shape == 1.0:
                out[at_zero] = 1.0 / self.scale
        return out

    def cdf(self, y) -> np.ndarray:
        """Distribution function, elementwise; 0 for y <= 0."""
        y = np.asarray(y, dtype=float)
        return gammainc(self.shape, np.maximum(y, 0.0) / self.scale)

    def quantile(self, u) -> np.ndarray:
        """Inverse cdf for u in (0, 1)."""
        u = np.asarray(u, dtype=float)
        if np.any(u <= 0.0) or np.any(u >= 1.0):
            raise ValueError("quantile arguments must lie strictly in (0, 1)")
        return self.scale * gammaincinv(self.shape, u)


def marginal_pdf(marginal: GammaMarginal, y) -> np.ndarray:
    """Functional form of :meth:`GammaMarginal.pdf`."""
    return marginal.pdf(y)


def marginal_cdf(marginal: GammaMarginal, y) -> np.ndarray:
    """Functional form of :meth:`GammaMarginal.cdf`."""
    return marginal.cdf(y)


def marginal_quantile(marginal: GammaMarginal, u) -> np.ndarray:
    """Functional form of :meth:`GammaMarginal.quantile`."""
    return marginal.quantile(u)


@dataclass(frozen=True)
class HypothesisModel:
    """Joint observation model under one hypothesis."""

    copula: CopulaModel
    theta: float | None
    marginals: tuple[GammaMarginal, ...]

    def __post_init__(self):
        if len(self.marginals) != self.copula.dim:
            raise ValueError(
                f"{len(self.marginals)} marginals for a copula of dimension "
                f"{self.copula.dim}"
            )
        _check_theta(self.copula, self.theta)

    @property
    def n_sensors(self) -> int:
        return self.copula.dim

    def joint_pdf(self, y) -> np.ndarray:
        """Joint density at y with trailing axis over sensors."""
        y = np.asarray(y, dtype=float)
        if y.shape[-1:] != (self.n_sensors,):
            raise ValueError(
                f"expected trailing axis of length {self.n_sensors}, got {y.shape}"
            )
        u = np.stack([m.cdf(y[..., i]) for i, m in enumerate(self.marginals)], axis=-1)
        dens = copula_density(self.copula, self.theta, u)
        for i, m in enumerate(self.marginals):
            dens = dens * m.pdf(y[..., i])
        return dens

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw n joint observations, shape (n, n_sensors)."""
        v = sample_copula(self.copula, self.theta, n, rng)
        return np.column_stack(
            [m.quantile(v[:, i]) for i, m in enumerate(self.marginals)]
        )


@dataclass(frozen=True)
class MixtureModel:
    """Prior-weighted two-hypothesis mixture of joint models."""

    p0: float
    h0: HypothesisModel
    h1: HypothesisModel

    def __post_init__(self):
        if not (np.isfinite(self.p0) and 0.0 < self.p0 < 1.0):
            raise ValueError(f"prior p0 must lie strictly in (0, 1), got {self.p0}")
        if self.h0.n_sensors != self.h1.n_sensors:
            raise ValueError("hypotheses must share the sensor count")

    @property
    def p1(self) -> float:
        return 1.0 - self.p0

    @property
    def n_sensors(self) -> int:
        return self.h0.n_sensors

    def pdf(self, y) -> np.ndarray:
        return self.p0 * self.h0.joint_pdf(y) + self.p1 * self.h1.joint_pdf(y)

    def sample(
        self, n: int, rng: np.random.Generator
    ) -> tuple[np.ndarray, np.ndarray]:
        """Draw n observations with their latent hypothesis labels.

        Returns
        -------
        y : ndarray, shape (n, n_sensors)
        labels : ndarray of int, shape (n,)
            0 where the draw came from H0, 1 where it came from H1.
        """
        labels = (rng.random(n) >= self.p0).astype(np.int64)
        y = np.empty((n, self.n_sensors))
        n1 = int(labels.sum())
        y[labels == 0] = self.h0.sample(n - n1, rng)
        y[labels == 1] = self.h1.sample(n1, rng)
        return y, labels


@dataclass(frozen=True)
class HypothesisParams:
    """Scalar parameters of one hypothesis: optional dependence parameter
    plus (shape, scale) per sensor."""

    dependence: float | None
    marginals: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.marginals) < 1:
            raise ValueError("at least one sensor marginal is required")
        for shape, scale in self.marginals:
            if not (np.isfinite(shape) and shape > 0.0):
                raise ValueError(f"marginal shape must be > 0, got {shape}")
            if not (np.isfinite(scale) and scale > 0.0):
                raise ValueError(f"marginal scale must be > 0, got {scale}")
        if self.dependence is not None and not (
            np.isfinite(self.dependence) and self.dependence > 0.0
        ):
            raise ValueError(
                f"dependence parameter must be > 0 when present, got {self.dependence}"
            )


@dataclass(frozen=True)
class ParamVector:
    """All scalar parameters of a two-hypothesis scenario, with a free subset.

    The canonical scalar order is: ``p0``, then for each hypothesis j in
    (0, 1): ``hj_dep`` when the hypothesis has a dependence parameter,
    followed by ``hj_m{i}_shape``, ``hj_m{i}_scale`` per sensor i. The
    ``free`` field names the entries that estimation treats as unknown;
    it is stored normalized to canonical order.
    """

    p0: float
    h0: HypothesisParams
    h1: HypothesisParams
    free: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if not (np.isfinite(self.p0) and 0.0 < self.p0 < 1.0):
            raise ValueError(f"prior p0 must lie strictly in (0, 1), got {self.p0}")
        if len(self.h0.marginals) != len(self.h1.marginals):
            raise ValueError("hypotheses must have the same number of sensors")
        names = self.names()
        unknown = [f for f in self.free if f not in names]
        if unknown:
            raise ValueError(f"unknown free parameter names: {unknown}")
        if len(set(self.free)) != len(self.free):
            raise ValueError(f"duplicate free parameter names: {self.free}")
        ordered = tuple(n for n in names if n in self.free)
        object.__setattr__(self, "free", ordered)

    @property
    def n_sensors(self) -> int:
        return len(self.h0.marginals)

    @property
    def p1(self) -> float:
        return 1.0 - self.p0

    def names(self) -> tuple[str, ...]:
        out = ["p0"]
        for j, h in ((0, self.h0), (1, self.h1)):
            if h.dependence is not None:
                out.append(f"h{j}_dep")
            for i in range(len(h.marginals)):
                out.append(f"h{j}_m{i}_shape")
                out.append(f"h{j}_m{i}_scale")
        return tuple(out)

    def get(self, name: str) -> float:
        return dict(zip(self.names(), self.values()))[name]

    def values(self) -> np.ndarray:
        out = [self.p0]
        for h in (self.h0, self.h1):
            if h.dependence is not None:
                out.append(h.dependence)
            for shape, scale in h.marginals:
                out.extend((shape, scale))
        return np.array(out)

    def free_values(self) -> np.ndarray:
        table = dict(zip(self.names(), self.values()))
        return np.array([table[n] for n in self.free])

    def replace_free(self, values) -> ParamVector:
        """Return a copy with the free entries replaced, in canonical order."""
        values = np.asarray(values, dtype=float)
        if values.shape != (len(self.free),):
            raise ValueError(
                f"expected {len(self.free)} free values, got shape {values.shape}"
            )
        table = dict(zip(self.names(), self.values()))
        table.update(zip(self.free, values))
        return self._from_table(table)

    def with_free(self, free) -> ParamVector:
        """Return a copy with a different free subset."""
        return replace(self, free=tuple(free))

    def _from_table(self, table: dict) -> ParamVector:
        def hyp(j: int, old: HypothesisParams) -> HypothesisParams:
            dep = table[f"h{j}_dep"] if old.dependence is not None else None
            margs = tuple(
                (table[f"h{j}_m{i}_shape"], table[f"h{j}_m{i}_scale"])
                for i in range(len(old.marginals))
            )
            return HypothesisParams(dep, margs)

        return ParamVector(
            p0=table["p0"], h0=hyp(0, self.h0), h1=hyp(1, self.h1), free=self.free
        )


@dataclass(frozen=True)
class Scenario:
    """Two-hypothesis sensing scenario: copula families plus parameters.

    ``params`` carries the ground-truth values (used for data generation
    and oracle design) and the free-parameter subset (used by
    estimation). Candidate parameter vectors produced during fitting are
    turned into concrete models through :meth:`hypothesis` and
    :meth:`mixture`.
    """

    copula0: CopulaModel
    copula1: CopulaModel
    params: ParamVector

    def __post_init__(self):
        n = self.params.n_sensors
        for j, cop, h in ((0, self.copula0, self.params.h0), (1, self.copula1, self.params.h1)):
            if cop.dim != n:
                raise ValueError(f"copula{j} dimension {cop.dim} != {n} sensors")
            has_dep = h.dependence is not None
            if has_dep != (cop.n_params == 1):
                raise ValueError(
                    f"hypothesis {j}: dependence parameter presence does not "
                    f"match the {cop.family.value} family"
                )

    @property
    def n_sensors(self) -> int:
        return self.params.n_sensors

    def hypothesis(self, j: int, params: ParamVector | None = None) -> HypothesisModel:
        """Concrete joint model under hypothesis j at the given (or true) params."""
        if j not in (0, 1):
            raise ValueError(f"hypothesis index must be 0 or 1, got {j}")
        pv = self.params if params is None else params
        cop = self.copula0 if j == 0 else self.copula1
        h = pv.h0 if j == 0 else pv.h1
        margs = tuple(GammaMarginal(shape, scale) for shape, scale in h.marginals)
        return HypothesisModel(copula=cop, theta=h.dependence, marginals=margs)

    def mixture(self, params: ParamVector | None = None) -> MixtureModel:
        """Prior-weighted mixture at the given (or true) params."""
        pv = self.params if params is None else params
        return MixtureModel(pv.p0, self.hypothesis(0, pv), self.hypothesis(1, pv))
