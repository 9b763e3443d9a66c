"""Bivariate copula models for conditionally dependent sensor observations.

A copula couples marginal distributions into a joint law on the unit
hypercube. Two families are provided: the independence copula (any
dimension) and the one-parameter Clayton copula (dimension 2, lower tail
dependent), which is the workhorse dependence model for the detection
scenarios in this package.

Clayton density and distribution, for theta > 0:

    c(v1, v2) = (1 + theta) (v1 v2)^(-1-theta)
                (v1^-theta + v2^-theta - 1)^(-2-1/theta)
    C(v1, v2) = (v1^-theta + v2^-theta - 1)^(-1/theta)

theta -> 0 recovers independence; that limit is excluded here and modeled
by the independence family instead, so every Clayton instance has a
strictly positive parameter.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

# Hard admissible range for the Clayton parameter. The lower end is close
# enough to independence for any scenario in this package; the upper end
# gives Spearman rho ~ 0.99.
THETA_MIN = 1e-3
THETA_MAX = 50.0

# Interior clamp applied before power evaluation so that boundary inputs
# do not overflow. Only the lower edge needs protection: v = 1 is exact
# under every power in the formulas above.
_EPS = 1e-12


class CopulaFamily(enum.Enum):
    """Supported copula families."""

    INDEPENDENCE = "independence"
    CLAYTON = "clayton"


@dataclass(frozen=True)
class CopulaModel:
    """A copula family together with its dimension.

    Parameters
    ----------
    family : CopulaFamily
        Which family this model belongs to.
    dim : int, optional
        Number of coupled coordinates. The Clayton family is implemented
        for ``dim == 2`` only; independence accepts any ``dim >= 1``.
    """

    family: CopulaFamily
    dim: int = 2

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"copula dimension must be >= 1, got {self.dim}")
        if self.family is CopulaFamily.CLAYTON and self.dim != 2:
            raise ValueError("Clayton copula is only implemented in dimension 2")

    @property
    def n_params(self) -> int:
        """Number of dependence parameters (0 or 1)."""
        return 0 if self.family is CopulaFamily.INDEPENDENCE else 1


def _check_theta(model: CopulaModel, theta: float | None) -> float | None:
    if model.family is CopulaFamily.INDEPENDENCE:
        if theta is not None:
            raise ValueError("independence copula takes no parameter")
        return None
    if theta is None or not np.isfinite(theta) or theta <= 0.0:
        raise ValueError(f"Clayton parameter must be finite and > 0, got {theta}")
    return float(theta)


def _check_unit_cube(model: CopulaModel, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[-1:] != (model.dim,):
        raise ValueError(
            f"expected trailing axis of length {model.dim}, got shape {v.shape}"
        )
    if not np.all(np.isfinite(v)) or np.any(v < 0.0) or np.any(v > 1.0):
        raise ValueError("copula arguments must lie in [0, 1]")
    return v


def copula_density(model: CopulaModel, theta: float | None, v) -> np.ndarray:
    """Copula density c(v) evaluated elementwise.

    Parameters
    ----------
    model : CopulaModel
    theta : float or None
        Dependence parameter; must be None for independence and > 0 for
        Clayton.
    v : array_like, shape (..., dim)
        Points in the unit hypercube. Boundary values are admitted and
        evaluated in the closure of the formula (the lower edge is
        clamped inward by a machine-scale amount before powers are
        taken).

    Returns
    -------
    ndarray, shape (...)
        Density values; identically 1 for independence.
    """
    theta = _check_theta(model, theta)
    v = _check_unit_cube(model, v)
    if model.family is CopulaFamily.INDEPENDENCE:
        return np.ones(v.shape[:-1])
    # Log-space evaluation is overflow-safe over the whole admissible
    # theta range, including near-zero arguments.
    a = -theta * np.log(np.maximum(v, _EPS))  # a_i = -theta log v_i >= 0
    amax = np.max(a, axis=-1)
    bracket = np.exp(a[..., 0] - amax) + np.exp(a[..., 1] - amax) - np.exp(-amax)
    log_c = (
        np.log1p(theta)
        + (1.0 + theta) / theta * (a[..., 0] + a[..., 1])
        - (2.0 + 1.0 / theta) * (amax + np.log(bracket))
    )
    return np.exp(log_c)


def copula_cdf(model: CopulaModel, theta: float | None, v) -> np.ndarray:
    """Copula distribution function C(v) evaluated elementwise.

    Boundary behavior is exact: the result is 0 whenever a coordinate is
    0 and reduces to v_j when every other coordinate is 1.
    """
    theta = _check_theta(model, theta)
    v = _check_unit_cube(model, v)
    if model.family is CopulaFamily.INDEPENDENCE:
        return np.prod(v, axis=-1)
    at_zero = np.any(v == 0.0, axis=-1)
    a = -theta * np.log(np.maximum(v, _EPS))
    amax = np.max(a, axis=-1)
    bracket = np.exp(a[..., 0] - amax) + np.exp(a[..., 1] - amax) - np.exp(-amax)
    out = np.exp(-(amax + np.log(bracket)) / theta)
    return np.where(at_zero, 0.0, out)


def clayton_density_grid(u1: np.ndarray, u2: np.ndarray, theta: float) -> np.ndarray:
    """Clayton density on the tensor grid u1 x u2, direct formula.

    Fast path used by quantized-mass assembly: ``u1`` and ``u2`` are 1-D
    arrays of marginal cdf values at cell midpoints (strictly inside
    (0, 1)), and the result has shape (len(u1), len(u2)). Powers can
    underflow to zero in the far joint tail for large theta; those
    entries carry negligible true mass and are zeroed.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        t1 = np.maximum(u1, _EPS) ** -theta
        t2 = np.maximum(u2, _EPS) ** -theta
        bracket = t1[:, None] + t2[None, :] - 1.0
        dens = (
            (1.0 + theta)
            * (t1 ** ((1.0 + theta) / theta))[:, None]
            * (t2 ** ((1.0 + theta) / theta))[None, :]
            * bracket ** (-2.0 - 1.0 / theta)
        )
    return np.where(np.isfinite(dens), dens, 0.0)


def sample_copula(
    model: CopulaModel, theta: float | None, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw n vectors from the copula by conditional inversion.

    For Clayton, v1 ~ U(0,1) and v2 is the inverse of the conditional
    distribution C(v2 | v1) at an independent uniform w:

        v2 = ((w^(-theta/(1+theta)) - 1) v1^-theta + 1)^(-1/theta)

    Returns
    -------
    ndarray, shape (n, dim)
        Samples strictly inside the open unit hypercube.
    """
    theta = _check_theta(model, theta)
    if n < 0:
        raise ValueError(f"sample count must be >= 0, got {n}")
    if model.family is CopulaFamily.INDEPENDENCE:
        u = rng.random((n, model.dim))
        return np.clip(u, _EPS, 1.0 - _EPS)
    v1 = np.clip(rng.random(n), _EPS, 1.0 - _EPS)
    w = np.clip(rng.random(n), _EPS, 1.0 - _EPS)
    v2 = ((w ** (-theta / (1.0 + theta)) - 1.0) * v1**-theta + 1.0) ** (-1.0 / theta)
    v2 = np.clip(v2, _EPS, 1.0 - _EPS)
    return np.column_stack([v1, v2])


def spearman_rho(model: CopulaModel, theta: float | None, resolution: int = 400) -> float:
    """Spearman rank correlation rho = 12 * int C(u, v) du dv - 3.

    The double integral is taken by the midpoint rule on a
    ``resolution x resolution`` grid, which is accurate to well below
    1e-3 at the default resolution for every admissible theta.
    """
    theta = _check_theta(model, theta)
    if model.dim != 2:
        raise ValueError("Spearman rho is defined here for dimension 2 only")
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")
    if model.family is CopulaFamily.INDEPENDENCE:
        return 0.0
    g = (np.arange(resolution) + 0.5) / resolution
    t = np.maximum(g, _EPS) ** -theta
    bracket = t[:, None] + t[None, :] - 1.0
    c_grid = bracket ** (-1.0 / theta)
    return float(12.0 * c_grid.mean() - 3.0)


def theta_from_rho(model: CopulaModel, rho: float, tol: float = 1e-6) -> float:
    """Invert rho -> theta for the Clayton family by bisection.

    Parameters
    ----------
    model : CopulaModel
        Must be a Clayton model.
    rho : float
        Target Spearman correlation; must be achievable within the
        admissible parameter range [THETA_MIN, THETA_MAX].
    tol : float, optional
        Absolute bisection tolerance on theta.

    Returns
    -------
    float
        theta with spearman_rho(theta) ~= rho.
    """
    if model.family is not CopulaFamily.CLAYTON:
        raise ValueError("theta_from_rho applies to the Clayton family only")
    lo, hi = THETA_MIN, THETA_MAX
    rho_lo = spearman_rho(model, lo)
    rho_hi = spearman_rho(model, hi)
    if not rho_lo <= rho <= rho_hi:
        raise ValueError(
            f"rho={rho} outside achievable range [{rho_lo:.4f}, {rho_hi:.4f}]"
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if spearman_rho(model, mid) < rho:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
