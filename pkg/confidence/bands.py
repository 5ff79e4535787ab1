"""
Confidence Bands

Asymptotic pointwise bands for the fitted regression curve:
f(t; θ̂) ± sqrt(χ²_{ν_θ, 1−α})·s(t), with s²(t) obtained by the delta
method from the gradient of f and an empirical Fisher information.

Parameter coordinates follow RhlpParams.to_vector(): β row-major, the
K−1 free gate rows row-major, then σ².
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import bisect
from scipy.special import gammainc

from model_selection.criteria import theta_dimension
from rhlp.core import Dataset, RhlpParams, gate_proportions, mixture_logpdf, polynomial_basis, regression_mean

logger = logging.getLogger(__name__)

SCORE_STEP = 1e-5
PINV_CONDITION = 1e12
QUANTILE_TOL = 1e-10


def f_gradient(t, params: RhlpParams) -> np.ndarray:
    """
    Analytic ∂f(t; θ)/∂Φ.

    ∂f/∂β_k = π_k·basis(t); ∂f/∂w_kj = v_j·π_k·(β_kᵀbasis(t) − f(t)) with
    v = (1, t) for the free rows; ∂f/∂σ² = 0.

    Returns:
        Vector over Φ for scalar t, or an (n × dim Φ) matrix for an array
    """
    times = np.atleast_1d(np.asarray(t, dtype=float))
    basis = polynomial_basis(times, params.p)
    pi = gate_proportions(times, params.w)
    means = basis @ params.beta.T
    f = np.sum(pi * means, axis=1)

    d_beta = (pi[:, :, None] * basis[:, None, :]).reshape(times.size, -1)
    regressors = np.column_stack([np.ones_like(times), times])
    gate_weight = (pi * (means - f[:, None]))[:, :-1]
    d_w = (gate_weight[:, :, None] * regressors[:, None, :]).reshape(times.size, -1)
    gradient = np.hstack([d_beta, d_w, np.zeros((times.size, 1))])
    return gradient[0] if np.ndim(t) == 0 else gradient


def observation_scores(data: Dataset, params: RhlpParams) -> np.ndarray:
    """
    Per-observation scores ∂ log p(x_i | t_i; Φ)/∂Φ by central differences.

    Step 1e-5·(1 + |Φ_j|); the σ² step is capped at σ²/2.

    Returns:
        n × dim Φ matrix
    """
    phi = params.to_vector()
    K, p = params.K, params.p
    scores = np.empty((data.n, phi.size))
    for j in range(phi.size):
        step = SCORE_STEP * (1.0 + abs(phi[j]))
        if j == phi.size - 1:
            step = min(step, 0.5 * phi[j])
        upper = phi.copy()
        lower = phi.copy()
        upper[j] += step
        lower[j] -= step
        delta = upper[j] - lower[j]
        scores[:, j] = (
            mixture_logpdf(data.x, data.t, RhlpParams.from_vector(upper, K, p))
            - mixture_logpdf(data.x, data.t, RhlpParams.from_vector(lower, K, p))
        ) / delta
    return scores


def fisher_information(data: Dataset, params: RhlpParams) -> np.ndarray:
    """
    Empirical (outer product of scores) Fisher information, summed over
    observations and symmetrized.
    """
    scores = observation_scores(data, params)
    information = scores.T @ scores
    return 0.5 * (information + information.T)


class CurveUncertainty:
    """
    Delta-method variance of the fitted curve for one (data, params) pair.

    The information matrix and its inverse are computed once and reused for
    every evaluation time.
    """

    def __init__(self, data: Dataset, params: RhlpParams):
        self.data = data
        self.params = params

    @cached_property
    def information(self) -> np.ndarray:
        return fisher_information(self.data, self.params)

    @cached_property
    def inverse_unit_information(self) -> np.ndarray:
        """Inverse of the per-observation information I/n."""
        unit = self.information / self.data.n
        condition = np.linalg.cond(unit)
        if not np.isfinite(condition) or condition > PINV_CONDITION:
            logger.warning(f"Fisher information ill-conditioned (cond={condition:.3e}); using pseudo-inverse")
            return np.linalg.pinv(unit, hermitian=True)
        return np.linalg.inv(unit)

    def variance(self, t) -> np.ndarray:
        """s²(t) = (1/n)·Dᵀ (I/n)⁻¹ D, clipped at zero."""
        gradient = np.atleast_2d(f_gradient(np.atleast_1d(t), self.params))
        inverse = self.inverse_unit_information
        quadratic = np.einsum('ij,jk,ik->i', gradient, inverse, gradient) / self.data.n
        variance = np.maximum(quadratic, 0.0)
        return float(variance[0]) if np.ndim(t) == 0 else variance


def pointwise_variance(
    t, data: Dataset, params: RhlpParams, uncertainty: Optional[CurveUncertainty] = None
):
    """
    Empirical variance of f(t; θ̂).

    Pass a CurveUncertainty to reuse its cached information across calls.
    """
    uncertainty = uncertainty or CurveUncertainty(data, params)
    return uncertainty.variance(t)


def chi_square_quantile(dof: int, prob: float) -> float:
    """
    Inverse CDF of χ²(dof), by bisection on the regularized lower
    incomplete gamma function P(dof/2, x/2).
    """
    if dof < 1:
        raise ValueError(f"dof must be >= 1, got {dof}")
    if not 0.0 < prob < 1.0:
        raise ValueError(f"prob must be in (0, 1), got {prob}")

    def excess(x: float) -> float:
        return gammainc(dof / 2.0, x / 2.0) - prob

    upper = max(1.0, float(dof))
    while excess(upper) < 0.0:
        upper *= 2.0
    return float(bisect(excess, 0.0, upper, xtol=QUANTILE_TOL, maxiter=200))


@dataclass(frozen=True, eq=False)
class ConfidenceBand:
    ts: np.ndarray
    center: np.ndarray
    half_width: np.ndarray
    alpha: float
    dof: int

    @property
    def lower(self) -> np.ndarray:
        return self.center - self.half_width

    @property
    def upper(self) -> np.ndarray:
        return self.center + self.half_width


def confidence_band(
    grid: Sequence[float],
    data: Dataset,
    params: RhlpParams,
    alpha: float = 0.05,
    uncertainty: Optional[CurveUncertainty] = None,
) -> ConfidenceBand:
    """
    Pointwise 1−alpha band on ``grid``.

    The chi-square degrees of freedom are ν_θ = K(p+1) + 2(K−1), i.e. the
    free parameter count without σ².
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    ts = np.asarray(grid, dtype=float)
    dof = theta_dimension(params.K, params.p)
    uncertainty = uncertainty or CurveUncertainty(data, params)
    scale = np.sqrt(chi_square_quantile(dof, 1.0 - alpha))
    half_width = scale * np.sqrt(uncertainty.variance(ts))
    return ConfidenceBand(
        ts=ts,
        center=np.atleast_1d(regression_mean(ts, params)),
        half_width=np.atleast_1d(half_width),
        alpha=alpha,
        dof=dof,
    )
