"""
EM estimation of the hidden logistic process regression model.

Each EM iteration computes responsibilities (E-step), refits the K
polynomials by weighted least squares and the shared variance in closed
form, then refits the gate weights with IRLS warm-started from the
previous iterate. Several independently seeded runs are made and the one
with the highest final log-likelihood is kept; the first run starts from a
least-squares segmentation, the others from random contiguous blocks.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, NonNegativeInt, PositiveFloat, PositiveInt
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import logsumexp

from .core import (
    SIGMA2_FLOOR, Dataset, GateWeights, Responsibilities, RhlpParams,
    design_matrix, gate_proportions, log_joint, regression_mean,
)
from .exceptions import AllStartsFailed, DegenerateComponent, TooFewPoints
from .irls import GateFit, gate_objective, irls_fit_gates
from .utils import derive_rng, run_ordered

logger = logging.getLogger(__name__)

MASS_FLOOR = 1e-8
RIDGE_FACTOR = 1e-8
GATE_INIT_SCALE = 0.5
SEGMENTATION_POINTS = 300
SEGMENTATION_MARGIN = 8.0


class FitConfig(BaseModel):
    """
    Multi-start EM settings.

    ``gem_irls_cap`` caps the inner IRLS iterations (generalized EM);
    ``threads`` only changes wall time, never the result.
    """

    model_config = ConfigDict(frozen=True)

    n_starts: PositiveInt = 10
    em_tol: PositiveFloat = 1e-6
    em_max_iter: PositiveInt = 1000
    irls_tol: PositiveFloat = 1e-6
    irls_max_iter: PositiveInt = 50
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    gem_irls_cap: Optional[PositiveInt] = None
    threads: PositiveInt = 1
    max_restarts: NonNegativeInt = 3

    @property
    def irls_cap(self) -> int:
        return self.gem_irls_cap or self.irls_max_iter

    @classmethod
    def from_settings(cls, **overrides) -> 'FitConfig':
        """Defaults from the Django settings; ``None`` overrides are ignored."""
        from django.conf import settings

        values = {
            'n_starts': getattr(settings, 'RHLP_N_STARTS', 10),
            'em_tol': getattr(settings, 'RHLP_EM_TOL', 1e-6),
            'em_max_iter': getattr(settings, 'RHLP_EM_MAX_ITER', 1000),
            'irls_tol': getattr(settings, 'RHLP_IRLS_TOL', 1e-6),
            'irls_max_iter': getattr(settings, 'RHLP_IRLS_MAX_ITER', 50),
            'seed': getattr(settings, 'RHLP_SEED', 0),
            'threads': getattr(settings, 'RHLP_THREADS', 1),
        }
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)


@dataclass(frozen=True, eq=False)
class FitResult:
    """Best EM run: converged parameters plus per-point outputs."""

    params: RhlpParams
    loglik_trace: Tuple[float, ...]
    responsibilities: Responsibilities
    fitted: np.ndarray
    proportions: np.ndarray
    map_labels: np.ndarray
    n_iter: int
    converged: bool
    best_start_index: int
    irls_iterations: Tuple[int, ...] = ()

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]


def e_step(data: Dataset, params: RhlpParams) -> Tuple[Responsibilities, float]:
    """
    Posterior component probabilities and the current log-likelihood.

    Returns:
        (tau, loglik); tau rows are normalized in log space.
    """
    joint = log_joint(data.x, data.t, params)
    normalizer = logsumexp(joint, axis=1)
    tau = np.exp(joint - normalizer[:, None])
    tau /= tau.sum(axis=1, keepdims=True)
    return tau, float(np.sum(normalizer))


def _solve_normal_equations(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return cho_solve(cho_factor(gram), rhs)
    except LinAlgError:
        ridge = RIDGE_FACTOR * np.trace(gram) / gram.shape[0]
        logger.debug(f"Normal equations not positive definite; retrying with ridge {ridge:.3e}")
        return cho_solve(cho_factor(gram + ridge * np.eye(gram.shape[0])), rhs)


def weighted_least_squares(
    design: np.ndarray, x: np.ndarray, weights: np.ndarray, component: int = 0
) -> np.ndarray:
    """
    argmin_β Σ_i w_i (x_i − β·T_i)² via the normal equations.

    Raises:
        DegenerateComponent: weight mass below the floor or a singular system
    """
    mass = float(np.sum(weights))
    if mass < MASS_FLOOR:
        raise DegenerateComponent(component, mass)
    gram = design.T @ (weights[:, None] * design)
    rhs = design.T @ (weights * x)
    try:
        return _solve_normal_equations(gram, rhs)
    except LinAlgError:
        raise DegenerateComponent(component, mass)


def m_step_beta(
    data: Dataset, tau: Responsibilities, p: int, design: Optional[np.ndarray] = None
) -> np.ndarray:
    """K weighted least-squares fits, one per column of tau."""
    if design is None:
        design = design_matrix(data.t, p)
    return np.array([
        weighted_least_squares(design, data.x, tau[:, k], component=k)
        for k in range(tau.shape[1])
    ])


def m_step_sigma(
    data: Dataset, tau: Responsibilities, beta: np.ndarray, design: Optional[np.ndarray] = None
) -> float:
    """σ² = (1/n)·Σ_i Σ_k τ_ik (x_i − β_kᵀt_i)², floored at 1e-12."""
    if design is None:
        design = design_matrix(data.t, beta.shape[1] - 1)
    residuals = data.x[:, None] - design @ beta.T
    return max(float(np.sum(tau * residuals ** 2)) / data.n, SIGMA2_FLOOR)


def random_gate_weights(K: int, rng: np.random.Generator) -> GateWeights:
    w = rng.normal(0.0, GATE_INIT_SCALE, size=(K, 2))
    w[-1] = 0.0
    return w


def check_size(data: Dataset, K: int, p: int) -> None:
    if K < 1 or p < 0:
        raise ValueError(f"need K >= 1 and p >= 0, got K={K}, p={p}")
    if data.n < K * (p + 2):
        raise TooFewPoints(data.n, K, p)


def contiguous_blocks(n: int, K: int, p: int, rng: np.random.Generator) -> np.ndarray:
    """
    Random cut of range(n) into K contiguous blocks of at least p+2 points.

    Returns:
        K+1 block edges, starting at 0 and ending at n
    """
    min_size = p + 2
    slack = n - K * min_size
    extras = np.sort(rng.integers(0, slack + 1, size=K - 1))
    return np.concatenate([[0], np.arange(1, K) * min_size + extras, [n]]).astype(int)


def _block_fits(data: Dataset, p: int, edges) -> Tuple[np.ndarray, float]:
    """OLS polynomial per block and the pooled residual variance."""
    design = design_matrix(data.t, p)
    K = len(edges) - 1
    beta = np.empty((K, p + 1))
    sse = 0.0
    for k in range(K):
        block = slice(edges[k], edges[k + 1])
        beta[k] = np.linalg.lstsq(design[block], data.x[block], rcond=None)[0]
        sse += float(np.sum((data.x[block] - design[block] @ beta[k]) ** 2))
    return beta, max(sse / data.n, SIGMA2_FLOOR)


def initialize(data: Dataset, K: int, p: int, rng: np.random.Generator) -> RhlpParams:
    """
    Starting parameters from a random contiguous partition of the time axis.

    Each block gets its own OLS polynomial; σ² is the pooled residual
    variance; gate logits are quadratic-free "nearest block midpoint"
    scores scaled by 10/range(t), gauge-fixed on the last row.

    Raises:
        TooFewPoints: n < K·(p+2)
    """
    check_size(data, K, p)
    edges = contiguous_blocks(data.n, K, p, rng)
    beta, sigma2 = _block_fits(data, p, edges)
    midpoints = np.array([0.5 * (data.t[edges[k]] + data.t[edges[k + 1] - 1]) for k in range(K)])

    span = float(data.t[-1] - data.t[0]) or 1.0
    sharpness = 10.0 / span
    w = np.column_stack([-0.5 * sharpness * midpoints ** 2, sharpness * midpoints])
    w -= w[-1]
    return RhlpParams(w=w, beta=beta, sigma2=sigma2)


def segmentation_gates(t: np.ndarray, edges) -> GateWeights:
    """
    Linear logits that switch from block k−1 to block k halfway across each cut.

    At the points on either side of a cut the two neighbouring logits
    differ by SEGMENTATION_MARGIN.
    """
    K = len(edges) - 1
    w = np.zeros((K, 2))
    span = float(t[-1] - t[0]) or 1.0
    for k in range(1, K):
        before, after = float(t[edges[k] - 1]), float(t[edges[k]])
        slope = 2.0 * SEGMENTATION_MARGIN / max(after - before, 1e-9 * span)
        w[k, 1] = w[k - 1, 1] + slope
        w[k, 0] = w[k - 1, 0] - slope * 0.5 * (before + after)
    return w - w[-1]


def segmentation_start(data: Dataset, K: int, p: int) -> RhlpParams:
    """
    Deterministic starting parameters from a least-squares segmentation.

    Boundaries come from the piecewise dynamic program run on at most
    SEGMENTATION_POINTS evenly spaced observations; the blocks are then
    refitted on the full sample and the gates are made sharp at the cuts.

    Raises:
        TooFewPoints: n < K·(p+2)
    """
    from baselines.piecewise import optimal_boundaries, segment_costs

    check_size(data, K, p)
    min_size = p + 2
    size = min(data.n, max(SEGMENTATION_POINTS, K * min_size))
    index = np.unique(np.linspace(0, data.n - 1, size).round().astype(int))
    design = design_matrix(data.t[index], p)
    boundaries, _ = optimal_boundaries(segment_costs(design, data.x[index], min_size), K, min_size)
    edges = [0] + [int(index[b]) for b in boundaries] + [data.n]

    beta, sigma2 = _block_fits(data, p, edges)
    logger.debug(f"Segmentation start K={K} p={p}: edges={edges}")
    return RhlpParams(w=segmentation_gates(data.t, edges), beta=beta, sigma2=sigma2)


def starting_params(
    data: Dataset, K: int, p: int, rng: np.random.Generator, start_index: int, attempt: int
) -> RhlpParams:
    """The first attempt of start 0 is the segmentation start; every other one is random."""
    if start_index == 0 and attempt == 0:
        return segmentation_start(data, K, p)
    return initialize(data, K, p, rng)


def _m_step_gates(
    t: np.ndarray,
    tau: Responsibilities,
    w_prev: GateWeights,
    first_iteration: bool,
    rng: np.random.Generator,
    config: FitConfig,
) -> GateFit:
    if not first_iteration:
        return irls_fit_gates(t, tau, w_prev, config.irls_tol, config.irls_cap)
    fit = irls_fit_gates(t, tau, random_gate_weights(w_prev.shape[0], rng),
                         config.irls_tol, config.irls_cap)
    if fit.q1 < gate_objective(t, tau, w_prev):
        # A capped solve from a random start can land below the initial gates.
        fit = irls_fit_gates(t, tau, w_prev, config.irls_tol, config.irls_cap)
    return fit


def _run_em(
    data: Dataset, K: int, p: int, config: FitConfig, rng: np.random.Generator,
    start_index: int, attempt: int = 0,
) -> FitResult:
    design = design_matrix(data.t, p)
    params = starting_params(data, K, p, rng, start_index, attempt)
    tau, loglik = e_step(data, params)
    trace = [loglik]
    irls_iterations = []
    converged = False

    for iteration in range(1, config.em_max_iter + 1):
        beta = m_step_beta(data, tau, p, design)
        sigma2 = m_step_sigma(data, tau, beta, design)
        gates = _m_step_gates(data.t, tau, params.w, iteration == 1, rng, config)
        irls_iterations.append(gates.n_iter)
        params = RhlpParams(w=gates.w, beta=beta, sigma2=sigma2)

        tau, new_loglik = e_step(data, params)
        trace.append(new_loglik)
        change = abs(new_loglik - loglik) / max(abs(loglik), np.finfo(float).tiny)
        logger.debug(
            f"start {start_index} iter {iteration}: loglik={new_loglik:.6f} "
            f"irls={gates.n_iter}"
        )
        loglik = new_loglik
        if change < config.em_tol:
            converged = True
            break

    return FitResult(
        params=params,
        loglik_trace=tuple(trace),
        responsibilities=tau,
        fitted=regression_mean(data.t, params),
        proportions=gate_proportions(data.t, params.w),
        map_labels=np.argmax(tau, axis=1),
        n_iter=len(trace) - 1,
        converged=converged,
        best_start_index=start_index,
        irls_iterations=tuple(irls_iterations),
    )


def _run_start(data: Dataset, K: int, p: int, config: FitConfig, start_index: int) -> Optional[FitResult]:
    for attempt in range(config.max_restarts + 1):
        rng = derive_rng(config.seed, start_index, attempt)
        try:
            return _run_em(data, K, p, config, rng, start_index, attempt)
        except DegenerateComponent as exc:
            logger.warning(f"Start {start_index}, attempt {attempt}: {exc}; restarting")
    return None


def select_best(outcomes) -> Optional[object]:
    """Highest final log-likelihood; the first (lowest start index) wins ties."""
    best = None
    for outcome in outcomes:
        if outcome is not None and (best is None or outcome.loglik > best.loglik):
            best = outcome
    return best


def fit(data: Dataset, K: int, p: int, config: Optional[FitConfig] = None) -> FitResult:
    """
    Multi-start EM fit.

    Args:
        data: Observations
        K: Number of polynomial components
        p: Polynomial degree
        config: EM settings (defaults when omitted)

    Returns:
        FitResult of the best start

    Raises:
        TooFewPoints: n < K·(p+2)
        AllStartsFailed: every start exhausted its restarts
    """
    config = config or FitConfig()
    check_size(data, K, p)
    logger.info(f"Fitting RHLP K={K} p={p} on n={data.n} with {config.n_starts} starts (seed {config.seed})")

    outcomes = run_ordered(
        lambda start: _run_start(data, K, p, config, start),
        range(config.n_starts),
        config.threads,
    )
    best = select_best(outcomes)
    if best is None:
        raise AllStartsFailed(
            f"all {config.n_starts} starts failed for K={K}, p={p} "
            f"after {config.max_restarts} restarts each"
        )

    logger.info(
        f"RHLP K={K} p={p}: loglik={best.loglik:.6f} after {best.n_iter} iterations "
        f"(start {best.best_start_index}, converged={best.converged})"
    )
    return best
