"""
HMM Regression

The hidden component sequence is a K-state Markov chain; state k emits
N(β_kᵀ·basis(t), σ²) with one variance shared by all states. Fitted by
Baum-Welch with a scaled forward-backward pass. Predictions use the
filtering probabilities p(z_i = k | x_1..x_i) from the forward pass alone.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from rhlp.core import Dataset, design_matrix
from rhlp.em import FitConfig, check_size, m_step_beta, m_step_sigma, select_best, starting_params
from rhlp.exceptions import AllStartsFailed, DegenerateComponent
from rhlp.utils import derive_rng, run_ordered

logger = logging.getLogger(__name__)

SELF_TRANSITION = 0.9
STOCHASTIC_TOL = 1e-10


def _readonly(values) -> np.ndarray:
    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class HmmRegParams:
    """
    Attributes:
        initial: Initial state distribution (K,)
        trans: Row-stochastic transition matrix (K×K)
        beta: K×(p+1) emission polynomial coefficients
        sigma2: Shared emission variance
    """

    initial: np.ndarray
    trans: np.ndarray
    beta: np.ndarray
    sigma2: float

    def __post_init__(self):
        initial = _readonly(self.initial).ravel()
        trans = _readonly(np.atleast_2d(self.trans))
        beta = _readonly(np.atleast_2d(self.beta))
        K = initial.size
        if trans.shape != (K, K) or beta.shape[0] != K:
            raise ValueError(f"inconsistent shapes: initial {initial.shape}, trans {trans.shape}, beta {beta.shape}")
        if np.any(initial < 0) or abs(initial.sum() - 1.0) > STOCHASTIC_TOL:
            raise ValueError("initial distribution must be a probability vector")
        if np.any(trans < 0) or np.any(np.abs(trans.sum(axis=1) - 1.0) > STOCHASTIC_TOL):
            raise ValueError("transition matrix must be row-stochastic")
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0.0):
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        object.__setattr__(self, 'initial', initial)
        object.__setattr__(self, 'trans', trans)
        object.__setattr__(self, 'beta', beta)
        object.__setattr__(self, 'sigma2', float(self.sigma2))

    @property
    def K(self) -> int:
        return int(self.initial.size)

    @property
    def p(self) -> int:
        return int(self.beta.shape[1] - 1)


@dataclass(frozen=True, eq=False)
class HmmFitResult:
    params: HmmRegParams
    loglik_trace: Tuple[float, ...]
    posteriors: np.ndarray
    filtered: np.ndarray
    fitted: np.ndarray
    map_labels: np.ndarray
    n_iter: int
    converged: bool
    best_start_index: int

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]


def emission_log_densities(data: Dataset, params: HmmRegParams) -> np.ndarray:
    """log N(x_i; β_kᵀ·basis(t_i), σ²), n×K."""
    means = design_matrix(data.t, params.p) @ params.beta.T
    return norm.logpdf(data.x[:, None], loc=means, scale=np.sqrt(params.sigma2))


def forward_filter(data: Dataset, params: HmmRegParams) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    Normalized forward recursion, one log-sum-exp per step.

    Returns:
        (filtered, log_scales, loglik): filtered rows are p(z_i | x_1..x_i);
        log_scales[i] = log p(x_i | x_1..x_{i-1}); loglik is their sum.
    """
    log_emissions = emission_log_densities(data, params)
    n, K = log_emissions.shape
    filtered = np.empty((n, K))
    log_scales = np.empty(n)
    predicted = params.initial
    with np.errstate(divide='ignore'):
        for i in range(n):
            log_joint = np.log(predicted) + log_emissions[i]
            log_scales[i] = logsumexp(log_joint)
            filtered[i] = np.exp(log_joint - log_scales[i])
            predicted = filtered[i] @ params.trans
    return filtered, log_scales, float(np.sum(log_scales))


def hmm_log_likelihood(data: Dataset, params: HmmRegParams) -> float:
    return forward_filter(data, params)[2]


def forward_backward(data: Dataset, params: HmmRegParams):
    """
    Smoothed state posteriors and expected transition counts.

    Returns:
        (gamma n×K, expected transitions K×K, loglik)
    """
    log_emissions = emission_log_densities(data, params)
    filtered, log_scales, loglik = forward_filter(data, params)
    n, K = log_emissions.shape
    # p(x_{i+1} | z_{i+1}=k) / p(x_{i+1} | x_1..x_i)
    ratios = np.exp(log_emissions[1:] - log_scales[1:, None])

    backward = np.ones((n, K))
    for i in range(n - 2, -1, -1):
        backward[i] = params.trans @ (ratios[i] * backward[i + 1])

    gamma = filtered * backward
    gamma /= gamma.sum(axis=1, keepdims=True)

    transitions = params.trans * (filtered[:-1].T @ (ratios * backward[1:]))
    return gamma, transitions, loglik


def filtering_probabilities(data: Dataset, params: HmmRegParams) -> np.ndarray:
    return forward_filter(data, params)[0]


def hmm_filter_predict(data: Dataset, params: HmmRegParams) -> np.ndarray:
    """Σ_k ω_k(t_i)·β_kᵀ·basis(t_i) with ω the filtering probabilities."""
    means = design_matrix(data.t, params.p) @ params.beta.T
    return np.sum(filtering_probabilities(data, params) * means, axis=1)


def initial_chain(K: int, left_to_right: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """Starting (initial, trans): diagonal-dominant, uniform initial law."""
    if K == 1:
        return np.ones(1), np.ones((1, 1))
    if left_to_right:
        trans = np.diag(np.full(K, SELF_TRANSITION)) + np.diag(np.full(K - 1, 1.0 - SELF_TRANSITION), k=1)
        trans[-1, -1] = 1.0
        initial = np.zeros(K)
        initial[0] = 1.0
        return initial, trans
    trans = np.full((K, K), (1.0 - SELF_TRANSITION) / (K - 1))
    np.fill_diagonal(trans, SELF_TRANSITION)
    return np.full(K, 1.0 / K), trans


def _normalize_rows(counts: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    totals = counts.sum(axis=1, keepdims=True)
    rows = np.where(totals > 0, counts / np.where(totals > 0, totals, 1.0), fallback)
    return rows / rows.sum(axis=1, keepdims=True)


def _run_baum_welch(
    data: Dataset, K: int, p: int, config: FitConfig, rng: np.random.Generator,
    start_index: int, left_to_right: bool, attempt: int = 0,
) -> HmmFitResult:
    design = design_matrix(data.t, p)
    start = starting_params(data, K, p, rng, start_index, attempt)
    initial, trans = initial_chain(K, left_to_right)
    params = HmmRegParams(initial=initial, trans=trans, beta=start.beta, sigma2=start.sigma2)

    gamma, transitions, loglik = forward_backward(data, params)
    trace = [loglik]
    converged = False
    for iteration in range(1, config.em_max_iter + 1):
        beta = m_step_beta(data, gamma, p, design)
        sigma2 = m_step_sigma(data, gamma, beta, design)
        params = HmmRegParams(
            initial=gamma[0] / gamma[0].sum(),
            trans=_normalize_rows(transitions, params.trans),
            beta=beta,
            sigma2=sigma2,
        )
        gamma, transitions, new_loglik = forward_backward(data, params)
        trace.append(new_loglik)
        change = abs(new_loglik - loglik) / max(abs(loglik), np.finfo(float).tiny)
        logger.debug(f"hmm start {start_index} iter {iteration}: loglik={new_loglik:.6f}")
        loglik = new_loglik
        if change < config.em_tol:
            converged = True
            break

    filtered = filtering_probabilities(data, params)
    means = design @ params.beta.T
    return HmmFitResult(
        params=params,
        loglik_trace=tuple(trace),
        posteriors=gamma,
        filtered=filtered,
        fitted=np.sum(filtered * means, axis=1),
        map_labels=np.argmax(gamma, axis=1),
        n_iter=len(trace) - 1,
        converged=converged,
        best_start_index=start_index,
    )


def _run_start(
    data: Dataset, K: int, p: int, config: FitConfig, start_index: int, left_to_right: bool
) -> Optional[HmmFitResult]:
    for attempt in range(config.max_restarts + 1):
        rng = derive_rng(config.seed, start_index, attempt)
        try:
            return _run_baum_welch(data, K, p, config, rng, start_index, left_to_right, attempt)
        except DegenerateComponent as exc:
            logger.warning(f"HMM start {start_index}, attempt {attempt}: {exc}; restarting")
    return None


def fit_hmm_regression(
    data: Dataset,
    K: int,
    p: int,
    config: Optional[FitConfig] = None,
    left_to_right: bool = False,
) -> HmmFitResult:
    """
    Multi-start Baum-Welch fit.

    Starts are seeded and initialized like the mixture EM (a segmentation
    start, then random contiguous blocks for β and σ²) with a 0.9
    self-transition chain.

    Raises:
        TooFewPoints: n < K·(p+2)
        AllStartsFailed: every start exhausted its restarts
    """
    config = config or FitConfig()
    check_size(data, K, p)
    logger.info(f"Fitting HMM regression K={K} p={p} on n={data.n} with {config.n_starts} starts")

    outcomes = run_ordered(
        lambda start: _run_start(data, K, p, config, start, left_to_right),
        range(config.n_starts),
        config.threads,
    )
    best = select_best(outcomes)
    if best is None:
        raise AllStartsFailed(f"all {config.n_starts} HMM starts failed for K={K}, p={p}")
    logger.info(f"HMM K={K} p={p}: loglik={best.loglik:.6f} after {best.n_iter} iterations")
    return best
