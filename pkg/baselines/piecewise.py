"""
Piecewise Polynomial Regression

Exact least-squares segmentation of a series into K contiguous segments,
each fitted by its own degree-p polynomial. Every segment cost is
tabulated once; the optimal placement of the K−1 boundaries then follows
from the usual O(K·n²) dynamic programming recursion.

A boundary index is the first point of the segment to its right.
"""

import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from rhlp.core import SIGMA2_FLOOR, Dataset, polynomial_basis
from rhlp.exceptions import TooFewPoints

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PiecewiseFit:
    """
    Attributes:
        boundaries: K−1 strictly increasing segment start indices
        beta: K×(p+1) segment coefficients
        sse: Total squared error of the segment fits
        fitted: Per-point prediction
        t: Time points the fit was made on
        labels: Segment index of every point
    """

    boundaries: Tuple[int, ...]
    beta: np.ndarray
    sse: float
    fitted: np.ndarray
    t: np.ndarray
    labels: np.ndarray

    @property
    def K(self) -> int:
        return int(self.beta.shape[0])

    @property
    def p(self) -> int:
        return int(self.beta.shape[1] - 1)

    @property
    def edges(self) -> Tuple[int, ...]:
        return (0,) + tuple(self.boundaries) + (self.t.size,)

    @property
    def loglik(self) -> float:
        """Gaussian profile log-likelihood −n/2·(log(2π·sse/n) + 1)."""
        n = self.t.size
        return -0.5 * n * (math.log(2.0 * math.pi * max(self.sse / n, SIGMA2_FLOOR)) + 1.0)


def _batched_solve(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(gram, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        logger.debug("Singular segment Gram matrix; falling back to pseudo-inverse")
        return np.einsum('sij,sj->si', np.linalg.pinv(gram), rhs)


def segment_costs(design: np.ndarray, x: np.ndarray, min_size: int) -> np.ndarray:
    """
    OLS residual sum of squares of every segment [i, j).

    Sums are accumulated forward from each start i, so no prefix
    differences are taken.

    Returns:
        n×(n+1) table, cost[i, j]; +inf where j − i < min_size
    """
    n = x.size
    costs = np.full((n, n + 1), np.inf)
    outer = design[:, :, None] * design[:, None, :]
    cross = design * x[:, None]
    for start in range(n - min_size + 1):
        gram = np.cumsum(outer[start:], axis=0)[min_size - 1:]
        rhs = np.cumsum(cross[start:], axis=0)[min_size - 1:]
        energy = np.cumsum(x[start:] ** 2)[min_size - 1:]
        coef = _batched_solve(gram, rhs)
        sse = energy - np.einsum('si,si->s', rhs, coef)
        costs[start, start + min_size:] = np.maximum(sse, 0.0)
    return costs


def optimal_boundaries(costs: np.ndarray, K: int, min_size: int) -> Tuple[Tuple[int, ...], float]:
    """
    Minimize the summed segment cost over K−1 boundary placements.

    Ties go to the leftmost boundary.

    Returns:
        (boundaries, optimal cost)
    """
    n = costs.shape[0]
    best = np.full((K, n + 1), np.inf)
    best[0] = costs[0]
    backpointer = np.zeros((K, n + 1), dtype=int)
    for k in range(1, K):
        for end in range((k + 1) * min_size, n + 1):
            starts = np.arange(k * min_size, end - min_size + 1)
            candidates = best[k - 1, starts] + costs[starts, end]
            choice = int(np.argmin(candidates))
            best[k, end] = candidates[choice]
            backpointer[k, end] = starts[choice]

    boundaries = []
    end = n
    for k in range(K - 1, 0, -1):
        end = int(backpointer[k, end])
        boundaries.append(end)
    return tuple(reversed(boundaries)), float(best[K - 1, n])


def fit_piecewise_dp(data: Dataset, K: int, p: int) -> PiecewiseFit:
    """
    Globally optimal piecewise polynomial fit.

    Args:
        data: Observations
        K: Number of segments
        p: Polynomial degree per segment

    Returns:
        PiecewiseFit whose segments each hold at least p+2 points

    Raises:
        TooFewPoints: n < K·(p+2)
    """
    if K < 1 or p < 0:
        raise ValueError(f"need K >= 1 and p >= 0, got K={K}, p={p}")
    if data.n < K * (p + 2):
        raise TooFewPoints(data.n, K, p)

    min_size = p + 2
    design = polynomial_basis(data.t, p)
    costs = segment_costs(design, data.x, min_size)
    boundaries, optimum = optimal_boundaries(costs, K, min_size)

    edges = (0,) + boundaries + (data.n,)
    beta = np.empty((K, p + 1))
    labels = np.empty(data.n, dtype=int)
    for k in range(K):
        block = slice(edges[k], edges[k + 1])
        beta[k] = np.linalg.lstsq(design[block], data.x[block], rcond=None)[0]
        labels[block] = k
    fitted = np.einsum('ij,ij->i', design, beta[labels])
    sse = float(np.sum((data.x - fitted) ** 2))
    logger.info(f"Piecewise K={K} p={p} on n={data.n}: boundaries={list(boundaries)} sse={sse:.6f}")
    logger.debug(f"DP optimum {optimum:.10g}, refit sse {sse:.10g}")
    return PiecewiseFit(boundaries=boundaries, beta=beta, sse=sse, fitted=fitted, t=data.t, labels=labels)


def piecewise_predict(fit: PiecewiseFit, index: int) -> float:
    """Prediction at point ``index`` from the segment containing it."""
    if not 0 <= index < fit.t.size:
        raise IndexError(f"index {index} out of range for n={fit.t.size}")
    segment = int(np.searchsorted(fit.boundaries, index, side='right'))
    return float(polynomial_basis(fit.t[index], fit.p) @ fit.beta[segment])
