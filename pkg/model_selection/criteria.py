"""
Model Selection

BIC for the hidden logistic process model and exhaustive (K, p) grid
search.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

from rhlp.em import FitConfig, FitResult, fit
from rhlp.core import Dataset
from rhlp.exceptions import AllStartsFailed, EmptyGrid
from rhlp.utils import derive_seed, run_ordered

logger = logging.getLogger(__name__)

Cell = Tuple[int, int]


def free_param_count(K: int, p: int) -> int:
    """ν(K, p) = K(p+3) − 1: K polynomials, K−1 free gate rows, one variance."""
    return K * (p + 3) - 1


def structural_param_count(K: int, p: int) -> int:
    """The same count assembled from its parts."""
    return K * (p + 1) + 2 * (K - 1) + 1


def theta_dimension(K: int, p: int) -> int:
    """Dimension of θ = (w, β_1..β_K) with the last gate row fixed; excludes σ²."""
    return K * (p + 1) + 2 * (K - 1)


def bic(loglik: float, K: int, p: int, n: int) -> float:
    """Log-likelihood penalized by ν(K,p)·log(n)/2 (larger is better)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return loglik - free_param_count(K, p) * math.log(n) / 2.0


@dataclass(frozen=True, eq=False)
class GridCell:
    K: int
    p: int
    bic: float
    loglik: float
    fit: FitResult


@dataclass(frozen=True, eq=False)
class BicGridResult:
    """
    Fitted grid cells keyed by (K, p) and the BIC winner.

    ``skipped`` lists cells with n < K(p+2); ``failed`` lists cells whose
    every EM start failed.
    """

    table: Dict[Cell, GridCell]
    best: Cell
    skipped: Tuple[Cell, ...] = field(default=())
    failed: Tuple[Cell, ...] = field(default=())

    @property
    def best_cell(self) -> GridCell:
        return self.table[self.best]


def _ranking_key(cell: GridCell):
    # Highest BIC, then fewer free parameters, then smaller K.
    return (-cell.bic, free_param_count(cell.K, cell.p), cell.K)


def grid_select(
    data: Dataset,
    K_range: Iterable[int],
    p_range: Iterable[int],
    config: Optional[FitConfig] = None,
) -> BicGridResult:
    """
    Fit every (K, p) cell and keep the BIC maximizer.

    Each cell is fitted with its own seed derived from (config.seed, K, p),
    so adding cells never changes the scores of existing ones. Cells are
    spread over ``config.threads`` workers; each cell's starts then run
    serially.

    Raises:
        EmptyGrid: every cell was too large for the dataset
        AllStartsFailed: no cell could be fitted and at least one failed
    """
    config = config or FitConfig()
    K_values = sorted(set(K_range))
    p_values = sorted(set(p_range))
    if not K_values or not p_values:
        raise ValueError("K and p ranges must be nonempty")

    cells = [(K, p) for K in K_values for p in p_values]
    eligible = [(K, p) for K, p in cells if data.n >= K * (p + 2)]
    skipped = tuple(cell for cell in cells if cell not in eligible)
    if not eligible:
        raise EmptyGrid(f"no (K, p) cell fits n={data.n}; all {len(cells)} cells skipped")
    if skipped:
        logger.info(f"Skipping {len(skipped)} cells too large for n={data.n}: {list(skipped)}")

    def fit_cell(cell: Cell) -> Optional[GridCell]:
        K, p = cell
        cell_config = config.model_copy(update={'seed': derive_seed(config.seed, K, p), 'threads': 1})
        try:
            result = fit(data, K, p, cell_config)
        except AllStartsFailed as exc:
            logger.warning(f"Grid cell K={K} p={p} failed: {exc}")
            return None
        return GridCell(K=K, p=p, bic=bic(result.loglik, K, p, data.n), loglik=result.loglik, fit=result)

    outcomes = run_ordered(fit_cell, eligible, config.threads)
    table = {cell: outcome for cell, outcome in zip(eligible, outcomes) if outcome is not None}
    failed = tuple(cell for cell, outcome in zip(eligible, outcomes) if outcome is None)
    if not table:
        raise AllStartsFailed(f"every eligible grid cell failed: {list(failed)}")

    winner = min(table.values(), key=_ranking_key)
    logger.info(f"BIC selects K={winner.K} p={winner.p} (bic={winner.bic:.4f})")
    return BicGridResult(table=table, best=(winner.K, winner.p), skipped=skipped, failed=failed)
