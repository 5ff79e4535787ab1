"""
Uniform access to the three estimators.

Each method is fitted at a given (K, p) and reduced to its curve estimate
at the sample times: the mixture regression mean for rhlp, the segment
polynomial for piecewise and the filtering-weighted mean for hmm.
"""

import logging
import time
from dataclasses import dataclass
from typing import Any, List, Optional, Sequence

import numpy as np

from baselines.hmm import fit_hmm_regression
from baselines.piecewise import fit_piecewise_dp
from rhlp.core import Dataset
from rhlp.em import FitConfig, fit

from .metrics import eqm

logger = logging.getLogger(__name__)

RHLP = 'rhlp'
PIECEWISE = 'piecewise'
HMM = 'hmm'
METHODS = (RHLP, PIECEWISE, HMM)


@dataclass(frozen=True, eq=False)
class MethodFit:
    method: str
    fitted: np.ndarray
    loglik: float
    wall_seconds: float
    result: Any


@dataclass(frozen=True)
class MethodComparison:
    method: str
    eqm: float
    loglik: float
    wall_seconds: float


def validate_methods(methods: Sequence[str]) -> List[str]:
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown method(s) {unknown}; expected a subset of {list(METHODS)}")
    return list(methods)


def fit_method(method: str, data: Dataset, K: int, p: int, config: Optional[FitConfig] = None) -> MethodFit:
    """
    Fit one method and time the fit call alone.

    Raises:
        ValueError: unknown method
        RhlpError: whatever the underlying fit raises
    """
    validate_methods([method])
    config = config or FitConfig()
    started = time.perf_counter()
    if method == RHLP:
        result = fit(data, K, p, config)
        fitted, loglik = result.fitted, result.loglik
    elif method == PIECEWISE:
        result = fit_piecewise_dp(data, K, p)
        fitted, loglik = result.fitted, result.loglik
    else:
        result = fit_hmm_regression(data, K, p, config)
        fitted, loglik = result.fitted, result.loglik
    elapsed = time.perf_counter() - started
    return MethodFit(method=method, fitted=np.asarray(fitted), loglik=float(loglik), wall_seconds=elapsed, result=result)


def compare_methods(
    data: Dataset,
    K: int,
    p: int,
    config: Optional[FitConfig] = None,
    methods: Sequence[str] = METHODS,
) -> List[MethodComparison]:
    """
    Fit every method on the same observations.

    The reported error is the mean squared residual against the observed
    values.
    """
    rows = []
    for method in validate_methods(methods):
        outcome = fit_method(method, data, K, p, config)
        rows.append(MethodComparison(
            method=method,
            eqm=eqm(data.x, outcome.fitted),
            loglik=outcome.loglik,
            wall_seconds=outcome.wall_seconds,
        ))
        logger.info(f"compare {method}: eqm={rows[-1].eqm:.6f} loglik={outcome.loglik:.6f}")
    return rows
