"""
Simulation Scenarios

Three reference curves on t ∈ [0, 5]:

1. a four-component hidden logistic process with quadratic components
   (K=4, p=2), i.e. smooth transitions between regimes;
2. two quadratics joined by an abrupt switch at t = 2.5 (K=2, p=2);
3. a damped sinusoid 20·sin(1.6πt)·exp(−0.7t), fitted with K=5, p=3.

Samples are n equally spaced times with i.i.d. centred Gaussian noise.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Tuple

import numpy as np

from rhlp.core import Dataset, RhlpParams, polynomial_basis, regression_mean
from rhlp.exceptions import UnknownScenario
from rhlp.utils import derive_rng

logger = logging.getLogger(__name__)

T_MIN = 0.0
T_MAX = 5.0
SWITCH_TIME = 2.5

SCENARIO_1_PARAMS = RhlpParams(
    w=np.array([[547.0, -154.0], [526.0, -135.0], [464.0, -115.0], [0.0, 0.0]]),
    beta=np.array([[34.0, -60.0, 30.0], [-17.0, 29.0, -7.0], [185.0, -104.0, 15.0], [-804.0, 343.0, -35.0]]),
    sigma2=1.0,
)
SCENARIO_2_BETA = np.array([[33.0, -20.0, 4.0], [-78.0, 47.0, -5.0]])


def _logistic_process_curve(t):
    return regression_mean(t, SCENARIO_1_PARAMS)


def _switching_curve(t):
    t_arr = np.asarray(t, dtype=float)
    basis = polynomial_basis(t_arr, 2)
    values = np.where(t_arr <= SWITCH_TIME, basis @ SCENARIO_2_BETA[0], basis @ SCENARIO_2_BETA[1])
    return float(values) if np.ndim(values) == 0 else values


def _damped_sine_curve(t):
    t_arr = np.asarray(t, dtype=float)
    values = 20.0 * np.sin(1.6 * math.pi * t_arr) * np.exp(-0.7 * t_arr)
    return float(values) if np.ndim(values) == 0 else values


@dataclass(frozen=True)
class Scenario:
    """A reference curve and the (K, p) used to fit it."""

    id: int
    K: int
    p: int
    description: str
    curve: Callable

    def true_curve(self, t):
        return self.curve(t)


SCENARIOS: Dict[int, Scenario] = {
    1: Scenario(1, K=4, p=2, description='smooth logistic transitions', curve=_logistic_process_curve),
    2: Scenario(2, K=2, p=2, description='abrupt switch at t=2.5', curve=_switching_curve),
    3: Scenario(3, K=5, p=3, description='damped sinusoid', curve=_damped_sine_curve),
}


def get_scenario(scenario) -> Scenario:
    if isinstance(scenario, Scenario):
        return scenario
    try:
        return SCENARIOS[int(scenario)]
    except (KeyError, TypeError, ValueError):
        raise UnknownScenario(f"unknown scenario {scenario!r}; expected one of {sorted(SCENARIOS)}")


def true_curve(scenario, t):
    """Noise-free value of the scenario curve at t (scalar or array)."""
    return get_scenario(scenario).true_curve(t)


def generate(scenario, n: int, sigma: float, seed: int) -> Tuple[Dataset, np.ndarray]:
    """
    Sample a scenario.

    Args:
        scenario: Scenario id (1, 2, 3) or Scenario
        n: Number of equally spaced points on [0, 5], endpoints included
        sigma: Noise standard deviation
        seed: Seed of the noise stream

    Returns:
        (dataset, true values at the sample times)
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    definition = get_scenario(scenario)
    t = np.linspace(T_MIN, T_MAX, n)
    truth = np.asarray(definition.true_curve(t), dtype=float)
    x = truth + sigma * derive_rng(seed).standard_normal(n)
    logger.debug(f"Generated scenario {definition.id}: n={n} sigma={sigma} seed={seed}")
    return Dataset(t, x), truth
