"""
Benchmark Sweeps

Drives the estimators over grids of scenarios, sample sizes and noise
levels, recording the error against the true curve and the fit time of
every (scenario, method, n, sigma, replicate) cell.

Seeds:
- data seed = derive(seed, scenario, n, sigma, replicate): every method
  of a cell sees the same sample;
- fit seed = derive(seed, scenario, method, n, sigma, replicate): any single
  record can be rerun in isolation.
"""

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from model_selection.criteria import grid_select
from rhlp.em import FitConfig
from rhlp.exceptions import RhlpError
from rhlp.utils import derive_seed, run_ordered

from .estimators import fit_method, validate_methods
from .metrics import eqm
from .scenarios import generate, get_scenario

logger = logging.getLogger(__name__)

BIC_STUDY_SCENARIO = 1


@dataclass(frozen=True)
class BenchmarkRecord:
    scenario: int
    method: str
    n: int
    sigma: float
    replicate: int
    seed: int
    eqm: float
    wall_seconds: float
    failed: bool = False
    error: str = ''


@dataclass(frozen=True)
class SummaryRow:
    scenario: int
    method: str
    n: int
    sigma: float
    mean_eqm: float
    mean_wall_seconds: float
    replicates: int
    failures: int


def data_seed(seed: int, scenario: int, n: int, sigma: float, replicate: int) -> int:
    return derive_seed(seed, 'data', int(scenario), int(n), float(sigma), int(replicate))


def fit_seed(seed: int, scenario: int, method: str, n: int, sigma: float, replicate: int) -> int:
    return derive_seed(seed, 'fit', int(scenario), method, int(n), float(sigma), int(replicate))


def run_record(
    scenario: int,
    method: str,
    n: int,
    sigma: float,
    replicate: int,
    seed: int,
    config: Optional[FitConfig] = None,
) -> BenchmarkRecord:
    """
    One benchmark cell: generate, fit at the scenario's (K, p), score.

    Fit errors are recorded on the returned record.
    """
    definition = get_scenario(scenario)
    config = config or FitConfig()
    record_seed = fit_seed(seed, definition.id, method, n, sigma, replicate)
    data, truth = generate(definition, n, sigma, data_seed(seed, definition.id, n, sigma, replicate))
    cell_config = config.model_copy(update={'seed': record_seed, 'threads': 1})
    try:
        outcome = fit_method(method, data, definition.K, definition.p, cell_config)
    except RhlpError as exc:
        logger.warning(f"Benchmark record failed: scenario={definition.id} method={method} n={n} sigma={sigma} rep={replicate}: {exc}")
        return BenchmarkRecord(definition.id, method, int(n), float(sigma), int(replicate), record_seed,
                               eqm=math.nan, wall_seconds=0.0, failed=True, error=str(exc))
    return BenchmarkRecord(definition.id, method, int(n), float(sigma), int(replicate), record_seed,
                           eqm=eqm(truth, outcome.fitted), wall_seconds=outcome.wall_seconds)


def sweep(
    scenarios: Sequence[int],
    sizes: Sequence[int],
    sigmas: Sequence[float],
    methods: Sequence[str],
    replicates: int,
    seed: int,
    config: Optional[FitConfig] = None,
    threads: int = 1,
) -> List[BenchmarkRecord]:
    """
    Full factorial sweep.

    Records come back ordered by (scenario, method, n, sigma, replicate)
    whatever ``threads`` is.
    """
    if not (scenarios and sizes and sigmas and methods) or replicates < 1:
        raise ValueError("sweep axes must be nonempty and replicates >= 1")
    validate_methods(methods)
    scenario_ids = [get_scenario(s).id for s in scenarios]
    cells = [
        (scenario, method, int(n), float(sigma), replicate)
        for scenario in scenario_ids
        for method in methods
        for n in sizes
        for sigma in sigmas
        for replicate in range(replicates)
    ]
    logger.info(f"Benchmark sweep: {len(cells)} records on {threads} threads (seed {seed})")
    return run_ordered(lambda cell: run_record(*cell, seed=seed, config=config), cells, threads)


def summarize(records: Iterable[BenchmarkRecord]) -> List[SummaryRow]:
    """Mean EQM and wall time per (scenario, method, n, sigma); failed records are excluded from the means."""
    groups: Dict[Tuple, List[BenchmarkRecord]] = defaultdict(list)
    for record in records:
        groups[(record.scenario, record.method, record.n, record.sigma)].append(record)

    rows = []
    for key, members in groups.items():
        ok = [r for r in members if not r.failed]
        rows.append(SummaryRow(
            *key,
            mean_eqm=float(np.mean([r.eqm for r in ok])) if ok else math.nan,
            mean_wall_seconds=float(np.mean([r.wall_seconds for r in ok])) if ok else math.nan,
            replicates=len(members),
            failures=len(members) - len(ok),
        ))
    return rows


def timing_ratio(records: Iterable[BenchmarkRecord], method: str, n_small: int, n_large: int) -> float:
    """Mean wall time at n_large over mean wall time at n_small for one method."""
    walls = defaultdict(list)
    for record in records:
        if record.method == method and not record.failed and record.n in (n_small, n_large):
            walls[record.n].append(record.wall_seconds)
    if not walls[n_small] or not walls[n_large]:
        raise ValueError(f"no successful {method} records at n={n_small} and n={n_large}")
    small = float(np.mean(walls[n_small]))
    return float(np.mean(walls[n_large])) / max(small, np.finfo(float).tiny)


def bic_study(
    n: int,
    sigma: float,
    replicates: int,
    K_range: Iterable[int],
    p_range: Iterable[int],
    seed: int,
    config: Optional[FitConfig] = None,
    threads: int = 1,
) -> Dict[Tuple[int, int], float]:
    """
    Percentage of replicates in which BIC picks each (K, p) on fresh
    scenario-1 samples. ``threads`` spreads each replicate's grid cells.

    Returns:
        {(K, p): percent} over the whole grid, zero cells included
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    config = config or FitConfig()
    K_values = sorted(set(K_range))
    p_values = sorted(set(p_range))
    choices = Counter()
    for replicate in range(replicates):
        data, _ = generate(BIC_STUDY_SCENARIO, n, sigma, data_seed(seed, BIC_STUDY_SCENARIO, n, sigma, replicate))
        replicate_config = config.model_copy(
            update={'seed': derive_seed(seed, 'bic', int(replicate)), 'threads': threads}
        )
        result = grid_select(data, K_values, p_values, replicate_config)
        choices[result.best] += 1
        logger.info(f"BIC study replicate {replicate}: selected K={result.best[0]} p={result.best[1]}")
    return {
        (K, p): 100.0 * choices[(K, p)] / replicates
        for K in K_values
        for p in p_values
    }
