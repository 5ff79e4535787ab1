"""
Workbench services.

Glue between the management commands and the estimators: fitting a
method on observations, building model documents, writing the
plot-ready output files and mapping domain errors onto exit codes.
"""

import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from django.core.management.base import CommandError
from pydantic import ValidationError

from baselines.hmm import HmmFitResult, fit_hmm_regression
from baselines.piecewise import PiecewiseFit, fit_piecewise_dp
from confidence.bands import ConfidenceBand, confidence_band
from rhlp.core import Dataset, RhlpParams, normalize_time, rescale_polynomial
from rhlp.em import FitConfig, FitResult, fit
from rhlp.exceptions import AllStartsFailed, DegenerateComponent, InputFormatError, InvalidDataset
from simulation.estimators import METHODS, PIECEWISE, RHLP, validate_methods

from .csv_io import write_rows
from .serializers import SCHEMA_VERSION, render_document

logger = logging.getLogger(__name__)

EXIT_PARSE = 2
EXIT_FIT = 3
EXIT_PRECONDITION = 4


def exit_code_for(exc: Exception) -> int:
    """
    Exit code taxonomy: 2 unreadable input, 3 the fit itself failed,
    4 the request cannot be served with this input (sizes, ranges, ids).
    """
    if isinstance(exc, (InputFormatError, InvalidDataset)):
        return EXIT_PARSE
    if isinstance(exc, (AllStartsFailed, DegenerateComponent)):
        return EXIT_FIT
    return EXIT_PRECONDITION


def command_error(exc: Exception) -> CommandError:
    if isinstance(exc, ValidationError):
        message = '; '.join(f"{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors())
    else:
        message = str(exc)
    code = exit_code_for(exc)
    logger.debug(f"Command failed (exit {code}): {message}")
    return CommandError(message, returncode=code)


def build_config(seed=None, threads=None, n_starts=None, **overrides) -> FitConfig:
    return FitConfig.from_settings(seed=seed, threads=threads, n_starts=n_starts, **overrides)


def parse_int_range(text: str, name: str) -> List[int]:
    """
    ``"2:7"`` (inclusive) or ``"2,3,5"`` or ``"4"``.

    Raises:
        ValueError: malformed or empty range
    """
    try:
        if ':' in text:
            low, high = (int(part) for part in text.split(':', 1))
            values = list(range(low, high + 1))
        else:
            values = [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise ValueError(f"{name} range {text!r} is not of the form 'a:b' or 'a,b,c'")
    if not values:
        raise ValueError(f"{name} range {text!r} is empty")
    return values


@dataclass(frozen=True, eq=False)
class FittedModel:
    """
    One method fitted on one dataset.

    ``weights`` holds the per-point component weights written to the curve
    file (gate proportions for rhlp, filtering probabilities for hmm).
    ``fit_data`` is the dataset the estimator saw, which differs from the
    observations only when the time axis was normalized.
    """

    method: str
    K: int
    p: int
    data: Dataset
    fit_data: Dataset
    fitted: np.ndarray
    map_labels: np.ndarray
    weights: Optional[np.ndarray]
    weight_prefix: Optional[str]
    loglik: float
    trace: Tuple[float, ...]
    document: Dict
    result: object


def _matrix(values) -> List[List[float]]:
    return [[float(v) for v in row] for row in np.asarray(values)]


def _rescaled_beta(beta: np.ndarray, shift: float, scale: float) -> np.ndarray:
    return np.array([rescale_polynomial(row, shift, scale) for row in beta])


def _parameters(method: str, result, shift: float, scale: float, n: int) -> Dict:
    if method == RHLP:
        params: RhlpParams = result.params.to_original_time(shift, scale)
        return {'w': _matrix(params.w), 'beta': _matrix(params.beta), 'sigma2': params.sigma2}
    if method == PIECEWISE:
        return {
            'boundaries': [int(b) for b in result.boundaries],
            'beta': _matrix(_rescaled_beta(result.beta, shift, scale)),
            'sigma2': float(result.sse / n),
        }
    params = result.params
    return {
        'initial': [float(v) for v in params.initial],
        'trans': _matrix(params.trans),
        'beta': _matrix(_rescaled_beta(params.beta, shift, scale)),
        'sigma2': params.sigma2,
    }


def build_document(
    method: str, K: int, p: int, result, n: int, seed: int,
    normalized: bool = False, shift: float = 0.0, scale: float = 1.0,
) -> Dict:
    """Model document with parameters expressed on the original time axis."""
    if method == PIECEWISE:
        n_iter, converged = 0, True
    else:
        n_iter, converged = result.n_iter, result.converged
    return {
        'schema_version': SCHEMA_VERSION,
        'method': method,
        'K': K,
        'p': p,
        'parameters': _parameters(method, result, shift, scale, n),
        'loglik': float(result.loglik),
        'metadata': {
            'n': n,
            'n_iter': int(n_iter),
            'seed': int(seed),
            'converged': bool(converged),
            'normalized_time': normalized,
            'time_shift': float(shift),
            'time_scale': float(scale),
        },
    }


def fit_observations(
    data: Dataset,
    method: str,
    K: int,
    p: int,
    config: Optional[FitConfig] = None,
    normalize: bool = False,
    left_to_right: bool = False,
) -> FittedModel:
    """
    Fit ``method`` on the observations.

    With ``normalize`` the estimator runs on t rescaled to [0, 1] and the
    document reports parameters mapped back to the original time axis.
    """
    validate_methods([method])
    config = config or FitConfig()
    if normalize:
        fit_data, shift, scale = normalize_time(data)
    else:
        fit_data, shift, scale = data, 0.0, 1.0

    if method == RHLP:
        result: FitResult = fit(fit_data, K, p, config)
        weights, prefix, trace = result.proportions, 'pi', result.loglik_trace
        labels = result.map_labels
    elif method == PIECEWISE:
        result: PiecewiseFit = fit_piecewise_dp(fit_data, K, p)
        weights, prefix, trace = None, None, ()
        labels = result.labels
    else:
        result: HmmFitResult = fit_hmm_regression(fit_data, K, p, config, left_to_right=left_to_right)
        weights, prefix, trace = result.filtered, 'omega', result.loglik_trace
        labels = result.map_labels

    document = build_document(method, K, p, result, data.n, config.seed, normalize, shift, scale)
    return FittedModel(
        method=method, K=K, p=p, data=data, fit_data=fit_data,
        fitted=np.asarray(result.fitted), map_labels=np.asarray(labels),
        weights=weights, weight_prefix=prefix, loglik=float(result.loglik),
        trace=tuple(trace), document=document, result=result,
    )


def band_for(model: FittedModel, alpha: float) -> ConfidenceBand:
    """
    Pointwise band at the observation times.

    Raises:
        ValueError: the method has no band
    """
    if model.method != RHLP:
        raise ValueError(f"confidence bands are only available for rhlp, not {model.method}")
    band = confidence_band(model.fit_data.t, model.fit_data, model.result.params, alpha)
    return dataclasses.replace(band, ts=np.asarray(model.data.t))


def write_fit_outputs(model: FittedModel, prefix, band: Optional[ConfidenceBand] = None) -> List[Path]:
    """
    Write <prefix>.model.json, <prefix>.curve.csv, <prefix>.trace.csv (EM
    methods) and <prefix>.band.csv (when a band is given).
    """
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    written = []

    model_path = Path(f"{prefix}.model.json")
    model_path.write_text(render_document(model.document), encoding='utf-8')
    written.append(model_path)

    header = ['t', 'x', 'fitted', 'map_label']
    columns = [model.data.t, model.data.x, model.fitted, model.map_labels]
    if model.weights is not None:
        header += [f"{model.weight_prefix}_{k + 1}" for k in range(model.K)]
        columns += [model.weights[:, k] for k in range(model.K)]
    written.append(write_rows(f"{prefix}.curve.csv", header, zip(*columns)))

    if model.trace:
        written.append(write_rows(f"{prefix}.trace.csv", ['iteration', 'loglik'], enumerate(model.trace)))

    if band is not None:
        written.append(write_rows(
            f"{prefix}.band.csv", ['t', 'center', 'lower', 'upper'],
            zip(band.ts, band.center, band.lower, band.upper),
        ))
    return written


def default_prefix(input_path) -> Path:
    path = Path(input_path)
    return path.with_suffix('') if path.suffix else path


def parse_methods(text: str) -> List[str]:
    methods = [m.strip() for m in text.split(',') if m.strip()]
    return validate_methods(methods or list(METHODS))


def format_table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Fixed-width text table for the console."""
    cells = [[str(h) for h in header]] + [[_display(v) for v in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    return '\n'.join('  '.join(cell.rjust(width) for cell, width in zip(row, widths)) for row in cells)


def _display(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    return str(value)
