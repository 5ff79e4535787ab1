"""
Hidden Logistic Process Regression - core model

Domain types and the pure functions of the model: the observation x at
time t is drawn from a K-component normal mixture whose proportions are
multinomial-logistic functions of t and whose component means are
degree-p polynomials of t, all components sharing one variance.

Every function accepts a scalar time (returning per-point values) or an
array of times (returning one row per time point). Component indices are
zero-based.
"""

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from numpy.polynomial import Polynomial
from scipy.special import log_softmax, logsumexp, softmax
from scipy.stats import norm

from .exceptions import InvalidDataset

ArrayLike = Union[float, np.ndarray]

# K×2 array, row k = (w_k0, w_k1); last row pinned to zero.
GateWeights = np.ndarray

# n×K array of posterior component probabilities; rows sum to one.
Responsibilities = np.ndarray

SIGMA2_FLOOR = 1e-12


def _readonly(values, ndmin: int = 1) -> np.ndarray:
    array = np.array(values, dtype=float, ndmin=ndmin)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Paired observations (t_i, x_i), sorted by t on construction.

    Both arrays are copied and made read-only so a dataset can be shared
    by concurrent fits.
    """

    t: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).ravel()
        x = np.asarray(self.x, dtype=float).ravel()
        if t.shape != x.shape:
            raise InvalidDataset(f"t and x lengths differ ({t.size} != {x.size})")
        if t.size == 0:
            raise InvalidDataset("dataset is empty")
        if not np.all(np.isfinite(t)):
            raise InvalidDataset("time values must be finite")
        if not np.all(np.isfinite(x)):
            raise InvalidDataset("observations must be finite")
        order = np.argsort(t, kind='stable')
        object.__setattr__(self, 't', _readonly(t[order]))
        object.__setattr__(self, 'x', _readonly(x[order]))

    @property
    def n(self) -> int:
        return int(self.t.size)

    def __len__(self) -> int:
        return self.n


def normalize_time(data: Dataset) -> Tuple[Dataset, float, float]:
    """
    Map the time axis onto [0, 1].

    Returns:
        (rescaled dataset, shift, scale) with t' = (t - shift) / scale
    """
    shift = float(data.t[0])
    scale = float(data.t[-1] - data.t[0])
    if scale <= 0.0:
        scale = 1.0
    return Dataset((data.t - shift) / scale, data.x), shift, scale


def rescale_polynomial(coef: np.ndarray, shift: float, scale: float) -> np.ndarray:
    """
    Express a polynomial of t' = (t - shift) / scale as a polynomial of t.

    Args:
        coef: Increasing-degree coefficients in the rescaled variable
        shift: Time shift
        scale: Time scale (> 0)

    Returns:
        Increasing-degree coefficients in the original variable, same length
    """
    coef = np.asarray(coef, dtype=float)
    composed = Polynomial(coef)(Polynomial([-shift / scale, 1.0 / scale])).coef
    out = np.zeros(coef.size)
    out[:min(coef.size, composed.size)] = composed[:coef.size]
    return out


def polynomial_basis(t: ArrayLike, p: int) -> np.ndarray:
    """
    Monomial basis (1, t, ..., t^p).

    A scalar t gives a vector of length p+1; an array of n times gives the
    n×(p+1) design matrix.
    """
    if p < 0:
        raise ValueError(f"degree must be >= 0, got {p}")
    basis = np.vander(np.atleast_1d(np.asarray(t, dtype=float)), p + 1, increasing=True)
    return basis[0] if np.ndim(t) == 0 else basis


design_matrix = polynomial_basis


def gate_logits(t: ArrayLike, w: GateWeights) -> np.ndarray:
    """Linear logits w_k0 + w_k1·t, shape (..., K)."""
    w = np.asarray(w, dtype=float)
    t = np.asarray(t, dtype=float)
    return w[:, 0] + np.multiply.outer(t, w[:, 1])


def gate_proportions(t: ArrayLike, w: GateWeights) -> np.ndarray:
    """
    Logistic proportions π_k(t; w).

    Softmax over the logits after subtracting their maximum, so logits in
    the hundreds do not overflow.
    """
    return softmax(gate_logits(t, w), axis=-1)


def log_gate_proportions(t: ArrayLike, w: GateWeights) -> np.ndarray:
    return log_softmax(gate_logits(t, w), axis=-1)


@dataclass(frozen=True, eq=False)
class RhlpParams:
    """
    Full model state Φ = (w, β_1..β_K, σ²).

    Attributes:
        w: K×2 gate weights, last row zero
        beta: K×(p+1) polynomial coefficients, row k = β_k
        sigma2: Shared noise variance
    """

    w: np.ndarray
    beta: np.ndarray
    sigma2: float

    def __post_init__(self):
        w = _readonly(self.w, ndmin=2)
        beta = _readonly(self.beta, ndmin=2)
        sigma2 = float(self.sigma2)
        if w.ndim != 2 or w.shape[1] != 2:
            raise ValueError(f"gate weights must be K×2, got shape {w.shape}")
        if beta.ndim != 2 or beta.shape[0] != w.shape[0]:
            raise ValueError(f"beta must have {w.shape[0]} rows, got shape {beta.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(beta))):
            raise ValueError("parameters must be finite")
        if np.any(w[-1] != 0.0):
            raise ValueError("last gate row must be zero")
        if not (np.isfinite(sigma2) and sigma2 > 0.0):
            raise ValueError(f"sigma2 must be positive, got {sigma2}")
        object.__setattr__(self, 'w', w)
        object.__setattr__(self, 'beta', beta)
        object.__setattr__(self, 'sigma2', sigma2)

    @property
    def K(self) -> int:
        return int(self.w.shape[0])

    @property
    def p(self) -> int:
        return int(self.beta.shape[1] - 1)

    def to_vector(self) -> np.ndarray:
        """Φ flattened as (β row-major, free w rows row-major, σ²)."""
        return np.concatenate([self.beta.ravel(), self.w[:-1].ravel(), [self.sigma2]])

    @classmethod
    def from_vector(cls, vector: np.ndarray, K: int, p: int) -> 'RhlpParams':
        vector = np.asarray(vector, dtype=float)
        n_beta = K * (p + 1)
        expected = n_beta + 2 * (K - 1) + 1
        if vector.size != expected:
            raise ValueError(f"expected {expected} coordinates for K={K}, p={p}; got {vector.size}")
        beta = vector[:n_beta].reshape(K, p + 1)
        w = np.zeros((K, 2))
        w[:-1] = vector[n_beta:-1].reshape(K - 1, 2)
        return cls(w=w, beta=beta, sigma2=vector[-1])

    def to_original_time(self, shift: float, scale: float) -> 'RhlpParams':
        """Parameters fitted on t' = (t - shift)/scale, re-expressed in t."""
        beta = np.array([rescale_polynomial(row, shift, scale) for row in self.beta])
        w = np.column_stack([
            self.w[:, 0] - self.w[:, 1] * shift / scale,
            self.w[:, 1] / scale,
        ])
        return RhlpParams(w=w, beta=beta, sigma2=self.sigma2)


def component_means(t: ArrayLike, params: RhlpParams) -> np.ndarray:
    """β_kᵀ·basis(t), shape (..., K)."""
    return polynomial_basis(t, params.p) @ params.beta.T


def regression_mean(t: ArrayLike, params: RhlpParams) -> ArrayLike:
    """f(t; θ) = Σ_k π_k(t; w)·β_kᵀ·basis(t)."""
    mean = np.sum(gate_proportions(t, params.w) * component_means(t, params), axis=-1)
    return float(mean) if np.ndim(mean) == 0 else mean


def component_logpdf(x: ArrayLike, t: ArrayLike, k: int, params: RhlpParams) -> ArrayLike:
    """log N(x; β_kᵀ·basis(t), σ²)."""
    mean = polynomial_basis(t, params.p) @ params.beta[k]
    value = norm.logpdf(x, loc=mean, scale=np.sqrt(params.sigma2))
    return float(value) if np.ndim(value) == 0 else value


def component_logpdfs(x: ArrayLike, t: ArrayLike, params: RhlpParams) -> np.ndarray:
    """All component log-densities, shape (..., K)."""
    x = np.asarray(x, dtype=float)
    return norm.logpdf(x[..., None], loc=component_means(t, params), scale=np.sqrt(params.sigma2))


def log_joint(x: ArrayLike, t: ArrayLike, params: RhlpParams) -> np.ndarray:
    """log π_k(t) + log N(x; β_kᵀt, σ²), shape (..., K)."""
    return log_gate_proportions(t, params.w) + component_logpdfs(x, t, params)


def mixture_logpdf(x: ArrayLike, t: ArrayLike, params: RhlpParams) -> ArrayLike:
    """log Σ_k π_k(t)·N(x; β_kᵀt, σ²), by log-sum-exp."""
    value = logsumexp(log_joint(x, t, params), axis=-1)
    return float(value) if np.ndim(value) == 0 else value


def log_likelihood(data: Dataset, params: RhlpParams) -> float:
    """Σ_i log p(x_i | t_i; Φ)."""
    return float(np.sum(mixture_logpdf(data.x, data.t, params)))
