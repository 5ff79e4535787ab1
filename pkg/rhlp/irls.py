"""
IRLS for the logistic gate weights.

Maximizes the weighted multinomial-logistic objective
Q1(w) = Σ_i Σ_k τ_ik log π_k(t_i; w) over the free rows of w (the last
row stays at zero) with Newton-Raphson steps, halving a step until Q1 does
not decrease.

Free coordinates are ordered row-major: (w_00, w_01, w_10, w_11, ...).
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .core import GateWeights, Responsibilities, gate_proportions, log_gate_proportions

logger = logging.getLogger(__name__)

MAX_HALVINGS = 20
DAMPING_STEPS = (1e-6, 1e-4, 1e-2)


@dataclass(frozen=True)
class GateFit:
    """Outcome of one IRLS solve."""

    w: GateWeights
    q1: float
    n_iter: int
    converged: bool
    singular: bool = False


def _regressors(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return np.column_stack([np.ones_like(t), t])


def gate_objective(t: np.ndarray, tau: Responsibilities, w: GateWeights) -> float:
    """Q1(w) = Σ_i Σ_k τ_ik log π_k(t_i; w)."""
    return float(np.sum(tau * log_gate_proportions(t, w)))


def gate_gradient(t: np.ndarray, tau: Responsibilities, w: GateWeights) -> np.ndarray:
    """
    Gradient of Q1 over the free rows.

    g_k = Σ_i (τ_ik − s_i·π_ik)·v_i with v_i = (1, t_i) and s_i = Σ_k τ_ik
    (s_i = 1 for responsibilities).
    """
    pi = gate_proportions(t, w)
    row_mass = tau.sum(axis=1, keepdims=True)
    residual = (tau - row_mass * pi)[:, :-1]
    return (residual.T @ _regressors(t)).ravel()


def gate_hessian(t: np.ndarray, tau: Responsibilities, w: GateWeights) -> np.ndarray:
    """
    Hessian of Q1 over the free rows, (K−1)×(K−1) blocks of 2×2.

    H_kl = −Σ_i s_i·π_ik·(δ_kl − π_il)·v_i v_iᵀ
    """
    pi = gate_proportions(t, w)[:, :-1]
    free = pi.shape[1]
    row_mass = tau.sum(axis=1)
    V = _regressors(t)
    weights = pi[:, :, None] * (np.eye(free)[None, :, :] - pi[:, None, :])
    weights *= row_mass[:, None, None]
    H = -np.einsum('ikl,ia,ib->kalb', weights, V, V)
    return H.reshape(2 * free, 2 * free)


def _newton_direction(H: np.ndarray, g: np.ndarray) -> Optional[np.ndarray]:
    """Solve (−H)·d = g; add Levenberg damping when −H is not positive definite."""
    precision = -H
    for damping in (0.0,) + DAMPING_STEPS:
        try:
            factor = cho_factor(precision + damping * np.eye(precision.shape[0]))
        except LinAlgError:
            continue
        if damping:
            logger.debug(f"IRLS Hessian needed damping {damping:g}")
        return cho_solve(factor, g)
    return None


def irls_fit_gates(
    t: np.ndarray,
    tau: Responsibilities,
    w_init: GateWeights,
    tol: float = 1e-6,
    max_iter: int = 50,
) -> GateFit:
    """
    Fit the gate weights to fixed responsibilities.

    Args:
        t: Time points (n,)
        tau: Responsibilities (n×K)
        w_init: Starting weights, last row zero
        tol: Relative Q1 change below which the solve stops
        max_iter: Newton iteration cap

    Returns:
        GateFit; ``singular`` is set when the damped Hessian still could not
        be factored and the current iterate was returned.
    """
    w = np.array(w_init, dtype=float)
    if np.any(w[-1] != 0.0):
        raise ValueError("last gate row must be zero")
    K = w.shape[0]
    q = gate_objective(t, tau, w)
    if K == 1:
        return GateFit(w=w, q1=q, n_iter=0, converged=True)

    converged = False
    singular = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        direction = _newton_direction(gate_hessian(t, tau, w), gate_gradient(t, tau, w))
        if direction is None:
            logger.warning("IRLS Hessian singular after damping; keeping current gate weights")
            singular = True
            break

        step = direction.reshape(K - 1, 2)
        alpha = 1.0
        for _ in range(MAX_HALVINGS + 1):
            candidate = w.copy()
            candidate[:-1] += alpha * step
            q_new = gate_objective(t, tau, candidate)
            if np.isfinite(q_new) and q_new >= q:
                break
            alpha *= 0.5
        else:
            # No ascent left at machine precision.
            converged = True
            break

        change = abs(q_new - q) / max(abs(q), np.finfo(float).tiny)
        w, q = candidate, q_new
        if change < tol:
            converged = True
            break

    return GateFit(w=w, q1=q, n_iter=n_iter, converged=converged, singular=singular)
