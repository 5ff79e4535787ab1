import numpy as np

from rhlp.exceptions import LengthMismatch


def eqm(true_values, estimated_values) -> float:
    """Mean squared difference (1/n)·Σ (f_true(t_i) − f_est(t_i))²."""
    truth = np.asarray(true_values, dtype=float).ravel()
    estimate = np.asarray(estimated_values, dtype=float).ravel()
    if truth.size != estimate.size:
        raise LengthMismatch(f"sequences differ in length ({truth.size} != {estimate.size})")
    if truth.size == 0:
        raise LengthMismatch("sequences are empty")
    return float(np.mean((truth - estimate) ** 2))
