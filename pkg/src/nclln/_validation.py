"""Input checking helpers shared by the estimators and free functions."""

import numpy as np

from .exceptions import ValidationError

ROW_SUM_TOL = 1e-12


def check_stochastic_matrix(kernel, tol=ROW_SUM_TOL):
    """Return ``kernel`` as a float array after checking it is row-stochastic."""
    P = np.array(kernel, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
        raise ValidationError(f"kernel must be a non-empty square matrix, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise ValidationError("kernel has non-finite entries")
    if np.any(P < 0):
        raise ValidationError("kernel has negative entries")
    sums = P.sum(axis=1)
    if np.max(np.abs(sums - 1.0)) > tol:
        raise ValidationError(f"kernel rows must sum to 1 (max deviation {np.max(np.abs(sums - 1.0)):.3e})")
    return P


def check_probability_vector(p, size=None, strictly_positive=False, tol=1e-12):
    v = np.array(p, dtype=float).reshape(-1)
    if size is not None and v.shape[0] != size:
        raise ValidationError(f"probability vector has length {v.shape[0]}, expected {size}")
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise ValidationError("probability vector must be finite and non-negative")
    if abs(v.sum() - 1.0) > tol:
        raise ValidationError(f"probability vector sums to {v.sum()!r}, not 1")
    if strictly_positive and np.any(v <= 0):
        raise ValidationError("probability vector must be strictly positive")
    return v


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or int(value) != value or value < minimum:
        raise ValidationError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_direction(alpha, d):
    a = np.atleast_1d(np.asarray(alpha, dtype=float))
    if a.shape != (d,):
        raise ValidationError(f"expected a vector of dimension {d}, got shape {a.shape}")
    return a
