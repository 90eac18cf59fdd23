"""Input validation helpers shared by the estimators and the functional API."""

import numbers

import numpy as np


def check_eta(eta):
    """Return ``eta`` as a float, raising ValueError unless 0 < eta <= 1."""
    if not isinstance(eta, numbers.Real) or isinstance(eta, bool):
        raise TypeError(f"eta must be a real number, got {type(eta).__name__}")
    eta = float(eta)
    if not (0.0 < eta <= 1.0):
        raise ValueError(f"eta must lie in (0, 1], got {eta}")
    return eta


def check_positive(value, name, strict=True):
    value = float(value)
    if not np.isfinite(value) or value < 0 or (strict and value == 0):
        bound = "> 0" if strict else ">= 0"
        raise ValueError(f"{name} must be finite and {bound}, got {value}")
    return value


def check_point(x, n):
    """Validate a fractional point of dimension ``n`` and return a float copy."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != n:
        raise ValueError(f"point has shape {x.shape}, expected ({n},)")
    if not np.all(np.isfinite(x)):
        raise ValueError("point contains non-finite coordinates")
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("point coordinates must lie in [0, 1]")
    return x.copy()


def check_column(col, m):
    """Validate a non-negative requirement column with ``m`` entries."""
    col = np.asarray(col, dtype=float)
    if col.ndim != 1 or col.shape[0] != m:
        raise ValueError(f"column has shape {col.shape}, expected ({m},)")
    if not np.all(np.isfinite(col)) or np.any(col < 0):
        raise ValueError("requirement entries must be finite and non-negative")
    return col


def check_element(e, n):
    if not isinstance(e, numbers.Integral) or not (0 <= e < n):
        raise IndexError(f"element {e!r} out of range for dimension {n}")
    return int(e)
