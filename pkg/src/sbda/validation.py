"""Input validation helpers shared by the estimators."""

import numbers

import numpy as np


def check_square(matrix, name="matrix"):
    """Return ``matrix`` as a finite float64 square array or raise ``ValueError``."""
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be a square 2-D array, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError(f"{name} must have at least one variable")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite coefficients")
    return arr


def check_bits(x, n=None):
    """Coerce ``x`` to a 1-D uint8 array of zeros and ones.

    Args:
        x: sequence of 0/1 values (bools and integer-valued floats accepted).
        n: expected length, checked when given.
    """
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise ValueError(f"bit vector must be 1-D, got shape {arr.shape}")
    if arr.size and not np.all((arr == 0) | (arr == 1)):
        raise ValueError("bit vector entries must be 0 or 1")
    if n is not None and arr.shape[0] != n:
        raise ValueError(f"bit vector has length {arr.shape[0]}, expected {n}")
    return arr.astype(np.uint8)


def check_bit_matrix(X, n=None):
    """2-D version of :func:`check_bits`: one candidate solution per row."""
    arr = np.asarray(X)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D array of bit vectors, got shape {arr.shape}")
    if arr.size and not np.all((arr == 0) | (arr == 1)):
        raise ValueError("bit vector entries must be 0 or 1")
    if n is not None and arr.shape[1] != n:
        raise ValueError(f"bit vectors have length {arr.shape[1]}, expected {n}")
    return arr.astype(np.uint8)


def check_positive(value, name, allow_none=False):
    if value is None and allow_none:
        return None
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return value


def check_positive_int(value, name, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_same_size(*matrices):
    sizes = {m.n for m in matrices}
    if len(sizes) != 1:
        raise ValueError(f"QUBO matrices disagree on variable count: {sorted(sizes)}")
    return sizes.pop()
