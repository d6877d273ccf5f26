"""Input validation helpers in the style of ``sklearn.utils.validation``."""

import numpy as np
from sklearn.utils import check_array

from .exceptions import DomainError, RangeError, ShapeError

SIMPLEX_ATOL = 1e-12


def check_vector(x, name, length=None, nonneg=False):
    x = check_array(np.asarray(x, dtype=float), ensure_2d=False,
                    input_name=name, ensure_all_finite=True)
    if x.ndim != 1:
        raise ShapeError(f"{name} must be one-dimensional, got shape {x.shape}")
    if length is not None and x.shape[0] != length:
        raise ShapeError(f"{name} must have length {length}, got {x.shape[0]}")
    if nonneg and np.any(x < 0):
        raise RangeError(f"{name} must be nonnegative")
    return x


def check_matrix(x, name, shape=None, lo=None, hi=None):
    x = check_array(np.asarray(x, dtype=float), ensure_2d=True,
                    input_name=name, ensure_all_finite=True)
    if shape is not None and x.shape != tuple(shape):
        raise ShapeError(f"{name} must have shape {tuple(shape)}, got {x.shape}")
    if lo is not None and np.any(x < lo):
        raise RangeError(f"{name} entries must be >= {lo}")
    if hi is not None and np.any(x > hi):
        raise RangeError(f"{name} entries must be <= {hi}")
    return x


def check_shares(phi, n_items=None, atol=SIMPLEX_ATOL):
    """Validate a point on the probability simplex and return it as float array."""
    phi = check_vector(phi, "shares", length=n_items)
    if np.any(phi < 0):
        raise RangeError("shares must be nonnegative")
    total = phi.sum()
    if abs(total - 1.0) > atol:
        raise RangeError(f"shares must sum to 1 (got {total!r})")
    return phi


def check_interior(x, name="point"):
    x = np.asarray(x, dtype=float)
    if not np.all(x > 0):
        raise DomainError(f"{name} must be strictly interior (all entries > 0)")
    return x
