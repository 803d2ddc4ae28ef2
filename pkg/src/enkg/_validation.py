import numpy as np
from sklearn.utils import check_random_state

from .exceptions import InvalidArgumentError


def as_batch(x, dim, name="x"):
    """Return ``x`` as a float (B, dim) array and whether it was 1-D."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise InvalidArgumentError(
            f"{name} must have trailing dimension {dim}, got shape {np.shape(x)}"
        )
    return arr, single


def unbatch(arr, single):
    return arr[0] if single else arr


def check_positive(value, name, allow_zero=False):
    value = float(value)
    if not np.isfinite(value) or value < 0 or (value == 0 and not allow_zero):
        bound = "non-negative" if allow_zero else "positive"
        raise InvalidArgumentError(f"{name} must be {bound}, got {value}")
    return value


def check_positive_int(value, name):
    if isinstance(value, bool) or int(value) != value or int(value) < 1:
        raise InvalidArgumentError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def as_rng(random_state):
    """Like sklearn's ``check_random_state`` but also passes a ``Generator`` through."""
    if isinstance(random_state, np.random.Generator):
        return random_state
    return check_random_state(random_state)
