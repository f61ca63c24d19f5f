from __future__ import annotations

import math
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import expit

from .constants import RNG_NAME


def as_float_matrix(values, name: str = "matrix") -> np.ndarray:
    """
    Converts the input into a dense two-dimensional float64 array.

    A one-dimensional input is read as a single column, i.e. n scalar
    observations.

    Args:
        values: Array-like input.
        name (str): Name used in error messages.

    Returns:
        np.ndarray: An (n, p) float64 array.

    Raises:
        ValueError: If the input has more than two dimensions or contains
            NaN / Inf entries.
    """
    func_name = as_float_matrix.__name__
    array = np.asarray(values, dtype=np.float64)
    if array.ndim == 0:
        array = array.reshape(1, 1)
    elif array.ndim == 1:
        array = array.reshape(-1, 1)
    elif array.ndim != 2:
        raise ValueError(
            f"{func_name}: '{name}' must be at most two-dimensional,"
            f" got shape {array.shape}"
        )
    check_finite(array, name)
    return array


def as_float_vector(values, name: str = "vector") -> np.ndarray:
    """
    Converts the input into a one-dimensional float64 array.

    Args:
        values: Array-like input (scalars are promoted to length one).
        name (str): Name used in error messages.

    Returns:
        np.ndarray: A flat float64 array.

    Raises:
        ValueError: If the input is not flat or contains NaN / Inf entries.
    """
    func_name = as_float_vector.__name__
    array = np.asarray(values, dtype=np.float64)
    if array.ndim == 0:
        array = array.reshape(1)
    elif array.ndim == 2 and 1 in array.shape:
        array = array.ravel()
    elif array.ndim != 1:
        raise ValueError(
            f"{func_name}: '{name}' must be one-dimensional, got shape {array.shape}"
        )
    check_finite(array, name)
    return array


def check_finite(array: np.ndarray, name: str = "array") -> None:
    func_name = check_finite.__name__
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{func_name}: '{name}' contains NaN or Inf entries")


def check_positive(value: float, name: str, allow_zero: bool = False) -> float:
    """
    Validates a real scalar parameter.

    Args:
        value (float): The value to validate.
        name (str): Parameter name used in error messages.
        allow_zero (bool): Whether zero is accepted.

    Returns:
        float: The value as a float.

    Raises:
        ValueError: If the value is not a finite real above (or at) zero.
    """
    func_name = check_positive.__name__
    if isinstance(value, bool) or not isinstance(value, (int, float, np.floating, np.integer)):
        raise ValueError(
            f"{func_name}: '{name}' must be a real number, got {type(value).__name__}"
        )
    value = float(value)
    if math.isnan(value) or (value == 0.0 and not allow_zero) or value < 0.0:
        bound = ">= 0" if allow_zero else "> 0"
        raise ValueError(f"{func_name}: '{name}' must be {bound}, got {value}")
    return value


def make_rng(seed: int) -> np.random.Generator:
    """
    Creates the package random generator for an explicit seed.

    Args:
        seed (int): A non-negative 64-bit seed. Entropy defaults are not
            accepted.

    Returns:
        np.random.Generator: A PCG64-backed generator.

    Raises:
        ValueError: If the seed is missing or not a non-negative integer.
    """
    func_name = make_rng.__name__
    if seed is None or isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise ValueError(f"{func_name}: an explicit integer seed is required, got {seed!r}")
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"{func_name}: seed must fit in 64 unsigned bits, got {seed}")
    return np.random.Generator(np.random.PCG64(int(seed)))


def rng_name() -> str:
    return RNG_NAME


def seed_stream(base_seed: int, count: int) -> List[int]:
    """
    Per-replication seeds: seed_i = base_seed + i.
    """
    func_name = seed_stream.__name__
    if count < 0:
        raise ValueError(f"{func_name}: count must be >= 0, got {count}")
    return [int(base_seed) + i for i in range(count)]


def child_seeds(seed: int, count: int) -> List[int]:
    """
    Derives count distinct 64-bit seeds from one seed (numpy SeedSequence).
    """
    states = np.random.SeedSequence(int(seed)).generate_state(count, dtype=np.uint64)
    return [int(state) for state in states]


def floor_count(rho: float, n: int) -> int:
    # floor(rho * n) with a guard against 0.7 * 10 -> 6.999...
    return int(math.floor(rho * n + 1e-9))


def log_sigmoid(z: np.ndarray) -> np.ndarray:
    """
    log(e^z / (1 + e^z)) evaluated as -log(1 + e^{-z}) without overflow.
    """
    return -np.logaddexp(0.0, -np.asarray(z, dtype=np.float64))


def sigmoid(z: np.ndarray) -> np.ndarray:
    return expit(np.asarray(z, dtype=np.float64))


def median_inversions(values: Sequence[float]) -> int:
    """
    Counts adjacent increases in a sequence expected to be non-increasing.

    Args:
        values (Sequence[float]): Ordered values.

    Returns:
        int: The number of indices i with values[i + 1] > values[i].
    """
    return int(sum(1 for a, b in zip(values[:-1], values[1:]) if b > a))


def loglog_slope(sizes: Sequence[float], errors: Sequence[float]) -> float:
    """
    Least-squares slope of log(error) against log(size).

    Raises:
        ValueError: If fewer than two points are given or an error is not
            strictly positive.
    """
    func_name = loglog_slope.__name__
    sizes_arr = np.asarray(sizes, dtype=np.float64)
    errors_arr = np.asarray(errors, dtype=np.float64)
    if sizes_arr.size < 2 or sizes_arr.size != errors_arr.size:
        raise ValueError(f"{func_name}: need at least two matching (size, error) pairs")
    if np.any(errors_arr <= 0.0):
        raise ValueError(f"{func_name}: errors must be strictly positive")
    slope, _ = np.polyfit(np.log(sizes_arr), np.log(errors_arr), 1)
    return float(slope)


def optional_float(value: Optional[float]) -> Optional[float]:
    return None if value is None else float(value)
