"""Matrix permanents by Ryser's formula with Gray-code ordering."""

import itertools
import logging
from typing import Union

import numpy as np

from .errors import ConfigError

logger = logging.getLogger(__name__)

MAX_ORDER = 25


def permanent(matrix: np.ndarray) -> Union[float, complex]:
    """
    Permanent of a square real or complex matrix in O(2^n n).

    Nijenhuis-Wilf variant of Ryser's formula: the running row sums start at
    the last column minus half the column total, and each Gray-code step adds
    or removes one column.

    Args:
        matrix: (n, n) array, n <= 25

    Returns:
        float for real input, complex otherwise
    """
    a = np.asarray(matrix)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigError(f"Permanent needs a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n > MAX_ORDER:
        raise ConfigError(f"Permanent order {n} exceeds the cap of {MAX_ORDER}")
    if n == 0:
        return 1.0

    is_complex = np.iscomplexobj(a)
    a = a.astype(np.complex128 if is_complex else np.float64)
    if n == 1:
        return complex(a[0, 0]) if is_complex else float(a[0, 0])

    x = a[:, n - 1] - 0.5 * a.sum(axis=1)
    total = np.prod(x)
    sign = 1.0
    for k in range(1, 2 ** (n - 1)):
        j = (k & -k).bit_length() - 1
        gray = k ^ (k >> 1)
        z = 1.0 if (gray >> j) & 1 else -1.0
        x = x + z * a[:, j]
        sign = -sign
        total = total + sign * np.prod(x)

    value = 2.0 * (-1.0) ** (n - 1) * total
    return complex(value) if is_complex else float(value)


def permanent_bruteforce(matrix: np.ndarray) -> Union[float, complex]:
    """Sum over all n! permutations. Reference for small matrices only."""
    a = np.asarray(matrix)
    n = a.shape[0]
    rows = np.arange(n)
    total = sum(np.prod(a[rows, list(p)]) for p in itertools.permutations(range(n)))
    return complex(total) if np.iscomplexobj(a) else float(total)
