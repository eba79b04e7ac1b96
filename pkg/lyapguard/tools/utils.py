"""Small dense linear-algebra helpers shared by the dynamics, controller and monitor tools."""

from typing import Sequence

import numpy as np

from lyapguard import logging
from lyapguard.tools import SingularityError

CONDITION_CAP: float = 1e8


def as_vector(values: Sequence[float], size: int, name: str = "vector") -> np.ndarray:
    """Converts a sequence to a finite float vector of the given size.

    Args:
        values (Sequence[float]): Input components.
        size (int): Expected number of components.
        name (str): Name used in error messages.

    Returns:
        np.ndarray: 1-D float64 array.

    Raises:
        ValueError: If the size is wrong or any component is not finite.
    """
    arr = np.asarray(values, dtype=float).reshape(-1)
    if arr.shape != (size,):
        raise ValueError(f"{name} must have {size} components, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite components: {arr.tolist()}")
    return arr


def inv3(m: np.ndarray, cond_cap: float = CONDITION_CAP) -> np.ndarray:
    """Closed-form inverse of a 3x3 matrix through its adjugate.

    Args:
        m (np.ndarray): 3x3 matrix.
        cond_cap (float): Largest accepted 2-norm condition number.

    Returns:
        np.ndarray: The inverse of m.

    Raises:
        SingularityError: If m is singular or worse conditioned than cond_cap.
    """
    a, b, c = m[0]
    d, e, f = m[1]
    g, h, i = m[2]
    adj = np.array(
        [
            [e * i - f * h, c * h - b * i, b * f - c * e],
            [f * g - d * i, a * i - c * g, c * d - a * f],
            [d * h - e * g, b * g - a * h, a * e - b * d],
        ]
    )
    det = a * adj[0, 0] + b * adj[1, 0] + c * adj[2, 0]
    if det == 0.0 or not np.isfinite(det):
        logging.error(f"Singular 3x3 matrix, det={det}")
        raise SingularityError("matrix is singular")
    cond = float(np.linalg.cond(m))
    if not np.isfinite(cond) or cond > cond_cap:
        logging.error(f"Condition number {cond:.3e} exceeds cap {cond_cap:.1e}")
        raise SingularityError(
            f"condition number {cond:.3e} exceeds cap {cond_cap:.1e}"
        )
    return adj / det


def induced_norm(m: np.ndarray) -> float:
    """Induced 2-norm (largest singular value)."""
    return float(np.linalg.norm(m, 2))


def min_eigenvalue(m: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    return float(np.min(np.linalg.eigvalsh(m)))


def is_symmetric_positive_definite(m: np.ndarray, atol: float = 1e-12) -> bool:
    """True when m is symmetric (to atol, relative to its scale) with positive eigenvalues."""
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    scale = max(1.0, float(np.max(np.abs(m))))
    if not np.allclose(m, m.T, rtol=0.0, atol=atol * scale):
        return False
    return min_eigenvalue(0.5 * (m + m.T)) > 0.0


def format_decimal(value: float) -> str:
    """Shortest round-trip decimal text of a float, never in exponent notation.

    Examples:
        >>> format_decimal(173.0)
        '173'
        >>> format_decimal(0.004)
        '0.004'
    """
    value = float(value)
    if not np.isfinite(value):
        raise ValueError(f"cannot format non-finite literal {value}")
    if value == 0.0:
        return "0"
    return np.format_float_positional(value, unique=True, trim="-")
