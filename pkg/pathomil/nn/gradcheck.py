"""
Module provides a central finite-difference gradient oracle.
"""
from typing import Callable
import math
import numpy as np

from ..exceptions import NumericalError


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray,
                     h: float = 1e-5) -> np.ndarray:
    """
    Approximates the gradient of a scalar function by central differences --
    i.e. (f(x + h e_i) - f(x - h e_i)) / (2h) for every coordinate i.

    Parameters
    ----------
    f : `Callable[[numpy.ndarray], float]`
        Scalar function of a parameter array.
    x : `numpy.ndarray`
        Point at which the gradient is approximated -- not modified.
    h : `float`, optional
        Step size.

        The default is 1e-5

    Returns
    -------
    `numpy.ndarray`
        Approximated gradient -- same shape as `x`.
    """
    if not callable(f):
        raise TypeError("'f' must be callable")
    if h <= 0:
        raise ValueError("'h' must be positive")

    x_ = np.array(x, dtype=np.float64)
    flat = x_.reshape(-1)
    grad = np.zeros_like(flat)

    def __eval() -> float:
        value = float(f(x_))
        if not math.isfinite(value):
            raise NumericalError(f"Function value is not finite: {value}")
        return value

    for i in range(flat.shape[0]):
        old = flat[i]
        flat[i] = old + h
        f_plus = __eval()
        flat[i] = old - h
        f_minus = __eval()
        flat[i] = old
        grad[i] = (f_plus - f_minus) / (2. * h)

    return grad.reshape(x_.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """
    Relative error between two gradients --
    i.e. ||a - n|| / max(||a|| + ||n||, 1e-8).

    Parameters
    ----------
    analytic : `numpy.ndarray`
        Analytic gradient.
    numeric : `numpy.ndarray`
        Numerical gradient.

    Returns
    -------
    `float`
        Relative error.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.shape != numeric.shape:
        raise ValueError(f"Shape mismatch: {analytic.shape} vs. {numeric.shape}")

    denom = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-8)
    return float(np.linalg.norm(analytic - numeric) / denom)
