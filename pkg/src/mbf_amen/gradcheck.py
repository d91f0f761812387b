"""Finite-difference verification of the analytic gradients.

Checks are meaningful only away from the points where the primitives are not
differentiable: relu inputs at 0 and max-pool windows with tied maxima.
:func:`nondifferentiable_margin` measures the distance to those points so a
caller can reject degenerate evaluation points.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import NumericError, ShapeError
from .tensor import Tensor, as_tensor


def _scalar(out):
    if out.values.size != 1:
        raise ShapeError("grad_check needs a scalar-valued computation", out.shape)
    return float(out.values.reshape(()))


def numerical_gradient(computation, point, step=1e-5):
    """Central differences (f(x+h) - f(x-h)) / 2h, one coordinate at a time."""
    x0 = np.array(as_tensor(point).values, dtype=np.float64)
    grad = np.empty_like(x0)
    for i in range(x0.size):
        shifted = x0.copy()
        shifted.flat[i] += step
        f_plus = _scalar(computation(Tensor(shifted)))
        shifted.flat[i] = x0.flat[i] - step
        f_minus = _scalar(computation(Tensor(shifted)))
        grad.flat[i] = (f_plus - f_minus) / (2 * step)
    return grad


def analytic_gradient(computation, point):
    x = Tensor(np.array(as_tensor(point).values, dtype=np.float64), requires_grad=True)
    out = computation(x)
    _scalar(out)
    out.backward()
    grad = x.grad if x.grad is not None else np.zeros_like(x.values)
    if not np.all(np.isfinite(grad)):
        raise NumericError("analytic gradient is not finite")
    return grad


def relative_error(analytic, numeric):
    denominator = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denominator


def grad_check(computation, point, step=1e-5):
    """Max over coordinates of |a - n| / max(|a|, |n|, 1e-8).

    ``computation`` maps a Tensor to a scalar Tensor; it is evaluated at 64-bit
    precision.
    """
    analytic = analytic_gradient(computation, point)
    numeric = numerical_gradient(computation, point, step)
    if analytic.size == 0:
        return 0.0
    return float(relative_error(analytic, numeric).max())


def pool_tie_gap(x, window, stride=None, floor=None):
    """Smallest difference between the two largest values of any pooling window.

    Windows whose maximum is <= ``floor`` are skipped; after a relu, all-zero
    windows pass no gradient whichever element wins.
    """
    if stride is None:
        stride = window
    x = as_tensor(x).values
    if x.ndim == 3:
        x = x[None]
    if window == 1:
        return np.inf
    windows = sliding_window_view(x, (window, window), axis=(2, 3))[
        :, :, ::stride, ::stride
    ]
    flat = np.sort(windows.reshape(windows.shape[:4] + (-1,)), axis=-1)
    gaps = flat[..., -1] - flat[..., -2]
    if floor is not None:
        gaps = gaps[flat[..., -1] > floor]
    return float(gaps.min()) if gaps.size else np.inf


def nondifferentiable_margin(trace):
    """Distance of a recorded forward pass to the nearest relu kink / pooling tie.

    ``trace`` is the list filled by :func:`mbf_amen.backbone.feature_extract`.
    """
    margin = np.inf
    for kind, value in trace:
        if kind == "relu":
            margin = min(margin, float(np.abs(value).min()))
        elif kind == "maxpool":
            margin = min(margin, value)
    return margin
