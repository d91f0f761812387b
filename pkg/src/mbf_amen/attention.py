"""Pixel-wise attention maps and the weighted-superposition enhancement.

A raw map is ``A[h, w] = sum_c g_c * F[c, h, w]`` where ``g_c`` is the global
average of channel ``c``. Maps are plain ndarrays, ``[H, W]`` or ``[N, H, W]``
for a batch; the branch that produced them is tracked by the caller.
"""
import numpy as np

from .exceptions import ArgumentError, ShapeError
from .images import bilinear_resize, write_pgm
from .layers import global_average_pool
from .tensor import as_tensor


def attention_map(feature_map):
    """Raw (unnormalized) attention of a ``[C, H, W]`` or ``[N, C, H, W]`` feature map"""
    f = as_tensor(feature_map)
    g = global_average_pool(f).values
    return np.einsum("...c,...chw->...hw", g, f.values)


def normalize_attention(A):
    """Min-max rescale each map to [0, 1]; a constant map becomes all zeros"""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim not in (2, 3):
        raise ShapeError("attention maps are [H, W] or [N, H, W]", A.shape)
    low = A.min(axis=(-2, -1), keepdims=True)
    span = A.max(axis=(-2, -1), keepdims=True) - low
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (A - low) / safe, 0.0)


def upsample_attention(A, target):
    """Bilinear upsampling to ``target = (height, width)``; never shrinks"""
    A = np.asarray(A, dtype=np.float64)
    height, width = target
    h, w = A.shape[-2:]
    if height < h or width < w:
        raise ArgumentError(
            f"upsampling target {(height, width)} is smaller than the map {(h, w)}"
        )
    return bilinear_resize(A, height, width)


def enhance_image(X_prev, A, lam):
    """``X_prev + lam * A``, one map per image broadcast over the channels.

    No clamping: values may leave [0, 1] by at most ``lam``.
    """
    X_prev = np.asarray(X_prev)
    A = np.asarray(A, dtype=X_prev.dtype)
    if lam < 0:
        raise ArgumentError(f"lambda must be >= 0, got {lam}")
    expected = X_prev.shape[:-3] + X_prev.shape[-2:]
    if X_prev.ndim not in (3, 4) or A.shape != expected:
        raise ShapeError("attention maps do not match the images", A.shape, X_prev.shape)
    if lam == 0:
        return X_prev.copy()
    return X_prev + X_prev.dtype.type(lam) * A[..., None, :, :]


def image_attention(feature_map, image_shape):
    """Normalized attention at feature resolution, upsampled to ``(height, width)``"""
    return upsample_attention(normalize_attention(attention_map(feature_map)), image_shape)


def write_attention_pgm(path, A):
    write_pgm(path, A)
