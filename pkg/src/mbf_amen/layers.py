"""Differentiable layer primitives.

Layout is channel-first: a single image or feature map is ``[C, H, W]``,
a batch ``[N, C, H, W]``. Every primitive accepts the single and the batched form.

Gradient conventions where the derivative is not unique: relu passes no
gradient at exactly 0, max pooling routes the gradient to the first maximal
element of a window in row-major order.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ArgumentError, NumericError, ShapeError
from .tensor import as_tensor, reshape, result

PROBABILITY_FLOOR = 1e-12

LAYER_KINDS = ("conv", "maxpool", "relu", "linear", "gap")


class LayerSpec:
    """One stage of a network description.

    ``kernel`` is the (square) kernel or pooling window, ``out_channels``
    applies to conv, ``out_features`` to linear.
    """

    def __init__(
        self,
        kind,
        kernel=None,
        stride=1,
        padding=0,
        out_channels=None,
        out_features=None,
    ):
        self.kind = kind
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        self.out_channels = out_channels
        self.out_features = out_features
        self.validate()

    def validate(self):
        if self.kind not in LAYER_KINDS:
            raise ArgumentError(
                f"unknown layer kind '{self.kind}', expected one of {LAYER_KINDS}"
            )
        if self.kind in ("conv", "maxpool"):
            if not _positive_int(self.kernel):
                raise ArgumentError(f"{self.kind}: kernel must be a positive integer")
            if not _positive_int(self.stride):
                raise ArgumentError(f"{self.kind}: stride must be a positive integer")
            if not isinstance(self.padding, int) or self.padding < 0:
                raise ArgumentError(f"{self.kind}: padding must be >= 0")
            if self.kind == "maxpool" and self.padding != 0:
                raise ArgumentError("maxpool: padding is not supported")
            if self.padding >= self.kernel:
                raise ArgumentError(
                    f"{self.kind}: padding ({self.padding}) must be smaller than the"
                    f" kernel ({self.kernel})"
                )
        if self.kind == "conv" and not _positive_int(self.out_channels):
            raise ArgumentError("conv: out_channels must be a positive integer")
        if self.kind == "linear" and not _positive_int(self.out_features):
            raise ArgumentError("linear: out_features must be a positive integer")

    def output_shape(self, shape):
        """Shape produced from an unbatched input of ``shape``.

        Extents may come out below 1 - callers decide what that means.
        """
        if self.kind == "conv":
            c, h, w = shape
            return (
                self.out_channels,
                (h + 2 * self.padding - self.kernel) // self.stride + 1,
                (w + 2 * self.padding - self.kernel) // self.stride + 1,
            )
        elif self.kind == "maxpool":
            c, h, w = shape
            return (
                c,
                (h - self.kernel) // self.stride + 1,
                (w - self.kernel) // self.stride + 1,
            )
        elif self.kind == "relu":
            return tuple(shape)
        elif self.kind == "gap":
            return (shape[0],)
        else:
            return (self.out_features,)

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind in ("conv", "maxpool"):
            d["kernel"] = self.kernel
            d["stride"] = self.stride
            d["padding"] = self.padding
        if self.kind == "conv":
            d["out_channels"] = self.out_channels
        if self.kind == "linear":
            d["out_features"] = self.out_features
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "kind" not in d:
            raise ArgumentError(f"layer description without 'kind': {d}")
        allowed = {"kind", "kernel", "stride", "padding", "out_channels", "out_features"}
        unknown = set(d) - allowed
        if unknown:
            raise ArgumentError(f"unknown layer keys {sorted(unknown)}")
        if d["kind"] == "maxpool" and "stride" not in d and "kernel" in d:
            d["stride"] = d["kernel"]
        return cls(**d)

    def __eq__(self, other):
        return isinstance(other, LayerSpec) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return "LayerSpec(%s)" % (
            ", ".join(f"{k}={v}" for k, v in self.to_dict().items()),
        )


def _positive_int(value):
    return isinstance(value, int) and not isinstance(value, bool) and value > 0


def _unbatched(fn, x, *args, **kwargs):
    """Run a batched primitive on a single [C, H, W] sample."""
    out = fn(reshape(x, (1,) + x.shape), *args, **kwargs)
    return reshape(out, out.shape[1:])


def conv2d(input, kernels, bias, stride=1, padding=0):
    """2D cross-correlation (no kernel flip).

    input ``[N, C_in, H, W]`` (or unbatched), kernels ``[C_out, C_in, k, k]``,
    bias ``[C_out]``. Output extents are ``(H + 2*padding - k) // stride + 1``.
    """
    x = as_tensor(input)
    w = as_tensor(kernels)
    b = as_tensor(bias)
    if x.ndim == 3:
        if w.ndim == 4 and x.shape[0] != w.shape[1]:
            raise ShapeError(
                "conv2d: input channels do not match kernel channels", x.shape, w.shape
            )
        return _unbatched(conv2d, x, w, b, stride=stride, padding=padding)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("conv2d needs a rank-4 input and rank-4 kernels", x.shape, w.shape)
    if x.shape[1] != w.shape[1]:
        raise ShapeError(
            "conv2d: input channels do not match kernel channels", x.shape, w.shape
        )
    if w.shape[2] != w.shape[3]:
        raise ShapeError("conv2d: kernels must be square", w.shape)
    if b.shape != (w.shape[0],):
        raise ShapeError("conv2d: bias must have one entry per kernel", b.shape, w.shape)
    if stride < 1:
        raise ArgumentError("conv2d: stride must be >= 1")
    if padding < 0:
        raise ArgumentError("conv2d: padding must be >= 0")
    k = w.shape[2]
    n, c, h, width = x.shape
    if h + 2 * padding < k or width + 2 * padding < k:
        raise ShapeError("conv2d: kernel larger than padded input", x.shape, w.shape)

    if padding:
        xp = np.pad(x.values, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.values
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out_h, out_w = windows.shape[2], windows.shape[3]
    out = np.tensordot(windows, w.values, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + b.values[None, :, None, None]

    def backward(g):
        grad_w = grad_b = grad_x = None
        if w.requires_grad:
            grad_w = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        if b.requires_grad:
            grad_b = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            grad_xp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    contribution = np.tensordot(g, w.values[:, :, i, j], axes=([1], [0]))
                    grad_xp[
                        :,
                        :,
                        i : i + stride * out_h : stride,
                        j : j + stride * out_w : stride,
                    ] += contribution.transpose(0, 3, 1, 2)
            grad_x = grad_xp[:, :, padding : padding + h, padding : padding + width]
        return (grad_x, grad_w, grad_b)

    return result(out, (x, w, b), "conv2d", backward)


def max_pool2d(input, window, stride=None):
    """Max over ``window`` x ``window`` patches; stride defaults to the window."""
    x = as_tensor(input)
    if stride is None:
        stride = window
    if x.ndim == 3:
        return _unbatched(max_pool2d, x, window, stride=stride)
    if x.ndim != 4:
        raise ShapeError("max_pool2d needs a rank-3 or rank-4 input", x.shape)
    if window < 1 or stride < 1:
        raise ArgumentError("max_pool2d: window and stride must be >= 1")
    n, c, h, w = x.shape
    if window > h or window > w:
        raise ShapeError(
            f"max_pool2d: window {window} larger than the spatial extent", x.shape
        )
    windows = sliding_window_view(x.values, (window, window), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    out_h, out_w = windows.shape[2], windows.shape[3]
    flat = windows.reshape(n, c, out_h, out_w, window * window)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        rows = (np.arange(out_h) * stride)[:, None] + arg // window
        cols = (np.arange(out_w) * stride)[None, :] + arg % window
        grad_x = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(
            grad_x,
            (
                np.arange(n)[:, None, None, None],
                np.arange(c)[None, :, None, None],
                rows,
                cols,
            ),
            g,
        )
        return (grad_x,)

    return result(out, (x,), "max_pool2d", backward)


def relu(input):
    x = as_tensor(input)
    out = np.maximum(x.values, 0)

    def backward(g):
        return (g * (x.values > 0),)

    return result(out, (x,), "relu", backward)


def linear(input, weight, bias):
    """``weight @ input + bias`` for ``[d_in]`` or batched ``[N, d_in]`` input."""
    x = as_tensor(input)
    w = as_tensor(weight)
    b = as_tensor(bias)
    if w.ndim != 2 or x.ndim not in (1, 2) or x.shape[-1] != w.shape[1]:
        raise ShapeError("linear: inner extents do not match", x.shape, w.shape)
    if b.shape != (w.shape[0],):
        raise ShapeError("linear: bias must have one entry per output", b.shape, w.shape)
    out = x.values @ w.values.T + b.values

    def backward(g):
        if x.ndim == 1:
            grad_w = np.outer(g, x.values)
            grad_b = g
        else:
            grad_w = g.T @ x.values
            grad_b = g.sum(axis=0)
        return (g @ w.values, grad_w, grad_b)

    return result(out, (x, w, b), "linear", backward)


def flatten(input):
    """Collapse everything but the batch axis: ``[N, C, H, W] -> [N, C*H*W]``."""
    x = as_tensor(input)
    return reshape(x, (x.shape[0], -1))


def _softmax_values(z):
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax: non-finite logit")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(logits):
    """Softmax over the last axis of ``[M]`` or ``[N, M]`` logits, M >= 2."""
    z = as_tensor(logits)
    if z.ndim not in (1, 2) or z.shape[-1] < 2:
        raise ShapeError("softmax needs at least two classes", z.shape)
    s = _softmax_values(z.values)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return result(s, (z,), "softmax", backward)


def one_hot(labels, num_classes):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ArgumentError(f"labels outside [0, {num_classes})")
    out = np.zeros(labels.shape + (num_classes,))
    if labels.size:
        np.put_along_axis(out, labels[..., None].astype(np.int64), 1.0, axis=-1)
    return out


def _check_one_hot(y, shape):
    y = np.asarray(y, dtype=np.float64)
    if y.shape != tuple(shape):
        raise ShapeError("labels must be one-hot with one entry per class", y.shape, shape)
    ok = np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=-1) == 1)
    if not ok:
        raise ArgumentError("labels must have exactly one entry equal to 1")
    return y


def cross_entropy(prob, labels):
    """Mean cross-entropy of probabilities ``[M]`` / ``[N, M]`` against one-hot labels.

    Probabilities are clamped to PROBABILITY_FLOOR inside the log; the
    gradient through a clamped entry is 0.
    """
    p = as_tensor(prob)
    y = _check_one_hot(labels, p.shape).astype(p.dtype)
    n = 1 if p.ndim == 1 else p.shape[0]
    clamped = np.maximum(p.values, PROBABILITY_FLOOR)
    loss = -(y * np.log(clamped)).sum() / n

    def backward(g):
        grad = -g * y / clamped / n
        return (np.where(p.values >= PROBABILITY_FLOOR, grad, 0),)

    return result(np.asarray(loss, dtype=p.dtype), (p,), "cross_entropy", backward)


def softmax_cross_entropy(logits, labels):
    """softmax followed by cross_entropy, with the closed-form gradient (softmax - onehot) / N."""
    z = as_tensor(logits)
    if z.ndim not in (1, 2) or z.shape[-1] < 2:
        raise ShapeError("softmax needs at least two classes", z.shape)
    y = _check_one_hot(labels, z.shape).astype(z.dtype)
    n = 1 if z.ndim == 1 else z.shape[0]
    s = _softmax_values(z.values)
    loss = -(y * np.log(np.maximum(s, PROBABILITY_FLOOR))).sum() / n

    def backward(g):
        return (g * (s - y) / n,)

    return result(np.asarray(loss, dtype=z.dtype), (z,), "softmax_cross_entropy", backward)


def global_average_pool(feature_map):
    """Per-channel spatial mean: ``[C, H, W] -> [C]``, ``[N, C, H, W] -> [N, C]``."""
    f = as_tensor(feature_map)
    if f.ndim not in (3, 4):
        raise ShapeError("global_average_pool needs a rank-3 or rank-4 input", f.shape)
    h, w = f.shape[-2:]
    out = f.values.mean(axis=(-2, -1))

    def backward(g):
        return (np.broadcast_to(g[..., None, None] / (h * w), f.shape).copy(),)

    return result(out, (f,), "global_average_pool", backward)
