import numpy as np

from .exceptions import ShapeError, NumericError

MAX_RANK = 4


class Tensor:
    """A rank <= 4 real array with a gradient slot.

    Tensors returned by the primitives in :mod:`mbf_amen.layers` remember the
    tensors they were computed from. Calling :meth:`backward` on a scalar
    result walks that graph in reverse and fills ``grad`` of every tensor
    that requires it.

    The constructor wraps ``values`` without copying when it already is a
    floating point ndarray. Integer input is promoted to float64.
    """

    def __init__(self, values, requires_grad=False, dtype=None):
        values = np.asarray(values, dtype=dtype)
        if not np.issubdtype(values.dtype, np.floating):
            values = values.astype(np.float64)
        if values.ndim > MAX_RANK:
            raise ShapeError(f"tensors are limited to rank {MAX_RANK}", values.shape)
        self.values = values
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def dtype(self):
        return self.values.dtype

    def __len__(self):
        return len(self.values)

    def __repr__(self):
        return "Tensor(shape=%s, dtype=%s, op=%s, requires_grad=%s)" % (
            self.shape,
            self.dtype,
            self._op,
            self.requires_grad,
        )

    def item(self):
        return self.values.item()

    def copy(self):
        return Tensor(self.values.copy(), requires_grad=self.requires_grad)

    def astype(self, dtype):
        return Tensor(self.values.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Reverse-mode sweep from this tensor.

        Without ``grad`` the tensor must hold exactly one value, which is
        seeded with 1.
        """
        if grad is None:
            if self.values.size != 1:
                raise ShapeError(
                    "backward() without a seed gradient needs a scalar", self.shape
                )
            grad = np.ones_like(self.values)
        else:
            grad = np.asarray(grad, dtype=self.dtype)
            if grad.shape != self.shape:
                raise ShapeError("seed gradient does not match", grad.shape, self.shape)

        order = _topological_order(self)
        pending = {id(self): grad}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient reached '{node._op}'")
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad = node.grad + g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, parent_grad in zip(node._parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + parent_grad
                else:
                    pending[key] = parent_grad


def _topological_order(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(value, dtype=None):
    if isinstance(value, Tensor):
        if dtype is not None and value.dtype != dtype:
            return value.astype(dtype)
        return value
    return Tensor(value, dtype=dtype)


def result(values, parents, op, backward):
    """Wrap the output of a primitive.

    ``backward`` maps the gradient of the output onto one gradient (or None)
    per parent.
    """
    if not np.all(np.isfinite(values)):
        raise NumericError(f"non-finite values produced by '{op}'")
    out = Tensor(values)
    out._op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def reshape(t, shape):
    t = as_tensor(t)
    original = t.shape

    def backward(g):
        return (g.reshape(original),)

    return result(t.values.reshape(shape), (t,), "reshape", backward)


def mul(a, b):
    """Elementwise product of two equally shaped tensors."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("mul needs equal shapes", a.shape, b.shape)

    def backward(g):
        return (g * b.values, g * a.values)

    return result(a.values * b.values, (a, b), "mul", backward)


def total(t):
    """Sum of all elements, as a scalar tensor."""
    t = as_tensor(t)

    def backward(g):
        return (np.broadcast_to(g, t.shape).astype(t.dtype),)

    return result(np.asarray(t.values.sum()), (t,), "total", backward)
