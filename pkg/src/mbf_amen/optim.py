import numpy as np

from .exceptions import ArgumentError, ShapeError
from .tensor import Tensor


def sgd_step(params, grads, velocities, lr, momentum=0.0, weight_decay=0.0):
    """One classical-momentum SGD update, in place.

        v <- momentum * v - lr * (g + weight_decay * theta)
        theta <- theta + v

    ``params`` maps names to Tensors (or ndarrays), ``grads`` maps the same
    names to gradient arrays (None counts as zero), ``velocities`` is the
    caller-owned state; missing entries start at zero.
    Returns ``(params, velocities)``.
    """
    if lr <= 0:
        raise ArgumentError("learning rate must be positive")
    if not 0 <= momentum < 1:
        raise ArgumentError("momentum must be in [0, 1)")
    if weight_decay < 0:
        raise ArgumentError("weight decay must be >= 0")
    missing = set(params) - set(grads)
    if missing:
        raise ArgumentError(f"no gradient for {sorted(missing)}")
    for name in params:
        theta = params[name].values if isinstance(params[name], Tensor) else params[name]
        g = grads[name]
        if g is None:
            g = np.zeros_like(theta)
        elif g.shape != theta.shape:
            raise ShapeError(f"gradient for '{name}' does not match", g.shape, theta.shape)
        v = velocities.get(name)
        if v is None:
            v = np.zeros_like(theta)
            velocities[name] = v
        elif v.shape != theta.shape:
            raise ShapeError(f"velocity for '{name}' does not match", v.shape, theta.shape)
        step = g + weight_decay * theta
        v *= momentum
        v -= lr * step
        theta += v
    return params, velocities


class SGD:
    """Keeps the velocity state for repeated sgd_step calls on the same params"""

    def __init__(self, params, lr, momentum=0.0, weight_decay=0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocities = {}

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    def step(self):
        grads = {name: t.grad for name, t in self.params.items()}
        sgd_step(
            self.params,
            grads,
            self.velocities,
            self.lr,
            self.momentum,
            self.weight_decay,
        )
