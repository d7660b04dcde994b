import numpy as np

from ..errors import NonFiniteGradient


def sgd_step(weights, grads, velocities, lr, momentum=0.9, weight_decay=1e-4):
    """In-place momentum SGD with L2 weight decay.

    v <- momentum * v + grad + weight_decay * w;  w <- w - lr * v
    All arguments are parallel lists of arrays. Nothing is modified when any
    gradient is non-finite.
    """
    for g in grads:
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteGradient("gradient contains NaN or inf")
    for w, g, v in zip(weights, grads, velocities):
        if g is None:
            g = 0.0
        v *= momentum
        v += g
        if weight_decay:
            v += weight_decay * w
        w -= lr * v
    return weights


class SGD:
    """Momentum SGD over a list of parameter tensors; velocity buffers start at zero."""

    def __init__(self, params, lr=0.01, momentum=0.9, weight_decay=1e-4):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        sgd_step(
            [p.data for p in self.params],
            [p.grad for p in self.params],
            self.velocity,
            self.lr,
            self.momentum,
            self.weight_decay,
        )
