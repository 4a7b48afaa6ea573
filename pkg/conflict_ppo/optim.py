"""Adaptive-moment optimizer over flat parameter vectors."""

import numpy as np

from .diffcore import Array
from .exceptions import ValidationError


class Adam:
    """
    Adam with bias correction. The learning rate is passed per step so an
    external schedule (the KL-adaptive rule) can drive it.
    """

    def __init__(self, size: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValidationError("Adam betas must lie in [0, 1)")
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: Array, grad: Array, lr: float) -> Array:
        """Return the parameters after one descent step along `grad`."""
        if grad.shape != self.m.shape:
            raise ValidationError(
                f"gradient of size {grad.size} does not match optimizer size {self.m.size}"
            )
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return params - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_by_norm(grad: Array, max_norm: float) -> Array:
    """Rescale `grad` to at most `max_norm`; max_norm <= 0 disables clipping."""
    if max_norm <= 0.0:
        return grad
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / (norm + 1e-6))
    return grad
