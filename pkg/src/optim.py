"""
First-order optimizers updating a list of numpy parameters in place.
"""

from typing import Any, Dict, List, Sequence, Tuple

import numpy as np


class SGD:
    """Plain gradient descent: ``p -= lr * g``."""

    def __init__(self, params: List[np.ndarray], lr: float = 1e-3):
        self.params = params
        self.lr = lr
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        for p, g in zip(self.params, grads):
            p -= self.lr * g

    def state_dict(self) -> Dict[str, Any]:
        return {"name": type(self).__name__, "lr": self.lr, "t": self.t}


class MomentumSGD(SGD):
    """Heavy-ball momentum: ``v = mu * v + g; p -= lr * v``."""

    def __init__(self, params: List[np.ndarray], lr: float = 1e-3, momentum: float = 0.9):
        super().__init__(params, lr)
        self.momentum = momentum
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        for p, v, g in zip(self.params, self.velocity, grads):
            v *= self.momentum
            v += g
            p -= self.lr * v


class Adam(SGD):
    """Adam with bias-corrected first and second moment estimates."""

    def __init__(self, params: List[np.ndarray], lr: float = 1e-3,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        super().__init__(params, lr)
        self.betas = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        beta1, beta2 = self.betas
        for p, m, v, g in zip(self.params, self.m, self.v, grads):
            m *= beta1
            m += (1 - beta1) * g
            v *= beta2
            v += (1 - beta2) * (g * g)
            m_hat = m / (1 - beta1 ** self.t)
            v_hat = v / (1 - beta2 ** self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(name: str, params: List[np.ndarray], lr: float, momentum: float = 0.9,
                   betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> SGD:
    """Builds the optimizer named ``plain-sgd``, ``momentum-sgd`` or ``adam``."""
    if name == "plain-sgd":
        return SGD(params, lr)
    if name == "momentum-sgd":
        return MomentumSGD(params, lr, momentum)
    if name == "adam":
        return Adam(params, lr, betas, eps)
    raise ValueError(f"unknown optimizer '{name}'")
