"""Adam optimizer and global gradient-norm clipping over :class:`PolicyParams`."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from packbench.policy.network import PolicyParams


def clip_grad_norm(params: PolicyParams, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``.

    Args:
        params: Parameters with accumulated gradients.
        max_norm: Norm ceiling.

    Returns:
        Gradient norm before clipping.
    """
    grads = [t.grad for t in params if t.grad is not None]
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for tensor in params:
            if tensor.grad is not None:
                tensor.grad = tensor.grad * scale
    return norm


@dataclass(slots=True)
class Adam:
    """Adam with bias correction; the learning rate may change between steps."""

    params: PolicyParams
    lr: float
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-5
    steps: int = 0
    _m: dict[str, NDArray[np.float64]] = field(default_factory=dict, repr=False)
    _v: dict[str, NDArray[np.float64]] = field(default_factory=dict, repr=False)

    def step(self) -> None:
        """Apply one update from the accumulated gradients; tensors without a gradient are skipped."""
        self.steps += 1
        beta1, beta2 = self.betas
        correction1 = 1.0 - beta1**self.steps
        correction2 = 1.0 - beta2**self.steps
        for name, tensor in self.params.tensors.items():
            if tensor.grad is None:
                continue
            m = self._m.get(name, np.zeros_like(tensor.data))
            v = self._v.get(name, np.zeros_like(tensor.data))
            m = beta1 * m + (1.0 - beta1) * tensor.grad
            v = beta2 * v + (1.0 - beta2) * tensor.grad * tensor.grad
            self._m[name], self._v[name] = m, v
            tensor.data = tensor.data - self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
