"""
Blueprint: Core - Optimizer

Adam over a dictionary of named numpy parameters, plus the step-decay
learning-rate schedule used by both trainers.
"""

from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np


@dataclass
class StepDecaySchedule:
    """Multiply the base rate by `factor` at each milestone epoch"""
    base_lr: float
    milestones: Sequence[int] = (40, 70)
    factor: float = 0.1

    def lr_at(self, epoch: int) -> float:
        passed = sum(1 for m in self.milestones if epoch >= m)
        return self.base_lr * (self.factor ** passed)


@dataclass
class Adam:
    """Classic Adam on named arrays, updated in place.

    Args:
        params: Name -> parameter array (modified in place by step)
        lr: Learning rate
        beta1: Exponential decay for first moment
        beta2: Exponential decay for second moment
        eps: Numerical stability term
    """
    params: Dict[str, np.ndarray]
    lr: float = 3.5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, value in self.params.items():
            self.m[name] = np.zeros_like(value)
            self.v[name] = np.zeros_like(value)

    def step(self, grads: Dict[str, np.ndarray]) -> None:
        """Apply one update; parameters without a gradient are left alone"""
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        # Sorted keys fix the update order for determinism
        for name in sorted(grads):
            grad = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * grad
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (grad ** 2)
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            self.params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
