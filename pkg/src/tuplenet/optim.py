"""Stochastic gradient descent with momentum, per-epoch learning-rate decay,
and an L1 penalty folded into the update as a subgradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Parameter


class TrainingError(RuntimeError):
    """Raised when training hits a non-finite loss or gradient."""


@dataclass
class OptimizerConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    decay_factor: float = 0.99
    l1_coeff: float = 1e-5
    batch_size: int = 128
    max_epochs: int = 50
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ValueError(f"decay factor must be in (0, 1], got {self.decay_factor}")
        if self.l1_coeff < 0:
            raise ValueError(f"l1 coefficient must be >= 0, got {self.l1_coeff}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 0:
            raise ValueError(f"max epochs must be >= 0, got {self.max_epochs}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")

    def epoch_rate(self, epoch: int) -> float:
        """Learning rate in effect during ``epoch`` (applied before its first
        batch): ``lr * decay^epoch``."""
        return self.learning_rate * self.decay_factor ** epoch


def sgd_step(params: list[Parameter], config: OptimizerConfig, epoch: int) -> None:
    """One momentum update from accumulated gradients:

    ``v <- momentum * v - lr_e * (g + l1 * sign(w))``; ``w <- w + v``.

    The L1 subgradient at exactly zero is zero, so zero weights feel no
    L1 pressure.
    """
    lr = config.epoch_rate(epoch)
    for p in params:
        if not np.isfinite(p.grad).all():
            raise TrainingError(f"non-finite gradient in parameter {p.name!r}")
        g = p.grad
        if config.l1_coeff > 0.0:
            g = g + config.l1_coeff * np.sign(p.value)
        p.momentum *= config.momentum
        p.momentum -= lr * g
        p.value += p.momentum
