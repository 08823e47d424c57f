"""Parameter updates and learning-rate schedules.

Two optimizers: classic SGD with momentum, and an Adam-style update with
bias correction and decoupled weight decay. Both mutate parameter data in
place, outside any tape. ``lr`` is a plain attribute so the training loop
can drive it from a schedule each epoch.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError


class SGDMomentum:
    def __init__(self, params, lr, momentum=0.9, weight_decay=0.0):
        if lr < 0:
            raise ContractError(f"learning rate must be >= 0, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ContractError(f"momentum must lie in [0, 1), got {momentum}")
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self._velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        for p, v in zip(self.params, self._velocity):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v *= self.momentum
            v += g
            p.data -= np.asarray(self.lr * v, dtype=p.data.dtype)


class AdamLike:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.0):
        if lr < 0:
            raise ContractError(f"learning rate must be >= 0, got {lr}")
        b1, b2 = betas
        if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
            raise ContractError(f"betas must lie in [0, 1), got {betas}")
        self.params = list(params)
        self.lr = float(lr)
        self.betas = (float(b1), float(b2))
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]
        self._t = 0

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self._t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self._t
        c2 = 1.0 - b2 ** self._t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                # Decoupled: decay acts on the weights, not the gradient.
                update = update + self.weight_decay * p.data
            p.data -= np.asarray(self.lr * update, dtype=p.data.dtype)


def cosine_lr(base_lr, epoch, epochs):
    """Cosine annealing from base_lr to 0 across the run."""
    if epochs <= 1:
        return base_lr
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * epoch / (epochs - 1)))


def step_lr(base_lr, epoch, epochs, gamma=0.1):
    """Decay by gamma at 1/2 and 3/4 of the run."""
    factor = 1.0
    if epoch >= epochs // 2:
        factor *= gamma
    if epoch >= (3 * epochs) // 4:
        factor *= gamma
    return base_lr * factor


def resolve_lr(schedule, base_lr, epoch, epochs):
    if schedule == "cosine":
        return cosine_lr(base_lr, epoch, epochs)
    if schedule == "step":
        return step_lr(base_lr, epoch, epochs)
    if schedule == "none":
        return base_lr
    raise ContractError(f"unknown lr schedule {schedule!r}")
