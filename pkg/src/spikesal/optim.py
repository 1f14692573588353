"""AdamW with decoupled weight decay, on named parameter lists.

State is keyed by parameter name so checkpoints stay readable and
loading is order-independent.
"""

from __future__ import annotations

import numpy as np


class AdamW:
    def __init__(self, named_params, lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-2):
        self.params = list(named_params)
        names = [n for n, _ in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = float(weight_decay)
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            # decay decoupled from the gradient path
            if self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def state_arrays(self) -> dict:
        out = {}
        for name in self.m:
            out["adam.m." + name] = self.m[name]
            out["adam.v." + name] = self.v[name]
        out["adam.t"] = np.array([float(self.t)])
        return out

    def load_state_arrays(self, arrays: dict):
        for name in self.m:
            self.m[name][...] = arrays["adam.m." + name]
            self.v[name][...] = arrays["adam.v." + name]
        self.t = int(arrays["adam.t"][0])


def linear_lr(epoch: int, epochs: int, lr_start: float, lr_end: float) -> float:
    """Per-epoch linear decay from lr_start (epoch 0) to lr_end (last)."""
    if epochs <= 1:
        return lr_start
    frac = epoch / (epochs - 1)
    return lr_start + (lr_end - lr_start) * frac
