"""Optimizers over flat parameter vectors with per-parameter step sizes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SGD:
    def init_state(self, w):
        return {}

    def update(self, w, grad, lr, state):
        return w - lr * grad


@dataclass(frozen=True)
class MomentumSGD:
    beta: float = 0.9

    def init_state(self, w):
        return {"v": np.zeros_like(w)}

    def update(self, w, grad, lr, state):
        v = self.beta * state["v"] - lr * grad
        state["v"] = v
        return w + v


@dataclass(frozen=True)
class AdamW:
    """Bias-corrected Adam with decoupled weight decay."""

    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    weight_decay: float = 0.0

    def init_state(self, w):
        return {"m": np.zeros_like(w), "v": np.zeros_like(w), "t": 0}

    def update(self, w, grad, lr, state):
        t = state["t"] + 1
        m = self.beta1 * state["m"] + (1 - self.beta1) * grad
        v = self.beta2 * state["v"] + (1 - self.beta2) * grad * grad
        state.update(m=m, v=v, t=t)
        m_hat = m / (1 - self.beta1 ** t)
        v_hat = v / (1 - self.beta2 ** t)
        w = w - lr * self.weight_decay * w
        return w - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(kind: str, beta: float = 0.9, beta1: float = 0.9, beta2: float = 0.98,
                   eps: float = 1e-8, weight_decay: float = 0.0):
    kind = getattr(kind, "value", kind)
    if kind == "sgd":
        return SGD()
    if kind == "momentum":
        return MomentumSGD(beta)
    if kind == "adamw":
        return AdamW(beta1, beta2, eps, weight_decay)
    raise ValueError(f"unknown optimizer {kind!r}")
