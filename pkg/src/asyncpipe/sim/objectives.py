"""Objectives with two-argument (forward weights, backward weights) gradients.

Parameters live in one flat float vector. Each objective lists its model
weights as ``units`` (slices of that vector in topological order); pipeline
stages are contiguous runs of units.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np


def partition_units(unit_sizes: Sequence[int], P: int) -> list:
    """Split units evenly into P contiguous stages; return per-stage slices."""
    n = len(unit_sizes)
    if not 1 <= P <= n:
        raise ValueError(f"cannot split {n} model weights into {P} non-empty stages")
    offsets = np.concatenate([[0], np.cumsum(unit_sizes)]).astype(int)
    stages = []
    for chunk in np.array_split(np.arange(n), P):
        stages.append(slice(int(offsets[chunk[0]]), int(offsets[chunk[-1] + 1])))
    return stages


class Quadratic:
    """f(w) = lam w^2 / 2 with discrepancy-sensitive noisy gradient samples.

    The sample is (lam + delta) u_fwd - (delta - phi) u_bkwd - phi u_recomp - eta.
    """

    def __init__(self, lam: float = 1.0, sigma: float = 1.0, delta: float = 0.0,
                 phi: float = 0.0, noise: str = "gaussian"):
        if noise not in ("gaussian", "uniform"):
            raise ValueError(f"unknown noise kind {noise!r}")
        self.lam, self.sigma, self.delta, self.phi, self.noise = lam, sigma, delta, phi, noise
        self.dim = 1
        self.unit_sizes = [1]

    def init_weights(self, rng, w0: float = 1.0):
        return np.array([float(w0)])

    def _eta(self, rng):
        if self.sigma == 0:
            return 0.0
        if self.noise == "gaussian":
            return self.sigma * rng.standard_normal()
        # uniform on [-sqrt(3) sigma, sqrt(3) sigma] has standard deviation sigma
        return self.sigma * np.sqrt(3.0) * rng.uniform(-1.0, 1.0)

    def grad(self, u_fwd, u_bkwd, rng, u_recomp=None):
        if u_fwd.shape != u_bkwd.shape:
            raise ValueError("u_fwd and u_bkwd shapes differ")
        if u_recomp is None:
            u_recomp = u_bkwd
        eta = self._eta(rng)
        return ((self.lam + self.delta) * u_fwd - (self.delta - self.phi) * u_bkwd
                - self.phi * u_recomp - eta)

    def loss(self, w):
        return 0.5 * self.lam * float(w @ w)


class LeastSquares:
    """f(w) = |Xw - y|^2 / (2n), one model weight per feature.

    With ``batch_size=None`` the full-data gradient is used, evaluated through
    the precomputed Gram matrix.
    """

    def __init__(self, X, y, batch_size: Optional[int] = None):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X must be n x d and y length n")
        self.n, self.dim = self.X.shape
        self.batch_size = batch_size
        self.unit_sizes = [1] * self.dim
        self.gram = self.X.T @ self.X / self.n
        self.moment = self.X.T @ self.y / self.n
        self.y_sq = float(self.y @ self.y) / self.n

    def init_weights(self, rng, w0: float = 0.0):
        return np.full(self.dim, float(w0))

    def grad(self, u_fwd, u_bkwd, rng, u_recomp=None):
        # a linear model's backward pass never reads its own weights
        if u_fwd.shape != u_bkwd.shape:
            raise ValueError("u_fwd and u_bkwd shapes differ")
        if self.batch_size is None:
            return self.gram @ u_fwd - self.moment
        idx = rng.integers(0, self.n, size=self.batch_size)
        Xb = self.X[idx]
        return Xb.T @ (Xb @ u_fwd - self.y[idx]) / self.batch_size

    def loss(self, w):
        # 0.5 (w^T G w - 2 w^T m + |y|^2 / n), clipped against rounding
        return max(0.5 * float(w @ self.gram @ w - 2 * w @ self.moment + self.y_sq), 0.0)


class MLP:
    """Fully connected regression network trained on 0.5 * mean squared error.

    The forward pass runs with ``u_fwd`` and caches activations; the backward
    pass propagates errors through the ``u_bkwd`` weight matrices while
    forming weight gradients from the cached activations.
    """

    ACTIVATIONS = {
        "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
        "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(float)),
    }

    def __init__(self, sizes: Sequence[int], X, y, activation: str = "tanh",
                 batch_size: Optional[int] = None):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if activation not in self.ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.sizes = list(sizes)
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float).reshape(len(self.X), -1)
        if self.X.shape[1] != sizes[0] or self.y.shape[1] != sizes[-1]:
            raise ValueError("data shape does not match layer sizes")
        self.act, self.act_grad = self.ACTIVATIONS[activation]
        self.batch_size = batch_size
        self.layers = []
        offset = 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = slice(offset, offset + fan_in * fan_out)
            b = slice(w.stop, w.stop + fan_out)
            self.layers.append((w, b, fan_in, fan_out))
            offset = b.stop
        self.dim = offset
        # weight and bias of a layer form one model weight
        self.unit_sizes = [l[3] * (l[2] + 1) for l in self.layers]

    def init_weights(self, rng, w0=None):
        w = np.empty(self.dim)
        for ws, bs, fan_in, fan_out in self.layers:
            w[ws] = rng.standard_normal(fan_in * fan_out) / np.sqrt(fan_in)
            w[bs] = 0.0
        return w

    def _unpack(self, w, layer):
        ws, bs, fan_in, fan_out = layer
        return w[ws].reshape(fan_out, fan_in), w[bs]

    def _forward(self, w, X):
        acts, pre = [X], []
        a = X
        for k, layer in enumerate(self.layers):
            Wm, b = self._unpack(w, layer)
            z = a @ Wm.T + b
            pre.append(z)
            a = z if k == len(self.layers) - 1 else self.act(z)
            acts.append(a)
        return pre, acts

    def _batch(self, rng):
        if self.batch_size is None:
            return self.X, self.y
        idx = rng.integers(0, len(self.X), size=self.batch_size)
        return self.X[idx], self.y[idx]

    def grad(self, u_fwd, u_bkwd, rng, u_recomp=None):
        if u_fwd.shape != u_bkwd.shape or u_fwd.shape != (self.dim,):
            raise ValueError("weight vectors must both have shape (dim,)")
        X, y = self._batch(rng)
        pre, acts = self._forward(u_fwd, X)
        g = np.empty(self.dim)
        err = (acts[-1] - y) / len(X)
        for k in range(len(self.layers) - 1, -1, -1):
            ws, bs, _, _ = self.layers[k]
            g[ws] = (err.T @ acts[k]).ravel()
            g[bs] = err.sum(axis=0)
            if k:
                W_back, _ = self._unpack(u_bkwd, self.layers[k])
                err = (err @ W_back) * self.act_grad(pre[k - 1], acts[k])
        return g

    def loss(self, w):
        _, acts = self._forward(w, self.X)
        return 0.5 * float(np.mean(np.sum((acts[-1] - self.y) ** 2, axis=1)))
