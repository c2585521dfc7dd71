"""Gradient step rules shared by the SENSOR and CARS trainers."""

from __future__ import annotations

import numpy as np

Params = dict[str, np.ndarray]


class TrainingDivergence(RuntimeError):
    """The objective became non-finite; ``trace`` holds the losses seen so far."""

    def __init__(self, message: str, trace: list[float]):
        super().__init__(message)
        self.trace = list(trace)


class Optimizer:
    """Plain gradient descent by default; ``momentum`` and ``adam`` are opt-in.

    Updates are applied in place on the arrays of ``params``.
    """

    def __init__(
        self,
        kind: str = "sgd",
        lr: float = 1e-3,
        momentum: float = 0.9,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        clip_norm: float | None = None,
    ):
        if kind not in ("sgd", "momentum", "adam"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.kind = kind
        self.lr = lr
        self.momentum = momentum
        self.betas = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self._state: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self._step = 0

    def step(self, params: Params, grads: Params) -> None:
        self._step += 1
        scale = 1.0
        if self.clip_norm is not None:
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
        b1, b2 = self.betas
        for name in params:
            g = grads[name] * scale
            if self.kind == "sgd":
                params[name] -= self.lr * g
            elif self.kind == "momentum":
                buf, _ = self._state.get(name, (np.zeros_like(g), None))
                buf = self.momentum * buf + g
                self._state[name] = (buf, None)
                params[name] -= self.lr * buf
            else:
                m, v = self._state.get(name, (np.zeros_like(g), np.zeros_like(g)))
                m = b1 * m + (1 - b1) * g
                v = b2 * v + (1 - b2) * g * g
                self._state[name] = (m, v)
                m_hat = m / (1 - b1**self._step)
                v_hat = v / (1 - b2**self._step)
                params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
