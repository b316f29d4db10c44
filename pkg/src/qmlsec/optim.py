"""Adagrad, Adam and Nelder-Mead."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np


class Adagrad:
    def __init__(self, lr: float = 0.5, eps: float = 1e-10):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.lr = lr
        self.eps = eps
        self.acc = None

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        params = np.asarray(params, dtype=np.float64)
        grad = np.asarray(grad, dtype=np.float64)
        if params.shape != grad.shape:
            raise ValueError(f"shape mismatch {params.shape} vs {grad.shape}")
        if self.acc is None:
            self.acc = np.zeros_like(params)
        self.acc = self.acc + grad ** 2
        return params - self.lr * grad / (np.sqrt(self.acc) + self.eps)


class Adam:
    def __init__(self, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, params, grad):
        params = np.asarray(params, dtype=np.float64)
        grad = np.asarray(grad, dtype=np.float64)
        if params.shape != grad.shape:
            raise ValueError(f"shape mismatch {params.shape} vs {grad.shape}")
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad ** 2
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class AdamTree:
    """Adam over a list of arrays (layer weights), one moment pair per array."""

    def __init__(self, shapes, **kw):
        self._opts = [Adam(**kw) for _ in shapes]

    def step(self, params: list, grads: list) -> list:
        if len(params) != len(grads):
            raise ValueError("length mismatch")
        return [opt.step(p.ravel(), g.ravel()).reshape(p.shape)
                for opt, p, g in zip(self._opts, params, grads)]


def make_optimizer(name: str, lr: float):
    if name == "adagrad":
        return Adagrad(lr)
    if name == "adam":
        return Adam(lr)
    raise ValueError(f"no gradient optimizer named {name!r}")


@dataclass
class NelderMeadConfig:
    max_iter: int = 2000
    tol: float = 1e-10
    initial_step: float = 0.1
    alpha: float = 1.0   # reflection
    gamma: float = 2.0   # expansion
    rho: float = 0.5     # contraction
    sigma: float = 0.5   # shrink


def nelder_mead_minimize(objective: Callable[[np.ndarray], float], x0, config: NelderMeadConfig | None = None):
    """Downhill simplex.  Stops when both the simplex diameter and the spread of
    objective values fall below ``config.tol``, or after ``max_iter`` iterations.

    Returns ``(best_point, best_value, iterations)``.
    """
    cfg = config or NelderMeadConfig()
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    n = x0.size

    def f(x):
        v = float(objective(x))
        if not math.isfinite(v):
            raise ValueError(f"objective is not finite at {x}")
        return v

    simplex = [x0.copy()]
    for i in range(n):
        x = x0.copy()
        x[i] += cfg.initial_step if x[i] == 0 else cfg.initial_step * max(1.0, abs(x[i]))
        simplex.append(x)
    simplex = np.array(simplex)
    values = np.array([f(x) for x in simplex])

    it = 0
    while it < cfg.max_iter:
        order = np.argsort(values, kind="stable")
        simplex, values = simplex[order], values[order]
        diameter = np.max(np.abs(simplex[1:] - simplex[0]))
        if diameter < cfg.tol and values[-1] - values[0] < cfg.tol:
            break
        it += 1
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + cfg.alpha * (centroid - worst)
        fr = f(xr)
        if values[0] <= fr < values[-2]:
            simplex[-1], values[-1] = xr, fr
        elif fr < values[0]:
            xe = centroid + cfg.gamma * (xr - centroid)
            fe = f(xe)
            if fe < fr:
                simplex[-1], values[-1] = xe, fe
            else:
                simplex[-1], values[-1] = xr, fr
        else:
            if fr < values[-1]:
                xc = centroid + cfg.rho * (xr - centroid)
                fc = f(xc)
                accept = fc <= fr
            else:
                xc = centroid + cfg.rho * (worst - centroid)
                fc = f(xc)
                accept = fc < values[-1]
            if accept:
                simplex[-1], values[-1] = xc, fc
            else:
                best = simplex[0]
                simplex[1:] = best + cfg.sigma * (simplex[1:] - best)
                values[1:] = [f(x) for x in simplex[1:]]
    i = int(np.argmin(values))
    return simplex[i].copy(), float(values[i]), it
