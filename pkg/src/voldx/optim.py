"""Rectified Adam and the cosine annealing schedule, from their update rules.

RAdam keeps Adam's exponential moments but rectifies the adaptive step: the
variance of the adaptive learning rate is only defined once the approximated
SMA length rho_t exceeds 4; before that the update falls back to plain
bias-corrected momentum. With beta2 = 0.999 the rectified branch first
activates at t = 5 (rho_1 = 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteGradient, ShapeMismatch, StepOutOfRange


@dataclass
class ScheduleSpec:
    lr0: float = 5e-4
    eta_min: float = 0.0
    total_steps: int = 100

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if not 0 <= self.eta_min <= self.lr0:
            raise ValueError("need 0 <= eta_min <= lr0")


def cosine_lr(t: int, spec: ScheduleSpec) -> float:
    """eta_min + (lr0 - eta_min) * (1 + cos(pi * t / T)) / 2 for t in [0, T]."""
    if t < 0 or t > spec.total_steps:
        raise StepOutOfRange(f"step {t} outside [0, {spec.total_steps}]")
    return spec.eta_min + (spec.lr0 - spec.eta_min) * (
        1.0 + math.cos(math.pi * t / spec.total_steps)
    ) / 2.0


def radam_rho(t: int, beta2: float) -> float:
    """Approximated SMA length rho_t = rho_inf - 2 t beta2^t / (1 - beta2^t)."""
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    b2t = beta2 ** t
    return rho_inf - 2.0 * t * b2t / (1.0 - b2t)


@dataclass
class RAdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict, **kwargs) -> "RAdamState":
        state = cls(**kwargs)
        for name, arr in params.items():
            state.m[name] = np.zeros_like(arr)
            state.v[name] = np.zeros_like(arr)
        return state


def radam_step(params: dict, grads: dict, state: RAdamState, lr: float) -> None:
    """One atomic RAdam update; parameters and moments change in place."""
    if set(grads) != set(params):
        raise ShapeMismatch("gradient names do not match parameter names")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ShapeMismatch(
                f"{name}: gradient shape {g.shape} != parameter {params[name].shape}"
            )
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name}")

    state.t += 1
    t = state.t
    beta1, beta2 = state.beta1, state.beta2
    bias1 = 1.0 - beta1 ** t
    bias2 = 1.0 - beta2 ** t
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    rho_t = radam_rho(t, beta2)
    rectified = rho_t > 4.0
    if rectified:
        r_t = math.sqrt(
            ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
            / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)
        )

    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        m_hat = m / bias1
        if rectified:
            denom = np.sqrt(v / bias2) + state.eps
            params[name] -= (lr * r_t) * m_hat / denom
        else:
            params[name] -= lr * m_hat
