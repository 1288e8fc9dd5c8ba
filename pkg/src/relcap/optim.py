"""Adam, global-norm clipping and the learning-rate schedules."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .numcore import ParamStore

XE_LR = 2e-4
SCST_LR = 1e-4
SCST_DECAY = 0.1
SCST_DECAY_EPOCHS = 50.0


def lr_schedule(phase: str, epoch: float, base: float | None = None,
                decay_epochs: float = SCST_DECAY_EPOCHS) -> float:
    """XE: constant. SCST: ``base * 0.1 ** (epoch / decay_epochs)``, continuous."""
    if epoch < 0:
        raise ContractError("epoch must be >= 0")
    phase = phase.upper()
    if phase == "XE":
        return XE_LR if base is None else base
    if phase == "SCST":
        base = SCST_LR if base is None else base
        return base * SCST_DECAY ** (epoch / decay_epochs)
    raise ContractError(f"unknown training phase {phase!r}")


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """In-place bias-corrected Adam update of every array in ``params``."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ContractError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def clip_global_norm(grads: dict, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm


class Adam:
    """Adam over (a subset of) a ParamStore's entries."""

    def __init__(self, store: ParamStore, lr: float, names=None,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.store = store
        self.lr = lr
        self.names = list(store.names() if names is None else names)
        self.betas = betas
        self.eps = eps
        self.state = AdamState()

    def step(self, lr: float | None = None, clip_norm: float | None = None) -> float:
        grads = {n: self.store.grads[n] for n in self.names}
        norm = clip_global_norm(grads, clip_norm) if clip_norm else 0.0
        params = {n: self.store.values[n] for n in self.names}
        adam_step(params, grads, self.state, self.lr if lr is None else lr,
                  *self.betas, self.eps)
        return norm
