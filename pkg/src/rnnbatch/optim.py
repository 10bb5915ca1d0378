"""Adam with bias correction, defaults matching torch.optim.Adam except lr."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .gru import GruModel


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "AdamState":
        return AdamState(self.lr, self.beta1, self.beta2, self.eps, self.t,
                         {k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """Update ``params`` in place and advance ``state``."""
    if state.t < 0:
        raise ConfigError(f"Adam step counter must be non-negative, got {state.t}")
    if params.keys() != grads.keys():
        raise ConfigError(f"parameter/gradient names differ: {sorted(params)} vs {sorted(grads)}")
    for k, p in params.items():
        if grads[k].shape != p.shape:
            raise ConfigError(f"gradient for {k} has shape {grads[k].shape}, parameter has {p.shape}")
        if k in state.m and state.m[k].shape != p.shape:
            raise ConfigError(f"optimizer state for {k} has shape {state.m[k].shape}")

    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for k, p in params.items():
        g = grads[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


class Adam:
    """Thin wrapper binding an :class:`AdamState` to a model."""

    def __init__(self, model: GruModel, lr: float = 0.01, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.model = model
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self, grads: GruModel) -> None:
        adam_step(self.model.params(), grads.params(), self.state)
