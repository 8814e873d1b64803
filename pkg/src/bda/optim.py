"""Adam with bias correction."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, config):
    """Update ``params`` (name -> array) in place from ``grads``; returns ``state``.

    Moments are kept per name and created as zeros on first sight.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name}")
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
    state.t += 1
    c = config
    bc1 = 1.0 - c.beta1 ** state.t
    bc2 = 1.0 - c.beta2 ** state.t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= c.beta1
        m += (1 - c.beta1) * g
        v *= c.beta2
        v += (1 - c.beta2) * (g * g)
        p -= (c.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)).astype(p.dtype)
    return state


class Adam:
    """Thin wrapper binding a model's parameter tensors to :func:`adam_step`."""

    def __init__(self, named_tensors, config):
        self.tensors = dict(named_tensors)
        self.config = config
        self.state = AdamState()

    def step(self, grads):
        """``grads`` maps tensor -> gradient array (as returned by ``Tape.backward``)."""
        params = {n: t.data for n, t in self.tensors.items()}
        named = {n: grads[t] for n, t in self.tensors.items() if t in grads}
        adam_step(params, named, self.state, self.config)
