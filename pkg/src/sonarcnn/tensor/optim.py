from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Hashable

import numpy as np


@dataclass
class AdamState:
    """Moment accumulators for a set of named parameters.

    Defaults follow the Keras 2.3 optimizer (epsilon 1e-7).
    """

    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    step: int = 0
    m: Dict[Hashable, np.ndarray] = field(default_factory=dict)
    v: Dict[Hashable, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "AdamState":
        return AdamState(self.learning_rate, self.beta1, self.beta2, self.epsilon, self.step,
                         {k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()})


def adam_update(state: AdamState, params: Dict[Hashable, np.ndarray], grads: Dict[Hashable, np.ndarray]):
    """One bias-corrected Adam step.

    Returns ``(new_params, new_state)``; neither argument is modified.
    """
    new = state.copy()
    new.step += 1
    t = new.step
    b1, b2 = new.beta1, new.beta2
    out = {}
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {key!r} has shape {g.shape}, parameter has {p.shape}")
        m = new.m.get(key)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        else:
            v = new.v[key]
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        out[key] = (p - new.learning_rate * m_hat / (np.sqrt(v_hat) + new.epsilon)).astype(p.dtype, copy=False)
        new.m[key] = m.astype(p.dtype, copy=False)
        new.v[key] = v.astype(p.dtype, copy=False)
    return out, new
