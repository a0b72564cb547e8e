"""Parameter update rules shared by the trainable modules."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    """First/second moment accumulators for adaptive per-parameter scaling."""

    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)
    step: int = 0


def adam_init(params) -> AdamState:
    state = AdamState()
    for name, value in params.items():
        state.first[name] = np.zeros_like(value)
        state.second[name] = np.zeros_like(value)
    return state


def adam_update(params, grads, state, learning_rate,
                beta1=0.9, beta2=0.999, eps=1e-8):
    """One in-place update of ``params`` from ``grads``.

    A parameter with an exactly zero gradient is left untouched (its moments
    stay zero), so parameters outside the gradient path never drift.
    """
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for name, g in grads.items():
        m = state.first[name]
        v = state.second[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        params[name] -= learning_rate * (m / bc1) / (np.sqrt(v / bc2) + eps)


def sgd_update(params, grads, learning_rate):
    for name, g in grads.items():
        params[name] -= learning_rate * g
