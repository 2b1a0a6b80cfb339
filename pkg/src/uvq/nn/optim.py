"""Adam and Adamax over dicts of numpy arrays, plus a cosine learning-rate schedule."""
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.state = OptimizerState(lr, beta1, beta2, eps)

    def update(self, params, grads, lr=None):
        """Return updated copies of ``params`` (dict name -> array)."""
        st = self.state
        st.step += 1
        lr = st.lr if lr is None else lr
        out = {}
        for key, p in params.items():
            g = grads.get(key)
            if g is None:
                out[key] = p
                continue
            m = st.m.get(key, np.zeros_like(p))
            v = st.v.get(key, np.zeros_like(p))
            m = st.beta1 * m + (1 - st.beta1) * g
            v = st.beta2 * v + (1 - st.beta2) * g * g
            st.m[key], st.v[key] = m, v
            mhat = m / (1 - st.beta1 ** st.step)
            vhat = v / (1 - st.beta2 ** st.step)
            out[key] = p - lr * mhat / (np.sqrt(vhat) + st.eps)
        return out


class Adamax:
    """Infinity-norm variant of Adam."""

    def __init__(self, lr=0.3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.state = OptimizerState(lr, beta1, beta2, eps)

    def update(self, params, grads, lr=None):
        st = self.state
        st.step += 1
        lr = st.lr if lr is None else lr
        out = {}
        for key, p in params.items():
            g = grads[key]
            m = st.m.get(key, np.zeros_like(p))
            u = st.v.get(key, np.zeros_like(p))
            m = st.beta1 * m + (1 - st.beta1) * g
            u = np.maximum(st.beta2 * u, np.abs(g))
            st.m[key], st.v[key] = m, u
            out[key] = p - (lr / (1 - st.beta1 ** st.step)) * m / (u + st.eps)
        return out


def cosine_lr(base_lr, step, total_steps):
    if total_steps <= 0:
        return base_lr
    t = min(step, total_steps) / total_steps
    return 0.5 * base_lr * (1 + math.cos(math.pi * t))
