"""In-place SGD and Adam updates. State lives in ``store.state``."""
from __future__ import annotations

import numpy as np

from .params import ParameterStore


def _grads_for(store: ParameterStore, grads):
    if grads is None:
        grads = store.grads()
    for name, t in store.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(t.data)
        yield name, t, g


def sgd_step(store: ParameterStore, lr: float, momentum: float = 0.0, grads=None) -> None:
    for name, t, g in _grads_for(store, grads):
        if momentum:
            key = f"sgd/velocity/{name}"
            vel = store.state.get(key)
            if vel is None:
                vel = np.zeros_like(t.data)
            vel = momentum * vel + g
            store.state[key] = vel
            step = vel
        else:
            step = g
        t.data -= (lr * step).astype(t.dtype)
    store.bump()


def adam_step(store: ParameterStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, grads=None) -> None:
    step_no = store.state.get("adam/t", np.zeros((), dtype=np.float64)) + 1
    store.state["adam/t"] = np.asarray(step_no, dtype=np.float64)
    t_ = float(step_no)
    c1 = 1.0 - beta1 ** t_
    c2 = 1.0 - beta2 ** t_
    for name, p, g in _grads_for(store, grads):
        mk, vk = f"adam/m/{name}", f"adam/v/{name}"
        m = store.state.get(mk)
        v = store.state.get(vk)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * (g * g)
        store.state[mk] = m.astype(p.dtype)
        store.state[vk] = v.astype(p.dtype)
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data -= update.astype(p.dtype)
    store.bump()
