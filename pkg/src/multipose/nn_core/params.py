from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from .tensor import Tensor


class ParameterStore:
    """Named trainable tensors in insertion order, plus optimizer state.

    ``version`` increments on every in-place update so cached activations can
    detect that the weights they were computed from have changed.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: OrderedDict[str, Tensor] = OrderedDict()
        self.state: OrderedDict[str, np.ndarray] = OrderedDict()
        self.version = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def count(self, prefix: str = "") -> int:
        return int(sum(t.size for n, t in self._params.items() if n.startswith(prefix)))

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {n: t.grad for n, t in self._params.items()}

    def bump(self) -> None:
        self.version += 1

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def load(self, values: dict[str, np.ndarray], strict: bool = True) -> None:
        if strict and set(values) != set(self._params):
            missing = set(self._params) - set(values)
            extra = set(values) - set(self._params)
            raise KeyError(f"parameter mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for n, v in values.items():
            t = self._params[n]
            if v.shape != t.shape:
                raise ValueError(f"{n}: shape {v.shape} != {t.shape}")
            t.data = np.array(v, dtype=self.dtype)
        self.bump()

    def astype(self, dtype) -> None:
        """Switch every parameter (and optimizer state) to ``dtype`` in place."""
        self.dtype = np.dtype(dtype)
        for t in self._params.values():
            t.data = t.data.astype(self.dtype)
            t.grad = None
        for k, v in self.state.items():
            self.state[k] = v.astype(self.dtype)
        self.bump()


def he_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)
