"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import ops
from .tensor import Tensor, backward, no_grad


@dataclass(frozen=True)
class GradCheckResult:
    name: str
    max_rel_error: float
    checked: int
    passed: bool


def _min_relu_gap(f: Callable[[], Tensor]) -> float:
    ops._relu_monitor = []
    try:
        with no_grad():
            f()
        gaps = ops._relu_monitor
    finally:
        ops._relu_monitor = None
    return min(gaps) if gaps else np.inf


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    step: float = 1e-5,
    tolerance: float = 1e-4,
    abs_floor: float = 1e-6,
    kink_margin: float | None = None,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    max_retries: int = 50,
) -> dict[str, GradCheckResult]:
    """Compare backprop gradients of ``f()`` with central differences.

    ``f`` closes over the tensors in ``params`` and returns a scalar. The
    relative error per coordinate is ``|a - n| / max(|a|, |n|, abs_floor)``.
    Before checking, parameters are jittered until every relu input sits at
    least ``kink_margin`` (default ``100 * step``) away from zero, so that no
    finite-difference probe straddles a kink. ``max_coords`` caps the number
    of randomly chosen coordinates checked per parameter.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    margin = 100 * step if kink_margin is None else kink_margin
    for _ in range(max_retries):
        if _min_relu_gap(f) >= margin:
            break
        for t in params.values():
            t.data = t.data + rng.normal(0.0, 1e-2, size=t.shape).astype(t.dtype)
    else:
        raise RuntimeError("grad_check: could not move relu inputs away from the kink")

    for t in params.values():
        t.grad = None
    loss = f()
    backward(loss, params.values())
    analytic = {n: t.grad.copy() for n, t in params.items()}

    report = {}
    for name, t in params.items():
        t.data = np.ascontiguousarray(t.data)
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        a = analytic[name].reshape(-1)[idx]
        num = np.empty(len(idx))
        with no_grad():
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + step
                fp = float(f().data)
                flat[i] = orig - step
                fm = float(f().data)
                flat[i] = orig
                num[j] = (fp - fm) / (2 * step)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(num)), abs_floor)
        err = float(np.max(np.abs(a - num) / denom)) if len(idx) else 0.0
        report[name] = GradCheckResult(name, err, len(idx), err < tolerance)
    return report
