"""Toy selector-conditioned top-down pose network.

Layout (default 64x64 input, heatmaps at 1/4 resolution)::

    stem   4 x [conv3x3 stride 2 + relu]                  64 -> 4
    mid    2 x [conv3x3 + relu (+ modulation block)]
    up     2 x [nearest x2 + conv3x3 + relu]               4 -> 16
    head   conv1x1 -> K                  (two_heads: 2 x [conv3x3 + relu + conv1x1])

Everything before the first selector-dependent layer is the *stem* (for the
modulated variant: up to and including the conv of the first mid stage); its
output can be cached and reused for every selector value.
"""
from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn_core as nn
from .heatmap_codec import HeatmapSet
from .mimb import MimbConfig, MimbParams, mimb_forward
from .nn_core import ParameterStore, Tensor
from .target_assignment import InstanceSelector, as_selector

VARIANTS = ("mipnet", "baseline_n1", "two_heads")
TWO_HEAD_WIDTHS = {"light": 16, "heavy": 64}


class StaleCacheError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_size: tuple[int, int] = (64, 64)
    K: int = 5
    N: int = 2
    stem_widths: tuple[int, ...] = (32, 64, 128, 128)
    mid_widths: tuple[int, ...] = (64, 64)
    up_widths: tuple[int, ...] = (16, 16)
    mimb_stage_indices: tuple[int, ...] = (0, 1)
    reduction: int = 4
    variant: str = "mipnet"
    two_heads_capacity: str = "light"
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("input_size", "stem_widths", "mid_widths", "up_widths", "mimb_stage_indices"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.N < 1 or self.K < 1:
            raise ValueError("N and K must be >= 1")
        if self.variant == "baseline_n1" and self.N != 1:
            raise ValueError(f"baseline_n1 requires N=1, got N={self.N}")
        if self.variant == "two_heads" and self.N != 2:
            raise ValueError(f"two_heads requires N=2, got N={self.N}")
        if self.two_heads_capacity not in TWO_HEAD_WIDTHS:
            raise ValueError(f"two_heads_capacity must be one of {tuple(TWO_HEAD_WIDTHS)}")
        if any(i < 0 or i >= len(self.mid_widths) for i in self.mimb_stage_indices):
            raise ValueError(f"mimb_stage_indices {self.mimb_stage_indices} outside mid stages")
        H, W = self.input_size
        factor = 2 ** len(self.stem_widths) // 2 ** len(self.up_widths)
        if factor != 4 or H % 2 ** len(self.stem_widths) or W % 2 ** len(self.stem_widths):
            raise ValueError("stem/up stage counts must give heatmaps at 1/4 input resolution")

    @property
    def heatmap_size(self) -> tuple[int, int]:
        return (self.input_size[0] // 4, self.input_size[1] // 4)

    @property
    def uses_mimb(self) -> bool:
        return self.variant == "mipnet" and len(self.mimb_stage_indices) > 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in names})


@dataclass
class StemCache:
    features: Tensor
    version: int
    model_id: int = field(repr=False, default=0)


class PoseNet:
    def __init__(self, config: ModelConfig):
        self.config = config
        self.store = ParameterStore(np.dtype(config.dtype))
        self.bypass_gates = False
        self.stem_calls = 0
        rng = np.random.default_rng(config.seed)
        self._convs: dict[str, tuple[Tensor, Tensor]] = {}
        self.mimbs: dict[int, MimbParams] = {}

        c_in = 3
        for i, c in enumerate(config.stem_widths):
            self._add_conv(f"stem.{i}", 3, c_in, c, rng)
            c_in = c
        for i, c in enumerate(config.mid_widths):
            self._add_conv(f"mid.{i}", 3, c_in, c, rng)
            c_in = c
            if config.uses_mimb and i in config.mimb_stage_indices:
                self.mimbs[i] = MimbParams.create(
                    self.store, f"mid.{i}.mimb", MimbConfig(c, config.reduction, config.N), rng)
        for i, c in enumerate(config.up_widths):
            self._add_conv(f"up.{i}", 3, c_in, c, rng)
            c_in = c
        if config.variant == "two_heads":
            hw = TWO_HEAD_WIDTHS[config.two_heads_capacity]
            for h in range(2):
                self._add_conv(f"head{h}.conv", 3, c_in, hw, rng)
                self._add_conv(f"head{h}.out", 1, hw, config.K, rng)
        else:
            self._add_conv("head.out", 1, c_in, config.K, rng)

    def _add_conv(self, name, k, cin, cout, rng):
        w = self.store.add(f"{name}.weight", nn.he_uniform(rng, (k, k, cin, cout), k * k * cin))
        b = self.store.add(f"{name}.bias", np.zeros(cout))
        self._convs[name] = (w, b)

    def _conv(self, name, x, stride=1, relu=True):
        w, b = self._convs[name]
        pad = w.shape[0] // 2
        y = nn.conv2d(x, w, b, stride=stride, padding=pad)
        return nn.relu(y) if relu else y

    @property
    def N(self) -> int:
        return self.config.N

    def param_count(self) -> int:
        return self.store.count()

    def mimb_param_count(self) -> int:
        return sum(m.count() for m in self.mimbs.values())

    # -- forward pieces ----------------------------------------------------

    def _prepare(self, x) -> Tensor:
        arr = x.data if isinstance(x, Tensor) else np.asarray(x)
        if arr.ndim == 3:
            arr = arr[None]
        H, W = self.config.input_size
        if arr.ndim != 4 or arr.shape[1:] != (H, W, 3):
            raise nn.ShapeError(f"input must be (B,{H},{W},3), got {arr.shape}")
        return Tensor(arr.astype(self.store.dtype, copy=False))

    def _stem(self, x: Tensor) -> Tensor:
        self.stem_calls += 1
        cfg = self.config
        for i in range(len(cfg.stem_widths)):
            x = self._conv(f"stem.{i}", x, stride=2)
        if cfg.variant == "two_heads":
            return self._trunk(x, None, 0)
        # The first mid conv precedes the first modulation block; cache after it.
        return self._conv("mid.0", x)

    def _trunk(self, x: Tensor, selector, start: int) -> Tensor:
        cfg = self.config
        for i in range(len(cfg.mid_widths)):
            if i >= start:
                x = self._conv(f"mid.{i}", x)
            if i in self.mimbs:
                x = mimb_forward(x, selector, self.mimbs[i], bypass_gates=self.bypass_gates)
        for i in range(len(cfg.up_widths)):
            x = nn.upsample_nearest(x, 2)
            x = self._conv(f"up.{i}", x)
        return x

    def _head(self, x: Tensor, selector) -> Tensor:
        cfg = self.config
        if cfg.variant != "two_heads":
            x = self._trunk(x, selector, 1)
            return self._conv("head.out", x, relu=False)
        sel = selector
        if isinstance(sel, np.ndarray) and sel.ndim == 2:
            weights = sel
        else:
            weights = np.broadcast_to(as_selector(sel, 2).weights, (x.shape[0], 2))
        outs = []
        for h in range(2):
            y = self._conv(f"head{h}.conv", x)
            outs.append(self._conv(f"head{h}.out", y, relu=False))
        # Hard selectors pick a head outright; soft ones blend the two outputs.
        if np.all(weights[:, 0] == 1.0):
            return outs[0]
        if np.all(weights[:, 1] == 1.0):
            return outs[1]
        w = weights.astype(self.store.dtype)
        return nn.add(nn.mul(outs[0], w[:, :1]), nn.mul(outs[1], w[:, 1:]))

    def _check_selector(self, selector):
        if isinstance(selector, np.ndarray) and selector.ndim == 2:
            return selector
        return as_selector(selector, self.N)

    # -- public API --------------------------------------------------------

    def forward(self, x, selector=0) -> Tensor:
        """Heatmaps ``(B, H/4, W/4, K)`` for input ``x`` and one selector."""
        selector = self._check_selector(selector)
        return self._head(self._stem(self._prepare(x)), selector)

    def make_cache(self, x) -> StemCache:
        return StemCache(self._stem(self._prepare(x)), self.store.version, id(self))

    def forward_cached(self, cache: StemCache, selector=0) -> Tensor:
        if cache.version != self.store.version or cache.model_id != id(self):
            raise StaleCacheError("stem cache was built from different weights")
        return self._head(cache.features, self._check_selector(selector))

    def forward_slots(self, x, n_slots: int | None = None) -> list[Tensor]:
        """One stem pass, then the head for every hard selector (training path)."""
        n_slots = self.N if n_slots is None else n_slots
        feats = self._stem(self._prepare(x))
        return [self._head(feats, InstanceSelector.hard(i, self.N)) for i in range(n_slots)]

    def predict(self, x, selector=0) -> np.ndarray:
        with nn.no_grad():
            return self.forward(x, selector).data

    def _sweep_rows(self, cache: StemCache, rows: np.ndarray) -> np.ndarray:
        """Head outputs for every (input, selector row) pair in one batched pass.

        Returns ``(B, S, H', W', K)`` for ``S`` selector rows. Batching the rows
        pays the per-layer overhead once instead of once per selector.
        """
        if cache.version != self.store.version or cache.model_id != id(self):
            raise StaleCacheError("stem cache was built from different weights")
        feats = cache.features.data
        B, S = feats.shape[0], len(rows)
        tiled = Tensor(np.repeat(feats, S, axis=0))
        sel = np.tile(np.asarray(rows, dtype=np.float64), (B, 1))
        with nn.no_grad():
            out = self._head(tiled, sel).data
        return out.reshape(B, S, *out.shape[1:])

    def sweep(self, x, N: int | None = None) -> list[HeatmapSet]:
        """Heatmaps for selectors ``0 .. N-1`` from a single stem pass (one input image)."""
        out = self.sweep_batch(x, N)
        if out.shape[0] != 1:
            raise nn.ShapeError("sweep expects a single input image; use sweep_batch")
        return [HeatmapSet(h) for h in out[0]]

    def sweep_batch(self, x, N: int | None = None) -> np.ndarray:
        """Batched sweep: ``(B, N, H', W', K)``."""
        N = self.N if N is None else N
        if not 1 <= N <= self.N:
            raise ValueError(f"sweep over {N} selectors, model has {self.N} slots")
        with nn.no_grad():
            cache = self.make_cache(x)
        return self._sweep_rows(cache, np.eye(N, self.N))

    def continuous_sweep(self, x, steps: int) -> list[HeatmapSet]:
        """Heatmaps for soft selectors ``[1-t, t]``, ``t`` evenly spaced over [0, 1]."""
        if self.N != 2:
            raise ValueError(f"continuous_sweep needs N=2, model has N={self.N}")
        if steps < 2:
            raise ValueError("steps must be >= 2")
        ts = [i / (steps - 1) for i in range(steps)]
        with nn.no_grad():
            cache = self.make_cache(x)
        if cache.features.shape[0] != 1:
            raise nn.ShapeError("continuous_sweep expects a single input image")
        # Rows go through in pairs so that the (t=0, t=1) pair forms exactly the
        # batch a hard sweep computes; BLAS results can depend on batch shape.
        order = [0, steps - 1] + list(range(1, steps - 1))
        if len(order) % 2:
            order.append(order[-1])
        outs = {}
        for a, b in zip(order[::2], order[1::2]):
            rows = np.array([[1.0 - ts[a], ts[a]], [1.0 - ts[b], ts[b]]])
            pair = self._sweep_rows(cache, rows)[0]
            outs[a], outs[b] = pair[0], pair[1]
        return [HeatmapSet(outs[i]) for i in range(steps)]

    # -- persistence -------------------------------------------------------

    def state_tensors(self, include_optimizer: bool = True) -> dict[str, np.ndarray]:
        out = {f"param/{n}": t.data for n, t in self.store.items()}
        if include_optimizer:
            out.update({f"state/{k}": v for k, v in self.store.state.items()})
        return out

    def save(self, path, meta: dict | None = None, include_optimizer: bool = True) -> None:
        header = {"model_config": self.config.to_dict()}
        header.update(meta or {})
        nn.write_checkpoint(path, self.state_tensors(include_optimizer), header)

    @classmethod
    def load(cls, path) -> tuple["PoseNet", dict]:
        tensors, meta = nn.read_checkpoint(path)
        model = cls(ModelConfig.from_dict(meta["model_config"]))
        params = {k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")}
        model.store.load(params)
        model.store.state.clear()
        for k, v in tensors.items():
            if k.startswith("state/"):
                model.store.state[k[len("state/"):]] = v.copy()
        return model, meta


def build(config: ModelConfig) -> PoseNet:
    return PoseNet(config)


def param_count(config: ModelConfig) -> int:
    return PoseNet(config).param_count()


def time_forward(fn, repeats: int) -> float:
    """Median wall time of ``fn()`` in milliseconds."""
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t0) * 1e3)
    return float(np.median(samples))


def config_json(config: ModelConfig) -> str:
    return json.dumps(config.to_dict(), sort_keys=True)
