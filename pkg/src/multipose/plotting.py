"""Static line and bar charts for benchmark and sweep outputs."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
# Fixed salt: SVG element ids otherwise change on every save.
matplotlib.rcParams["svg.hashsalt"] = "multipose"
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

FORMATS = ("png", "svg")


def _save(fig, path_stem, formats=FORMATS) -> list[Path]:
    stem = Path(path_stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    paths = []
    for fmt in formats:
        p = stem.with_suffix(f".{fmt}")
        meta = {"Date": None} if fmt == "svg" else {}
        fig.savefig(p, dpi=100, bbox_inches="tight", metadata=meta)
        paths.append(p)
    plt.close(fig)
    return paths


def plot_loss_curves(curves: Mapping[str, Sequence[tuple]], path_stem, formats=FORMATS) -> list[Path]:
    """``curves`` maps a run name to ``(epoch, split, loss)`` rows."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, rows in curves.items():
        for split, style in (("train", "-"), ("val", "--")):
            pts = [(e, v) for e, s, v in rows if s == split]
            if pts:
                e, v = zip(*pts)
                ax.plot(e, v, style, label=f"{name} ({split})")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    return _save(fig, path_stem, formats)


def plot_grouped_bars(values: Mapping[str, Mapping[str, float]], path_stem, ylabel: str,
                      formats=FORMATS) -> list[Path]:
    """Bars grouped by the outer key, one colour per inner key."""
    groups = list(values)
    series = sorted({k for v in values.values() for k in v})
    width = 0.8 / max(len(series), 1)
    fig, ax = plt.subplots(figsize=(max(5, 1.5 * len(groups)), 4))
    x = np.arange(len(groups))
    for i, s in enumerate(series):
        ax.bar(x + i * width - 0.4 + width / 2, [values[g].get(s, 0.0) for g in groups], width, label=s)
    ax.set_xticks(x)
    ax.set_xticklabels(groups, fontsize=8)
    ax.set_ylabel(ylabel)
    if len(series) > 1:
        ax.legend(fontsize=7)
    ax.grid(axis="y", alpha=0.3)
    return _save(fig, path_stem, formats)


def plot_bars(values: Mapping[str, float], path_stem, ylabel: str, formats=FORMATS) -> list[Path]:
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(values)), 4))
    ax.bar(list(values), list(values.values()), color="tab:blue")
    ax.set_ylabel(ylabel)
    ax.grid(axis="y", alpha=0.3)
    return _save(fig, path_stem, formats)


def plot_lambda_path(path: np.ndarray, image: np.ndarray | None, path_stem,
                     skeleton: Sequence[tuple[int, int]] = (), formats=FORMATS) -> list[Path]:
    """Keypoint trajectories ``(T, K, 2)`` over an optional crop image."""
    fig, ax = plt.subplots(figsize=(4, 4))
    if image is not None:
        ax.imshow(np.asarray(image)[..., 0] if np.ndim(image) == 3 else image, cmap="gray")
    T = len(path)
    colors = plt.cm.viridis(np.linspace(0, 1, T))
    for t in range(T):
        for a, b in skeleton:
            ax.plot(path[t, [a, b], 0] - 0.5, path[t, [a, b], 1] - 0.5, color=colors[t], lw=0.8)
    for k in range(path.shape[1]):
        ax.plot(path[:, k, 0] - 0.5, path[:, k, 1] - 0.5, "o-", ms=2, color="tab:red", lw=0.6)
    ax.set_axis_off()
    return _save(fig, path_stem, formats)
