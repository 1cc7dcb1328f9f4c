"""Train and evaluate several model variants under one data/seed/budget."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping

from ..model import ModelConfig, PoseNet
from ..synth_data import Dataset, extract_samples, stack_samples
from .evaluation import EvalReport, evaluate, write_predictions
from .inference import predict_dataset
from .nms import DEFAULT_NMS_THRESHOLD
from .training import TrainConfig, TrainResult, train

log = logging.getLogger(__name__)

# name -> (variant, N)
DEFAULT_CONFIGS: dict[str, tuple[str, int]] = {
    "baseline_n1": ("baseline_n1", 1),
    "mipnet_n2": ("mipnet", 2),
    "mipnet_n3": ("mipnet", 3),
    "two_heads": ("two_heads", 2),
}


class BenchmarkError(RuntimeError):
    pass


@dataclass
class ConfigResult:
    name: str
    model_config: ModelConfig
    params: int
    report: EvalReport
    train: TrainResult
    ms_per_image: float
    model: PoseNet = field(repr=False)


@dataclass
class BenchmarkResult:
    rows: dict[str, ConfigResult]
    out_dir: Path | None

    def ap(self, name: str, difficulty: str | None = None) -> float:
        r = self.rows[name].report
        return r.ap if difficulty is None else r.per_difficulty[difficulty].ap


def model_config_for(name: str, configs: Mapping[str, tuple[str, int]], base: ModelConfig) -> ModelConfig:
    variant, n = configs[name]
    return replace(base, variant=variant, N=n)


def comparison_rows(rows: Mapping[str, ConfigResult]) -> tuple[list[str], list[list[str]]]:
    """Deterministic table: accuracy and parameter counts, no wall-clock values."""
    diffs = sorted({d for r in rows.values() for d in r.report.per_difficulty})
    header = ["config", "variant", "N", "params", "AP", "AP50", "AP75", "AR"]
    header += [f"AP_{d}" for d in diffs]
    header += ["final_train_loss", "final_val_loss"]
    out = []
    for name, r in rows.items():
        rep = r.report
        val = r.train.final("val")
        out.append([name, r.model_config.variant, str(r.model_config.N), str(r.params),
                    *(f"{100 * v:.4f}" for v in (rep.ap, rep.ap50, rep.ap75, rep.ar)),
                    *(f"{100 * rep.per_difficulty[d].ap:.4f}" if d in rep.per_difficulty else "" for d in diffs),
                    f"{r.train.final('train'):.8f}", "" if val is None else f"{val:.8f}"])
    return header, out


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def summary_text(result: BenchmarkResult) -> str:
    lines = [f"{'config':<14}{'params':>9}{'AP':>8}{'AP50':>8}{'AP75':>8}{'ms/img':>9}{'train s':>9}"]
    for name, r in result.rows.items():
        rep = r.report
        lines.append(f"{name:<14}{r.params:>9d}{100 * rep.ap:8.2f}{100 * rep.ap50:8.2f}"
                     f"{100 * rep.ap75:8.2f}{r.ms_per_image:9.2f}{r.train.seconds:9.1f}")
    for name, r in result.rows.items():
        lines.append("")
        lines.append(f"[{name}]")
        lines.append(r.report.table())
    return "\n".join(lines) + "\n"


def run_benchmark(dataset: Dataset, train_config: TrainConfig, out_dir=None,
                  configs: Mapping[str, tuple[str, int]] | None = None,
                  base_model: ModelConfig | None = None,
                  nms_threshold: float = DEFAULT_NMS_THRESHOLD,
                  eval_split: str = "test",
                  progress: Callable[[str, int, list], None] | None = None,
                  plots: bool = True) -> BenchmarkResult:
    """Train every config on the train split with the same seed and budget, then evaluate.

    Writes ``comparison.csv``, ``loss_curves.csv``, per-config checkpoints and
    predictions, ``summary.txt`` (including latency and training time) and
    plots into ``out_dir``. CSV files hold no timing so they are reproducible.
    """
    configs = dict(DEFAULT_CONFIGS if configs is None else configs)
    base_model = base_model or ModelConfig()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    has_val = bool(dataset.split("val"))
    rows: dict[str, ConfigResult] = {}
    for name in configs:
        mcfg = model_config_for(name, configs, base_model)
        tcfg = replace(train_config, N=mcfg.N)
        log.info("benchmark: training %s", name)
        try:
            data = stack_samples(extract_samples(dataset, mcfg.input_size, mcfg.N, split="train",
                                                 residual_mode=tcfg.residual_mode))
            val = (stack_samples(extract_samples(dataset, mcfg.input_size, mcfg.N, split="val",
                                                 residual_mode=tcfg.residual_mode)) if has_val else None)
            model = PoseNet(mcfg)
            cb = (lambda e, c, _n=name: progress(_n, e, c)) if progress else None
            tres = train(model, data, tcfg, val, None if out is None else out / name, progress=cb)
        except Exception as exc:  # noqa: BLE001 - reported per config
            raise BenchmarkError(f"config {name!r} failed to train: {exc}") from exc
        preds = predict_dataset(model, dataset, eval_split, mcfg.N, nms_threshold)
        report = evaluate(preds.poses, dataset, split=eval_split)
        if out is not None:
            write_predictions(preds.poses, out / name / "predictions.json")
        rows[name] = ConfigResult(name, mcfg, model.param_count(), report, tres, preds.ms_per_image, model)

    result = BenchmarkResult(rows, out)
    if out is not None:
        header, table = comparison_rows(rows)
        write_csv(out / "comparison.csv", header, table)
        write_csv(out / "loss_curves.csv", ["config", "epoch", "split", "loss"],
                  [[n, e, s, f"{v:.8f}"] for n, r in rows.items() for e, s, v in r.train.loss_curve])
        (out / "summary.txt").write_text(summary_text(result))
        (out / "timing.json").write_text(json.dumps(
            {n: {"ms_per_image": r.ms_per_image, "train_seconds": r.train.seconds}
             for n, r in rows.items()}, indent=1) + "\n")
        if plots:
            _emit_plots(result, out)
    return result


def _emit_plots(result: BenchmarkResult, out: Path) -> None:
    from ..plotting import plot_bars, plot_grouped_bars, plot_loss_curves

    rows = result.rows
    plot_loss_curves({n: r.train.loss_curve for n, r in rows.items()}, out / "loss_curves")
    ap = {n: {"all": 100 * r.report.ap,
              **{d: 100 * v.ap for d, v in r.report.per_difficulty.items()}} for n, r in rows.items()}
    plot_grouped_bars(ap, out / "ap_bars", "AP")
    plot_bars({n: r.ms_per_image for n, r in rows.items()}, out / "latency_bars", "ms / image")
