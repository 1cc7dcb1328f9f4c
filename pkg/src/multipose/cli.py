"""``multipose`` command line: data generation, training, evaluation, inference, benchmark.

Settings come from a JSON file of flat dotted keys (``"train.epochs": 5``)
overlaid by command-line flags. The resolved settings are written as
``run_config.json`` into every output directory.

Exit status: 0 on success, 1 on usage errors, 2 on runtime failures.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

VARIANT_FLAGS = {"mipnet": "mipnet", "baseline": "baseline_n1", "two-heads": "two_heads"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


# -- run configuration -------------------------------------------------------

def default_run_config() -> dict:
    """Every recognised dotted key with its default value."""
    from .model import ModelConfig
    from .synth_data import DatasetConfig
    from .train_eval import DEFAULT_NMS_THRESHOLD, TrainConfig

    cfg: dict = {}
    d = DatasetConfig()
    for split, n in d.splits.items():
        cfg[f"data.splits.{split}"] = n
    cfg["data.mix"] = "default"
    cfg["data.image_size"] = list(d.image_size)
    cfg["data.scale_range"] = list(d.scale_range)
    cfg["data.seed"] = d.seed
    cfg["data.image_format"] = d.image_format
    for f in dataclasses.fields(ModelConfig):
        if f.name not in ("N", "variant"):
            v = getattr(ModelConfig(), f.name)
            cfg[f"model.{f.name}"] = list(v) if isinstance(v, tuple) else v
    for f in dataclasses.fields(TrainConfig):
        if f.name != "N":
            v = getattr(TrainConfig(), f.name)
            cfg[f"train.{f.name}"] = list(v) if isinstance(v, tuple) else v
    cfg["eval.nms_threshold"] = DEFAULT_NMS_THRESHOLD
    cfg["eval.kappa"] = 0.08
    cfg["benchmark.configs"] = ["baseline_n1", "mipnet_n2", "mipnet_n3", "two_heads"]
    return cfg


def load_run_config(path: str | None, overrides: dict) -> dict:
    """Defaults, then the file, then flag overrides (last wins)."""
    cfg = default_run_config()
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise UsageError(f"config {path} must be a JSON object of dotted keys")
        unknown = sorted(set(raw) - set(cfg))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(raw)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg


def _section(cfg: dict, prefix: str) -> dict:
    return {k[len(prefix) + 1:]: v for k, v in cfg.items() if k.startswith(prefix + ".")}


def dataset_config(cfg: dict):
    from .synth_data import MIX_PRESETS, DatasetConfig

    d = _section(cfg, "data")
    splits = {k[len("splits."):]: int(v) for k, v in d.items() if k.startswith("splits.")}
    mix = d["mix"]
    if isinstance(mix, str):
        if mix not in MIX_PRESETS:
            raise UsageError(f"data.mix must be one of {sorted(MIX_PRESETS)} or a list, got {mix!r}")
        mix = MIX_PRESETS[mix]
    try:
        return DatasetConfig(splits=splits, mix=mix, image_size=d["image_size"],
                             scale_range=d["scale_range"], seed=int(d["seed"]),
                             image_format=d["image_format"])
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"invalid data config: {exc}") from exc


def model_config(cfg: dict, variant: str, N: int):
    from .model import ModelConfig

    try:
        return ModelConfig.from_dict({**_section(cfg, "model"), "variant": variant, "N": N})
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc


def train_config(cfg: dict, N: int):
    from .train_eval import TrainConfig

    try:
        return TrainConfig.from_dict({**_section(cfg, "train"), "N": N})
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc


def write_run_config(out_dir, cfg: dict, command: str, extra: dict | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, **(extra or {}), "settings": dict(sorted(cfg.items()))}
    (out / "run_config.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


# -- commands ------------------------------------------------------------------

def cmd_gen_data(args, cfg) -> int:
    from .synth_data import instance_histogram, make_dataset

    dcfg = dataset_config(cfg)
    ds = make_dataset(dcfg, args.out, workers=args.workers)
    write_run_config(args.out, cfg, "gen-data")
    hist = instance_histogram(ds)
    for split in sorted(dcfg.splits):
        print(f"{split}: {len(ds.split(split))} images; instances per box "
              + ", ".join(f"{b}={v:.3f}" for b, v in hist.get(split, {}).items()))
    return EXIT_OK


def _load_data(path):
    from .synth_data import load_dataset

    p = Path(path)
    if not (p / "manifest.json").is_file() and not (p.is_file() and p.suffix == ".json"):
        raise FileNotFoundError(f"no dataset manifest under {path}")
    return load_dataset(p)


def cmd_train(args, cfg) -> int:
    from .model import PoseNet
    from .synth_data import extract_samples, stack_samples
    from .train_eval import train

    variant = VARIANT_FLAGS[args.variant]
    N = args.n if args.n is not None else (1 if variant == "baseline_n1" else 2)
    if variant == "baseline_n1" and N != 1:
        raise UsageError(f"--variant baseline requires --n 1, got --n {N}")
    if variant == "two_heads" and N != 2:
        raise UsageError(f"--variant two-heads requires --n 2, got --n {N}")
    mcfg = model_config(cfg, variant, N)
    tcfg = train_config(cfg, N)
    ds = _load_data(args.data)
    write_run_config(args.out, cfg, "train", {"variant": variant, "N": N})
    data = stack_samples(extract_samples(ds, mcfg.input_size, N, split="train",
                                         residual_mode=tcfg.residual_mode))
    val = None
    if ds.split("val"):
        val = stack_samples(extract_samples(ds, mcfg.input_size, N, split="val",
                                            residual_mode=tcfg.residual_mode))
    if len(data) == 0:
        raise ValueError("dataset has no training samples")
    model = PoseNet(mcfg)

    def progress(epoch, curve):
        vals = {s: v for e, s, v in curve if e == epoch}
        logging.getLogger("multipose").info("epoch %d %s", epoch,
                                            " ".join(f"{k}={v:.6f}" for k, v in vals.items()))

    res = train(model, data, tcfg, val, args.out, resume_from=args.resume, progress=progress,
                keep_epoch_checkpoints=args.keep_epoch_checkpoints)
    line = f"final train_loss={res.final('train'):.8f}"
    if res.final("val") is not None:
        line += f" val_loss={res.final('val'):.8f}"
    print(line)
    return EXIT_OK


def _load_model(path):
    from .model import PoseNet

    if not Path(path).is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    model, _ = PoseNet.load(path)
    return model


def cmd_eval(args, cfg) -> int:
    from .train_eval import evaluate, predict_dataset, write_predictions

    model = _load_model(args.checkpoint)
    ds = _load_data(args.data)
    if not ds.split(args.split):
        raise ValueError(f"dataset has no {args.split!r} split")
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / f"eval_{args.split}"
    write_run_config(out, cfg, "eval", {"checkpoint": str(args.checkpoint), "split": args.split})
    preds = predict_dataset(model, ds, args.split, model.N, cfg["eval.nms_threshold"], cfg["eval.kappa"])
    report = evaluate(preds.poses, ds, cfg["eval.kappa"], args.split, per_difficulty=args.per_difficulty)
    write_predictions(preds.poses, out / "predictions.json")
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
    print(report.table())
    return EXIT_OK


def _read_boxes(path):
    from .geometry import BoundingBox

    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read boxes {path}: {exc}") from exc
    boxes = []
    for item in raw:
        b = item.get("bbox", item.get("box")) if isinstance(item, dict) else item
        if b is None or len(b) != 4:
            raise UsageError(f"box entries must be [x, y, w, h], got {item!r}")
        boxes.append(BoundingBox(*map(float, b)))
    return boxes


def cmd_infer(args, cfg) -> int:
    from PIL import Image

    from .heatmap_codec import HeatmapSet, dump_heatmaps
    from .synth_data import SKELETON
    from .train_eval import candidate_poses, crop_inputs, oks_nms, write_predictions
    from .train_eval.analysis import continuous_path

    model = _load_model(args.checkpoint)
    boxes = _read_boxes(args.boxes)
    if not Path(args.image).is_file():
        raise FileNotFoundError(f"image not found: {args.image}")
    with Image.open(args.image) as im:
        image = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
    out = Path(args.out)
    write_run_config(out, cfg, "infer", {"checkpoint": str(args.checkpoint), "image": str(args.image)})
    image_id = Path(args.image).stem
    per_box = candidate_poses(model, boxes, image, model.N, image_id)
    kept = oks_nms([p for ps in per_box for p in ps], cfg["eval.nms_threshold"], cfg["eval.kappa"])
    write_predictions(kept, out / "predictions.json")
    print(f"{len(kept)} poses from {len(boxes)} boxes -> {out / 'predictions.json'}")

    if args.dump_heatmaps or args.lambda_sweep:
        x, _ = crop_inputs(image, boxes, model.config.input_size)
    if args.dump_heatmaps:
        hs = model.sweep_batch(x, model.N)
        for b, h in enumerate(hs):
            for lam in range(model.N):
                dump_heatmaps(HeatmapSet(h[lam]), out / "heatmaps", f"{image_id}_box{b}", lam)
    if args.lambda_sweep:
        if model.N != 2:
            raise UsageError("--lambda-sweep needs a model with N=2")
        from .plotting import plot_lambda_path

        snapshots = []
        for b in range(len(boxes)):
            _, steps, sep, path = continuous_path(model, x[b], args.lambda_sweep)
            ts = np.linspace(0.0, 1.0, args.lambda_sweep)
            snapshots.append({"box": b, "separation": sep, "max_step": float(steps.max()),
                              "snapshots": [{"t": float(t), "keypoints_crop": p.tolist()}
                                            for t, p in zip(ts, path)]})
            plot_lambda_path(path, x[b], out / f"lambda_sweep_box{b}", SKELETON)
        (out / "lambda_sweep.json").write_text(json.dumps(snapshots, indent=1) + "\n")
    return EXIT_OK


def cmd_benchmark(args, cfg) -> int:
    from .train_eval import DEFAULT_CONFIGS, run_benchmark
    from .train_eval.benchmark import summary_text

    names = cfg["benchmark.configs"]
    unknown = [n for n in names if n not in DEFAULT_CONFIGS]
    if unknown:
        raise UsageError(f"unknown benchmark configs {unknown}; choose from {list(DEFAULT_CONFIGS)}")
    ds = _load_data(args.data)
    write_run_config(args.out, cfg, "benchmark")
    base = model_config(cfg, "mipnet", 2)
    tcfg = train_config(cfg, 2)

    def progress(name, epoch, curve):
        logging.getLogger("multipose").info("%s epoch %d loss %.6f", name, epoch, curve[-1][2])

    result = run_benchmark(ds, tcfg, args.out, {n: DEFAULT_CONFIGS[n] for n in names}, base,
                           cfg["eval.nms_threshold"], progress=progress, plots=not args.no_plots)
    print(summary_text(result), end="")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file of flat dotted settings, e.g. {\"train.epochs\": 5}")
    common.add_argument("--seed", type=int, help="seed for data generation and training")
    common.add_argument("--workers", type=int, default=1, help="max worker processes (data generation)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = _Parser(prog="multipose", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", parents=[common], help="generate a synthetic dataset")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--mix", choices=["default", "occlusion"], help="difficulty mix preset")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="train one model")
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--variant", choices=list(VARIANT_FLAGS), default="mipnet", help="model variant")
    t.add_argument("--n", type=int, help="number of instance slots (baseline: 1, others: 2 by default)")
    t.add_argument("--out", required=True, help="output directory for checkpoints and loss CSV")
    t.add_argument("--epochs", type=int, help="override train.epochs")
    t.add_argument("--lr", type=float, help="override train.lr")
    t.add_argument("--batch-size", type=int, help="override train.batch_size")
    t.add_argument("--residual-mode", choices=["duplicate", "dont-care"], help="override train.residual_mode")
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--keep-epoch-checkpoints", action="store_true", help="also keep one checkpoint per epoch")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True, help="model checkpoint")
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--split", default="test", help="split to evaluate")
    e.add_argument("--nms-threshold", type=float, help="OKS-NMS suppression threshold")
    e.add_argument("--per-difficulty", action="store_true", help="also report each difficulty level")
    e.add_argument("--out", help="output directory (default: next to the checkpoint)")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", parents=[common], help="run a checkpoint on one image")
    i.add_argument("--checkpoint", required=True, help="model checkpoint")
    i.add_argument("--image", required=True, help="grayscale or RGB image file")
    i.add_argument("--boxes", required=True, help="JSON list of [x, y, w, h] boxes")
    i.add_argument("--out", default="infer_out", help="output directory")
    i.add_argument("--nms-threshold", type=float, help="OKS-NMS suppression threshold")
    i.add_argument("--dump-heatmaps", action="store_true", help="write every heatmap channel as PGM")
    i.add_argument("--lambda-sweep", type=int, metavar="STEPS",
                   help="trace keypoints over STEPS soft selectors between the two instances")
    i.set_defaults(func=cmd_infer)

    b = sub.add_parser("benchmark", parents=[common], help="train and compare all variants")
    b.add_argument("--data", required=True, help="dataset directory")
    b.add_argument("--out", required=True, help="output directory")
    b.add_argument("--epochs", type=int, help="override train.epochs")
    b.add_argument("--nms-threshold", type=float, help="OKS-NMS suppression threshold")
    b.add_argument("--configs", nargs="+", help="subset of baseline_n1 mipnet_n2 mipnet_n3 two_heads")
    b.add_argument("--no-plots", action="store_true", help="skip PNG/SVG plots")
    b.set_defaults(func=cmd_benchmark)
    return p


def _overrides(args) -> dict:
    o = {}
    if args.seed is not None:
        o["data.seed"] = args.seed
        o["train.seed"] = args.seed
        o["model.seed"] = args.seed
    mapping = {"epochs": "train.epochs", "lr": "train.lr", "batch_size": "train.batch_size",
               "residual_mode": "train.residual_mode", "nms_threshold": "eval.nms_threshold",
               "mix": "data.mix", "configs": "benchmark.configs"}
    for attr, key in mapping.items():
        if getattr(args, attr, None) is not None:
            o[key] = getattr(args, attr)
    return o


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.workers < 1:
        parser.error("--workers must be >= 1")
    try:
        cfg = load_run_config(args.config, _overrides(args))
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"multipose {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to exit 2
        print(f"multipose {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
