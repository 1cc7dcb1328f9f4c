"""Compare the four model variants on the same data and budget.

Without arguments, trains reduced-width versions of all variants for a few
epochs on a small occlusion-heavy dataset (a couple of minutes) and prints
the comparison. Given the output directory of a full ``multipose benchmark``
run instead, it just reads and summarises that run.

    python3 demos/03_compare_variants.py
    python3 demos/03_compare_variants.py path/to/bench
"""
import csv
import json
import sys
from pathlib import Path

from multipose import ModelConfig
from multipose.synth_data import OCCLUSION_MIX, DatasetConfig, make_dataset
from multipose.train_eval import TrainConfig, run_benchmark
from multipose.train_eval.benchmark import summary_text


def show_existing(bench: Path) -> None:
    with open(bench / "comparison.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    timing = json.loads((bench / "timing.json").read_text())
    print(f"{'config':<13}{'params':>9}{'AP':>7}{'single':>8}{'heavy':>7}{'ms/img':>8}{'train min':>10}")
    for r in rows:
        t = timing[r["config"]]
        print(f"{r['config']:<13}{int(r['params']):>9}{float(r['AP']):7.1f}{float(r['AP_single']):8.1f}"
              f"{float(r['AP_two_heavy']):7.1f}{t['ms_per_image']:8.2f}{t['train_seconds'] / 60:10.1f}")


if len(sys.argv) > 1:
    show_existing(Path(sys.argv[1]))
    sys.exit(0)

out = Path(__file__).with_name("out") / "03_bench"
ds = make_dataset(DatasetConfig(splits={"train": 400, "test": 80}, mix=OCCLUSION_MIX, seed=5,
                                image_format="inline"))
small = ModelConfig(stem_widths=(16, 32, 64, 64), mid_widths=(32, 32), up_widths=(16, 16))
result = run_benchmark(ds, TrainConfig(epochs=6), out, base_model=small,
                       progress=lambda name, e, c: print(f"  {name} epoch {e} loss {c[-1][2]:.5f}"))
print(summary_text(result))
print("Heavy-occlusion AP per variant:")
for name in result.rows:
    print(f"  {name:<12} {100 * result.ap(name, 'two_heavy'):5.1f}")
print(f"tables and plots in {out}")
