"""
Desk-scale training run
=======================

Trains one network variant on 20,000 rendered cars for a fixed number of
SGD steps and stores the best-validation checkpoint under results/desk/<variant>/.
The acceptance suite re-scores these checkpoints on a freshly regenerated
validation split.

    python demos/desk_scale.py disco
    python demos/desk_scale.py reverse
"""

import argparse
import json
import time
from pathlib import Path

from disco import datagen as dg
from disco import network as nw
from disco import training as tr

ROOT = Path(__file__).resolve().parents[1]

parser = argparse.ArgumentParser()
parser.add_argument("variant", choices=sorted(nw.PRESETS))
parser.add_argument("--data", default=str(ROOT / "desk_data"), help="dataset cache directory")
parser.add_argument("--steps", type=int, default=5000, help="SGD steps (identical for every variant)")
parser.add_argument("--seed", type=int, default=0)
args = parser.parse_args()

train_cfg = dg.DatasetConfig(count=20_000, seed=1)
val_cfg = dg.DatasetConfig(count=1000, seed=7, split="val")

# datasets are cached; generation is deterministic so a cached copy is the same bytes
for name, cfg in (("train", train_cfg), ("val", val_cfg)):
    path = Path(args.data) / name
    if not (path / "manifest.json").exists():
        print(f"rendering {cfg.count} {name} samples ...", flush=True)
        dg.write_dataset(dg.generate_dataset(cfg), path, cfg)

start = time.perf_counter()
train = dg.stack_samples(dg.read_dataset(Path(args.data) / "train"))
val = dg.stack_samples(dg.read_dataset(Path(args.data) / "val"))
# the plateau schedule and checkpoint choice watch the first 500 validation samples
monitor = {k: v[:500] for k, v in val.items()}

net = nw.build(nw.preset(args.variant), seed=args.seed)
cfg = tr.TrainConfig(max_epochs=100, max_steps=args.steps, eval_every=100, seed=args.seed)
out = ROOT / "results" / "desk" / args.variant


def progress(row):
    if row.get("val_loss") is not None:
        print(json.dumps({k: row[k] for k in ("step", "lr", "total", "val_loss", "pck2d", "pck3d", "seconds")}), flush=True)


result = tr.train(net, train, monitor, cfg, out_dir=out, progress=progress)
net.load_state_dict(result.best_state)
final = tr.validate(net, val)
seconds = time.perf_counter() - start
summary = {
    "variant": args.variant,
    "seed": args.seed,
    "steps": result.steps,
    "best": result.best_metrics,
    "validation": final,
    "seconds": seconds,
    "train_samples": len(train["images"]),
    "train_config": cfg.to_dict(),
    "network": net.config.to_dict(),
    "val_config": val_cfg.to_dict(),
}
(out / "result.json").write_text(json.dumps(summary, indent=2))
print(json.dumps(final), f"{seconds / 3600:.2f} h", flush=True)
