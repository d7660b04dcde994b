"""
Training a small network
========================

Walks through the training API on a small rendered set: build a variant,
train with validation, chart the per-head losses, predict. Two hundred steps
mostly stay near the mean-predictor loss; desk_scale.py is the run that learns.
"""

import numpy as np

from disco import datagen as dg
from disco import network as nw
from disco import plotting
from disco import training as tr

train = dg.stack_samples(dg.generate_dataset(dg.DatasetConfig(count=400, seed=1)))
val = dg.stack_samples(dg.generate_dataset(dg.DatasetConfig(count=100, seed=2, split="val")))

config = nw.preset("disco", channel_plan=(4, 4, 8, 8), hidden=64)
print([h.name for h in config.heads])
net = nw.build(config, seed=0)

cfg = tr.TrainConfig(lr=0.1, max_steps=200, eval_every=20)
result = tr.train(net, train, val, cfg, out_dir="small_run")
print("best", result.best_metrics)

steps = [r["step"] for r in result.log]
series = {name: (steps, [r[name] for r in result.log]) for name in result.log[0] if name.startswith("loss[")}
open("small_run/loss.svg", "w").write(plotting.line_chart(series, "per-head loss", "step", "loss", logy=True))

# predictions come back keyed by concept
pred = net.predict(val["images"][:3])
print({k: v.shape for k, v in pred.items()})
print("pose bins", np.argmax(pred["pose"], axis=1), "truth", np.argmax(val["pose"][:3], axis=1))
