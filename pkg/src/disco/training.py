"""Training loop: weighted multi-head L2 objective, momentum SGD, mixed-class
batches, plateau learning-rate schedule and best-validation checkpointing."""

from __future__ import annotations

import csv
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensornet as tn
from .datagen import CAR_CLASS_MIX
from .errors import ConfigError, EmptyEvaluation
from .evaluation import pck_2d, pck_3d
from .network import Network

TARGET_KEYS = {"pose": "pose", "visibility": "visibility", "kp3d": "kp3d", "kp2d": "kp2d"}


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch: int = 100
    # occlusion-class proportions per batch; None draws a random category split instead
    batch_mix: dict | None = field(default_factory=lambda: dict(CAR_CLASS_MIX))
    plateau_patience: int = 5
    plateau_threshold: float = 0.01
    lr_factor: float = 0.1
    max_reductions: int = 3
    max_epochs: int = 10
    max_steps: int | None = None
    time_limit: float | None = None  # seconds
    eval_every: int = 100
    seed: int = 0
    prefetch: int = 2

    @classmethod
    def from_dict(cls, doc):
        return cls(**doc)

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class LossBreakdown:
    total: float
    per_head: dict  # head name -> unweighted loss
    weights: dict  # head name -> lambda

    def weighted_sum(self):
        return sum(self.weights[k] * v for k, v in self.per_head.items())


def batch_arrays(data, index):
    """Float inputs and targets for the rows `index` of a stacked dataset."""
    images = data["images"][index]
    if images.dtype == np.uint8:
        images = images.astype(np.float32) / np.float32(255.0)
    out = {"images": images}
    for key in TARGET_KEYS.values():
        out[key] = data[key][index]
    return out


def objective(network: Network, batch, training=True, rng=None):
    """(total loss tensor, {head: loss tensor}) of the weighted multi-head objective."""
    outputs = network.forward(batch["images"], training=training, rng=rng)
    losses, weights = {}, []
    for head in network.config.heads:
        target = np.asarray(batch[TARGET_KEYS[head.concept]], dtype=network.dtype)
        losses[head.name] = tn.l2_loss(outputs[head.name], target)
        weights.append(head.weight)
    total = tn.weighted_sum(list(losses.values()), weights)
    return total, losses


def training_step(network: Network, optimizer: tn.SGD, batch, rng=None) -> LossBreakdown:
    """One forward/backward pass and SGD update. NonFiniteGradient leaves weights untouched."""
    total, losses = objective(network, batch, training=True, rng=rng)
    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    return LossBreakdown(
        total=float(total.item()),
        per_head={k: float(v.item()) for k, v in losses.items()},
        weights={h.name: h.weight for h in network.config.heads},
    )


class BatchSampler:
    """Index batches with a fixed occlusion-class composition, or a random category split.

    Each pool is walked in a shuffled order and reshuffled when exhausted. An epoch is
    len(data) // batch steps.
    """

    def __init__(self, classes, categories, batch, mix, rng):
        self.rng = rng
        self.batch = batch
        self.mix = mix
        self.pools, self.cursor = {}, {}
        if mix is not None:
            from .datagen import allocate

            self.counts = allocate(batch, mix)
            labels = np.asarray(classes)
        else:
            self.counts = None
            labels = np.asarray(categories)
        for name in sorted(set(labels.tolist())):
            self.pools[name] = np.flatnonzero(labels == name)
        if mix is not None:
            for name, n in self.counts.items():
                if n > 0 and len(self.pools.get(name, ())) == 0:
                    raise ConfigError(f"batch needs {n} {name!r} samples but the dataset has none")
        elif not self.pools:
            raise ConfigError("empty dataset")
        self.order = {k: self.rng.permutation(v) for k, v in self.pools.items()}
        self.cursor = {k: 0 for k in self.pools}

    def _take(self, name, n):
        out = []
        while n > 0:
            order = self.order[name]
            c = self.cursor[name]
            chunk = order[c:c + n]
            out.append(chunk)
            n -= len(chunk)
            self.cursor[name] = c + len(chunk)
            if self.cursor[name] >= len(order):
                self.order[name] = self.rng.permutation(self.pools[name])
                self.cursor[name] = 0
        return np.concatenate(out) if out else np.zeros(0, int)

    def composition(self):
        if self.counts is not None:
            return dict(self.counts)
        names = sorted(self.pools)
        share = self.rng.dirichlet(np.ones(len(names)))
        from .datagen import allocate

        return allocate(self.batch, dict(zip(names, share)))

    def next(self):
        parts = [self._take(name, n) for name, n in self.composition().items() if n > 0]
        idx = np.concatenate(parts)
        return idx[self.rng.permutation(len(idx))]


def _prefetch(make, count, depth):
    """Yield make(i) for i < count, produced by one loader thread through a bounded queue."""
    if depth <= 0:
        for i in range(count):
            yield make(i)
        return
    q = queue.Queue(maxsize=depth)
    stop = threading.Event()

    def worker():
        for i in range(count):
            if stop.is_set():
                return
            q.put(make(i))
        q.put(None)

    t = threading.Thread(target=worker, daemon=True)
    t.start()
    try:
        while True:
            item = q.get()
            if item is None:
                return
            yield item
    finally:
        stop.set()
        while t.is_alive():
            try:
                q.get_nowait()
            except queue.Empty:
                t.join(0.01)


def validate(network: Network, data, batch_size=100, alpha=0.1):
    """Validation total loss plus 2D/3D PCK at alpha, from an eval-mode snapshot."""
    snapshot = network.clone()
    n = len(data["images"])
    collected = {h.name: [] for h in network.config.heads}
    for start in range(0, n, batch_size):
        batch = batch_arrays(data, np.arange(start, min(n, start + batch_size)))
        for name, t in snapshot.forward(batch["images"], training=False).items():
            collected[name].append(t.data.astype(np.float64))
    total, by_concept = 0.0, {}
    for head in sorted(network.config.heads, key=lambda h: h.depth):
        out = np.concatenate(collected[head.name])
        target = np.asarray(data[TARGET_KEYS[head.concept]], dtype=np.float64)
        total += head.weight * float(((out - target) ** 2).mean())
        by_concept[head.concept] = out
    result = {"val_loss": total}
    size, k = network.config.image_size, network.config.keypoints
    if "kp2d" in by_concept:
        try:
            result["pck2d"] = pck_2d(by_concept["kp2d"].reshape(n, k, 2) * size,
                                     data["kp2d"].reshape(n, k, 2) * size,
                                     data["visibility"], alpha, size)
        except EmptyEvaluation:
            result["pck2d"] = float("nan")
    if "kp3d" in by_concept:
        result["pck3d"] = pck_3d(by_concept["kp3d"].reshape(n, k, 3), data["kp3d"].reshape(n, k, 3), alpha)
    return result


class PlateauSchedule:
    """lr x factor when the monitored value fails to improve by `threshold` (relative)
    over `patience` consecutive evaluations; at most `max_reductions` times."""

    def __init__(self, lr, patience=5, threshold=0.01, factor=0.1, max_reductions=3):
        self.lr = lr
        self.patience, self.threshold, self.factor = patience, threshold, factor
        self.max_reductions = max_reductions
        self.reductions = 0
        self.reference = None
        self.stale = 0

    def update(self, value):
        if self.reference is None or value < self.reference * (1.0 - self.threshold):
            self.reference = value
            self.stale = 0
            return self.lr
        self.stale += 1
        if self.stale >= self.patience and self.reductions < self.max_reductions:
            self.lr *= self.factor
            self.reductions += 1
            self.stale = 0
            self.reference = value
        return self.lr


@dataclass
class TrainResult:
    network: Network
    best_state: dict
    best_metrics: dict | None
    log: list
    steps: int
    interrupted: bool = False


def _log_fields(network):
    heads = [h.name for h in network.config.heads]
    return ["step", "epoch", "lr", "total"] + [f"loss[{h}]" for h in heads] + ["val_loss", "pck2d", "pck3d", "seconds"]


def train(network: Network, train_data, val_data=None, cfg: TrainConfig = TrainConfig(),
          out_dir=None, progress=None) -> TrainResult:
    """Train in place. Returns the best-validation weights (the final weights when no
    validation data is given) together with the per-step log rows."""
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 0xD15C0]))
    n = len(train_data["images"])
    steps_per_epoch = n // cfg.batch if n >= cfg.batch else (1 if n else 0)
    total_steps = cfg.max_epochs * steps_per_epoch
    if cfg.max_steps is not None:
        total_steps = min(total_steps, cfg.max_steps)
    initial = {k: v.copy() for k, v in network.state_dict().items()}
    if total_steps == 0:
        return TrainResult(network, initial, None, [], 0)
    if steps_per_epoch == 0:
        raise ConfigError("empty training set")
    batch = min(cfg.batch, n)
    sampler = BatchSampler(train_data["classes"], train_data.get("categories"), batch, cfg.batch_mix, rng)
    optimizer = tn.SGD(network.parameters(), cfg.lr, cfg.momentum, cfg.weight_decay)
    schedule = PlateauSchedule(cfg.lr, cfg.plateau_patience, cfg.plateau_threshold, cfg.lr_factor, cfg.max_reductions)
    dropout_rngs = rng.spawn(1)[0]

    # batch indices are drawn up front on the trainer side so the loader thread
    # never touches the shared generator
    index_plan = [sampler.next() for _ in range(total_steps)]
    loader = _prefetch(lambda i: batch_arrays(train_data, index_plan[i]), total_steps, cfg.prefetch)

    fields = _log_fields(network)
    log, best_state, best_metrics, best_loss = [], initial, None, None
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    step = 0
    interrupted = False

    def save(name, state, meta):
        if out:
            tn.save_checkpoint(out / name, state, meta)

    try:
        for step, batch_data in enumerate(loader, start=1):
            optimizer.lr = schedule.lr
            breakdown = training_step(network, optimizer, batch_data, dropout_rngs)
            row = {"step": step, "epoch": (step - 1) // steps_per_epoch + 1, "lr": optimizer.lr, "total": breakdown.total}
            for name, value in breakdown.per_head.items():
                row[f"loss[{name}]"] = value
            last = step == total_steps
            if val_data is not None and (step % cfg.eval_every == 0 or last):
                metrics = validate(network, val_data)
                row.update({k: metrics.get(k) for k in ("val_loss", "pck2d", "pck3d")})
                schedule.update(metrics["val_loss"])
                if best_loss is None or metrics["val_loss"] < best_loss:
                    best_loss, best_metrics = metrics["val_loss"], dict(metrics, step=step)
                    best_state = {k: v.copy() for k, v in network.state_dict().items()}
                    save("best.dscw", best_state, {"step": step, "metrics": best_metrics, "network": network.config.to_dict()})
            row["seconds"] = round(time.perf_counter() - start, 3)
            log.append(row)
            if progress:
                progress(row)
            if cfg.time_limit is not None and time.perf_counter() - start > cfg.time_limit:
                break
    except KeyboardInterrupt:
        interrupted = True
        save("interrupted.dscw", network.state_dict(), {"step": step, "network": network.config.to_dict()})
    if val_data is None:
        best_state = {k: v.copy() for k, v in network.state_dict().items()}
    save("last.dscw", network.state_dict(), {"step": step, "network": network.config.to_dict()})
    if out:
        write_log(log, out / "train_log.csv", fields)
    return TrainResult(network, best_state, best_metrics, log, step, interrupted)


def write_log(rows, path, fields=None):
    fields = fields or (list(rows[0]) if rows else ["step"])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, restval="")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def network_grad_check(network: Network, batch, tolerance=1e-3, num_checks=30, seed=0, eps=1e-7):
    """Finite-difference check of the full training objective (f64 copy, fixed dropout masks).

    The step is small because in a deep ReLU trunk a 1e-5 nudge to an early layer
    flips activations many layers down and the difference quotient stops being local.
    """
    net = network.clone(np.float64)
    batch = {k: np.asarray(v, dtype=np.float64) if k != "images" or np.asarray(v).dtype != np.uint8
             else np.asarray(v, np.float64) / 255.0 for k, v in batch.items()}

    def loss_fn():
        total, _ = objective(net, batch, training=True, rng=np.random.default_rng(seed))
        return total

    # training-mode batch norm updates running stats; they do not enter the loss
    return tn.grad_check(loss_fn, net.parameters(), tolerance=tolerance, num_checks=num_checks, eps=eps,
                         rng=np.random.default_rng(seed + 1), names=list(net.params))
