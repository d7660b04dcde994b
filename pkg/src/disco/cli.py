"""`disco` command line: gen | train | eval | gradcheck | ablate | plot.

Every command validates its JSON config, copies it into the output directory and,
on failure, prints a JSON error document to stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from . import datagen as dg
from . import evaluation as ev
from . import network as nw
from . import plotting
from . import runconfig
from . import tensornet as tn
from . import training as tr
from .errors import ConfigError, DiscoError, FormatError

PRED_KEYS = ("pose", "visibility", "kp3d", "kp2d")


def _out_dir(args, default):
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _record_config(out, command, doc, args):
    """Write the effective config (plus the seed and inputs) next to the outputs."""
    record = {"command": command, "seed": args.seed, "config": doc}
    for key in ("data", "val", "pred", "gt", "variant", "alpha", "checkpoint", "log"):
        if getattr(args, key, None) is not None:
            record[key] = getattr(args, key)
    (out / "run_config.json").write_text(json.dumps(record, indent=2, sort_keys=True))
    if args.config:
        shutil.copyfile(args.config, out / ("input_" + Path(args.config).name))


def _load_split(path):
    return dg.stack_samples(dg.read_dataset(path))


def _network_config(doc, variant, data=None):
    overrides = dict(doc.get("network", {}))
    heads = overrides.pop("heads", None)
    if data is not None and len(data["images"]):
        overrides.setdefault("image_size", int(data["images"].shape[1]))
        overrides.setdefault("in_channels", int(data["images"].shape[3]))
        overrides.setdefault("keypoints", int(data["visibility"].shape[1]))
        overrides.setdefault("bins", int(data["pose"].shape[1]))
    overrides = {k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()}
    if heads is not None:
        return nw.NetworkConfig(heads=tuple(nw.HeadSpec(**h) for h in heads), **overrides)
    return nw.preset(variant, **overrides)


def _train_config(doc, seed):
    opts = dict(doc.get("train", {}))
    opts.setdefault("seed", seed)
    return tr.TrainConfig(**opts)


# ---------------------------------------------------------------------------


def cmd_gen(args):
    doc = runconfig.load("gen", args.config)
    doc = dict(doc)
    if args.seed is not None:
        doc["seed"] = args.seed
    cfg = dg.DatasetConfig.from_dict(doc)
    out = _out_dir(args, "dataset")
    samples = dg.generate_dataset(cfg)
    manifest = dg.write_dataset(samples, out, cfg)
    _record_config(out, "gen", cfg.to_dict(), args)
    return {"out": str(out), "total": manifest["total"], "counts": manifest["counts"]}


def cmd_train(args):
    doc = runconfig.load("train", args.config)
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    variant = args.variant or doc.get("variant", "disco")
    if not args.data:
        raise ConfigError("train needs --data")
    data = _load_split(args.data)
    val = _load_split(args.val) if args.val else None
    if val is not None and doc.get("val_limit"):
        val = {k: v[:doc["val_limit"]] for k, v in val.items()}
    net_cfg = _network_config(doc, variant, data)
    train_cfg = _train_config(doc, seed)
    out = _out_dir(args, "run")
    _record_config(out, "train", {"variant": variant, "network": net_cfg.to_dict(), "train": train_cfg.to_dict()}, args)
    net = nw.build(net_cfg, seed=seed)
    result = tr.train(net, data, val, train_cfg, out_dir=out)
    meta = {"network": net_cfg.to_dict(), "variant": variant, "metrics": result.best_metrics, "steps": result.steps}
    tn.save_checkpoint(out / "checkpoint.dscw", result.best_state, meta)
    summary = {"out": str(out), "steps": result.steps, "best": result.best_metrics, "interrupted": result.interrupted}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    if result.interrupted:
        raise KeyboardInterrupt
    return summary


def load_network(path):
    state, meta = tn.load_checkpoint(path)
    if "network" not in meta:
        raise FormatError(f"{path} has no network description")
    net = nw.build(nw.NetworkConfig.from_dict(meta["network"]))
    net.load_state_dict(state)
    return net


def write_predictions(path, arrays, classes=None):
    payload = {k: np.asarray(v) for k, v in arrays.items() if k in PRED_KEYS}
    if classes is not None:
        payload["classes"] = np.asarray(classes)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def read_labels(path):
    """Prediction/label arrays from an .npz file or a dataset directory."""
    p = Path(path)
    if p.is_dir():
        samples = dg.read_dataset(p)
        data = dg.stack_samples(samples)
        out = {k: data[k] for k in PRED_KEYS}
        out["classes"] = data["classes"]
        out["azimuth"] = np.array([s.meta["camera"]["azimuth"] for s in samples]) if samples else np.zeros(0)
        out["image_size"] = tuple(data["images"].shape[2:0:-1]) if samples else (64, 64)
        return out
    try:
        with np.load(p, allow_pickle=False) as z:
            return {k: z[k] for k in z.files}
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read predictions {path}: {exc}") from None


def cmd_eval(args):
    doc = runconfig.load("eval", args.config)
    alpha = args.alpha if args.alpha is not None else doc.get("alpha", 0.1)
    out_path = Path(args.out or "report.json")
    out_dir = out_path.parent if out_path.suffix == ".json" else out_path
    if out_path.suffix != ".json":
        out_path = out_dir / "report.json"
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.gt is None:
        raise ConfigError("eval needs --gt")
    gt = read_labels(args.gt)
    if args.pred is None:
        if not args.checkpoint:
            raise ConfigError("eval needs --pred or --checkpoint")
        images = _load_split(args.gt)["images"]
        pred = load_network(args.checkpoint).predict(images)
        write_predictions(out_dir / "predictions.npz", pred, gt.get("classes"))
    else:
        pred = read_labels(args.pred)
    image_size = tuple(doc.get("image_size", gt.get("image_size", (64, 64))))
    n = len(gt["visibility"])
    for k in PRED_KEYS:
        if k in pred and len(pred[k]) != n:
            raise FormatError(f"prediction {k} has {len(pred[k])} rows, ground truth {n}")
    reports = ev.evaluate_predictions(pred, gt, alpha, image_size, gt.get("classes"))
    out_path.write_text(json.dumps(reports, indent=2))
    alphas = doc.get("alphas", [round(0.01 * i, 2) for i in range(1, 51)])
    if "kp2d" in pred:
        k = gt["visibility"].shape[1]
        scale = np.array(image_size, dtype=np.float64)
        p2 = np.asarray(pred["kp2d"]).reshape(n, k, 2) * scale
        g2 = np.asarray(gt["kp2d"]).reshape(n, k, 2) * scale
        p3 = np.asarray(pred["kp3d"]).reshape(n, k, 3) if "kp3d" in pred else None
        g3 = np.asarray(gt["kp3d"]).reshape(n, k, 3)
        with open(out_dir / "pck_curve.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "pck2d", "pck3d"])
            for a in alphas:
                w.writerow([a, ev.pck_2d(p2, g2, gt["visibility"], a, max(image_size)),
                            ev.pck_3d(p3, g3, a) if p3 is not None else ""])
    _record_config(out_dir, "eval", dict(doc, alpha=alpha), args)
    return {"out": str(out_path), "metrics": {r["metric"]: r["value"] for r in reports}}


def gradcheck_network(size, seed=0, batch=4, num_checks=30):
    """(report, tolerance) for one of the standard network sizes, in float64."""
    rng = np.random.default_rng(seed)
    if size == "desk":
        cfg = nw.preset("disco")
        tol = 1e-3
    else:
        layers = 1 if size == "1-layer" else 3
        cfg = nw.NetworkConfig(
            heads=(nw.HeadSpec("kp2d", layers), nw.HeadSpec("pose", layers)),
            conv_layers=layers, downsample_at=(2,), channel_plan=(4, 6), image_size=8,
            hidden=16, bins=6, keypoints=3, dropout_after=(1,), paper_faithful=False,
        )
        tol = 1e-4
    net = nw.build(cfg, seed=seed, dtype=np.float64)
    s = cfg.image_size
    data = {
        "images": rng.random((batch, s, s, cfg.in_channels)),
        "pose": np.eye(cfg.bins)[rng.integers(cfg.bins, size=batch)],
        "visibility": rng.integers(0, 2, (batch, cfg.keypoints)).astype(np.float64),
        "kp3d": rng.uniform(-0.5, 0.5, (batch, 3 * cfg.keypoints)),
        "kp2d": rng.random((batch, 2 * cfg.keypoints)),
    }
    return tr.network_grad_check(net, data, tolerance=tol, num_checks=num_checks, seed=seed), tol


def cmd_gradcheck(args):
    doc = runconfig.load("gradcheck", args.config)
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    out = _out_dir(args, "gradcheck")
    rows = []
    for size in doc.get("sizes", ["1-layer", "3-layer", "desk"]):
        t = time.perf_counter()
        report, tol = gradcheck_network(size, seed, doc.get("batch", 4), doc.get("num_checks", 30))
        rows.append({"size": size, "max_rel_error": report.max_rel_error, "tolerance": tol,
                     "passed": report.passed, "seconds": round(time.perf_counter() - t, 2)})
    result = {"passed": all(r["passed"] for r in rows), "checks": rows}
    (out / "gradcheck.json").write_text(json.dumps(result, indent=2))
    _record_config(out, "gradcheck", doc, args)
    if not result["passed"]:
        raise DiscoError("gradient check failed: " + json.dumps(rows))
    return result


ABLATION_FIELDS = ["variant", "heads", "pck2d", "pck3d", "apk", "pose_error_deg", "steps"]


def run_ablation(variants, train_data, val_data, doc, seed, alpha=0.1):
    rows = []
    for variant in variants:
        net_cfg = _network_config(doc, variant, train_data)
        net = nw.build(net_cfg, seed=seed)
        result = tr.train(net, train_data, val_data, _train_config(doc, seed))
        net.load_state_dict(result.best_state)
        pred = net.predict(val_data["images"])
        size = net_cfg.image_size
        metrics = {r["metric"]: r["value"] for r in ev.evaluate_predictions(pred, val_data, alpha, (size, size))}
        rows.append({
            "variant": variant,
            "heads": " ".join(h.name for h in net_cfg.heads),
            "pck2d": metrics.get("pck2d", ""),
            "pck3d": metrics.get("pck3d", ""),
            "apk": metrics.get("apk", ""),
            "pose_error_deg": metrics.get("pose_error_deg", ""),
            "steps": result.steps,
        })
    return rows


def cmd_ablate(args):
    doc = runconfig.load("ablate", args.config)
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    if not args.data or not args.val:
        raise ConfigError("ablate needs --data and --val")
    variants = doc.get("variants", ["disco", "reverse"])
    for v in variants:
        if v not in nw.PRESETS:
            raise ConfigError(f"unknown variant {v!r}")
    train_data = _load_split(args.data)
    val_samples = dg.read_dataset(args.val)
    val_data = dg.stack_samples(val_samples)
    val_data["azimuth"] = np.array([s.meta["camera"]["azimuth"] for s in val_samples])
    if doc.get("val_limit"):
        val_data = {k: v[:doc["val_limit"]] for k, v in val_data.items()}
    out = _out_dir(args, "ablation")
    _record_config(out, "ablate", doc, args)
    rows = run_ablation(variants, train_data, val_data, doc, seed, doc.get("alpha", 0.1))
    with open(out / "table.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ABLATION_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow(r)
    return {"out": str(out / "table.csv"), "rows": rows}


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _as_float(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return float("nan")


def cmd_plot(args):
    doc = runconfig.load("plot", args.config)
    if not args.log:
        raise ConfigError("plot needs --log <csv>")
    rows = _read_csv(args.log)
    if not rows:
        raise FormatError(f"{args.log} has no rows")
    out = Path(args.out or Path(args.log).with_suffix(".svg"))
    out.parent.mkdir(parents=True, exist_ok=True)
    x = doc.get("x", list(rows[0])[0])
    if doc.get("kind") == "bar":
        col = (doc.get("columns") or [c for c in rows[0] if c != x])[0]
        svg = plotting.bar_chart([r[x] for r in rows], [_as_float(r[col]) for r in rows], doc.get("title", col), col)
    else:
        cols = doc.get("columns") or [c for c in rows[0] if c.startswith(("loss[", "total", "pck", "val_loss"))]
        series = {c: ([_as_float(r[x]) for r in rows], [_as_float(r[c]) for r in rows]) for c in cols}
        logy = all(c.startswith(("loss", "total", "val_loss")) for c in cols)
        svg = plotting.line_chart(series, doc.get("title", Path(args.log).stem), x, "value", logy=logy)
    out.write_text(svg)
    return {"out": str(out)}


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck,
            "ablate": cmd_ablate, "plot": cmd_plot}


def _common(default):
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=default)
    p.add_argument("--config", default=default, help="JSON run configuration")
    p.add_argument("--out", default=default, help="output directory (or report file for eval)")
    return p


def build_parser():
    # options may come before or after the command; the subcommand copy must not
    # reset a value given before it
    common = _common(argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="disco", description=__doc__.splitlines()[0], parents=[_common(None)])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="render a synthetic dataset")
    p = sub.add_parser("train", parents=[common], help="train one network variant")
    p.add_argument("--data", help="training dataset directory")
    p.add_argument("--val", help="validation dataset directory")
    p.add_argument("--variant", choices=sorted(nw.PRESETS))
    p = sub.add_parser("eval", parents=[common], help="score predictions against labels")
    p.add_argument("--pred", help="predictions .npz (or dataset dir)")
    p.add_argument("--gt", help="ground-truth dataset dir or .npz")
    p.add_argument("--checkpoint", help="predict with this checkpoint instead of --pred")
    p.add_argument("--alpha", type=float)
    sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the network gradients")
    p = sub.add_parser("ablate", parents=[common], help="train and score several variants")
    p.add_argument("--data")
    p.add_argument("--val")
    p = sub.add_parser("plot", parents=[common], help="SVG chart of a CSV log or table")
    p.add_argument("--log", help="CSV file (training log, table.csv or pck_curve.csv)")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = COMMANDS[args.command](args)
    except KeyboardInterrupt:
        print(json.dumps({"error": "Interrupted", "message": "stopped by user; training state checkpointed"}), file=sys.stderr)
        return 130
    except (DiscoError, ValueError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command}), file=sys.stderr)
        return 2
    print(json.dumps(result, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
