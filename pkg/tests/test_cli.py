import csv
import json

import numpy as np
import pytest

from disco import cli
from disco import datagen as dg

TINY_NET = {
    "conv_layers": 2, "downsample_at": [2], "channel_plan": [2, 3], "hidden": 8,
    "dropout_after": [], "paper_faithful": False,
    "heads": [{"concept": "pose", "depth": 1}, {"concept": "visibility", "depth": 1},
              {"concept": "kp3d", "depth": 2}, {"concept": "kp2d", "depth": 2}],
}


@pytest.fixture(scope="module")
def datasets(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    for name, count, seed in (("train", 20, 1), ("val", 10, 2)):
        cfg = dg.DatasetConfig(count=count, seed=seed)
        dg.write_dataset(dg.generate_dataset(cfg), root / name, cfg)
    return root


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), (json.loads(err) if err.strip() else None)


def test_gen_empty_dataset(tmp_path, capsys):
    cfg = write_json(tmp_path / "gen.json", {"count": 0})
    code, out, _ = run(["gen", "--config", cfg, "--out", str(tmp_path / "d")], capsys)
    assert code == 0 and out["total"] == 0
    assert dg.read_dataset(tmp_path / "d") == []
    assert (tmp_path / "d" / "input_gen.json").exists()
    assert json.loads((tmp_path / "d" / "run_config.json").read_text())["command"] == "gen"


def test_gen_seed_flag_reproducible(tmp_path, capsys):
    cfg = write_json(tmp_path / "gen.json", {"count": 3})
    for name in ("a", "b"):
        assert run(["--seed", "7", "gen", "--config", cfg, "--out", str(tmp_path / name)], capsys)[0] == 0
    assert (tmp_path / "a" / "samples.dsc").read_bytes() == (tmp_path / "b" / "samples.dsc").read_bytes()
    assert json.loads((tmp_path / "a" / "manifest.json").read_text())["seed"] == 7


def test_eval_pred_equals_gt(datasets, tmp_path, capsys):
    code, out, _ = run(["eval", "--pred", str(datasets / "val"), "--gt", str(datasets / "val"),
                        "--out", str(tmp_path / "r")], capsys)
    assert code == 0
    m = out["metrics"]
    assert m["pck2d"] == 1.0 and m["pck3d"] == 1.0 and m["apk"] == 1.0
    report = json.loads((tmp_path / "r" / "report.json").read_text())
    assert {"metric", "alpha", "value", "sampleCount", "perClass"} <= set(report[0])
    rows = list(csv.DictReader(open(tmp_path / "r" / "pck_curve.csv")))
    assert all(float(r["pck2d"]) == 1.0 for r in rows)


def test_bad_config_reports_json_error(tmp_path, capsys):
    cfg = write_json(tmp_path / "gen.json", {"count": 3, "colour": "red"})
    code, _, err = run(["gen", "--config", cfg, "--out", str(tmp_path / "d")], capsys)
    assert code != 0 and err["error"] == "ConfigError" and "colour" in err["message"]
    code, _, err = run(["eval", "--pred", str(tmp_path / "missing.npz"), "--gt", str(tmp_path / "missing.npz")], capsys)
    assert code != 0 and err["error"] == "FormatError"


def test_train_eval_plot(datasets, tmp_path, capsys):
    cfg = write_json(tmp_path / "train.json", {"network": TINY_NET, "train": {"batch": 10, "max_steps": 4, "eval_every": 2}})
    run_dir = tmp_path / "run"
    before = (datasets / "train" / "samples.dsc").read_bytes()
    code, out, _ = run(["train", "--config", cfg, "--data", str(datasets / "train"), "--val", str(datasets / "val"),
                        "--out", str(run_dir), "--seed", "1"], capsys)
    assert code == 0 and out["steps"] == 4
    assert (datasets / "train" / "samples.dsc").read_bytes() == before  # inputs untouched
    for name in ("checkpoint.dscw", "best.dscw", "last.dscw", "train_log.csv", "run_config.json", "input_train.json"):
        assert (run_dir / name).exists(), name
    code, out, _ = run(["eval", "--checkpoint", str(run_dir / "checkpoint.dscw"), "--gt", str(datasets / "val"),
                        "--out", str(tmp_path / "ev")], capsys)
    assert code == 0 and 0 <= out["metrics"]["pck2d"] <= 1
    assert (tmp_path / "ev" / "predictions.npz").exists()
    code, out, _ = run(["plot", "--log", str(run_dir / "train_log.csv"), "--out", str(tmp_path / "loss.svg")], capsys)
    assert code == 0 and (tmp_path / "loss.svg").read_text().startswith("<svg")
    code, out, _ = run(["plot", "--log", str(tmp_path / "ev" / "pck_curve.csv"), "--out", str(tmp_path / "pck.svg")], capsys)
    assert code == 0 and "polyline" in (tmp_path / "pck.svg").read_text()


def test_ablate_deterministic(datasets, tmp_path, capsys):
    doc = {"variants": ["disco", "reverse"], "network": {k: v for k, v in TINY_NET.items() if k != "heads"},
           "train": {"batch": 10, "max_steps": 2, "eval_every": 1}}
    doc["network"].update({"conv_layers": 25, "paper_faithful": True, "channel_plan": [2, 2, 2, 2],
                           "downsample_at": [4, 8, 12]})
    cfg = write_json(tmp_path / "ablate.json", doc)
    tables = []
    for name in ("a", "b"):
        code, out, _ = run(["ablate", "--config", cfg, "--data", str(datasets / "train"), "--val", str(datasets / "val"),
                            "--out", str(tmp_path / name), "--seed", "3"], capsys)
        assert code == 0
        tables.append((tmp_path / name / "table.csv").read_text())
    assert tables[0] == tables[1]
    rows = list(csv.DictReader(open(tmp_path / "a" / "table.csv")))
    assert [r["variant"] for r in rows] == ["disco", "reverse"]
    assert rows[0]["heads"] == "pose@13 visibility@17 kp3d@21 kp2d@25"
    code, _, _ = run(["plot", "--log", str(tmp_path / "a" / "table.csv"), "--config",
                      write_json(tmp_path / "bar.json", {"kind": "bar", "x": "variant", "columns": ["pck2d"]}),
                      "--out", str(tmp_path / "bar.svg")], capsys)
    assert code == 0 and "<rect" in (tmp_path / "bar.svg").read_text()


def test_gradcheck_small(tmp_path, capsys):
    cfg = write_json(tmp_path / "g.json", {"sizes": ["1-layer", "3-layer"], "num_checks": 15})
    code, out, _ = run(["gradcheck", "--config", cfg, "--out", str(tmp_path / "g")], capsys)
    assert code == 0 and out["passed"]
    assert [c["size"] for c in out["checks"]] == ["1-layer", "3-layer"]


def test_predictions_file_round_trip(tmp_path):
    arrays = {"kp2d": np.zeros((2, 24)), "pose": np.ones((2, 24)), "junk": np.zeros(3)}
    cli.write_predictions(tmp_path / "p.npz", arrays)
    back = cli.read_labels(tmp_path / "p.npz")
    assert set(back) == {"kp2d", "pose"} and np.array_equal(back["pose"], arrays["pose"])
