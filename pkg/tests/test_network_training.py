import csv

import numpy as np
import pytest

from disco import network as nw
from disco import tensornet as tn
from disco import training as tr
from disco.errors import ConfigError, NonFiniteGradient, ShapeError


def toy_config(heads=(("pose", 1), ("visibility", 2), ("kp3d", 3), ("kp2d", 3)), **kw):
    base = dict(conv_layers=3, downsample_at=(2,), channel_plan=(3, 4), image_size=8, hidden=6,
                dropout=0.0, dropout_after=(), paper_faithful=False)
    base.update(kw)
    return nw.NetworkConfig(heads=tuple(nw.HeadSpec(*h) for h in heads), **base)


def toy_data(n, rng, size=8, classes=None):
    classes = classes or ["full"] * n
    return {
        "images": rng.integers(0, 256, (n, size, size, 1), dtype=np.uint8),
        "pose": np.eye(24, dtype=np.float32)[rng.integers(0, 24, n)],
        "visibility": rng.integers(0, 2, (n, 12)).astype(np.float32),
        "kp3d": rng.uniform(-0.5, 0.5, (n, 36)).astype(np.float32),
        "kp2d": rng.uniform(0, 1, (n, 24)).astype(np.float32),
        "classes": np.array(classes),
        "categories": np.array(["car"] * n),
    }


def test_default_structure():
    cfg = nw.preset("disco")
    net = nw.build(cfg)
    assert net.num_conv_layers() == 25
    assert [(h.concept, h.depth) for h in cfg.heads] == [("pose", 13), ("visibility", 17), ("kp3d", 21), ("kp2d", 25)]
    assert [h.weight for h in cfg.heads] == [0.1, 1.0, 1.0, 1.0]
    assert net.params["conv4.kernel"].shape[-1] == cfg.channel_plan[1]


def test_presets_match_ablation_rows():
    heads = lambda v: [(h.concept, h.depth) for h in nw.PRESETS[v]]
    assert heads("reverse") == [("kp2d", 13), ("kp3d", 17), ("visibility", 21), ("pose", 25)]
    assert heads("plain-all") == [(c, 25) for c in nw.CONCEPTS]
    assert heads("plain-2d") == [("kp2d", 25)] and heads("plain-3d") == [("kp3d", 25)]
    assert heads("dsn-2d") == [("kp2d", d) for d in (13, 17, 21, 25)]
    assert heads("dsn-3d") == [("kp3d", d) for d in (13, 17, 21, 25)]
    assert heads("disco-3d-2d") == [("kp3d", 21), ("kp2d", 25)]
    assert heads("disco-vis-3d-2d") == [("visibility", 17), ("kp3d", 21), ("kp2d", 25)]
    assert heads("disco-3d-vis") == [("pose", 13), ("kp3d", 17), ("visibility", 21), ("kp2d", 25)]
    for v in nw.PRESETS:
        nw.preset(v)  # every preset satisfies the depth constraints


def test_config_errors():
    with pytest.raises(ConfigError):
        nw.preset("nope")
    with pytest.raises(ConfigError):
        nw.NetworkConfig(heads=())
    with pytest.raises(ConfigError):
        nw.NetworkConfig(heads=(nw.HeadSpec("kp2d", 8),))  # too shallow
    with pytest.raises(ConfigError):
        nw.NetworkConfig(heads=(nw.HeadSpec("kp3d", 13), nw.HeadSpec("kp2d", 15)))  # too close
    with pytest.raises(ConfigError):
        nw.NetworkConfig(heads=(nw.HeadSpec("kp2d", 25), nw.HeadSpec("kp2d", 25)))
    with pytest.raises(ConfigError):
        nw.HeadSpec("depth", 13)


def test_config_dict_round_trip():
    cfg = nw.preset("reverse", hidden=64)
    assert nw.NetworkConfig.from_dict(cfg.to_dict()) == cfg


def test_zero_network_outputs_zero():
    net = nw.build(toy_config())
    for t in net.params.values():
        t.data[...] = 0
    out = net.forward(np.zeros((2, 8, 8, 1)), training=False)
    assert all(np.all(v.data == 0) for v in out.values())


def test_duplicate_images_identical_outputs(rng):
    net = nw.build(toy_config())
    img = rng.uniform(size=(1, 8, 8, 1))
    out = net.predict(np.repeat(img, 3, axis=0))
    for v in out.values():
        assert np.array_equal(v[0], v[1]) and np.array_equal(v[1], v[2])


def test_output_dims_and_shape_error(rng):
    net = nw.build(toy_config())
    out = net.predict(rng.uniform(size=(2, 8, 8, 1)))
    assert {k: v.shape[1] for k, v in out.items()} == {"pose": 24, "visibility": 12, "kp3d": 36, "kp2d": 24}
    with pytest.raises(ShapeError):
        net.forward(np.zeros((2, 9, 8, 1)))


def test_loss_decomposition(rng):
    net = nw.build(toy_config())
    data = toy_data(4, rng)
    opt = tn.SGD(net.parameters(), 0.0)
    b = tr.training_step(net, opt, tr.batch_arrays(data, np.arange(4)))
    assert b.total == pytest.approx(b.weighted_sum(), abs=1e-6)
    assert b.weights["pose@1"] == 0.1


def test_zero_weights_leave_parameters_unchanged(rng):
    # weight decay is a separate pull toward zero, so it is disabled here
    heads = (("pose", 1, 0.0), ("kp3d", 2, 0.0), ("kp2d", 3, 0.0))
    net = nw.build(toy_config(heads))
    before = {k: v.copy() for k, v in net.state_dict().items() if not k.endswith(("mean", "var"))}
    opt = tn.SGD(net.parameters(), 0.1, 0.9, 0.0)
    data = toy_data(4, rng)
    for _ in range(3):
        tr.training_step(net, opt, tr.batch_arrays(data, np.arange(4)))
    after = net.state_dict()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def _grads(net, batch):
    for p in net.parameters():
        p.grad = None
    total, _ = tr.objective(net, batch, training=True, rng=np.random.default_rng(0))
    total.backward()
    return {n: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for n, p in net.params.items()}


def test_gradient_is_weighted_sum_of_head_gradients(rng):
    heads = [("pose", 1, 0.1), ("visibility", 2, 1.0), ("kp3d", 3, 0.7), ("kp2d", 3, 1.0)]
    data = tr.batch_arrays(toy_data(4, rng), np.arange(4))
    full = _grads(nw.build(toy_config(heads), seed=2, dtype=np.float64), data)
    acc = {k: np.zeros_like(v) for k, v in full.items()}
    for i, (c, d, w) in enumerate(heads):
        only = [(c2, d2, w2 if j == i else 0.0) for j, (c2, d2, w2) in enumerate(heads)]
        g = _grads(nw.build(toy_config(only), seed=2, dtype=np.float64), data)
        for k in acc:
            acc[k] += g[k]
    for k in full:
        assert np.allclose(full[k], acc[k], atol=1e-12)


def test_head_isolation(rng):
    heads = [("pose", 1, 1.0), ("kp3d", 2, 0.0), ("kp2d", 3, 0.0)]
    g = _grads(nw.build(toy_config(heads), seed=1, dtype=np.float64), tr.batch_arrays(toy_data(4, rng), np.arange(4)))
    for name, grad in g.items():
        if name.startswith(("conv2.", "conv3.", "kp3d@", "kp2d@")):
            assert np.all(grad == 0), name
    assert np.any(g["conv1.kernel"] != 0)


def test_non_finite_gradient_leaves_weights(rng):
    net = nw.build(toy_config())
    data = toy_data(2, rng)
    batch = tr.batch_arrays(data, np.arange(2))
    batch["kp2d"] = batch["kp2d"].copy()
    batch["kp2d"][0, 0] = np.inf
    before = {k: v.copy() for k, v in net.state_dict().items() if "running" not in k}
    with pytest.raises(NonFiniteGradient), np.errstate(invalid="ignore"):
        tr.training_step(net, tn.SGD(net.parameters()), batch)
    assert all(np.array_equal(before[k], net.state_dict()[k]) for k in before)


def test_zero_epochs_returns_initial_weights(rng):
    net = nw.build(toy_config())
    init = {k: v.copy() for k, v in net.state_dict().items()}
    res = tr.train(net, toy_data(10, rng), cfg=tr.TrainConfig(max_epochs=0, batch=5))
    assert res.log == [] and res.steps == 0
    assert all(np.array_equal(init[k], res.best_state[k]) for k in init)


def _mixed(n, rng):
    classes = (["full"] * 5 + ["truncated"] * 2 + ["multi_object"] * 3) * (n // 10)
    return toy_data(n, rng, classes=classes)


def test_two_runs_identical_logs(tmp_path):
    logs = []
    for run in ("a", "b"):
        rng = np.random.default_rng(0)
        data, val = _mixed(30, rng), _mixed(10, rng)
        cfg = tr.TrainConfig(batch=10, max_epochs=2, eval_every=2, seed=3)
        res = tr.train(nw.build(toy_config(dropout=0.2, dropout_after=(1,)), seed=1), data, val, cfg, tmp_path / run)
        logs.append([{k: v for k, v in r.items() if k != "seconds"} for r in res.log])
    assert logs[0] == logs[1] and len(logs[0]) == 6
    assert (tmp_path / "a" / "best.dscw").exists() and (tmp_path / "a" / "last.dscw").exists()
    rows = list(csv.DictReader(open(tmp_path / "a" / "train_log.csv")))
    assert len(rows) == 6 and "loss[kp2d@3]" in rows[0] and rows[1]["val_loss"] != ""


def test_best_checkpoint_is_lowest_validation_loss(tmp_path):
    rng = np.random.default_rng(4)
    data, val = _mixed(20, rng), _mixed(10, rng)
    res = tr.train(nw.build(toy_config()), data, val, tr.TrainConfig(batch=10, max_epochs=4, eval_every=1, lr=0.05), tmp_path)
    vals = [r["val_loss"] for r in res.log]
    assert res.best_metrics["val_loss"] == min(vals)
    state, meta = tn.load_checkpoint(tmp_path / "best.dscw")
    assert meta["step"] == res.best_metrics["step"]
    assert all(np.array_equal(state[k], res.best_state[k]) for k in state)


def test_class_shortage_raises(rng):
    data = toy_data(20, rng)  # only "full" samples
    with pytest.raises(ConfigError):
        tr.train(nw.build(toy_config()), data, cfg=tr.TrainConfig(batch=10, max_epochs=1))


def test_batch_composition(rng):
    classes = np.array(["full"] * 60 + ["truncated"] * 20 + ["multi_object"] * 40)
    s = tr.BatchSampler(classes, None, 100, {"full": 50, "truncated": 20, "multi_object": 30}, rng)
    for _ in range(5):
        idx = s.next()
        names, counts = np.unique(classes[idx], return_counts=True)
        assert dict(zip(names, counts)) == {"full": 50, "truncated": 20, "multi_object": 30}


def test_category_split_sampler(rng):
    cats = np.array(["chair"] * 30 + ["sofa"] * 30)
    s = tr.BatchSampler(None, cats, 20, None, rng)
    idx = s.next()
    assert len(idx) == 20 and len(set(idx.tolist())) == 20


def test_plateau_schedule():
    s = tr.PlateauSchedule(0.01, patience=5, threshold=0.01, factor=0.1, max_reductions=3)
    assert s.update(1.0) == 0.01
    for _ in range(4):
        assert s.update(0.995) == 0.01  # under 1% better does not count
    assert s.update(0.995) == pytest.approx(0.001)
    assert s.update(0.5) == pytest.approx(0.001)
    for _ in range(20):
        s.update(0.5)
    assert s.reductions == 3 and s.lr == pytest.approx(1e-5)


def test_network_checkpoint_round_trip(tmp_path, rng):
    net = nw.build(toy_config(), seed=5)
    tn.save_checkpoint(tmp_path / "n.dscw", net.state_dict(), {"network": net.config.to_dict()})
    state, meta = tn.load_checkpoint(tmp_path / "n.dscw")
    other = nw.build(nw.NetworkConfig.from_dict(meta["network"]), seed=9)
    other.load_state_dict(state)
    img = rng.uniform(size=(2, 8, 8, 1))
    a, b = net.predict(img), other.predict(img)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    tn.save_checkpoint(tmp_path / "m.dscw", other.state_dict(), meta)
    assert (tmp_path / "n.dscw").read_bytes() == (tmp_path / "m.dscw").read_bytes()


def test_toy_network_gradient_check(rng):
    net = nw.build(toy_config(dropout=0.3, dropout_after=(1,)), seed=3)
    batch = tr.batch_arrays(toy_data(3, rng), np.arange(3))
    rep = tr.network_grad_check(net, batch, tolerance=1e-4, num_checks=40, eps=1e-6)
    assert rep.passed, rep.max_rel_error
