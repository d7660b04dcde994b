import numpy as np
import pytest
from hypothesis import given, strategies as st

from disco import tensornet as tn
from disco.errors import FormatError, InsufficientBatch, NonFiniteGradient, ShapeError
from disco.tensornet import init


def naive_conv(x, k, stride):
    n, h, w, cin = x.shape
    cout = k.shape[3]
    ho, wo = -(-h // stride), -(-w // stride)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out = np.zeros((n, ho, wo, cout))
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                for o in range(cout):
                    s = 0.0
                    for di in range(3):
                        for dj in range(3):
                            for c in range(cin):
                                s += xp[b, i * stride + di, j * stride + dj, c] * k[di, dj, c, o]
                    out[b, i, j, o] = s
    return out


def check(loss_fn, params, tol=1e-4):
    report = tn.grad_check(loss_fn, params, tolerance=tol, num_checks=40, rng=np.random.default_rng(0))
    assert report.passed, report.entries
    return report


# conv3x3

def test_conv_identity_kernel(rng):
    x = rng.random((2, 5, 5, 3))
    k = np.zeros((3, 3, 3, 3))
    k[1, 1] = np.eye(3)
    assert np.allclose(tn.conv3x3(x, k).data, x)


def test_conv_all_ones_constant_interior():
    x = np.full((1, 6, 6, 1), 2.5)
    out = tn.conv3x3(x, np.ones((3, 3, 1, 1))).data
    assert out[0, 3, 3, 0] == pytest.approx(9 * 2.5)
    assert out[0, 0, 0, 0] == pytest.approx(4 * 2.5)  # zero padding at the corner


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_matches_loop_oracle(rng, stride):
    x = rng.normal(size=(2, 6, 6, 2))
    k = rng.normal(size=(3, 3, 2, 3))
    assert np.allclose(tn.conv3x3(x, k, stride).data, naive_conv(x, k, stride), atol=1e-6)


@pytest.mark.parametrize("size,stride,expect", [(6, 2, 3), (7, 2, 4), (7, 1, 7)])
def test_conv_output_size(size, stride, expect):
    out = tn.conv3x3(np.zeros((1, size, size, 1)), np.zeros((3, 3, 1, 2)), stride)
    assert out.shape == (1, expect, expect, 2)


def test_conv_shape_errors():
    with pytest.raises(ShapeError):
        tn.conv3x3(np.zeros((1, 4, 4, 2)), np.zeros((3, 3, 3, 1)))
    with pytest.raises(ShapeError):
        tn.conv3x3(np.zeros((1, 4, 4, 2)), np.zeros((3, 3, 2, 1)), stride=3)


@pytest.mark.parametrize("stride,size", [(1, 5), (2, 6), (2, 7)])
def test_conv_gradients(rng, stride, size):
    x = tn.parameter(rng.normal(size=(2, size, size, 2)), "x")
    k = tn.parameter(rng.normal(size=(3, 3, 2, 3)), "k")
    t = rng.normal(size=tn.conv3x3(x, k, stride).shape)
    check(lambda: tn.l2_loss(tn.conv3x3(x, k, stride), t), [x, k])


# batch norm

def test_batchnorm_standardizes(rng):
    x = rng.normal(3.0, 2.0, size=(8, 4, 4, 5))
    st_ = tn.BatchNormState(5, np.float64)
    out = tn.batchnorm(x, np.ones(5), np.zeros(5), st_, training=True).data
    assert np.allclose(out.mean(axis=(0, 1, 2)), 0, atol=1e-5)
    assert np.allclose(out.var(axis=(0, 1, 2)), 1, atol=1e-5)


def test_batchnorm_constant_input_gives_shift():
    x = np.full((4, 3, 3, 2), 7.0)
    shift = np.array([0.5, -1.0])
    out = tn.batchnorm(x, np.ones(2), shift, tn.BatchNormState(2, np.float64), training=True).data
    assert np.allclose(out, shift)


def test_batchnorm_batch_of_one_raises():
    with pytest.raises(InsufficientBatch):
        tn.batchnorm(np.zeros((1, 2, 2, 1)), np.ones(1), np.zeros(1), tn.BatchNormState(1), training=True)


def test_batchnorm_eval_is_pure(rng):
    state = tn.BatchNormState(3, np.float64)
    state.running_mean[:] = [1, 2, 3]
    state.running_var[:] = [4, 5, 6]
    before = (state.running_mean.copy(), state.running_var.copy())
    x = rng.normal(size=(1, 2, 2, 3))
    out = tn.batchnorm(x, np.ones(3), np.zeros(3), state, training=False).data
    assert np.array_equal(state.running_mean, before[0]) and np.array_equal(state.running_var, before[1])
    assert np.allclose(out, (x - before[0]) / np.sqrt(before[1] + tn.ops.BN_EPS))
    assert np.all(state.running_var > 0)


def test_batchnorm_gradients(rng):
    x = tn.parameter(rng.normal(size=(4, 3, 3, 2)), "x")
    g = tn.parameter(rng.normal(size=2) + 1.5, "scale")
    b = tn.parameter(rng.normal(size=2), "shift")
    t = rng.normal(size=x.shape)
    state = tn.BatchNormState(2, np.float64)
    check(lambda: tn.l2_loss(tn.batchnorm(x, g, b, state, True), t), [x, g, b])


# GAP / FC / ReLU / dropout / L2

def test_gap_constant():
    assert np.allclose(tn.global_average_pool(np.full((2, 3, 3, 4), 1.5)).data, 1.5)


def test_fc_identity(rng):
    x = rng.normal(size=(3, 4))
    assert np.allclose(tn.fully_connected(x, np.eye(4), np.zeros(4)).data, x)


def test_fc_shape_error():
    with pytest.raises(ShapeError):
        tn.fully_connected(np.zeros((2, 3)), np.zeros((4, 2)))


def test_small_op_gradients(rng):
    x = tn.parameter(rng.normal(size=(3, 4, 4, 2)), "x")
    w = tn.parameter(rng.normal(size=(2, 5)), "w")
    b = tn.parameter(rng.normal(size=5), "b")
    t = rng.normal(size=(3, 5))

    def loss():
        h = tn.relu(tn.dropout(x, 0.3, True, np.random.default_rng(5)))
        return tn.l2_loss(tn.fully_connected(tn.global_average_pool(h), w, b), t)

    check(loss, [x, w, b])


def test_dropout_scaling_and_eval(rng):
    x = np.ones((50, 40))
    out = tn.dropout(x, 0.2, True, rng).data
    assert set(np.unique(out)) <= {0.0, 1.25}
    assert tn.dropout(x, 0.2, False).data is not None
    assert np.array_equal(tn.dropout(x, 0.2, False).data, x)


def test_l2_examples(rng):
    assert tn.l2_loss(np.array([1.0, 0.0]), np.array([0.0, 0.0])).item() == pytest.approx(0.5)
    p = rng.normal(size=(4, 3))
    assert tn.l2_loss(p, p).item() == 0.0
    t = rng.normal(size=(4, 3))
    ref = sum((p[i, j] - t[i, j]) ** 2 for i in range(4) for j in range(3)) / 12
    assert tn.l2_loss(p, t).item() == pytest.approx(ref, abs=1e-7)
    with pytest.raises(ShapeError):
        tn.l2_loss(p, t[:2])


def test_weighted_sum_gradient(rng):
    a = tn.parameter(rng.normal(size=3), "a")
    t1, t2 = rng.normal(size=3), rng.normal(size=3)
    check(lambda: tn.weighted_sum([tn.l2_loss(a, t1), tn.l2_loss(a, t2)], [0.1, 1.0]), [a])


# SGD

def test_sgd_zero_grad_zero_decay_unchanged(rng):
    w = rng.normal(size=5)
    w0 = w.copy()
    tn.sgd_step([w], [np.zeros(5)], [np.zeros(5)], lr=0.1, weight_decay=0.0)
    assert np.array_equal(w, w0)


def test_sgd_single_step_formula(rng):
    w, g = rng.normal(size=4), rng.normal(size=4)
    expect = w - 0.01 * (g + 1e-4 * w)
    tn.sgd_step([w], [g], [np.zeros(4)], lr=0.01)
    assert np.allclose(w, expect, rtol=0, atol=1e-15)


def test_sgd_quadratic_trajectory_matches_scalar_reference():
    a = np.array([3.0, 0.5])
    w = np.array([1.0, -2.0])
    v = np.zeros(2)
    ref_w, ref_v = [1.0, -2.0], [0.0, 0.0]
    for _ in range(10):
        tn.sgd_step([w], [a * w], [v], lr=0.05, momentum=0.9, weight_decay=1e-4)
        for i in range(2):
            g = a[i] * ref_w[i]
            ref_v[i] = 0.9 * ref_v[i] + g + 1e-4 * ref_w[i]
            ref_w[i] = ref_w[i] - 0.05 * ref_v[i]
        assert np.allclose(w, ref_w, rtol=0, atol=1e-10)


def test_sgd_non_finite_gradient_leaves_weights():
    w = np.ones(3)
    with pytest.raises(NonFiniteGradient):
        tn.sgd_step([w, np.ones(2)], [np.zeros(3), np.array([np.nan, 0.0])], [np.zeros(3), np.zeros(2)], 0.1)
    assert np.array_equal(w, np.ones(3))


# init, determinism, checkpoint

def test_glorot_bounds(rng):
    k = init.conv_kernel(rng, 16, 32)
    limit = np.sqrt(6.0 / (9 * 16 + 9 * 32))
    assert k.shape == (3, 3, 16, 32) and np.abs(k).max() <= limit


def test_forward_is_deterministic(rng):
    x = rng.normal(size=(3, 8, 8, 2)).astype(np.float32)
    k = rng.normal(size=(3, 3, 2, 4)).astype(np.float32)
    a = tn.conv3x3(x, k, 2).data
    b = tn.conv3x3(x, k, 2).data
    assert a.tobytes() == b.tobytes()


def test_checkpoint_round_trip(tmp_path, rng):
    tensors = {"a": rng.normal(size=(3, 3, 2, 4)).astype(np.float32), "b": rng.normal(size=7), "step": np.arange(3)}
    tn.save_checkpoint(tmp_path / "w.dscw", tensors, {"note": "x"})
    back, meta = tn.load_checkpoint(tmp_path / "w.dscw")
    assert meta == {"note": "x"}
    for k, v in tensors.items():
        assert back[k].dtype == v.dtype and back[k].tobytes() == v.tobytes()
    tn.save_checkpoint(tmp_path / "w2.dscw", back, meta)
    assert (tmp_path / "w.dscw").read_bytes() == (tmp_path / "w2.dscw").read_bytes()


def test_checkpoint_corruption(tmp_path, rng):
    path = tmp_path / "w.dscw"
    tn.save_checkpoint(path, {"a": rng.normal(size=4)})
    raw = path.read_bytes()
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        tn.load_checkpoint(path)
    path.write_bytes(raw[:-3])
    with pytest.raises(FormatError):
        tn.load_checkpoint(path)


@given(st.integers(1, 3), st.integers(3, 7), st.integers(1, 3), st.integers(1, 3), st.sampled_from([1, 2]))
def test_conv_linear_in_kernel(n, size, cin, cout, stride):
    r = np.random.default_rng(n * 100 + size)
    x = r.normal(size=(n, size, size, cin))
    k1, k2 = r.normal(size=(3, 3, cin, cout)), r.normal(size=(3, 3, cin, cout))
    lhs = tn.conv3x3(x, k1 + 2 * k2, stride).data
    rhs = tn.conv3x3(x, k1, stride).data + 2 * tn.conv3x3(x, k2, stride).data
    assert np.allclose(lhs, rhs, atol=1e-9)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=12))
def test_relu_nonnegative_and_idempotent(values):
    x = np.array(values)
    once = tn.relu(x).data
    assert np.all(once >= 0) and np.array_equal(tn.relu(once).data, once)
