import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rayocc.autodiff import (
    Adam, AdamState, CheckpointError, NonFiniteError, Tensor, TensorError, adam_step, backward, gradcheck,
    load_tensors, no_grad, ops, precision, save_tensors,
)
from rayocc.autodiff.gradcheck import OP_KINDS, gradcheck_report, op_gradcheck_suite
from rayocc.autodiff.serialize import MAGIC


@pytest.fixture(autouse=True)
def double():
    with precision("double"):
        yield


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def test_every_op_kind_passes_gradcheck():
    worst = op_gradcheck_suite(seeds=range(5))
    assert set(worst) == set(OP_KINDS)
    bad = {k: v for k, v in worst.items() if not v < 1e-4}
    assert not bad


def test_gradcheck_without_params_is_zero():
    assert gradcheck(lambda: ops.sum_all(Tensor(np.ones(3))), []) == 0.0


def test_gradcheck_detects_a_wrong_backward():
    x = leaf([0.3, -0.7])

    def broken():
        return ops._out("broken", (x,), np.array(float(np.sum(x.data ** 2))), lambda g: (g * x.data,))

    assert gradcheck(broken, [x]) > 0.4


def test_largest_selection_probes_the_biggest_gradients():
    x = leaf([0.01, 3.0, -0.2, 1.0])
    seen = []

    def f():
        seen.append(x.data.copy())
        return ops.sum_all(ops.mul(ops.mul(x, x), x))

    assert gradcheck_report(f, {"x": x}, max_coords=1, select="largest")["x"] < 1e-8
    # probes perturb only x[1], whose gradient 3 x^2 is largest
    probed = {int(np.flatnonzero(a != [0.01, 3.0, -0.2, 1.0])[0]) for a in seen[1:]}
    assert probed == {1}
    with pytest.raises(ValueError, match="select"):
        gradcheck_report(f, {"x": x}, select="smallest")


def test_backward_twice_raises():
    x = leaf([1.0, 2.0])
    loss = ops.sum_all(ops.mul(x, x))
    backward(loss)
    np.testing.assert_allclose(x.grad, [2.0, 4.0])
    with pytest.raises(TensorError, match="consumed"):
        backward(loss)


def test_backward_needs_scalar_loss():
    x = leaf([1.0, 2.0])
    with pytest.raises(TensorError, match="scalar"):
        backward(ops.mul(x, x))


def test_fan_out_accumulates():
    x = leaf([3.0])
    y = ops.add(ops.mul(x, x), ops.mul(x, 2.0))
    backward(ops.sum_all(y))
    assert x.grad[0] == pytest.approx(8.0)


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with no_grad():
        y = ops.mul(x, x)
    assert not y.requires_grad
    with pytest.raises(TensorError):
        backward(ops.sum_all(y))


def test_shape_mismatch_is_an_error():
    with pytest.raises(TensorError, match="shape mismatch"):
        ops.add(leaf(np.ones((2, 3))), leaf(np.ones((3, 2))))


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_nonfinite_output_raises():
    with pytest.raises(NonFiniteError):
        ops.mul(leaf([1e308]), 1e10)


def test_precision_context_switches_dtype():
    with precision("single"):
        assert Tensor([1.0]).dtype == np.float32
        with precision("double"):
            assert Tensor([1.0]).dtype == np.float64
        assert Tensor([1.0]).dtype == np.float32


def test_tapes_are_per_thread():
    errors = []

    def work(seed):
        try:
            rng = np.random.default_rng(seed)
            for _ in range(50):
                a = rng.standard_normal(4)
                x = leaf(a)
                backward(ops.sum_all(ops.mul(x, x)))
                np.testing.assert_allclose(x.grad, 2 * a)
        except Exception as exc:  # pragma: no cover - reported below
            errors.append(exc)

    threads = [threading.Thread(target=work, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors


def test_bce_large_logits_stay_finite():
    x = leaf([1000.0, -1000.0, 0.0])
    t = np.array([1.0, 0.0, 1.0])
    loss = ops.bce_with_logits(x, t)
    assert loss.item() == pytest.approx(math.log(2) / 3, rel=1e-12)
    backward(loss)
    np.testing.assert_allclose(x.grad, [0.0, 0.0, -0.5 / 3], atol=1e-12)


def test_bce_rejects_non_binary_targets():
    with pytest.raises(TensorError):
        ops.bce_with_logits(leaf([0.0]), np.array([0.5]))


def test_bce_at_zero_logits_is_ln2():
    loss = ops.bce_with_logits(leaf(np.zeros((4, 8))), np.random.default_rng(0).integers(0, 2, (4, 8)))
    assert loss.item() == pytest.approx(math.log(2))


def test_conv2d_matches_naive_loops():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 6, 5))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    for stride, pad in ((1, 1), (2, 0), (2, 1)):
        got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad).data
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        ho = (xp.shape[2] - 3) // stride + 1
        wo = (xp.shape[3] - 3) // stride + 1
        ref = np.zeros((2, 4, ho, wo))
        for n in range(2):
            for o in range(4):
                for i in range(ho):
                    for j in range(wo):
                        patch = xp[n, :, i * stride:i * stride + 3, j * stride:j * stride + 3]
                        ref[n, o, i, j] = np.sum(patch * w[o]) + b[o]
        np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-12)


def test_bilinear_sample_at_cell_centre_returns_cell():
    fm = np.arange(2 * 3 * 4 * 5, dtype=np.float64).reshape(2, 3, 4, 5)
    coords = np.array([[0.5, 0.5], [4.5, 3.5], [2.5, 1.5]])
    out = ops.bilinear_sample(Tensor(fm), np.array([0, 1, 1]), coords).data
    np.testing.assert_array_equal(out, np.stack([fm[0, :, 0, 0], fm[1, :, 3, 4], fm[1, :, 1, 2]]))


def test_bilinear_sample_midpoint_is_mean():
    rng = np.random.default_rng(0)
    fm = rng.standard_normal((1, 4, 3, 3))
    out = ops.bilinear_sample(Tensor(fm), np.array([0]), np.array([[1.0, 1.5]])).data[0]
    np.testing.assert_allclose(out, 0.5 * (fm[0, :, 1, 0] + fm[0, :, 1, 1]), atol=1e-12)


def test_bilinear_upsample_preserves_constants():
    x = Tensor(np.full((1, 2, 3, 4), 1.7))
    for align in (False, True):
        np.testing.assert_allclose(ops.bilinear_upsample(x, size=(7, 9), align_corners=align).data, 1.7)


def test_scatter_rows_matches_add_at():
    rng = np.random.default_rng(1)
    idx = rng.integers(0, 5, 40)
    vals = rng.standard_normal((40, 3))
    ref = np.zeros((7, 3))
    np.add.at(ref, idx, vals)
    np.testing.assert_allclose(ops.scatter_rows(7, idx, vals), ref, atol=1e-12)


def test_counters_track_fully_connected_macs():
    ops.reset_counters()
    ops.fully_connected(Tensor(np.ones((5, 3))), Tensor(np.ones((3, 4))), Tensor(np.zeros(4)), tag="probe")
    assert ops.counters["macs:probe"] == 5 * 3 * 4


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-10, 10)), arrays(np.float64, (3, 4), elements=st.floats(-10, 10)))
def test_add_and_mul_commute(a, b):
    np.testing.assert_array_equal(ops.add(Tensor(a), Tensor(b)).data, ops.add(Tensor(b), Tensor(a)).data)
    np.testing.assert_array_equal(ops.mul(Tensor(a), Tensor(b)).data, ops.mul(Tensor(b), Tensor(a)).data)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (6, 3), elements=st.floats(-50, 50)))
def test_sigmoid_in_unit_interval_and_symmetric(a):
    y = ops.sigmoid(Tensor(a)).data
    assert np.all((y >= 0) & (y <= 1))
    np.testing.assert_allclose(y + ops.sigmoid(Tensor(-a)).data, 1.0, atol=1e-12)


# optimiser ------------------------------------------------------------------------


def test_adam_first_step_moves_by_lr():
    p = {"w": leaf([1.0, -2.0, 3.0])}
    state = AdamState(lr=0.01)
    adam_step(p, {"w": np.array([0.5, -4.0, 1e-3])}, state)
    # bias-corrected first step is lr * g / (|g| + eps)
    np.testing.assert_allclose(p["w"].data, [0.99, -1.99, 2.99], atol=1e-7)
    assert state.t == 1


def test_adam_matches_reference_trajectory():
    rng = np.random.default_rng(0)
    w = rng.standard_normal(5)
    p = {"w": leaf(w.copy())}
    state = AdamState(lr=1e-2)
    m = np.zeros(5)
    v = np.zeros(5)
    for t in range(1, 21):
        g = rng.standard_normal(5)
        adam_step(p, {"w": g}, state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 1e-2 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p["w"].data, w, rtol=1e-12)


def test_adam_names_bad_parameter():
    p = {"enc.w": leaf([1.0])}
    with pytest.raises(NonFiniteError, match="enc.w"):
        adam_step(p, {"enc.w": np.array([np.nan])}, AdamState())
    with pytest.raises(TensorError, match="enc.w"):
        adam_step(p, {"enc.w": np.zeros(2)}, AdamState())


def test_adam_minimises_quadratic():
    x = leaf([3.0, -2.0])
    opt = Adam({"x": x}, lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        backward(ops.sum_all(ops.mul(x, x)))
        opt.step()
    assert np.all(np.abs(x.data) < 1e-2)


# checkpoints ------------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    t = {"a": rng.standard_normal((3, 4)).astype(np.float32), "b.c": np.zeros(0, np.float32),
         "scalar": np.array(2.5, np.float32)}
    save_tensors(tmp_path / "w.ronw", t)
    back = load_tensors(tmp_path / "w.ronw")
    assert list(back) == list(t)
    for k in t:
        np.testing.assert_array_equal(back[k], t[k])
        assert back[k].shape == t[k].shape


def test_checkpoint_bytes_are_deterministic(tmp_path):
    t = {"w": np.arange(6, dtype=np.float32).reshape(2, 3)}
    save_tensors(tmp_path / "a.ronw", t)
    save_tensors(tmp_path / "b.ronw", t)
    assert (tmp_path / "a.ronw").read_bytes() == (tmp_path / "b.ronw").read_bytes()
    assert (tmp_path / "a.ronw").read_bytes()[:4] == MAGIC


@pytest.mark.parametrize("damage", ["magic", "truncate", "trailing"])
def test_corrupt_checkpoint_rejected(tmp_path, damage):
    path = tmp_path / "w.ronw"
    save_tensors(path, {"w": np.ones((2, 2), np.float32)})
    raw = path.read_bytes()
    raw = {"magic": b"XXXX" + raw[4:], "truncate": raw[:-3], "trailing": raw + b"\0"}[damage]
    path.write_bytes(raw)
    with pytest.raises(CheckpointError):
        load_tensors(path)
