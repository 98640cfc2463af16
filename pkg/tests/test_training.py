import math

import numpy as np
import pytest

from rayocc.autodiff import Adam, load_tensors
from rayocc.dataset import GenConfig, generate_dataset, load_dataset
from rayocc.network import Ablation, load_checkpoint
from rayocc.seeding import stream
from rayocc.training import (
    TrainConfig, TrainingError, make_batch, new_network, read_log, train, training_step,
)


@pytest.fixture(scope="module")
def ds(tmp_path_factory):
    root = tmp_path_factory.mktemp("train_ds")
    generate_dataset(GenConfig(scenes=2, views=3, rays=64, samples=32, image_size=64, seed=2), root)
    return load_dataset(root)


def cfg(ds, tmp_path, **kw):
    base = dict(dataset=str(ds.root), out_dir=str(tmp_path / "run"), pixels_per_image=16, batch_images=4, steps=3,
                lr=1e-3)
    base.update(kw)
    return TrainConfig(**base)


def test_batch_shapes(ds, tmp_path):
    b = make_batch(ds, cfg(ds, tmp_path), np.random.default_rng(0))
    assert b.images.shape == (4, 64, 64, 3)
    assert b.pixels.shape == (64, 2) and b.bits.shape == (64, 32)
    assert len(set(b.views)) == 4
    np.testing.assert_array_equal(np.bincount(b.batch_idx), [16] * 4)


def test_full_ray_budget_uses_every_ray_once(ds, tmp_path):
    b = make_batch(ds, cfg(ds, tmp_path, pixels_per_image=64, batch_images=1), np.random.default_rng(1))
    stored = ds.views[b.views[0]].rays.pixels
    assert sorted(map(tuple, b.pixels.astype(np.float32))) == sorted(map(tuple, stored))


def test_batches_repeat_under_fixed_seed(ds, tmp_path):
    c = cfg(ds, tmp_path)
    ra, rb = stream(4, "train"), stream(4, "train")
    a = [make_batch(ds, c, ra) for _ in range(3)]
    b = [make_batch(ds, c, rb) for _ in range(3)]
    for x, y in zip(a, b):
        assert x.views == y.views
        np.testing.assert_array_equal(x.pixels, y.pixels)


def test_too_many_rays_requested(ds, tmp_path):
    with pytest.raises(TrainingError, match="stores 64 rays"):
        make_batch(ds, cfg(ds, tmp_path, pixels_per_image=65), np.random.default_rng(0))


@pytest.mark.parametrize("field, value", [("pixels_per_image", 0), ("batch_images", 0), ("steps", -1), ("lr", 0.0),
                                               ("stat_batches", -1)])
def test_config_validation(field, value):
    with pytest.raises(ValueError):
        TrainConfig(**{field: value})


def test_untrained_loss_near_chance(ds, tmp_path):
    c = cfg(ds, tmp_path, pixels_per_image=64)
    net = new_network(TrainConfig(network={"m": 32}))
    b = make_batch(ds, c, np.random.default_rng(0))
    b.bits = (np.random.default_rng(1).random(b.bits.shape) < 0.5).astype(np.float64)
    loss = training_step(net, b, Adam(net.params, lr=1e-12), Ablation())
    assert abs(loss - math.log(2)) < 0.15


def test_training_is_deterministic(ds, tmp_path):
    a = train(cfg(ds, tmp_path / "a"), ds)
    b = train(cfg(ds, tmp_path / "b"), ds)
    assert a.losses == b.losses
    assert a.checkpoint.read_bytes() == b.checkpoint.read_bytes()


def test_zero_steps_checkpoint_equals_init(ds, tmp_path):
    c = cfg(ds, tmp_path, steps=0)
    res = train(c, ds)
    init = new_network(c)
    saved = load_tensors(res.checkpoint)
    for k, p in init.params.items():
        np.testing.assert_array_equal(saved[k], p.data)


def test_log_header_records_ablation(ds, tmp_path):
    res = train(cfg(ds, tmp_path, use_scale=False, checkpoint_every=2), ds)
    flags, rows = read_log(res.log)
    assert flags == {"use_scale": False, "use_global": True, "use_local": True}
    assert rows.shape == (3, 3)
    np.testing.assert_array_equal(rows[:, 0], [1, 2, 3])
    assert np.all(rows[:, 2] > 0)
    assert (tmp_path / "run" / "ckpt_000002.ronw").exists()
    _, meta = load_checkpoint(res.checkpoint)
    assert meta["ablation"]["use_scale"] is False and meta["step"] == 3


def test_recalibration_averages_batch_statistics(ds, tmp_path):
    c = cfg(ds, tmp_path)
    batches = [make_batch(ds, c, np.random.default_rng(i)) for i in range(2)]
    args = [(b.images, b.batch_idx, b.pixels, b.s) for b in batches]
    frozen = []
    for a in args:
        net = new_network(c).freeze_statistics(*a)
        frozen.append({k: v.copy() for k, v in net.buffers.items()})
    net = new_network(c).recalibrate_statistics(iter(args))
    assert not net.training
    for k in net.buffers:
        np.testing.assert_allclose(net.buffers[k], (frozen[0][k] + frozen[1][k]) / 2, rtol=1e-5, atol=1e-7)


def test_stat_batches_zero_keeps_moving_average(ds, tmp_path):
    a = train(cfg(ds, tmp_path / "a", stat_batches=0), ds)
    b = train(cfg(ds, tmp_path / "b"), ds)
    assert a.losses == b.losses
    key = next(k for k in a.net.buffers if k.endswith("running_var"))
    assert not np.array_equal(a.net.buffers[key], b.net.buffers[key])


def test_no_scale_model_ignores_scale(ds, tmp_path):
    res = train(cfg(ds, tmp_path, use_scale=False), ds)
    net = res.net
    img = ds.views[0].image
    p = ds.views[0].rays.pixels[:8]
    ab = Ablation(use_scale=False)
    from rayocc.autodiff import no_grad

    with no_grad():
        a = net.forward(img, np.zeros(8, int), p, [0.5], ab).data
        b = net.forward(img, np.zeros(8, int), p, [1.0], ab).data
    np.testing.assert_array_equal(a, b)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts_with_step(ds, tmp_path):
    c = cfg(ds, tmp_path)
    net = new_network(c)
    net.params["dec.out.w"].data[:] = np.inf
    b = make_batch(ds, c, np.random.default_rng(0))
    with pytest.raises(TrainingError, match="step 7"):
        training_step(net, b, Adam(net.params, lr=1e-3), Ablation(), step=7)


def test_dataset_mismatch_reported(ds, tmp_path):
    with pytest.raises(TrainingError, match="M=16"):
        train(cfg(ds, tmp_path, network={"m": 16}), ds)


@pytest.mark.slow
def test_overfit_loss_trend(overfit_run):
    # EMA (span 100) sampled every 500 steps after warm-up must decrease
    losses = np.array(overfit_run[1]["losses"])
    alpha = 2 / 101
    ema = np.empty_like(losses)
    ema[0] = losses[0]
    for i in range(1, len(losses)):
        ema[i] = (1 - alpha) * ema[i - 1] + alpha * losses[i]
    marks = ema[499::500]
    assert np.all(np.diff(marks) < 0), marks
    assert overfit_run[1]["final_train_loss"] < 0.05
