import math

import numpy as np
import pytest

from framescope.core import ClassId, DimensionMismatch, MaskSet
from framescope.dataio import SynthSpec, generate_synthetic
from framescope.segnet import (
    ConfigInvalid,
    ShapeMismatch,
    SegConfig,
    TrainConfig,
    build_model,
    forward,
    gradient_check,
    gradient_probes,
    layer_shapes,
    load_model,
    loss_and_grads,
    loss_ce,
    predict,
    save_model,
    softmax,
    stack_samples,
    train,
)

TINY = SegConfig(input_side=8, base_channels=2, depth=1, seed=3)


def random_sample(rng, side):
    labels = rng.integers(0, 5, (side, side))
    return rng.random((side, side, 3)), MaskSet.from_labels(labels)


def test_config_validation():
    with pytest.raises(ConfigInvalid):
        SegConfig(input_side=30, depth=3)
    with pytest.raises(ConfigInvalid):
        SegConfig(depth=0)
    with pytest.raises(ConfigInvalid):
        TrainConfig(steps=0)
    with pytest.raises(ConfigInvalid):
        TrainConfig(learning_rate=0.0)


def test_parameter_count_hand_tally():
    # 3x3 kernels: 9 * cin * cout + cout; channels 8, 16, 32, 64
    tally = (
        (9 * 3 * 8 + 8) + 2 * (9 * 8 * 8 + 8)
        + (9 * 8 * 16 + 16) + 2 * (9 * 16 * 16 + 16)
        + (9 * 16 * 32 + 32) + 2 * (9 * 32 * 32 + 32)
        + (9 * 32 * 64 + 64) + 2 * (9 * 64 * 64 + 64)
        + (9 * 96 * 32 + 32) + (9 * 48 * 16 + 16) + (9 * 24 * 8 + 8)
        + (8 * 5 + 5)
    )
    assert tally == 159077
    assert build_model(SegConfig(32, 8, 3, seed=0)).num_parameters() == tally


def test_layer_shapes_chain():
    shapes = layer_shapes(SegConfig(32, 4, 2))
    assert shapes["dec1.w"] == (3, 3, 16 + 8, 8)
    assert shapes["head.w"] == (1, 1, 4, 5)


def test_build_is_deterministic():
    a, b = build_model(SegConfig(32, 8, 3, seed=7)), build_model(SegConfig(32, 8, 3, seed=7))
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    c = build_model(SegConfig(32, 8, 3, seed=8))
    assert not np.array_equal(a.params["stem.w"], c.params["stem.w"])
    assert all(not b.params[k].any() for k in b.params if k.endswith(".b"))


def test_forward_shape_and_determinism(rng):
    m = build_model(SegConfig(16, 4, 2, seed=1))
    img = rng.random((16, 16, 3))
    out = forward(m, img)
    assert out.shape == (16, 16, 5) and np.isfinite(out).all()
    assert np.array_equal(out, forward(m, img))


def test_forward_rejects_wrong_size(rng):
    with pytest.raises(DimensionMismatch):
        forward(build_model(SegConfig(16, 4, 2)), rng.random((8, 8, 3)))


def test_zero_model_is_uniform(rng):
    m = build_model(TINY).zeros_like()
    out = forward(m, rng.random((8, 8, 3)))
    assert not out.any()
    np.testing.assert_allclose(softmax(out), 0.2)
    assert predict(m, rng.random((8, 8, 3))) == MaskSet.empty(8, 8)


def test_softmax_sums_to_one(rng):
    p = softmax(rng.normal(0, 10, (6, 6, 5)))
    assert np.abs(p.sum(axis=-1) - 1).max() < 1e-6


def test_uniform_logits_loss_is_ln5(rng):
    _, masks = random_sample(rng, 6)
    assert abs(loss_ce(np.zeros((6, 6, 5)), masks) - math.log(5)) < 1e-9


def test_saturated_logits_loss():
    labels = np.array([[0, 1], [3, 4]])
    logits = np.zeros((2, 2, 5))
    np.put_along_axis(logits, labels[..., None], 20.0, axis=-1)
    assert loss_ce(logits, MaskSet.from_labels(labels)) < 1e-6


def test_two_by_two_loss_oracle():
    logits = np.array([[[1, 0, 0, 0, 0], [0, 2, 0, 0, 0]], [[0, 0, 3, 0, 0], [0, 0, 0, 0, -1]]], dtype=float)
    labels = np.array([[0, 1], [3, 4]])
    # from a separate math.exp / math.log script
    assert loss_ce(logits, MaskSet.from_labels(labels)) == pytest.approx(1.7483436287057228, abs=1e-12)


def test_loss_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        loss_ce(np.zeros((3, 3, 5)), MaskSet.empty(2, 2))


def test_gradient_check_tiny_model(rng):
    sample = random_sample(rng, 8)
    assert gradient_check(build_model(TINY), sample, probes=50) < 1e-4


def test_gradient_check_catches_corruption(rng):
    sample = random_sample(rng, 8)
    err = gradient_check(build_model(TINY), sample, probes=10, names=["enc0.res1.w"], corrupt={"enc0.res1.w": 2.0})
    assert err > 0.1


def test_zero_model_bias_gradients(rng):
    sample = random_sample(rng, 8)
    found = gradient_probes(build_model(TINY).zeros_like(), sample, probes=5, names=["head.b"])
    assert len(found) == 5
    assert max(abs(a - n) for _, _, a, n in found) < 1e-6


def test_one_small_step_rarely_increases_loss():
    ds = generate_synthetic(SynthSpec(count=10, side=32, seed=9))
    worse = 0
    for trial in range(100):
        s = ds[trial % len(ds)]
        m = build_model(SegConfig(32, 4, 2, seed=trial), dtype=np.float64)
        x, y = stack_samples([(s.image, s.masks)], np.float64)
        before, grads, _ = loss_and_grads(m, x, y)
        for k in m.params:
            m.params[k] -= 1e-3 * grads[k]
        after, _, _ = loss_and_grads(m, x, y)
        worse += after > before
    assert worse < 5


def test_predict_planes_disjoint(rng):
    m = build_model(SegConfig(16, 4, 2, seed=5))
    for k in ClassId:
        m.params["head.b"][k + 1] = 0.3 * k
    masks = predict(m, rng.random((16, 16, 3)))
    assert masks.planes.sum(axis=0).max() <= 1


def test_predict_forced_block():
    m = build_model(SegConfig(8, 2, 1)).zeros_like()
    m.params["head.b"][ClassId.DENT + 1] = 1.0
    masks = predict(m, np.zeros((8, 8, 3)))
    assert masks[ClassId.DENT].all() and masks.planes.sum() == 64


def tiny_data(count=6, seed=1):
    ds = generate_synthetic(SynthSpec(count=count, side=32, seed=seed))
    return ds.pairs()


def test_train_single_step_bookkeeping():
    data = tiny_data(2)
    _, hist = train(build_model(SegConfig(32, 2, 1)), data, data, TrainConfig(steps=1))
    assert len(hist.losses) == 1 and len(hist.val_miou) == 1
    assert hist.best_epoch == 0 and hist.best_val == hist.val_miou[0]


def test_train_keeps_best_checkpoint():
    data = tiny_data(4)
    tc = TrainConfig(steps=12, batch_size=2, learning_rate=0.05, seed=4)
    best, hist = train(build_model(SegConfig(32, 4, 1, seed=2)), data, data, tc)
    # validation after every 2-step epoch
    assert len(hist.val_miou) == 6
    assert hist.best_val == max(hist.val_miou)
    assert hist.best_epoch == hist.val_miou.index(hist.best_val)
    assert all(np.isfinite(hist.losses))


def test_train_is_deterministic():
    data = tiny_data(4)
    tc = TrainConfig(steps=5, batch_size=3, seed=11)
    a, ha = train(build_model(SegConfig(32, 2, 1, seed=1)), data, data, tc)
    b, hb = train(build_model(SegConfig(32, 2, 1, seed=1)), data, data, tc)
    assert ha.losses == hb.losses
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_train_does_not_mutate_input_model():
    data = tiny_data(2)
    m = build_model(SegConfig(32, 2, 1))
    before = {k: v.copy() for k, v in m.params.items()}
    train(m, data, data, TrainConfig(steps=2))
    assert all(np.array_equal(before[k], m.params[k]) for k in m.params)


def test_checkpoint_roundtrip(tmp_path):
    m = build_model(SegConfig(16, 4, 2, seed=6))
    save_model(tmp_path / "m.bin", m)
    assert (tmp_path / "m.bin").read_bytes()[:5] == b"FSSEG"
    back = load_model(tmp_path / "m.bin")
    assert back.config == m.config
    assert all(np.array_equal(back.params[k], m.params[k]) and back.params[k].dtype == m.params[k].dtype for k in m.params)


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_model(tmp_path / "x.bin")
