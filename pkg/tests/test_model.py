import numpy as np
import pytest

from ccpattack.ccp import CcpParams
from ccpattack.image import Dataset
from ccpattack.model import (
    CcpAugmentation,
    Conv2D,
    Dense,
    Flatten,
    MaxPool2,
    Model,
    ReLU,
    Softmax,
    SpecError,
    TrainConfig,
    adam_step,
    evaluate,
    init_model,
    load_checkpoint,
    save_checkpoint,
    small_cnn,
    softmax,
    train,
)
from ccpattack.prng import RngState


def numeric_grad(model, x, y, k, idx, h=1e-5):
    p = model.params[k]
    old = p[idx]
    p[idx] = old + h
    lp = model.loss(x, y)
    p[idx] = old - h
    lm = model.loss(x, y)
    p[idx] = old
    return (lp - lm) / (2 * h)


def rel_err(a, b):
    d = max(abs(a), abs(b))
    return 0.0 if d == 0 else abs(a - b) / d


def test_init_deterministic_and_bounded():
    a = init_model(small_cnn(10), seed=3)
    b = init_model(small_cnn(10), seed=3)
    c = init_model(small_cnn(10), seed=4)
    assert all(np.array_equal(p, q) for p, q in zip(a.params, b.params))
    assert not np.array_equal(a.params[0], c.params[0])
    conv1 = a.params[0]
    assert np.abs(conv1).max() <= np.sqrt(6 / 27)
    assert not a.params[1].any()
    dense = a.params[4]
    assert np.abs(dense).max() <= np.sqrt(6 / dense.shape[0])


@pytest.mark.parametrize(
    "layers",
    [
        [Flatten, Dense(3)],  # no softmax
        [Dense(3), Softmax],  # dense before flatten
        [Conv2D(4), Softmax],  # softmax on spatial input
        [MaxPool2, MaxPool2, MaxPool2, Flatten, Dense(2), Softmax],  # collapses 4x4
        [Flatten, Softmax, Dense(2), Softmax],
    ],
)
def test_bad_specs(layers):
    with pytest.raises(SpecError):
        init_model(layers, (3, 4, 4))


def test_forward_rows_are_distributions():
    m = init_model(small_cnn(10), seed=0)
    x = np.random.default_rng(0).uniform(0, 255, (5, 3, 32, 32))
    p = m.forward(x)
    assert p.shape == (5, 10)
    assert (p > 0).all()
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)


def test_shape_mismatch():
    m = init_model(small_cnn(10), seed=0)
    with pytest.raises(SpecError):
        m.forward(np.zeros((1, 3, 16, 16)))


def test_zero_dense_is_uniform():
    m = init_model([Flatten, Dense(4), Softmax], (3, 2, 2))
    m.params[0][:] = 0
    p = m.forward(np.full((3, 3, 2, 2), 100.0))
    assert np.allclose(p, 0.25)


def test_softmax_shift_invariant():
    z = np.random.default_rng(1).normal(size=(4, 6))
    np.testing.assert_allclose(softmax(z), softmax(z + 123.4), atol=1e-12)


def test_conv_against_hand_convolution():
    m = init_model([Conv2D(1), Flatten, Dense(1), Softmax], (3, 3, 3), seed=2)
    x = np.random.default_rng(2).uniform(0, 255, (1, 3, 3, 3))
    wt, b = m.params[0], m.params[1]
    xp = np.pad(x[0] / 255.0, ((0, 0), (1, 1), (1, 1)))
    hand = np.zeros((3, 3))
    for r in range(3):
        for c in range(3):
            s = b[0]
            for ch in range(3):
                for i in range(3):
                    for j in range(3):
                        s += wt[0, ch, i, j] * xp[ch, r + i, c + j]
            hand[r, c] = s
    from ccpattack.model import _conv_forward

    out, _ = _conv_forward(x / 255.0, wt, b)
    np.testing.assert_allclose(out[0, 0], hand, rtol=1e-13, atol=1e-13)


def test_pool_picks_max_and_routes_gradient():
    from ccpattack.model import _pool_backward, _pool_forward

    x = np.array([[[[1.0, 5.0], [3.0, 2.0]]]])
    out, arg = _pool_forward(x)
    assert out[0, 0, 0, 0] == 5.0
    dx = _pool_backward(np.ones((1, 1, 1, 1)), x.shape, arg)
    assert dx.tolist() == [[[[0.0, 1.0], [0.0, 0.0]]]]


def test_gradient_check_all_layer_kinds():
    m = init_model(small_cnn(3), (3, 8, 8), seed=5)
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 255, (4, 3, 8, 8))
    y = np.array([0, 1, 2, 1])
    res = m.backward(x, y)
    sel = RngState(1)
    errs = []
    for _ in range(200):
        k = sel.below(len(m.params))
        idx = np.unravel_index(sel.below(m.params[k].size), m.params[k].shape)
        errs.append(rel_err(res.grads[k][idx], numeric_grad(m, x, y, k, idx)))
    assert max(errs) <= 1e-5


def test_input_gradient_matches_finite_difference():
    m = init_model(small_cnn(3), (3, 8, 8), seed=6)
    x = np.random.default_rng(3).uniform(0, 255, (2, 3, 8, 8))
    y = np.array([2, 0])
    g = m.backward(x, y).input_grad
    for idx in [(0, 0, 1, 1), (1, 2, 7, 3), (0, 1, 4, 5)]:
        xp, xm = x.copy(), x.copy()
        xp[idx] += 1e-3
        xm[idx] -= 1e-3
        num = (m.loss(xp, y) - m.loss(xm, y)) / 2e-3
        assert rel_err(g[idx], num) <= 1e-5


def test_logit_gradient_is_p_minus_onehot():
    m = init_model([Flatten, Dense(3), Softmax], (3, 1, 1), seed=0)
    x = np.array([[[[10.0]], [[200.0]], [[90.0]]]])
    res = m.backward(x, [1])
    p = res.probs[0]
    expected_db = p - np.eye(3)[1]
    np.testing.assert_allclose(res.grads[1], expected_db, atol=1e-15)


def test_loss_near_zero_when_confident():
    m = init_model([Flatten, Dense(2), Softmax], (3, 1, 1))
    m.params[0][:] = 0
    m.params[1][:] = [50.0, -50.0]
    assert m.backward(np.zeros((1, 3, 1, 1)), [0]).loss < 1e-30


def test_label_out_of_range():
    m = init_model([Flatten, Dense(2), Softmax], (3, 1, 1))
    with pytest.raises(ValueError):
        m.backward(np.zeros((1, 3, 1, 1)), [2])


def test_adam_zero_gradient_noop():
    m = init_model([Flatten, Dense(2), Softmax], (3, 1, 1), seed=1)
    before = [p.copy() for p in m.params]
    adam_step(m, [np.zeros_like(p) for p in m.params], 0.1)
    assert all(np.array_equal(a, b) for a, b in zip(before, m.params))
    assert m.adam_t == 1


def test_adam_single_step_by_hand():
    m = init_model([Flatten, Dense(1), Softmax], (3, 1, 1))
    m.params[0][:] = 0.5
    g = [np.full((3, 1), 2.0), np.zeros(1)]
    adam_step(m, g, 0.01)
    # m1 = 0.2, v1 = 0.004; bias-corrected: 2.0 and 4.0 -> step = 0.01 * 2 / (2 + 1e-8)
    expected = 0.5 - 0.01 * 2.0 / (2.0 + 1e-8)
    np.testing.assert_allclose(m.params[0], expected, rtol=0, atol=1e-15)


def toy_two_class(n=40):
    rng = np.random.default_rng(4)
    labels = np.arange(n) % 2
    imgs = rng.uniform(0, 40, (n, 3, 4, 4))
    imgs[labels == 1, 0] += 200
    return Dataset(np.clip(imgs, 0, 255).round(), labels, 2)


def tiny_net():
    return [Conv2D(2), ReLU, MaxPool2, Flatten, Dense(2), Softmax]


def test_zero_epochs_leaves_model():
    m = init_model(tiny_net(), (3, 4, 4), seed=0)
    before = [p.copy() for p in m.params]
    log = train(m, toy_two_class(), TrainConfig(epochs=0))
    assert not log.epochs
    assert all(np.array_equal(a, b) for a, b in zip(before, m.params))


def test_separable_toy_converges():
    m = init_model(tiny_net(), (3, 4, 4), seed=0)
    log = train(m, toy_two_class(), TrainConfig(epochs=50, batch_size=8, learning_rate=0.01))
    assert log.final_loss < 0.1


def test_training_deterministic():
    ds = toy_two_class()
    cfg = TrainConfig(epochs=3, batch_size=8, seed=9, augmentation=CcpAugmentation(CcpParams(1, 0), 0.5))
    a, b = init_model(tiny_net(), (3, 4, 4), 1), init_model(tiny_net(), (3, 4, 4), 1)
    train(a, ds, cfg)
    train(b, ds, cfg)
    assert all(p.tobytes() == q.tobytes() for p, q in zip(a.params, b.params))


def test_zero_probability_equals_no_augmentation():
    ds = toy_two_class()
    base = dict(epochs=3, batch_size=8, seed=2)
    a, b = init_model(tiny_net(), (3, 4, 4), 1), init_model(tiny_net(), (3, 4, 4), 1)
    train(a, ds, TrainConfig(**base))
    train(b, ds, TrainConfig(**base, augmentation=CcpAugmentation(CcpParams(), 0.0)))
    assert all(p.tobytes() == q.tobytes() for p, q in zip(a.params, b.params))


def test_augmentation_keeps_dataset():
    ds = toy_two_class()
    snapshot = (ds.images.copy(), ds.labels.copy())
    m = init_model(tiny_net(), (3, 4, 4), 1)
    train(m, ds, TrainConfig(epochs=1, augmentation=CcpAugmentation(CcpParams(), 1.0), hflip=True))
    assert np.array_equal(ds.images, snapshot[0]) and np.array_equal(ds.labels, snapshot[1])


def test_train_empty_dataset():
    with pytest.raises(ValueError):
        train(init_model(tiny_net(), (3, 4, 4)), Dataset.empty(4, 2), TrainConfig(epochs=1))


def test_lr_schedule():
    cfg = TrainConfig(epochs=5, lr_schedule=((2, 1e-3), (3, 1e-4)))
    assert [cfg.lr_for_epoch(e) for e in range(5)] == [1e-3, 1e-3, 1e-4, 1e-4, 1e-4]
    with pytest.raises(ValueError):
        TrainConfig(epochs=4, lr_schedule=((2, 1e-3), (3, 1e-4)))
    with pytest.raises(ValueError):
        CcpAugmentation(CcpParams(), 1.5)


def test_evaluate_tie_break_lowest_class():
    m = init_model([Flatten, Dense(10), Softmax], (3, 1, 1))
    m.params[0][:] = 0  # uniform prediction -> argmax is class 0
    labels = np.array([0, 0, 3, 4, 5, 0, 9, 1, 2, 7])
    ds = Dataset(np.zeros((10, 3, 1, 1)), labels, 10)
    assert evaluate(m, ds) == pytest.approx(0.3)


def test_evaluate_by_hand_count():
    m = init_model([Flatten, Dense(2), Softmax], (3, 1, 1))
    m.params[0][:] = [[1.0, -1.0], [0.0, 0.0], [0.0, 0.0]]  # predict 0 when R > 0, else tie -> 0
    m.params[1][:] = [-0.5, 0.0]  # predict 1 unless R/255 > 0.25
    rng = np.random.default_rng(8)
    r = rng.integers(0, 256, 20).astype(float)
    labels = rng.integers(0, 2, 20)
    images = np.zeros((20, 3, 1, 1))
    images[:, 0, 0, 0] = r
    ds = Dataset(images, labels, 2)
    hand = sum((0 if 2 * v / 255 - 0.5 > 0 else 1) == y for v, y in zip(r, labels))
    assert evaluate(m, ds) == hand / 20


def test_perfect_memorisation():
    ds = toy_two_class(10)
    m = init_model(tiny_net(), (3, 4, 4), seed=0)
    train(m, ds, TrainConfig(epochs=60, batch_size=10, learning_rate=0.02))
    assert evaluate(m, ds) == 1.0


def test_checkpoint_roundtrip(tmp_path):
    m = init_model(small_cnn(3), (3, 8, 8), seed=1)
    f = tmp_path / "m.ccpm"
    save_checkpoint(m, f)
    raw = f.read_bytes()
    assert raw[:4] == b"CCPM" and int.from_bytes(raw[4:8], "little") == 1
    back = load_checkpoint(f)
    assert back.layers == m.layers and back.input_shape == m.input_shape
    assert all(p.tobytes() == q.tobytes() for p, q in zip(back.params, m.params))


def test_checkpoint_truncated(tmp_path):
    from ccpattack.image import FormatError

    m = init_model(small_cnn(3), (3, 8, 8), seed=1)
    f = tmp_path / "m.ccpm"
    save_checkpoint(m, f)
    f.write_bytes(f.read_bytes()[:-8])
    with pytest.raises(FormatError):
        load_checkpoint(f)


def test_model_rejects_wrong_param_shapes():
    with pytest.raises(SpecError):
        Model([Flatten, Dense(2), Softmax], (3, 1, 1), [np.zeros((2, 2)), np.zeros(2)])
