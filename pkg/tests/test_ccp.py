import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccpattack.ccp import (
    CcpParams,
    CcpTrialPlan,
    Scheme,
    WeightMatrix,
    apply_ccp,
    attack_dataset,
    draw_weights,
)
from ccpattack.image import Dataset, to_storage


def scalar_ccp(image, w, s, b):
    """Pixel-by-pixel reference: ((w0*R + w1*G) + w2*B) / 3, times s, plus b."""
    _, h, wd = image.shape
    rows = [w.alpha, w.beta, w.gamma]
    out = np.zeros_like(image)
    for k in range(3):
        for r in range(h):
            for c in range(wd):
                R, G, B = float(image[0, r, c]), float(image[1, r, c]), float(image[2, r, c])
                acc = rows[k][0] * R
                acc = acc + rows[k][1] * G
                acc = acc + rows[k][2] * B
                out[k, r, c] = s * (acc / 3.0) + b
    return out


def rand_dataset(n, size=8, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(rng.integers(0, 256, (n, 3, size, size)).astype(float), rng.integers(0, 10, n), 10)


def test_oracle_equivalence_random():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        h, w = rng.integers(1, 9, size=2)
        img = rng.uniform(-50, 300, (3, h, w))
        wm = WeightMatrix.from_sequence(rng.uniform(-1, 2, 9))
        p = CcpParams(scale=rng.uniform(-3, 3), bias=rng.uniform(-40, 40))
        assert np.array_equal(apply_ccp(img, wm, p), scalar_ccp(img, wm, p.scale, p.bias))


def test_all_zero_weights():
    img = np.full((3, 2, 2), 77.0)
    assert not apply_ccp(img, WeightMatrix.constant(0.0), CcpParams(scale=5.0, bias=0.0)).any()


def test_hand_case_bias30():
    img = np.array([90.0, 150.0, 60.0]).reshape(3, 1, 1)
    w = WeightMatrix((1.0, 1.0, 1.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0))
    out = apply_ccp(img, w, CcpParams(scale=1.0, bias=30.0))
    assert out[0, 0, 0] == 130.0
    assert out[1, 0, 0] == 30.0


def test_saturation_case():
    img = np.full((3, 1, 1), 255.0)
    out = apply_ccp(img, WeightMatrix.constant(1.0), CcpParams(scale=2.0, bias=0.0))
    assert (out == 510.0).all()
    assert (to_storage(out) == 255.0).all()


def test_fixed_scheme_shares_weights():
    plan = CcpTrialPlan(CcpParams(scheme=Scheme.FIXED), base_seed=3, trial_index=4)
    assert draw_weights(plan, 0) == draw_weights(plan, 17) == draw_weights(plan, 999)


def test_variable_scheme_distinct():
    plan = CcpTrialPlan(CcpParams(scheme=Scheme.VARIABLE), base_seed=3, trial_index=4)
    mats = {draw_weights(plan, i) for i in range(1000)}
    assert len(mats) == 1000


def test_fixed_redrawn_per_trial():
    p = CcpParams(scheme=Scheme.FIXED)
    assert draw_weights(CcpTrialPlan(p, 1, 0), 0) != draw_weights(CcpTrialPlan(p, 1, 1), 0)


def test_degenerate_bounds():
    plan = CcpTrialPlan(CcpParams(lower=0.5, upper=0.5), 1)
    assert draw_weights(plan, 3) == WeightMatrix.constant(0.5)


def test_weights_within_bounds():
    plan = CcpTrialPlan(CcpParams(lower=0.2, upper=0.7), 9)
    arr = np.stack([draw_weights(plan, i).as_array() for i in range(300)])
    assert arr.min() >= 0.2 and arr.max() < 0.7


def test_bounds_validated():
    with pytest.raises(ValueError):
        CcpParams(lower=1.0, upper=0.0)


def test_attack_empty():
    ds = Dataset.empty()
    assert len(attack_dataset(ds, CcpTrialPlan(CcpParams(), 0))) == 0


def test_attack_single_image_composition():
    ds = rand_dataset(1)
    plan = CcpTrialPlan(CcpParams(), 5, 2)
    expect = to_storage(apply_ccp(ds.images[0], draw_weights(plan, 0), plan.params))
    assert np.array_equal(attack_dataset(ds, plan).images[0], expect)


@pytest.mark.parametrize("scheme", list(Scheme))
def test_attack_matches_per_image(scheme):
    ds = rand_dataset(20)
    plan = CcpTrialPlan(CcpParams(scale=1.0, bias=30.0, scheme=scheme), 8, 1)
    out = attack_dataset(ds, plan)
    assert np.array_equal(out.labels, ds.labels)
    for i in range(len(ds)):
        expect = to_storage(scalar_ccp(ds.images[i], draw_weights(plan, i), 1.0, 30.0))
        assert np.array_equal(out.images[i], expect)


def test_parallel_equals_sequential():
    ds = rand_dataset(64, size=16)
    plan = CcpTrialPlan(CcpParams(), 77, 3)
    seq = attack_dataset(ds, plan, workers=1)
    par = attack_dataset(ds, plan, workers=4, chunk=5)
    assert seq.images.tobytes() == par.images.tobytes()


pixel = st.tuples(*[st.floats(0, 255)] * 3)
weights = st.lists(st.floats(0, 1), min_size=9, max_size=9).map(WeightMatrix.from_sequence)


@given(pixel, weights, st.floats(0.1, 4), st.floats(-50, 50))
def test_pixel_uniformity(px, w, s, b):
    img = np.zeros((3, 2, 3))
    img[:, 0, 0] = px
    img[:, 1, 2] = px
    out = apply_ccp(img, w, CcpParams(scale=s, bias=b))
    assert np.array_equal(out[:, 0, 0], out[:, 1, 2])


@given(pixel, pixel, weights, st.floats(0.01, 4), st.floats(-50, 50))
def test_monotone_before_clipping(p, q, w, s, b):
    hi = np.maximum(p, q)
    lo = np.minimum(p, q)
    img = np.array([hi, lo]).T.reshape(3, 1, 2)
    out = apply_ccp(img, w, CcpParams(scale=s, bias=b))
    assert (out[:, 0, 0] >= out[:, 0, 1]).all()


@settings(max_examples=50)
@given(weights, st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 3))
def test_linear_without_bias(w, a, c, s):
    rng = np.random.default_rng(0)
    x, y = rng.uniform(0, 255, (2, 3, 4, 4))
    p = CcpParams(scale=s, bias=0.0)
    lhs = apply_ccp(a * x + c * y, w, p)
    rhs = a * apply_ccp(x, w, p) + c * apply_ccp(y, w, p)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-9)


def mean_intensity_per_trial(ds, scheme, seed, trials=30):
    p = CcpParams(scheme=scheme)
    return np.array([attack_dataset(ds, CcpTrialPlan(p, seed, t)).images.mean() for t in range(trials)])


def test_fixed_disperses_more_than_variable():
    ds = rand_dataset(100, size=8, seed=1)
    f = mean_intensity_per_trial(ds, Scheme.FIXED, 10).std()
    v = mean_intensity_per_trial(ds, Scheme.VARIABLE, 10).std()
    assert f > v
