import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nocturne.errors import ShapeMismatchError
from nocturne.losses import (
    LossWeights,
    confidence_weight,
    gaussian_window,
    loss_depth_normal,
    loss_dssim,
    loss_normal,
    loss_rgb,
    ssim_map,
    total_loss,
)
from oracles import central_difference, l1_bruteforce, normal_loss_bruteforce, ssim_skimage


def _unit(rng, shape):
    v = rng.normal(size=shape + (3,))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def test_defaults():
    w = LossWeights()
    assert (w.w_rgb, w.w_dssim, w.w_dn, w.gamma) == (0.8, 0.2, 0.05, 0.1)
    with pytest.raises(ValueError):
        LossWeights(w_rgb=-1)


def test_l1_examples_and_bruteforce():
    assert loss_rgb(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)))[0] == 0
    assert loss_rgb(np.full((2, 2, 3), 0.25), np.zeros((2, 2, 3)))[0] == 0.25
    rng = np.random.default_rng(0)
    a, b = rng.uniform(size=(6, 5, 3)), rng.uniform(size=(6, 5, 3))
    assert loss_rgb(a, b)[0] == pytest.approx(l1_bruteforce(a, b), abs=1e-14)


def test_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        loss_rgb(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))
    with pytest.raises(ShapeMismatchError):
        loss_dssim(np.zeros((4, 4)), np.zeros((4, 5)))


def test_gaussian_window():
    w = gaussian_window()
    assert len(w) == 11 and w.sum() == pytest.approx(1.0) and np.argmax(w) == 5


def test_ssim_identical_is_one():
    x = np.random.default_rng(1).uniform(size=(20, 20, 3))
    np.testing.assert_allclose(ssim_map(x, x), 1.0, atol=1e-12)
    assert loss_dssim(x, x)[0] == pytest.approx(0.0, abs=1e-12)


def test_ssim_matches_scikit_image_interior():
    rng = np.random.default_rng(2)
    x = rng.uniform(size=(40, 36, 3))
    y = np.clip(x + rng.normal(0, 0.1, x.shape), 0, 1)
    # scikit-image crops the 5-pixel border where padding differs; compare on the same region
    ours = ssim_map(x, y)[5:-5, 5:-5].mean()
    assert ours == pytest.approx(ssim_skimage(x, y), abs=1e-10)


def test_rgb_and_dssim_gradients():
    rng = np.random.default_rng(3)
    x, y = rng.uniform(size=(9, 8, 3)), rng.uniform(size=(9, 8, 3))
    _, g1 = loss_rgb(x, y)
    _, g2 = loss_dssim(x, y)
    for idx in [(0, 0, 0), (4, 4, 1), (8, 7, 2), (3, 6, 0)]:
        assert g1[idx] == pytest.approx(central_difference(lambda: loss_rgb(x, y)[0], x, idx, 1e-7), abs=1e-7)
        assert g2[idx] == pytest.approx(central_difference(lambda: loss_dssim(x, y)[0], x, idx, 1e-6), abs=1e-8)


def test_normal_loss_examples():
    n = np.zeros((1, 1, 3))
    n[..., 2] = 1.0
    assert loss_normal(n, n, np.ones((1, 1), bool))[0] == 0.0
    assert loss_normal(n, -n, np.ones((1, 1), bool))[0] == pytest.approx(4.0)
    assert loss_normal(n, -n, np.zeros((1, 1), bool))[0] == 0.0


def test_normal_losses_match_bruteforce_and_gradients():
    rng = np.random.default_rng(4)
    pred, prior = _unit(rng, (7, 6)), _unit(rng, (7, 6))
    mask = rng.uniform(size=(7, 6)) > 0.3
    v, g = loss_normal(pred, prior, mask)
    assert v == pytest.approx(normal_loss_bruteforce(pred, prior, mask), abs=1e-12)
    w = confidence_weight(pred, prior, 0.1)
    vd, gd = loss_depth_normal(pred, prior, mask, 0.1)
    assert vd == pytest.approx(normal_loss_bruteforce(pred, prior, mask, w), abs=1e-12)
    frozen = w.copy()
    for idx in [(0, 0, 0), (3, 2, 1), (6, 5, 2)]:
        num = central_difference(lambda: loss_normal(pred, prior, mask)[0], pred, idx, 1e-7)
        assert g[idx] == pytest.approx(num, abs=1e-6)
        num = central_difference(lambda: loss_depth_normal(pred, prior, mask, 0.1, weight=frozen)[0], pred, idx, 1e-7)
        assert gd[idx] == pytest.approx(num, abs=1e-6)


def test_confidence_weight_range():
    rng = np.random.default_rng(5)
    a, b = _unit(rng, (50,)), _unit(rng, (50,))
    w = confidence_weight(a, b, 0.1)
    assert np.all((w > 0) & (w <= 1))
    np.testing.assert_allclose(confidence_weight(a, a, 0.1), 1.0)


@given(st.floats(0, 5), st.floats(0, 5), st.floats(0, 5), st.floats(0, 5), st.floats(0, 1))
def test_total_loss_monotone(rgb, dssim, dn, normal, bump):
    base = {"rgb": rgb, "dssim": dssim, "dn": dn, "normal": normal}
    t = total_loss(base)
    for k in base:
        assert total_loss({**base, k: base[k] + bump}) >= t


def test_total_loss_value():
    assert total_loss({"rgb": 1.0, "dssim": 1.0, "dn": 1.0, "normal": 1.0}) == pytest.approx(0.8 + 0.2 + 0.1)
