import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsfl.channel import awgn_transmit
from dsfl.core import derive_rng
from dsfl.data import gen_synthetic
from dsfl.metrics import (
    SSIM_K1,
    SSIM_K2,
    accuracy,
    max_ms_ssim_scales,
    ms_ssim,
    ms_ssim_batch,
    psnr,
    ssim,
    tv_distance,
)


def naive_ssim(a, b, win=8, max_val=1.0):
    """Window-by-window SSIM with the textbook formula."""
    c1, c2 = (SSIM_K1 * max_val) ** 2, (SSIM_K2 * max_val) ** 2
    vals = []
    for i in range(a.shape[0] - win + 1):
        for j in range(a.shape[1] - win + 1):
            x = a[i : i + win, j : j + win].ravel()
            y = b[i : i + win, j : j + win].ravel()
            mx, my = x.mean(), y.mean()
            vx, vy = x.var(), y.var()
            cxy = np.mean((x - mx) * (y - my))
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def images(seed, n=2, size=16):
    return gen_synthetic(max(n, 4), size, derive_rng(seed, "data", 0, "generate")).images[:n]


# -- PSNR -------------------------------------------------------------------

def test_psnr_identical_is_infinite():
    a = images(0, 1)[0]
    assert psnr(a, a) == math.inf


def test_psnr_mse_001():
    a = np.zeros((4, 4))
    assert psnr(a, a + 0.1) == pytest.approx(20.0, rel=1e-12)


def test_psnr_max_255():
    a = np.zeros((2, 2))
    assert psnr(a, a + 255.0, max_val=255.0) == pytest.approx(0.0, abs=1e-12)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros(3), np.zeros(4))


# -- SSIM -------------------------------------------------------------------

def test_ssim_identical():
    a = images(1, 1)[0]
    assert ssim(a, a) == 1.0


def test_ssim_constant_images_closed_form():
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    expected = (c1 * c2) / ((1 + c1) * c2)
    assert ssim(np.zeros((16, 16)), np.ones((16, 16))) == pytest.approx(expected, rel=1e-9)
    assert expected == pytest.approx(1e-4, rel=1e-3)


def test_ssim_matches_naive():
    rng = np.random.default_rng(3)
    for _ in range(10):
        a = rng.uniform(size=(12, 13))
        b = np.clip(a + rng.normal(scale=0.2, size=a.shape), 0, 1)
        assert ssim(a, b) == pytest.approx(naive_ssim(a, b), abs=1e-12)


def test_ssim_symmetric_exactly():
    a, b = images(2)
    assert ssim(a, b) == ssim(b, a)


def test_ssim_too_small():
    with pytest.raises(ValueError):
        ssim(np.zeros((7, 7)), np.ones((7, 7)))


# -- MS-SSIM ----------------------------------------------------------------

def test_ms_ssim_scales_at_16():
    assert max_ms_ssim_scales(16) == 3


def test_ms_ssim_identical():
    a = images(4, 1)[0]
    assert ms_ssim(a, a) == 1.0


def test_ms_ssim_bounded_and_symmetric():
    rng = np.random.default_rng(5)
    for _ in range(50):
        a = rng.uniform(size=(16, 16))
        b = rng.uniform(size=(16, 16))
        v = ms_ssim(a, b)
        assert 0.0 <= v <= 1.0
        assert v == ms_ssim(b, a)


def test_ms_ssim_too_many_scales():
    with pytest.raises(ValueError, match="at most 3"):
        ms_ssim(np.zeros((16, 16)), np.ones((16, 16)), scales=4)


def test_ms_ssim_single_scale_is_ssim():
    a, b = images(6)
    assert ms_ssim(a, b, scales=1) == pytest.approx(max(ssim(a, b), 0.0), rel=1e-12)


def test_ms_ssim_batch_matches_single():
    a = images(7, 5)
    b = images(8, 5)
    batch = ms_ssim_batch(a, b)
    for i in range(5):
        assert batch[i] == ms_ssim(a[i], b[i])


def _through_channel(img, snr_db, rng):
    rms = np.sqrt(np.mean(img**2))
    return np.clip(awgn_transmit(img.ravel(), snr_db, rng).reshape(img.shape) * rms, 0, 1)


def test_ms_ssim_monotone_under_noise():
    clean = images(9, 2)[1]
    hi = np.mean([ms_ssim(clean, _through_channel(clean, 13.0, derive_rng(t, "probe", 0, "13"))) for t in range(100)])
    lo = np.mean([ms_ssim(clean, _through_channel(clean, 1.0, derive_rng(t, "probe", 0, "1"))) for t in range(100)])
    assert hi > lo


# -- accuracy ---------------------------------------------------------------

@pytest.mark.parametrize(
    "pred, truth, acc",
    [([1, 0, 1], [1, 0, 1], 1.0), ([0, 0], [1, 1], 0.0), ([1, 1, 0, 0], [1, 1, 0, 1], 0.75)],
)
def test_accuracy_examples(pred, truth, acc):
    assert accuracy(pred, truth) == acc


def test_accuracy_empty():
    with pytest.raises(ValueError):
        accuracy([], [])


# -- TV distance ------------------------------------------------------------

@pytest.mark.parametrize(
    "p, q, d",
    [([0.3, 0.7], [0.3, 0.7], 0.0), ([1, 0], [0, 1], 1.0), ([0.5, 0.5], [1, 0], 0.5)],
)
def test_tv_examples(p, q, d):
    assert tv_distance(p, q) == pytest.approx(d, abs=1e-15)


def test_tv_not_normalized():
    with pytest.raises(ValueError):
        tv_distance([0.5, 0.6], [0.5, 0.5])


simplex = st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3).filter(lambda v: sum(v) > 1e-3).map(
    lambda v: np.array(v) / sum(v)
)


@settings(max_examples=300)
@given(simplex, simplex, simplex)
def test_tv_is_a_metric(p, q, r):
    assert tv_distance(p, q) >= 0
    assert tv_distance(p, q) == tv_distance(q, p)
    assert tv_distance(p, r) <= tv_distance(p, q) + tv_distance(q, r) + 1e-12
