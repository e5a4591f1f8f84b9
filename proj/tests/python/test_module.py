import math

import numpy as np
import pytest
from skimage.metrics import structural_similarity

import waterformer as wf


def test_yiq_round_trip(rng):
    img = rng.random((9, 7, 3))
    back, excursion = wf.yiq_to_rgb(wf.rgb_to_yiq(img))
    assert np.max(np.abs(back - img)) < 1e-12
    assert excursion < 1e-12


def test_yiq_red_spot_value():
    yiq = wf.rgb_to_yiq(np.array([[[1.0, 0.0, 0.0]]]))
    assert yiq[0, 0].tolist() == [0.299, 0.596, 0.211]


def test_physics_round_trip(rng):
    clean = rng.random((16, 16, 3))
    t = rng.uniform(0.1, 1.0, (16, 16, 3))
    degraded, _ = wf.degrade(clean, t, [0.1, 0.5, 0.6])
    assert np.max(np.abs(wf.recover(degraded, t, [0.1, 0.5, 0.6]) - clean)) < 1e-12


def test_recover_rejects_small_transmission(rng):
    img = rng.random((4, 4, 3))
    with pytest.raises(wf.DomainError):
        wf.recover(img, np.full((4, 4, 3), 0.01), [0.1, 0.5, 0.6])


def test_water_type_attenuates(rng):
    t, background = wf.water_type("I", 5.0, 4, 4)
    assert t.shape == (4, 4, 3)
    assert np.all((t > 0) & (t <= 1))
    assert len(background) == 3
    with pytest.raises(wf.ConfigError):
        wf.water_type("nope", 1.0, 4, 4)


def test_metrics_basic(rng):
    a = rng.uniform(0.0, 0.9, (32, 32, 3))
    assert wf.psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)
    assert math.isinf(wf.psnr(a, a))
    assert wf.ssim(a, a) == pytest.approx(1.0)
    assert wf.nrmse(a, a) == 0.0
    with pytest.raises(wf.DimensionError):
        wf.psnr(a, a[:16])


def test_ssim_matches_skimage(rng):
    luma_weights = np.array([0.299, 0.587, 0.114])
    for _ in range(5):
        a = rng.random((48, 40, 3))
        b = np.clip(a + rng.normal(0.0, 0.05, a.shape), 0.0, 1.0)
        ours = wf.ssim(a, b)
        ref = structural_similarity(
            a @ luma_weights,
            b @ luma_weights,
            data_range=1.0,
            gaussian_weights=True,
            sigma=1.5,
            use_sample_covariance=False,
        )
        assert ours == pytest.approx(ref, abs=1e-9)


def test_no_reference_metrics_prefer_vivid(rng):
    gray = np.full((32, 32, 3), 0.5) + rng.normal(0, 0.01, (32, 32, 3))
    vivid = rng.random((32, 32, 3))
    assert wf.uciqe(vivid) > wf.uciqe(gray)
    assert wf.uiqm(vivid) > wf.uiqm(gray)


def test_model_footprint_and_identity(rng):
    model = wf.Model("v5", seed=0)
    assert 200_000 <= model.params <= 500_000
    assert 4e9 <= model.macs(256, 256) <= 12e9
    img = rng.random((21, 18, 3))
    out = model.enhance(img)
    assert out.shape == img.shape
    assert np.max(np.abs(out - img)) < 1e-6


def test_model_variants():
    assert wf.Model("base").params < wf.Model("v5").params
    with pytest.raises(wf.ConfigError):
        wf.Model("v9")


def test_lr_schedule():
    assert wf.lr_at(0) == 1e-3
    assert wf.lr_at(50) == 5e-4
    assert wf.lr_at(100) == 2.5e-4
