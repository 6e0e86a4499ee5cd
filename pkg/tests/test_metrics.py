import json
import math

import numpy as np
import pytest
from PIL import Image
from skimage.metrics import structural_similarity

from dfbk._validation import ShapeError, ValidationError
from dfbk.metrics import (
    PSNR_CAP,
    MetricsReport,
    diff_heatmap,
    evaluate_pairs,
    heatmap_lut,
    psnr,
    ssim,
)


def ssim_loops(a, b, data_range=1.0, win=11, sigma=1.5):
    """Window-by-window SSIM written out directly from its definition."""
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    r = (win - 1) / 2
    weights = [[math.exp(-((i - r) ** 2 + (j - r) ** 2) / (2 * sigma**2)) for j in range(win)]
               for i in range(win)]
    total = sum(sum(row) for row in weights)
    weights = [[w / total for w in row] for row in weights]
    h, w = len(a), len(a[0])
    values = []
    for y in range(h - win + 1):
        for x in range(w - win + 1):
            ma = mb = 0.0
            for i in range(win):
                for j in range(win):
                    ma += weights[i][j] * a[y + i][x + j]
                    mb += weights[i][j] * b[y + i][x + j]
            va = vb = cov = 0.0
            for i in range(win):
                for j in range(win):
                    da, db = a[y + i][x + j] - ma, b[y + i][x + j] - mb
                    va += weights[i][j] * da * da
                    vb += weights[i][j] * db * db
                    cov += weights[i][j] * da * db
            values.append(((2 * ma * mb + c1) * (2 * cov + c2))
                          / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return sum(values) / len(values)


def test_psnr_constant_difference():
    a = np.full((8, 8), 100.0)
    assert psnr(a, a + 16, data_range=255) == pytest.approx(24.0478, abs=1e-3)
    assert abs(psnr(a, a + 16, data_range=255) - 24.05) < 0.01


def test_psnr_identity_symmetry_errors():
    rng = np.random.default_rng(0)
    a, b = rng.random((16, 16)), rng.random((16, 16))
    assert psnr(a, a) == math.inf
    assert psnr(a, b) == psnr(b, a)
    with pytest.raises(ShapeError):
        psnr(a, b[:8])
    with pytest.raises(ValidationError):
        psnr(a, b, data_range=0)


def test_psnr_decreases_with_noise():
    rng = np.random.default_rng(1)
    a = rng.random((32, 32))
    noise = rng.standard_normal((32, 32))
    values = [psnr(a, a + amp * noise) for amp in (0.01, 0.05, 0.1)]
    assert values[0] > values[1] > values[2]


@pytest.mark.parametrize("seed", range(20))
def test_ssim_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((16, 16))
    b = np.clip(a + rng.normal(0, 0.2, (16, 16)), 0, 1) if seed % 2 else rng.random((16, 16))
    assert abs(ssim(a, b) - ssim_loops(a.tolist(), b.tolist())) < 1e-6


def test_ssim_matches_skimage():
    rng = np.random.default_rng(5)
    a = rng.random((32, 32))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    ref = structural_similarity(
        a, b, data_range=1.0, gaussian_weights=True, sigma=1.5, use_sample_covariance=False
    )
    # skimage averages over a cropped-border region that matches valid windows
    assert ssim(a, b) == pytest.approx(ref, abs=1e-6)


def test_ssim_properties():
    rng = np.random.default_rng(2)
    a = rng.random((3, 16, 16))
    assert ssim(a, a) == 1.0
    for _ in range(5):
        x, y = rng.normal(size=(16, 16)), rng.normal(size=(16, 16))
        assert -1.0 <= ssim(x, y) <= 1.0
    near = [ssim(a, a + eps) for eps in (1e-2, 1e-4, 1e-6)]
    assert near[0] < near[1] < near[2] and 1 - near[2] < 1e-8
    with pytest.raises(ValidationError):
        ssim(np.zeros((10, 16)), np.zeros((10, 16)))


def test_heatmap_lut_monotone():
    lut = heatmap_lut()
    assert lut.shape == (256, 3)
    assert np.all(np.diff(lut[:, 0].astype(int)) >= 0)
    assert tuple(lut[0]) == (0, 0, 255) and tuple(lut[255]) == (255, 0, 0)


def test_heatmap_identical_and_single_pixel(tmp_path):
    a = np.zeros((8, 8))
    rgb = diff_heatmap(a, a)
    assert np.all(rgb == heatmap_lut()[0])
    b = a.copy()
    b[3, 5] = 0.4
    path = tmp_path / "h.png"
    rgb = diff_heatmap(b, a, path)
    hot = np.all(rgb == heatmap_lut()[255], axis=-1)
    assert hot.sum() == 1 and hot[3, 5]
    with Image.open(path) as im:
        assert im.mode == "RGB" and np.array_equal(np.asarray(im), rgb)


def test_heatmap_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        diff_heatmap(np.zeros((4, 4)), np.ones((4, 4)), tmp_path / "missing" / "h.png")


def test_report_and_files(tmp_path):
    rng = np.random.default_rng(0)
    truths = rng.random((4, 1, 16, 16))
    preds = truths.copy()
    preds[1:] += rng.normal(0, 0.05, preds[1:].shape)
    report = evaluate_pairs(["a", "b", "c", "d"], preds, truths)
    threaded = evaluate_pairs(["a", "b", "c", "d"], preds, truths, workers=3)
    assert report == threaded
    assert report.psnr[0] == math.inf and report.ssim[0] == 1.0
    summary = report.summary()
    assert summary["count"] == 4
    capped = [PSNR_CAP] + report.psnr[1:]
    assert summary["psnr_mean"] == pytest.approx(np.mean(capped))
    report.write_csv(tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "id,psnr_db,ssim" and len(lines) == 5
    report.write_json(tmp_path / "m.json")
    assert json.loads((tmp_path / "m.json").read_text()) == summary


def test_empty_report_summary():
    summary = MetricsReport().summary()
    assert summary["count"] == 0 and math.isnan(summary["psnr_mean"])
