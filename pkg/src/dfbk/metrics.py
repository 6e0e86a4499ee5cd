"""PSNR, SSIM, difference heatmaps and aggregate reports."""

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image

from ._validation import ShapeError, ValidationError, check_same_shape

PSNR_CAP = 100.0
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_chw(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None]
    if x.ndim != 3:
        raise ShapeError(f"expected (H, W) or (C, H, W) image, got shape {x.shape}")
    return x


def psnr(a, b, data_range=1.0):
    """Peak signal-to-noise ratio in dB; ``inf`` when the images are equal."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    check_same_shape(a, b)
    if data_range <= 0:
        raise ValidationError(f"data_range must be positive, got {data_range}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(data_range**2 / mse))


def gaussian_window(size=11, sigma=1.5):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, data_range=1.0, win_size=11, sigma=1.5):
    """Single-scale SSIM with a Gaussian window, averaged over all valid
    window positions and channels. Images are ``(H, W)`` or ``(C, H, W)``."""
    a, b = _as_chw(a), _as_chw(b)
    check_same_shape(a, b)
    if a.shape[-1] < win_size or a.shape[-2] < win_size:
        raise ValidationError(f"image {a.shape[-2:]} is smaller than the {win_size}px window")
    if np.array_equal(a, b):
        return 1.0
    w = gaussian_window(win_size, sigma)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    def filt(x):
        return np.einsum("chwij,ij->chw", sliding_window_view(x, w.shape, axis=(-2, -1)), w)

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def heatmap_lut():
    """256-entry blue-to-red RGB lookup table; red rises monotonically."""
    ramp = np.arange(256)
    return np.stack([ramp, np.zeros(256, dtype=int), 255 - ramp], axis=1).astype(np.uint8)


def diff_heatmap(generated, truth, out_path=None):
    """Map ``|generated - truth|`` (scaled by its maximum) through the
    blue-to-red table. Returns the ``(H, W, 3)`` uint8 image and writes it
    as PNG when ``out_path`` is given."""
    g, t = _as_chw(generated), _as_chw(truth)
    check_same_shape(g, t)
    diff = np.abs(g - t).mean(axis=0)
    peak = diff.max()
    level = diff / peak if peak > 0 else np.zeros_like(diff)
    rgb = heatmap_lut()[np.round(level * 255).astype(int)]
    if out_path is not None:
        Image.fromarray(rgb).save(out_path)
    return rgb


@dataclass
class MetricsReport:
    ids: list = field(default_factory=list)
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)

    @property
    def count(self):
        return len(self.ids)

    def _capped_psnr(self):
        return np.minimum(np.asarray(self.psnr, dtype=np.float64), PSNR_CAP)

    def summary(self):
        p, s = self._capped_psnr(), np.asarray(self.ssim, dtype=np.float64)
        return {
            "count": self.count,
            "psnr_mean": float(p.mean()) if self.count else math.nan,
            "psnr_std": float(p.std()) if self.count else math.nan,
            "ssim_mean": float(s.mean()) if self.count else math.nan,
            "ssim_std": float(s.std()) if self.count else math.nan,
        }

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "psnr_db", "ssim"])
            for row in zip(self.ids, self.psnr, self.ssim):
                writer.writerow([row[0], repr(float(row[1])), repr(float(row[2]))])

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _score(pair):
    pred, truth = pair
    return psnr(pred, truth), ssim(pred, truth)


def evaluate_pairs(ids, preds, truths, workers=1):
    """Score aligned prediction/truth images into a :class:`MetricsReport`."""
    pairs = list(zip(preds, truths))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(_score, pairs))
    else:
        scores = [_score(p) for p in pairs]
    return MetricsReport(
        ids=list(ids), psnr=[s[0] for s in scores], ssim=[s[1] for s in scores]
    )
