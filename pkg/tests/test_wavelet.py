import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from dfbk._validation import ShapeError, ValidationError
from dfbk.wavelet import WaveletBands, concat_high, dwt, iwt, split_high


def haar_loops(z):
    """Per-block reference for a single (H, W) channel."""
    h, w = z.shape
    out = {k: np.zeros((h // 2, w // 2)) for k in ("ll", "lh", "hl", "hh")}
    for i in range(h // 2):
        for j in range(w // 2):
            a, b = z[2 * i, 2 * j], z[2 * i, 2 * j + 1]
            c, d = z[2 * i + 1, 2 * j], z[2 * i + 1, 2 * j + 1]
            out["ll"][i, j] = (a + b + c + d) / 2
            out["lh"][i, j] = (a + b - c - d) / 2
            out["hl"][i, j] = (a - b + c - d) / 2
            out["hh"][i, j] = (a - b - c + d) / 2
    return out


def test_constant_image():
    bands = dwt(torch.ones(1, 4, 4, dtype=torch.float64))
    assert torch.all(bands.ll == 2.0)
    for band in (bands.lh, bands.hl, bands.hh):
        assert torch.all(band == 0.0)


def test_two_by_two_hand_case():
    bands = dwt(torch.tensor([[1.0, 2.0], [3.0, 4.0]], dtype=torch.float64))
    assert bands.ll.item() == 5.0
    assert bands.lh.item() == -2.0
    assert bands.hl.item() == -1.0
    assert bands.hh.item() == 0.0


def test_matches_loop_reference():
    rng = np.random.default_rng(3)
    z = rng.normal(size=(6, 10))
    bands = dwt(torch.from_numpy(z))
    ref = haar_loops(z)
    for name in ref:
        np.testing.assert_allclose(getattr(bands, name).numpy(), ref[name], atol=1e-12)


def test_perfect_reconstruction_random():
    z = torch.randn(3, 8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    assert (iwt(dwt(z)) - z).abs().max() < 1e-6


def test_inverse_examples():
    zeros = torch.zeros(1, 3, 3)
    assert torch.all(iwt((zeros,) * 4) == 0)
    ll = torch.full((1, 2, 2), 2.0)
    assert torch.all(iwt((ll, zeros[:, :2, :2], zeros[:, :2, :2], zeros[:, :2, :2])) == 1.0)


def test_forward_of_inverse():
    g = torch.Generator().manual_seed(1)
    bands = WaveletBands(*(torch.randn(2, 5, 3, dtype=torch.float64, generator=g) for _ in range(4)))
    again = dwt(iwt(bands))
    for a, b in zip(again, bands):
        assert (a - b).abs().max() < 1e-6


def test_band_shapes_halve():
    bands = dwt(torch.zeros(2, 3, 12, 6))
    assert all(b.shape == (2, 3, 6, 3) for b in bands)


@pytest.mark.parametrize("shape", [(3, 4), (4, 5), (1, 2), (2, 1)])
def test_odd_or_tiny_dims_rejected(shape):
    with pytest.raises(ShapeError):
        dwt(torch.zeros(shape))


def test_non_finite_rejected():
    z = torch.zeros(4, 4)
    z[1, 2] = float("nan")
    with pytest.raises(ValidationError):
        dwt(z)


def test_iwt_mismatched_bands():
    with pytest.raises(ShapeError):
        iwt((torch.zeros(2, 2), torch.zeros(2, 2), torch.zeros(2, 3), torch.zeros(2, 2)))


def test_concat_and_split_high():
    bands = dwt(torch.randn(1, 1, 4, 4))
    z_high = concat_high(bands)
    assert z_high.shape == (1, 3, 2, 2)
    assert torch.equal(z_high[:, 0:1], bands.lh)
    lh, hl, hh = split_high(z_high)
    assert torch.equal(lh, bands.lh) and torch.equal(hl, bands.hl) and torch.equal(hh, bands.hh)


def test_concat_high_channel_count():
    bands = WaveletBands(*(torch.zeros(4, 8, 8) for _ in range(4)))
    assert concat_high(bands).shape == (12, 8, 8)


def test_split_high_requires_multiple_of_three():
    with pytest.raises(ShapeError):
        split_high(torch.zeros(1, 4, 2, 2))


even = st.integers(1, 6).map(lambda n: 2 * n)


@settings(max_examples=60, deadline=None)
@given(h=even, w=even, c=st.integers(1, 3), seed=st.integers(0, 2**31 - 1))
def test_reconstruction_energy_linearity(h, w, c, seed):
    g = torch.Generator().manual_seed(seed)
    z1 = torch.randn(c, h, w, dtype=torch.float64, generator=g)
    z2 = torch.randn(c, h, w, dtype=torch.float64, generator=g)
    bands = dwt(z1)
    assert (iwt(bands) - z1).abs().max() < 1e-6
    energy = sum((b**2).sum() for b in bands)
    assert abs(energy - (z1**2).sum()) / (z1**2).sum() < 1e-5
    combo = dwt(2.5 * z1 - 0.75 * z2)
    for lhs, b1, b2 in zip(combo, bands, dwt(z2)):
        assert (lhs - (2.5 * b1 - 0.75 * b2)).abs().max() < 1e-6
