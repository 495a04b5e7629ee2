import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from scipy import ndimage

from lesionseg import attention
from lesionseg.attention import (
    BoundaryAttention,
    ReverseAttention,
    binarize_map,
    boundary_mask,
    boundary_target,
    distance_transform,
    ra_mask,
    resize_map,
)
from oracles import brute_dt, brute_morph_gradient, central_diff, rel_err

masks = hnp.arrays(np.uint8, st.tuples(st.integers(1, 10), st.integers(1, 10)), elements=st.integers(0, 1))


def test_binarize_examples():
    assert binarize_map(np.full((2, 2), 10.0)).all()
    assert not binarize_map(np.full((2, 2), -10.0)).any()
    assert not binarize_map(np.zeros((2, 2))).any()
    assert binarize_map(torch.tensor([[-1e-9, 1e-9]])).tolist() == [[0, 1]]


def test_dt_examples():
    assert not distance_transform(np.zeros((5, 6))).any()
    # a lone row sees the implicit background ring one step above and below
    assert distance_transform(np.array([[0, 1, 1, 1, 0]])).tolist() == [[0, 1, 1, 1, 0]]
    # with foreground rows around it, the ring is two steps away and the 1-D answer appears
    band = np.ones((3, 5), np.uint8)
    band[1, [0, 4]] = 0
    assert distance_transform(band)[1].tolist() == [0, 1, 2, 1, 0]
    wide = np.zeros((7, 7), np.uint8)
    wide[1:6, 1:6] = 1
    assert distance_transform(wide)[1:6, 3].tolist() == [1, 2, 3, 2, 1]
    ones = distance_transform(np.ones((3, 3)))
    assert np.array_equal(ones, [[1, 1, 1], [1, 2, 1], [1, 1, 1]])


def test_dt_thousand_random_masks_exact():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        m = rng.integers(0, 2, (8, 8))
        assert np.array_equal(distance_transform(m), brute_dt(m))


@given(masks)
def test_dt_matches_scipy_with_background_ring(m):
    ref = ndimage.distance_transform_edt(np.pad(m, 1))[1:-1, 1:-1]
    assert np.allclose(distance_transform(m), ref, atol=1e-12)


def test_dt_chunking_is_invisible():
    m = np.random.default_rng(1).integers(0, 2, (40, 23))
    assert np.array_equal(distance_transform(m, chunk=3), distance_transform(m))


def _oracle_boundary_mask(s):
    def norm(d):
        return d / d.max() if d.max() > 0 else np.zeros_like(d)

    return 1 - (norm(brute_dt(s)) + norm(brute_dt(1 - s)))


def test_boundary_mask_all_zero():
    ones_dt = brute_dt(np.ones((5, 5)))
    assert np.allclose(boundary_mask(np.zeros((5, 5))), 1 - ones_dt / ones_dt.max())


def test_boundary_mask_half_plane():
    s = np.zeros((4, 4), np.uint8)
    s[:2] = 1
    out = boundary_mask(s)
    assert np.allclose(out, _oracle_boundary_mask(s))
    # ring-aware distances are 1 everywhere on both sides, so both normalized terms are 1
    assert np.allclose(out, 0)
    s6 = np.zeros((6, 6), np.uint8)
    s6[:3] = 1
    m6 = boundary_mask(s6)
    assert np.allclose(m6, _oracle_boundary_mask(s6))
    assert m6[2:4].min() >= m6.max() - 1e-12


@given(masks)
def test_boundary_mask_properties(s):
    out = boundary_mask(s)
    assert np.isfinite(out).all()
    assert out.min() >= 0 and out.max() <= 1
    assert np.array_equal(out, boundary_mask(1 - s))
    assert np.allclose(out, _oracle_boundary_mask(s), atol=1e-12)
    inside, outside = distance_transform(s), distance_transform(1 - s)
    assert not ((inside > 0) & (outside > 0)).any()


@given(masks)
def test_boundary_mask_peaks_next_to_the_transition(s):
    if s.all() or not s.any():
        return
    out = boundary_mask(s)
    fg = s.astype(bool)
    near = (ndimage.binary_dilation(fg) & ~fg) | (fg & ~ndimage.binary_erosion(fg, border_value=1))
    assert np.isclose(out[near].max(), out.max())


def test_boundary_mask_degenerate_inputs_are_finite():
    for m in (np.zeros((8, 8)), np.ones((8, 8)), np.zeros((1, 1)), np.ones((1, 1))):
        out = boundary_mask(m)
        assert np.isfinite(out).all() and (0 <= out).all() and (out <= 1).all()


def test_boundary_target_examples():
    assert not boundary_target(np.zeros((6, 6))).any()
    ring = np.ones((5, 5), np.uint8)
    ring[1:-1, 1:-1] = 0
    assert np.array_equal(boundary_target(np.ones((5, 5))), ring)
    sq = np.zeros((8, 8), np.uint8)
    sq[2:6, 2:6] = 1
    expected = brute_morph_gradient(sq)
    assert np.array_equal(boundary_target(sq), expected)
    # dilation minus erosion marks both sides of the edge: outer 1-px ring plus the square's own edge
    assert expected.sum() == 6 * 6 - 2 * 2


@given(masks)
def test_boundary_target_matches_oracle(g):
    assert np.array_equal(boundary_target(g), brute_morph_gradient(g))


def test_ra_mask_examples():
    zero = ra_mask(torch.zeros(1, 1, 4, 4), 64)
    assert zero.shape == (1, 64, 4, 4) and torch.all(zero == 0.5)
    assert ra_mask(torch.full((1, 1, 3, 3), 20.0), 8).max() < 1e-8
    assert torch.allclose(ra_mask(torch.full((1, 1, 3, 3), -20.0), 8), torch.ones(1, 8, 3, 3))


def test_ra_mask_literal_on_random_maps():
    gen = torch.Generator().manual_seed(0)
    for _ in range(100):
        u = torch.randn(2, 1, 4, 4, generator=gen) * 5
        m = ra_mask(u, 64, size=(16, 16))
        ref = 1 - torch.sigmoid(torch.nn.functional.interpolate(u, size=(16, 16), mode="bilinear", align_corners=False))
        assert (m - ref).abs().max() <= 1e-6
        assert torch.equal(m, m[:, :1].expand_as(m))


def test_ra_mask_is_detached():
    u = torch.randn(1, 1, 4, 4, requires_grad=True)
    assert not ra_mask(u, 4).requires_grad


def test_resize_map_factors():
    x = torch.randn(1, 1, 8, 8)
    assert resize_map(x, (8, 8)) is x
    assert resize_map(x, (32, 32)).shape[-2:] == (32, 32)
    assert resize_map(x, (2, 2)).shape[-2:] == (2, 2)
    with pytest.raises(ValueError):
        resize_map(x, (12, 12))
    with pytest.raises(ValueError):
        resize_map(x, (16, 32))


def _ba(channels=4):
    torch.manual_seed(0)
    return BoundaryAttention(channels)


def test_ba_matches_scalar_loop():
    rng = np.random.default_rng(2)
    feat = torch.from_numpy(rng.normal(size=(1, 3, 8, 8)))
    coarse = torch.from_numpy(rng.normal(size=(1, 1, 8, 8)))
    out, pred = _ba(3).double()(feat, coarse)
    mb = _oracle_boundary_mask((coarse[0, 0].numpy() > 0).astype(np.uint8))
    f = feat.numpy()
    for c in range(3):
        for y in range(8):
            for x in range(8):
                assert math.isclose(float(out[0, c, y, x]), f[0, c, y, x] * mb[y, x], rel_tol=1e-12, abs_tol=1e-15)
    assert pred.shape == (1, 1, 8, 8)


def test_ba_zero_features():
    out, _ = _ba()(torch.zeros(2, 4, 8, 8), torch.randn(2, 1, 8, 8))
    assert not out.any()


def test_ba_identity_under_all_ones_mask(monkeypatch):
    # unreachable through real masks (a background ring always exists), so patch the mask
    monkeypatch.setattr(attention, "boundary_mask", lambda s: np.ones(np.shape(s)))
    feat = torch.randn(1, 4, 8, 8)
    out, _ = _ba()(feat, torch.randn(1, 1, 8, 8))
    assert torch.equal(out, feat)


def test_ba_shape_mismatch():
    with pytest.raises(ValueError):
        _ba()(torch.randn(1, 4, 8, 8), torch.randn(1, 1, 4, 4))


def test_ba_gradient_flows_only_through_features():
    feat = torch.randn(1, 4, 8, 8, requires_grad=True)
    coarse = torch.randn(1, 1, 8, 8, requires_grad=True)
    out, pred = _ba()(feat, coarse)
    (out.sum() + pred.sum()).backward()
    assert feat.grad is not None and coarse.grad is None


def _ra(cin=8, cb=4, seed=0):
    torch.manual_seed(seed)
    return ReverseAttention(cin, cb).eval()


def test_ra_saturated_guide_ignores_features():
    ra = _ra()
    guide = torch.full((1, 1, 4, 4), 40.0)
    b = torch.randn(1, 4, 16, 16)
    with torch.no_grad():
        a1 = ra(torch.randn(1, 8, 4, 4), guide, b)
        a2 = ra(torch.randn(1, 8, 4, 4), guide, b)
        ref = torch.nn.functional.conv2d(
            torch.cat([torch.zeros(1, 64, 4, 4), guide], dim=1), ra.head.weight, ra.head.bias, padding=1
        )
    assert torch.allclose(a1, a2) and torch.allclose(a1, ref)


def test_ra_shape_contract():
    ra = _ra(256, 32)
    out = ra(torch.randn(1, 256, 8, 8), torch.randn(1, 1, 16, 16), torch.randn(1, 32, 64, 64))
    assert out.shape == (1, 1, 8, 8)


def test_ra_mismatch_and_missing_boundary():
    ra = _ra()
    with pytest.raises(ValueError):
        ra(torch.randn(1, 8, 8, 8), torch.randn(1, 1, 12, 12), torch.randn(1, 4, 8, 8))
    with pytest.raises(ValueError):
        ra(torch.randn(1, 8, 8, 8), torch.randn(1, 1, 8, 8))


def test_ra_gradient_matches_finite_differences():
    ra = _ra(3, 2).double()
    rng = np.random.default_rng(3)
    feat = rng.normal(size=(1, 3, 4, 4))
    guide = torch.from_numpy(rng.normal(size=(1, 1, 2, 2)))
    b = torch.from_numpy(rng.normal(size=(1, 2, 8, 8)))
    probe = torch.from_numpy(rng.normal(size=(1, 1, 4, 4)))

    def f(a):
        with torch.no_grad():
            return float((ra(torch.from_numpy(a), guide, b) * probe).sum())

    t = torch.from_numpy(feat.copy()).requires_grad_()
    (ra(t, guide, b) * probe).sum().backward()
    assert rel_err(t.grad.numpy(), central_diff(f, feat)) < 1e-4
