import numpy as np
import pytest
import torch

from lesionseg.decoder import RFB, PartialDecoder
from oracles import central_diff, rel_err


def _seeded(cls, *args, seed=0):
    torch.manual_seed(seed)
    return cls(*args)


def test_rfb_shape():
    out = _seeded(RFB, 256, 32)(torch.randn(2, 256, 16, 16))
    assert out.shape == (2, 32, 16, 16)


def test_rfb_zero_input_gives_zero():
    rfb = _seeded(RFB, 64, 32)
    assert not rfb(torch.zeros(2, 64, 8, 8)).any()
    assert not rfb.eval()(torch.zeros(1, 64, 8, 8)).any()


def test_rfb_reproducible():
    x = torch.randn(1, 16, 8, 8)
    assert torch.equal(_seeded(RFB, 16, 32, seed=5).eval()(x), _seeded(RFB, 16, 32, seed=5).eval()(x))


def test_ppd_shape():
    out = _seeded(PartialDecoder, 32)(torch.randn(1, 32, 16, 16), torch.randn(1, 32, 8, 8))
    assert out.shape == (1, 1, 16, 16)


def test_ppd_rejects_bad_level_relationship():
    ppd = _seeded(PartialDecoder, 32)
    with pytest.raises(ValueError):
        ppd(torch.randn(1, 32, 16, 16), torch.randn(1, 32, 16, 16))


def test_zero_deep_map_closes_the_multiplicative_branch():
    ppd = _seeded(PartialDecoder, 32).eval()
    r4 = torch.randn(1, 32, 8, 8)
    zeros = torch.zeros(1, 32, 4, 4)
    with torch.no_grad():
        before = ppd(r4, zeros)
        ppd.up_gate.conv.weight.normal_()
        after = ppd(r4, zeros)
        moved = ppd(r4, torch.randn(1, 32, 4, 4))
    assert torch.equal(before, after)
    assert not torch.allclose(before, moved)


def test_ppd_finite_on_large_inputs():
    ppd = _seeded(PartialDecoder, 32)
    gen = torch.Generator().manual_seed(1)
    for _ in range(10):
        r4 = torch.rand(2, 32, 8, 8, generator=gen) * 20 - 10
        r5 = torch.rand(2, 32, 4, 4, generator=gen) * 20 - 10
        assert torch.isfinite(ppd(r4, r5)).all()


def test_ppd_gradient_matches_finite_differences():
    ppd = _seeded(PartialDecoder, 8).double().eval()
    rng = np.random.default_rng(0)
    r4 = rng.normal(size=(1, 8, 4, 4))
    r5 = rng.normal(size=(1, 8, 2, 2))
    probe = torch.from_numpy(rng.normal(size=(1, 1, 4, 4)))

    def f(a, b):
        with torch.no_grad():
            return float((ppd(torch.from_numpy(a), torch.from_numpy(b)) * probe).sum())

    t4 = torch.from_numpy(r4.copy()).requires_grad_()
    t5 = torch.from_numpy(r5.copy()).requires_grad_()
    (ppd(t4, t5) * probe).sum().backward()
    assert rel_err(t4.grad.numpy(), central_diff(lambda a: f(a, r5), r4)) < 1e-4
    assert rel_err(t5.grad.numpy(), central_diff(lambda b: f(r4, b), r5)) < 1e-4
