import pytest
import torch

from memjscc.gdn import (BETA_FLOOR, CGDN, GDN, ResidualDelayProcessor,
                         cgdn_forward, gdn_forward, igdn_forward)


@pytest.fixture(autouse=True)
def float64():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)


def _randomize(module, seed=0, scale=0.3):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.add_(scale * torch.randn(p.shape, generator=g))
    return module


def test_identity_parameters():
    w = torch.randn(2, 3, 4, 4)
    for inverse in (False, True):
        layer = GDN(3, inverse=inverse)
        layer.set_params(torch.ones(3), torch.zeros(3, 3))
        torch.testing.assert_close(layer(w), w, rtol=1e-6, atol=0)


def test_hand_values():
    layer = GDN(1)
    layer.set_params(torch.tensor([BETA_FLOOR]), torch.tensor([[0.25]]))
    u = gdn_forward(torch.full((1, 1, 1, 1), 2.0), layer)
    assert u.item() == pytest.approx(2 / (BETA_FLOOR + 1.0) ** 0.5)
    layer = GDN(2)
    layer.set_params(torch.ones(2), torch.eye(2))
    u = gdn_forward(torch.tensor([3.0, 4.0]).view(1, 2, 1, 1), layer)
    torch.testing.assert_close(u.flatten(),
                               torch.tensor([3 / 10 ** 0.5, 4 / 17 ** 0.5]))
    assert u.flatten().tolist() == pytest.approx([0.94868, 0.97014],
                                                 abs=1e-5)


def test_inverse_multiplies():
    layer = GDN(2, inverse=True)
    layer.set_params(torch.ones(2), torch.eye(2))
    u = igdn_forward(torch.tensor([3.0, 4.0]).view(1, 2, 1, 1), layer)
    assert u.flatten().tolist() == pytest.approx([3 * 10 ** 0.5,
                                                  4 * 17 ** 0.5])
    with pytest.raises(ValueError):
        igdn_forward(u, GDN(2))


def test_parameters_stay_valid():
    layer = _randomize(GDN(4), scale=2.0)
    assert torch.all(layer.beta >= BETA_FLOOR)
    assert torch.all(layer.gamma >= 0)
    shift = torch.full((2, 4), -100.0)
    out = layer(torch.randn(2, 4, 3, 3), shift)
    assert torch.isfinite(out).all()


def test_independent_inverse_is_not_identity():
    fwd = _randomize(GDN(3), seed=1)
    inv = _randomize(GDN(3, inverse=True), seed=2)
    w = torch.randn(1, 3, 2, 2)
    assert not torch.allclose(inv(fwd(w)), w)


def test_zeroed_conditioner_matches_gdn():
    layer = CGDN(5)
    torch.manual_seed(0)
    w = torch.randn(3, 5, 4, 4)
    dbar = torch.tensor([-1.0, 0.0, 2.0])
    assert torch.equal(cgdn_forward(w, dbar, layer), layer.gdn(w))
    _randomize(layer.conditioner)
    out = cgdn_forward(w, dbar, layer)
    assert out.shape == w.shape
    a = cgdn_forward(w[:1], torch.tensor(-1.0), layer)
    b = cgdn_forward(w[:1], torch.tensor(1.0), layer)
    assert (a - b).abs().max() > 0


def test_residual_processor():
    rdp = ResidualDelayProcessor(512)
    z = torch.randn(2, 512)
    assert torch.equal(rdp(z, torch.tensor(0.3)), z)
    with pytest.raises(ValueError):
        rdp(torch.randn(2, 511), torch.tensor(0.3))
    _randomize(rdp)
    dbar = torch.tensor(0.3, requires_grad=True)
    z = z.requires_grad_(True)
    out = rdp(z, dbar)
    assert out.shape == (2, 512)
    gz, gd = torch.autograd.grad(out.sum(), (z, dbar))
    assert gz.abs().sum() > 0 and gd.abs() > 0


def _points(n=20):
    g = torch.Generator().manual_seed(7)
    return [torch.randn(1, 3, 2, 2, generator=g, requires_grad=True)
            for _ in range(n)]


@pytest.mark.parametrize("inverse", [False, True])
def test_gdn_gradcheck(inverse):
    layer = _randomize(GDN(3, inverse=inverse), seed=3)
    for w in _points():
        assert torch.autograd.gradcheck(layer, (w,), eps=1e-6, atol=1e-8,
                                        rtol=1e-4)


def test_cgdn_gradcheck():
    layer = _randomize(CGDN(3), seed=4)
    for i, w in enumerate(_points()):
        dbar = torch.tensor([0.1 * i - 1.0], requires_grad=True)
        assert torch.autograd.gradcheck(layer, (w, dbar), eps=1e-6,
                                        atol=1e-8, rtol=1e-4)


def test_residual_gradcheck():
    rdp = _randomize(ResidualDelayProcessor(6, hidden=8), seed=5)
    g = torch.Generator().manual_seed(8)
    for _ in range(20):
        z = torch.randn(2, 6, generator=g, requires_grad=True)
        dbar = torch.randn(1, generator=g).requires_grad_(True)
        assert torch.autograd.gradcheck(rdp, (z, dbar), eps=1e-6, atol=1e-8,
                                        rtol=1e-4)
