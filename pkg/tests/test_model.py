import pytest
import torch

from memjscc.model import (ArchitectureConfig, JSCCModel, Limits, load_model,
                           save_model)
from memjscc.normalization import fit_delay_normalizer


def make(res_nrm, conditioning="none", seed=0):
    torch.manual_seed(seed)
    return JSCCModel(ArchitectureConfig(conditioning=conditioning), res_nrm,
                     fit_delay_normalizer(0, 1000))


def test_codeword_length(res_nrm):
    arch = ArchitectureConfig()
    assert arch.latent_shape == (8, 8, 8) and arch.n == 512
    m = make(res_nrm).encode(torch.rand(2, 3, 32, 32))
    assert m.shape == (2, 512)


def test_architecture_validation():
    with pytest.raises(ValueError):
        ArchitectureConfig(conditioning="sideways")
    with pytest.raises(ValueError):
        ArchitectureConfig(height=30)
    with pytest.raises(ValueError):
        ArchitectureConfig(delay_width=0)


def test_conditioning_submodules(res_nrm):
    for mode, enc, dec in [("none", False, False), ("encoder", True, False),
                           ("decoder", False, True), ("both", True, True)]:
        m = make(res_nrm, mode)
        assert (m.enc_cond is not None) == enc
        assert (m.enc_residual is not None) == enc
        assert (m.dec_cond is not None) == dec


def test_delay_argument_contract(res_nrm):
    x = torch.rand(1, 3, 32, 32)
    plain = make(res_nrm)
    with pytest.raises(ValueError):
        plain.encode(x, torch.tensor(0.5))
    both = make(res_nrm, "both")
    with pytest.raises(ValueError):
        both.encode(x)
    with pytest.raises(ValueError):
        both.decode(torch.zeros(1, 512))
    with pytest.raises(ValueError):
        plain.encode(torch.rand(1, 3, 16, 16))
    with pytest.raises(ValueError):
        plain.decode(torch.zeros(1, 100))


def test_fresh_conditioned_equals_unconditioned(res_nrm):
    x = torch.rand(2, 3, 32, 32)
    plain = make(res_nrm, "none")
    both = make(res_nrm, "both")
    with torch.no_grad():
        m0 = plain.encode(x)
        m1 = both.encode_at(x, 37.0)
        assert torch.equal(m0, m1)
        assert torch.equal(plain.decode(m0), both.decode_at(m0, 37.0))


def test_clipping(res_nrm):
    model = make(res_nrm)
    # the last GDN saturates at 1/sqrt(gamma); remove it to reach the clips
    model.enc_gdns[-1].set_params(torch.ones(8), torch.zeros(8, 8))
    with torch.no_grad():
        model.enc_convs[-1].bias.fill_(1e4)
        m = model.encode(torch.rand(1, 3, 32, 32))
    assert torch.all(m == model.clip_high)
    assert model.clip_high.item() == pytest.approx(res_nrm.normalize(1e8))
    with torch.no_grad():
        model.enc_convs[-1].bias.fill_(-1e4)
        m = model.encode(torch.rand(1, 3, 32, 32))
    assert torch.all(m == model.clip_low)


def test_zero_latent_is_equilibrium(res_nrm):
    model = make(res_nrm)
    with torch.no_grad():
        for conv in model.enc_convs:
            conv.weight.zero_()
        ohm = model.codeword_ohm(model.encode(torch.rand(1, 3, 32, 32)))
    torch.testing.assert_close(ohm, torch.full_like(ohm, 5e5), rtol=1e-5,
                               atol=0)


def test_decode_range_and_determinism(res_nrm):
    model = make(res_nrm, "decoder")
    m = torch.randn(3, 512) * 3
    with torch.no_grad():
        a = model.decode_at(m, 10.0)
        b = model.decode_at(m, 10.0)
    assert a.shape == (3, 3, 32, 32)
    assert torch.equal(a, b)
    assert a.min() >= 0 and a.max() <= 1


def test_same_seed_base_weights_shared(res_nrm):
    a, b = make(res_nrm, "none", 5), make(res_nrm, "both", 5)
    for ca, cb in zip(a.enc_convs, b.enc_convs):
        assert torch.equal(ca.weight, cb.weight)


def test_checkpoint_round_trip(res_nrm, tmp_path):
    model = make(res_nrm, "both")
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.01 * torch.randn_like(p))
    save_model(model, tmp_path / "m.pt", seed=3, extra={"x": 1})
    bundle = load_model(tmp_path / "m.pt")
    assert bundle.seed == 3 and bundle.meta == {"x": 1}
    back = bundle.model
    assert back.arch == model.arch and back.limits == Limits()
    assert back.delay_nrm == model.delay_nrm
    x = torch.rand(2, 3, 32, 32)
    model.eval()
    with torch.no_grad():
        assert torch.equal(model.encode_at(x, 7.0), back.encode_at(x, 7.0))
