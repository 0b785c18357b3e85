import math

import numpy as np
import pytest
import torch

from memjscc import DomainError, TrainingError
from memjscc.energy import EnergyModelParams
from memjscc.losses import (RegularizationConfig, codeword_energy,
                            make_energy_delay_grid, psnr, psnr_per_image,
                            r_energy, r_lower, r_upper, soft_limits,
                            total_loss)
from memjscc.model import ArchitectureConfig, JSCCModel

E = EnergyModelParams()


def test_psnr_examples():
    x = np.zeros((2, 4))
    assert psnr(x, x + 0.1) == pytest.approx(20.0)
    assert psnr(x, x + 1.0) == pytest.approx(0.0)
    assert psnr(x, x) == math.inf
    with pytest.raises(ValueError):
        psnr(x, np.zeros(3))
    t = torch.zeros(2, 3, 2, 2)
    torch.testing.assert_close(psnr_per_image(t, t + 0.1),
                               torch.full((2,), 20.0))


def test_soft_limit_penalties(res_nrm):
    cfg = RegularizationConfig()
    low, high = soft_limits(res_nrm, cfg)
    m = torch.full((1, 10), (low + high) / 2, dtype=torch.float64)
    assert r_upper(m, high).item() == 0 and r_lower(m, low).item() == 0
    m[0, 3] = high + 0.5
    assert r_upper(m, high).item() == pytest.approx(0.25 / 10)
    m[0, 3] = low - 0.2
    assert r_lower(m, low).item() == pytest.approx(0.04 / 10)
    assert r_upper(torch.randn(5, 10), high).min() >= 0


def test_energy_penalty(res_nrm):
    cfg = RegularizationConfig(e_b=0.01)
    eq = torch.full((2, 4), res_nrm.normalize(5e5))
    assert r_energy(eq, res_nrm, E, cfg).item() == pytest.approx(0, abs=1e-12)

    def codeword_at(e):
        # E = A ln(r_start / r)  =>  r = r_start exp(-e / A)
        return torch.full((2, 4), res_nrm.normalize(5e5 * math.exp(-e / E.A)),
                          dtype=torch.float64)

    at_budget = codeword_at(0.01)
    assert r_energy(at_budget, res_nrm, E, cfg).item() == pytest.approx(
        0, abs=1e-9)
    assert r_energy(codeword_at(0.02), res_nrm, E, cfg).item() == (
        pytest.approx(1.0, rel=1e-9))
    lit = RegularizationConfig(e_b=0.01, energy_penalty="literal")
    mixed = torch.cat([codeword_at(0.0)[:, :2], codeword_at(0.02)[:, :2]], 1)
    assert codeword_energy(mixed, res_nrm, E).mean().item() == pytest.approx(
        0.01)
    assert r_energy(mixed, res_nrm, E, cfg).item() == pytest.approx(
        0, abs=1e-9)
    assert r_energy(mixed, res_nrm, E, lit).item() == pytest.approx(2.0)


def test_config_validation():
    with pytest.raises(DomainError):
        RegularizationConfig(r_low=1e6, r_high=1e3)
    with pytest.raises(DomainError):
        RegularizationConfig(e_b=0)
    with pytest.raises(DomainError):
        RegularizationConfig(lambda_energy=-1)
    with pytest.raises(DomainError):
        RegularizationConfig(energy_penalty="other")


def test_total_loss_zero_and_monotone(res_nrm):
    cfg = RegularizationConfig()
    x = torch.rand(2, 3, 4, 4)
    eq = torch.full((2, 6), res_nrm.normalize(5e5), dtype=torch.float64)
    loss, terms = total_loss(x, x, eq, eq, res_nrm, E, cfg)
    assert loss.item() == pytest.approx(0, abs=1e-12)
    assert set(terms) == {"reconstruction", "r_upper", "r_lower", "r_energy",
                          "loss"}
    m = torch.randn(2, 6, dtype=torch.float64) * 4
    xh = torch.rand(2, 3, 4, 4)
    full, _ = total_loss(x, xh, m, m, res_nrm, E, cfg)
    for key in ("lambda_resistance", "lambda_energy"):
        part, _ = total_loss(x, xh, m, m, res_nrm, E,
                             RegularizationConfig(**{key: 0.0}))
        assert part.item() <= full.item()


def test_total_loss_errors(res_nrm):
    cfg = RegularizationConfig()
    with pytest.raises(DomainError):
        total_loss(torch.zeros(0, 3), torch.zeros(0, 3), torch.zeros(0, 2),
                   torch.zeros(0, 2), res_nrm, E, cfg)
    x = torch.zeros(1, 3)
    with pytest.raises(TrainingError):
        total_loss(x, x + math.nan, torch.zeros(1, 2), torch.zeros(1, 2),
                   res_nrm, E, cfg)


def test_frobenius_reconstruction(res_nrm):
    cfg = RegularizationConfig(reconstruction="frobenius")
    x = torch.zeros(2, 3, 2, 2)
    eq = torch.full((2, 4), res_nrm.normalize(5e5))
    loss, _ = total_loss(x, x + 0.5, eq, eq, res_nrm, E, cfg)
    assert loss.item() == pytest.approx(math.sqrt(24 * 0.25), rel=1e-6)


def test_total_loss_gradient_finite_difference(res_nrm):
    torch.manual_seed(0)
    arch = ArchitectureConfig(hidden_channels=(4, 4, 4, 4), latent_channels=2,
                              conditioning="both", residual_hidden=16)
    model = JSCCModel(arch, res_nrm).double()
    cfg = RegularizationConfig(e_b=0.001)
    x = torch.rand(2, 3, 32, 32, dtype=torch.float64)
    dbar = torch.tensor([0.3, -0.7], dtype=torch.float64)
    w = model.enc_convs[0].weight

    def loss_fn():
        m = model.encode(x, dbar)
        return total_loss(x, model.decode(m, dbar), m, m, res_nrm, E,
                          cfg)[0]

    loss_fn().backward()
    rng = np.random.default_rng(1)
    for _ in range(20):
        idx = tuple(int(rng.integers(s)) for s in w.shape)
        analytic = w.grad[idx].item()
        h = 1e-6
        with torch.no_grad():
            w[idx] += h
            up = loss_fn().item()
            w[idx] -= 2 * h
            down = loss_fn().item()
            w[idx] += h
        numeric = (up - down) / (2 * h)
        assert abs(analytic - numeric) <= 1e-3 * max(abs(numeric), 1e-8)


def test_energy_delay_grid():
    g = make_energy_delay_grid(5, 0, 1000)
    assert g.delays.tolist() == [0, 250, 500, 750, 1000]
    assert make_energy_delay_grid(2, 3, 9).delays.tolist() == [3, 9]
    assert make_energy_delay_grid(32, 0, 1000).spacing == pytest.approx(
        32.258, abs=1e-3)
    with pytest.raises(DomainError):
        make_energy_delay_grid(1, 0, 1)
    with pytest.raises(DomainError):
        make_energy_delay_grid(4, 5, 1)
