"""Reconstruction metric, soft-limit and energy penalties, total loss."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .energy import EnergyModelParams, energy_from_log_resistance
from .errors import DomainError, TrainingError
from .normalization import ResistanceNormalizer


@dataclass
class RegularizationConfig:
    r_high: float = 750e3
    r_low: float = 100.0
    lambda_resistance: float = 1.0
    lambda_energy: float = 1.0
    e_b: float = 0.01
    energy_penalty: str = "default"   # or "literal"
    reconstruction: str = "mse"       # or "frobenius"

    def __post_init__(self):
        if not self.r_low < self.r_high:
            raise DomainError("need r_low < r_high")
        if self.lambda_resistance < 0 or self.lambda_energy < 0:
            raise DomainError("penalty weights must be non-negative")
        if not self.e_b > 0:
            raise DomainError("energy budget must be positive")
        if self.energy_penalty not in ("default", "literal"):
            raise DomainError("energy_penalty must be 'default' or 'literal'")
        if self.reconstruction not in ("mse", "frobenius"):
            raise DomainError("reconstruction must be 'mse' or 'frobenius'")

    def to_dict(self) -> dict:
        return asdict(self)


def psnr(x, x_hat) -> float:
    """PSNR in dB for images scaled to [0, 1]; ``inf`` when identical."""
    x = np.asarray(x, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    mse = float(np.mean((x - x_hat) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def psnr_per_image(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    mse = ((x - x_hat) ** 2).flatten(1).mean(dim=1)
    return 10.0 * torch.log10(1.0 / mse)


def r_upper(m: torch.Tensor, upper: float) -> torch.Tensor:
    """Per-codeword mean squared excess above ``upper`` (normalized)."""
    return torch.relu(m - upper).pow(2).mean(dim=-1)


def r_lower(m: torch.Tensor, lower: float) -> torch.Tensor:
    return torch.relu(lower - m).pow(2).mean(dim=-1)


def codeword_energy(m: torch.Tensor, res_nrm: ResistanceNormalizer,
                    energy: EnergyModelParams) -> torch.Tensor:
    """Per-entry programming energy (J) of normalized codewords."""
    return energy_from_log_resistance(res_nrm.to_log(m), energy)


def r_energy(m: torch.Tensor, res_nrm: ResistanceNormalizer,
             energy: EnergyModelParams, cfg: RegularizationConfig):
    """Energy penalty over a batch of codewords ``[B, n]``.

    ``default``: squared relative excess of the batch-mean energy over the
    budget. ``literal``: ``sum_b mean_i (1 - E_i / e_b)^2``.
    """
    e = codeword_energy(m, res_nrm, energy)
    if cfg.energy_penalty == "literal":
        return (1.0 - e / cfg.e_b).pow(2).mean(dim=-1).sum()
    return torch.relu(e.mean() / cfg.e_b - 1.0).pow(2)


def reconstruction_loss(x, x_hat, kind: str = "mse"):
    if kind == "frobenius":
        return torch.sqrt(((x - x_hat) ** 2).sum())
    return ((x - x_hat) ** 2).mean()


def soft_limits(res_nrm: ResistanceNormalizer, cfg: RegularizationConfig):
    """Soft resistance limits mapped into normalized space."""
    return res_nrm.normalize(cfg.r_low), res_nrm.normalize(cfg.r_high)


def total_loss(x, x_hat, m, m_energy, res_nrm: ResistanceNormalizer,
               energy: EnergyModelParams, cfg: RegularizationConfig,
               check_finite: bool = True):
    """Reconstruction + resistance penalties + energy penalty.

    ``m`` are the codewords that went through the channel; ``m_energy``
    are the codewords encoded at the energy-grid delays. Returns the scalar
    loss and a dict of the individual (detached) terms.
    """
    if x.shape[0] < 1:
        raise DomainError("empty batch")
    low, high = soft_limits(res_nrm, cfg)
    rec = reconstruction_loss(x, x_hat, cfg.reconstruction)
    up = r_upper(m, high).sum()
    lo = r_lower(m, low).sum()
    en = r_energy(m_energy, res_nrm, energy, cfg)
    loss = rec + cfg.lambda_resistance * (up + lo) + cfg.lambda_energy * en
    terms = {"reconstruction": rec.item(), "r_upper": up.item(),
             "r_lower": lo.item(), "r_energy": en.item(),
             "loss": loss.item()}
    if check_finite and not math.isfinite(terms["loss"]):
        raise TrainingError(f"non-finite loss: {terms}")
    return loss, terms


@dataclass(frozen=True)
class DelayEnergyGrid:
    delays: np.ndarray

    @property
    def spacing(self) -> float:
        return float(self.delays[1] - self.delays[0])


def make_energy_delay_grid(b: int, d_min: float, d_max: float):
    if b < 2:
        raise DomainError("energy grid needs b >= 2")
    if d_min > d_max:
        raise DomainError("need d_min <= d_max")
    return DelayEnergyGrid(np.linspace(d_min, d_max, b))
