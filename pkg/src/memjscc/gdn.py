"""Generalized divisive normalization and its delay-conditioned variant.

.. math::

   u_i = \\frac{w_i}{\\sqrt{\\beta_i + \\sum_j \\gamma_{ij} w_j^2}}

The inverse layer multiplies by the same square root instead of dividing.
In the conditioned layer a small network produces a per-sample offset that
is added to ``beta``.
"""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

BETA_FLOOR = 1e-6
# normalized delays over a [0, 1000] s range span roughly [-8, 1]; shrinking
# the first delay weights keeps the embedding near-linear over that span so
# rarely sampled short delays are interpolated rather than extrapolated
DELAY_INIT_SCALE = 0.125


class GDN(nn.Module):
    """GDN / inverse GDN over the channel dimension of ``[B, C, H, W]``.

    ``beta`` and ``gamma`` are stored as square roots so they stay
    non-negative; ``beta`` additionally carries the floor.
    """

    def __init__(self, channels: int, inverse: bool = False,
                 beta_floor: float = BETA_FLOOR, gamma_init: float = 0.1):
        super().__init__()
        self.channels = channels
        self.inverse = inverse
        self.beta_floor = beta_floor
        self.beta_sqrt = nn.Parameter(torch.ones(channels))
        self.gamma_sqrt = nn.Parameter(
            torch.sqrt(torch.tensor(gamma_init)) * torch.eye(channels))

    @property
    def beta(self) -> torch.Tensor:
        return self.beta_sqrt ** 2 + self.beta_floor

    @property
    def gamma(self) -> torch.Tensor:
        return self.gamma_sqrt ** 2

    def set_params(self, beta: torch.Tensor, gamma: torch.Tensor):
        """Load explicit ``beta``/``gamma`` values (for tests and tools)."""
        beta = torch.as_tensor(beta, dtype=self.beta_sqrt.dtype)
        gamma = torch.as_tensor(gamma, dtype=self.gamma_sqrt.dtype)
        with torch.no_grad():
            self.beta_sqrt.copy_(torch.sqrt(
                torch.clamp(beta - self.beta_floor, min=0.0)))
            self.gamma_sqrt.copy_(torch.sqrt(gamma))

    def forward(self, x: torch.Tensor, beta_shift: torch.Tensor | None = None):
        beta = self.beta
        if beta_shift is None:
            beta = beta.view(1, -1, 1, 1)
        else:
            beta = torch.clamp(beta + beta_shift, min=self.beta_floor)
            beta = beta.view(*beta.shape, 1, 1)
        gamma = self.gamma.view(self.channels, self.channels, 1, 1)
        norm = F.conv2d(x * x, gamma) + beta
        if self.inverse:
            return x * torch.sqrt(norm)
        return x * torch.rsqrt(norm)


def _fc(n_in: int, n_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(n_in, n_out), nn.SiLU())


class BetaConditioner(nn.Module):
    """Per-sample ``beta`` offset from the delay and pooled activations.

    The output layer starts at zero, so a fresh conditioner leaves the
    wrapped GDN unchanged.
    """

    def __init__(self, channels: int, delay_width: int = 16,
                 act_width: int = 16, hidden: int = 32,
                 delay_init_scale: float = DELAY_INIT_SCALE):
        super().__init__()
        self.delay_net = nn.Sequential(_fc(1, delay_width),
                                       _fc(delay_width, delay_width))
        with torch.no_grad():
            self.delay_net[0][0].weight.mul_(delay_init_scale)
        self.act_net = _fc(channels, act_width)
        self.combined = nn.Sequential(_fc(delay_width + act_width, hidden),
                                      nn.Linear(hidden, channels))
        nn.init.zeros_(self.combined[-1].weight)
        nn.init.zeros_(self.combined[-1].bias)

    def forward(self, x: torch.Tensor, dbar: torch.Tensor) -> torch.Tensor:
        dbar = dbar.reshape(-1, 1).to(x.dtype).expand(x.shape[0], 1)
        pooled = x.mean(dim=(2, 3))
        emb = torch.cat([self.delay_net(dbar), self.act_net(pooled)], dim=1)
        return self.combined(emb)


class CGDN(nn.Module):
    """Conditional GDN (or its inverse when ``inverse=True``)."""

    def __init__(self, channels: int, inverse: bool = False,
                 delay_width: int = 16, act_width: int = 16,
                 hidden: int = 32):
        super().__init__()
        self.gdn = GDN(channels, inverse=inverse)
        self.conditioner = BetaConditioner(channels, delay_width, act_width,
                                           hidden)

    def forward(self, x: torch.Tensor, dbar: torch.Tensor):
        return self.gdn(x, self.conditioner(x, dbar))


def gdn_forward(w, params: GDN):
    return params(w)


def igdn_forward(u, params: GDN):
    if not params.inverse:
        raise ValueError("igdn_forward needs an inverse GDN layer")
    return params(u)


def cgdn_forward(w, dbar, layer: CGDN):
    return layer(w, dbar)


class ResidualDelayProcessor(nn.Module):
    """``latent + mlp([latent, dbar])`` with a zero-initialised last layer."""

    def __init__(self, n: int, hidden: int = 256, layers: int = 2,
                 delay_init_scale: float = DELAY_INIT_SCALE):
        super().__init__()
        self.n = n
        mods: list[nn.Module] = []
        width = n + 1
        for _ in range(layers):
            mods += [nn.Linear(width, hidden), nn.SiLU()]
            width = hidden
        mods.append(nn.Linear(width, n))
        self.net = nn.Sequential(*mods)
        with torch.no_grad():
            self.net[0].weight[:, -1].mul_(delay_init_scale)
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)

    def forward(self, latent: torch.Tensor, dbar: torch.Tensor):
        if latent.shape[-1] != self.n:
            raise ValueError(
                f"expected latent length {self.n}, got {latent.shape[-1]}")
        dbar = dbar.reshape(-1, 1).to(latent.dtype).expand(latent.shape[0], 1)
        return latent + self.net(torch.cat([latent, dbar], dim=1))
