"""Delay-conditioned convolutional JSCC autoencoder."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
from torch import nn

from .gdn import GDN, BetaConditioner, ResidualDelayProcessor
from .normalization import DelayNormalizer, ResistanceNormalizer

FORMAT_VERSION = 1
CONDITIONING_MODES = ("none", "encoder", "decoder", "both")


@dataclass
class ArchitectureConfig:
    height: int = 32
    width: int = 32
    channels_in: int = 3
    latent_channels: int = 8
    hidden_channels: tuple = (16, 32, 32, 32)
    kernels: tuple = (5, 5, 3, 3, 3)
    strides: tuple = (2, 2, 1, 1, 1)
    conditioning: str = "none"
    delay_width: int = 16
    act_width: int = 16
    beta_hidden: int = 32
    residual_hidden: int = 256

    def __post_init__(self):
        self.hidden_channels = tuple(self.hidden_channels)
        self.kernels = tuple(self.kernels)
        self.strides = tuple(self.strides)
        if self.conditioning not in CONDITIONING_MODES:
            raise ValueError(f"conditioning must be one of "
                             f"{CONDITIONING_MODES}, got {self.conditioning!r}")
        if not (len(self.kernels) == len(self.strides)
                == len(self.hidden_channels) + 1):
            raise ValueError("kernels/strides need one entry per layer")
        factor = math.prod(self.strides)
        if self.height % factor or self.width % factor:
            raise ValueError("image size not divisible by total stride")
        if min(self.delay_width, self.act_width, self.beta_hidden) < 1:
            raise ValueError("conditioning widths must be >= 1")

    @property
    def layer_channels(self) -> tuple:
        return self.hidden_channels + (self.latent_channels,)

    @property
    def latent_shape(self) -> tuple:
        f = math.prod(self.strides)
        return (self.latent_channels, self.height // f, self.width // f)

    @property
    def n(self) -> int:
        return math.prod(self.latent_shape)

    @property
    def encoder_conditioned(self) -> bool:
        return self.conditioning in ("encoder", "both")

    @property
    def decoder_conditioned(self) -> bool:
        return self.conditioning in ("decoder", "both")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("hidden_channels", "kernels", "strides"):
            d[k] = list(d[k])
        return d


@dataclass
class Limits:
    """Hard clip limits (ohm) and the resistance that maps to a zero latent."""
    b_low: float = 1.0
    b_high: float = 1.0e8
    r_center: float = 5.0e5

    def to_dict(self) -> dict:
        return asdict(self)


class JSCCModel(nn.Module):
    """Encoder/decoder pair; codewords are normalized log-resistances."""

    def __init__(self, arch: ArchitectureConfig,
                 res_nrm: ResistanceNormalizer,
                 delay_nrm: DelayNormalizer | None = None,
                 limits: Limits | None = None):
        super().__init__()
        self.arch = arch
        self.res_nrm = res_nrm
        self.delay_nrm = delay_nrm or DelayNormalizer()
        self.limits = limits or Limits()
        chans = (arch.channels_in,) + arch.layer_channels

        # base layers first so every conditioning mode shares their init
        self.enc_convs = nn.ModuleList(
            nn.Conv2d(chans[i], chans[i + 1], k, s, padding=k // 2)
            for i, (k, s) in enumerate(zip(arch.kernels, arch.strides)))
        self.enc_gdns = nn.ModuleList(GDN(c) for c in chans[1:])
        self.enc_acts = nn.ModuleList(nn.PReLU(c) for c in chans[1:-1])
        rchans = chans[::-1]
        self.dec_convs = nn.ModuleList(
            nn.ConvTranspose2d(rchans[i], rchans[i + 1], k, s,
                               padding=k // 2, output_padding=s - 1)
            for i, (k, s) in enumerate(zip(arch.kernels[::-1],
                                           arch.strides[::-1])))
        self.dec_gdns = nn.ModuleList(GDN(c, inverse=True)
                                      for c in rchans[1:-1])
        self.dec_acts = nn.ModuleList(nn.PReLU(c) for c in rchans[1:-1])
        # variance-preserving init; the default shrinks activations layer
        # by layer and the untrained decoder then ignores its input
        for conv in list(self.enc_convs) + list(self.dec_convs):
            nn.init.kaiming_normal_(conv.weight, a=0.25,
                                    nonlinearity="leaky_relu")
            nn.init.zeros_(conv.bias)

        def conditioners(cs):
            return nn.ModuleList(
                BetaConditioner(c, arch.delay_width, arch.act_width,
                                arch.beta_hidden) for c in cs)

        self.enc_cond = self.enc_residual = None
        self.dec_cond = self.dec_residual = None
        if arch.encoder_conditioned:
            self.enc_cond = conditioners(chans[1:])
            self.enc_residual = ResidualDelayProcessor(arch.n,
                                                       arch.residual_hidden)
        if arch.decoder_conditioned:
            self.dec_cond = conditioners(rchans[1:-1])
            self.dec_residual = ResidualDelayProcessor(arch.n,
                                                       arch.residual_hidden)

        lim = self.limits
        self.register_buffer("center", torch.tensor(
            res_nrm.normalize(lim.r_center)))
        self.register_buffer("clip_low", torch.tensor(
            res_nrm.normalize(lim.b_low)))
        self.register_buffer("clip_high", torch.tensor(
            res_nrm.normalize(lim.b_high)))

    @property
    def conditioning(self) -> str:
        return self.arch.conditioning

    def normalize_delay(self, delay) -> torch.Tensor:
        return torch.as_tensor(self.delay_nrm.normalize(delay),
                               dtype=self.center.dtype)

    def _condition(self, dbar, wanted: bool, side: str):
        if wanted and dbar is None:
            raise ValueError(f"{side} is delay-conditioned; pass dbar")
        if not wanted and dbar is not None:
            raise ValueError(f"{side} is not delay-conditioned; "
                             f"dbar must be omitted")
        if dbar is None:
            return None
        return torch.as_tensor(dbar, dtype=self.center.dtype)

    def encode(self, x: torch.Tensor, dbar=None) -> torch.Tensor:
        """Images ``[B, C, H, W]`` in [0, 1] -> codewords ``[B, n]``."""
        a = self.arch
        if x.dim() != 4 or tuple(x.shape[1:]) != (a.channels_in, a.height,
                                                  a.width):
            raise ValueError(f"expected images [B, {a.channels_in}, "
                             f"{a.height}, {a.width}], got {tuple(x.shape)}")
        dbar = self._condition(dbar, a.encoder_conditioned, "encoder")
        h = x - 0.5
        last = len(self.enc_convs) - 1
        for i, (conv, gdn) in enumerate(zip(self.enc_convs, self.enc_gdns)):
            h = conv(h)
            shift = None if dbar is None else self.enc_cond[i](h, dbar)
            h = gdn(h, shift)
            if i < last:
                h = self.enc_acts[i](h)
        z = h.flatten(1)
        if dbar is not None:
            z = self.enc_residual(z, dbar)
        return torch.clamp(self.center + z, self.clip_low, self.clip_high)

    def decode(self, m: torch.Tensor, dbar=None) -> torch.Tensor:
        """Received codewords ``[B, n]`` -> images ``[B, C, H, W]``."""
        a = self.arch
        if m.dim() != 2 or m.shape[1] != a.n:
            raise ValueError(f"expected codewords [B, {a.n}], "
                             f"got {tuple(m.shape)}")
        dbar = self._condition(dbar, a.decoder_conditioned, "decoder")
        z = m - self.center
        if dbar is not None:
            z = self.dec_residual(z, dbar)
        h = z.view(-1, *a.latent_shape)
        last = len(self.dec_convs) - 1
        for i, conv in enumerate(self.dec_convs):
            h = conv(h)
            if i < last:
                shift = None if dbar is None else self.dec_cond[i](h, dbar)
                h = self.dec_acts[i](self.dec_gdns[i](h, shift))
        return torch.sigmoid(h)

    def encode_at(self, x, delay):
        """Encode, supplying the normalized delay only when it is used."""
        dbar = (self.normalize_delay(delay) if self.arch.encoder_conditioned
                else None)
        return self.encode(x, dbar)

    def decode_at(self, m, delay):
        dbar = (self.normalize_delay(delay) if self.arch.decoder_conditioned
                else None)
        return self.decode(m, dbar)

    def codeword_ohm(self, m: torch.Tensor) -> torch.Tensor:
        return torch.exp(self.res_nrm.to_log(m))


@dataclass
class ModelBundle:
    model: JSCCModel
    seed: int = 0
    meta: dict = field(default_factory=dict)


def save_model(model: JSCCModel, path, seed: int = 0,
               extra: dict | None = None):
    torch.save({
        "format_version": FORMAT_VERSION,
        "kind": "jscc",
        "arch": model.arch.to_dict(),
        "resistance_normalizer": model.res_nrm.to_dict(),
        "delay_normalizer": model.delay_nrm.to_dict(),
        "limits": model.limits.to_dict(),
        "conditioning": model.conditioning,
        "seed": seed,
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }, path)


def model_from_blob(blob: dict) -> JSCCModel:
    if blob.get("kind") != "jscc":
        raise ValueError("not a JSCC model checkpoint")
    model = JSCCModel(ArchitectureConfig(**blob["arch"]),
                      ResistanceNormalizer.from_dict(
                          blob["resistance_normalizer"]),
                      DelayNormalizer.from_dict(blob["delay_normalizer"]),
                      Limits(**blob["limits"]))
    model.load_state_dict(blob["state_dict"])
    return model


def load_model(path) -> ModelBundle:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    model = model_from_blob(blob)
    model.eval()
    return ModelBundle(model, blob.get("seed", 0), blob.get("extra", {}))
