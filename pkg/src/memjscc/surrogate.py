"""Differentiable drift channel: a conditional Gaussian in normalized
log-resistance space, fit to simulator trajectories by maximum likelihood.

``channel_forward`` draws ``mu(r, d) + sigma(r, d) * eps``; because the
noise enters through reparameterization, gradients flow back into the
codeword. Delays beyond the fitted range are handled by composing the
channel over equal sub-delays.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from scipy import stats
from torch import nn
from torch.nn import functional as F

from . import drift
from .errors import DomainError, TrainingError, ValidityError
from .normalization import (DelayNormalizer, ResistanceNormalizer,
                            fit_delay_normalizer)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


def _mlp(n_in: int, hidden: int, layers: int) -> nn.Sequential:
    mods: list[nn.Module] = []
    width = n_in
    for _ in range(layers):
        mods += [nn.Linear(width, hidden), nn.Tanh()]
        width = hidden
    mods.append(nn.Linear(width, 1))
    return nn.Sequential(*mods)


class SurrogateChannel(nn.Module):
    """Location-scale drift model with validity bookkeeping.

    ``d_min``/``d_valid`` bound the delays seen during fitting; a single
    application is trusted only inside that interval, and at most ``n``
    applications are composed.
    """

    def __init__(self, res_nrm: ResistanceNormalizer,
                 delay_nrm: DelayNormalizer, hidden: int = 64,
                 layers: int = 2, d_min: float = 1.0,
                 d_valid: float = 500.0, n: int = 4,
                 input_shift: float = 0.0, input_scale: float = 1.0):
        super().__init__()
        if n < 1:
            raise DomainError("recurrence count must be >= 1")
        if not 0 < d_min <= d_valid:
            raise DomainError("need 0 < d_min <= d_valid")
        self.res_nrm = res_nrm
        self.delay_nrm = delay_nrm
        self.hidden, self.layers = hidden, layers
        self.d_min, self.d_valid, self.n = float(d_min), float(d_valid), n
        self.register_buffer("input_shift", torch.tensor(float(input_shift)))
        self.register_buffer("input_scale", torch.tensor(float(input_scale)))
        self.f_mu = _mlp(2, hidden, layers)
        self.f_sigma = _mlp(2, hidden, layers)
        nn.init.zeros_(self.f_mu[-1].weight)
        nn.init.zeros_(self.f_mu[-1].bias)
        nn.init.constant_(self.f_sigma[-1].bias, -2.0)

    @property
    def max_delay(self) -> float:
        return self.n * self.d_valid

    def moments(self, rbar: torch.Tensor, delay: torch.Tensor):
        """Mean and std of the normalized output for one application.

        The mean shift is scaled by ``delay/d_valid`` and the std by its
        square root, so both vanish as the delay goes to zero.
        """
        delay = delay.expand_as(rbar)
        dbar = (torch.log(delay + self.delay_nrm.offset)
                - self.delay_nrm.mu) / self.delay_nrm.sigma
        z = torch.stack([(rbar - self.input_shift) / self.input_scale, dbar],
                        dim=-1)
        scale = delay / self.d_valid
        mu = rbar + scale * self.f_mu(z).squeeze(-1)
        sigma = torch.sqrt(scale) * F.softplus(self.f_sigma(z).squeeze(-1))
        return mu, sigma

    def split(self, delay: float) -> tuple[int, float]:
        """(applications, sub-delay) for a delay; raises if unsupported."""
        if delay < 0:
            raise DomainError("delay must be non-negative")
        if delay == 0:
            return 0, 0.0
        steps = max(1, math.ceil(delay / self.d_valid - 1e-12))
        if steps > self.n:
            raise ValidityError(
                f"delay {delay} s exceeds n*d_valid = {self.max_delay} s")
        sub = delay / steps
        if sub < self.d_min * (1 - 1e-9):
            raise ValidityError(
                f"sub-delay {sub} s below fitted minimum {self.d_min} s")
        return steps, sub

    def forward(self, m: torch.Tensor, delay, generator=None, noise=None):
        """Pass normalized codewords through the channel.

        ``delay`` is a float or a per-row tensor/array (first dim of ``m``).
        ``noise`` optionally supplies the standard normals, shaped
        ``[n, *m.shape]``; otherwise they are drawn from ``generator``.
        """
        if np.ndim(delay) == 0:
            steps, sub = self.split(float(delay))
            if steps == 0:
                return m
            sub_t = torch.tensor(sub, dtype=m.dtype, device=m.device)
            out = m
            for k in range(steps):
                mu, sigma = self.moments(out, sub_t)
                eps = (noise[k] if noise is not None else
                       torch.randn(m.shape, generator=generator,
                                   dtype=m.dtype, device=m.device))
                out = mu + sigma * eps
            return out
        delays = np.asarray(delay, dtype=float).reshape(-1)
        if len(delays) != m.shape[0]:
            raise DomainError("need one delay per codeword")
        plan = [self.split(float(d)) for d in delays]
        steps = torch.tensor([s for s, _ in plan])
        shape = [-1] + [1] * (m.dim() - 1)
        sub_t = torch.tensor([max(sub, self.d_min) for _, sub in plan],
                             dtype=m.dtype, device=m.device).view(shape)
        out = m
        for k in range(int(steps.max()) if len(steps) else 0):
            mu, sigma = self.moments(out, sub_t)
            eps = (noise[k] if noise is not None else
                   torch.randn(m.shape, generator=generator, dtype=m.dtype,
                               device=m.device))
            active = (steps > k).view(shape).to(m.dtype)
            out = active * (mu + sigma * eps) + (1 - active) * out
        return out

    def config(self) -> dict:
        return {"hidden": self.hidden, "layers": self.layers,
                "d_min": self.d_min, "d_valid": self.d_valid, "n": self.n,
                "input_shift": float(self.input_shift),
                "input_scale": float(self.input_scale)}


def channel_forward(m, d, params: SurrogateChannel, generator=None,
                    noise=None):
    return params(m, d, generator=generator, noise=noise)


@dataclass
class SurrogateFitConfig:
    d_valid: float = 500.0
    n: int = 4
    hidden: int = 64
    layers: int = 2
    epochs: int = 20
    batch_size: int = 1024
    lr: float = 1e-3
    final_lr_fraction: float = 0.01
    n_pairs: int = 600_000
    pool_factor: int = 4
    balance_bins: int = 40
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def extract_pairs(dataset: drift.DriftDataset, max_lag: int, n_pairs: int,
                  rng: np.random.Generator, pool_factor: int = 4,
                  balance_bins: int = 40, res_nrm=None):
    """Sample (r_in, r_out, delay) pairs from the dataset's trajectories.

    Lags are drawn log-uniformly over ``[1, max_lag]`` samples and the pool
    is resampled so input resistances are roughly balanced across
    ``balance_bins`` bins of normalized log-resistance.
    """
    rows = dataset.resistances
    count, points = rows.shape
    max_lag = min(max_lag, points - 1)
    if max_lag < 1:
        raise DomainError("series too short to form pairs")
    pool = n_pairs * pool_factor
    lag = np.floor(np.exp(rng.uniform(0, math.log(max_lag + 1), pool)))
    lag = np.clip(lag, 1, max_lag).astype(np.int64)
    series = rng.integers(0, count, pool)
    start = (rng.random(pool) * (points - lag)).astype(np.int64)
    r_in = rows[series, start]
    r_out = rows[series, start + lag]
    key = np.log(r_in) if res_nrm is None else res_nrm.normalize(r_in)
    edges = np.linspace(key.min(), key.max() + 1e-12, balance_bins + 1)
    which = np.clip(np.digitize(key, edges) - 1, 0, balance_bins - 1)
    counts = np.bincount(which, minlength=balance_bins)
    weight = 1.0 / counts[which]
    pick = rng.choice(pool, size=min(n_pairs, pool), replace=False,
                      p=weight / weight.sum())
    dt = 1.0 / dataset.config.sample_rate_hz
    return r_in[pick], r_out[pick], lag[pick] * dt


def fit_surrogate(dataset: drift.DriftDataset,
                  res_nrm: ResistanceNormalizer,
                  cfg: SurrogateFitConfig | None = None) -> SurrogateChannel:
    """Maximum-likelihood fit of the location-scale channel."""
    cfg = cfg or SurrogateFitConfig()
    dt = 1.0 / dataset.config.sample_rate_hz
    max_delay = (dataset.config.points - 1) * dt
    if cfg.d_valid > max_delay + 1e-9:
        raise DomainError(
            f"d_valid={cfg.d_valid} exceeds dataset span {max_delay}")
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    torch.manual_seed(cfg.seed)
    max_lag = int(round(cfg.d_valid / dt))
    r_in, r_out, d = extract_pairs(dataset, max_lag, cfg.n_pairs, rng,
                                   cfg.pool_factor, cfg.balance_bins, res_nrm)
    x_in = res_nrm.normalize(r_in)
    x_out = res_nrm.normalize(r_out)
    d_lo, d_hi = float(d.min()), float(d.max())
    delay_nrm = fit_delay_normalizer(d_lo, d_hi)
    model = SurrogateChannel(res_nrm, delay_nrm, cfg.hidden, cfg.layers,
                             d_min=d_lo, d_valid=d_hi, n=cfg.n,
                             input_shift=float(x_in.mean()),
                             input_scale=float(x_in.std() or 1.0)).double()

    tx = torch.from_numpy(x_in)
    ty = torch.from_numpy(x_out)
    td = torch.from_numpy(d.astype(float))
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    n = len(tx)
    total_steps = cfg.epochs * math.ceil(n / cfg.batch_size)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(
        opt, total_steps, eta_min=cfg.lr * cfg.final_lr_fraction)
    gen = torch.Generator().manual_seed(cfg.seed)
    for epoch in range(cfg.epochs):
        order = torch.randperm(n, generator=gen)
        total = 0.0
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            mu, sigma = model.moments(tx[idx], td[idx])
            nll = (torch.log(sigma) + 0.5 * ((ty[idx] - mu) / sigma) ** 2)
            loss = nll.mean()
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"surrogate NLL non-finite at epoch {epoch}, batch "
                    f"{i // cfg.batch_size}: loss={loss.item()}, "
                    f"sigma range=({sigma.min().item()}, "
                    f"{sigma.max().item()})")
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            total += loss.item() * len(idx)
        log.info("surrogate epoch %d nll %.5f", epoch + 1, total / n)
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def save_surrogate(model: SurrogateChannel, path, extra: dict | None = None):
    torch.save({
        "format_version": FORMAT_VERSION,
        "kind": "surrogate",
        "config": model.config(),
        "resistance_normalizer": model.res_nrm.to_dict(),
        "delay_normalizer": model.delay_nrm.to_dict(),
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }, path)


def load_surrogate(path) -> SurrogateChannel:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("kind") != "surrogate":
        raise ValueError(f"{path} is not a surrogate checkpoint")
    model = SurrogateChannel(
        ResistanceNormalizer.from_dict(blob["resistance_normalizer"]),
        DelayNormalizer.from_dict(blob["delay_normalizer"]),
        **blob["config"]).double()
    model.load_state_dict(blob["state_dict"])
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


@dataclass
class ValidationCell:
    r0_ohm: float
    delay_s: float
    sim_mean: float
    sur_mean: float
    sim_std: float
    sur_std: float
    ks_stat: float
    ks_pvalue: float
    mean_ok: bool
    std_ok: bool

    @property
    def passed(self) -> bool:
        return self.mean_ok and self.std_ok


def validate_surrogate(model: SurrogateChannel,
                       device: drift.DeviceModelParams, r0s, delays,
                       n: int = 10_000, seed: int = 0,
                       mean_tol: float = 0.1,
                       std_rel_tol: float = 0.15) -> list[ValidationCell]:
    """Compare surrogate and simulator output statistics cell by cell."""
    cells = []
    for d in delays:
        model.split(float(d))
    for i, r0 in enumerate(r0s):
        for j, d in enumerate(delays):
            rng = np.random.Generator(np.random.Philox([seed, i, j]))
            r_q = drift.count_to_resistance(
                drift.resistance_to_count(r0, device), device)
            sim = model.res_nrm.normalize(
                drift.sample_drift(np.full(n, r_q), d, device, rng))
            gen = torch.Generator().manual_seed(
                int(rng.integers(0, 2 ** 62)))
            start = torch.full((n,), model.res_nrm.normalize(r_q),
                               dtype=torch.float64)
            with torch.no_grad():
                sur = model(start, float(d), generator=gen).numpy()
            ks = stats.ks_2samp(sim, sur)
            sim_std, sur_std = float(sim.std()), float(sur.std())
            cells.append(ValidationCell(
                float(r0), float(d), float(sim.mean()), float(sur.mean()),
                sim_std, sur_std, float(ks.statistic), float(ks.pvalue),
                abs(sim.mean() - sur.mean()) <= mean_tol,
                abs(sur_std - sim_std) <= std_rel_tol * sim_std))
    return cells


VALIDATION_COLUMNS = ["r0_ohm", "delay_s", "sim_mean", "sur_mean", "sim_std",
                      "sur_std", "ks_stat", "ks_pvalue", "mean_ok", "std_ok",
                      "passed"]


def write_validation_csv(cells: list[ValidationCell], path):
    with open(path, "w") as fh:
        fh.write(",".join(VALIDATION_COLUMNS) + "\n")
        for c in cells:
            row = asdict(c)
            row["passed"] = c.passed
            fh.write(",".join(repr(row[k]) if isinstance(row[k], float)
                              else str(row[k]) for k in VALIDATION_COLUMNS)
                     + "\n")
