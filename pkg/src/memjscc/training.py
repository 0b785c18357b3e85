"""Delay-specialised training of the JSCC autoencoder.

Each step reconstructs the batch through the surrogate channel at one
sampled delay, while the energy penalty is computed on a second encoding
of the same batch in which sample ``i`` is paired with the ``i``-th delay
of a fixed, evenly spaced grid. The budget therefore only has to hold on
average over delays, not for every batch.
"""

from __future__ import annotations

import copy
import csv
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .energy import EnergyModelParams
from .errors import DomainError, TrainingError
from .losses import (RegularizationConfig, codeword_energy,
                     make_energy_delay_grid, total_loss)
from .model import ArchitectureConfig, JSCCModel, Limits, model_from_blob
from .normalization import fit_delay_normalizer
from .surrogate import SurrogateChannel

log = logging.getLogger(__name__)

LOG_COLUMNS = ["step", "epoch", "delay", "mse", "r_upper", "r_lower",
               "r_energy", "energy_j", "loss"]


@dataclass
class TrainingConfig:
    batch_size: int = 32
    lr: float = 5e-5
    epochs: int = 50
    d_min: int = 0
    d_max: int = 1000
    seed: int = 0
    grad_clip: float = 10.0
    per_sample_delay: bool = False
    checkpoint_every: int = 1

    def __post_init__(self):
        if self.batch_size < 2:
            raise DomainError("batch size must be >= 2")
        if not 0 <= self.d_min <= self.d_max:
            raise DomainError("need 0 <= d_min <= d_max")
        if self.epochs < 1 or self.lr <= 0:
            raise DomainError("epochs and lr must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def build_model(arch: ArchitectureConfig, surrogate: SurrogateChannel,
                tcfg: TrainingConfig,
                energy: EnergyModelParams | None = None) -> JSCCModel:
    """Fresh model whose initial weights depend only on ``tcfg.seed``."""
    energy = energy or EnergyModelParams()
    torch.manual_seed(tcfg.seed)
    return JSCCModel(arch, surrogate.res_nrm,
                     fit_delay_normalizer(tcfg.d_min, tcfg.d_max),
                     Limits(r_center=energy.r_start))


def check_surrogate_range(surrogate: SurrogateChannel, d_min, d_max):
    """Raise ValidityError unless every integer delay can be simulated."""
    for d in {d_min, d_max, max(d_min, 1)}:
        surrogate.split(float(d))


class Trainer:
    """Holds the model, optimiser, RNG streams and the step log."""

    def __init__(self, model: JSCCModel, surrogate: SurrogateChannel,
                 tcfg: TrainingConfig, reg: RegularizationConfig,
                 energy: EnergyModelParams | None = None):
        check_surrogate_range(surrogate, tcfg.d_min, tcfg.d_max)
        self.model = model
        self.tcfg = tcfg
        self.reg = reg
        self.energy = energy or EnergyModelParams()
        dtype = next(model.parameters()).dtype
        self.surrogate = copy.deepcopy(surrogate).to(dtype)
        self.grid = make_energy_delay_grid(tcfg.batch_size, tcfg.d_min,
                                           tcfg.d_max)
        self.grid_dbar = model.normalize_delay(self.grid.delays)
        self.optimizer = torch.optim.Adam(model.parameters(), lr=tcfg.lr)
        self.rng = np.random.Generator(np.random.Philox(tcfg.seed))
        self.gen = torch.Generator().manual_seed(tcfg.seed)
        self.step = 0
        self.epoch = 0
        self.log: list[dict] = []

    def sample_delay(self, batch: int):
        lo, hi = self.tcfg.d_min, self.tcfg.d_max + 1
        if self.tcfg.per_sample_delay:
            return self.rng.integers(lo, hi, size=batch)
        return int(self.rng.integers(lo, hi))

    def train_step(self, x: torch.Tensor) -> dict:
        model, b = self.model, x.shape[0]
        model.train()
        d = self.sample_delay(b)
        m = model.encode_at(x, d)
        m_hat = self.surrogate(m, d, generator=self.gen)
        x_hat = model.decode_at(m_hat, d)
        if model.arch.encoder_conditioned:
            m_energy = model.encode(x, self.grid_dbar[:b])
        else:
            # the delay cannot change an unconditioned encoding
            m_energy = m
        loss, terms = total_loss(x, x_hat, m, m_energy, model.res_nrm,
                                 self.energy, self.reg)
        self.optimizer.zero_grad()
        loss.backward()
        norm = torch.nn.utils.clip_grad_norm_(model.parameters(),
                                              self.tcfg.grad_clip)
        if not torch.isfinite(norm):
            bad = [n for n, p in model.named_parameters()
                   if p.grad is not None and not torch.isfinite(p.grad).all()]
            raise TrainingError(f"non-finite gradient at step {self.step} "
                                f"(delay {d}); parameters: {bad[:5]}")
        self.optimizer.step()
        with torch.no_grad():
            e = codeword_energy(m_energy, model.res_nrm, self.energy).mean()
        self.step += 1
        row = {"step": self.step, "epoch": self.epoch + 1,
               "delay": float(np.mean(d)), "mse": terms["reconstruction"],
               "r_upper": terms["r_upper"], "r_lower": terms["r_lower"],
               "r_energy": terms["r_energy"], "energy_j": e.item(),
               "loss": terms["loss"]}
        self.log.append(row)
        return row

    def run_epoch(self, images: torch.Tensor) -> list[dict]:
        b = self.tcfg.batch_size
        order = self.rng.permutation(len(images))
        rows = []
        for i in range(0, len(order) - b + 1, b):
            rows.append(self.train_step(images[order[i:i + b]]))
        self.epoch += 1
        return rows

    def fit(self, images: torch.Tensor, out_dir=None, progress=None):
        out = Path(out_dir) if out_dir else None
        if out:
            out.mkdir(parents=True, exist_ok=True)
        while self.epoch < self.tcfg.epochs:
            t0 = time.time()
            rows = self.run_epoch(images)
            mean = {k: float(np.mean([r[k] for r in rows]))
                    for k in ("loss", "mse", "energy_j")}
            log.info("epoch %d: loss %.5f mse %.5f energy %.5f J (%.1fs)",
                     self.epoch, mean["loss"], mean["mse"], mean["energy_j"],
                     time.time() - t0)
            if progress:
                progress(self.epoch, mean)
            if out and (self.epoch % self.tcfg.checkpoint_every == 0
                        or self.epoch == self.tcfg.epochs):
                self.save_checkpoint(out / "checkpoint.pt")
                write_log(self.log, out / "train_log.csv")
        return self.model

    def state(self) -> dict:
        return {
            "format_version": 1,
            "kind": "jscc",
            "arch": self.model.arch.to_dict(),
            "resistance_normalizer": self.model.res_nrm.to_dict(),
            "delay_normalizer": self.model.delay_nrm.to_dict(),
            "limits": self.model.limits.to_dict(),
            "conditioning": self.model.conditioning,
            "seed": self.tcfg.seed,
            "state_dict": self.model.state_dict(),
            "extra": {"training": self.tcfg.to_dict(),
                      "regularization": self.reg.to_dict(),
                      "energy": self.energy.to_dict()},
            "trainer": {
                "optimizer": self.optimizer.state_dict(),
                "rng": self.rng.bit_generator.state,
                "gen": self.gen.get_state(),
                "step": self.step,
                "epoch": self.epoch,
                "log": self.log,
            },
        }

    def save_checkpoint(self, path):
        torch.save(self.state(), path)

    @classmethod
    def resume(cls, path, surrogate: SurrogateChannel,
               epochs: int | None = None) -> "Trainer":
        blob = torch.load(path, map_location="cpu", weights_only=False)
        extra = blob["extra"]
        tcfg = TrainingConfig(**extra["training"])
        if epochs is not None:
            tcfg.epochs = epochs
        model = model_from_blob(blob)
        trainer = cls(model, surrogate, tcfg,
                      RegularizationConfig(**extra["regularization"]),
                      EnergyModelParams(**extra["energy"]))
        st = blob["trainer"]
        trainer.optimizer.load_state_dict(st["optimizer"])
        trainer.rng.bit_generator.state = st["rng"]
        trainer.gen.set_state(st["gen"])
        trainer.step, trainer.epoch = st["step"], st["epoch"]
        trainer.log = list(st["log"])
        return trainer


def write_log(rows: list[dict], path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v)
                        for k, v in r.items()})


def epoch_means(rows: list[dict], key: str = "loss") -> list[float]:
    epochs = sorted({r["epoch"] for r in rows})
    return [float(np.mean([r[key] for r in rows if r["epoch"] == e]))
            for e in epochs]


def train(arch: ArchitectureConfig, surrogate: SurrogateChannel,
          images: np.ndarray | torch.Tensor, tcfg: TrainingConfig,
          reg: RegularizationConfig, energy: EnergyModelParams | None = None,
          out_dir=None) -> Trainer:
    """Build a model and train it; returns the trainer (model + log)."""
    if isinstance(images, np.ndarray):
        from .images import to_nchw
        images = to_nchw(images)
    if not math.isfinite(float(images.sum())):
        raise DomainError("images contain non-finite values")
    model = build_model(arch, surrogate, tcfg, energy)
    trainer = Trainer(model, surrogate, tcfg, reg, energy)
    trainer.fit(images, out_dir)
    return trainer
