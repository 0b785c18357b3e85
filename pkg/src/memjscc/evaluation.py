"""PSNR-vs-delay curves, codeword histograms, ablations and reports.

Channel noise is keyed by ``(seed, image index, delay, draw)`` so models
compared on the same test set see identical noise draws.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from . import drift
from .energy import EnergyModelParams, energy_cost
from .errors import DomainError
from .images import to_nchw
from .losses import psnr_per_image
from .model import JSCCModel
from .surrogate import SurrogateChannel

log = logging.getLogger(__name__)

DEFAULT_DELAYS = (0, 1, 2, 5, 10, 20, 50, 100, 200, 500, 1000)
CHANNELS = ("surrogate", "ground-truth", "noiseless")
HIST_BINS = 200
HIST_RANGE = (1.0, 1.0e8)
DRAWS = 4


@dataclass
class EvalRecord:
    model_id: str
    channel: str
    delay: float
    mean_psnr: float
    std_psnr: float
    mean_energy: float
    n_images: int
    draws: int
    clip_count: int = 0


@dataclass
class EvalHistogram:
    model_id: str
    delay: float
    counts: np.ndarray
    mean_energy: float
    edges: np.ndarray = field(default_factory=lambda: histogram_edges())

    def energy_from_bins(self, p: EnergyModelParams | None = None) -> float:
        """Mean energy implied by the histogram, at geometric bin centres."""
        centres = np.sqrt(self.edges[:-1] * self.edges[1:])
        e = energy_cost(centres, p or EnergyModelParams())
        return float((self.counts * e).sum() / self.counts.sum())


@dataclass
class EvalReport:
    records: list[EvalRecord] = field(default_factory=list)
    histograms: list[EvalHistogram] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def extend(self, other: "EvalReport"):
        self.records += other.records
        self.histograms += other.histograms
        for k, v in other.meta.items():
            self.meta.setdefault(k, v)
        return self

    def curve(self, model_id: str, channel: str | None = None):
        """(delays, mean PSNRs) for one model, sorted by delay."""
        rows = sorted((r for r in self.records if r.model_id == model_id
                       and (channel is None or r.channel == channel)),
                      key=lambda r: r.delay)
        return (np.array([r.delay for r in rows]),
                np.array([r.mean_psnr for r in rows]))

    def lookup(self, model_id: str, delay: float,
               channel: str | None = None) -> EvalRecord:
        for r in self.records:
            if (r.model_id == model_id and r.delay == delay
                    and (channel is None or r.channel == channel)):
                return r
        raise KeyError((model_id, delay, channel))


def histogram_edges(bins: int = HIST_BINS, lo: float = HIST_RANGE[0],
                    hi: float = HIST_RANGE[1]) -> np.ndarray:
    return np.geomspace(lo, hi, bins + 1)


def keyed_rng(seed: int, image: int, delay: float, draw: int):
    # delays are keyed by their millisecond value so 0.5 and 1 differ
    key = [seed, image, int(round(delay * 1000)), draw]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def _check_delays(delays, channel: str, surrogate: SurrogateChannel | None):
    for d in delays:
        if d < 0:
            raise DomainError("delays must be non-negative")
        if channel == "surrogate":
            if surrogate is None:
                raise ValueError("surrogate channel needs a surrogate model")
            surrogate.split(float(d))


def _as_tensor(images) -> torch.Tensor:
    if isinstance(images, np.ndarray):
        return to_nchw(images)
    return images


def _encode(model: JSCCModel, x: torch.Tensor, delay, batch: int):
    with torch.no_grad():
        return torch.cat([model.encode_at(x[i:i + batch], delay)
                          for i in range(0, len(x), batch)])


def _decode(model: JSCCModel, m: torch.Tensor, delay, batch: int):
    with torch.no_grad():
        return torch.cat([model.decode_at(m[i:i + batch], delay)
                          for i in range(0, len(m), batch)])


def surrogate_noise(surrogate: SurrogateChannel, n_images: int, n: int,
                    delay: float, draw: int, seed: int) -> torch.Tensor:
    steps, _ = surrogate.split(float(delay))
    out = np.empty((steps, n_images, n))
    for i in range(n_images):
        out[:, i] = keyed_rng(seed, i, delay, draw).standard_normal((steps, n))
    return torch.from_numpy(out)


def ground_truth_channel(model: JSCCModel, m: torch.Tensor, delay: float,
                         draw: int, seed: int, device: drift.DeviceModelParams):
    """Drift-simulator readout of normalized codewords; returns (m_hat, clips)."""
    r = model.codeword_ohm(m.double()).numpy()
    clipped = np.clip(r, device.r_on, device.r_off)
    clips = int(np.count_nonzero(clipped != r))
    out = np.empty_like(clipped)
    for i in range(len(clipped)):
        out[i] = drift.sample_drift(clipped[i], delay, device,
                                    keyed_rng(seed, i, delay, draw))
    m_hat = torch.from_numpy(model.res_nrm.normalize(out)).to(m.dtype)
    return m_hat, clips


def eval_psnr_vs_delay(models: dict[str, JSCCModel], delays, images,
                       channel: str = "surrogate",
                       surrogate: SurrogateChannel | None = None,
                       device: drift.DeviceModelParams | None = None,
                       energy: EnergyModelParams | None = None,
                       draws: int = DRAWS, seed: int = 0,
                       batch: int = 250) -> EvalReport:
    """Mean/std PSNR per (model, delay) over ``draws`` channel draws."""
    if channel not in CHANNELS:
        raise ValueError(f"channel must be one of {CHANNELS}")
    delays = list(delays)
    _check_delays(delays, channel, surrogate)
    device = device or drift.DeviceModelParams()
    energy = energy or EnergyModelParams()
    x = _as_tensor(images)
    report = EvalReport(meta={"channel": channel, "seed": seed,
                              "n_images": len(x), "draws": draws})
    sur = None
    for name, model in models.items():
        model.eval()
        if channel == "surrogate":
            sur = surrogate.to(next(model.parameters()).dtype)
        for d in delays:
            m = _encode(model, x, d, batch)
            e = float(energy_cost(model.codeword_ohm(m.double()).numpy(),
                                  energy).mean())
            scores, clips = [], 0
            for k in range(draws if channel != "noiseless" else 1):
                if channel == "surrogate":
                    noise = surrogate_noise(sur, len(x), m.shape[1], d, k,
                                            seed).to(m.dtype)
                    with torch.no_grad():
                        m_hat = sur(m, float(d), noise=noise)
                elif channel == "ground-truth":
                    m_hat, c = ground_truth_channel(model, m, d, k, seed,
                                                    device)
                    clips += c
                else:
                    m_hat = m
                x_hat = _decode(model, m_hat, d, batch)
                scores.append(psnr_per_image(x.to(x_hat.dtype),
                                             x_hat).double().numpy())
            s = np.concatenate(scores)
            report.records.append(EvalRecord(
                name, channel, float(d), float(s.mean()), float(s.std()), e,
                len(x), len(scores), clips))
            log.info("%s %s d=%g: %.2f dB, %.4f J", name, channel, d,
                     s.mean(), e)
    return report


def eval_energy_histograms(model: JSCCModel, delays, images,
                           model_id: str = "model",
                           energy: EnergyModelParams | None = None,
                           batch: int = 250) -> EvalReport:
    """Histogram of encoded resistances (ohm) and mean energy per delay."""
    energy = energy or EnergyModelParams()
    x = _as_tensor(images)
    edges = histogram_edges()
    report = EvalReport(meta={"n_images": len(x)})
    model.eval()
    for d in delays:
        r = model.codeword_ohm(_encode(model, x, d, batch).double()).numpy()
        counts, _ = np.histogram(np.clip(r, edges[0], edges[-1]), edges)
        report.histograms.append(EvalHistogram(
            model_id, float(d), counts.astype(np.int64),
            float(energy_cost(r, energy).mean()), edges))
    return report


def eval_ground_truth(models: dict[str, JSCCModel], delays, images,
                      device: drift.DeviceModelParams | None = None,
                      energy: EnergyModelParams | None = None,
                      draws: int = DRAWS, seed: int = 0) -> EvalReport:
    return eval_psnr_vs_delay(models, delays, images, "ground-truth",
                              device=device, energy=energy, draws=draws,
                              seed=seed)


def run_ablations(surrogate: SurrogateChannel, train_images, test_images,
                  arch, reg, tcfg, single_delays=(1, 10, 100, 1000),
                  eval_delays=DEFAULT_DELAYS, noiseless: bool = True,
                  extra_models: dict | None = None, seed: int = 0,
                  out_dir=None):
    """Train unconditioned single-delay (and noiseless) models, evaluate all.

    Returns ``(report, models)``; ``extra_models`` (e.g. a conditioned
    model) are evaluated alongside for comparison.
    """
    from dataclasses import replace
    from .model import ArchitectureConfig
    from .training import train

    base = ArchitectureConfig(**{**arch.to_dict(), "conditioning": "none"})
    plan = [(f"single_d{d}", d) for d in single_delays]
    if noiseless:
        plan.append(("noiseless", 0))
    models = {}
    for name, d in plan:
        cfg = replace(tcfg, d_min=d, d_max=d)
        sub = Path(out_dir) / name if out_dir else None
        trainer = train(base, surrogate, train_images, cfg, reg,
                        out_dir=sub)
        models[name] = trainer.model
    models.update(extra_models or {})
    report = eval_psnr_vs_delay(models, eval_delays, test_images,
                                surrogate=surrogate, seed=seed)
    return report, models


# report files

RECORD_COLUMNS = [f.name for f in fields(EvalRecord)]
HIST_COLUMNS = ["model_id", "delay", "mean_energy", "bin_low", "bin_high",
                "count"]


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_records(records: list[EvalRecord], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in RECORD_COLUMNS])


def read_records(path) -> list[EvalRecord]:
    casts = {f.name: f.type for f in fields(EvalRecord)}
    conv = {"str": str, "float": float, "int": int}
    with open(path, newline="") as fh:
        return [EvalRecord(**{k: conv[casts[k]](v) for k, v in row.items()})
                for row in csv.DictReader(fh)]


def write_histograms(hists: list[EvalHistogram], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HIST_COLUMNS)
        for h in hists:
            for lo, hi, c in zip(h.edges[:-1], h.edges[1:], h.counts):
                w.writerow([h.model_id, _fmt(h.delay), _fmt(h.mean_energy),
                            _fmt(lo), _fmt(hi), int(c)])


def read_histograms(path) -> list[EvalHistogram]:
    groups: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["model_id"], float(row["delay"]))
            g = groups.setdefault(key, {"e": float(row["mean_energy"]),
                                        "lo": [], "hi": [], "c": []})
            g["lo"].append(float(row["bin_low"]))
            g["hi"].append(float(row["bin_high"]))
            g["c"].append(int(row["count"]))
    return [EvalHistogram(k[0], k[1], np.array(g["c"], dtype=np.int64),
                          g["e"], np.array(g["lo"] + g["hi"][-1:]))
            for k, g in groups.items()]


def _plot_curves(report: EvalReport, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    keys = sorted({(r.model_id, r.channel) for r in report.records})
    for model_id, channel in keys:
        d, p = report.curve(model_id, channel)
        e = np.mean([r.mean_energy for r in report.records
                     if r.model_id == model_id and r.channel == channel])
        ax.plot(d, p, marker="o", ms=3,
                label=f"{model_id} ({channel}, {e:.3g} J)")
    ax.set_xscale("symlog", linthresh=1)
    ax.set_xlabel("delay (s)")
    ax.set_ylabel("PSNR (dB)")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_histograms(report: EvalReport, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ids = sorted({h.model_id for h in report.histograms})
    fig, axes = plt.subplots(len(ids), 1, figsize=(6, 2.5 * len(ids)),
                             squeeze=False)
    for ax, model_id in zip(axes[:, 0], ids):
        hists = sorted((h for h in report.histograms
                        if h.model_id == model_id), key=lambda h: h.delay)
        for h in hists:
            ax.stairs(np.maximum(h.counts, 0.5), h.edges,
                      label=f"d={h.delay:g} s, {h.mean_energy:.3g} J")
        # show the occupied bins plus a decade either side
        used = np.flatnonzero(np.sum([h.counts for h in hists], axis=0))
        if used.size:
            edges = hists[0].edges
            ax.set_xlim(max(edges[used[0]] / 10, edges[0]),
                        min(edges[used[-1] + 1] * 10, edges[-1]))
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_title(model_id, fontsize=9)
        ax.set_xlabel("encoded resistance (ohm)")
        ax.set_ylabel("count")
        ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def emit_report(report: EvalReport, out_dir, name: str = "report",
                plots: bool = True) -> list[Path]:
    """Write ``<name>_psnr.csv``, ``<name>_histograms.csv``, meta and plots."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if report.records:
        p = out / f"{name}_psnr.csv"
        write_records(report.records, p)
        written.append(p)
        if plots:
            _plot_curves(report, out / f"{name}_psnr.png")
            written.append(out / f"{name}_psnr.png")
    if report.histograms:
        p = out / f"{name}_histograms.csv"
        write_histograms(report.histograms, p)
        written.append(p)
        if plots:
            _plot_histograms(report, out / f"{name}_histograms.png")
            written.append(out / f"{name}_histograms.png")
    p = out / f"{name}_meta.json"
    p.write_text(json.dumps(report.meta, indent=2, sort_keys=True) + "\n")
    written.append(p)
    return written


def read_report(out_dir, name: str = "report") -> EvalReport:
    out = Path(out_dir)
    report = EvalReport()
    if (out / f"{name}_psnr.csv").exists():
        report.records = read_records(out / f"{name}_psnr.csv")
    if (out / f"{name}_histograms.csv").exists():
        report.histograms = read_histograms(out / f"{name}_histograms.csv")
    if (out / f"{name}_meta.json").exists():
        report.meta = json.loads((out / f"{name}_meta.json").read_text())
    return report


def record_dict(r: EvalRecord) -> dict:
    return asdict(r)


def mean_over(report: EvalReport, model_id: str, delays,
              channel: str | None = None) -> float:
    vals = [report.lookup(model_id, float(d), channel).mean_psnr
            for d in delays]
    return float(np.mean(vals)) if vals else math.nan
