"""Ground-truth resistive drift: a metastable-switch device model.

A device is a bank of ``n_switches`` independent two-state switches. Each
switch flips off->on with rate ``rate_on`` and on->off with rate
``rate_off``; the device conductance is linear in the on-fraction. Over a
delay ``d`` a single switch follows the closed-form two-state Markov
transition, so the on-count after ``d`` is a sum of two binomials and the
simulator samples it exactly without stepping through individual events.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError

FORMAT_VERSION = 1


@dataclass(frozen=True)
class DeviceModelParams:
    n_switches: int = 1_000_000
    r_on: float = 100.0
    r_off: float = 1.0e6
    r_eq: float = 5.0e5
    tau_relax: float = 200.0

    def __post_init__(self):
        if self.n_switches < 1:
            raise DomainError("n_switches must be >= 1")
        if not 0 < self.r_on < self.r_eq < self.r_off:
            raise DomainError("need 0 < r_on < r_eq < r_off")
        if self.tau_relax <= 0:
            raise DomainError("tau_relax must be positive")

    @property
    def g_off(self) -> float:
        return 1.0 / self.r_off

    @property
    def g_span(self) -> float:
        return 1.0 / self.r_on - 1.0 / self.r_off

    @property
    def p_eq(self) -> float:
        return (1.0 / self.r_eq - self.g_off) / self.g_span

    @property
    def rate_on(self) -> float:
        return self.p_eq / self.tau_relax

    @property
    def rate_off(self) -> float:
        return (1.0 - self.p_eq) / self.tau_relax

    def to_dict(self) -> dict:
        return asdict(self)


def device_conductance(p_on, params: DeviceModelParams):
    """Conductance (S) of a device with on-fraction ``p_on``."""
    p = np.asarray(p_on, dtype=float)
    if np.any((p < 0) | (p > 1)) or np.any(~np.isfinite(p)):
        raise DomainError("p_on must lie in [0, 1]")
    g = params.g_off + p * params.g_span
    return g if g.ndim else float(g)


def on_fraction(r, params: DeviceModelParams):
    """Inverse of :func:`device_conductance` expressed in resistance."""
    r = np.asarray(r, dtype=float)
    return (1.0 / r - params.g_off) / params.g_span


def _check_resistance(r, params):
    r = np.asarray(r, dtype=float)
    # one-ulp slack so r_off/r_on survive a conductance round trip
    lo, hi = params.r_on * (1 - 1e-12), params.r_off * (1 + 1e-12)
    if np.any(~np.isfinite(r)) or np.any((r < lo) | (r > hi)):
        raise DomainError(
            f"resistance outside [{params.r_on}, {params.r_off}] ohm")
    return r


def resistance_to_count(r, params: DeviceModelParams):
    """Nearest integer on-switch count for resistance ``r``."""
    r = _check_resistance(r, params)
    p = np.clip(on_fraction(r, params), 0.0, 1.0)
    return np.rint(p * params.n_switches).astype(np.int64)


def count_to_resistance(n_on, params: DeviceModelParams):
    p = np.asarray(n_on, dtype=float) / params.n_switches
    return 1.0 / (params.g_off + p * params.g_span)


def transition_probabilities(delay, params: DeviceModelParams):
    """(p_stay, p_gain) for a single switch over ``delay`` seconds."""
    decay = np.exp(-np.asarray(delay, dtype=float) / params.tau_relax)
    p_eq = params.p_eq
    return p_eq + (1.0 - p_eq) * decay, p_eq * (1.0 - decay)


def step_counts(n_on, delay, params: DeviceModelParams,
                rng: np.random.Generator):
    """Sample on-counts after ``delay`` given current on-counts."""
    n_on = np.asarray(n_on, dtype=np.int64)
    p_stay, p_gain = transition_probabilities(delay, params)
    stay = rng.binomial(n_on, p_stay)
    gain = rng.binomial(params.n_switches - n_on, p_gain)
    return stay + gain


def sample_drift(r0, delay, params: DeviceModelParams,
                 rng: np.random.Generator):
    """One stochastic draw of the resistance after ``delay`` seconds.

    ``r0`` may be a scalar or an array; the result has the same shape.
    """
    if np.any(np.asarray(delay) < 0):
        raise DomainError("delay must be non-negative")
    n_on = resistance_to_count(r0, params)
    r = count_to_resistance(step_counts(n_on, delay, params, rng), params)
    return r if np.ndim(r) else float(r)


def expected_on_fraction(p0, delay, params: DeviceModelParams):
    """Closed-form mean on-fraction after relaxing for ``delay``."""
    decay = np.exp(-np.asarray(delay, dtype=float) / params.tau_relax)
    return params.p_eq + (np.asarray(p0) - params.p_eq) * decay


@dataclass
class DriftSeries:
    r0: float
    sample_times: np.ndarray
    resistances: np.ndarray
    seed: int


def simulate_series(r0: float, duration: float, sample_rate: float,
                    params: DeviceModelParams, rng: np.random.Generator,
                    seed: int = 0) -> DriftSeries:
    """Resistance trajectory sampled every ``1/sample_rate`` seconds."""
    if duration < 0 or sample_rate <= 0:
        raise DomainError("duration must be >= 0 and sample_rate > 0")
    steps = int(round(duration * sample_rate))
    dt = 1.0 / sample_rate
    p_stay, p_gain = transition_probabilities(dt, params)
    n_total = params.n_switches
    counts = np.empty(steps + 1, dtype=np.int64)
    n = int(resistance_to_count(r0, params))
    counts[0] = n
    binomial = rng.binomial
    for j in range(1, steps + 1):
        n = binomial(n, p_stay) + binomial(n_total - n, p_gain)
        counts[j] = n
    times = np.arange(steps + 1) * dt
    return DriftSeries(float(r0), times, count_to_resistance(counts, params),
                       seed)


@dataclass(frozen=True)
class DatasetConfig:
    count: int = 5000
    duration_s: float = 1000.0
    sample_rate_hz: float = 1.0
    r0_min_ohm: float = 100.0
    r0_max_ohm: float = 750e3
    device: DeviceModelParams = field(default_factory=DeviceModelParams)
    master_seed: int = 0
    r0_spacing: str = "linear"

    def __post_init__(self):
        if self.r0_spacing not in ("linear", "log"):
            raise DomainError("r0_spacing must be 'linear' or 'log'")
        if self.count < 1:
            raise DomainError("count must be >= 1")
        if self.duration_s <= 0 or self.sample_rate_hz <= 0:
            raise DomainError("duration and sample rate must be positive")
        d = self.device
        if not d.r_on <= self.r0_min_ohm <= self.r0_max_ohm <= d.r_off:
            raise DomainError("initial-resistance range must lie in "
                              "[r_on, r_off] and be ordered")

    @property
    def points(self) -> int:
        return int(round(self.duration_s * self.sample_rate_hz)) + 1

    def to_manifest(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "count": self.count,
            "duration_s": self.duration_s,
            "sample_rate_hz": self.sample_rate_hz,
            "r0_min_ohm": self.r0_min_ohm,
            "r0_max_ohm": self.r0_max_ohm,
            "device": self.device.to_dict(),
            "master_seed": self.master_seed,
            "r0_spacing": self.r0_spacing,
        }

    @classmethod
    def from_manifest(cls, manifest: dict) -> "DatasetConfig":
        return cls(count=int(manifest["count"]),
                   duration_s=float(manifest["duration_s"]),
                   sample_rate_hz=float(manifest["sample_rate_hz"]),
                   r0_min_ohm=float(manifest["r0_min_ohm"]),
                   r0_max_ohm=float(manifest["r0_max_ohm"]),
                   device=DeviceModelParams(**manifest["device"]),
                   master_seed=int(manifest["master_seed"]),
                   r0_spacing=manifest.get("r0_spacing", "linear"))


@dataclass
class DriftDataset:
    config: DatasetConfig
    r0: np.ndarray            # [count]
    resistances: np.ndarray   # [count, points]
    seeds: np.ndarray         # [count]
    extra: dict = field(default_factory=dict)

    @property
    def sample_times(self) -> np.ndarray:
        return np.arange(self.config.points) / self.config.sample_rate_hz

    @property
    def series(self) -> list[DriftSeries]:
        t = self.sample_times
        return [DriftSeries(float(r0), t, row, int(s))
                for r0, row, s in zip(self.r0, self.resistances, self.seeds)]

    def __len__(self):
        return len(self.r0)


def series_seed(master_seed: int, index: int) -> int:
    state = np.random.SeedSequence([master_seed, index]).generate_state(
        2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


def series_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def initial_resistances(config: DatasetConfig) -> np.ndarray:
    """Initial resistances, evenly spaced in ohms or in log-ohms."""
    if config.r0_spacing == "log":
        return np.geomspace(config.r0_min_ohm, config.r0_max_ohm,
                            config.count)
    return np.linspace(config.r0_min_ohm, config.r0_max_ohm, config.count)


def generate_dataset(config: DatasetConfig) -> DriftDataset:
    """Simulate ``config.count`` series, each on its own RNG stream."""
    r0s = initial_resistances(config)
    seeds = np.array([series_seed(config.master_seed, i)
                      for i in range(config.count)], dtype=np.uint64)
    rows = np.empty((config.count, config.points))
    for i, (r0, seed) in enumerate(zip(r0s, seeds)):
        s = simulate_series(r0, config.duration_s, config.sample_rate_hz,
                            config.device, series_rng(int(seed)), int(seed))
        rows[i] = s.resistances
    return DriftDataset(config, r0s, rows, seeds)


def save_dataset(dataset: DriftDataset, out_dir, fmt: str = "bin",
                 extra: dict | None = None) -> Path:
    """Write ``manifest.json`` plus ``series.bin`` (or per-series CSVs)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = dataset.config.to_manifest()
    manifest["format"] = fmt
    manifest.update(dataset.extra)
    if extra:
        manifest.update(extra)
    if fmt == "bin":
        dataset.resistances.astype("<f8").tofile(out / "series.bin")
    elif fmt == "csv":
        t = dataset.sample_times
        width = len(str(len(dataset) - 1))
        for i, row in enumerate(dataset.resistances):
            with open(out / f"series_{i:0{width}d}.csv", "w") as fh:
                fh.write("t_s,r_ohm\n")
                for ti, ri in zip(t, row):
                    fh.write(f"{float(ti)!r},{float(ri)!r}\n")
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def load_dataset(path) -> DriftDataset:
    path = Path(path)
    with open(path / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    config = DatasetConfig.from_manifest(manifest)
    if manifest.get("format", "bin") == "bin":
        rows = np.fromfile(path / "series.bin", dtype="<f8")
        rows = rows.reshape(config.count, config.points)
    else:
        files = sorted(path.glob("series_*.csv"))
        rows = np.stack([np.loadtxt(f, delimiter=",", skiprows=1)[:, 1]
                         for f in files])
    seeds = np.array([series_seed(config.master_seed, i)
                      for i in range(config.count)], dtype=np.uint64)
    known = set(config.to_manifest()) | {"format"}
    extra = {k: v for k, v in manifest.items() if k not in known}
    return DriftDataset(config, initial_resistances(config), rows, seeds,
                        extra)

