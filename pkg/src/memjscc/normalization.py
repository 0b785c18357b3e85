"""Transforms between physical resistances/delays and normalized space."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError

DELAY_OFFSET = 0.1


@dataclass(frozen=True)
class ResistanceNormalizer:
    mu: float
    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise DomainError("sigma_R must be positive and finite")

    def normalize(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(~(r > 0)):
            raise DomainError("resistance must be positive")
        out = (np.log(r) - self.mu) / self.sigma
        return out if out.ndim else float(out)

    def denormalize(self, rbar):
        out = np.exp(np.asarray(rbar, dtype=float) * self.sigma + self.mu)
        return out if out.ndim else float(out)

    def to_log(self, rbar):
        """Natural-log resistance; works on tensors too."""
        return rbar * self.sigma + self.mu

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ResistanceNormalizer":
        return cls(float(d["mu"]), float(d["sigma"]))


@dataclass(frozen=True)
class DelayNormalizer:
    mu: float = 0.0
    sigma: float = 1.0
    offset: float = DELAY_OFFSET

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise DomainError("sigma_T must be positive and finite")

    def normalize(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(~(t >= 0)):
            raise DomainError("delay must be non-negative")
        out = (np.log(t + self.offset) - self.mu) / self.sigma
        return out if out.ndim else float(out)

    def denormalize(self, tbar):
        out = np.exp(np.asarray(tbar, dtype=float) * self.sigma
                     + self.mu) - self.offset
        return out if out.ndim else float(out)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DelayNormalizer":
        return cls(float(d["mu"]), float(d["sigma"]),
                   float(d.get("offset", DELAY_OFFSET)))


def _series_rows(dataset):
    rows = getattr(dataset, "resistances", dataset)
    if isinstance(rows, np.ndarray) and rows.ndim == 2:
        return list(rows)
    return [np.asarray(r, dtype=float) for r in rows]


def fit_resistance_normalizer(dataset) -> ResistanceNormalizer:
    """Per-series-averaged mean and std of ln-resistance.

    ``dataset`` is a :class:`~memjscc.drift.DriftDataset` or any sequence
    of per-series resistance arrays.
    """
    rows = _series_rows(dataset)
    if not rows or any(len(r) == 0 for r in rows):
        raise DomainError("empty dataset")
    logs = [np.log(r) for r in rows]
    mu = float(np.mean([lr.mean() for lr in logs]))
    var = float(np.mean([np.mean((lr - mu) ** 2) for lr in logs]))
    if not var > 0:
        raise DomainError("zero variance in ln-resistance")
    return ResistanceNormalizer(mu, math.sqrt(var))


def fit_delay_normalizer(t_min: float, t_max: float) -> DelayNormalizer:
    """Exact statistics of ln(T + 0.1) for T uniform on integers."""
    if t_min < 0 or t_max < 0:
        raise DomainError("delays must be non-negative")
    if t_min > t_max:
        raise DomainError("t_min must not exceed t_max")
    if t_min == t_max:
        return DelayNormalizer(0.0, 1.0)
    t = np.arange(math.ceil(t_min), math.floor(t_max) + 1, dtype=float)
    if t.size < 2:
        return DelayNormalizer(0.0, 1.0)
    v = np.log(t + DELAY_OFFSET)
    return DelayNormalizer(float(v.mean()), float(v.std()))
