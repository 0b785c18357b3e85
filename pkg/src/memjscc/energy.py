"""Programming-energy cost of moving a device away from its reset state.

Under a constant compliance-current pulse the conductance is assumed to
ramp linearly in time from ``1/r_start`` to ``1/r_final`` over
``tau_final`` seconds; integrating ``i_max**2 * R(t)`` gives the closed
form ``E(r) = |A * ln(r_start / r)|``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class EnergyModelParams:
    tau_final: float = 1.0
    K: float = 2.0
    r_start: float = 5.0e5
    r_final: float = 100.0

    def __post_init__(self):
        if self.tau_final <= 0 or self.K <= 0:
            raise DomainError("tau_final and K must be positive")
        if self.r_start <= 0 or self.r_final <= 0:
            raise DomainError("resistances must be positive")
        if self.r_final == self.r_start:
            raise DomainError("r_final must differ from r_start")

    @property
    def conductance_step(self) -> float:
        return 1.0 / self.r_final - 1.0 / self.r_start

    @property
    def J(self) -> float:
        return self.conductance_step / self.tau_final

    @property
    def A(self) -> float:
        return self.tau_final * self.K ** 2 * self.conductance_step

    def to_dict(self) -> dict:
        return asdict(self)


def resistance_at_time(tau, p: EnergyModelParams):
    """Resistance ``tau`` seconds into the programming pulse."""
    tau = np.asarray(tau, dtype=float)
    if np.any((tau < 0) | (tau > p.tau_final)):
        raise DomainError("tau must lie in [0, tau_final]")
    g = 1.0 / p.r_start + tau / p.tau_final * p.conductance_step
    r = 1.0 / np.abs(g)
    return r if r.ndim else float(r)


def time_to_reach(r, p: EnergyModelParams):
    """Pulse time after which the resistance equals ``r``."""
    r = np.asarray(r, dtype=float)
    lo, hi = sorted((p.r_start, p.r_final))
    if np.any((r < lo) | (r > hi)):
        raise DomainError("r is not traversed by the programming pulse")
    tau = (1.0 / r - 1.0 / p.r_start) / p.J
    return tau if tau.ndim else float(tau)


def compliance_current(p: EnergyModelParams) -> float:
    """Maximum pulse current, zero when no resistance change is needed."""
    return p.K * p.conductance_step


def energy_from_log_resistance(log_r, p: EnergyModelParams):
    """``E`` evaluated on natural-log resistances.

    Uses only arithmetic and ``abs`` so numpy arrays and torch tensors both
    work (the training losses rely on this)."""
    return abs(p.A * (math.log(p.r_start) - log_r))


def energy_cost(r_target, p: EnergyModelParams):
    """Energy (J) to program a device from ``r_start`` to ``r_target``."""
    r = np.asarray(r_target, dtype=float)
    if np.any(r <= 0) or np.any(np.isnan(r)):
        raise DomainError("target resistance must be positive")
    e = energy_from_log_resistance(np.log(r), p)
    return e if e.ndim else float(e)


def mean_codeword_energy(codeword, p: EnergyModelParams) -> float:
    """Average per-device programming energy of a codeword (in ohm)."""
    c = np.asarray(codeword, dtype=float)
    if c.size == 0:
        raise DomainError("empty codeword")
    return float(np.mean(energy_cost(c, p)))


def energy_table(p: EnergyModelParams, r_min: float = 100.0,
                 r_max: float = 1.0e6, points: int = 200):
    """Log-spaced ``(r_ohm, energy_j)`` pairs for plotting the cost curve."""
    r = np.geomspace(r_min, r_max, points)
    return r, energy_cost(r, p)
