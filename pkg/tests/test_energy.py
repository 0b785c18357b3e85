import numpy as np
import pytest
from scipy.integrate import quad

from memjscc import DomainError
from memjscc import energy
from memjscc.energy import EnergyModelParams

P = EnergyModelParams()


def integrated_energy(r, p=P):
    # i_max^2 * R(t) integrated up to the time the pulse reaches r
    i = energy.compliance_current(p)
    t = energy.time_to_reach(r, p)
    val, _ = quad(lambda s: i ** 2 * energy.resistance_at_time(s, p), 0, t,
                  epsabs=0, epsrel=1e-12, limit=200)
    return val


def test_resistance_at_time_boundaries():
    assert energy.resistance_at_time(0.0, P) == pytest.approx(5e5)
    assert energy.resistance_at_time(1.0, P) == pytest.approx(100.0)
    # conductance interpolation: 1 / (1/5e5 + 0.5 (1/100 - 1/5e5))
    assert energy.resistance_at_time(0.5, P) == pytest.approx(199.96, abs=5e-3)


@pytest.mark.parametrize("tau", [-0.1, 1.5])
def test_resistance_at_time_domain(tau):
    with pytest.raises(DomainError):
        energy.resistance_at_time(tau, P)


def test_time_to_reach():
    assert energy.time_to_reach(5e5, P) == 0.0
    assert energy.time_to_reach(100.0, P) == pytest.approx(1.0)
    r = energy.resistance_at_time(0.5, P)
    assert energy.time_to_reach(r, P) == pytest.approx(0.5, abs=1e-6)
    with pytest.raises(DomainError):
        energy.time_to_reach(50.0, P)
    with pytest.raises(DomainError):
        energy.time_to_reach(1e6, P)


def test_round_trip_vectorized():
    tau = np.linspace(0, 1, 101)
    back = energy.time_to_reach(energy.resistance_at_time(tau, P), P)
    np.testing.assert_allclose(back, tau, rtol=1e-9, atol=1e-12)


def test_compliance_current():
    assert energy.compliance_current(P) == pytest.approx(0.019996, rel=1e-9)
    p2 = EnergyModelParams(K=4.0)
    assert energy.compliance_current(p2) == pytest.approx(
        2 * energy.compliance_current(P))
    # the degenerate r_final == r_start case needs no current at all
    with pytest.raises(DomainError):
        EnergyModelParams(r_final=5e5)


def test_energy_examples():
    assert energy.energy_cost(5e5, P) == 0.0
    # A ln(5e5 / 100) with A = 4 (1e-2 - 2e-6)
    assert energy.energy_cost(100.0, P) == pytest.approx(
        0.039992 * np.log(5000.0), rel=1e-12)
    assert energy.energy_cost(100.0, P) == pytest.approx(0.340620, abs=1e-6)
    assert energy.energy_cost(5e3, P) == pytest.approx(0.18417, abs=1e-5)
    assert P.A == pytest.approx(0.039992, rel=1e-9)


@pytest.mark.parametrize("r", [100.0, 5e3, 1e5, 4.9e5])
def test_energy_matches_integration(r):
    assert energy.energy_cost(r, P) == pytest.approx(integrated_energy(r),
                                                     rel=1e-6)


def test_energy_depends_on_ratio_only():
    # programming above r_start costs the same as the mirrored ratio below
    assert energy.energy_cost(5e5 * 4, P) == pytest.approx(
        energy.energy_cost(5e5 / 4, P))


@pytest.mark.parametrize("r", [0.0, -1.0, np.nan])
def test_energy_domain(r):
    with pytest.raises(DomainError):
        energy.energy_cost(r, P)


def test_mean_codeword_energy():
    assert energy.mean_codeword_energy([5e5] * 8, P) == 0.0
    assert energy.mean_codeword_energy([5e5, 100.0], P) == pytest.approx(
        0.17031, abs=1e-5)
    rng = np.random.default_rng(0)
    c = rng.uniform(100, 5e5, 64)
    assert energy.mean_codeword_energy(c, P) == pytest.approx(
        energy.mean_codeword_energy(rng.permutation(c), P), rel=1e-14)
    with pytest.raises(DomainError):
        energy.mean_codeword_energy([], P)


def test_energy_table_shape():
    r, e = energy.energy_table(P, points=7)
    assert r[0] == pytest.approx(100.0) and r[-1] == pytest.approx(1e6)
    np.testing.assert_allclose(e, energy.energy_cost(r, P))
