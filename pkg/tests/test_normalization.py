import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from memjscc import DomainError
from memjscc.normalization import (DelayNormalizer, ResistanceNormalizer,
                                   fit_delay_normalizer,
                                   fit_resistance_normalizer)


def test_fit_resistance_hand_example():
    rows = [np.exp([0.0, 2.0]), np.exp([1.0, 3.0])]
    nrm = fit_resistance_normalizer(rows)
    assert nrm.mu == pytest.approx(1.5)
    assert nrm.sigma == pytest.approx(math.sqrt(1.25))


def test_fit_resistance_rejections():
    with pytest.raises(DomainError):
        fit_resistance_normalizer([np.full(5, math.e)])
    with pytest.raises(DomainError):
        fit_resistance_normalizer([])
    with pytest.raises(DomainError):
        ResistanceNormalizer(0.0, 0.0)


def test_resistance_examples():
    nrm = ResistanceNormalizer(10.0, 2.0)
    assert nrm.normalize(math.exp(10.0)) == pytest.approx(0.0, abs=1e-12)
    assert nrm.normalize(math.exp(12.0)) == pytest.approx(1.0)
    assert nrm.denormalize(nrm.normalize(12345.0)) == pytest.approx(
        12345.0, rel=1e-9)
    with pytest.raises(DomainError):
        nrm.normalize(0.0)
    assert ResistanceNormalizer.from_dict(nrm.to_dict()) == nrm


def test_resistance_round_trip_wide_range():
    nrm = ResistanceNormalizer(10.8468, 2.1423)
    r = np.geomspace(1.0, 1e8, 1001)
    np.testing.assert_allclose(nrm.denormalize(nrm.normalize(r)), r,
                               rtol=1e-9)


def test_delay_degenerate():
    assert fit_delay_normalizer(100, 100) == DelayNormalizer(0.0, 1.0)
    d = DelayNormalizer()
    assert d.normalize(1.0) == pytest.approx(0.09531, abs=1e-5)
    assert d.normalize(0.0) == pytest.approx(-2.30259, abs=1e-5)


def test_delay_exact_statistics():
    nrm = fit_delay_normalizer(1, 1000)
    v = [math.log(t + 0.1) for t in range(1, 1001)]
    mu = math.fsum(v) / 1000
    sd = math.sqrt(math.fsum((x - mu) ** 2 for x in v) / 1000)
    assert nrm.mu == pytest.approx(mu, rel=1e-12)
    assert nrm.sigma == pytest.approx(sd, rel=1e-12)
    t = np.arange(1, 1001)
    z = nrm.normalize(t)
    assert abs(z.mean()) < 1e-9 and z.std() == pytest.approx(1.0)


def test_delay_errors():
    with pytest.raises(DomainError):
        fit_delay_normalizer(-1, 10)
    with pytest.raises(DomainError):
        fit_delay_normalizer(10, 1)
    with pytest.raises(DomainError):
        DelayNormalizer().normalize(-0.5)


def test_delay_invertible_over_range():
    nrm = fit_delay_normalizer(0, 1000)
    t = np.geomspace(1.0, 1e8, 301)
    np.testing.assert_allclose(nrm.denormalize(nrm.normalize(t)), t,
                               rtol=1e-9)
    assert abs(nrm.denormalize(nrm.normalize(0.0))) < 1e-12


@given(st.floats(0, 1e6), st.floats(0, 1e6))
def test_delay_monotone(a, b):
    nrm = fit_delay_normalizer(0, 1000)
    if b >= a:
        assert nrm.normalize(b) >= nrm.normalize(a)
    # strictly increasing once the gap survives adding the 0.1 s offset
    if b - a > 1e-9 * (1 + a):
        assert nrm.normalize(b) > nrm.normalize(a)
