import pytest
import torch
from hypothesis import settings

from memjscc.normalization import ResistanceNormalizer, fit_delay_normalizer
from memjscc.surrogate import SurrogateChannel

# property tests draw the same examples on every run
settings.register_profile("repeatable", derandomize=True)
settings.load_profile("repeatable")

# statistics of the log-spaced 500-series dataset used by the acceptance run
RES_NRM = ResistanceNormalizer(10.8468, 2.1423)


@pytest.fixture
def res_nrm():
    return RES_NRM


@pytest.fixture
def toy_surrogate():
    """Unfitted channel: identity mean plus a small delay-scaled noise."""
    torch.manual_seed(0)
    sur = SurrogateChannel(RES_NRM, fit_delay_normalizer(1, 500), hidden=8,
                           d_min=1.0, d_valid=500.0, n=4).double()
    sur.eval()
    for p in sur.parameters():
        p.requires_grad_(False)
    return sur


ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def acceptance(request):
    """``record(number, ok, detail)`` collects one criterion's sub-checks."""
    results = request.config.stash[ACCEPTANCE]

    def record(number: int, ok: bool, detail: str):
        results.setdefault(number, []).append((bool(ok), detail))
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(results):
        parts = results[number]
        ok = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(
            f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
