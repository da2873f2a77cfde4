import numpy as np
import pytest

from coexchange.gibbs import ChainConfig, gibbs_sweep, init_chain_state
from coexchange.model import CoexModel, EnsembleData, InadequacyConfig, ModelRuns, PriorConfig, ReanalysisData
from coexchange.validation import SyntheticTruth, generate_synthetic

FAST = ChainConfig(iters_initial=2000, burn_in=1000, extend_by=1000, thin=4, max_total_iters=10000)


def small_data(seed=0, r_hist=(2, 3, 1, 2), r_fut=(1, 2, 2, 1), n_rean=3):
    truth = SyntheticTruth(r_hist=r_hist, r_fut=r_fut, n_rean=n_rean, model_ids=None)
    data, rean, _ = generate_synthetic(truth, seed)
    return data, rean


def random_state(model, seed=0, sweeps=5):
    rng = np.random.default_rng(seed)
    state = init_chain_state(model, seed, 0)
    for _ in range(sweeps):
        state = gibbs_sweep(state, model, rng)
    return state


@pytest.fixture
def data_rean():
    return small_data()


@pytest.fixture
def model(data_rean):
    data, rean = data_rean
    return CoexModel(data, rean, PriorConfig(), InadequacyConfig())


@pytest.fixture
def state(model):
    return random_state(model)


@pytest.fixture
def synthetic_gridbox():
    return generate_synthetic(SyntheticTruth(), 11)


ACCEPTANCE_LINES: list[str] = []


def report(criterion: int, ok: bool, detail: str) -> bool:
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
