import numpy as np
import pytest

from innodeepc import hankel, innovation, system
from innodeepc.predictor import build_inno_predictor

L_P, L_F, N_OFF, RHO = 10, 15, 200, 15


def offline_data(q=1.13, seed=0, n=N_OFF, history=RHO):
    """Square-wave experiment on the benchmark plant with leading VARX history."""
    plant = system.benchmark_plant(q)
    u = system.gen_square_wave_input(50, 2.0, 0.01, n + history, [seed, 2])
    tr = system.simulate(plant, u, system.NoiseSpec(seed + 1))
    e, _ = system.sskf_filter(plant, u, tr.y)
    return plant, u, tr.y, e


@pytest.fixture(scope="session")
def plant30():
    return system.benchmark_plant(1.13)


@pytest.fixture(scope="session")
def offline30():
    return offline_data()


@pytest.fixture(scope="session")
def kf_blocks(offline30):
    """Hankel blocks built with the exact Kalman innovations."""
    _, u, y, e = offline30
    return hankel.partition(u[RHO:], y[RHO:], e[RHO:], L_P, L_F, n_x=2)


@pytest.fixture(scope="session")
def varx_blocks(offline30):
    """Hankel blocks built with VARX innovation estimates."""
    _, u, y, _ = offline30
    fit = innovation.fit_varx(u, y, RHO)
    return hankel.partition(u[RHO:], y[RHO:], fit.e_hat, L_P, L_F, n_x=2)


@pytest.fixture(scope="session")
def kf_pred(kf_blocks):
    return build_inno_predictor(kf_blocks)


@pytest.fixture(scope="session")
def varx_pred(varx_blocks):
    return build_inno_predictor(varx_blocks)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def record_criterion(label, passed, detail):
    line = f"criterion {label}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
