import numpy as np
import pytest
from hypothesis import settings

from leo_precoding.channel import ArrayGeometry, draw_channel_set
from leo_precoding.system import PowerModel, SystemConfig

settings.register_profile("repo", max_examples=30, deadline=None, derandomize=True)
settings.load_profile("repo")

BW = 20e6
P_MAX = 10.0


@pytest.fixture
def desk():
    return SystemConfig.desk()


def small_set(nx=2, ny=2, k=2, seed=0, **kw):
    return draw_channel_set(ArrayGeometry(nx, ny), k, seed, **kw)


def power_model(cs, **kw):
    return PowerModel(cs.n_t, **kw)


def random_hpd(rng, n, ridge=0.5):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return a @ a.conj().T + ridge * np.eye(n)


# criterion number -> (passed, detail), filled by the acceptance suite
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
