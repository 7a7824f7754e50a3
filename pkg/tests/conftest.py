import numpy as np
import pytest

from envtricascade.config import PipelineConfig

SMALL_RUN = {
    "seed": 0,
    "out_dir": "run",
    "synth": {"n_per_class": 30},
    "profiles": {"B1": {"dim": 12, "frames": 6}, "B2": {"dim": 14, "frames": 6},
                 "waveform": {"dim": 10, "frames": 6}},
    "train": {"epochs": 3, "lr": 1e-3, "warmup_steps": 10, "fused_dim": 16, "hidden": 16,
              "batch_size": 16},
}


@pytest.fixture
def small_config(tmp_path):
    return PipelineConfig.from_dict(SMALL_RUN, tmp_path)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting: one PASS/FAIL line per criterion ---------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): numbered acceptance criterion")
    config.addinivalue_line("markers", "slow: long-running end-to-end test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when == "teardown" and not rep.failed):
        return
    n, title = mark.args
    prev = _CRITERIA.get(n, (True, title, 0.0))
    _CRITERIA[n] = (prev[0] and rep.passed, title, prev[2] + rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, title, dt = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  "
                                    f"{title} ({dt:.1f}s)")
