import os
import time

import pytest
from hypothesis import HealthCheck, settings

from e2mc.experiments import BenchmarkConfig, cell_name, coefficient_grid, pretrain, run_seed

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("thorough", max_examples=300, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

BENCH_SEEDS = (0, 1, 2)

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def benchmark():
    """Toy benchmark over three seeds: base checkpoint plus the 2x2 coefficient grid.

    The (0, 0) cell is plain continued pre-training.
    """
    cfg = BenchmarkConfig()
    t0 = time.perf_counter()
    runs, models = {}, {}
    for seed in BENCH_SEEDS:
        c = cfg.for_seed(seed)
        models[seed], _ = pretrain(c)
        grid = coefficient_grid(c.train.criterion, (0.0, c.beta), (0.0, c.gamma))
        runs[seed] = run_seed(c, grid, base_model=models[seed])
    return {
        "config": cfg,
        "runs": runs,
        "base_models": models,
        "seconds": time.perf_counter() - t0,
        "base_continued": cell_name(0.0, 0.0),
        "e2mc": cell_name(cfg.beta, cfg.gamma),
        "beta_only": cell_name(cfg.beta, 0.0),
        "gamma_only": cell_name(0.0, cfg.gamma),
    }
