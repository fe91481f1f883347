import logging
from contextlib import contextmanager

import pytest

from slmctl.harness import ExperimentConfig, generate_campaign, pool_samples, train_from_samples

logging.getLogger("slmctl").setLevel(logging.ERROR)


@pytest.fixture(scope="session")
def experiment():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def campaign(experiment):
    return generate_campaign(experiment)


@pytest.fixture(scope="session")
def sample_pool(campaign, experiment):
    return pool_samples(campaign, experiment.train)


@pytest.fixture(scope="session")
def trained(sample_pool, experiment):
    return train_from_samples(sample_pool, experiment)


@pytest.fixture(scope="session")
def open_loop(experiment):
    from slmctl.harness import run_open_loop

    return run_open_loop(experiment)


@pytest.fixture(scope="session")
def closed_loop(trained, experiment):
    from slmctl.harness import run_closed_loop

    return run_closed_loop(experiment.test.plan(), trained.model, experiment)


# ---- acceptance reporting: one PASS/FAIL line per criterion in the terminal summary ----

ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """``with criterion(n, title) as info:`` records PASS, or FAIL with the error, plus ``info``."""
    store = request.config.stash[ACCEPTANCE]

    @contextmanager
    def run(number, title):
        info = {}
        try:
            yield info
        except BaseException as exc:
            msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
            store.append((number, f"CRITERION {number} FAIL  {title}  {_fmt(info)}  [{msg}]"))
            print(store[-1][1])
            raise
        store.append((number, f"CRITERION {number} PASS  {title}  {_fmt(info)}"))
        print(store[-1][1])

    return run


def _fmt(info):
    parts = []
    for k, v in info.items():
        if isinstance(v, float):
            v = f"{v:.4g}"
        elif isinstance(v, (list, tuple)):
            v = "[" + ", ".join(f"{x:.4g}" if isinstance(x, float) else str(x) for x in v) + "]"
        parts.append(f"{k}={v}")
    return " ".join(parts)
