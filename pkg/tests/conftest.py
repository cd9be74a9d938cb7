from __future__ import annotations

import itertools
from pathlib import Path

import pytest

# Every trajectory log written by the suite lands under this root so the
# replay-integrity acceptance check can verify all of them at the end.
_LOG_ROOT: Path | None = None
_counter = itertools.count()


@pytest.fixture(scope="session")
def log_root(tmp_path_factory) -> Path:
    global _LOG_ROOT
    if _LOG_ROOT is None:
        _LOG_ROOT = tmp_path_factory.mktemp("suite_logs")
    return _LOG_ROOT


@pytest.fixture
def log_dir(log_root) -> Path:
    d = log_root / f"run{next(_counter):04d}"
    d.mkdir()
    return d


def pytest_collection_modifyitems(session, config, items):
    # Replay integrity must run after every other log-producing test.
    last = [i for i in items if i.get_closest_marker("runs_last")]
    rest = [i for i in items if not i.get_closest_marker("runs_last")]
    items[:] = rest + last


def pytest_configure(config):
    config.addinivalue_line("markers", "runs_last: run after all other tests")
