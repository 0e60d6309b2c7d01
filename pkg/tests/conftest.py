from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from shelfpipe.serve.broker import Broker  # noqa: E402
from shelfpipe.synthgen import SceneParams, generate_dataset  # noqa: E402


@pytest.fixture
def small_dataset(tmp_path):
    return generate_dataset(SceneParams(seed=11), 10, (8, 1, 1), tmp_path / "ds")


@pytest.fixture
def broker():
    b = Broker().start()
    yield b
    b.close()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
