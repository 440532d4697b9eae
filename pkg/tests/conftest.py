from pathlib import Path

import pytest

from dfsl.kg import load_graph_file

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def toy_graph():
    return load_graph_file(FIXTURES / "toy_graph.nt")


@pytest.fixture
def toy_settings(tmp_path):
    """Keyword arguments for a hermetic run over the toy benchmark."""
    return dict(
        dataset=str(FIXTURES / "toy_test.jsonl"),
        storage=str(FIXTURES / "toy_storage.jsonl"),
        graph=str(FIXTURES / "toy_graph.nt"),
        out_dir=str(tmp_path / "run"),
    )


# ---------------------------------------------------------------------------
# Acceptance summary
# ---------------------------------------------------------------------------

ACCEPTANCE_RESULTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
