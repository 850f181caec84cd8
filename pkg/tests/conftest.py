import sys
import json
from importlib import resources
from pathlib import Path

import pytest

from pathforge.kg import load_graph
from pathforge.services import LlmClient, Role, default_embedder

DATA = Path(str(resources.files("pathforge") / "data"))
GOLDEN = Path(__file__).parent / "golden"


def data_path(name: str) -> Path:
    return DATA / name


def read_jsonl(path):
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


@pytest.fixture
def embedder():
    return default_embedder()


@pytest.fixture
def judge():
    return LlmClient.mocked(Role.JUDGE)


@pytest.fixture
def generator():
    return LlmClient.mocked(Role.GENERATOR)


@pytest.fixture
def toy_graph():
    return load_graph(data_path("toy_graph.json"))


@pytest.fixture
def carcinoma_graph():
    return load_graph(data_path("carcinoma_graph.json"))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
