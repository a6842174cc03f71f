import re
from pathlib import Path

import pytest

from sctkit.comments import CommentCache, CommentClient, CommentProviderConfig
from sctkit.corpus import ingest

DATA = Path(__file__).parent / "data"
RULE_NAMES = [
    "if", "if_else", "switch", "while", "for", "range_for",
    "break", "continue", "return", "goto", "case",
]

_DESCRIPTIONS = {
    "if": "guard holds",
    "else": "guard fails",
    "switch": "selector value",
    "case": "matching label",
    "while": "work remains",
    "for": "set up counter; counter in range; advance counter",
    "return": "the result",
    "goto": "the exit label",
    "break": "leave early",
    "continue": "skip this round",
}


def auto_comment(code: str) -> str:
    """Deterministic stand-in for an LLM: a // line above every code line."""
    out = []
    for k, line in enumerate(code.split("\n")):
        stripped = line.strip()
        if not stripped:
            continue
        indent = line[: len(line) - len(stripped)]
        word = re.match(r"[}\s]*(\w*)", stripped).group(1)
        out.append(f"{indent}// {_DESCRIPTIONS.get(word, f'line {k} does {word or stripped[0]}')}")
        out.append(line)
    return "\n".join(out)


@pytest.fixture(scope="session")
def mini_corpus():
    return ingest(DATA / "mini_corpus.jsonl")


@pytest.fixture
def fixture_client(tmp_path):
    """A fixture-kind client over an empty cache; seed it with client.cache.put()."""
    cfg = CommentProviderConfig(kind="fixture", cache_dir=tmp_path / "cache")
    return CommentClient(cfg)


@pytest.fixture
def cache(fixture_client) -> CommentCache:
    return fixture_client.cache


# -- acceptance reporting --------------------------------------------------

_criteria: dict[str, str] = {}


def pytest_runtest_logreport(report):
    label = getattr(report, "criterion", None)
    if label is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        outcome = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _criteria[label] = outcome


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_criteria, key=lambda s: int(re.match(r"AC(\d+)", s).group(1))):
        terminalreporter.write_line(f"{_criteria[label]:<5} {label}")
