import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: list[tuple[str, bool, str]] = []


class CriterionRecorder:
    def __init__(self, name):
        self.name = name
        self.details = []

    def note(self, text):
        self.details.append(text)

    def check(self, passed: bool, detail: str = ""):
        if detail:
            self.note(detail)
        _CRITERIA.append((self.name, bool(passed), "; ".join(self.details)))
        line = f"{'PASS' if passed else 'FAIL'}  {self.name}  [{'; '.join(self.details)}]"
        print(line)
        assert passed, line


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion; ``check`` prints its PASS/FAIL line."""
    marker = request.node.get_closest_marker("criterion")
    name = marker.args[0] if marker else request.node.name
    rec = CriterionRecorder(name)
    yield rec
    if not any(c[0] == name for c in _CRITERIA):
        # the test raised before reaching check()
        _CRITERIA.append((name, False, "; ".join(rec.details) or "error before check"))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion label")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  [{detail}]")
