from contextlib import contextmanager

import pytest

ACCEPTANCE_RESULTS = []


class Outcome:
    def __init__(self):
        self.notes = []
        self.status = "PASS"  # a directional criterion may downgrade this to "REPORTED"

    def note(self, text):
        self.notes.append(text)


@pytest.fixture
def criterion():
    """Record one acceptance criterion's outcome for the summary printed at the end."""

    @contextmanager
    def record(number, title):
        outcome = Outcome()
        try:
            yield outcome
        except pytest.skip.Exception as exc:
            ACCEPTANCE_RESULTS.append((number, title, "SKIP", str(exc.msg)))
            raise
        except BaseException as exc:
            msg = " ".join(str(exc).split())[:160]
            ACCEPTANCE_RESULTS.append((number, title, "FAIL", msg))
            raise
        else:
            ACCEPTANCE_RESULTS.append((number, title, outcome.status, "; ".join(outcome.notes)))

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        line = f"criterion {number} [{status}] {title}"
        terminalreporter.write_line(line + (f": {detail}" if detail else ""))
