import pytest

_ACCEPTANCE = {}


class _Recorder:
    """Collects sub-checks of one acceptance criterion."""

    def __init__(self, key, title):
        self.key, self.title = key, title
        self.checks = []

    def check(self, name, ok, detail=""):
        self.checks.append((name, bool(ok), detail))
        return bool(ok)

    @property
    def ok(self):
        return bool(self.checks) and all(c[1] for c in self.checks)

    def failures(self):
        return [f"{n}: {d}" for n, ok, d in self.checks if not ok]

    def verify(self):
        _ACCEPTANCE[self.key] = self
        assert self.ok, "; ".join(self.failures())


@pytest.fixture
def acceptance(request):
    """Factory for a per-criterion recorder, printed in the terminal summary."""

    def make(key, title):
        return _Recorder(key, title)

    return make


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        rec = _ACCEPTANCE[key]
        tr.write_line(f"[{'PASS' if rec.ok else 'FAIL'}] {key}. {rec.title}")
        for name, ok, detail in rec.checks:
            tr.write_line(f"    {'ok  ' if ok else 'FAIL'} {name}  {detail}")
