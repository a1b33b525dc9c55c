import pytest

_ACCEPTANCE: dict = {}
_DETAILS: dict = {}


@pytest.fixture
def ac_detail(request):
    """Attach measured values to the acceptance summary line of the current test."""
    marker = request.node.get_closest_marker("acceptance")

    def note(text):
        _DETAILS.setdefault(marker.args[0], []).append(text)

    return note


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(code, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    code, title = marker.args
    entry = _ACCEPTANCE.setdefault(code, {"title": title, "ok": True, "ran": False})
    if rep.when == "call" or rep.failed:
        entry["ran"] = True
        entry["ok"] = entry["ok"] and not rep.failed


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for code in sorted(_ACCEPTANCE, key=lambda c: int(c[2:])):
        e = _ACCEPTANCE[code]
        status = "PASS" if e["ok"] and e["ran"] else "FAIL" if e["ran"] else "NOT RUN"
        detail = "; ".join(_DETAILS.get(code, []))
        terminalreporter.write_line(f"{code} {status}  {e['title']}" + (f"  [{detail}]" if detail else ""))
