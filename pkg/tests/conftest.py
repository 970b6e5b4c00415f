import pytest

from tandem.scenario import scenario_from_dict


def make_scenario(**overrides):
    base = {"name": "test", "seed": 1, "duration_s": 1.0}
    base.update(overrides)
    return scenario_from_dict(base)


@pytest.fixture
def guidance_scenario():
    """Expert rotates wheel 1 by 90 deg between 0.5 s and 0.8 s, then holds."""
    return make_scenario(
        name="guidance_90",
        duration_s=2.0,
        preceptor={"wheel1": [[0.0, 0.0], [0.5, 0.0], [0.8, 90.0]]},
        plant={"tracker_noise_std": 0.0},
    )


# -- acceptance summary --------------------------------------------------------

_ACCEPTANCE = {}


@pytest.fixture
def report(request):
    """Collects measured values shown on the criterion's summary line."""
    notes = []
    request.node._acceptance_notes = notes
    return notes.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        notes = "; ".join(getattr(item, "_acceptance_notes", []))
        _ACCEPTANCE[n] = (rep.passed, title, notes)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, title, notes = _ACCEPTANCE[n]
        line = f"AC{n:<2} {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{notes}]" if notes else ""))
