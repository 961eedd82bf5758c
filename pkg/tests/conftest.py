import contextlib

import pytest

from eesched.profiles import DEFAULT_FREQ_SET, FrequencyPoint, FunctionProfile

_ACCEPTANCE: list[tuple[int, bool, str]] = []


def make_profile(function_id, points, cpu_cores=1.0, memory_mb=128):
    """points: iterable of (freq, exec_s, power_w, util)."""
    curve = [FrequencyPoint.from_exec_time(f, e, w, u) for f, e, w, u in points]
    return FunctionProfile(function_id, cpu_cores, memory_mb, tuple(curve))


def linear_profile(function_id, exec_at_min=0.5, util=0.9, cpu_cores=1.0,
                   freq_set=DEFAULT_FREQ_SET, base_power=5.0, power_step=1.0):
    lo = min(freq_set)
    pts = []
    for i, f in enumerate(freq_set):
        pts.append((f, exec_at_min * lo / f, base_power + power_step * i, util))
    return make_profile(function_id, pts, cpu_cores)


@contextlib.contextmanager
def criterion(number, title):
    """Record a PASS/FAIL line for one acceptance criterion."""
    try:
        yield
    except BaseException as exc:
        _ACCEPTANCE.append((number, False, f"{title}: {exc}".splitlines()[0]))
        raise
    _ACCEPTANCE.append((number, True, title))


@pytest.fixture
def acceptance():
    return criterion


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, text in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {text}")
