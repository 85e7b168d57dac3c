import pytest

from binfam.features import RawBinaryRecord, build_features

_ACCEPTANCE: list[tuple[int, bool, str]] = []


@pytest.fixture
def record_acceptance():
    """Collects one verdict line per acceptance criterion for the terminal summary."""

    def record(number: int, passed: bool, detail: str) -> None:
        _ACCEPTANCE.append((number, passed, detail))
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


def make_record(bid, procs, edges=(), strings=(), imports=(), timestamp=None, first_seen=None):
    return RawBinaryRecord(
        binary_id=bid,
        procedures={p: list(b) for p, b in procs.items()},
        call_edges=list(edges),
        strings=list(strings),
        imports=list(imports),
        timestamp=timestamp,
        first_seen=first_seen,
    )


@pytest.fixture
def small_record():
    return make_record(
        "bin-a",
        {"main": ["b1", "b2"], "helper": ["b3"], "lonely": ["b9"]},
        edges=[("main", "helper")],
        strings=["a", "a", "b"],
        imports=["kernel32"],
    )


@pytest.fixture
def small_features(small_record):
    return build_features(small_record)
