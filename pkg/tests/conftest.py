import pytest

from fjspt.instance import Instance

ACCEPTANCE_RESULTS = []


def record_acceptance(number, title, passed, detail=""):
    status = "PASS" if passed else "FAIL"
    line = f"criterion {number} [{status}] {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_RESULTS.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(line)


@pytest.fixture
def tiny_2x2x1():
    """Fixed 2-job / 2-machine / 1-vehicle instance used for hand-checked
    traces. Mean processing times: job0 (5, 3), job1 (5, 4.5)."""
    return Instance(
        name="tiny_2x2x1", n=2, m=2, v=1,
        jobs=(
            ({0: 4, 1: 6}, {1: 3}),
            ({0: 5}, {0: 2, 1: 7}),
        ),
        travel=(
            (0, 2, 3),
            (2, 0, 4),
            (3, 4, 0),
        ),
    )


@pytest.fixture
def single_op_instance():
    """One job, one operation (5 time units on the sole machine), depot to
    machine travel of 3."""
    return Instance(
        name="one_op", n=1, m=1, v=1,
        jobs=(({0: 5},),),
        travel=((0, 3), (3, 0)),
    )
