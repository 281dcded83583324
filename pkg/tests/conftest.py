import pytest

from bmsdp.core import make_rng
from bmsdp.outer import TRACE_CHECK_COUNTS

from helpers import ACCEPTANCE, acceptance_line

ACCEPTANCE_NAMES = {
    1: "phase transition", 2: "smoothing trend", 3: "tube bound", 4: "certificate/oracle equivalence",
    5: "lemma chains", 6: "gap bound", 7: "two-phase trace invariants", 8: "derivatives",
    9: "bound consistency", 10: "reproducibility",
}


@pytest.fixture
def rng():
    return make_rng(12345)


def pytest_collection_modifyitems(config, items):
    # acceptance tests run after everything else; the trace-invariant criterion runs last
    def key(item):
        if "test_acceptance" not in item.nodeid:
            return 0
        return 2 if "criterion_07" in item.nodeid else 1
    items.sort(key=key)


def pytest_terminal_summary(terminalreporter):
    terminalreporter.write_line(
        f"two-phase trace invariant checks: {TRACE_CHECK_COUNTS['checked']} steps, "
        f"{TRACE_CHECK_COUNTS['failed']} failures"
    )
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, name in ACCEPTANCE_NAMES.items():
        if num in ACCEPTANCE:
            terminalreporter.write_line(acceptance_line(num, *ACCEPTANCE[num]))
        else:
            terminalreporter.write_line(f"---- [{num:2d}] {name}: not run")
