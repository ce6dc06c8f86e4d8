import sys

import numpy as np
import pytest
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

# invariant suites run at least this many generated cases each
PROPERTY_CASES = 1000


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def logit_matrices(max_rows=12, max_classes=6, min_rows=1):
    """Strategy for finite (N, K) logit matrices with K >= 2."""
    shape = st.tuples(st.integers(min_rows, max_rows), st.integers(2, max_classes))
    elems = st.floats(-30, 30, allow_nan=False, allow_infinity=False)
    return shape.flatmap(lambda s: arrays(np.float64, s, elements=elems))


def prob_vectors(k=None, max_classes=6):
    """Strategy for probability vectors built by normalising non-negative draws."""
    size = st.just(k) if k else st.integers(2, max_classes)

    def build(n):
        return arrays(np.float64, n, elements=st.floats(0, 1, allow_nan=False)).filter(
            lambda v: v.sum() > 1e-3).map(lambda v: v / v.sum())

    return size.flatmap(build)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance.RESULTS:
        terminalreporter.write_line(line)
