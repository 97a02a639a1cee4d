"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Every suite runs at its stated size and tolerance; a suite passes only if
its checks hold and it finishes inside its runtime limit.
"""

import pytest

from fbdomain.suites import run_suite

CRITERIA = [
    (1, "jet_core"),
    (2, "oracle"),
    (3, "residual"),
    (4, "bounded_orbit"),
    (5, "autonomous_identity"),
    (6, "convergence"),
    (7, "normalization"),
    (8, "surjectivity"),
    (9, "scaling"),
]


@pytest.mark.parametrize("number, name", CRITERIA, ids=[n for _, n in CRITERIA])
def test_criterion(number, name, capsys):
    result = run_suite(name)
    with capsys.disabled():
        print(f"\ncriterion {number}: {result.line()}")
    assert result.passed, result.line()
