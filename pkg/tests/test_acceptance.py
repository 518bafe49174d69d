"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines, or use
``declora verify``.
"""
import numpy as np
import pytest

from declora.topology import build_ring, mixing_from_ring
from declora.verify import CRITERIA, run_criterion, verify_suite


@pytest.mark.parametrize("cid", list(CRITERIA))
def test_criterion(cid):
    result = run_criterion(cid)
    print(result.line())
    assert result.passed, result.detail


def test_suite_detects_bad_mixing_matrix():
    # the checker must reject a matrix whose rows do not sum to one
    q = mixing_from_ring(build_ring(5)).q.copy()
    q[0, 0] += 0.01
    report = verify_suite(only=["A1"], options={"A1": {"matrices": [("bad", q)]}})
    assert not report["all_passed"]
    assert report["lines"][0].startswith("A1 FAIL")


def test_non_square_is_rejected():
    report = verify_suite(only=["A1"], options={"A1": {"matrices": [("junk", np.ones((2, 3)))]}})
    assert not report["all_passed"] and "junk" in report["criteria"][0]["detail"]


def test_crash_is_reported_as_fail():
    result = run_criterion("A2", no_such_option=1)
    assert not result.passed and result.detail.startswith("error")
