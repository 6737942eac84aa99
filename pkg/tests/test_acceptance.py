"""Acceptance battery at full tolerance; one PASS/FAIL line per criterion."""

import pytest

from grushin_mfg.acceptance import criterion_11, run_criterion

pytestmark = pytest.mark.slow


@pytest.mark.parametrize("number", range(1, 11))
def test_criterion(number):
    r = run_criterion(number)
    print(r.line())
    print(r.metrics)
    assert r.passed, r.metrics


def test_criterion_11_reproducible_manifest(tmp_path):
    r = criterion_11(tmp_path)
    print(r.line())
    assert r.passed, r.metrics
