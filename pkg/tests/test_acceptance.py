"""Acceptance suite: every numbered criterion must pass at its tolerance.

Criteria 1-11 share one SuiteContext so cached solves (the 1-D
reconstruction feeds both the structure endpoint and the scheme checks)
are built once.  The determinism row runs two fresh passes on its own.
"""
import pytest

from mongeampere import acceptance


@pytest.fixture(scope="module")
def ctx(tmp_path_factory):
    return acceptance.SuiteContext(str(tmp_path_factory.mktemp("suite")))


@pytest.mark.parametrize("cid", [c for c, _, _ in acceptance.CRITERIA])
def test_criterion(ctx, cid):
    result = acceptance.run_criterion(ctx, cid)
    print(result.line())
    assert result.within_runtime, result.details
    assert result.passed, result.details


def test_criterion_12_determinism(tmp_path):
    results = acceptance.run_suite(workdir=str(tmp_path), only=12)
    assert len(results) == 1
    result = results[0]
    print(result.line())
    assert result.details["identical"] is True
    assert result.passed
