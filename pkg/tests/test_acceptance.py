"""The twelve acceptance criteria at their stated tolerances (strict profile)."""
import pytest

from hkglue.acceptance import CHECKS


@pytest.mark.parametrize("check", CHECKS, ids=[c.__name__.removeprefix("check_") for c in CHECKS])
def test_criterion(check, acceptance_log):
    rec = check("strict")
    acceptance_log.append(rec)
    print(rec.line())
    assert rec.passed, rec.line()
