"""One test per acceptance criterion, at the criterion's own tolerance and time limit.

A PASS/FAIL/SKIP line per criterion is printed in the terminal summary.
"""

import pytest

from retrylock import acceptance

RESULTS = []


@pytest.mark.parametrize("criterion", acceptance.CRITERIA,
                         ids=lambda c: f"{c.number:02d}-{c.name.replace(' ', '-')}")
def test_criterion(criterion):
    result = acceptance.evaluate(criterion)
    RESULTS.append(result)
    print(result.line())
    if result.status == acceptance.SKIP:
        pytest.skip(result.detail)
    assert result.status == acceptance.PASS, result.line()
