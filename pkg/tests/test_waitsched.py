import itertools
import math

import pytest
from hypothesis import given, strategies as st

from retrylock.waitsched import (BACKOFF_TEMPLATE_MS, SCHEMES, YIELD, Patch6904068, Scheme0,
                                 Scheme1, Scheme2, Sleep, TenG, backoff_at, backoff_durations,
                                 effective_sleep_ms, format_scheme, mva_variant, parse_scheme,
                                 plan_action, validate)

ALL = [TenG(), Patch6904068(), Scheme0(), Scheme1(), Scheme2(), Scheme2(max_wait_cs=3)]


def test_10g_always_yields():
    assert all(plan_action(TenG(), i) is YIELD for i in range(1000))


def test_patch_always_sleeps_timeout():
    assert all(plan_action(Patch6904068(), i) == Sleep(10.0) for i in range(100))
    assert plan_action(Patch6904068(timeout_ms=4), 7) == Sleep(4.0)


def test_scheme0_period():
    acts = [plan_action(Scheme0(), i) for i in range(300)]
    sleeps = [i for i, a in enumerate(acts) if isinstance(a, Sleep)]
    # 99 yields, then one 1 ms sleep, repeating
    assert sleeps == [99, 199, 299]
    assert all(acts[i] == Sleep(1.0) for i in sleeps)


def test_scheme1_yield_then_sleep():
    s = Scheme1(wait_time_ms=2)
    assert plan_action(s, 0) is YIELD
    assert all(plan_action(s, i) == Sleep(2.0) for i in range(1, 50))


def test_scheme2_default_is_capped_at_10ms():
    acts = [plan_action(Scheme2(), i) for i in range(12)]
    assert acts[:2] == [YIELD, YIELD]
    assert [a.duration_ms for a in acts[2:]] == [10] * 10


def test_backoff_template_with_large_cap():
    assert list(itertools.islice(backoff_durations(100), 10)) == list(BACKOFF_TEMPLATE_MS) + [1000, 1000]


def test_backoff_clamped_then_repeats_cap():
    assert list(itertools.islice(backoff_durations(3), 10)) == [10, 10, 30, 30, 30, 30, 30, 30, 30, 30]


@given(st.integers(1, 1000), st.integers(0, 500))
def test_backoff_never_exceeds_cap(cs, i):
    assert 0 < backoff_at(cs, i) <= 10 * cs
    assert backoff_at(cs, i) == next(itertools.islice(backoff_durations(cs), i, None))


@given(st.sampled_from(ALL), st.integers(0, 10_000))
def test_plan_is_pure(scheme, i):
    assert plan_action(scheme, i) == plan_action(scheme, i)


def test_bad_inputs():
    with pytest.raises(ValueError):
        plan_action(TenG(), -1)
    with pytest.raises(ValueError):
        Sleep(0)
    with pytest.raises(ValueError):
        validate(Scheme2(max_wait_cs=0))
    with pytest.raises(ValueError):
        validate(Patch6904068(timeout_ms=-1))
    with pytest.raises(ValueError):
        parse_scheme("nope")
    with pytest.raises(ValueError):
        parse_scheme("scheme2", {"scheme2.bogus": "1"})


def test_parse_and_format():
    assert parse_scheme("scheme2", {"scheme2.max_wait_cs": "30"}) == Scheme2(30)
    assert parse_scheme("scheme1", {"scheme1.wait_time_ms": "5", "scheme2.max_wait_cs": "30"}) == Scheme1(5.0)
    assert parse_scheme("10G") == TenG()
    assert format_scheme(TenG()) == "10g"
    assert format_scheme(Scheme2(3)) == "scheme2(max_wait_cs=3)"
    assert set(SCHEMES) == {"10g", "patch6904068", "scheme0", "scheme1", "scheme2"}


def test_model_mapping():
    assert effective_sleep_ms(Patch6904068()) == 10.0
    assert effective_sleep_ms(Scheme1(3)) == 3.0
    assert effective_sleep_ms(Scheme2(5)) == 50.0
    assert math.isnan(effective_sleep_ms(TenG()))
    assert [mva_variant(s) for s in (Patch6904068(), Scheme1(), Scheme2())] == ["base", "scheme1", "scheme2"]
