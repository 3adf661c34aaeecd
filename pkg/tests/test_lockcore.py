import threading
import time

import pytest
from hypothesis import given, strategies as st

from retrylock.lockcore import (MASK32, AttemptCapExceeded, MutexMode, MutexWord, NotHeld,
                                Outcome, RefCountOverflow, RetrialMutex, UnsupportedConversion,
                                compatible, decode, encode)
from retrylock.waitsched import Patch6904068, Scheme2, TenG

S, X, E = MutexMode.SHARED, MutexMode.EXCLUSIVE, MutexMode.EXAMINE


class FakeClock:
    """Virtual time: sleeps advance it, polls and yields are free."""

    def __init__(self):
        self.t = 0
        self.on_sleep = None

    def now_ns(self):
        return self.t

    def sleep(self, seconds):
        self.t += round(seconds * 1e9)
        if self.on_sleep:
            self.on_sleep(self.t)

    def yield_(self):
        if self.on_sleep:
            self.on_sleep(self.t)


@given(st.integers(0, MASK32), st.integers(0, MASK32))
def test_encoding_is_a_bijection(h, r):
    raw = encode(h, r)
    assert decode(raw) == (h, r)
    assert MutexWord(raw) == MutexWord.of(h, r)
    assert MutexWord(raw).free == (h == 0 and r == 0)


def test_encode_range():
    with pytest.raises(ValueError):
        encode(MASK32 + 1, 0)
    with pytest.raises(ValueError):
        decode(-1)


def test_shared_counts_and_exclusive_excludes():
    m = RetrialMutex()
    assert m.try_get(S, 1) and m.try_get(S, 2)
    assert MutexWord(m.raw).ref_count == 2
    assert not m.try_get(X, 3)
    m.release(S, 1)
    m.release(S, 2)
    assert m.raw == 0
    assert m.try_get(X, 3)
    assert not m.try_get(S, 1) and not m.try_get(E, 1) and not m.try_get(X, 4)
    m.release(X, 3)
    assert m.raw == 0


def test_examine_freezes_new_shared_but_lets_holders_leave():
    m = RetrialMutex()
    m.try_get(S, 1)
    m.try_get(S, 2)
    assert m.try_get(E, 9)
    assert MutexWord(m.raw) == MutexWord.of(9, 2)
    assert not m.try_get(S, 3)
    m.release(S, 1)
    assert MutexWord(m.raw) == MutexWord.of(9, 1)
    m.release(E, 9)
    assert MutexWord(m.raw) == MutexWord.of(0, 1)


def test_release_errors():
    m = RetrialMutex()
    with pytest.raises(NotHeld):
        m.release(S, 1)
    m.try_get(X, 1)
    with pytest.raises(NotHeld):
        m.release(X, 2)
    with pytest.raises(NotHeld):
        m.release(E, 2)
    with pytest.raises(ValueError):
        m.try_get(X, 0)


def test_conversions():
    m = RetrialMutex()
    m.try_get(S, 1)
    m.try_get(S, 2)
    assert m.convert(S, E, 1)
    assert MutexWord(m.raw) == MutexWord.of(1, 1)
    assert not m.convert(S, E, 2)          # busy: someone examines
    assert not m.convert(E, X, 1)          # shared holder left
    m.release(S, 2)
    assert m.convert(E, X, 1)
    assert MutexWord(m.raw) == MutexWord.of(1, 0)
    m.release(X, 1)
    m.try_get(S, 5)
    m.convert(S, E, 5)
    assert m.convert(E, S, 5)
    assert MutexWord(m.raw) == MutexWord.of(0, 1)
    with pytest.raises(UnsupportedConversion):
        m.convert(X, S, 5)
    with pytest.raises(UnsupportedConversion):
        m.convert(S, X, 5)


def test_refcount_overflow_detected():
    m = RetrialMutex()
    m.raw = encode(0, MASK32)
    with pytest.raises(RefCountOverflow):
        m.try_get(S, 1)


def test_dump_layout():
    m = RetrialMutex()
    m.try_get(X, 0xAB)
    assert m.dump() == "holder=0x000000AB refcnt=0 gets=0 sleeps=0"


def test_immediate_get():
    m = RetrialMutex()
    rep = m.acquire(X, 1)
    assert rep.outcome is Outcome.IMMEDIATE_GET
    assert m.stats.gets == 1 and m.stats.sleeps == 0


def test_spin_get_when_released_mid_spin():
    m = RetrialMutex(spin_count=255, scheme=Patch6904068(), clock=FakeClock())
    m.try_get(X, 1)
    polls = []

    def hook(raw):
        polls.append(raw)
        if len(polls) == 100:
            m.release(X, 1)

    rep = m.acquire(X, 2, poll_hook=hook)
    assert rep.outcome is Outcome.SPIN_GET
    assert rep.sleep_episodes == 0
    assert 95 <= rep.spin_cycles_total <= 100
    assert m.stats.sleeps == 0 and m.stats.gets == 1


def test_polls_per_episode_bounded_by_spin_count():
    m = RetrialMutex(spin_count=10, scheme=Patch6904068(), clock=FakeClock())
    m.try_get(X, 1)
    polls = []
    with pytest.raises(AttemptCapExceeded):
        m.acquire(X, 2, poll_hook=polls.append, attempt_cap=3)
    # 11 polls per episode (counter checked after the word), 4 spins before the cap trips
    assert len(polls) == 4 * 11
    assert m.stats.sleeps == 3


def test_zero_spin_count_still_polls_once():
    clock = FakeClock()
    m = RetrialMutex(spin_count=0, scheme=Patch6904068(), clock=clock)
    m.try_get(X, 1)
    clock.on_sleep = lambda t: m.release(X, 1) if m.raw else None
    rep = m.acquire(X, 2)
    assert rep.outcome is Outcome.SLEEP_GET and rep.sleep_episodes == 1


def test_sleep_count_over_50_seconds_of_virtual_holding():
    clock = FakeClock()
    m = RetrialMutex(spin_count=255, scheme=Patch6904068(), clock=clock)
    m.try_get(X, 1)

    def maybe_release(t):
        if t >= 50 * 10 ** 9 and m.raw:
            m.release(X, 1)

    clock.on_sleep = maybe_release
    rep = m.acquire(X, 2)
    assert rep.outcome is Outcome.SLEEP_GET
    assert abs(m.stats.sleeps - 5000) <= 250


def test_scheme2_counts_yields_separately():
    clock = FakeClock()
    m = RetrialMutex(spin_count=5, scheme=Scheme2(), clock=clock)
    m.try_get(X, 1)
    clock.on_sleep = lambda t: m.release(X, 1) if m.raw and t >= 30_000_000 else None
    rep = m.acquire(X, 2)
    assert rep.yield_episodes == 2
    assert rep.sleep_episodes == 3          # 10 + 10 + 10 ms
    assert m.stats.yields == 2 and m.stats.sleeps == 3


@given(st.lists(st.sampled_from(["S", "X", "E"]), min_size=1, max_size=30))
def test_tts_only_attempts_when_word_compatible(modes):
    # drive single-threaded: each request meets a held lock and a hook that frees it
    m = RetrialMutex(spin_count=3, scheme=TenG(), clock=FakeClock())
    for i, name in enumerate(modes):
        mode = MutexMode(name)
        m.try_get(X, 999)
        seen = []

        def hook(raw, seen=seen):
            seen.append(raw)
            if len(seen) == 2:
                m.release(X, 999)

        rep = m.acquire(mode, i + 1, poll_hook=hook)
        assert rep.outcome is Outcome.SPIN_GET
        assert all(not compatible(r, mode) for r in seen[:-1]) and compatible(seen[-1], mode)
        m.release(mode, i + 1)
        assert m.raw == 0


def test_two_threads_exclusive():
    m = RetrialMutex(scheme=TenG())
    inside = []
    errors = []

    def work(sid):
        for _ in range(2000):
            with m.held(X, sid):
                inside.append(sid)
                if len(inside) != 1:
                    errors.append("overlap")
                time.sleep(0)
                inside.pop()

    ts = [threading.Thread(target=work, args=(i,)) for i in (1, 2)]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    assert not errors and m.raw == 0 and m.stats.gets == 4000
