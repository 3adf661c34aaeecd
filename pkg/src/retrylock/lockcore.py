"""Single-word Shared/eXclusive/Examine lock with TTS spinning.

The lock state is one 64-bit word: the upper 32 bits hold the id of the
session holding the lock exclusively (or examining it), the lower 32 bits
count shared holders.  A zero word means free.

CPython offers no hardware compare-and-swap on plain integers, so the word
lives in an attribute that is only *modified* under a private
``threading.Lock`` (the "atomic" path).  Polling reads the attribute without
that lock, which is the non-atomic test of test-and-test-and-set.
"""

from __future__ import annotations

import enum
import os
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional, Protocol

from .waitsched import DEFAULT_SPIN_COUNT, Sleep, WaitScheme, TenG, plan_action

MASK32 = 0xFFFFFFFF
MASK64 = 0xFFFFFFFFFFFFFFFF


class LockError(Exception):
    pass


class NotHeld(LockError):
    """Release or conversion without a matching hold."""


class UnsupportedConversion(LockError):
    pass


class AttemptCapExceeded(LockError):
    """The optional wait-episode cap of ``acquire`` was hit."""


class RefCountOverflow(LockError):
    pass


class MutexMode(enum.Enum):
    SHARED = "S"
    EXCLUSIVE = "X"
    EXAMINE = "E"


class Outcome(enum.Enum):
    IMMEDIATE_GET = "immediate"
    SPIN_GET = "spin"
    SLEEP_GET = "sleep"


def encode(holder_id: int, ref_count: int) -> int:
    if not (0 <= holder_id <= MASK32 and 0 <= ref_count <= MASK32):
        raise ValueError(f"holder_id/ref_count out of 32-bit range: {holder_id}, {ref_count}")
    return (holder_id << 32) | ref_count


def decode(raw: int) -> tuple[int, int]:
    if not 0 <= raw <= MASK64:
        raise ValueError(f"raw word out of 64-bit range: {raw}")
    return raw >> 32, raw & MASK32


@dataclass(frozen=True)
class MutexWord:
    raw: int

    @classmethod
    def of(cls, holder_id: int, ref_count: int) -> "MutexWord":
        return cls(encode(holder_id, ref_count))

    @property
    def holder_id(self) -> int:
        return self.raw >> 32

    @property
    def ref_count(self) -> int:
        return self.raw & MASK32

    @property
    def free(self) -> bool:
        return self.raw == 0

    def __str__(self):
        return f"{self.holder_id:08X} {self.ref_count:08X}"


@dataclass(frozen=True)
class LockStats:
    gets: int = 0
    sleeps: int = 0
    yields: int = 0


@dataclass(frozen=True)
class MutexSample:
    word: MutexWord
    stats: LockStats

    def dump(self) -> str:
        return (f"holder=0x{self.word.holder_id:08X} refcnt={self.word.ref_count} "
                f"gets={self.stats.gets} sleeps={self.stats.sleeps}")


@dataclass(frozen=True)
class AcquireReport:
    outcome: Outcome
    spin_cycles_total: int
    sleep_episodes: int
    yield_episodes: int
    elapsed_ns: int
    first_spin_ns: int = 0


class Clock(Protocol):
    def now_ns(self) -> int: ...

    def sleep(self, seconds: float) -> None: ...

    def yield_(self) -> None: ...


class SystemClock:
    """Monotonic wall clock; yield releases the GIL so the holder can run."""

    def now_ns(self) -> int:
        return time.monotonic_ns()

    def sleep(self, seconds: float) -> None:
        time.sleep(seconds)

    def yield_(self) -> None:
        # os.sched_yield keeps the GIL; sleep(0) gives it up.
        time.sleep(0)


SYSTEM_CLOCK = SystemClock()

# word -> compatible for a new acquisition in the given mode
_COMPATIBLE: dict[MutexMode, Callable[[int], bool]] = {
    MutexMode.SHARED: lambda raw: raw >> 32 == 0,
    MutexMode.EXCLUSIVE: lambda raw: raw == 0,
    MutexMode.EXAMINE: lambda raw: raw >> 32 == 0,
}


def compatible(raw: int, mode: MutexMode) -> bool:
    return _COMPATIBLE[mode](raw)


class RetrialMutex:
    """S/X/E mutex acquired by a bounded TTS spin followed by scheme sleeps.

    ``spin_count`` counts poll iterations; one iteration is one plain load of
    the word plus a compatibility test.

    >>> m = RetrialMutex()
    >>> m.try_get(MutexMode.EXCLUSIVE, 7)
    True
    >>> hex(m.raw)
    '0x700000000'
    """

    def __init__(self, spin_count: int = DEFAULT_SPIN_COUNT, scheme: WaitScheme | None = None,
                 clock: Clock = SYSTEM_CLOCK, resume_spin_on_race: bool = False):
        if spin_count < 0:
            raise ValueError("spin_count must be >= 0")
        self.raw = 0
        self.spin_count = spin_count
        self.scheme = scheme if scheme is not None else TenG()
        self.clock = clock
        self.resume_spin_on_race = resume_spin_on_race
        self._cas_lock = threading.Lock()
        self._stats_lock = threading.Lock()
        self._gets = 0
        self._sleeps = 0
        self._yields = 0

    # -- atomic primitives -------------------------------------------------

    def compare_and_swap(self, expected: int, new: int) -> bool:
        with self._cas_lock:
            if self.raw != expected:
                return False
            self.raw = new
            return True

    def _update(self, fn: Callable[[int], Optional[int]]) -> bool:
        """Apply ``fn`` to the word atomically; ``fn`` returns None to refuse."""
        with self._cas_lock:
            new = fn(self.raw)
            if new is None:
                return False
            self.raw = new
            return True

    # -- counters ----------------------------------------------------------

    def _count(self, gets: int = 0, sleeps: int = 0, yields: int = 0) -> None:
        with self._stats_lock:
            self._gets += gets
            self._sleeps += sleeps
            self._yields += yields

    @property
    def stats(self) -> LockStats:
        return LockStats(self._gets, self._sleeps, self._yields)

    def read_sample(self) -> MutexSample:
        """Unsynchronised snapshot of the word and counters; may be stale."""
        return MutexSample(MutexWord(self.raw), LockStats(self._gets, self._sleeps, self._yields))

    def dump(self) -> str:
        return self.read_sample().dump()

    # -- operations --------------------------------------------------------

    def try_get(self, mode: MutexMode, requester_id: int) -> bool:
        """One atomic acquisition attempt; False means busy."""
        _check_id(requester_id)

        def step(raw):
            holder, refs = raw >> 32, raw & MASK32
            if mode is MutexMode.SHARED:
                if holder:
                    return None
                if refs == MASK32:
                    if __debug__:
                        raise RefCountOverflow("shared reference count would overflow")
                    return None
                return raw + 1
            if mode is MutexMode.EXCLUSIVE:
                return requester_id << 32 if raw == 0 else None
            if mode is MutexMode.EXAMINE:
                return (requester_id << 32) | refs if holder == 0 else None
            raise TypeError(mode)

        return self._update(step)

    def release(self, mode: MutexMode, requester_id: int) -> None:
        _check_id(requester_id)

        def step(raw):
            holder, refs = raw >> 32, raw & MASK32
            if mode is MutexMode.SHARED:
                # Shared holders may leave while an examiner is installed.
                if refs == 0:
                    raise NotHeld(f"shared release of {raw:#x} with no shared holders")
                return raw - 1
            if mode is MutexMode.EXCLUSIVE:
                if holder != requester_id or refs != 0:
                    raise NotHeld(f"id {requester_id} does not hold {raw:#x} exclusively")
                return 0
            if mode is MutexMode.EXAMINE:
                if holder != requester_id:
                    raise NotHeld(f"id {requester_id} does not examine {raw:#x}")
                return refs
            raise TypeError(mode)

        self._update(step)

    def convert(self, from_mode: MutexMode, to_mode: MutexMode, requester_id: int) -> bool:
        """Atomic mode change for a current holder; False means busy.

        Supported: S->E, E->S and E->X (the latter only with no shared holders).
        """
        _check_id(requester_id)
        S, X, E = MutexMode.SHARED, MutexMode.EXCLUSIVE, MutexMode.EXAMINE
        pair = (from_mode, to_mode)

        def step(raw):
            holder, refs = raw >> 32, raw & MASK32
            if pair == (S, E):
                if refs == 0:
                    raise NotHeld(f"id {requester_id} holds no shared reference in {raw:#x}")
                if holder:
                    return None
                return (requester_id << 32) | (refs - 1)
            if holder != requester_id:
                raise NotHeld(f"id {requester_id} does not examine {raw:#x}")
            if pair == (E, S):
                if refs == MASK32:
                    raise RefCountOverflow("shared reference count would overflow")
                return refs + 1
            # E and X share an encoding once no shared holders remain.
            return raw if refs == 0 else None

        if pair not in ((S, E), (E, S), (E, X)):
            raise UnsupportedConversion(f"{from_mode.name} -> {to_mode.name}")
        return self._update(step)

    def acquire(self, mode: MutexMode, requester_id: int, *, spin_count: int | None = None,
                scheme: WaitScheme | None = None, clock: Clock | None = None,
                attempt_cap: int | None = None,
                poll_hook: Callable[[int], None] | None = None) -> AcquireReport:
        """Acquire the lock, spinning then waiting per the scheme until it succeeds.

        ``attempt_cap`` limits the number of wait episodes; exceeding it raises
        AttemptCapExceeded.  ``poll_hook`` is called with every polled word.
        """
        spin_count = self.spin_count if spin_count is None else spin_count
        scheme = self.scheme if scheme is None else scheme
        clock = self.clock if clock is None else clock
        if spin_count < 0:
            raise ValueError("spin_count must be >= 0")
        _check_id(requester_id)

        start = clock.now_ns()
        self._count(gets=1)
        if self.try_get(mode, requester_id):
            return AcquireReport(Outcome.IMMEDIATE_GET, 0, 0, 0, clock.now_ns() - start)

        ok = _COMPATIBLE[mode]
        cycles = sleeps = yields = episode = 0
        first_spin_ns = None
        while True:
            spin_start = clock.now_ns()
            budget = spin_count
            while True:
                # while (word incompatible && i < budget) i++  -- the word is
                # tested before the counter, so a zero budget still polls once.
                i = 0
                while True:
                    raw = self.raw
                    if poll_hook is not None:
                        poll_hook(raw)
                    seen = ok(raw)
                    if seen or i >= budget:
                        break
                    i += 1
                cycles += i
                budget -= i
                if seen and self.try_get(mode, requester_id):
                    outcome = Outcome.SPIN_GET if sleeps == 0 and yields == 0 else Outcome.SLEEP_GET
                    if first_spin_ns is None:
                        first_spin_ns = clock.now_ns() - spin_start
                    return AcquireReport(outcome, cycles, sleeps, yields,
                                         clock.now_ns() - start, first_spin_ns)
                if not (seen and self.resume_spin_on_race and budget > 0):
                    break
            if first_spin_ns is None:
                first_spin_ns = clock.now_ns() - spin_start
            if attempt_cap is not None and episode >= attempt_cap:
                raise AttemptCapExceeded(
                    f"id {requester_id} gave up after {episode} wait episodes on {self.dump()}")
            action = plan_action(scheme, episode)
            episode += 1
            if isinstance(action, Sleep):
                sleeps += 1
                self._count(sleeps=1)
                clock.sleep(action.duration_ms / 1000.0)
            else:
                yields += 1
                self._count(yields=1)
                clock.yield_()

    def held(self, mode: MutexMode, requester_id: int, **kwargs) -> "_Held":
        """Context manager: ``with m.held(MutexMode.SHARED, sid): ...``"""
        return _Held(self, mode, requester_id, kwargs)


class _Held:
    def __init__(self, mutex, mode, requester_id, kwargs):
        self.mutex, self.mode, self.requester_id, self.kwargs = mutex, mode, requester_id, kwargs
        self.report: AcquireReport | None = None

    def __enter__(self):
        self.report = self.mutex.acquire(self.mode, self.requester_id, **self.kwargs)
        return self.report

    def __exit__(self, *exc):
        self.mutex.release(self.mode, self.requester_id)
        return False


def _check_id(requester_id: int) -> None:
    if not 0 < requester_id <= MASK32:
        raise ValueError(f"requester_id must be a nonzero 32-bit value, got {requester_id}")


def default_requester_id() -> int:
    """Nonzero 32-bit id derived from the calling thread."""
    return ((threading.get_ident() ^ os.getpid()) & MASK32) or 1
