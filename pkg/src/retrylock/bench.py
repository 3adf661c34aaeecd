"""Real-thread contention benchmark for RetrialMutex.

Each worker loops acquire -> busy-wait ``hold_ns`` -> release -> busy-wait
``offcs_ns``.  Under CPython the GIL serialises bytecode, so absolute
numbers mean little; orderings and ratios are what the benchmark is for.
"""

from __future__ import annotations

import logging
import math
import os
import threading
import time
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats as sstats

from . import stats as mstats
from .lockcore import AttemptCapExceeded, MutexMode, RetrialMutex
from .waitsched import DEFAULT_SPIN_COUNT, Scheme2, TenG, WaitScheme

log = logging.getLogger(__name__)


class ClockResolutionTooCoarse(RuntimeWarning):
    pass


class ThreadSpawnError(RuntimeError):
    pass


@dataclass(frozen=True)
class BenchConfig:
    threads: int = 1
    hold_ns: int = 2_000
    offcs_ns: int = 2_000
    mode: MutexMode = MutexMode.EXCLUSIVE
    scheme: WaitScheme = field(default_factory=Scheme2)
    spin_count: int = DEFAULT_SPIN_COUNT
    duration_s: float = 1.0
    pin_threads: bool = False
    sample_interval_s: float = 1e-4
    stats_interval_s: float = 0.0
    max_threads: int = 256

    def __post_init__(self):
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.threads > self.max_threads:
            raise ValueError(f"threads={self.threads} exceeds the safety cap {self.max_threads}")
        if self.hold_ns < 0 or self.offcs_ns < 0 or self.duration_s <= 0:
            raise ValueError("durations must be >= 0 (duration_s > 0)")
        if self.spin_count < 0:
            raise ValueError("spin_count must be >= 0")


@dataclass
class BenchResult:
    config: BenchConfig
    elapsed_s: float
    acquisitions: list[int]
    gets: int
    sleeps: int
    yields: int
    cpu_s: float
    throughput: float
    mean_wait_s: float
    mean_wait_o_s: float
    sleep_waits: int
    util: tuple[int, int]
    derived: mstats.DerivedStats | None
    stats_rows: list[dict] = field(default_factory=list)

    @property
    def rho(self) -> float:
        nz, tot = self.util
        return nz / tot if tot else math.nan


def busy_wait_ns(ns: int, _clock=time.perf_counter_ns) -> None:
    if ns <= 0:
        return
    end = _clock() + ns
    while _clock() < end:
        pass


def check_clock() -> None:
    res = time.get_clock_info("perf_counter").resolution
    if res > 1e-6:
        warnings.warn(f"perf_counter resolution {res}s is too coarse for hold times",
                      ClockResolutionTooCoarse)


class _Worker(threading.Thread):
    def __init__(self, lock, cfg, sid, stop, cpu_slot):
        super().__init__(daemon=True, name=f"bench-{sid}")
        self.lock, self.cfg, self.sid, self.stop = lock, cfg, sid, stop
        self.cpu_slot = cpu_slot
        self.count = 0
        self.wait_ns = 0
        self.wait_o_ns = 0
        self.sleep_waits = 0
        self.cpu_s = 0.0
        self.error: BaseException | None = None

    def run(self):
        try:
            if self.cpu_slot is not None and hasattr(os, "sched_setaffinity"):
                os.sched_setaffinity(0, {self.cpu_slot})
            cfg, lock, mode, sid = self.cfg, self.lock, self.cfg.mode, self.sid
            cpu0 = time.thread_time()
            while not self.stop.is_set():
                rep = lock.acquire(mode, sid)
                busy_wait_ns(cfg.hold_ns)
                lock.release(mode, sid)
                self.count += 1
                self.wait_ns += rep.elapsed_ns
                if rep.sleep_episodes or rep.yield_episodes:
                    self.sleep_waits += 1
                    self.wait_o_ns += rep.elapsed_ns - rep.first_spin_ns
                busy_wait_ns(cfg.offcs_ns)
            self.cpu_s = time.thread_time() - cpu0
        except BaseException as exc:  # surfaced by run_bench
            self.error = exc


def _waits(s) -> int:
    # every wait episode, yield or sleep, counts as a sleep for the estimators
    return s.sleeps + s.yields


def run_bench(cfg: BenchConfig) -> BenchResult:
    check_clock()
    lock = RetrialMutex(cfg.spin_count, cfg.scheme)
    stop = threading.Event()
    ncpu = os.cpu_count() or 1
    workers = [_Worker(lock, cfg, sid + 1, stop, (sid % ncpu) if cfg.pin_threads else None)
               for sid in range(cfg.threads)]
    sampler = mstats.UtilizationSampler(lambda: lock.raw, cfg.sample_interval_s, seed=1)
    rows: list[dict] = []
    t0 = time.monotonic()
    try:
        sampler.start()
        for w in workers:
            w.start()
    except RuntimeError as exc:
        stop.set()
        raise ThreadSpawnError(str(exc)) from exc

    first = prev = mstats.StatSnapshot(lock.stats.gets, _waits(lock.stats), t0, sampler.counts)
    deadline = t0 + cfg.duration_s
    step = cfg.stats_interval_s if cfg.stats_interval_s > 0 else cfg.duration_s
    while True:
        now = time.monotonic()
        if now >= deadline:
            break
        time.sleep(min(step, deadline - now))
        if cfg.stats_interval_s > 0:
            s = lock.stats
            snap = mstats.StatSnapshot(s.gets, _waits(s), time.monotonic(), sampler.counts)
            try:
                d = mstats.derive(prev, snap)
                rows.append(d.csv_row(snap.wall_time - t0, snap.gets, snap.sleeps))
            except (mstats.InsufficientActivity, mstats.ZeroUtilization) as exc:
                log.debug("stats interval skipped: %s", exc)
            prev = snap
    stop.set()
    for w in workers:
        w.join()
    elapsed = time.monotonic() - t0
    util = sampler.stop()
    for w in workers:
        if w.error is not None:
            raise w.error

    s = lock.stats
    acquisitions = [w.count for w in workers]
    total = sum(acquisitions)
    if total != s.gets:
        raise AssertionError(f"counter law violated: {total} acquisitions vs {s.gets} gets")
    last = mstats.StatSnapshot(s.gets, _waits(s), t0 + elapsed, util)
    try:
        derived = mstats.derive(first, last)
    except (mstats.InsufficientActivity, mstats.ZeroUtilization):
        derived = None
    sleep_waits = sum(w.sleep_waits for w in workers)
    return BenchResult(
        config=cfg,
        elapsed_s=elapsed,
        acquisitions=acquisitions,
        gets=s.gets,
        sleeps=s.sleeps,
        yields=s.yields,
        cpu_s=sum(w.cpu_s for w in workers),
        throughput=total / elapsed,
        mean_wait_s=sum(w.wait_ns for w in workers) / total / 1e9 if total else math.nan,
        mean_wait_o_s=sum(w.wait_o_ns for w in workers) / total / 1e9 if total else math.nan,
        sleep_waits=sleep_waits,
        util=util,
        derived=derived,
        stats_rows=rows,
    )


@dataclass(frozen=True)
class CostEstimate:
    poll_ns: float        # per spin cycle
    yield_ns: float       # per spin-and-yield episode, spin excluded
    r_squared: float
    reliable: bool
    points: tuple


def measure_costs(spin_counts: Sequence[int] = (0, 255, 510, 1020, 1530, 2040, 2550),
                  episodes: int = 200, repeats: int = 3) -> CostEstimate:
    """Spin and yield costs by regressing spin-and-yield cycle time on spin count.

    The lock is held by a fake session; a waiter runs ``episodes`` rounds of
    "spin ``spin_count`` cycles, then yield" and is cut off by the attempt cap.
    """
    lock = RetrialMutex()
    lock.try_get(MutexMode.EXCLUSIVE, 1)
    xs, ys = [], []
    for sc in spin_counts:
        best = math.inf
        for _ in range(repeats):
            t = time.perf_counter_ns()
            try:
                lock.acquire(MutexMode.EXCLUSIVE, 2, spin_count=sc, scheme=TenG(),
                             attempt_cap=episodes)
            except AttemptCapExceeded:
                pass
            best = min(best, (time.perf_counter_ns() - t) / (episodes + 1))
        xs.append(sc)
        ys.append(best)
    fit = sstats.linregress(np.asarray(xs, float), np.asarray(ys, float))
    r2 = fit.rvalue ** 2
    return CostEstimate(fit.slope, fit.intercept, r2, r2 >= 0.95, tuple(zip(xs, ys)))
