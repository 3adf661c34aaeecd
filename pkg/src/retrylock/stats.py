"""Estimators for mutex statistics from counter snapshots.

Mutexes count gets and sleeps but not misses, so the miss ratio is taken
from the utilization (PASTA: arrivals see the time-average busy fraction)
and misses are inferred as ``rho * gets``.
"""

from __future__ import annotations

import math
import random
import threading
import time
from dataclasses import dataclass
from typing import Callable

CSV_COLUMNS = ("t", "gets", "sleeps", "lambda", "omega", "rho", "kappa", "k", "S_us")

MISSES_INFERRED = "misses inferred as rho * gets (not counted by the lock)"


class InsufficientActivity(ValueError):
    pass


class ZeroUtilization(ValueError):
    pass


@dataclass(frozen=True)
class StatSnapshot:
    gets: int
    sleeps: int
    wall_time: float                      # seconds
    util_samples: tuple[int, int] = (0, 0)  # cumulative (nonzero, total)

    def __post_init__(self):
        nonzero, total = self.util_samples
        if not 0 <= nonzero <= total:
            raise ValueError(f"bad utilization samples {self.util_samples}")


@dataclass(frozen=True)
class DerivedStats:
    lambda_rate: float
    omega_rate: float
    rho_est: float
    kappa: float
    k: float
    S_est: float      # seconds
    misses_est: float

    def csv_row(self, t: float, gets: int, sleeps: int) -> dict:
        return {"t": t, "gets": gets, "sleeps": sleeps, "lambda": self.lambda_rate,
                "omega": self.omega_rate, "rho": self.rho_est, "kappa": self.kappa,
                "k": self.k, "S_us": self.S_est * 1e6}


def derive(a: StatSnapshot, b: StatSnapshot, rho: float | None = None) -> DerivedStats:
    """Rates and ratios between two snapshots of the same lock.

    ``rho`` overrides the utilization estimate taken from the samples
    recorded between the snapshots.
    """
    dt = b.wall_time - a.wall_time
    if not dt > 0:
        raise ValueError("snapshots must be in increasing time order")
    dgets, dsleeps = b.gets - a.gets, b.sleeps - a.sleeps
    if dgets < 0 or dsleeps < 0:
        raise ValueError("counters went backwards")
    if dgets == 0:
        raise InsufficientActivity("no gets between snapshots")
    if rho is None:
        nz = b.util_samples[0] - a.util_samples[0]
        tot = b.util_samples[1] - a.util_samples[1]
        if tot <= 0:
            raise InsufficientActivity("no utilization samples between snapshots")
        rho = nz / tot
    if rho <= 0:
        raise ZeroUtilization("utilization is zero; sleep ratio undefined")
    lam = dgets / dt
    omega = dsleeps / dt
    kappa = omega / (lam * rho)
    k = kappa / (1.0 + kappa * rho)
    return DerivedStats(lam, omega, rho, kappa, k, rho / lam, rho * dgets)


def estimate_utilization(sample: Callable[[], int], interval: float, duration: float,
                         rng: random.Random | None = None,
                         sleep: Callable[[float], None] = time.sleep) -> tuple[float, float]:
    """Fraction of nonzero lock words seen by jittered periodic sampling.

    ``sample`` returns the raw lock word.  Gaps are uniform in
    [0.75, 1.25] * interval.  Returns the estimate and its binomial
    standard error.
    """
    if not (interval > 0 and duration / interval >= 100):
        raise ValueError("need at least 100 samples (duration / interval >= 100)")
    rng = rng or random.Random()
    n = int(duration / interval)
    busy = 0
    for _ in range(n):
        if sample() != 0:
            busy += 1
        sleep(interval * rng.uniform(0.75, 1.25))
    p = busy / n
    return p, math.sqrt(p * (1.0 - p) / n)


class UtilizationSampler(threading.Thread):
    """Background thread counting nonzero samples of a lock word."""

    def __init__(self, sample: Callable[[], int], interval: float = 1e-4, seed: int | None = None):
        super().__init__(daemon=True, name="util-sampler")
        self.sample = sample
        self.interval = interval
        self.rng = random.Random(seed)
        self.nonzero = 0
        self.total = 0
        self._stop_evt = threading.Event()

    def run(self):
        while not self._stop_evt.is_set():
            if self.sample() != 0:
                self.nonzero += 1
            self.total += 1
            time.sleep(self.interval * self.rng.uniform(0.75, 1.25))

    def stop(self) -> tuple[int, int]:
        self._stop_evt.set()
        self.join()
        return self.nonzero, self.total

    @property
    def counts(self) -> tuple[int, int]:
        return self.nonzero, self.total

    @property
    def rho(self) -> float:
        return self.nonzero / self.total if self.total else math.nan


def snapshot_from_sim(report, t0: float = 0.0) -> tuple[StatSnapshot, StatSnapshot, float]:
    """Pair of snapshots equivalent to a simulation report, plus its true rho.

    Time is the simulation's own unit; util samples are replaced by the
    measured busy fraction.
    """
    a = StatSnapshot(0, 0, t0)
    b = StatSnapshot(report.gets, report.sleeps, t0 + report.duration)
    return a, b, report.rho_measured
