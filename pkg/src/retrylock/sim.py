"""Discrete-event simulation of a retrial spinlock.

Open system: Poisson arrivals of rate ``lam``, holding times from a
HoldingDist.  A request finding the lock busy spins for up to ``delta``;
at each release one current spinner, chosen uniformly at random, takes the
lock and the other spinners go to the orbit (sleep).  A spinner whose window
expires goes to the orbit as well.  A request waking from the orbit takes
the lock if it is free, otherwise it starts a new spin.

Counting conventions: ``sleeps`` is the number of orbit entries, i.e. failed
spin episodes, whether the wait that follows is a yield or a timed sleep;
``k_measured = sleeps / spin_episodes`` and ``kappa_measured = sleeps / misses``.

Runs of arrivals that neither collide with each other nor with a pending
event are processed in bulk with numpy; the result is identical to stepping
them one by one.
"""

from __future__ import annotations

import heapq
import math
import random
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import analytic
from .dists import HoldingDist
from .waitsched import Sleep, WaitScheme, plan_action


class ConfigError(ValueError):
    pass


class UnstableSystem(RuntimeWarning):
    pass


@dataclass(frozen=True)
class FixedT:
    T: float


@dataclass(frozen=True)
class ExponentialT:
    T: float


@dataclass(frozen=True)
class SchemeSleep:
    """Sleeps from a wait scheme; ``ms`` is the number of time units per
    millisecond and ``yield_cost`` the duration of a yield in time units."""

    scheme: WaitScheme
    yield_cost: float = 0.0
    ms: float = 1000.0


SleepModel = Union[FixedT, ExponentialT, SchemeSleep]


@dataclass(frozen=True)
class SimConfig:
    lam: float
    dist: HoldingDist
    delta: float
    sleep_model: SleepModel
    horizon: float
    warmup: Optional[float] = None
    seed: int = 0
    resume_spin_on_race: bool = False
    batches: int = 20
    population: Optional[int] = None  # closed variant: N sessions thinking exp(1/lam)

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError("lam must be > 0")
        if self.delta < 0:
            raise ConfigError("delta must be >= 0")
        if not self.horizon > 0:
            raise ConfigError("horizon must be > 0")
        if not 0 <= self.effective_warmup < self.horizon:
            raise ConfigError("need 0 <= warmup < horizon")
        if self.batches < 2:
            raise ConfigError("batches must be >= 2")
        if self.population is not None and self.population < 1:
            raise ConfigError("population must be >= 1")
        sm = self.sleep_model
        if isinstance(sm, (FixedT, ExponentialT)) and not sm.T > 0:
            raise ConfigError("sleep time T must be > 0")
        if isinstance(sm, SchemeSleep) and (sm.yield_cost < 0 or not sm.ms > 0):
            raise ConfigError("yield_cost must be >= 0 and ms > 0")
        if self.population is None and self.lam * self.dist.mean >= 1:
            warnings.warn(f"rho = {self.lam * self.dist.mean:g} >= 1; no steady state",
                          UnstableSystem, stacklevel=3)

    @property
    def effective_warmup(self) -> float:
        return 0.1 * self.horizon if self.warmup is None else self.warmup


@dataclass(frozen=True)
class SimReport:
    gets: int
    immediate_gets: int
    misses: int
    sleeps: int
    yields: int
    spin_episodes: int
    completions: int
    rho_measured: float
    busy_arrival_fraction: float
    k_measured: float
    kappa_measured: float
    gamma_measured: float
    W_measured: float
    W_o_measured: float
    w_bar_o_measured: float
    W_orb_measured: float
    L_orb_measured: float
    throughput: float
    spin_cpu: float           # spin time per unit time
    duration: float
    stderr: dict = field(default_factory=dict)
    in_flight_at_horizon: int = 0


# -- random streams ---------------------------------------------------------

_CHUNK = 1 << 15


class _ArrivalStream:
    """Poisson arrival times with their holding times, generated in chunks."""

    def __init__(self, lam, dist, horizon, rng_arr, rng_hold):
        self.lam, self.dist, self.horizon = lam, dist, horizon
        self.rng_arr, self.rng_hold = rng_arr, rng_hold
        self.a = np.empty(0)
        self.x = np.empty(0)
        self.i = 0
        self.t = 0.0
        self.done = False

    def ensure(self, n: int) -> None:
        """Make at least ``n`` entries available from ``i`` (unless exhausted)."""
        while len(self.a) - self.i < n and not self.done:
            gaps = self.rng_arr.exponential(1.0 / self.lam, _CHUNK)
            a = self.t + np.cumsum(gaps)
            x = self.dist.sample(self.rng_hold, _CHUNK)
            self.t = float(a[-1])
            if self.t >= self.horizon:
                keep = int(np.searchsorted(a, self.horizon, side="left"))
                a, x = a[:keep], x[:keep]
                self.done = True
                a = np.append(a, math.inf)
                x = np.append(x, 0.0)
            self.a = np.concatenate((self.a[self.i:], a))
            self.x = np.concatenate((self.x[self.i:], x))
            self.i = 0

    def peek(self) -> float:
        self.ensure(1)
        return float(self.a[self.i])


# -- engine -------------------------------------------------------------------

_RELEASE, _EXPIRE, _WAKE, _ARRIVE = 0, 1, 2, 3

# request record slots
_ARR, _HOLD, _BATCH, _SLEEPS, _TOKEN, _SPIN0, _FIRST, _OENTER, _OTIME, _EPI, _SESSION = range(11)

_METRICS = ("gets", "immediate", "misses", "sleeps", "yields", "episodes", "completions",
            "wait", "wait_o", "orbit_reqs", "orbit_time", "spin_time", "busy", "orbit_area")


class _Engine:
    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.warmup = cfg.effective_warmup
        self.horizon = cfg.horizon
        self.nb = cfg.batches
        self.blen = (self.horizon - self.warmup) / self.nb
        ss = np.random.SeedSequence(cfg.seed)
        s_arr, s_hold, s_pick, s_sleep, s_tie = ss.spawn(5)
        self.rng_hold = np.random.default_rng(s_hold)
        self.pick = random.Random(int(s_pick.generate_state(1)[0]))
        self.sleep_rng = random.Random(int(s_sleep.generate_state(1)[0]))
        self.tie = random.Random(int(s_tie.generate_state(1)[0]))
        self.arr_rng = np.random.default_rng(s_arr)
        self.stream = None
        if cfg.population is None:
            self.stream = _ArrivalStream(cfg.lam, cfg.dist, self.horizon, self.arr_rng,
                                         self.rng_hold)
        self.acc = {m: np.zeros(self.nb) for m in _METRICS}
        self.heap: list = []
        self.seq = 0
        self.holder = None
        self.hold_start = 0.0
        self.spinners: list = []
        self.orbit_n = 0
        self.last_t = 0.0
        self.reqs: dict = {}
        self.next_rid = 0
        self.in_flight_at_horizon = None
        self.orbit_batches = np.zeros(self.nb)

    # bookkeeping --------------------------------------------------------------

    def batch_of(self, t: float) -> int:
        if t < self.warmup or t >= self.horizon:
            return -1
        return min(int((t - self.warmup) / self.blen), self.nb - 1)

    def spread(self, a: float, b: float, weight: float, acc: np.ndarray) -> None:
        lo, hi = max(a, self.warmup), min(b, self.horizon)
        if hi <= lo:
            return
        i, j = self.batch_of(lo), min(int((hi - self.warmup) / self.blen), self.nb - 1)
        if i == j:
            acc[i] += weight * (hi - lo)
            return
        for k in range(i, j + 1):
            s = max(lo, self.warmup + k * self.blen)
            e = min(hi, self.horizon if k == self.nb - 1 else self.warmup + (k + 1) * self.blen)
            if e > s:
                acc[k] += weight * (e - s)

    def advance(self, t: float) -> None:
        if self.orbit_n and t > self.last_t:
            self.spread(self.last_t, t, self.orbit_n, self.acc["orbit_area"])
        if self.last_t < self.horizon <= t and self.in_flight_at_horizon is None:
            self.in_flight_at_horizon = self.orbit_n + len(self.spinners)
        self.last_t = t

    def push(self, t, kind, rid, token=0):
        self.seq += 1
        heapq.heappush(self.heap, (t, self.tie.random(), self.seq, kind, rid, token))

    def count(self, rec, metric, value=1.0):
        b = rec[_BATCH]
        if b >= 0:
            self.acc[metric][b] += value

    # request lifecycle ---------------------------------------------------------

    def new_request(self, t, hold, session=-1):
        rid = self.next_rid
        self.next_rid += 1
        rec = [t, hold, self.batch_of(t), 0, 0, 0.0, -1.0, 0.0, 0.0, 0, session]
        self.reqs[rid] = rec
        self.count(rec, "gets")
        return rid, rec

    def arrive(self, t, hold, session=-1):
        rid, rec = self.new_request(t, hold, session)
        if self.holder is None:
            self.count(rec, "immediate")
            self.acquire(rid, rec, t)
        else:
            self.count(rec, "misses")
            self.start_spin(rid, rec, t)

    def acquire(self, rid, rec, t):
        self.holder = rid
        self.hold_start = t
        self.push(t + rec[_HOLD], _RELEASE, rid)
        wait = t - rec[_ARR]
        first = rec[_FIRST] if rec[_FIRST] >= 0 else 0.0
        self.count(rec, "wait", wait)
        self.count(rec, "wait_o", wait - first)
        self.count(rec, "orbit_time", rec[_OTIME])
        if rec[_SLEEPS]:
            self.count(rec, "orbit_reqs")
        self.count(rec, "completions")

    def start_spin(self, rid, rec, t):
        self.count(rec, "episodes")
        rec[_SPIN0] = t
        if self.cfg.delta == 0:
            self.end_spin(rec, 0.0)
            self.go_orbit(rid, rec, t)
            return
        rec[_TOKEN] += 1
        self.spinners.append(rid)
        self.push(t + self.cfg.delta, _EXPIRE, rid, rec[_TOKEN])

    def end_spin(self, rec, spun):
        self.count(rec, "spin_time", spun)
        if rec[_FIRST] < 0:
            rec[_FIRST] = spun

    def go_orbit(self, rid, rec, t):
        self.count(rec, "sleeps")
        rec[_SLEEPS] += 1
        sm = self.cfg.sleep_model
        if isinstance(sm, FixedT):
            d = sm.T
        elif isinstance(sm, ExponentialT):
            d = self.sleep_rng.expovariate(1.0 / sm.T)
        else:
            action = plan_action(sm.scheme, rec[_EPI])
            if isinstance(action, Sleep):
                d = action.duration_ms * sm.ms
            else:
                d = sm.yield_cost
                self.count(rec, "yields")
        rec[_EPI] += 1
        self.advance(t)
        self.orbit_n += 1
        rec[_OENTER] = t
        rec[_TOKEN] += 1
        self.push(t + d, _WAKE, rid, rec[_TOKEN])

    # event handlers -------------------------------------------------------------

    def on_release(self, t, rid):
        rec = self.reqs.pop(rid)
        self.spread(self.hold_start, t, 1.0, self.acc["busy"])
        self.holder = None
        if self.cfg.population is not None:
            self.schedule_session(rec[_SESSION], t)
        if not self.spinners:
            return
        spinners = self.spinners
        w = spinners[self.pick.randrange(len(spinners))] if len(spinners) > 1 else spinners[0]
        if self.cfg.resume_spin_on_race:
            spinners.remove(w)
        else:
            self.spinners = []
            for r in spinners:
                if r != w:
                    lrec = self.reqs[r]
                    lrec[_TOKEN] += 1
                    self.end_spin(lrec, t - lrec[_SPIN0])
                    self.go_orbit(r, lrec, t)
        wrec = self.reqs[w]
        wrec[_TOKEN] += 1
        self.end_spin(wrec, t - wrec[_SPIN0])
        self.acquire(w, wrec, t)

    def on_expire(self, t, rid, token):
        rec = self.reqs.get(rid)
        if rec is None or rec[_TOKEN] != token:
            return
        self.spinners.remove(rid)
        self.end_spin(rec, self.cfg.delta)
        self.go_orbit(rid, rec, t)

    def on_wake(self, t, rid, token):
        rec = self.reqs.get(rid)
        if rec is None or rec[_TOKEN] != token:
            return
        self.advance(t)
        self.orbit_n -= 1
        rec[_OTIME] += t - rec[_OENTER]
        if self.holder is None:
            self.acquire(rid, rec, t)
        else:
            self.start_spin(rid, rec, t)

    def schedule_session(self, session, t):
        nxt = t + self.arr_rng.exponential(1.0 / self.cfg.lam)
        if nxt < self.horizon:
            self.push(nxt, _ARRIVE, session)

    # fast path --------------------------------------------------------------------

    def next_boundary(self, t):
        if t < self.warmup:
            return self.warmup
        b = int((t - self.warmup) / self.blen)
        return self.horizon if b >= self.nb - 1 else self.warmup + (b + 1) * self.blen

    def fast_forward(self, h):
        """Consume arrivals whose busy period ends before anything else happens."""
        st = self.stream
        width = 16
        while True:
            st.ensure(width + 1)
            a, x, i = st.a, st.x, st.i
            a0 = a[i]
            if a0 >= h or not math.isfinite(a0):
                return
            bound = self.next_boundary(a0)
            end = min(i + width, len(a) - 1)
            if end <= i:
                return
            e = a[i:end] + x[i:end]
            ok = (e < a[i + 1:end + 1]) & (e < h) & (e <= bound)
            n = len(ok) if ok.all() else int(np.argmin(ok))
            if n:
                b = self.batch_of(a0)
                if b >= 0:
                    self.acc["gets"][b] += n
                    self.acc["immediate"][b] += n
                    self.acc["completions"][b] += n
                    self.acc["busy"][b] += float(x[i:i + n].sum())
                self.next_rid += n
                st.i += n
            if n < len(ok):
                return
            width = min(width * 2, _CHUNK)

    # main loop ----------------------------------------------------------------------

    def run(self) -> SimReport:
        cfg = self.cfg
        heap = self.heap
        if cfg.population is not None:
            for s in range(cfg.population):
                self.schedule_session(s, 0.0)
        st = self.stream
        while True:
            h = heap[0][0] if heap else math.inf
            ta = st.peek() if st is not None else math.inf
            if ta < h:
                if self.holder is None:
                    self.fast_forward(h)
                    ta = st.peek()
                    if not ta < h:
                        continue
                hold = float(st.x[st.i])
                st.i += 1
                self.advance(ta)
                self.arrive(ta, hold)
                continue
            if not heap:
                break
            t, _, _, kind, rid, token = heapq.heappop(heap)
            self.advance(t)
            if kind == _RELEASE:
                self.on_release(t, rid)
            elif kind == _EXPIRE:
                self.on_expire(t, rid, token)
            elif kind == _WAKE:
                self.on_wake(t, rid, token)
            else:
                hold = float(cfg.dist.sample(self.rng_hold, 1)[0])
                self.arrive(t, hold, session=rid)
        self.advance(max(self.last_t, self.horizon))
        return self.report()

    def report(self) -> SimReport:
        acc = {m: float(v.sum()) for m, v in self.acc.items()}
        dur = self.horizon - self.warmup
        if acc["completions"] != acc["gets"]:
            raise AssertionError(f"census: {acc['gets']} gets but {acc['completions']} completions")

        def ratio(num, den):
            return acc[num] / acc[den] if acc[den] else math.nan

        def se(num, den=None):
            n = self.acc[num]
            d = self.acc[den] if den else np.full(self.nb, self.blen)
            mask = d > 0
            if mask.sum() < 2:
                return math.nan
            return float(np.std(n[mask] / d[mask], ddof=1) / math.sqrt(mask.sum()))

        stderr = {
            "rho": se("busy"),
            "busy_arrival_fraction": se("misses", "gets"),
            "k": se("sleeps", "episodes"),
            "kappa": se("sleeps", "misses"),
            "gamma": se("spin_time", "episodes"),
            "W": se("wait", "gets"),
            "W_o": se("wait_o", "gets"),
            "w_bar_o": se("wait_o", "orbit_reqs"),
            "W_orb": se("orbit_time", "gets"),
            "L_orb": se("orbit_area"),
            "throughput": se("completions"),
        }
        orbit = self.acc["orbit_area"] / self.blen
        if self.nb >= 4 and orbit[-1] > 50 and orbit[-1] > 4 * max(orbit[: self.nb // 4].mean(), 1):
            warnings.warn("orbit population keeps growing; system looks unstable", UnstableSystem)
        return SimReport(
            gets=int(acc["gets"]),
            immediate_gets=int(acc["immediate"]),
            misses=int(acc["misses"]),
            sleeps=int(acc["sleeps"]),
            yields=int(acc["yields"]),
            spin_episodes=int(acc["episodes"]),
            completions=int(acc["completions"]),
            rho_measured=acc["busy"] / dur,
            busy_arrival_fraction=ratio("misses", "gets"),
            k_measured=ratio("sleeps", "episodes"),
            kappa_measured=ratio("sleeps", "misses"),
            gamma_measured=ratio("spin_time", "episodes"),
            W_measured=ratio("wait", "gets"),
            W_o_measured=ratio("wait_o", "gets"),
            w_bar_o_measured=ratio("wait_o", "orbit_reqs"),
            W_orb_measured=ratio("orbit_time", "gets"),
            L_orb_measured=acc["orbit_area"] / dur,
            throughput=acc["completions"] / dur,
            spin_cpu=acc["spin_time"] / dur,
            duration=dur,
            stderr=stderr,
            in_flight_at_horizon=self.in_flight_at_horizon or 0,
        )


def run_sim(config: SimConfig) -> SimReport:
    """Run one simulation; identical configs give identical reports."""
    return _Engine(config).run()


def horizon_for_misses(lam: float, dist: HoldingDist, misses: float, warmup_frac: float = 0.1) -> float:
    """Horizon that yields about ``misses`` misses after warm-up."""
    rho = lam * dist.mean
    return misses / (lam * rho) / (1.0 - warmup_frac)


# -- formfactor oracle -------------------------------------------------------------


def formfactor_mc(y: float, trials: int = 1_000_000, seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo SIRO win probability: n ~ Poisson(y) given n >= 1, win w.p. 1/n.

    n is drawn exactly as "first point of a rate-y Poisson process on [0, 1]
    plus a Poisson count on the rest of the interval".
    """
    if trials < 1000:
        raise ValueError("trials must be >= 1000")
    if y < 0:
        raise ValueError("y must be >= 0")
    rng = np.random.default_rng(seed)
    if y == 0:
        return 1.0, 0.0
    u = rng.random(trials)
    t1 = -np.log1p(u * np.expm1(-y)) / y
    n = 1 + rng.poisson(y * (1.0 - t1))
    win = rng.random(trials) < 1.0 / n
    p = float(win.mean())
    return p, float(win.std(ddof=1) / math.sqrt(trials))


# -- k(rho) sweep --------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    rho: float
    k_measured: float
    k_stderr: float
    k_linear: float
    k_contended: float
    kappa_measured: float
    report: SimReport


def k_vs_rho_sweep(dist: HoldingDist, delta: float, rho_grid: Sequence[float],
                   sleep_model: SleepModel | None = None, misses: float = 20_000,
                   seed: int = 0) -> list[SweepRow]:
    """One simulation per utilisation level with the analytic k columns beside it."""
    if sleep_model is None:
        sleep_model = ExponentialT(100.0 * dist.mean)
    rows = []
    for j, rho in enumerate(rho_grid):
        if not 0 < rho <= 0.9:
            raise ConfigError(f"rho grid values must be in (0, 0.9], got {rho}")
        lam = rho / dist.mean
        cfg = SimConfig(lam, dist, delta, sleep_model,
                        horizon=horizon_for_misses(lam, dist, misses), seed=seed + j)
        rep = run_sim(cfg)
        k_lin, _ = analytic.k_linear(dist, delta, lam)
        rows.append(SweepRow(rho, rep.k_measured, rep.stderr["k"], k_lin,
                             analytic.k_contended(dist, delta, lam), rep.kappa_measured, rep))
    return rows
