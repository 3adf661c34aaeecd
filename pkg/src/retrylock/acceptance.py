"""Acceptance criteria as runnable checks.

Each criterion returns a ``Result`` with status PASS, FAIL or SKIP, a
one-line detail string, its elapsed time and its time limit.  Exceeding the
time limit is a failure.  ``run`` prints one line per criterion.
"""

from __future__ import annotations

import math
import os
import random
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterable, TextIO

import numpy as np

from . import analytic as an
from .dists import Deterministic, Exponential, TruncatedPareto, Uniform
from .lockcore import MutexMode, MutexWord, RetrialMutex
from .sim import ExponentialT, SchemeSleep, SimConfig, formfactor_mc, horizon_for_misses, run_sim
from .waitsched import Patch6904068, Scheme1, Scheme2, TenG

PASS, FAIL, SKIP = "PASS", "FAIL", "SKIP"


@dataclass(frozen=True)
class Result:
    number: int
    name: str
    group: str
    status: str
    detail: str
    elapsed: float
    limit: float

    def line(self) -> str:
        return (f"[{self.status}] {self.number:2d} {self.name}: {self.detail} "
                f"({self.elapsed:.2f}s / limit {self.limit:g}s)")


@dataclass(frozen=True)
class Criterion:
    number: int
    name: str
    group: str
    limit: float
    check: Callable[[], tuple[bool | None, str]]


def _rel(a: float, b: float) -> float:
    return abs(a - b) / abs(b)


# -- 1 ----------------------------------------------------------------------------


def closed_form_agreement():
    worst = 0.0
    for delta in (0.1, 0.5, 1.0, 2.0, 5.0):
        exp_, det = Exponential(1.0), Deterministic(1.0)
        cases = [
            (an.spin_inefficiency_k0(exp_, delta), math.exp(-delta)),
            (an.k0_from_survival(exp_, delta), math.exp(-delta)),
            (an.spin_cpu_gamma(exp_, delta), -math.expm1(-delta)),
            (an.gamma_from_survival(exp_, delta), -math.expm1(-delta)),
        ]
        if delta <= 1.0:
            cases += [
                (an.spin_inefficiency_k0(det, delta), 1.0 - delta),
                (an.k0_from_survival(det, delta), 1.0 - delta),
                (an.spin_cpu_gamma(det, delta), delta - delta ** 2 / 2.0),
                (an.gamma_from_survival(det, delta), delta - delta ** 2 / 2.0),
            ]
        worst = max(worst, *(abs(a - b) for a, b in cases))
    return worst <= 1e-8, f"max |quadrature - closed form| = {worst:.2e} (tol 1e-8)"


# -- 2 ----------------------------------------------------------------------------


def random_cases(n: int = 100, seed: int = 2):
    rng = random.Random(seed)
    out = []
    for _ in range(n):
        kind = rng.randrange(4)
        S = rng.uniform(0.2, 5.0)
        if kind == 0:
            d = Exponential(S)
        elif kind == 1:
            d = Deterministic(S)
        elif kind == 2:
            a = rng.uniform(0.0, S)
            d = Uniform(a, a + rng.uniform(0.1, 3.0) * S)
        else:
            alpha = rng.uniform(2.2, 4.0)
            xmax = rng.choice([math.inf, S * rng.uniform(3.0, 50.0)])
            d = TruncatedPareto(alpha, S * 0.3, xmax)
        out.append((d, rng.uniform(0.0, 8.0) * d.mean))
    return out


def dual_form_identity():
    worst_k = worst_g = 0.0
    bad = []
    for dist, delta in random_cases():
        k_lo, k_hi = an.k0_low_efficiency(dist, delta), an.k0_high_efficiency(dist, delta)
        g_lo, g_hi = an.gamma_low_efficiency(dist, delta), an.gamma_high_efficiency(dist, delta)
        worst_k = max(worst_k, abs(k_lo - k_hi))
        worst_g = max(worst_g, abs(g_lo - g_hi))
        S_r, _ = an.residual_stats(dist)
        T_r = S_r - g_lo
        if g_lo > min(S_r, delta) + 1e-12 or T_r < -1e-12:
            bad.append(dist.spec())
    ok = worst_k <= 1e-8 and worst_g <= 1e-8 and not bad
    detail = f"max |dk0| = {worst_k:.1e}, max |dGamma| = {worst_g:.1e}, bound violations = {len(bad)}"
    return ok, detail


# -- 3 ----------------------------------------------------------------------------


def formfactor_checks():
    parts, ok = [], True
    for j, y in enumerate((0.1, 1.0, 5.0)):
        p, se = formfactor_mc(y, 1_000_000, seed=30 + j)
        z = abs(an.formfactor(y) - p) / se
        ok &= z <= 3.0
        parts.append(f"y={y:g}: {z:.2f} sigma")
    f_small = an.formfactor(1e-3)
    small_ok = abs(f_small - (1.0 - 5e-4)) <= 1e-6
    big = an.formfactor(8.0) * 8.0
    big_ok = abs(big - 1.0) < 0.2
    parts.append(f"F(1e-3) = {f_small:.7f} vs 0.9995 {'ok' if small_ok else 'MISMATCH'}")
    parts.append(f"8 F(8) = {big:.4f}")
    return ok and small_ok and big_ok, "; ".join(parts)


# -- 4 ----------------------------------------------------------------------------


def contention_free_limit():
    dist, lam = Exponential(1.0), 0.002
    cfg = SimConfig(lam, dist, 2.0, ExponentialT(100.0),
                    horizon=horizon_for_misses(lam, dist, 110_000), seed=4)
    rep = run_sim(cfg)
    target = math.exp(-2.0)
    se = rep.stderr["kappa"]
    z = abs(rep.kappa_measured - target) / se
    ok = rep.misses >= 100_000 and z <= 3.0
    return ok, (f"kappa = {rep.kappa_measured:.4f} +- {se:.4f} vs {target:.4f} "
                f"({z:.2f} sigma, {rep.misses} misses)")


# -- 5 ----------------------------------------------------------------------------


def k_linearity():
    dist, delta = Exponential(1.0), 2.0
    parts, ok = [], True
    for j, rho in enumerate((0.05, 0.1, 0.15, 0.2, 0.25, 0.3)):
        lam = rho
        cfg = SimConfig(lam, dist, delta, ExponentialT(100.0),
                        horizon=horizon_for_misses(lam, dist, 50_000), seed=50 + j)
        k = run_sim(cfg).k_measured
        k_lin, _ = an.k_linear(dist, delta, lam)
        k_full = an.k_contended(dist, delta, lam)
        r_lin, r_full = _rel(k, k_lin), _rel(k, k_full)
        ok &= r_lin <= 0.15 and r_full <= 0.10
        parts.append(f"rho={rho:g} k={k:.4f} lin {r_lin:.1%} full {r_full:.1%}")
    return ok, "; ".join(parts)


# -- 6 ----------------------------------------------------------------------------


def mva_validation():
    dist, delta, rho, T = Deterministic(1.0), 0.5, 0.19, 100.0
    lam = rho
    out = an.evaluate(an.ModelParams(dist, delta, lam, T), "base")
    if out.k * out.rho > 0.1:
        return False, f"parameters give k rho = {out.k * out.rho:.3f} > 0.1"
    rep = run_sim(SimConfig(lam, dist, delta, ExponentialT(T), horizon=2e6, seed=6))
    w_pred = an.mva_closed_form(out.k, rho, out.Gamma, T, out.T_r)
    wo_pred = (T + out.T_r) / (1.0 - out.k * rho)
    r_w, r_wo = _rel(rep.W_measured, w_pred), _rel(rep.w_bar_o_measured, wo_pred)
    return r_w <= 0.2 and r_wo <= 0.2, (
        f"W = {rep.W_measured:.3f} vs {w_pred:.3f} ({r_w:.1%}); "
        f"w_bar_o = {rep.w_bar_o_measured:.2f} vs {wo_pred:.2f} ({r_wo:.1%})")


# -- 7 ----------------------------------------------------------------------------


def scheme_ordering():
    dist, delta, lam = Exponential(1.0), 2.0, 0.2
    k = an.k_contended(dist, delta, lam)
    if k > 0.3:
        return False, f"analytic k = {k:.3f} > 0.3; ordering not claimed"
    waits = {}
    for scheme in (Patch6904068(10.0), Scheme1(10.0), Scheme2()):
        cfg = SimConfig(lam, dist, delta, SchemeSleep(scheme, yield_cost=1.0, ms=1000.0),
                        horizon=2e6, seed=7)
        waits[scheme.name] = run_sim(cfg).W_measured
    wp, w1, w2 = waits["patch6904068"], waits["scheme1"], waits["scheme2"]
    r1, r2 = w1 / wp, w2 / wp
    ordered = w2 < w1 < wp
    f1 = max(r1 / k, k / r1)
    f2 = max(r2 / k ** 2, k ** 2 / r2)
    ok = ordered and f1 <= 2.0 and f2 <= 2.0
    return ok, (f"W2={w2:.2f} < W1={w1:.2f} < Wp={wp:.2f}: {ordered}; "
                f"W1/Wp={r1:.3f} vs k={k:.3f} (x{f1:.2f}); W2/Wp={r2:.4f} vs k^2={k * k:.4f} (x{f2:.2f})")


# -- 8 ----------------------------------------------------------------------------


def spin_count_squaring():
    dist, lam = Exponential(1.0), 0.02
    kap = {}
    for delta in (1.0, 2.0):
        cfg = SimConfig(lam, dist, delta, ExponentialT(100.0),
                        horizon=horizon_for_misses(lam, dist, 80_000), seed=8)
        kap[delta] = run_sim(cfg).kappa_measured
    ratio = kap[2.0] / kap[1.0] ** 2
    return 0.8 <= ratio <= 1.2, f"kappa(2)={kap[2.0]:.4f}, kappa(1)={kap[1.0]:.4f}, ratio={ratio:.3f}"


# -- 9 ----------------------------------------------------------------------------


class _Shadow:
    def __init__(self):
        self.guard = threading.Lock()
        self.x_owner = 0
        self.e_owner = 0
        self.shared = 0
        self.violations: list[str] = []

    def fail(self, msg):
        with self.guard:
            if len(self.violations) < 20:
                self.violations.append(msg)


def _stress(worker: Callable, threads: int, iterations: int) -> tuple[list[str], int]:
    lock = RetrialMutex(spin_count=64, scheme=TenG())
    shadow = _Shadow()
    per = iterations // threads
    errors = []

    def run(sid):
        try:
            worker(lock, shadow, sid, per)
        except Exception as exc:  # reported as a violation
            shadow.fail(f"session {sid}: {exc!r}")
            errors.append(exc)

    ts = [threading.Thread(target=run, args=(i + 1,)) for i in range(threads)]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    if shadow.shared or shadow.x_owner or shadow.e_owner:
        shadow.fail("shadow state not clean at the end")
    if not errors and lock.stats.gets != per * threads:
        shadow.fail(f"gets = {lock.stats.gets}, expected {per * threads}")
    return shadow.violations, lock.raw


def _x_only(lock, sh, sid, n):
    X = MutexMode.EXCLUSIVE
    for _ in range(n):
        lock.acquire(X, sid)
        if sh.x_owner or sh.e_owner or sh.shared:
            sh.fail(f"X granted to {sid} while held")
        sh.x_owner = sid
        if sh.x_owner != sid:
            sh.fail("X owner overwritten")
        sh.x_owner = 0
        lock.release(X, sid)


def _examine_body(lock, sh, sid):
    if sh.x_owner or sh.e_owner:
        sh.fail(f"E granted to {sid} alongside X/E")
    sh.e_owner = sid
    prev = MutexWord(lock.raw)
    for _ in range(3):
        time.sleep(0)
        w = MutexWord(lock.raw)
        if w.holder_id != sid:
            sh.fail(f"holder changed under E: {w.holder_id:#x}")
        if w.ref_count > prev.ref_count:
            sh.fail("shared count rose while examined")
        prev = w
    sh.e_owner = 0


def _shared_body(lock, sh, sid):
    with sh.guard:
        if sh.x_owner:
            sh.violations.append(f"S granted to {sid} under X")
        sh.shared += 1
    with sh.guard:
        sh.shared -= 1


def _s_heavy(lock, sh, sid, n):
    S, E = MutexMode.SHARED, MutexMode.EXAMINE
    for i in range(n):
        if i % 10 == 9:
            lock.acquire(E, sid)
            _examine_body(lock, sh, sid)
            lock.release(E, sid)
        else:
            lock.acquire(S, sid)
            _shared_body(lock, sh, sid)
            lock.release(S, sid)


def _pin_cycle(lock, sh, sid, n):
    # pin shared, upgrade to examine to change state, downgrade, unpin
    S, E = MutexMode.SHARED, MutexMode.EXAMINE
    for i in range(n):
        lock.acquire(S, sid)
        if i % 4 == 0:
            while not lock.convert(S, E, sid):
                time.sleep(0)
            _examine_body(lock, sh, sid)
            if not lock.convert(E, S, sid):
                sh.fail("E -> S conversion refused")
        else:
            _shared_body(lock, sh, sid)
        lock.release(S, sid)


def lock_stress(iterations: int = 1_000_000, threads: int = 8):
    parts, ok = [], True
    for name, worker in (("X-only", _x_only), ("S-heavy+E", _s_heavy), ("E/S pin-cycle", _pin_cycle)):
        violations, raw = _stress(worker, threads, iterations)
        ok &= not violations and raw == 0
        parts.append(f"{name}: {len(violations)} violations, final word {raw:#x}")
        if violations:
            parts.append("first: " + violations[0])
    return ok, "; ".join(parts)


# -- 10 ---------------------------------------------------------------------------


def stats_algebra(n: int = 1000, seed: int = 10):
    from . import stats as ms

    rng = random.Random(seed)
    eps = 8 * np.finfo(float).eps
    bad = 0
    for _ in range(n):
        # physically consistent counters: sleeps = kappa rho gets with k in [0, 1]
        gets = rng.randint(1, 10 ** 9)
        rho = rng.uniform(1e-4, 0.999)
        k = rng.random()
        sleeps = round(gets * rho * k / (1.0 - k * rho))
        dt = rng.uniform(1e-3, 1e4)
        d = ms.derive(ms.StatSnapshot(0, 0, 0.0), ms.StatSnapshot(gets, sleeps, dt), rho=rho)
        # round trips go through 1 - k rho; their rounding error scales with 1 + kappa rho
        cond = 1.0 + d.kappa * d.rho_est
        checks = [
            (d.omega_rate, d.kappa * d.rho_est * d.lambda_rate, eps),
            (d.k, d.kappa / (1.0 + d.kappa * d.rho_est), eps),
            (d.S_est, d.rho_est / d.lambda_rate, eps),
            (an.kappa_from_k(d.k, d.rho_est), d.kappa, eps * cond),
            (an.k_from_kappa(d.kappa, d.rho_est), d.k, eps * cond),
        ]
        if any(not math.isclose(a, b, rel_tol=tol, abs_tol=1e-300) for a, b, tol in checks):
            bad += 1
    return bad == 0, f"{bad} of {n} snapshots off by more than 8 ulp (x condition for round trips)"


# -- 11 ---------------------------------------------------------------------------


def determinism():
    import contextlib
    import io

    from . import cli

    argv = ["sim", "--dist", "exp:1", "--delta", "2", "--rho", "0.1", "--seed", "11",
            "--sleep", "exp:100", "--misses", "20000"]
    outs = []
    for _ in range(2):
        buf = io.StringIO()
        with contextlib.redirect_stdout(buf):
            rc = cli.main(argv)
        outs.append((rc, buf.getvalue().encode()))
    same = outs[0] == outs[1] and outs[0][0] == 0
    return same, f"two runs {'byte-identical' if same else 'DIFFER'} ({len(outs[0][1])} bytes)"


# -- 12 ---------------------------------------------------------------------------


def bench_qualitative():
    cores = os.cpu_count() or 1
    if cores < 4:
        return None, f"{cores} core(s) < 4"
    from .bench import BenchConfig, run_bench

    tp = {}
    for scheme in (TenG(), Scheme2()):
        for n in (cores, 2 * cores):
            res = run_bench(BenchConfig(threads=n, scheme=scheme, duration_s=2.0))
            tp[scheme.name, n] = res.throughput
    drop = tp["10g", 2 * cores] < tp["10g", cores]
    change = abs(tp["scheme2", 2 * cores] / tp["scheme2", cores] - 1.0)
    return drop and change <= 0.25, (
        f"10g {tp['10g', cores]:.0f} -> {tp['10g', 2 * cores]:.0f}/s; "
        f"scheme2 {tp['scheme2', cores]:.0f} -> {tp['scheme2', 2 * cores]:.0f}/s ({change:.1%})")


CRITERIA = (
    Criterion(1, "closed-form agreement", "model", 1.0, closed_form_agreement),
    Criterion(2, "dual-form identity", "model", 10.0, dual_form_identity),
    Criterion(3, "formfactor", "model", 30.0, formfactor_checks),
    Criterion(4, "contention-free sim limit", "sim", 60.0, contention_free_limit),
    Criterion(5, "k(rho) linearity", "sim", 300.0, k_linearity),
    Criterion(6, "MVA validation", "sim", 300.0, mva_validation),
    Criterion(7, "scheme ordering", "sim", 300.0, scheme_ordering),
    Criterion(8, "spin-count squaring", "sim", 120.0, spin_count_squaring),
    Criterion(9, "lock correctness stress", "lock", 120.0, lock_stress),
    Criterion(10, "statistics algebra", "stats", 1.0, stats_algebra),
    Criterion(11, "determinism", "sim", 60.0, determinism),
    Criterion(12, "bench qualitative", "bench", 300.0, bench_qualitative),
)

GROUPS = sorted({c.group for c in CRITERIA})


def select(only: Iterable[str] | None) -> list[Criterion]:
    if not only:
        return list(CRITERIA)
    chosen = []
    for tok in only:
        if tok.isdigit():
            hit = [c for c in CRITERIA if c.number == int(tok)]
        else:
            hit = [c for c in CRITERIA if c.group == tok]
        if not hit:
            raise KeyError(f"no criterion or group {tok!r} (groups: {', '.join(GROUPS)})")
        chosen += [c for c in hit if c not in chosen]
    return sorted(chosen, key=lambda c: c.number)


def evaluate(c: Criterion) -> Result:
    t0 = time.perf_counter()
    try:
        passed, detail = c.check()
    except Exception as exc:  # a crash is a failure, not an abort
        passed, detail = False, f"raised {exc!r}"
    elapsed = time.perf_counter() - t0
    if passed is None:
        status = SKIP
    elif passed and elapsed <= c.limit:
        status = PASS
    else:
        status = FAIL
        if passed:
            detail += " [over time limit]"
    return Result(c.number, c.name, c.group, status, detail, elapsed, c.limit)


def run(only: Iterable[str] | None = None, stream: TextIO | None = None) -> list[Result]:
    results = []
    for c in select(only):
        r = evaluate(c)
        results.append(r)
        if stream is not None:
            print(r.line(), file=stream, flush=True)
    return results
