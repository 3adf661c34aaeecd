"""Command line entry point: ``retrylock {model|sim|bench|compare-schemes|validate}``.

Every option can also be given as a trailing ``key=value`` token or as a
line of a ``--config`` file.  Precedence: explicit flags, then trailing
tokens, then the config file, then built-in defaults.  Dotted keys such as
``scheme2.max_wait_cs=30`` tune the wait schemes.

Exit codes: 0 ok, 1 validation failure, 2 configuration or domain error,
3 thread spawn failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from typing import Callable, Sequence

import numpy as np

from . import analytic, report
from .dists import NonFiniteMoment, QuadratureFailure, parse_dist
from .sim import (ConfigError, ExponentialT, FixedT, SchemeSleep, SimConfig, horizon_for_misses,
                  run_sim)
from .waitsched import (DEFAULT_SPIN_COUNT, SCHEMES, effective_sleep_ms, format_scheme,
                        mva_variant, parse_scheme)

log = logging.getLogger("retrylock")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_SPAWN = 0, 1, 2, 3
SEED_ENV = "RETRYLOCK_SEED"
ALL_SCHEMES = ("10g", "patch6904068", "scheme0", "scheme1", "scheme2")


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _opt_float(v):
    return None if v is None else float(v)


def _opt_int(v):
    return None if v is None else int(v)


def _seed_default():
    return int(os.environ.get(SEED_ENV, "0"))


# name -> (converter, default or zero-arg factory, help, is_flag)
Option = tuple[Callable, object, str, bool]

_COMMON: dict[str, Option] = {
    "format": (str, "csv", "csv or table", False),
    "out": (str, None, "write output to FILE instead of stdout", False),
}

_LOAD: dict[str, Option] = {
    "dist": (str, "exp:1", "holding time: exp:S, det:S, uniform:a:b, pareto:alpha:xmin[:xmax]", False),
    "delta": (_opt_float, None, "spin window in time units", False),
    "spin_count": (_opt_int, None, "spin count; with --poll-cost gives delta", False),
    "poll_cost": (_opt_float, None, "time units per poll cycle", False),
    "lambda": (_opt_float, None, "arrival rate", False),
    "rho": (_opt_float, None, "utilization (sets lambda = rho / S)", False),
    "ms_units": (float, 1000.0, "time units per millisecond", False),
    "sweep": (str, None, "grid NAME=a:b:n", False),
}

COMMANDS: dict[str, dict[str, Option]] = {
    "model": {
        **_LOAD,
        "T": (_opt_float, None, "mean sleep in time units (default: from the scheme)", False),
        "scheme": (str, "patch6904068", "wait scheme " + "|".join(ALL_SCHEMES), False),
    },
    "sim": {
        **_LOAD,
        "sleep": (str, "scheme", "scheme, fixed:T or exp:T", False),
        "scheme": (str, "patch6904068", "wait scheme used when --sleep scheme", False),
        "yield_cost": (float, 0.0, "duration of a yield in time units", False),
        "horizon": (_opt_float, None, "simulated time (default: from --misses)", False),
        "misses": (float, 20_000.0, "target number of misses when no horizon is given", False),
        "warmup": (_opt_float, None, "warm-up time (default 10% of horizon)", False),
        "batches": (int, 20, "batch-means batches", False),
        "population": (_opt_int, None, "closed variant: number of sessions", False),
        "resume_spin": (_bool, False, "keep spinning after losing a race", True),
        "seed": (int, _seed_default, "random seed", False),
    },
    "bench": {
        "threads": (str, "1", "thread count or comma list", False),
        "hold_ns": (int, 2_000, "busy work inside the lock", False),
        "offcs_ns": (int, 2_000, "busy work outside the lock", False),
        "mode": (str, "X", "S, X or E", False),
        "scheme": (str, "scheme2", "wait scheme", False),
        "spin_count": (int, DEFAULT_SPIN_COUNT, "spin count", False),
        "duration": (float, 1.0, "seconds per run", False),
        "pin": (_bool, False, "pin threads to cores", True),
        "sample_interval": (float, 1e-4, "utilization sampling interval (s)", False),
        "stats_interval": (float, 0.0, "seconds between stats rows (0: none)", False),
        "stats_out": (str, None, "write interval stats CSV to FILE", False),
        "max_threads": (int, 256, "safety cap on threads", False),
        "measure_costs": (_bool, False, "estimate poll and yield costs by regression", True),
    },
    "compare-schemes": {
        **{k: v for k, v in _LOAD.items() if k != "sweep"},
        "schemes": (str, ",".join(ALL_SCHEMES), "comma list of schemes", False),
        "yield_cost": (float, 1.0, "duration of a yield in time units", False),
        "horizon": (_opt_float, None, "simulated time (default: from --misses)", False),
        "misses": (float, 20_000.0, "target number of misses when no horizon is given", False),
        "seed": (int, _seed_default, "random seed", False),
        "bench": (_bool, False, "also run the thread benchmark per scheme", True),
        "threads": (int, 4, "bench threads", False),
        "hold_ns": (int, 2_000, "bench hold", False),
        "offcs_ns": (int, 2_000, "bench non-critical work", False),
        "duration": (float, 1.0, "bench seconds per scheme", False),
    },
    "validate": {
        "only": (str, None, "comma list of groups (model, sim, lock, stats, bench) or numbers", False),
    },
}


def read_config(path: str) -> dict[str, str]:
    pairs = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected key=value")
            k, v = line.split("=", 1)
            pairs[k.strip()] = v.strip()
    return pairs


def parse_tokens(tokens: Sequence[str]) -> dict[str, str]:
    pairs = {}
    for tok in tokens:
        if "=" not in tok:
            raise ConfigError(f"expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        pairs[k.strip()] = v.strip()
    return pairs


def _key(k: str) -> str:
    k = k.lstrip("-")
    return k if "." in k else k.replace("-", "_")


def resolve(command: str, ns: argparse.Namespace) -> tuple[dict, dict[str, str]]:
    """Merge defaults, config file, trailing tokens and flags.

    Returns converted options and the dotted scheme tunables.
    """
    spec = {**_COMMON, **COMMANDS[command]}
    raw: dict[str, object] = {}
    if getattr(ns, "config", None):
        raw.update({_key(k): v for k, v in read_config(ns.config).items()})
    raw.update({_key(k): v for k, v in parse_tokens(ns.settings).items()})
    raw.update({k: v for k, v in vars(ns).items() if k in spec})
    tunables = {k: str(v) for k, v in raw.items() if "." in k}
    for k in tunables:
        if k.split(".", 1)[0] not in SCHEMES:
            raise ConfigError(f"unknown scheme tunable {k!r}")
    unknown = [k for k in raw if "." not in k and k not in spec]
    if unknown:
        raise ConfigError(f"unknown setting(s) for {command}: {', '.join(sorted(unknown))}")
    opts = {}
    for name, (conv, default, _, _) in spec.items():
        if name in raw:
            try:
                opts[name] = conv(raw[name])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {name}: {raw[name]!r}") from exc
        else:
            opts[name] = default() if callable(default) else default
    if opts["format"] not in ("csv", "table"):
        raise ConfigError("format must be csv or table")
    return opts, tunables


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="retrylock", description="Retrial spinlock laboratory.")
    p.add_argument("--log-level", default="WARNING", help="logging level for stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for cmd, spec in COMMANDS.items():
        sp = sub.add_parser(cmd)
        sp.add_argument("--config", help="file of key=value lines")
        for name, (_, _, help_, is_flag) in {**_COMMON, **spec}.items():
            flag = "--" + name.replace("_", "-")
            if is_flag:
                sp.add_argument(flag, dest=name, action="store_const", const=True,
                                default=argparse.SUPPRESS, help=help_)
            else:
                sp.add_argument(flag, dest=name, default=argparse.SUPPRESS, help=help_)
        sp.add_argument("settings", nargs="*", metavar="key=value")
    return p


# ---------------------------------------------------------------------------
# shared helpers


def parse_grid(text: str, allowed: Sequence[str]) -> tuple[str, np.ndarray]:
    """``name=a:b:n`` -> (name, n evenly spaced points from a to b)."""
    try:
        name, rng = text.split("=", 1)
        a, b, n = rng.split(":")
        grid = np.linspace(float(a), float(b), int(n))
    except ValueError as exc:
        raise ConfigError(f"bad sweep {text!r}; expected name=a:b:n") from exc
    name = name.strip()
    if name not in allowed:
        raise ConfigError(f"cannot sweep {name!r}; choose from {', '.join(allowed)}")
    if len(grid) < 1:
        raise ConfigError("sweep needs n >= 1")
    return name, grid


def _delta(opts) -> float:
    if opts["delta"] is not None:
        return opts["delta"]
    if opts["spin_count"] is not None and opts["poll_cost"] is not None:
        return opts["spin_count"] * opts["poll_cost"]
    raise ConfigError("need --delta, or --spin-count together with --poll-cost")


def _lam(opts, dist, default=None) -> float:
    if opts["lambda"] is not None and opts["rho"] is not None:
        raise ConfigError("give --lambda or --rho, not both")
    if opts["lambda"] is not None:
        return opts["lambda"]
    if opts["rho"] is not None:
        return opts["rho"] / dist.mean
    if default is None:
        raise ConfigError("need --lambda or --rho")
    return default


def model_row(dist, delta, lam, T, variant, scheme_label, spin_count, scenario) -> tuple[dict, dict]:
    """CSV row plus the full model output (for tables)."""
    out = analytic.evaluate(analytic.ModelParams(dist, delta, lam, T), variant)
    row = {
        "scenario": scenario, "scheme": scheme_label, "spin_count": spin_count,
        "threads_or_lambda": lam, "rho": out.rho, "k": out.k, "kappa": out.kappa,
        "gamma": out.Gamma, "W": out.W, "W_o": out.W_o, "w_bar_o": out.w_bar_o,
        "throughput": lam, "cpu_s": lam * out.rho * out.Gamma,
        "source": "model",
    }
    return row, out.as_dict()


def sim_row(rep, scheme_label, spin_count, lam, scenario) -> dict:
    return {
        "scenario": scenario, "scheme": scheme_label, "spin_count": spin_count,
        "threads_or_lambda": lam, "rho": rep.rho_measured, "k": rep.k_measured,
        "kappa": rep.kappa_measured, "gamma": rep.gamma_measured, "W": rep.W_measured,
        "W_o": rep.W_o_measured, "w_bar_o": rep.w_bar_o_measured,
        "throughput": rep.throughput, "cpu_s": rep.spin_cpu, "source": "sim",
    }


def _ci_columns(rep) -> dict:
    return {f"{m}_ci95": 1.96 * rep.stderr.get(m, math.nan) for m in ("k", "kappa", "W", "w_bar_o")}


def emit(opts, rows: list[dict], table_rows: list[dict] | None = None,
         table_columns: Sequence[str] | None = None) -> None:
    if opts["format"] == "csv":
        text = report.to_csv(rows)
    else:
        text = report.format_table(table_rows if table_rows is not None else rows, table_columns)
    if opts["out"]:
        with open(opts["out"], "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# commands

MODEL_TABLE = ("delta", "lambda", "S", "S_r", "k0", "k", "Gamma", "T_r", "kappa", "W", "W_o", "w_bar_o")


def cmd_model(opts, tunables) -> int:
    dist = parse_dist(opts["dist"])
    scheme = parse_scheme(opts["scheme"], tunables)
    T = opts["T"] if opts["T"] is not None else effective_sleep_ms(scheme) * opts["ms_units"]
    variant = mva_variant(scheme)
    delta0 = _delta(opts)
    lam0 = _lam(opts, dist, default=0.0)
    points = [(delta0, lam0)]
    if opts["sweep"]:
        name, grid = parse_grid(opts["sweep"], ("delta", "lambda", "rho"))
        if name == "delta":
            points = [(float(d), lam0) for d in grid]
        elif name == "lambda":
            points = [(delta0, float(x)) for x in grid]
        else:
            points = [(delta0, float(r) / dist.mean) for r in grid]
    rows, table = [], []
    for delta, lam in points:
        row, full = model_row(dist, delta, lam, T, variant, format_scheme(scheme),
                              opts["spin_count"], "model")
        rows.append(row)
        table.append({"delta": delta, "lambda": lam, **full})
    emit(opts, rows, table, MODEL_TABLE)
    return EXIT_OK


def _sleep_model(opts, tunables):
    text = opts["sleep"]
    if text == "scheme":
        scheme = parse_scheme(opts["scheme"], tunables)
        sm = SchemeSleep(scheme, opts["yield_cost"], opts["ms_units"])
        return sm, format_scheme(scheme), effective_sleep_ms(scheme) * opts["ms_units"], mva_variant(scheme)
    kind, _, val = text.partition(":")
    try:
        T = float(val)
    except ValueError:
        raise ConfigError(f"bad --sleep {text!r}; expected scheme, fixed:T or exp:T") from None
    if kind == "fixed":
        return FixedT(T), text, T, "base"
    if kind == "exp":
        return ExponentialT(T), text, T, "base"
    raise ConfigError(f"bad --sleep {text!r}; expected scheme, fixed:T or exp:T")


def _model_or_na(dist, delta, lam, T, variant, label, spin_count, scenario) -> dict:
    try:
        return model_row(dist, delta, lam, T, variant, label, spin_count, scenario)[0]
    except (analytic.DomainError, NonFiniteMoment) as exc:
        log.warning("model row unavailable: %s", exc)
        return {"scenario": scenario, "scheme": label, "spin_count": spin_count,
                "threads_or_lambda": lam, "source": "model"}


def cmd_sim(opts, tunables) -> int:
    dist = parse_dist(opts["dist"])
    delta = _delta(opts)
    sm, label, T, variant = _sleep_model(opts, tunables)
    if opts["sweep"]:
        name, grid = parse_grid(opts["sweep"], ("rho", "lambda"))
        lams = [float(x) / dist.mean if name == "rho" else float(x) for x in grid]
    else:
        lams = [_lam(opts, dist)]
    rows, table = [], []
    for j, lam in enumerate(lams):
        horizon = opts["horizon"] or horizon_for_misses(lam, dist, opts["misses"])
        cfg = SimConfig(lam, dist, delta, sm, horizon, warmup=opts["warmup"],
                        seed=opts["seed"] + j, resume_spin_on_race=opts["resume_spin"],
                        batches=opts["batches"], population=opts["population"])
        rep = run_sim(cfg)
        srow = sim_row(rep, label, opts["spin_count"], lam, "sim")
        mrow = _model_or_na(dist, delta, lam, T, variant, label, opts["spin_count"], "sim")
        k_lin = analytic.k_linear(dist, delta, lam)[0] if dist.mean * lam < 1 else math.nan
        rows += [srow, mrow]
        table += [{**srow, **_ci_columns(rep), "k_linear": k_lin}, mrow]
    cols = report.COLUMNS + ("k_ci95", "kappa_ci95", "W_ci95", "w_bar_o_ci95", "k_linear")
    emit(opts, rows, table, cols)
    return EXIT_OK


def cmd_bench(opts, tunables) -> int:
    from . import bench
    from . import stats as mstats
    from .lockcore import MutexMode

    if opts["measure_costs"]:
        est = bench.measure_costs()
        if not est.reliable:
            log.warning("cost regression R^2 = %.3f < 0.95; result unreliable", est.r_squared)
        row = {"poll_ns": est.poll_ns, "yield_ns": est.yield_ns, "r_squared": est.r_squared,
               "status": "reliable" if est.reliable else "unreliable"}
        cols = ("poll_ns", "yield_ns", "r_squared", "status")
        if opts["format"] == "csv":
            text = report.to_csv([row], cols)
        else:
            text = report.format_table([row], cols)
        _write(opts, text)
        return EXIT_OK

    try:
        mode = MutexMode(opts["mode"].upper())
    except ValueError:
        raise ConfigError(f"mode must be S, X or E, got {opts['mode']!r}") from None
    scheme = parse_scheme(opts["scheme"], tunables)
    try:
        thread_counts = [int(x) for x in opts["threads"].split(",")]
    except ValueError:
        raise ConfigError(f"bad --threads {opts['threads']!r}") from None
    rows, stats_rows = [], []
    for n in thread_counts:
        try:
            cfg = bench.BenchConfig(threads=n, hold_ns=opts["hold_ns"], offcs_ns=opts["offcs_ns"],
                                    mode=mode, scheme=scheme, spin_count=opts["spin_count"],
                                    duration_s=opts["duration"], pin_threads=opts["pin"],
                                    sample_interval_s=opts["sample_interval"],
                                    stats_interval_s=opts["stats_interval"],
                                    max_threads=opts["max_threads"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        res = bench.run_bench(cfg)
        rows.append(bench_row(res, format_scheme(scheme), "bench"))
        stats_rows += [{"threads": n, **r} for r in res.stats_rows]
    if opts["stats_out"]:
        with open(opts["stats_out"], "w", encoding="utf-8", newline="") as fh:
            report.write_csv(stats_rows, fh, ("threads",) + mstats.CSV_COLUMNS)
    emit(opts, rows)
    return EXIT_OK


def bench_row(res, label, scenario) -> dict:
    d = res.derived
    cfg = res.config
    sleep_waits = res.sleep_waits
    w_bar_o = (res.mean_wait_o_s * res.gets / sleep_waits * 1e6) if sleep_waits else math.nan
    return {
        "scenario": scenario, "scheme": label, "spin_count": cfg.spin_count,
        "threads_or_lambda": cfg.threads, "rho": res.rho,
        "k": d.k if d else math.nan, "kappa": d.kappa if d else math.nan, "gamma": None,
        "W": res.mean_wait_s * 1e6, "W_o": res.mean_wait_o_s * 1e6, "w_bar_o": w_bar_o,
        "throughput": res.throughput, "cpu_s": res.cpu_s, "source": "bench",
    }


def _write(opts, text: str) -> None:
    if opts["out"]:
        with open(opts["out"], "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_compare_schemes(opts, tunables) -> int:
    dist = parse_dist(opts["dist"])
    delta = _delta(opts)
    lam = _lam(opts, dist, default=0.2 / dist.mean)
    names = [s.strip() for s in opts["schemes"].split(",") if s.strip()]
    horizon = opts["horizon"] or horizon_for_misses(lam, dist, opts["misses"])
    rows, waits = [], {}
    for name in names:
        scheme = parse_scheme(name, tunables)
        label = format_scheme(scheme)
        cfg = SimConfig(lam, dist, delta, SchemeSleep(scheme, opts["yield_cost"], opts["ms_units"]),
                        horizon, seed=opts["seed"])
        rep = run_sim(cfg)
        rows.append(sim_row(rep, label, opts["spin_count"], lam, "compare-schemes"))
        waits[scheme.name] = rep.W_measured
        T = effective_sleep_ms(scheme) * opts["ms_units"]
        if not math.isnan(T):
            rows.append(_model_or_na(dist, delta, lam, T, mva_variant(scheme), label,
                                     opts["spin_count"], "compare-schemes"))
    if opts["bench"]:
        from . import bench
        for name in names:
            scheme = parse_scheme(name, tunables)
            res = bench.run_bench(bench.BenchConfig(threads=opts["threads"], hold_ns=opts["hold_ns"],
                                                    offcs_ns=opts["offcs_ns"], scheme=scheme,
                                                    duration_s=opts["duration"]))
            rows.append(bench_row(res, format_scheme(scheme), "compare-schemes"))
    trio = ("scheme2", "scheme1", "patch6904068")
    if all(s in waits for s in trio):
        ok = waits["scheme2"] < waits["scheme1"] < waits["patch6904068"]
        k = analytic.k_contended(dist, delta, lam) if lam * dist.mean < 1 else math.nan
        log.warning("ordering W(scheme2) < W(scheme1) < W(patch6904068): %s (analytic k = %.4g)",
                    "holds" if ok else "VIOLATED", k)
    emit(opts, rows)
    return EXIT_OK


def cmd_validate(opts, tunables) -> int:
    from . import acceptance

    only = [s.strip() for s in opts["only"].split(",")] if opts["only"] else None
    try:
        results = acceptance.run(only, stream=sys.stdout)
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc
    return EXIT_OK if all(r.status != "FAIL" for r in results) else EXIT_FAILED


HANDLERS = {
    "model": cmd_model,
    "sim": cmd_sim,
    "bench": cmd_bench,
    "compare-schemes": cmd_compare_schemes,
    "validate": cmd_validate,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=ns.log_level.upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    from .bench import ThreadSpawnError

    try:
        opts, tunables = resolve(ns.command, ns)
        return HANDLERS[ns.command](opts, tunables)
    except ThreadSpawnError as exc:
        log.error("thread spawn failed: %s", exc)
        return EXIT_SPAWN
    except (ConfigError, analytic.DomainError, NonFiniteMoment, QuadratureFailure,
            ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
