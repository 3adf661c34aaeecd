"""Sleep/retry strategies used after an unsuccessful spin.

Each scheme maps the index of the upcoming wait episode (0-based, counted
per acquire call) to an action: a yield or a timed sleep.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, fields, replace
from typing import Iterator, Mapping, Union

# Observed backoff trace with a 30 cs ceiling; later sleeps repeat the cap.
BACKOFF_TEMPLATE_MS = (10, 10, 30, 30, 80, 70, 160, 150)

DEFAULT_SPIN_COUNT = 255


@dataclass(frozen=True)
class Yield:
    pass


@dataclass(frozen=True)
class Sleep:
    duration_ms: float

    def __post_init__(self):
        if not self.duration_ms > 0:
            raise ValueError(f"sleep duration must be positive, got {self.duration_ms}")


Action = Union[Yield, Sleep]

YIELD = Yield()


@dataclass(frozen=True)
class TenG:
    """Pure spin-and-yield: never sleeps."""

    name = "10g"


@dataclass(frozen=True)
class Patch6904068:
    """Fixed sleep after every unsuccessful spin."""

    timeout_ms: float = 10.0
    name = "patch6904068"


@dataclass(frozen=True)
class Scheme0:
    """``yields_per_cycle`` yields followed by one ``sleep_ms`` sleep, repeating."""

    yields_per_cycle: int = 99
    sleep_ms: float = 1.0
    name = "scheme0"


@dataclass(frozen=True)
class Scheme1:
    """One yield, then fixed sleeps of ``wait_time_ms``."""

    wait_time_ms: float = 1.0
    name = "scheme1"


@dataclass(frozen=True)
class Scheme2:
    """Two yields, then backoff sleeps capped at ``max_wait_cs`` centiseconds."""

    max_wait_cs: int = 1
    name = "scheme2"


WaitScheme = Union[TenG, Patch6904068, Scheme0, Scheme1, Scheme2]

SCHEMES: dict[str, type] = {
    cls.name: cls for cls in (TenG, Patch6904068, Scheme0, Scheme1, Scheme2)
}


def validate(scheme: WaitScheme) -> WaitScheme:
    if isinstance(scheme, Patch6904068) and not scheme.timeout_ms > 0:
        raise ValueError("patch6904068.timeout_ms must be > 0")
    if isinstance(scheme, Scheme0) and (scheme.yields_per_cycle < 0 or not scheme.sleep_ms > 0):
        raise ValueError("scheme0 needs yields_per_cycle >= 0 and sleep_ms > 0")
    if isinstance(scheme, Scheme1) and not scheme.wait_time_ms > 0:
        raise ValueError("scheme1.wait_time_ms must be > 0")
    if isinstance(scheme, Scheme2) and scheme.max_wait_cs < 1:
        raise ValueError("scheme2.max_wait_cs must be >= 1")
    return scheme


def backoff_durations(max_wait_cs: int) -> Iterator[float]:
    """Endless scheme-2 sleep sequence in ms, each element clamped to the cap."""
    if max_wait_cs < 1:
        raise ValueError("max_wait_cs must be >= 1")
    cap = 10 * max_wait_cs
    for ms in BACKOFF_TEMPLATE_MS:
        yield min(ms, cap)
    yield from itertools.repeat(cap)


def backoff_at(max_wait_cs: int, index: int) -> float:
    cap = 10 * max_wait_cs
    if index < len(BACKOFF_TEMPLATE_MS):
        return min(BACKOFF_TEMPLATE_MS[index], cap)
    return cap


def plan_action(scheme: WaitScheme, episode_index: int) -> Action:
    """Next action for the wait episode ``episode_index`` (0-based)."""
    if episode_index < 0:
        raise ValueError("episode_index must be >= 0")
    if isinstance(scheme, TenG):
        return YIELD
    if isinstance(scheme, Patch6904068):
        return Sleep(scheme.timeout_ms)
    if isinstance(scheme, Scheme0):
        period = scheme.yields_per_cycle + 1
        if episode_index % period == scheme.yields_per_cycle:
            return Sleep(scheme.sleep_ms)
        return YIELD
    if isinstance(scheme, Scheme1):
        return YIELD if episode_index == 0 else Sleep(scheme.wait_time_ms)
    if isinstance(scheme, Scheme2):
        if episode_index < 2:
            return YIELD
        return Sleep(backoff_at(scheme.max_wait_cs, episode_index - 2))
    raise TypeError(f"unknown wait scheme {scheme!r}")


def effective_sleep_ms(scheme: WaitScheme) -> float:
    """Single mean sleep used when a scheme is folded into the MVA model.

    Scheme 2 is represented by its cap, which dominates long waits. 10g and
    scheme 0 have no meaningful sleep mean and yield NaN.
    """
    if isinstance(scheme, Patch6904068):
        return float(scheme.timeout_ms)
    if isinstance(scheme, Scheme1):
        return float(scheme.wait_time_ms)
    if isinstance(scheme, Scheme2):
        return 10.0 * scheme.max_wait_cs
    return float("nan")


def mva_variant(scheme: WaitScheme) -> str:
    if isinstance(scheme, Scheme1):
        return "scheme1"
    if isinstance(scheme, Scheme2):
        return "scheme2"
    return "base"


def parse_scheme(name: str, tunables: Mapping[str, str] | None = None) -> WaitScheme:
    """Build a scheme from its CLI name and dotted ``name.field=value`` tunables.

    >>> parse_scheme("scheme2", {"scheme2.max_wait_cs": "30"})
    Scheme2(max_wait_cs=30)
    """
    try:
        cls = SCHEMES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown scheme {name!r}; expected one of {sorted(SCHEMES)}") from None
    scheme = cls()
    prefix = cls.name + "."
    kinds = {f.name: f.type for f in fields(cls)}
    updates = {}
    for key, raw in (tunables or {}).items():
        if not key.startswith(prefix):
            continue
        field = key[len(prefix):]
        if field not in kinds:
            raise ValueError(f"{cls.name} has no tunable {field!r}")
        updates[field] = int(raw) if kinds[field] in ("int", int) else float(raw)
    return validate(replace(scheme, **updates))


def format_scheme(scheme: WaitScheme) -> str:
    args = ",".join(f"{f.name}={getattr(scheme, f.name):g}" for f in fields(scheme))
    return f"{scheme.name}({args})" if args else scheme.name
