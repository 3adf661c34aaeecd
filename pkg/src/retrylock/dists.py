"""Mutex holding-time distributions.

All distributions live on [0, inf) in abstract time units chosen by the
caller.  ``survival(t)`` is P(X >= t) so that it complements the half-open
intervals ``[lo, hi)`` used by ``expect``; for continuous laws the
distinction is immaterial, for the deterministic atom it keeps the
bookkeeping exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

QUAD_EPSABS = 1e-10
QUAD_EPSREL = 1e-8


class QuadratureFailure(ArithmeticError):
    pass


class NonFiniteMoment(ArithmeticError):
    pass


def quad(f: Callable[[float], float], lo: float, hi: float, points=()) -> float:
    """Adaptive quadrature; raises QuadratureFailure if the error estimate
    exceeds max(QUAD_EPSABS, QUAD_EPSREL * |value|)."""
    if hi <= lo:
        return 0.0
    kw = dict(epsabs=QUAD_EPSABS * 1e-3, epsrel=QUAD_EPSREL * 1e-3, limit=500)
    inner = sorted(p for p in points if lo < p < hi)
    if math.isinf(hi):
        # QUADPACK rejects break points on infinite ranges; split manually.
        cuts = [lo] + inner
        total = err = 0.0
        for a, b in zip(cuts, cuts[1:] + [hi]):
            v, e = integrate.quad(f, a, b, **kw)
            total += v
            err += e
    else:
        total, err = integrate.quad(f, lo, hi, points=inner or None, **kw)
    if not (math.isfinite(total) and err <= max(QUAD_EPSABS, QUAD_EPSREL * abs(total))):
        raise QuadratureFailure(f"quad on [{lo}, {hi}] gave {total} +- {err}")
    return total


class HoldingDist:
    """Base class: subclasses provide pdf/survival/moments/sampling."""

    lo: float = 0.0
    hi: float = math.inf

    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def second_moment(self) -> float:
        raise NotImplementedError

    def pdf(self, t: float) -> float:
        raise NotImplementedError

    def survival(self, t: float) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def breakpoints(self) -> tuple[float, ...]:
        return (self.lo, self.hi) if math.isfinite(self.hi) else (self.lo,)

    def expect(self, g: Callable[[float], float], lo: float = 0.0, hi: float = math.inf) -> float:
        """Integral of g(t) p(t) over [lo, hi)."""
        a, b = max(lo, self.lo), min(hi, self.hi)
        if b <= a:
            return 0.0
        return quad(lambda t: g(t) * self.pdf(t), a, b, self.breakpoints())

    def integrate_survival(self, g: Callable[[float], float], lo: float, hi: float) -> float:
        """Integral of g(t) Q(t) over [lo, hi) by direct quadrature of Q."""
        hi = min(hi, self.hi)
        if hi <= lo:
            return 0.0
        return quad(lambda t: g(t) * self.survival(t), lo, hi, self.breakpoints())

    def spec(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class Deterministic(HoldingDist):
    S: float

    def __post_init__(self):
        if not self.S > 0:
            raise ValueError("Deterministic S must be > 0")

    @property
    def mean(self):
        return self.S

    @property
    def second_moment(self):
        return self.S ** 2

    def pdf(self, t):
        return math.inf if t == self.S else 0.0

    def survival(self, t):
        return 1.0 if t <= self.S else 0.0

    def expect(self, g, lo=0.0, hi=math.inf):
        return g(self.S) if lo <= self.S < hi else 0.0

    def breakpoints(self):
        return (self.S,)

    def sample(self, rng, size):
        return np.full(size, self.S)

    def spec(self):
        return f"det:{self.S:g}"


@dataclass(frozen=True)
class Exponential(HoldingDist):
    S: float

    def __post_init__(self):
        if not self.S > 0:
            raise ValueError("Exponential S must be > 0")

    @property
    def mean(self):
        return self.S

    @property
    def second_moment(self):
        return 2.0 * self.S ** 2

    def pdf(self, t):
        return math.exp(-t / self.S) / self.S if t >= 0 else 0.0

    def survival(self, t):
        return math.exp(-t / self.S) if t > 0 else 1.0

    def sample(self, rng, size):
        return rng.exponential(self.S, size)

    def spec(self):
        return f"exp:{self.S:g}"


@dataclass(frozen=True)
class Uniform(HoldingDist):
    a: float
    b: float

    def __post_init__(self):
        if not 0 <= self.a < self.b:
            raise ValueError("Uniform needs 0 <= a < b")

    @property
    def lo(self):
        return self.a

    @property
    def hi(self):
        return self.b

    @property
    def mean(self):
        return 0.5 * (self.a + self.b)

    @property
    def second_moment(self):
        a, b = self.a, self.b
        return (a * a + a * b + b * b) / 3.0

    def pdf(self, t):
        return 1.0 / (self.b - self.a) if self.a <= t < self.b else 0.0

    def survival(self, t):
        if t <= self.a:
            return 1.0
        if t >= self.b:
            return 0.0
        return (self.b - t) / (self.b - self.a)

    def sample(self, rng, size):
        return rng.uniform(self.a, self.b, size)

    def spec(self):
        return f"uniform:{self.a:g}:{self.b:g}"


@dataclass(frozen=True)
class TruncatedPareto(HoldingDist):
    """Pareto tail ``t**-(alpha+1)`` on [x_min, x_max]; x_max may be inf."""

    alpha: float
    x_min: float
    x_max: float = math.inf

    def __post_init__(self):
        if not (self.alpha > 0 and 0 < self.x_min < self.x_max):
            raise ValueError("TruncatedPareto needs alpha > 0 and 0 < x_min < x_max")
        if math.isinf(self.x_max) and self.alpha <= 1:
            raise NonFiniteMoment("untruncated Pareto with alpha <= 1 has no mean")

    @property
    def lo(self):
        return self.x_min

    @property
    def hi(self):
        return self.x_max

    @property
    def _norm(self):
        if math.isinf(self.x_max):
            return 1.0
        return -math.expm1(self.alpha * math.log(self.x_min / self.x_max))

    def _moment(self, n: int) -> float:
        a, lo, hi = self.alpha, self.x_min, self.x_max
        c = a * lo ** a / self._norm
        if a == n:
            if math.isinf(hi):
                return math.inf
            return c * math.log(hi / lo)
        if math.isinf(hi):
            return math.inf if a < n else c * lo ** (n - a) / (a - n)
        return c * (hi ** (n - a) - lo ** (n - a)) / (n - a)

    @property
    def mean(self):
        return self._moment(1)

    @property
    def second_moment(self):
        return self._moment(2)

    def pdf(self, t):
        if not self.x_min <= t < self.x_max:
            return 0.0
        return self.alpha * self.x_min ** self.alpha * t ** (-self.alpha - 1) / self._norm

    def survival(self, t):
        if t <= self.x_min:
            return 1.0
        if t >= self.x_max:
            return 0.0
        tail_t = (self.x_min / t) ** self.alpha
        tail_max = 0.0 if math.isinf(self.x_max) else (self.x_min / self.x_max) ** self.alpha
        return (tail_t - tail_max) / self._norm

    def sample(self, rng, size):
        u = rng.random(size)
        # inverse CDF of the truncated law
        return self.x_min * (1.0 - u * self._norm) ** (-1.0 / self.alpha)

    def spec(self):
        return f"pareto:{self.alpha:g}:{self.x_min:g}:{self.x_max:g}"


def parse_dist(text: str) -> HoldingDist:
    """``exp:S``, ``det:S``, ``uniform:a:b`` or ``pareto:alpha:x_min[:x_max]``."""
    name, *args = text.strip().split(":")
    try:
        nums = [float(a) for a in args]
        name = name.lower()
        if name in ("exp", "exponential") and len(nums) == 1:
            return Exponential(nums[0])
        if name in ("det", "deterministic") and len(nums) == 1:
            return Deterministic(nums[0])
        if name in ("uniform", "uni") and len(nums) == 2:
            return Uniform(*nums)
        if name == "pareto" and len(nums) in (2, 3):
            return TruncatedPareto(*nums)
    except ValueError as exc:
        raise ValueError(f"bad distribution {text!r}: {exc}") from None
    raise ValueError(f"bad distribution {text!r}")
