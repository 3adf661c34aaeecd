"""Analytic model of a retrial spinlock.

Quantities (all in the time units of the holding distribution):

- ``S``      mean holding time, ``S_r`` mean residual holding time seen by a miss
- ``k0``     probability that a spin of length ``delta`` fails, no contention
- ``k``      same with other spinners competing at release (SIRO)
- ``Gamma``  mean CPU time of one spin episode
- ``T_r``    residual holding time left after a full unsuccessful spin
- ``kappa``  sleeps per miss
- ``W``      mean wait per request, ``W_o`` the part reported without the
             first spin, ``w_bar_o`` that wait per orbiting request.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Callable

from .dists import HoldingDist, NonFiniteMoment, QuadratureFailure

AGREEMENT_TOL = 1e-8
SERIES_SWITCH = 30.0
EULER_GAMMA = 0.5772156649015329


class DomainError(ValueError):
    pass


class RegimeMismatch(UserWarning):
    pass


# ---------------------------------------------------------------------------
# residual holding time


def residual_stats(dist: HoldingDist) -> tuple[float, Callable[[float], float]]:
    """Mean residual holding time ``E(t^2) / 2S`` and the residual pdf ``Q(x) / S``."""
    S, m2 = dist.mean, dist.second_moment
    if not math.isfinite(S):
        raise NonFiniteMoment(f"{dist} has no finite mean")
    if not math.isfinite(m2):
        raise NonFiniteMoment(f"{dist} has no finite second moment")
    return m2 / (2.0 * S), lambda x: dist.survival(x) / S if x >= 0 else 0.0


# ---------------------------------------------------------------------------
# contention-free spin


def k0_low_efficiency(dist: HoldingDist, delta: float) -> float:
    """k0 = 1 - delta/S + (1/S) int_0^delta (delta - t) p(t) dt."""
    S = dist.mean
    return 1.0 - delta / S + dist.expect(lambda t: delta - t, 0.0, delta) / S


def k0_high_efficiency(dist: HoldingDist, delta: float) -> float:
    """k0 = (1/S) int_delta^inf (t - delta) p(t) dt."""
    return dist.expect(lambda t: t - delta, delta) / dist.mean


def gamma_low_efficiency(dist: HoldingDist, delta: float) -> float:
    S = dist.mean
    tail = dist.expect(lambda t: (delta - t) ** 2, 0.0, delta)
    return delta - delta ** 2 / (2.0 * S) + tail / (2.0 * S)


def after_spin_residual(dist: HoldingDist, delta: float) -> float:
    """T_r = (1/2S) int_delta^inf (t - delta)^2 p(t) dt."""
    return dist.expect(lambda t: (t - delta) ** 2, delta) / (2.0 * dist.mean)


def gamma_high_efficiency(dist: HoldingDist, delta: float) -> float:
    S_r, _ = residual_stats(dist)
    return S_r - after_spin_residual(dist, delta)


def k0_from_survival(dist: HoldingDist, delta: float) -> float:
    """Defining form (1/S) int_delta^inf Q(t) dt, by quadrature of Q."""
    return dist.integrate_survival(lambda t: 1.0, delta, math.inf) / dist.mean


def gamma_from_survival(dist: HoldingDist, delta: float) -> float:
    """Defining form (1/S) int_0^delta dt int_t^inf Q(z) dz, nested quadrature."""
    from .dists import quad

    S = dist.mean
    inner = lambda t: dist.integrate_survival(lambda z: 1.0, t, math.inf)
    return quad(inner, 0.0, delta, dist.breakpoints()) / S


def _check_delta(delta: float) -> None:
    if not delta >= 0:
        raise DomainError(f"delta must be >= 0, got {delta}")


def _agree(a: float, b: float, what: str) -> float:
    if abs(a - b) > AGREEMENT_TOL:
        raise QuadratureFailure(f"{what}: low/high efficiency forms disagree ({a!r} vs {b!r})")
    return b


def spin_inefficiency_k0(dist: HoldingDist, delta: float) -> float:
    """Contention-free probability that a spin of length ``delta`` fails.

    Evaluated in both the low- and high-efficiency forms; they must agree.
    """
    _check_delta(delta)
    if delta == 0:
        return 1.0
    return _agree(k0_low_efficiency(dist, delta), k0_high_efficiency(dist, delta), "k0")


def spin_cpu_gamma(dist: HoldingDist, delta: float) -> float:
    """Mean CPU time of one spin episode; bounded by min(S_r, delta)."""
    _check_delta(delta)
    if delta == 0:
        return 0.0
    g = _agree(gamma_low_efficiency(dist, delta), gamma_high_efficiency(dist, delta), "Gamma")
    S_r, _ = residual_stats(dist)
    if g > min(S_r, delta) + AGREEMENT_TOL:
        raise QuadratureFailure(f"Gamma={g} exceeds min(S_r={S_r}, delta={delta})")
    return g


def residual_after_spin_Tr(dist: HoldingDist, delta: float) -> float:
    """T_r = S_r - Gamma, cross-checked against the direct integral."""
    _check_delta(delta)
    S_r, _ = residual_stats(dist)
    direct = after_spin_residual(dist, delta)
    via_gamma = S_r - spin_cpu_gamma(dist, delta)
    if abs(direct - via_gamma) > AGREEMENT_TOL:
        raise QuadratureFailure(f"T_r: {direct} vs S_r - Gamma = {via_gamma}")
    return max(via_gamma, 0.0)


# ---------------------------------------------------------------------------
# concurrency formfactor


def neg_ein_neg(y: float) -> float:
    """-Ein(-y) = sum_{n>=1} y^n / (n n!) by its power series."""
    total = 0.0
    term = y  # y^n / n!
    n = 1
    while True:
        contrib = term / n
        total += contrib
        if n > y and contrib <= 1e-16 * total:
            return total
        n += 1
        term *= y / n


def _formfactor_asymptotic(y: float) -> float:
    # Ei(y) ~ e^y / y * sum k!/y^k, truncated at the smallest term
    s, term, k = 0.0, 1.0, 0
    while True:
        s += term
        nxt = term * (k + 1) / y
        if nxt >= term or nxt < 1e-17 * s:
            break
        term, k = nxt, k + 1
    # -Ein(-y) = Ei(y) - gamma - ln y; divide by e^y - 1 without overflow
    emy = math.exp(-y)
    return (s / y - (EULER_GAMMA + math.log(y)) * emy) / (1.0 - emy)


def formfactor(y: float) -> float:
    """Probability that a tagged spinner wins the SIRO draw at release.

    ``y`` is the mean number of requests in the window.  Defined as
    -Ein(-y) / (e^y - 1) with F(0) = 1; power series for ``y <= 30``,
    exponential-integral asymptotics above.
    """
    if y < 0 or math.isnan(y):
        raise DomainError(f"formfactor needs y >= 0, got {y}")
    if y == 0:
        return 1.0
    if y <= SERIES_SWITCH:
        return neg_ein_neg(y) / math.expm1(y)
    return _formfactor_asymptotic(y)


def formfactor_size_biased(y: float) -> float:
    """E[1/(1+M)], M ~ Poisson(y): win probability when the tagged request's
    competitors are counted from its own point of view.  Diagnostic only."""
    if y < 0:
        raise DomainError(f"y must be >= 0, got {y}")
    return 1.0 if y == 0 else -math.expm1(-y) / y


def k_contended(dist: HoldingDist, delta: float, lam: float,
                form: Callable[[float], float] = formfactor) -> float:
    """k = 1 - (1/S) int_0^inf min(x, delta) p(x) F(lam min(x, delta)) dx."""
    _check_delta(delta)
    if lam < 0:
        raise DomainError("lambda must be >= 0")
    S = dist.mean
    if lam * S >= 1:
        raise DomainError(f"rho = lambda*S = {lam * S} must be < 1")
    if delta == 0:
        return 1.0
    if lam == 0:
        return spin_inefficiency_k0(dist, delta)
    body = dist.expect(lambda x: x * form(lam * x), 0.0, delta)
    edge = delta * form(lam * delta) * dist.survival(delta)
    return min(max(1.0 - (body + edge) / S, 0.0), 1.0)


def contention_slope(dist: HoldingDist, delta: float) -> float:
    """(1/S^2) int_0^delta x Q(x) dx, the d k / d rho of the linear law."""
    S = dist.mean
    # int_0^delta x Q(x) dx = E[min(X, delta)^2] / 2
    m2 = dist.expect(lambda t: t * t, 0.0, delta) + delta ** 2 * dist.survival(delta)
    return 0.5 * m2 / S ** 2


def k_linear(dist: HoldingDist, delta: float, lam: float) -> tuple[float, bool]:
    """Low-contention linear law k0 + rho * slope; flag is True when lam*delta <= 0.1."""
    _check_delta(delta)
    rho = lam * dist.mean
    if delta == 0:
        return 1.0, True
    k = spin_inefficiency_k0(dist, delta)
    if lam:
        k += rho * contention_slope(dist, delta)
    return k, lam * delta <= 0.1


# ---------------------------------------------------------------------------
# statistics identities


def kappa_from_k(k: float, rho: float) -> float:
    """Sleeps per miss, k + (k rho) k + ... = k / (1 - k rho)."""
    if not (0 <= k <= 1 and 0 <= rho < 1):
        raise DomainError(f"need 0 <= k <= 1 and 0 <= rho < 1, got k={k}, rho={rho}")
    if k * rho >= 1:
        raise DomainError("k*rho must be < 1")
    return k / (1.0 - k * rho)


def k_from_kappa(kappa: float, rho: float) -> float:
    if kappa < 0 or rho < 0:
        raise DomainError(f"need kappa >= 0 and rho >= 0, got {kappa}, {rho}")
    return kappa / (1.0 + kappa * rho)


# ---------------------------------------------------------------------------
# mean value analysis


@dataclass(frozen=True)
class MvaWaits:
    W_s: float
    W_orb: float
    W_b: float
    W: float
    W_o: float
    w_bar_o: float
    L_orb: float = math.nan
    L_s: float = math.nan
    L_b: float = math.nan


MVA_VARIANTS = ("base", "scheme1", "scheme2")


def mva_waits(k: float, rho: float, Gamma: float, T: float, T_r: float, S_r: float,
              variant: str = "base", lam: float | None = None) -> MvaWaits:
    """Wait-time decomposition W = W_s + W_orb with exponential orbit sleeps of mean T.

    ``variant`` "scheme1"/"scheme2" replace the orbit term by the
    approximations kr/(1-kr) (k T + T_r) and kr/(1-kr) (k^2 T + T_r), where
    kr = k rho.  Little's-law populations are filled in when ``lam`` is given.
    """
    if variant not in MVA_VARIANTS:
        raise DomainError(f"unknown MVA variant {variant!r}")
    if not (0 <= rho < 1 and 0 <= k <= 1):
        raise DomainError(f"need 0 <= rho < 1 and 0 <= k <= 1, got rho={rho}, k={k}")
    kr = k * rho
    if kr >= 1:
        raise DomainError("k*rho must be < 1")
    W_s = rho * Gamma / (1.0 - kr)
    if variant == "base":
        W_orb = k / (1.0 - kr) * (rho * (T + S_r) - (1.0 - rho) * W_s)
    elif variant == "scheme1":
        W_orb = kr / (1.0 - kr) * (k * T + T_r)
    else:
        W_orb = kr / (1.0 - kr) * (k * k * T + T_r)
    W = W_s + W_orb
    W_b = rho * (S_r + W_orb) - (1.0 - rho) * W_s
    W_o = W - rho * Gamma
    w_bar_o = W_o / kr if kr > 0 else math.nan
    L = (lambda w: lam * w) if lam is not None else (lambda w: math.nan)
    return MvaWaits(W_s, W_orb, W_b, W, W_o, w_bar_o, L(W_orb), L(W_s), L(W_b))


def mva_closed_form(k: float, rho: float, Gamma: float, T: float, T_r: float) -> float:
    """Overall wait rho/(1-k rho) [ (1-k^2 rho)/(1-k rho) Gamma + k (T + T_r) ]."""
    kr = k * rho
    if kr >= 1:
        raise DomainError("k*rho must be < 1")
    return rho / (1.0 - kr) * ((1.0 - k * k * rho) / (1.0 - kr) * Gamma + k * (T + T_r))


# ---------------------------------------------------------------------------
# whole-model evaluation


@dataclass(frozen=True)
class ModelParams:
    dist: HoldingDist
    delta: float
    lam: float
    T: float

    def __post_init__(self):
        if self.delta < 0 or self.lam < 0:
            raise DomainError("delta and lambda must be >= 0")
        if self.lam * self.dist.mean >= 1:
            raise DomainError(f"rho = {self.lam * self.dist.mean:g} must be < 1")


@dataclass(frozen=True)
class ModelOutput:
    S: float
    S_r: float
    k0: float
    k: float
    Gamma: float
    T_r: float
    rho: float
    kappa: float
    W_s: float
    W_orb: float
    W_b: float
    W: float
    W_o: float
    w_bar_o: float
    L_orb: float
    L_s: float
    L_b: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def evaluate(params: ModelParams, variant: str = "base") -> ModelOutput:
    dist, delta, lam = params.dist, params.delta, params.lam
    S = dist.mean
    S_r, _ = residual_stats(dist)
    k0 = spin_inefficiency_k0(dist, delta)
    k = k_contended(dist, delta, lam)
    Gamma = spin_cpu_gamma(dist, delta)
    T_r = residual_after_spin_Tr(dist, delta)
    rho = lam * S
    kappa = kappa_from_k(k, rho)
    w = mva_waits(k, rho, Gamma, params.T, T_r, S_r, variant, lam)
    return ModelOutput(S, S_r, k0, k, Gamma, T_r, rho, kappa, w.W_s, w.W_orb, w.W_b, w.W,
                       w.W_o, w.w_bar_o, w.L_orb, w.L_s, w.L_b)


# ---------------------------------------------------------------------------
# spin-count doubling rules


@dataclass(frozen=True)
class DoublingPrediction:
    regime: str
    k: float
    k_doubled: float
    k_ratio: float          # k(2 delta) / k(delta)^2
    gamma: float
    gamma_doubled: float
    cpu_delta: float        # Gamma(2 delta) - Gamma(delta)


def doubling_high_efficiency(C: float, tau: float, delta: float,
                             S: float | None = None) -> DoublingPrediction:
    """Exponential tail Q(t) ~ C exp(-t/tau): doubling delta squares k (up to 1/C)
    and adds about tau * k of spin CPU."""
    if S is not None and delta < S:
        warnings.warn(f"delta={delta} < S={S}: not the high-efficiency regime", RegimeMismatch)
    k = C * math.exp(-delta / tau)
    k2 = C * math.exp(-2.0 * delta / tau)
    if k > 0.5:
        warnings.warn(f"k={k:.3g} is not small; squaring rule is unreliable", RegimeMismatch)
    # Gamma ~ S_r - C tau exp(-delta/tau); only the difference is meaningful
    cpu = tau * (k - k2)
    return DoublingPrediction("high", k, k2, k2 / k ** 2, math.nan, math.nan, cpu)


def doubling_low_efficiency(S: float, delta: float) -> DoublingPrediction:
    """delta << S with p(0) = 0: k = 1 - delta/S, Gamma = delta - delta^2/2S."""
    if delta > 0.5 * S:
        warnings.warn(f"delta={delta} is not << S={S}: not the low-efficiency regime",
                      RegimeMismatch)
    k = 1.0 - delta / S
    g = delta - delta ** 2 / (2.0 * S)
    k2 = 1.0 - 2.0 * delta / S
    g2 = 2.0 * delta - 2.0 * delta ** 2 / S
    return DoublingPrediction("low", k, k2, k2 / k ** 2, g, g2, g2 - g)


def doubling_from_dist(dist: HoldingDist, delta: float) -> DoublingPrediction:
    """Exact contention-free effect of doubling delta for a given distribution."""
    k = spin_inefficiency_k0(dist, delta)
    k2 = spin_inefficiency_k0(dist, 2.0 * delta)
    g = spin_cpu_gamma(dist, delta)
    g2 = spin_cpu_gamma(dist, 2.0 * delta)
    regime = "high" if delta >= dist.mean else "low"
    return DoublingPrediction(regime, k, k2, k2 / k ** 2 if k else math.nan, g, g2, g2 - g)
