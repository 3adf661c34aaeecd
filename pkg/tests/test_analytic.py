import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from retrylock import analytic as an
from retrylock.dists import Deterministic, Exponential, TruncatedPareto, Uniform


def F_oracle(y):
    # -Ein(-y) = Ei(y) - gamma - ln y, in 50-digit arithmetic to avoid cancellation
    if y == 0:
        return 1.0
    with mpmath.workdps(50):
        y = mpmath.mpf(y)
        return float((mpmath.ei(y) - mpmath.euler - mpmath.log(y)) / mpmath.expm1(y))


def test_oracle_agrees_with_scipy_expi():
    for y in (0.5, 3.0, 40.0):
        ref = (special.expi(y) - np.euler_gamma - math.log(y)) / math.expm1(y)
        assert F_oracle(y) == pytest.approx(ref, rel=1e-12)


dist_strategy = st.one_of(
    st.floats(0.2, 5).map(Exponential),
    st.floats(0.2, 5).map(Deterministic),
    st.tuples(st.floats(0, 2), st.floats(0.1, 3)).map(lambda p: Uniform(p[0], p[0] + p[1])),
    st.tuples(st.floats(2.2, 4), st.floats(0.1, 1)).map(lambda p: TruncatedPareto(p[0], p[1])),
)


@pytest.mark.parametrize("delta", [0.1, 0.5, 1, 2, 5])
def test_exponential_closed_forms(delta):
    d = Exponential(1.0)
    assert an.spin_inefficiency_k0(d, delta) == pytest.approx(math.exp(-delta), abs=1e-10)
    assert an.spin_cpu_gamma(d, delta) == pytest.approx(1 - math.exp(-delta), abs=1e-10)
    assert an.residual_after_spin_Tr(d, delta) == pytest.approx(math.exp(-delta), abs=1e-10)


@pytest.mark.parametrize("delta", [0.1, 0.5, 1.0])
def test_deterministic_closed_forms(delta):
    d = Deterministic(1.0)
    assert an.spin_inefficiency_k0(d, delta) == pytest.approx(1 - delta, abs=1e-12)
    assert an.spin_cpu_gamma(d, delta) == pytest.approx(delta - delta ** 2 / 2, abs=1e-12)


def test_examples():
    assert an.spin_inefficiency_k0(Exponential(1), 2) == pytest.approx(0.135335, abs=1e-6)
    assert an.spin_cpu_gamma(Deterministic(1), 0.5) == pytest.approx(0.375, abs=1e-12)
    assert an.spin_inefficiency_k0(Exponential(1), 0) == 1.0
    assert an.spin_cpu_gamma(Exponential(1), 0) == 0.0
    assert an.residual_stats(Exponential(1))[0] == pytest.approx(1.0)
    assert an.residual_stats(Deterministic(1))[0] == pytest.approx(0.5)


def test_uniform_against_direct_integral():
    d, delta = Uniform(0.0, 2.0), 0.7
    # k0 = (1/S) int_delta^inf Q, Q(t) = 1 - t/2
    direct = integrate.quad(lambda t: 1 - t / 2, delta, 2.0)[0] / d.mean
    assert an.spin_inefficiency_k0(d, delta) == pytest.approx(direct, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(dist_strategy, st.floats(0, 8))
def test_dual_forms_and_bounds(d, rel_delta):
    delta = rel_delta * d.mean
    k_lo, k_hi = an.k0_low_efficiency(d, delta), an.k0_high_efficiency(d, delta)
    g = an.spin_cpu_gamma(d, delta)
    S_r, _ = an.residual_stats(d)
    assert abs(k_lo - k_hi) <= 1e-8
    assert -1e-12 <= g <= min(S_r, delta) + 1e-10
    assert an.residual_after_spin_Tr(d, delta) >= 0
    assert 0 <= k_hi <= 1 + 1e-12


@settings(max_examples=40, deadline=None)
@given(dist_strategy, st.floats(0, 4), st.floats(0.01, 4))
def test_k0_decreasing_and_gamma_increasing_in_delta(d, a, step):
    d1, d2 = a * d.mean, (a + step) * d.mean
    assert an.spin_inefficiency_k0(d, d2) <= an.spin_inefficiency_k0(d, d1) + 1e-10
    assert an.spin_cpu_gamma(d, d2) >= an.spin_cpu_gamma(d, d1) - 1e-10


def test_domain_errors():
    with pytest.raises(an.DomainError):
        an.spin_inefficiency_k0(Exponential(1), -1)
    with pytest.raises(an.DomainError):
        an.formfactor(-0.5)
    with pytest.raises(an.DomainError):
        an.k_contended(Exponential(1), 1, 1.0)
    with pytest.raises(an.DomainError):
        an.kappa_from_k(1.0, 1.0)


@pytest.mark.parametrize("y", [1e-6, 1e-3, 0.1, 1, 5, 10, 29.9, 30, 30.1, 50, 200, 700])
def test_formfactor_matches_expi_oracle(y):
    assert an.formfactor(y) == pytest.approx(F_oracle(y), rel=1e-11)


def test_formfactor_continuous_at_switch():
    lo, hi = an.formfactor(30.0), an._formfactor_asymptotic(30.0)
    assert abs(lo - hi) <= 1e-12 * lo


def test_formfactor_small_y_slope():
    # F(y) = 1 - y/4 + O(y^2)
    for y in (1e-2, 1e-3, 1e-4):
        assert (1 - an.formfactor(y)) / y == pytest.approx(0.25, rel=2 * y)


def test_formfactor_large_y():
    assert an.formfactor(0) == 1.0
    assert abs(8 * an.formfactor(8) - 1) < 0.2
    assert 1000 * an.formfactor(1000) == pytest.approx(1.0, rel=2e-3)


@given(st.floats(0, 700), st.floats(0, 700))
def test_formfactor_monotone(a, b):
    lo, hi = sorted((a, b))
    assert an.formfactor(hi) <= an.formfactor(lo) + 1e-15


def k_contended_oracle(delta, lam):
    # exponential S = 1, independent quadrature and F from expi
    body = integrate.quad(lambda x: x * math.exp(-x) * F_oracle(lam * x), 0, delta,
                          epsabs=1e-13, epsrel=1e-12)[0]
    return 1 - body - delta * math.exp(-delta) * F_oracle(lam * delta)


@pytest.mark.parametrize("delta,lam", [(2, 0.1), (1, 0.3), (0.5, 0.05), (5, 0.5)])
def test_k_contended_matches_oracle(delta, lam):
    assert an.k_contended(Exponential(1), delta, lam) == pytest.approx(
        k_contended_oracle(delta, lam), abs=1e-9)


def test_k_contended_initial_slope_is_half_the_linear_law():
    d, delta, lam = Exponential(1), 2.0, 1e-4
    slope = (an.k_contended(d, delta, lam) - an.spin_inefficiency_k0(d, delta)) / lam
    assert slope == pytest.approx(an.contention_slope(d, delta) / 2, rel=1e-3)


def test_k_linear():
    d = Exponential(1)
    k, ok = an.k_linear(d, 2, 0.01)
    # slope = (1/S^2) int_0^2 x e^-x dx = 1 - 3 e^-2
    assert k == pytest.approx(math.exp(-2) + 0.01 * (1 - 3 * math.exp(-2)), abs=1e-12)
    assert ok
    assert not an.k_linear(d, 2, 0.1)[1]


def test_k_contended_limits():
    d = Exponential(1)
    assert an.k_contended(d, 0, 0.5) == 1.0
    assert an.k_contended(d, 2, 0) == pytest.approx(math.exp(-2), abs=1e-10)
    ks = [an.k_contended(d, 2, lam) for lam in (0, 0.1, 0.3, 0.6, 0.9)]
    assert ks == sorted(ks)


@given(st.floats(0, 1), st.floats(0, 0.99))
def test_kappa_round_trip(k, rho):
    kappa = an.kappa_from_k(k, rho)
    assert an.k_from_kappa(kappa, rho) == pytest.approx(k, rel=1e-12, abs=1e-15)
    assert kappa >= k


def test_mva_base_matches_closed_form():
    d, delta, lam, T = Deterministic(1), 0.5, 0.2, 100
    out = an.evaluate(an.ModelParams(d, delta, lam, T))
    closed = an.mva_closed_form(out.k, out.rho, out.Gamma, T, out.T_r)
    assert out.W == pytest.approx(closed, rel=1e-12)
    assert out.W_o == pytest.approx(out.W - out.rho * out.Gamma)
    assert out.w_bar_o == pytest.approx(out.W_o / (out.k * out.rho), rel=1e-12)
    # dropping the spin-phase terms leaves the per-wait estimate (T + T_r) / (1 - k rho)
    assert out.w_bar_o == pytest.approx((T + out.T_r) / (1 - out.k * out.rho), rel=1e-2)
    assert out.L_orb == pytest.approx(lam * out.W_orb)


def test_mva_by_hand():
    # k = 0.5, rho = 0.2, Gamma = 0.3, T = 10, T_r = 0.25, S_r = 0.55
    w = an.mva_waits(0.5, 0.2, 0.3, 10, 0.25, 0.55)
    W_s = 0.2 * 0.3 / 0.9
    W_orb = 0.5 / 0.9 * (0.2 * 10.55 - 0.8 * W_s)
    assert w.W_s == pytest.approx(W_s)
    assert w.W_orb == pytest.approx(W_orb)
    assert w.W == pytest.approx(W_s + W_orb)
    assert w.w_bar_o == pytest.approx((w.W - 0.06) / 0.1)


def test_mva_scheme_variants_order():
    args = (0.2, 0.3, 0.8, 1000, 0.5, 1.3)
    w1 = an.mva_waits(*args, variant="scheme1").W
    w2 = an.mva_waits(*args, variant="scheme2").W
    wb = an.mva_waits(*args).W
    assert w2 < w1 < wb
    with pytest.raises(an.DomainError):
        an.mva_waits(*args, variant="nope")


def test_mva_zero_load():
    w = an.mva_waits(0.3, 0.0, 0.5, 10, 0.2, 1.0)
    assert w.W == 0 and math.isnan(w.w_bar_o)


def test_doubling_rules():
    lo = an.doubling_low_efficiency(1.0, 0.1)
    assert lo.k == pytest.approx(0.9) and lo.k_doubled == pytest.approx(0.8)
    assert lo.gamma == pytest.approx(0.095)
    hi = an.doubling_high_efficiency(1.0, 1.0, 2.0)
    assert hi.k_ratio == pytest.approx(1.0)
    ex = an.doubling_from_dist(Exponential(1), 2.0)
    assert ex.k_ratio == pytest.approx(1.0, rel=1e-9)
    assert ex.cpu_delta == pytest.approx(math.exp(-2) - math.exp(-4), rel=1e-9)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        an.doubling_low_efficiency(1.0, 0.9)
    assert any(issubclass(r.category, an.RegimeMismatch) for r in rec)
