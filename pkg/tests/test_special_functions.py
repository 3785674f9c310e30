import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from annulus_sle.core_types import DomainError, derive_params
from annulus_sle.special_functions import (
    PoleError, SumTruncation, TruncationError, complex_kernel, eval_A, eval_alpha, eval_beta,
    eval_complex_kernel, eval_delta, eval_Gamma_delta, eval_Gamma_from_kernel, eval_H_I,
    eval_H_I_prime, eval_J, eval_K, eval_L, eval_lambda, eval_mstar, eval_tilde_functions,
    hi_closed_form, poisson_strip_boundary)

PI = math.pi
mp.mp.dps = 40
TIGHT = SumTruncation(abs_tol=1e-18)

radii = st.floats(min_value=0.1, max_value=8.0)
xs = st.floats(min_value=-PI, max_value=PI)


# ---- independent oracles: plain term-by-term sums in extended precision

def j_oracle(r, x, K=60):
    r, x = mp.mpf(r), mp.mpf(x)
    return float(mp.pi ** 2 / (2 * r * r) * mp.fsum(mp.sech(mp.pi * (x + 2 * mp.pi * k) / (2 * r)) ** 2
                                                     for k in range(-K, K + 1)))


def a_oracle(r, x, K=60):
    r, x = mp.mpf(r), mp.mpf(x)
    tot = mp.fsum(mp.cosh(mp.pi * x / (2 * r)) ** 2
                  / (mp.sinh(mp.pi ** 2 * k / r) ** 2 * mp.cosh(mp.pi * (x - 2 * mp.pi * k) / (2 * r)) ** 2)
                  for k in range(-K, K + 1) if k)
    return float(mp.pi ** 2 / (4 * r * r) * tot)


def at_oracle(r, x, K=60):
    r, x = mp.mpf(r), mp.mpf(x)
    tot = mp.fsum(mp.sinh(mp.pi * x / (2 * r)) ** 2
                  / (mp.sinh(mp.pi ** 2 * k / r) ** 2 * mp.sinh(mp.pi * (x - 2 * mp.pi * k) / (2 * r)) ** 2)
                  for k in range(-K, K + 1) if k)
    return float(mp.pi ** 2 / (4 * r * r) * tot)


def hit_oracle(r, x, K=400):
    r, x = mp.mpf(r), mp.mpf(x)
    c = lambda v: mp.coth(mp.pi * v / (2 * r))
    return float(mp.pi / (2 * r) * (c(x) + mp.fsum(c(x + 2 * mp.pi * k) + c(x - 2 * mp.pi * k)
                                                     for k in range(1, K))))


def delta_oracle(r, K=400):
    r = mp.mpf(r)
    return float(mp.mpf(1) / 12 - mp.pi ** 2 / (2 * r * r)
                 * mp.fsum(mp.sinh(k * mp.pi ** 2 / r) ** -2 for k in range(1, K)))


# ---- J and H_I

@pytest.mark.parametrize("r", [0.1, 0.5, 1.0, 3.0, 20.0])
@pytest.mark.parametrize("x", [0.0, 0.4, -2.0, PI, 7.5])
def test_J_against_direct_sum(r, x):
    ref = j_oracle(r, x)
    val, t = eval_J(r, x, full=True)
    assert abs(val - ref) <= t.achieved_tail_bound + 1e-13 * ref
    assert eval_J(r, x, TIGHT) == pytest.approx(ref, rel=1e-13, abs=1e-300)


@given(st.floats(min_value=0.3, max_value=10.0), xs)
def test_J_fourier_form(r, x):
    n = np.arange(1, 400)
    dual = 1 / r + 2 * np.sum(n * np.cos(n * x) / np.sinh(n * r))
    assert eval_J(r, x) == pytest.approx(dual, rel=1e-11, abs=1e-12)


@given(st.floats(min_value=0.3, max_value=10.0), xs)
def test_H_I_three_routes(r, x):
    n = np.arange(1, 400)
    fourier = 2 * np.sum(np.sin(n * x) / np.sinh(n * r))
    closed = hi_closed_form(r, x)
    quad = eval_H_I(r, x)
    assert closed == pytest.approx(fourier, abs=1e-11)
    assert quad == pytest.approx(closed, abs=1e-11)


@given(radii, xs)
def test_H_I_derivative_is_J_minus_inverse_r(r, x):
    h = 1e-5
    fd = (hi_closed_form(r, x + h) - hi_closed_form(r, x - h)) / (2 * h)
    assert fd == pytest.approx(eval_H_I_prime(r, x), rel=1e-6, abs=1e-6 * max(1.0, 1 / r ** 2))


@given(radii, xs)
def test_J_H_I_symmetries(r, x):
    assert eval_J(r, x) > 0
    assert eval_J(r, -x) == pytest.approx(eval_J(r, x), rel=1e-14)
    assert eval_J(r, x + 2 * PI) == pytest.approx(eval_J(r, x), rel=1e-10)
    assert hi_closed_form(r, -x) == pytest.approx(-hi_closed_form(r, x), abs=1e-13)
    assert hi_closed_form(r, x + 2 * PI) == pytest.approx(hi_closed_form(r, x), abs=1e-10)


@given(st.floats(min_value=0.1, max_value=6.0), st.floats(min_value=0.0, max_value=PI))
def test_K_below_linear_bound(r, x):
    k = eval_K(r, x)
    assert 0.0 <= k + 1e-12
    assert k <= PI - x + 1e-10


def test_L_closed_form_and_log_derivative():
    r, x = 0.7, 0.9
    assert eval_L(r, x) == pytest.approx(PI / r * math.tanh(PI * x / (2 * r)))
    # L = -d/dx log of the top Poisson kernel, up to the 1/b normalization used for the drift
    h = 1e-6
    top = lambda y: poisson_strip_boundary(r, y, "top")
    fd = -(math.log(top(x + h)) - math.log(top(x - h))) / (2 * h)
    assert fd == pytest.approx(eval_L(r, x), rel=1e-7)


# ---- A and its chordal-case relatives

@pytest.mark.parametrize("r", [0.2, 0.5, 1.0, 2.5])
@pytest.mark.parametrize("x", [0.0, 1.0, PI, 4.0, 2 * PI + 0.5, -9.0])
def test_A_against_direct_sum(r, x):
    ref = a_oracle(r, x)
    val, t = eval_A(r, x, full=True)
    assert abs(val - ref) <= t.achieved_tail_bound + 1e-13 * ref
    assert eval_A(r, x, TIGHT) == pytest.approx(ref, rel=1e-12, abs=1e-300)


def test_A_is_not_periodic():
    assert eval_A(1.0, 0.5 + 2 * PI) > 1e3 * eval_A(1.0, 0.5)


@given(radii, st.floats(min_value=0.0, max_value=3 * PI), st.floats(min_value=0.0, max_value=1.0))
def test_A_even_and_increasing(r, x, d):
    assert eval_A(r, -x) == eval_A(r, x)
    assert eval_A(r, x + d) >= eval_A(r, x) * (1 - 1e-14)


@pytest.mark.parametrize("r", [0.3, 1.0, 3.0])
@pytest.mark.parametrize("x", [0.2, 1.5, PI, 6.0])
def test_tilde_functions_against_direct_sums(r, x):
    at, hit, lt = eval_tilde_functions(r, x, TIGHT)
    assert at == pytest.approx(at_oracle(r, x), rel=1e-12, abs=1e-300)
    assert hit == pytest.approx(hit_oracle(r, x), rel=1e-9)
    assert lt == pytest.approx(PI / r / math.tanh(PI * x / (2 * r)))


@pytest.mark.parametrize("x", [0.0, 2 * PI, -0.1, 7.0])
def test_tilde_functions_need_open_interval(x):
    with pytest.raises(PoleError):
        eval_tilde_functions(1.0, x)


# ---- delta, Gamma, m*

@pytest.mark.parametrize("r", [0.2, 1.0, 3.0, 10.0, 40.0])
def test_delta_against_direct_sum(r):
    ref = delta_oracle(r)
    val, t = eval_delta(r, full=True)
    assert abs(val - ref) <= t.achieved_tail_bound + 1e-16
    assert eval_delta(r, TIGHT) == pytest.approx(ref, abs=1e-15)


@given(st.floats(min_value=0.3, max_value=12.0))
def test_Gamma_two_routes(r):
    g, d = eval_Gamma_delta(r)
    assert g == pytest.approx(PI ** 2 / (12 * r * r) + d, abs=1e-15)
    assert eval_Gamma_from_kernel(r) == pytest.approx(g, abs=1e-10)


def test_two_r_Gamma_tends_to_one():
    for r in np.linspace(4, 10, 13):
        g, _ = eval_Gamma_delta(r)
        assert abs(2 * r * g - 1) <= 10 * math.exp(-r)


def test_mstar_small_and_refined_asymptote():
    assert eval_mstar(0.0) == 0.0
    # the refined large-r form r/6 - log r + log pi - pi^2/(6r), exact up to O(e^{-r})
    for r in (15.0, 20.0, 30.0):
        approx = r / 6 - math.log(r) + math.log(PI) - PI ** 2 / (6 * r)
        assert eval_mstar(r) == pytest.approx(approx, abs=1e-5)


def test_mstar_derivative_matches_integrand():
    r, h = 2.0, 1e-4
    fd = (eval_mstar(r + h) - eval_mstar(r - h)) / (2 * h)
    assert fd == pytest.approx(1 / 6 - 2 * eval_delta(r), abs=1e-8)


def test_scalar_functions():
    p = derive_params(3.0)
    assert eval_lambda(1.0, p) == 1.0
    g, _ = eval_Gamma_delta(2.0)
    assert eval_alpha(2.0, p) == pytest.approx(p.b - p.b_tilde + (2 * p.b + p.c) * g)
    assert eval_beta(1.3, p) == pytest.approx(math.exp(p.b * 1.3 - p.c * eval_mstar(1.3) / 2))
    # d/dr log lambda = b/r - alpha
    h = 1e-4
    fd = (math.log(eval_lambda(2 + h, p)) - math.log(eval_lambda(2 - h, p))) / (2 * h)
    assert fd == pytest.approx(p.b / 2 - eval_alpha(2.0, p), abs=1e-7)


# ---- complex kernel

def test_kernel_laurent_and_poles():
    r = 0.9
    z = 1e-3 * np.exp(0.7j)
    assert complex_kernel(r, z) == pytest.approx(-1 / z, abs=1e-2)
    with pytest.raises(PoleError):
        eval_complex_kernel(r, 2 * PI)
    w = eval_complex_kernel(r, 0.4 + 0.3j)
    assert complex(w) == pytest.approx(complex(complex_kernel(r, 0.4 + 0.3j)))


@given(st.floats(min_value=0.3, max_value=3.0), st.floats(min_value=0.2, max_value=3.0),
       st.floats(min_value=0.1, max_value=0.9))
def test_kernel_is_holomorphic(r, x, frac):
    # the difference quotient must not depend on direction
    z = x + 1j * frac * r
    h = 1e-5
    dx = (complex_kernel(r, z + h) - complex_kernel(r, z - h)) / (2 * h)
    dy = (complex_kernel(r, z + 1j * h) - complex_kernel(r, z - 1j * h)) / (2j * h)
    assert abs(dx - dy) <= 1e-5 * max(1.0, abs(dx))


@given(st.floats(min_value=0.3, max_value=3.0), st.floats(min_value=0.1, max_value=3.0))
def test_kernel_top_edge_derivative(r, x):
    h = 1e-5
    z = x + 1j * r
    d = (complex_kernel(r, z + h) - complex_kernel(r, z - h)) / (2 * h)
    assert 2 * d.real == pytest.approx(-eval_H_I_prime(r, x), rel=1e-6, abs=1e-6)
    assert abs(d.imag) < 1e-6


# ---- truncation and domains

def test_truncation_failure_is_reported():
    with pytest.raises(TruncationError):
        eval_J(0.05, 0.3, SumTruncation(abs_tol=1e-300, max_terms=1))
    val, t = eval_J(1.0, 0.3, full=True)
    assert t.ok() and t.achieved_tail_bound <= t.abs_tol


@pytest.mark.parametrize("fn", [eval_J, eval_A, hi_closed_form, eval_L])
def test_nonpositive_r_rejected(fn):
    with pytest.raises(DomainError):
        fn(0.0, 0.1)
