import numpy as np
import pytest
from hypothesis import given, strategies as st

from annulus_sle.core_types import DomainError, derive_params
from annulus_sle.loewner import (
    CurveTrace, DrivingPath, NonSimpleCurveError, SwallowedError, annulus_flow, brownian_driver,
    chordal_flow, check_simple, curve_from_driving, disk_derivative_at_origin, extract_driving,
    hcap_estimate, measure_r_dot, radial_flow, top_log_derivative_rate, vertical_slit_curve,
    zero_driver,
)
from annulus_sle.special_functions import complex_kernel, eval_H_I_prime

Z = np.array([0.3 + 0.5j, -0.2 + 0.8j, 0.1 + 0.3j, 1.0 + 0.4j, -2.0 + 1.5j])


def upper_sqrt(w):
    s = np.sqrt(w)
    return np.where(s.imag < 0, -s, s)


# ---------------------------------------------------------------- chordal

@pytest.mark.parametrize("kappa", [2.0, 8 / 3, 3.0, 4.0])
def test_chordal_zero_driver_matches_slit_map(kappa):
    p = derive_params(kappa)
    z = np.array([0.8 + 0.5j, -1.2 + 0.8j, 0.5 + 1.5j, 3.0 + 0.1j])
    U = zero_driver(0.5, 1e-3)
    g = chordal_flow(U, z, 0.5, p)
    assert np.max(np.abs(g - upper_sqrt(z * z + 2 * p.a * 0.5))) < 1e-12


@given(x=st.floats(0.5, 3), y=st.floats(0.05, 3), t=st.floats(0.0, 0.3),
       sign=st.sampled_from([-1, 1]))
def test_chordal_zero_driver_closed_form_property(x, y, t, sign):
    # points with |Re z| >= 0.5 stay clear of the slit for t <= 0.3
    x = sign * x
    p = derive_params(3.0)
    dt = 1e-3
    t = round(t / dt) * dt
    z = np.array([complex(x, y)])
    g = chordal_flow(zero_driver(t, dt), z, t, p)
    assert abs(g[0] - upper_sqrt(z * z + 2 * p.a * t)[0]) < 1e-11 * (1 + abs(z[0]))


def test_chordal_identity_at_zero_time():
    p = derive_params(2.0)
    U = brownian_driver(0.1, 1e-3, 2.0, seed=4)
    assert np.array_equal(chordal_flow(U, Z, 0.0, p), Z)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_hcap_recovered_from_large_z(seed):
    p = derive_params(8 / 3)
    U = brownian_driver(0.3, 1e-3, 8 / 3, seed)
    assert hcap_estimate(U, 0.3, p, y=1e3) == pytest.approx(p.a * 0.3, rel=1e-3)


def test_expansion_at_infinity():
    p = derive_params(4.0)
    t = 0.2
    U = brownian_driver(t, 1e-3, 4.0, seed=9)
    big = np.array([50 + 80j, -120 + 40j, 300j, 1000 + 1000j])
    g = chordal_flow(U, big, t, p)
    scaled = np.abs(g - big - p.a * t / big) * np.abs(big) ** 2
    # the |z|^-2 coefficient is bounded, so scaled errors stay O(1)
    assert np.max(scaled) < 1.0


def test_capacity_is_additive_over_driver_segments():
    p = derive_params(3.0)
    U = brownian_driver(0.4, 1e-3, 3.0, seed=11)
    half = len(U.samples) // 2
    first = DrivingPath(U.dt, U.samples[:half + 1])
    second = DrivingPath(U.dt, U.samples[half:] - U.samples[half])
    total = hcap_estimate(U, U.horizon, p)
    parts = hcap_estimate(first, first.horizon, p) + hcap_estimate(second, second.horizon, p)
    assert total == pytest.approx(parts, rel=1e-3)


def test_derivative_is_direction_independent():
    # a holomorphic map has the same difference quotient along both axes
    p = derive_params(2.0)
    U = brownian_driver(0.2, 1e-3, 2.0, seed=5)
    z = np.array([0.7 + 0.9j, -1.1 + 0.6j])
    e = 1e-5
    dx = (chordal_flow(U, z + e, 0.2, p) - chordal_flow(U, z - e, 0.2, p)) / (2 * e)
    dy = (chordal_flow(U, z + 1j * e, 0.2, p) - chordal_flow(U, z - 1j * e, 0.2, p)) / (2j * e)
    assert np.max(np.abs(dx - dy)) < 1e-6


def test_swallowing_is_reported():
    p = derive_params(2.0)
    U = zero_driver(0.5, 1e-3)
    with pytest.raises(SwallowedError) as err:
        chordal_flow(U, np.array([0.05j]), 0.5, p)
    assert 0 <= err.value.time < 0.5


def test_chordal_rejects_lower_half_plane():
    p = derive_params(2.0)
    with pytest.raises(DomainError):
        chordal_flow(zero_driver(0.1, 1e-2), np.array([1 - 1j]), 0.1, p)


def test_driving_path_validation():
    with pytest.raises(DomainError):
        DrivingPath(0.0, np.zeros(3))
    with pytest.raises(DomainError):
        DrivingPath(0.1, np.array([0.0, np.nan]))
    with pytest.raises(DomainError):
        chordal_flow(zero_driver(0.1, 0.01), Z, 0.2, derive_params(2.0))


# ---------------------------------------------------------------- radial

def test_radial_identity_at_zero_time():
    p = derive_params(3.0)
    assert np.array_equal(radial_flow(zero_driver(0.1, 0.01), Z, 0.0, p), Z)


@pytest.mark.parametrize("driver", ["zero", "bm"])
def test_radial_derivative_at_origin(driver):
    p = derive_params(2.0)
    U = zero_driver(0.1, 1e-3) if driver == "zero" else brownian_driver(0.1, 1e-3, 2.0, seed=3)
    assert abs(disk_derivative_at_origin(U, 0.1, p) - np.exp(p.a * 0.1 / 2)) < 1e-6


def test_radial_close_to_chordal_for_small_time():
    # h - g = a t (cot(z/2)/2 - 1/z) + O(t^2)
    p = derive_params(3.0)
    errs = []
    for t in (0.01, 0.005, 0.0025):
        h = radial_flow(zero_driver(t, t / 50), Z[:4], t, p)
        g = upper_sqrt(Z[:4] ** 2 + 2 * p.a * t)
        first = p.a * t * (0.5 / np.tan(Z[:4] / 2) - 1 / Z[:4])
        errs.append(np.max(np.abs(h - g - first)))
    assert errs[0] < 1e-5
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_radial_preserves_period():
    p = derive_params(4.0)
    U = brownian_driver(0.1, 1e-3, 4.0, seed=2)
    z = np.array([0.4 + 0.7j, 1.9 + 0.3j])
    h0 = radial_flow(U, z, 0.1, p)
    h1 = radial_flow(U, z + 2 * np.pi, 0.1, p)
    assert np.max(np.abs(h1 - h0 - 2 * np.pi)) < 1e-10


# ---------------------------------------------------------------- annulus

def test_annulus_identity_at_zero():
    U = zero_driver(0.1, 0.01, "annulus")
    assert np.array_equal(annulus_flow(U, 1.0, Z, 0.0), Z)


def test_annulus_rejects_bad_time():
    U = zero_driver(2.0, 0.01, "annulus")
    with pytest.raises(DomainError):
        annulus_flow(U, 1.0, Z, 1.0)


def test_annulus_close_to_chordal_for_small_time():
    # annulus time s = a t / 2 matches chordal capacity; first-order gap a t (-H_r(z) - 1/z)
    p = derive_params(3.0)
    r0 = 1.0
    errs = []
    for t in (0.01, 0.005, 0.0025):
        s = p.a * t / 2
        h = annulus_flow(zero_driver(s, s / 50, "annulus"), r0, Z[:4], s)
        g = upper_sqrt(Z[:4] ** 2 + 2 * p.a * t)
        first = p.a * t * (-complex_kernel(r0, Z[:4]) - 1 / Z[:4])
        errs.append(np.max(np.abs(h - g - first)))
    assert errs[0] < 5e-5
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_annulus_preserves_period():
    U = DrivingPath(0.01, 0.3 * np.sin(np.arange(31) * 0.1), "annulus")
    z = np.array([0.5 + 0.6j, 2.0 + 1.2j])
    h0 = annulus_flow(U, 1.5, z, 0.3)
    h1 = annulus_flow(U, 1.5, z + 2 * np.pi, 0.3)
    assert np.max(np.abs(h1 - h0 - 2 * np.pi)) < 1e-10


def test_top_edge_log_derivative_rate():
    x = np.array([0.3, 1.0, 2.5])
    target = -eval_H_I_prime(1.0, x)
    errs = [np.max(np.abs(top_log_derivative_rate(1.0, x, s) - target)) for s in (0.02, 0.01, 0.005)]
    assert errs[-1] < 0.02
    # first-order convergence in s
    assert 1.6 < errs[0] / errs[1] < 2.6 and 1.6 < errs[1] / errs[2] < 2.6


# ---------------------------------------------------------------- modulus rate

@pytest.mark.parametrize("kappa, rate", [(2.0, -0.5), (4.0, -0.25)])
def test_r_dot_of_vertical_slit(kappa, rate):
    p = derive_params(kappa)
    curve = vertical_slit_curve(p, 1e-3, 8)
    assert measure_r_dot(p, curve, 1.0) == pytest.approx(rate, abs=1e-3)


def test_r_dot_independent_of_initial_modulus():
    p = derive_params(3.0)
    curve = vertical_slit_curve(p, 1e-3, 8)
    assert abs(measure_r_dot(p, curve, 1.0) - measure_r_dot(p, curve, 2.0)) < 1e-3


# ---------------------------------------------------------------- curves and the zipper

def test_vertical_slit_extracts_zero_driver():
    p = derive_params(2.0)
    U = extract_driving(vertical_slit_curve(p, 0.5, 200), p)
    assert np.max(np.abs(U.samples)) < 1e-12
    assert U.horizon == pytest.approx(0.5, rel=1e-12)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_driver_round_trip(seed):
    p = derive_params(2.0)
    dt = 1e-3
    U = brownian_driver(0.2, dt, 2.0, seed)
    curve = curve_from_driving(U, p)
    assert abs(curve.points[0].imag) == 0.0
    back = extract_driving(curve, p)
    t = U.dt * np.arange(len(U.samples))
    keep = t <= back.horizon
    # the zipper inverts the slit composition step by step
    assert np.max(np.abs(back.at(t[keep]) - U.samples[keep])) < 1e-10 * np.sqrt(dt) / dt


@pytest.mark.parametrize("q, sign", [(0.4, 1), (0.6, -1)])
def test_tilted_slit_driver_sign(q, sign):
    p = derive_params(2.0)
    h = np.linspace(0, 1, 401)
    U = extract_driving(CurveTrace(h * np.exp(1j * np.pi * q), h), p)
    t = U.dt * np.arange(len(U.samples))
    ratio = U.samples[1:] / np.sqrt(t[1:])
    assert np.sign(ratio[-1]) == sign
    # driver scales like sqrt(t)
    assert np.ptp(ratio[len(ratio) // 4:]) < 0.01 * abs(ratio[-1])


def test_non_simple_curve_rejected():
    p = derive_params(2.0)
    pts = np.array([0, 1j, 1 + 1j, 1 + 0.5j, -0.5 + 1.5j])
    with pytest.raises(NonSimpleCurveError):
        check_simple(CurveTrace(pts, np.arange(5.0)))
    with pytest.raises(NonSimpleCurveError):
        extract_driving(CurveTrace(pts, np.arange(5.0)), p)


def test_curve_must_start_on_real_line():
    with pytest.raises(NonSimpleCurveError):
        check_simple(CurveTrace(np.array([0.5j, 1j]), np.arange(2.0)))
    with pytest.raises(NonSimpleCurveError):
        check_simple(CurveTrace(np.array([0, 1j, 2 - 0.1j]), np.arange(3.0)))
