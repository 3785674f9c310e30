import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from annulus_sle.core_types import DomainError, derive_params
from annulus_sle.sde import (
    SdePath, SdeSpec, n_steps_for, path_functional_A, simulate, simulate_ensemble,
)
from annulus_sle.special_functions import eval_A


def test_spec_validation():
    with pytest.raises(DomainError):
        SdeSpec("bogus", 1.0, 2.0)
    with pytest.raises(DomainError):
        SdeSpec("hi_drift", 0.0, 2.0)
    with pytest.raises(DomainError):
        SdeSpec("hi_drift", 1.0, 5.0)


def test_coarse_dt_rejected():
    with pytest.raises(DomainError):
        simulate(SdeSpec("locally_chordal", 1.0, 3.0), 0.1, 0.02, seed=1)


def test_tilde_start_must_be_inside():
    with pytest.raises(DomainError):
        simulate(SdeSpec("tilde_chordal", 1.0, 3.0), 0.0, 1e-3, seed=1)
    with pytest.raises(DomainError):
        simulate(SdeSpec("tilde_chordal", 1.0, 3.0), 2 * math.pi, 1e-3, seed=1)


def test_path_length_and_horizon():
    path = simulate(SdeSpec("hi_drift", 1.0, 2.0), 0.2, 1e-3, seed=3)
    assert len(path.samples) == n_steps_for(1.0, 1e-3) + 1
    assert path.times[-1] == pytest.approx(1.0 - 1e-3)
    assert (len(path.samples) - 1) * path.dt <= 1.0
    assert path.samples[0] == 0.2
    assert path.stopped_at is None


def test_same_seed_same_path():
    spec = SdeSpec("locally_chordal", 1.0, 3.0)
    a = simulate(spec, 0.5, 1e-3, seed=42, path_index=7)
    b = simulate(spec, 0.5, 1e-3, seed=42, path_index=7)
    c = simulate(spec, 0.5, 1e-3, seed=42, path_index=8)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_ensemble_matches_single_paths():
    spec = SdeSpec("locally_chordal", 1.0, 3.0)
    ens = simulate_ensemble(spec, 0.5, 1e-3, seed=5, n_paths=300)
    for i in (0, 255, 256, 299):
        assert ens.ends[i] == simulate(spec, 0.5, 1e-3, seed=5, path_index=i).samples[-1]


@pytest.mark.parametrize("threads", [2, 8])
def test_ensemble_independent_of_threads(threads):
    spec = SdeSpec("locally_chordal", 1.0, 3.0)
    one = simulate_ensemble(spec, 0.5, 1e-3, seed=5, n_paths=700, with_functional=True)
    many = simulate_ensemble(spec, 0.5, 1e-3, seed=5, n_paths=700, threads=threads,
                             with_functional=True)
    assert np.array_equal(one.ends, many.ends)
    assert np.array_equal(one.log_weights, many.log_weights)


@settings(max_examples=15)
@given(kind=st.sampled_from(["locally_chordal", "hi_drift"]), kappa=st.floats(1.0, 4.0),
       x0=st.floats(-3.0, 3.0), seed=st.integers(0, 2**40))
def test_odd_drift_sign_symmetry(kind, kappa, x0, seed):
    spec = SdeSpec(kind, 1.0, kappa)
    up = simulate(spec, x0, 1e-3, seed)
    down = simulate(spec, -x0, 1e-3, seed, negate_noise=True)
    assert np.array_equal(up.samples, -down.samples)


@settings(max_examples=10)
@given(x0=st.floats(-3.0, 3.0), seed=st.integers(0, 2**40))
def test_hi_drift_period_shift(x0, seed):
    spec = SdeSpec("hi_drift", 1.0, 3.0)
    a = simulate(spec, x0, 1e-3, seed)
    b = simulate(spec, x0 + 2 * math.pi, 1e-3, seed)
    assert np.max(np.abs(b.samples - a.samples - 2 * math.pi)) < 1e-9


def test_mean_at_half_time_vanishes():
    # odd drift and symmetric start make X_{r/2} centred
    spec = SdeSpec("locally_chordal", 1.0, 4.0)
    mid = np.array([simulate(spec, 0.0, 1e-3, 3, i).samples[500] for i in range(10_000)])
    se = mid.std(ddof=1) / math.sqrt(len(mid))
    assert abs(mid.mean()) < 3 * se


def test_locally_chordal_ends_near_origin():
    ens = simulate_ensemble(SdeSpec("locally_chordal", 1.0, 3.0), 0.5, 1e-4, seed=11, n_paths=2000)
    assert np.mean(np.abs(ens.ends) < 0.1) >= 0.99


def test_tilde_chordal_absorbed_inside_interval():
    ens = simulate_ensemble(SdeSpec("tilde_chordal", 2.0, 3.0), 1.0, 1e-4, seed=13, n_paths=10_000)
    assert np.all(ens.stops >= 0) and np.all(ens.stops < 2.0)
    assert ens.escapes.sum() == 0


def test_tilde_chordal_path_frozen_after_absorption():
    spec = SdeSpec("tilde_chordal", 2.0, 3.0)
    for i in range(20):
        path = simulate(spec, 1.0, 1e-3, seed=17, path_index=i)
        assert path.stopped_at is not None and 0 < path.stopped_at < 2.0
        k = int(math.ceil(path.stopped_at / path.dt - 1e-9))
        assert np.all(path.samples[k:] == 0.0)
        assert np.all((path.samples >= 0) & (path.samples < 2 * math.pi))


@pytest.mark.parametrize("kind", ["hi_drift", "locally_chordal"])
def test_strong_order_one(kind):
    # additive noise: Euler-Maruyama converges strongly at order one
    spec = SdeSpec(kind, 2.0, 3.0)
    rng = np.random.default_rng(1)
    fine = 8
    errs = np.zeros(4)
    for _ in range(20):
        xi = rng.standard_normal(int(round(2.0 / (0.02 / 2**fine))))

        def at_one(k):
            m = 2 ** (fine - k)
            dt = 0.02 / 2**k
            z = xi.reshape(-1, m).sum(axis=1) / math.sqrt(m)
            path = simulate(spec, 0.7, dt, 0, noise=z[:n_steps_for(2.0, dt)])
            return path.samples[int(round(1.0 / dt))]

        ref = at_one(fine)
        errs += np.abs([at_one(k) - ref for k in range(4)])
    rates = np.log2(errs[:-1] / errs[1:])
    assert np.all(rates > 0.7) and np.all(rates < 1.4)


def test_explicit_noise_validation():
    spec = SdeSpec("hi_drift", 1.0, 3.0)
    with pytest.raises(DomainError):
        simulate(spec, 0.0, 1e-2, 0, noise=np.zeros(5))
    with pytest.raises(DomainError):
        simulate(SdeSpec("tilde_chordal", 1.0, 3.0), 1.0, 1e-2, 0, noise=np.zeros(99))


def test_zero_noise_hi_drift_is_deterministic_ode():
    spec = SdeSpec("hi_drift", 1.0, 3.0)
    path = simulate(spec, 0.0, 1e-2, 0, noise=np.zeros(99))
    assert np.all(path.samples == 0.0)


# ---------------------------------------------------------------- path functional

def test_functional_of_empty_path_is_one():
    p = derive_params(3.0)
    assert path_functional_A(SdePath(1e-3, 0.0, np.array([0.0])), 1.0, p) == 1.0


def test_functional_constant_stub():
    p = derive_params(3.0)
    path = simulate(SdeSpec("locally_chordal", 1.0, 3.0), 0.3, 1e-3, seed=2)
    a0 = 0.37
    val = path_functional_A(path, 1.0, p, potential=lambda s, x: np.full_like(x, a0))
    horizon = (len(path.samples) - 1) * path.dt
    assert val == pytest.approx(math.exp(-2 * p.b * a0 * horizon), rel=1e-12)


def test_functional_near_one_when_potential_negligible():
    # for small r the potential decays like exp(-(2 pi / r)(pi - |x|)); A is
    # nondecreasing in |x| on [0, pi], so A(s, max|X|) bounds the integrand
    p = derive_params(3.0)
    r = 0.2
    path = simulate(SdeSpec("locally_chordal", r, 3.0), 0.0, 1e-3, seed=1)
    top = float(np.max(np.abs(path.samples)))
    assert top < 2.0
    s = r - path.dt * np.arange(len(path.samples) - 1)
    integral = sum(float(eval_A(si, top)) for si in s) * path.dt
    lower = math.exp(-2 * p.b * integral)
    val = path_functional_A(path, r, p)
    assert lower <= val <= 1.0
    assert 1.0 - lower < 1e-9


def test_functional_matches_ensemble_weights():
    spec = SdeSpec("locally_chordal", 1.0, 3.0)
    ens = simulate_ensemble(spec, 0.5, 1e-3, seed=8, n_paths=5, with_functional=True)
    for i in range(5):
        path = simulate(spec, 0.5, 1e-3, seed=8, path_index=i)
        v = path_functional_A(path, 1.0, spec.params)
        assert v == pytest.approx(math.exp(-ens.log_weights[i]), rel=1e-12)


def test_chordal_functional_stops_at_absorption():
    spec = SdeSpec("tilde_chordal", 2.0, 3.0)
    path = simulate(spec, 1.0, 1e-3, seed=4)
    p = spec.params
    k = int(math.ceil(path.stopped_at / path.dt - 1e-9))
    cut = SdePath(path.dt, path.x0, path.samples[:k + 1])
    assert path_functional_A(path, 2.0, p, "chordal") == path_functional_A(cut, 2.0, p, "chordal")
    assert 0 < path_functional_A(path, 2.0, p, "chordal") <= 1.0
