"""Euler-Maruyama simulation of the one-dimensional driving diffusions.

Three kinds are supported, all with diffusion coefficient sqrt(kappa):

* ``locally_chordal``: drift H_I(r-t, x) - b kappa L(r-t, x)
* ``tilde_chordal``:   drift 2 H~_I(r-t, x) - b kappa L~(r-t, x), absorbed at 0
* ``hi_drift``:        drift H_I(r-t, x)

The L term of the locally chordal drift becomes stiff as t -> r (its slope at
0 is of order 1/(r-t)^2), so once a step would be unstable explicitly that term
is taken implicitly; the rest of the scheme stays explicit.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .core_types import DomainError, SleParams, derive_params
from .rng import derive_key, normal_pair
from .special_functions import (
    TWO_PI, a_fast, at_fast, hi_fast, hit_fast, l_fast, lt_fast,
)

KINDS = {"locally_chordal": 0, "tilde_chordal": 1, "hi_drift": 2}
BLOCK = 256
FAST_S = 1.2


@dataclass(frozen=True)
class SdeSpec:
    kind: str
    r: float
    kappa: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown SDE kind {self.kind!r}")
        if not self.r > 0:
            raise DomainError("r must be positive")
        derive_params(self.kappa)

    @property
    def params(self) -> SleParams:
        return derive_params(self.kappa)


@dataclass(frozen=True)
class SdePath:
    dt: float
    x0: float
    samples: np.ndarray
    stopped_at: float | None = None

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.samples))


def n_steps_for(r: float, dt: float) -> int:
    """Number of Euler steps; the last sample sits at time r - dt."""
    return int(round(r / dt)) - 1


# ---------------------------------------------------------------- compiled core

@njit(cache=True)
def _implicit_l(z, c, k):
    """Solve y + c tanh(k y) = z; the root has the sign of z and |y| <= |z|."""
    if z == 0.0:
        return 0.0
    sg = 1.0 if z > 0 else -1.0
    zz = abs(z)
    lo, hi = 0.0, zz
    y = zz / (1.0 + c * k)
    for _ in range(60):
        th = math.tanh(k * y)
        g = y + c * th - zz
        if g == 0.0:
            break
        if g > 0:
            hi = y
        else:
            lo = y
        dg = 1.0 + c * k * (1.0 - th * th)
        ynew = y - g / dg
        if not (lo <= ynew <= hi):
            ynew = 0.5 * (lo + hi)
        if abs(ynew - y) <= 4e-16 * zz + 1e-300:
            y = ynew
            break
        y = ynew
    return sg * y


@njit(cache=True)
def _step_table(r, dt, n, bk):
    """Per-step constants shared by every path.

    Columns: s, a = pi/2s, e1 = e^{-4 pi a}, fast-path flag, 1/s, pi^2/(s(1 - e1))^2,
    and the coefficients (c, k) of the implicit L solve (c = 0 while explicit is stable).
    """
    tab = np.empty((n, 8))
    for j in range(n):
        s = r - j * dt
        a = math.pi / (2.0 * s)
        e1 = math.exp(-4.0 * math.pi * a)
        tab[j, 0] = s
        tab[j, 1] = a
        tab[j, 2] = e1
        # beyond s = FAST_S the k = +-2 translates are no longer negligible
        tab[j, 3] = 1.0 if s <= FAST_S else 0.0
        tab[j, 4] = 1.0 / s
        tab[j, 5] = (math.pi / (s * (1.0 - e1))) ** 2
        s1 = s - dt
        # explicit L is stable while dt times the slope of b kappa L stays small
        if dt * bk * math.pi * math.pi / (2.0 * s1 * s1) < 0.25:
            tab[j, 6] = 0.0
        else:
            tab[j, 6] = dt * bk * math.pi / s1
        tab[j, 7] = math.pi / (2.0 * s1)
    return tab


@njit(cache=True, inline="always")
def _fast_terms(a, e1, inv_s, apre, u, want_a):
    """H_I(s, u), L(s, u) and A(s, u) for 0 <= u <= pi from the k = 0, +-1 terms.

    With E = e^{-2au} every tanh and cosh ratio is rational in E and e1, so one
    exponential and one division serve all three functions.
    """
    E = math.exp(-2.0 * a * u)
    p = 1.0 + E
    m = 1.0 + e1 * E
    w = E + e1
    if w > 1e-300:
        inv = 1.0 / (p * m * w)
        t0 = (1.0 - E) * m * w * inv
        t1 = (1.0 - e1 * E) * p * w * inv
        t2 = (E - e1) * p * m * inv
    else:
        # s so small that all three ratios are 1 and A vanishes in double precision
        inv = 0.0
        t0 = 1.0
        t1 = 1.0
        t2 = 1.0
    ps = math.pi * inv_s
    h = ps * (t0 + t1 - t2) - u * inv_s
    lv = ps * t0
    av = 0.0
    if want_a and inv > 0.0:
        ei = e1 * inv
        g1 = ei * p * m
        g2 = ei * p * w
        av = apre * p * p * (g1 * g1 + g2 * g2)
    return h, lv, av


@njit(cache=True, nogil=True)
def _run_path(kind, r, kappa, b, dt, n, x0, seed, path, sgn, record, out, with_functional, tab,
              noise):
    """Simulate one path; returns (end value, W, stop time or -1, escapes).

    W = 2b int A(r - s, X_s) ds by a left Riemann sum, so the functional is exp(-W).
    """
    sk = math.sqrt(kappa)
    sdt = math.sqrt(dt)
    ssd = sk * sdt
    bk = b * kappa
    want_a = with_functional and kind == 0
    x = x0
    w = 0.0
    escapes = 0
    spare = 0.0
    if record:
        out[0] = x
    for j in range(n):
        if len(noise) > 0:
            xi = noise[j]
        elif j % 2 == 0:
            xi, spare = normal_pair(seed, path, j // 2, 0)
        else:
            xi = spare
        s = tab[j, 0]
        if kind != 1:
            xi = sgn * xi
            u = abs(x)
            if tab[j, 3] > 0.0 and u <= math.pi:
                h, lv, av = _fast_terms(tab[j, 1], tab[j, 2], tab[j, 4], tab[j, 5], u, want_a)
                if x < 0.0:
                    h = -h
                    lv = -lv
            else:
                h = hi_fast(s, x)
                lv = l_fast(s, x)
                av = a_fast(s, x) if want_a else 0.0
            if kind == 2:
                x = x + h * dt + ssd * xi
            else:
                if with_functional:
                    w += 2.0 * b * av * dt
                c = tab[j, 6]
                if c == 0.0:
                    x = x + (h - bk * lv) * dt + ssd * xi
                else:
                    x = _implicit_l(x + h * dt + ssd * xi, c, tab[j, 7])
        else:
            thresh = 10.0 * sk * sdt
            m = 16 if (x < thresh or TWO_PI - x < thresh) else 1
            hs = dt / m
            for sub in range(m):
                ss = s - sub * hs
                if with_functional:
                    w += 2.0 * b * at_fast(ss, x) * hs
                if m > 1:
                    xi, _unused = normal_pair(seed, path, j, sub + 1)
                drift = 2.0 * hit_fast(ss, x) - bk * lt_fast(ss, x)
                xn = x + drift * hs + sk * math.sqrt(hs) * xi
                if xn >= TWO_PI:
                    # overshoot across the repelling end: redo this substep finely
                    y = x
                    hh = hs / 64.0
                    for q in range(64):
                        z0, _unused = normal_pair(seed, path, j, 100 + sub * 64 + q)
                        d2 = 2.0 * hit_fast(ss - q * hh, y) - bk * lt_fast(ss - q * hh, y)
                        y = y + d2 * hh + sk * math.sqrt(hh) * z0
                        if y <= 0.0 or y >= TWO_PI:
                            break
                    if y >= TWO_PI:
                        escapes += 1
                        y = 2.0 * TWO_PI - y
                    xn = y
                x = xn
                if x <= 0.0:
                    stop = r - (ss - hs)
                    if record:
                        for q in range(j + 1, n + 1):
                            out[q] = 0.0
                    return 0.0, w, stop, escapes
        if record:
            out[j + 1] = x
    return x, w, -1.0, escapes


@njit(cache=True, nogil=True)
def _run_block(kind, r, kappa, b, dt, n, x0, seed, first, count, sgn, with_functional,
               ends, ws, stops, escapes, tab):
    dummy = np.empty(1)
    no_noise = np.empty(0)
    for i in range(count):
        e, w, st, esc = _run_path(kind, r, kappa, b, dt, n, x0, seed, first + i, sgn,
                                  False, dummy, with_functional, tab, no_noise)
        ends[first + i] = e
        ws[first + i] = w
        stops[first + i] = st
        escapes[first + i] = esc


# ---------------------------------------------------------------- public API

def _check(spec: SdeSpec, x0: float, dt: float):
    if not 0 < dt <= spec.r / 100:
        raise DomainError("dt must satisfy 0 < dt <= r/100")
    if spec.kind == "tilde_chordal" and not 0 < x0 < TWO_PI:
        raise DomainError("tilde_chordal needs x0 in (0, 2 pi)")


def simulate(spec: SdeSpec, x0: float, dt: float, seed: int, path_index: int = 0,
             negate_noise: bool = False, noise: np.ndarray | None = None) -> SdePath:
    """One Euler-Maruyama path on [0, r - dt] (frozen at 0 after absorption).

    ``noise`` supplies the standard normal increments explicitly (one per step),
    which couples runs at different step sizes; not available for tilde_chordal,
    whose substepping draws extra variates.
    """
    _check(spec, x0, dt)
    n = n_steps_for(spec.r, dt)
    if noise is None:
        noise = np.empty(0)
    else:
        if spec.kind == "tilde_chordal":
            raise DomainError("explicit noise is not supported for tilde_chordal")
        noise = np.ascontiguousarray(noise, dtype=float)
        if noise.shape != (n,):
            raise DomainError(f"noise must have one entry per step ({n})")
    out = np.empty(n + 1)
    p = spec.params
    _, _, stop, esc = _run_path(KINDS[spec.kind], spec.r, spec.kappa, p.b, dt, n, float(x0),
                                derive_key(seed), path_index, -1.0 if negate_noise else 1.0,
                                True, out, False, _step_table(spec.r, dt, n, p.b * spec.kappa), noise)
    return SdePath(dt, float(x0), out, None if stop < 0 else float(stop))


@dataclass(frozen=True)
class Ensemble:
    ends: np.ndarray
    log_weights: np.ndarray
    stops: np.ndarray
    escapes: np.ndarray

    @property
    def deficits(self) -> np.ndarray:
        """1 - exp(-W) per path, accurate even when W is tiny."""
        return -np.expm1(-self.log_weights)


def simulate_ensemble(spec: SdeSpec, x0: float, dt: float, seed: int, n_paths: int,
                      threads: int = 1, with_functional: bool = False,
                      negate_noise: bool = False) -> Ensemble:
    """Many independent paths; per-path results do not depend on ``threads``."""
    _check(spec, x0, dt)
    n = n_steps_for(spec.r, dt)
    p = spec.params
    ends = np.empty(n_paths)
    ws = np.empty(n_paths)
    stops = np.empty(n_paths)
    esc = np.empty(n_paths, dtype=np.int64)
    key = derive_key(seed)
    kind = KINDS[spec.kind]
    sgn = -1.0 if negate_noise else 1.0
    tab = _step_table(spec.r, dt, n, p.b * spec.kappa)

    def work(first):
        count = min(BLOCK, n_paths - first)
        _run_block(kind, spec.r, spec.kappa, p.b, dt, n, float(x0), key, first, count, sgn,
                   with_functional, ends, ws, stops, esc, tab)

    starts = range(0, n_paths, BLOCK)
    if threads <= 1:
        for f in starts:
            work(f)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    return Ensemble(ends, ws, stops, esc)


@njit(cache=True)
def _functional_sum(samples, r, dt, chordal, horizon_steps):
    tot = 0.0
    for j in range(horizon_steps):
        s = r - j * dt
        x = samples[j]
        if chordal:
            tot += at_fast(s, x) * dt
        else:
            tot += a_fast(s, x) * dt
    return tot


def path_functional_A(path: SdePath, r: float, p: SleParams, variant: str = "crossing",
                      potential=None) -> float:
    """exp(-2b int_0^horizon A(r - s, X_s) ds) by a left Riemann sum.

    ``variant='chordal'`` uses the chordal-case potential and stops at absorption.
    ``potential(s, x)`` replaces the potential (vectorized callable), for stubs.
    """
    m = len(path.samples) - 1
    if variant == "chordal" and path.stopped_at is not None:
        m = min(m, int(math.ceil(path.stopped_at / path.dt - 1e-9)))
    if m <= 0:
        return 1.0
    if potential is not None:
        s = r - path.dt * np.arange(m)
        integral = float(np.sum(potential(s, path.samples[:m])) * path.dt)
    else:
        integral = _functional_sum(np.ascontiguousarray(path.samples, dtype=float), float(r),
                                   float(path.dt), variant == "chordal", m)
    return math.exp(-2.0 * p.b * integral)
