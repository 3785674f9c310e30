"""Chordal, radial and annulus Loewner flows, curve generation and the zipper.

Chordal maps are composed exactly from vertical-slit maps, one per time step.
The radial and annulus equations are integrated with RK4; a step is split
into substeps whenever the trajectory comes close to the driving point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .core_types import DomainError, SleParams
from .special_functions import TWO_PI, complex_kernel


class SwallowedError(RuntimeError):
    def __init__(self, time: float, msg: str = ""):
        super().__init__(msg or f"point swallowed near t = {time:.6g}")
        self.time = time


class NonSimpleCurveError(ValueError):
    pass


@dataclass(frozen=True)
class DrivingPath:
    dt: float
    samples: np.ndarray
    parametrization: str = "hcap"

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise DomainError("driving samples must be finite")
        if self.parametrization not in ("hcap", "annulus"):
            raise DomainError("parametrization must be 'hcap' or 'annulus'")

    @property
    def n_steps(self) -> int:
        return len(self.samples) - 1

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt

    def at(self, t):
        """Piecewise-linear interpolation of the driver."""
        return np.interp(t, self.dt * np.arange(len(self.samples)), self.samples)


@dataclass(frozen=True)
class CurveTrace:
    points: np.ndarray
    times: np.ndarray


@dataclass(frozen=True)
class ConformalRadiusSchedule:
    times: np.ndarray
    r_of_t: np.ndarray


def zero_driver(t: float, dt: float, parametrization: str = "hcap") -> DrivingPath:
    n = int(round(t / dt))
    return DrivingPath(dt, np.zeros(n + 1), parametrization)


def brownian_driver(t: float, dt: float, kappa: float, seed: int) -> DrivingPath:
    """U_t = sqrt(kappa) B_t sampled on a uniform grid (Philox stream keyed by seed)."""
    n = int(round(t / dt))
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    steps = rng.standard_normal(n) * math.sqrt(kappa * dt)
    return DrivingPath(dt, np.concatenate(([0.0], np.cumsum(steps))))


def _n_steps(U: DrivingPath, t: float) -> int:
    n = int(round(t / U.dt))
    if abs(n * U.dt - t) > 1e-9 * max(1.0, t):
        raise DomainError("t must be a multiple of the driver step")
    if n > U.n_steps:
        raise DomainError("t exceeds the driver horizon")
    return n


def _upper_sqrt(w2, side):
    """Square root in the closed upper half-plane; real roots take the sign of ``side``."""
    s = np.sqrt(w2)
    flip = (s.imag < 0) | ((s.imag == 0) & (s.real * side < 0))
    return np.where(flip, -s, s)


# ---------------------------------------------------------------- chordal

def chordal_flow(U: DrivingPath, z, t: float, p: SleParams):
    """g_t(z) for the chordal equation dg/dt = a / (g - U_t).

    Over each step the driver is frozen at its right-endpoint value and the
    step is solved exactly: g -> U + sqrt((g - U)^2 + 2 a dt).
    """
    z = np.asarray(z, dtype=complex)
    if np.any(z.imag <= 0):
        raise DomainError("chordal flow needs points in the upper half-plane")
    n = _n_steps(U, t)
    g = z.copy()
    c = 2.0 * p.a * U.dt
    thresh = 10.0 * math.sqrt(p.a * U.dt)
    for j in range(n):
        u = U.samples[j + 1]
        d = g - u
        if np.any(np.abs(d) < thresh):
            raise SwallowedError(j * U.dt)
        g = u + _upper_sqrt(d * d + c, d.real)
    return g


def hcap_estimate(U: DrivingPath, t: float, p: SleParams, y: float = 1e3) -> float:
    """Half-plane capacity read off g_t(iy) - iy ~ hcap / (iy)."""
    g = chordal_flow(U, np.array([1j * y]), t, p)[0]
    return float(((g - 1j * y) * 1j * y).real)


def curve_from_driving(U: DrivingPath, p: SleParams, n: int | None = None) -> CurveTrace:
    """Tip positions gamma(t_j) = g_{t_j}^{-1}(U_{t_j}) by backward slit composition."""
    n = U.n_steps if n is None else n
    c = 2.0 * p.a * U.dt
    w = U.samples[1:n + 1].astype(complex)
    for i in range(n - 1, -1, -1):
        u = U.samples[i + 1]
        d = w[i:] - u
        w[i:] = u + _upper_sqrt(d * d - c, d.real)
    pts = np.concatenate(([complex(U.samples[0], 0.0)], w))
    return CurveTrace(pts, U.dt * np.arange(n + 1))


def _segments_cross(p1, p2, q1, q2):
    def orient(a, b, c):
        return np.sign((b.real - a.real) * (c.imag - a.imag) - (b.imag - a.imag) * (c.real - a.real))
    return ((orient(p1, p2, q1) * orient(p1, p2, q2) < 0)
            & (orient(q1, q2, p1) * orient(q1, q2, p2) < 0))


def check_simple(curve: CurveTrace, tol: float = 1e-12):
    pts = np.asarray(curve.points, dtype=complex)
    if abs(pts[0].imag) > tol:
        raise NonSimpleCurveError("curve must start on the real line")
    if np.any(pts[1:].imag <= 0):
        raise NonSimpleCurveError("curve must stay in the open upper half-plane")
    a, b = pts[:-1], pts[1:]
    m = len(a)
    for i in range(m - 2):
        hit = _segments_cross(a[i], b[i], a[i + 2:], b[i + 2:])
        if np.any(hit):
            raise NonSimpleCurveError(f"segment {i} crosses a later segment")


def extract_driving(curve: CurveTrace, p: SleParams, check: bool = True) -> DrivingPath:
    """Zipper inversion: unzip the curve one vertical slit at a time.

    Each step maps the image of the next curve point to the top of a vertical
    slit and removes it; the slit height y contributes capacity time y^2 / 2a.
    The recovered driver is resampled onto a uniform grid.
    """
    if check:
        check_simple(curve)
    pts = np.asarray(curve.points, dtype=complex)
    cur = pts[1:].copy()
    times = [0.0]
    drive = [pts[0].real]
    for j in range(len(cur)):
        w = cur[j]
        if not w.imag > 0:
            raise NonSimpleCurveError(f"curve point {j + 1} does not map into the half-plane")
        u, y = w.real, w.imag
        rest = cur[j + 1:] - u
        cur[j + 1:] = u + _upper_sqrt(rest * rest + y * y, rest.real)
        times.append(times[-1] + y * y / (2.0 * p.a))
        drive.append(u)
    times = np.asarray(times)
    drive = np.asarray(drive)
    n = len(times) - 1
    dt = times[-1] / n
    grid = dt * np.arange(n + 1)
    return DrivingPath(dt, np.interp(grid, times, drive), "hcap")


# ---------------------------------------------------------------- RK4 with pole-aware substeps

def _rk4(f, h0, t0, t1, n, scale, tol_sw, min_dist):
    """Integrate dh/dt = f(t, h) on [t0, t1] with n base steps.

    A base step is split when the distance to the singularity is small compared
    with sqrt(scale * dt); a distance below ``tol_sw`` counts as swallowing.
    """
    h = h0.copy()
    dt = (t1 - t0) / n
    t = t0
    for _ in range(n):
        d = min_dist(t, h)
        if d < tol_sw:
            raise SwallowedError(t)
        m = 1
        while m < 4096 and scale * dt / m > 0.01 * d * d:
            m *= 2
        hs = dt / m
        for _ in range(m):
            k1 = f(t, h)
            k2 = f(t + 0.5 * hs, h + 0.5 * hs * k1)
            k3 = f(t + 0.5 * hs, h + 0.5 * hs * k2)
            k4 = f(t + hs, h + hs * k3)
            h = h + (hs / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += hs
    return h


def radial_flow(U: DrivingPath, z, t: float, p: SleParams):
    """h_t(z) for dh/dt = (a/2) cot((h - U_t)/2), the covering form of radial Loewner.

    The disk map is g_t(e^{iz}) = e^{i h_t(z)}, with g_t'(0) = e^{a t / 2}.
    """
    z = np.asarray(z, dtype=complex)
    n = _n_steps(U, t)
    if n == 0:
        return z.copy()

    def f(s, h):
        w = 0.5 * (h - U.at(s))
        return 0.5 * p.a * np.cos(w) / np.sin(w)

    def dist(s, h):
        d = h - U.at(s)
        d = d.real - TWO_PI * np.round(d.real / TWO_PI) + 1j * d.imag
        return float(np.min(np.abs(d)))

    return _rk4(f, z, 0.0, n * U.dt, n, p.a, 10.0 * math.sqrt(p.a * U.dt), dist)


def disk_derivative_at_origin(U: DrivingPath, t: float, p: SleParams, y: float = 30.0) -> float:
    """|g_t'(0)| from the image of e^{-y} under the disk map."""
    h = radial_flow(U, np.array([1j * y]), t, p)[0]
    return float(abs(np.exp(1j * (h - 1j * y))))


def _fold(d):
    return d.real - TWO_PI * np.round(d.real / TWO_PI) + 1j * d.imag


def annulus_flow(Ustar: DrivingPath, r0: float, z, s: float, n: int | None = None):
    """h*_{r0 - s}(z) for d h*_r / dr = 2 H_r(h*_r - U*_r), integrated downward in r.

    ``Ustar.samples[j]`` is the driver at annulus time j*dt, i.e. at r = r0 - j*dt.
    """
    if not 0 <= s < r0:
        raise DomainError("need 0 <= s < r0")
    z = np.asarray(z, dtype=complex)
    if s == 0:
        return z.copy()
    n = n or max(1, int(round(s / Ustar.dt)))

    def f(sig, h):
        return -2.0 * complex_kernel(r0 - sig, _fold(h - Ustar.at(sig)))

    def dist(sig, h):
        return float(np.min(np.abs(_fold(h - Ustar.at(sig)))))

    return _rk4(f, z, 0.0, s, n, 2.0, 1e-9, dist)


def _const_flow(u: float, rho: float, z, sigma: float, n: int):
    """Annulus flow over annulus time sigma from radius rho with a constant driver."""
    def f(sig, h):
        return -2.0 * complex_kernel(rho - sig, _fold(h - u))

    def dist(sig, h):
        return float(np.min(np.abs(_fold(h - u)))) if len(h) else np.inf

    return _rk4(f, z, 0.0, sigma, n, 2.0, 1e-12, dist)


def annulus_slit_height(rho: float, sigma: float, n: int = 64) -> float:
    """Height of the vertical slit produced by a constant driver over annulus time sigma.

    With v = y^2 the backward flow reads dv/du = 4 y Im H_{rho - sigma + u}(iy),
    which is regular at v = 0 because H_r(iy) ~ i/y.
    """
    if sigma <= 0:
        return 0.0

    def g(u, v):
        y = math.sqrt(max(v, 0.0))
        if y == 0.0:
            return 4.0
        return 4.0 * y * complex_kernel(rho - sigma + u, np.array([1j * y]))[0].imag

    v, hs = 0.0, sigma / n
    for i in range(n):
        u = i * hs
        k1 = g(u, v)
        k2 = g(u + 0.5 * hs, v + 0.5 * hs * k1)
        k3 = g(u + 0.5 * hs, v + 0.5 * hs * k2)
        k4 = g(u + hs, v + hs * k3)
        v += (hs / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return math.sqrt(v)


def annulus_zipper(curve: CurveTrace, r0: float, n_flow: int = 32) -> ConformalRadiusSchedule:
    """Modulus r(t) of the annulus slit by an initial piece of the curve.

    Curve points live in the covering strip {0 < Im z < r0}.  Each step finds
    the annulus time sigma whose constant-driver slit reaches the current image
    point, then pushes the remaining points through that flow.
    """
    pts = np.asarray(curve.points, dtype=complex)
    cur = pts[1:].copy()
    rho = r0
    rs = [r0]
    for j in range(len(cur)):
        w = cur[j]
        u, y = w.real, w.imag
        if not 0 < y < rho:
            raise NonSimpleCurveError("curve point left the strip")
        sigma = optimize.brentq(lambda sg: annulus_slit_height(rho, sg) - y,
                                0.0, min(0.999 * rho, 2.0 * y * y + 1e-3), xtol=1e-15, rtol=1e-15)
        if j + 1 < len(cur):
            cur[j + 1:] = _const_flow(u, rho, cur[j + 1:], sigma, n_flow)
        rho -= sigma
        rs.append(rho)
    return ConformalRadiusSchedule(np.asarray(curve.times, dtype=float), np.asarray(rs))


def vertical_slit_curve(p: SleParams, t_max: float, n: int) -> CurveTrace:
    """i [0, h(t)] with hcap h^2/2 = a t, sampled at t_j = j t_max / n."""
    times = t_max * np.arange(n + 1) / n
    return CurveTrace(1j * np.sqrt(2.0 * p.a * times), times)


def measure_r_dot(p: SleParams, test_curve: CurveTrace, r0: float = 1.0, n_fit: int = 4) -> float:
    """Estimate r'(0) from r(t) on the first few curve times by a polynomial fit through (0, r0)."""
    sched = annulus_zipper(CurveTrace(test_curve.points[:n_fit + 1], test_curve.times[:n_fit + 1]), r0)
    t = sched.times[1:]
    dr = sched.r_of_t[1:] - r0
    # dr/t = rdot + c t + ..., fitted exactly through n_fit points
    coef = np.polyfit(t, dr / t, n_fit - 1)
    return float(coef[-1])


def top_log_derivative_rate(r0: float, x, s: float, n: int = 8, eps: float = 1e-5) -> np.ndarray:
    """-(1/s) log |(h*_{r0-s})'(x + i r0)| for the zero driver.

    Points on the top edge stay on the top edge, so the derivative is read off
    a centred difference along it.  As s -> 0 this tends to -H_I'(r0, x) with
    an O(s) error.
    """
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    U = zero_driver(s, s / n, "annulus")
    z = np.concatenate((xs - eps, xs + eps)) + 1j * r0
    h = annulus_flow(U, r0, z, s, n)
    m = len(xs)
    d = (h[m:] - h[:m]) / (2.0 * eps)
    return np.log(np.abs(d)) / (-s)
