"""Strip and annulus kernels with certified truncation of their lattice sums.

Every sum over the translates x + 2 pi k decays geometrically.  Instead of an
empirical ratio test each kernel carries an explicit majorant for the omitted
terms (from cosh v >= e^|v|/2 and 1 - tanh v <= 2 e^{-2v}), and the loop stops
once that majorant is below the requested absolute tolerance.

The scalar ``_*_kernel`` functions are compiled with numba and are shared
with the SDE and PDE code, which evaluates them in tight loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import integrate

from .core_types import DomainError, SleParams

PI = math.pi
TWO_PI = 2.0 * math.pi
LN2 = math.log(2.0)

DEFAULT_TOL = 1e-12
DEFAULT_MAX_TERMS = 10**6
# tolerance used by the compiled kernels inside SDE/PDE loops
KERNEL_TOL = 1e-17


class TruncationError(RuntimeError):
    """A lattice sum hit max_terms before its tail bound reached abs_tol."""


class PoleError(DomainError):
    """Evaluation requested at a pole of a kernel."""


@dataclass(frozen=True)
class SumTruncation:
    abs_tol: float = DEFAULT_TOL
    max_terms: int = DEFAULT_MAX_TERMS
    achieved_tail_bound: float = math.nan

    def ok(self) -> bool:
        return self.achieved_tail_bound <= self.abs_tol


@dataclass(frozen=True)
class KernelValue:
    re: float
    im: float

    def __complex__(self):
        return complex(self.re, self.im)


# ---------------------------------------------------------------- helpers

@njit(cache=True)
def _reduce_abs(x):
    # |x| folded into [0, pi] using 2 pi periodicity and evenness
    u = abs(x)
    u = u - TWO_PI * math.floor(u / TWO_PI + 0.5)
    return abs(u)


@njit(cache=True)
def _sign(x):
    if x > 0.0:
        return 1.0
    if x < 0.0:
        return -1.0
    return 0.0


@njit(cache=True)
def _sech2(v):
    e = math.exp(-2.0 * abs(v))
    return 4.0 * e / ((1.0 + e) * (1.0 + e))


@njit(cache=True)
def _logcosh(v):
    v = abs(v)
    return v + math.log1p(math.exp(-2.0 * v)) - LN2


@njit(cache=True)
def _logsinh(v):
    # v > 0
    return v + math.log1p(-math.exp(-2.0 * v)) - LN2


# ---------------------------------------------------------------- J and H_I

@njit(cache=True)
def _j_kernel(s, x, tol, max_terms):
    """Return (J(s, x), tail bound, status); status 0 ok, 1 max_terms hit."""
    u = _reduce_abs(x)
    a = PI / (2.0 * s)
    pref = PI * PI / (2.0 * s * s)
    q = math.exp(-4.0 * PI * a)
    tot = _sech2(a * u)
    k = 1
    bound = 0.0
    while True:
        tot += _sech2(a * (u + TWO_PI * k)) + _sech2(a * (TWO_PI * k - u))
        bound = pref * 8.0 * math.exp(-2.0 * a * PI * (2 * k + 1)) / (1.0 - q)
        if bound <= tol:
            return pref * tot, bound, 0
        k += 1
        if k > max_terms:
            return pref * tot, bound, 1


@njit(cache=True)
def _hi_kernel(s, x, tol, max_terms):
    """Closed-form H_I from term-wise tanh antiderivatives: (value, bound, status)."""
    sg = _sign(x)
    u = _reduce_abs(x)
    # keep the sign of the folded coordinate
    w = abs(x)
    w = w - TWO_PI * math.floor(w / TWO_PI + 0.5)
    if w < 0.0:
        sg = -sg
    a = PI / (2.0 * s)
    pref = PI / s
    q = math.exp(-4.0 * PI * a)
    tot = math.tanh(a * u)
    k = 1
    bound = 0.0
    while True:
        tot += math.tanh(a * (u + TWO_PI * k)) - math.tanh(a * (TWO_PI * k - u))
        bound = pref * 4.0 * math.exp(-2.0 * a * PI * (2 * k + 1)) / (1.0 - q)
        if bound <= tol or k >= max_terms:
            break
        k += 1
    status = 0 if bound <= tol else 1
    return sg * (pref * tot - u / s), bound, status


@njit(cache=True)
def hi_fast(s, x):
    return _hi_kernel(s, x, KERNEL_TOL, 100000)[0]


@njit(cache=True)
def j_fast(s, x):
    return _j_kernel(s, x, KERNEL_TOL, 100000)[0]


@njit(cache=True)
def l_fast(s, x):
    return _sign(x) * (PI / s) * math.tanh(PI * abs(x) / (2.0 * s))


# ---------------------------------------------------------------- A

@njit(cache=True)
def _a_kernel(s, x, tol, max_terms):
    w = abs(x)
    a = PI / (2.0 * s)
    pref = PI * PI / (4.0 * s * s)
    lcw = 2.0 * _logcosh(a * w)
    g = (1.0 - math.exp(-4.0 * PI * a)) ** 2
    r8 = 1.0 - math.exp(-8.0 * PI * a)
    tot = 0.0
    # k < 0: translates moving away from w
    k = 1
    bound_neg = 0.0
    while True:
        tot += math.exp(lcw - 2.0 * _logsinh(TWO_PI * k * a) - 2.0 * _logcosh(a * (w + TWO_PI * k)))
        bound_neg = pref * 16.0 * math.exp(-8.0 * PI * a * (k + 1)) / (g * r8)
        if bound_neg <= 0.5 * tol or k >= max_terms:
            break
        k += 1
    status = 0 if bound_neg <= 0.5 * tol else 1
    # k > 0: terms stay O(1) while 2 pi k < w, then decay geometrically
    k = 1
    bound_pos = 0.0
    while True:
        tot += math.exp(lcw - 2.0 * _logsinh(TWO_PI * k * a) - 2.0 * _logcosh(a * (w - TWO_PI * k)))
        if TWO_PI * k >= w:
            bound_pos = pref * 16.0 * math.exp(4.0 * a * w - 8.0 * PI * a * (k + 1)) / (g * r8)
            if bound_pos <= 0.5 * tol:
                break
        if k >= max_terms:
            status = 1
            break
        k += 1
    return pref * tot, bound_neg + bound_pos, status


@njit(cache=True)
def a_fast(s, x):
    return _a_kernel(s, x, KERNEL_TOL, 100000)[0]


# ---------------------------------------------------------------- chordal-case variants

@njit(cache=True)
def _hit_kernel(s, x, tol, max_terms):
    """Tilde H_I on (0, 2 pi) with the translates x +- 2 pi k summed symmetrically."""
    a = PI / (2.0 * s)
    pref = PI / (2.0 * s)
    tot = 1.0 / math.tanh(a * x)
    q4 = 1.0 - math.exp(-4.0 * PI * a)
    k = 1
    bound = 0.0
    while True:
        tot += 1.0 / math.tanh(a * (x + TWO_PI * k)) + 1.0 / math.tanh(a * (x - TWO_PI * k))
        v = 2.0 * a * (TWO_PI * (k + 1) - x)
        bound = pref * 2.0 * math.exp(-v) / (q4 * (1.0 - math.exp(-v)))
        if bound <= tol or k >= max_terms:
            break
        k += 1
    status = 0 if bound <= tol else 1
    return pref * tot, bound, status


@njit(cache=True)
def _at_kernel(s, x, tol, max_terms):
    a = PI / (2.0 * s)
    pref = PI * PI / (4.0 * s * s)
    lsx = 2.0 * _logsinh(a * x)
    g = (1.0 - math.exp(-4.0 * PI * a)) ** 2
    r8 = 1.0 - math.exp(-8.0 * PI * a)
    tot = 0.0
    k = 1
    bound_neg = 0.0
    while True:
        tot += math.exp(lsx - 2.0 * _logsinh(TWO_PI * k * a) - 2.0 * _logsinh(a * (x + TWO_PI * k)))
        m = (1.0 - math.exp(-2.0 * a * (x + TWO_PI * (k + 1)))) ** 2
        bound_neg = pref * 4.0 * math.exp(-8.0 * PI * a * (k + 1)) / (g * m * r8)
        if bound_neg <= 0.5 * tol or k >= max_terms:
            break
        k += 1
    status = 0 if bound_neg <= 0.5 * tol else 1
    k = 1
    bound_pos = 0.0
    while True:
        tot += math.exp(lsx - 2.0 * _logsinh(TWO_PI * k * a) - 2.0 * _logsinh(a * abs(x - TWO_PI * k)))
        if TWO_PI * k >= x:
            m = (1.0 - math.exp(-2.0 * a * (TWO_PI * (k + 1) - x))) ** 2
            bound_pos = pref * 4.0 * math.exp(4.0 * a * x - 8.0 * PI * a * (k + 1)) / (g * m * r8)
            if bound_pos <= 0.5 * tol:
                break
        if k >= max_terms:
            status = 1
            break
        k += 1
    return pref * tot, bound_neg + bound_pos, status


@njit(cache=True)
def hit_fast(s, x):
    return _hit_kernel(s, x, KERNEL_TOL, 100000)[0]


@njit(cache=True)
def at_fast(s, x):
    return _at_kernel(s, x, KERNEL_TOL, 100000)[0]


@njit(cache=True)
def lt_fast(s, x):
    return (PI / s) / math.tanh(PI * x / (2.0 * s))


# ---------------------------------------------------------------- delta

@njit(cache=True)
def _delta_kernel(r, tol, max_terms):
    v0 = PI * PI / r
    pref = PI * PI / (2.0 * r * r)
    e0 = 1.0 - math.exp(-2.0 * v0)
    tot = 0.0
    k = 1
    bound = 0.0
    while True:
        e = math.exp(-2.0 * k * v0)
        tot += 4.0 * e / ((1.0 - e) * (1.0 - e))
        bound = pref * 4.0 * math.exp(-2.0 * (k + 1) * v0) / (e0 ** 3)
        if bound <= tol or k >= max_terms:
            break
        k += 1
    status = 0 if bound <= tol else 1
    return 1.0 / 12.0 - pref * tot, bound, status


# ---------------------------------------------------------------- array drivers

@njit(cache=True)
def _map_kernel(which, s, xs, tol, max_terms):
    n = xs.shape[0]
    out = np.empty(n)
    worst = 0.0
    status = 0
    for i in range(n):
        if which == 0:
            v, bd, st = _j_kernel(s, xs[i], tol, max_terms)
        elif which == 1:
            v, bd, st = _hi_kernel(s, xs[i], tol, max_terms)
        elif which == 2:
            v, bd, st = _a_kernel(s, xs[i], tol, max_terms)
        elif which == 3:
            v, bd, st = _hit_kernel(s, xs[i], tol, max_terms)
        else:
            v, bd, st = _at_kernel(s, xs[i], tol, max_terms)
        out[i] = v
        if bd > worst:
            worst = bd
        if st != 0:
            status = st
    return out, worst, status


def _run(which, name, r, x, trunc, full):
    if not r > 0:
        raise DomainError(f"r must be positive, got {r!r}")
    trunc = trunc or SumTruncation()
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    vals, worst, status = _map_kernel(which, float(r), xs.ravel(), trunc.abs_tol, int(trunc.max_terms))
    if status != 0:
        raise TruncationError(
            f"{name}(r={r}) tail bound {worst:.3e} above {trunc.abs_tol:.1e} after {trunc.max_terms} terms")
    vals = vals.reshape(xs.shape)
    value = float(vals[0]) if np.ndim(x) == 0 else vals
    if full:
        return value, SumTruncation(trunc.abs_tol, trunc.max_terms, worst)
    return value


# ---------------------------------------------------------------- public API

def poisson_strip_boundary(r: float, x, edge: str = "top"):
    """Boundary Poisson kernel of the strip {0 < Im z < r} seen from the origin.

    ``bottom`` is the boundary-to-boundary kernel H(0, x) along the real line and
    ``top`` is H(0, x + ir).
    """
    if not r > 0:
        raise DomainError("r must be positive")
    x = np.asarray(x, dtype=float)
    u = PI * x / (2.0 * r)
    pref = PI * PI / (4.0 * r * r)
    if edge == "top":
        out = pref / np.cosh(u) ** 2
    elif edge == "bottom":
        if np.any(x == 0.0):
            raise PoleError("bottom-edge Poisson kernel has a pole at x = 0")
        out = pref / np.sinh(u) ** 2
    else:
        raise ValueError(f"edge must be 'top' or 'bottom', got {edge!r}")
    return float(out) if out.ndim == 0 else out


def eval_J(r: float, x, trunc: SumTruncation | None = None, *, full: bool = False):
    """J(r, x) = (pi^2 / 2r^2) sum_k cosh^{-2}(pi (x + 2 pi k) / 2r)."""
    return _run(0, "J", r, x, trunc, full)


def hi_closed_form(r: float, x, trunc: SumTruncation | None = None, *, full: bool = False):
    """H_I through the antiderivative -x/r + (pi/r) sum_k [tanh(..) - tanh(pi^2 k / r)]."""
    return _run(1, "H_I", r, x, trunc, full)


def eval_H_I(r: float, x, quad_tol: float = 1e-13):
    """H_I(r, x) = int_0^x (J(r, y) - 1/r) dy by adaptive Gauss-Kronrod quadrature.

    The argument is folded into [-pi, pi] first; H_I is odd and 2 pi periodic.
    """
    if not r > 0:
        raise DomainError("r must be positive")
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    flat = xs.ravel()
    folded = flat - TWO_PI * np.floor(np.abs(flat) / TWO_PI + 0.5) * np.sign(flat)
    inv_r = 1.0 / r

    def integrand(t):
        vals, _, status = _map_kernel(0, float(r), t * folded, DEFAULT_TOL * 1e-3, DEFAULT_MAX_TERMS)
        if status != 0:
            raise TruncationError("J truncation failed inside H_I quadrature")
        return folded * (vals - inv_r)

    res, err = integrate.quad_vec(integrand, 0.0, 1.0, epsabs=quad_tol, epsrel=0.0, limit=400)
    res = res.reshape(xs.shape)
    return float(res[0]) if np.ndim(x) == 0 else res


def eval_H_I_prime(r: float, x):
    """d/dx H_I = J - 1/r."""
    return eval_J(r, x) - 1.0 / r


def eval_K(r: float, x):
    """K(r, x) = r H_I(r, x)."""
    return r * eval_H_I(r, x)


def eval_A(r: float, x, trunc: SumTruncation | None = None, *, full: bool = False):
    """Potential A(r, x) of the crossing partition function; even, increasing in |x|."""
    return _run(2, "A", r, x, trunc, full)


def eval_L(r: float, x):
    """L(r, x) = (pi/r) tanh(pi x / 2r), the log-derivative of the top Poisson kernel."""
    if not r > 0:
        raise DomainError("r must be positive")
    out = (PI / r) * np.tanh(PI * np.asarray(x, dtype=float) / (2.0 * r))
    return float(out) if out.ndim == 0 else out


def eval_tilde_functions(r: float, x, trunc: SumTruncation | None = None):
    """(A_tilde, H_I_tilde, L_tilde) at (r, x) for the chordal case, 0 < x < 2 pi."""
    if not r > 0:
        raise DomainError("r must be positive")
    xs = np.asarray(x, dtype=float)
    if np.any(xs <= 0.0) or np.any(xs >= TWO_PI):
        raise PoleError("chordal-case functions are evaluated on the open interval (0, 2 pi)")
    at = _run(4, "A_tilde", r, x, trunc, False)
    hit = _run(3, "H_I_tilde", r, x, trunc, False)
    lt = (PI / r) / np.tanh(PI * xs / (2.0 * r))
    lt = float(lt) if lt.ndim == 0 else lt
    return at, hit, lt


def eval_delta(r: float, trunc: SumTruncation | None = None, *, full: bool = False):
    """delta(r) = 1/12 - (pi^2 / 2r^2) sum_{k>=1} sinh^{-2}(k pi^2 / r)."""
    if not r > 0:
        raise DomainError("r must be positive")
    trunc = trunc or SumTruncation()
    val, bound, status = _delta_kernel(float(r), trunc.abs_tol, int(trunc.max_terms))
    if status:
        raise TruncationError(f"delta(r={r}) did not reach tolerance")
    if full:
        return val, SumTruncation(trunc.abs_tol, trunc.max_terms, bound)
    return val


def eval_Gamma_delta(r: float, trunc: SumTruncation | None = None):
    delta = eval_delta(r, trunc)
    return PI * PI / (12.0 * r * r) + delta, delta


def eval_Gamma_from_kernel(r: float, n_nodes: int = 128):
    """Gamma read off the Laurent expansion of the annulus kernel at the origin.

    H_r(z) = -1/z + z (1/2r - Gamma + 1/12) + O(z^3); the linear coefficient is
    extracted with the trapezoid rule on a circle inside the nearest poles
    (2 pi and 2ir), which converges geometrically.
    """
    rho = 0.5 * min(TWO_PI, 2.0 * r)
    theta = TWO_PI * (np.arange(n_nodes) + 0.5) / n_nodes
    z = rho * np.exp(1j * theta)
    vals = complex_kernel(r, z) + 1.0 / z
    c1 = np.mean(vals * np.exp(-1j * theta)) / rho
    return 1.0 / (2.0 * r) + 1.0 / 12.0 - c1.real


def eval_mstar(r: float, quad_tol: float = 1e-12) -> float:
    """m*(r) = r/6 - 2 int_0^r delta(s) ds, the loop mass with nonzero winding."""
    if r < 0:
        raise DomainError("r must be nonnegative")
    if r == 0:
        return 0.0
    val, err, info = _quad(eval_delta, 0.0, r, quad_tol)
    return r / 6.0 - 2.0 * val


def _quad(f, lo, hi, tol):
    # split at integer points so QUADPACK sees short smooth pieces
    edges = np.unique(np.concatenate(([lo], np.arange(math.ceil(lo), math.floor(hi) + 1, dtype=float), [hi])))
    edges = edges[(edges >= lo) & (edges <= hi)]
    total, err = 0.0, 0.0
    for u, v in zip(edges[:-1], edges[1:]):
        if v <= u:
            continue
        val, e, info = integrate.quad(f, u, v, epsabs=tol / len(edges), epsrel=0.0, limit=200, full_output=1)[:3]
        if e > tol:
            raise RuntimeError(f"quadrature did not converge on [{u}, {v}] (error {e:.2e})")
        total += val
        err += e
    return total, err, None


def _coth(w):
    return 1.0 / np.tanh(w)


def complex_kernel(r: float, z, tol: float = 1e-15):
    """The annulus kernel H_r(z) as a complex array (symmetric principal-part sum)."""
    z = np.asarray(z, dtype=complex)
    a = PI / (2.0 * r)
    tot = _coth(a * z)
    k = 1
    while True:
        tot = tot + _coth(a * (z + TWO_PI * k)) + _coth(a * (z - TWO_PI * k))
        # |coth w - sign Re w| <= 2 e^{-2|Re w|} / (1 - e^{-2|Re w|}); sum the rest
        dist = np.min(TWO_PI * (k + 1) - np.abs(z.real)) if z.size else TWO_PI * (k + 1)
        v = 2.0 * a * dist
        bound = (PI / (2.0 * r)) * 4.0 * math.exp(-v) / ((1.0 - math.exp(-4.0 * PI * a)) * (1.0 - math.exp(-v)))
        if dist > 0 and bound <= tol:
            break
        k += 1
        if k > DEFAULT_MAX_TERMS:
            raise TruncationError("annulus kernel sum did not converge")
    return z / (2.0 * r) - (PI / (2.0 * r)) * tot


def eval_complex_kernel(r: float, z: complex) -> KernelValue:
    """H_r(z) for 0 <= Im z <= r, away from the poles 2 pi k."""
    if not r > 0:
        raise DomainError("r must be positive")
    z = complex(z)
    if abs(z.imag) < 1e-300 and abs(math.remainder(z.real, TWO_PI)) < 1e-300:
        raise PoleError("annulus kernel has poles at 2 pi k")
    w = complex(complex_kernel(r, z))
    return KernelValue(w.real, w.imag)


def eval_alpha(r: float, p: SleParams) -> float:
    gamma, _ = eval_Gamma_delta(r)
    return p.b - p.b_tilde + (2.0 * p.b + p.c) * gamma


def eval_beta(r: float, p: SleParams) -> float:
    return math.exp(p.b * r - p.c * eval_mstar(r) / 2.0)


def eval_lambda(r: float, p: SleParams) -> float:
    """lambda(r) = r^b exp(-int_1^r alpha)."""
    if r == 1.0:
        return 1.0
    lo, hi = (1.0, r) if r > 1 else (r, 1.0)
    integral, _, _ = _quad(lambda s: eval_alpha(s, p), lo, hi, 1e-11)
    if r < 1:
        integral = -integral
    return r ** p.b * math.exp(-integral)


def eval_scalars(r: float, x, p: SleParams):
    """(beta, alpha, Theta, lambda) at (r, x)."""
    alpha = eval_alpha(r, p)
    theta = eval_H_I_prime(r, x) + alpha / p.b - 1.0 / r
    return eval_beta(r, p), alpha, theta, eval_lambda(r, p)
