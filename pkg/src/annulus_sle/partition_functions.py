"""Annulus partition functions by Feynman-Kac Monte Carlo and by finite differences.

V(r, x) solves a drift-diffusion equation in r with a nonnegative potential.
V is not 2 pi periodic (neither L nor A is), and the winding sum needs it at
|x| > pi, so V is marched on a wide interval [-X, X] with reflecting ends.  The
solver advances V and its deficit W = 1 - V as two separate right-hand sides:
V keeps relative precision where it is small, W where V is within 1e-30 of 1.

Time stepping is TR-BDF2 (second order, L-stable), so the stiff potential far
from the origin cannot produce the sign oscillations Crank-Nicolson would.
Centred differences are used where the cell Peclet number allows and upwinding
elsewhere, which keeps every implicit matrix an M-matrix.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import special

from .core_types import DomainError, Grid1P, McEstimate, SleParams, periodic_grid
from .sde import SdeSpec, simulate_ensemble
from .special_functions import (
    KERNEL_TOL, PI, TWO_PI, _a_kernel, _at_kernel, _hi_kernel, _hit_kernel, _j_kernel,
    eval_beta, eval_Gamma_delta, eval_H_I_prime, eval_lambda, hi_closed_form,
)

EQ_IDS = ("pde", "pde2", "fpde2", "kpde", "kappa2")
GAMMA = 2.0 - math.sqrt(2.0)
R_MIN = 0.05


class SolverError(RuntimeError):
    """The finite-difference march produced values outside the admissible range."""


class TailCertificationError(RuntimeError):
    """The winding-sum tail bound could not be pushed below tolerance."""


@dataclass(frozen=True)
class PdeProblem:
    """A march in r from ``r_min`` to ``r_max``.

    ``n_x`` counts grid points per 2 pi period, ``n_r`` the geometric r-steps.
    For ``pde`` the interval reaches pi + 2 pi ``periods`` on each side; for
    ``pde2`` it is [0, 2 pi].  ``r_out`` lists radii where the solution is kept
    (they are inserted into the r-grid exactly).
    """

    eq_id: str
    r_max: float
    n_x: int
    n_r: int
    initial_data: Grid1P | np.ndarray | None = None
    r_min: float = R_MIN
    periods: int = 2
    r_out: tuple = ()
    zero_potential: bool = False

    def __post_init__(self):
        if self.eq_id not in ("pde", "pde2"):
            raise DomainError("V marches support eq_id 'pde' and 'pde2'")
        if not 0 < self.r_min < self.r_max:
            raise DomainError("need 0 < r_min < r_max")
        if self.n_x < 8 or self.n_x % 2:
            raise DomainError("n_x must be even and at least 8")
        if self.n_r < 1:
            raise DomainError("n_r must be positive")


@dataclass(frozen=True)
class VSolution:
    """V and its deficit W on the solver grid at the stored radii."""

    r: np.ndarray
    x: np.ndarray
    V: np.ndarray = field(repr=False)
    W: np.ndarray = field(repr=False)
    n_x: int = 0

    def index(self, r: float) -> int:
        i = int(np.argmin(np.abs(self.r - r)))
        if abs(self.r[i] - r) > 1e-12 * max(1.0, r):
            raise DomainError(f"r = {r} was not stored; pass it in r_out")
        return i

    def value(self, r: float, x: float) -> tuple[float, float]:
        """(V, W) at (r, x); off-grid x uses 4-point Lagrange interpolation in log space."""
        i = self.index(r)
        return _interp_log(self.x, self.V[i], x), _interp_log(self.x, self.W[i], x)

    def grid1p(self, i: int) -> Grid1P:
        """Restriction to the periodic grid on [-pi, pi) (only for the crossing case)."""
        j0 = int(np.argmin(np.abs(self.x + PI)))
        return Grid1P(float(self.r[i]), self.V[i, j0:j0 + self.n_x].copy())

    def __iter__(self):
        return (self.grid1p(i) for i in range(len(self.r)))

    def __len__(self):
        return len(self.r)


def _interp_log(xs, vals, x):
    dx = xs[1] - xs[0]
    t = (x - xs[0]) / dx
    j = int(round(t))
    if abs(t - j) < 1e-9 and 0 <= j < len(xs):
        return float(vals[j])
    j = min(max(int(math.floor(t)) - 1, 0), len(xs) - 4)
    pts = xs[j:j + 4]
    v = vals[j:j + 4]
    if np.all(v > 0):
        f = np.log(v)
        log_space = True
    else:
        f = v
        log_space = False
    out = 0.0
    for m in range(4):
        w = 1.0
        for q in range(4):
            if q != m:
                w *= (x - pts[q]) / (pts[m] - pts[q])
        out += w * f[m]
    return float(math.exp(out)) if log_space else float(out)


# ---------------------------------------------------------------- compiled march

@njit(cache=True)
def _fill_coeffs(chordal, s, xs, hh, ll, aa):
    for i in range(xs.shape[0]):
        x = xs[i]
        if chordal:
            hh[i] = 2.0 * _hit_kernel(s, x, KERNEL_TOL, 100000)[0]
            ll[i] = (PI / s) / math.tanh(PI * x / (2.0 * s))
            aa[i] = _at_kernel(s, x, KERNEL_TOL, 100000)[0]
        else:
            hh[i] = _hi_kernel(s, x, KERNEL_TOL, 100000)[0]
            ll[i] = (PI / s) * math.tanh(PI * x / (2.0 * s))
            aa[i] = _a_kernel(s, x, KERNEL_TOL, 100000)[0]


@njit(cache=True)
def _operator(hh, ll, aa, kappa, b, dx, pot_scale, reflect, lo, di, up, q):
    """Tridiagonal generator (lo, di, up) and potential q = 2bA for one kappa."""
    n = hh.shape[0]
    dif = 0.5 * kappa / (dx * dx)
    for i in range(n):
        mu = hh[i] - b * kappa * ll[i]
        if abs(mu) * dx <= kappa:
            lo[i] = dif - mu / (2.0 * dx)
            up[i] = dif + mu / (2.0 * dx)
        elif mu > 0:
            lo[i] = dif
            up[i] = dif + mu / dx
        else:
            lo[i] = dif - mu / dx
            up[i] = dif
        q[i] = 2.0 * b * aa[i] * pot_scale
        di[i] = -lo[i] - up[i] - q[i]
    if reflect:
        up[0] += lo[0]
        lo[0] = 0.0
        lo[n - 1] += up[n - 1]
        up[n - 1] = 0.0


@njit(cache=True)
def _apply(lo, di, up, u, out):
    n = u.shape[0]
    for i in range(n):
        v = di[i] * u[i]
        if i > 0:
            v += lo[i] * u[i - 1]
        if i < n - 1:
            v += up[i] * u[i + 1]
        out[i] = v


@njit(cache=True)
def _solve(c, lo, di, up, rhs, out, cp, dp):
    """Solve (I - c L) out = rhs for tridiagonal L by the Thomas algorithm."""
    n = rhs.shape[0]
    b0 = 1.0 - c * di[0]
    cp[0] = -c * up[0] / b0
    dp[0] = rhs[0] / b0
    for i in range(1, n):
        a = -c * lo[i]
        m = 1.0 - c * di[i] - a * cp[i - 1]
        cp[i] = -c * up[i] / m if i < n - 1 else 0.0
        dp[i] = (rhs[i] - a * dp[i - 1]) / m
    out[n - 1] = dp[n - 1]
    for i in range(n - 2, -1, -1):
        out[i] = dp[i] - cp[i] * out[i + 1]


@njit(cache=True)
def _forcing(lo, up, q, chordal, which, f):
    # which 0: V (no source), 1: W (source q); chordal Dirichlet data enter here
    n = q.shape[0]
    for i in range(n):
        f[i] = q[i] if which == 1 else 0.0
    if chordal:
        if which == 0:
            f[0] += lo[0]          # V(r, 0) = 1
        else:
            f[n - 1] += up[n - 1]  # W(r, 2 pi) = 1


@njit(cache=True)
def _march(chordal, rs, xs, kappas, bs, U0, store, pot_scale):
    """TR-BDF2 march of the V and W systems for several kappa at once.

    U0 has shape (m, 2, n); returns the stored states with shape (n_store, m, 2, n).
    """
    m = kappas.shape[0]
    n = xs.shape[0]
    dx = xs[1] - xs[0]
    n_store = 0
    for k in range(store.shape[0]):
        if store[k]:
            n_store += 1
    res = np.empty((n_store, m, 2, n))
    U = U0.copy()
    h0 = np.empty(n); l0 = np.empty(n); a0 = np.empty(n)
    hg = np.empty(n); lg = np.empty(n); ag = np.empty(n)
    h1 = np.empty(n); l1 = np.empty(n); a1 = np.empty(n)
    lo0 = np.empty(n); di0 = np.empty(n); up0 = np.empty(n); q0 = np.empty(n)
    log_ = np.empty(n); dig = np.empty(n); upg = np.empty(n); qg = np.empty(n)
    lo1 = np.empty(n); di1 = np.empty(n); up1 = np.empty(n); q1 = np.empty(n)
    f0 = np.empty(n); fg = np.empty(n); f1 = np.empty(n)
    tmp = np.empty(n); rhs = np.empty(n); us = np.empty(n); cp = np.empty(n); dp = np.empty(n)
    reflect = not chordal
    _fill_coeffs(chordal, rs[0], xs, h0, l0, a0)
    w = (1.0 - GAMMA) / (2.0 - GAMMA)
    c_a = 1.0 / (GAMMA * (2.0 - GAMMA))
    c_b = (1.0 - GAMMA) ** 2 / (GAMMA * (2.0 - GAMMA))
    si = 0
    if store[0]:
        res[si] = U
        si += 1
    for k in range(rs.shape[0] - 1):
        s0 = rs[k]
        h = rs[k + 1] - s0
        _fill_coeffs(chordal, s0 + GAMMA * h, xs, hg, lg, ag)
        _fill_coeffs(chordal, s0 + h, xs, h1, l1, a1)
        for j in range(m):
            kap = kappas[j]
            b = bs[j]
            _operator(h0, l0, a0, kap, b, dx, pot_scale, reflect, lo0, di0, up0, q0)
            _operator(hg, lg, ag, kap, b, dx, pot_scale, reflect, log_, dig, upg, qg)
            _operator(h1, l1, a1, kap, b, dx, pot_scale, reflect, lo1, di1, up1, q1)
            for which in range(2):
                u = U[j, which]
                _forcing(lo0, up0, q0, chordal, which, f0)
                _forcing(log_, upg, qg, chordal, which, fg)
                _forcing(lo1, up1, q1, chordal, which, f1)
                _apply(lo0, di0, up0, u, tmp)
                for i in range(n):
                    rhs[i] = u[i] + 0.5 * GAMMA * h * (tmp[i] + f0[i] + fg[i])
                _solve(0.5 * GAMMA * h, log_, dig, upg, rhs, us, cp, dp)
                for i in range(n):
                    rhs[i] = c_a * us[i] - c_b * u[i] + w * h * f1[i]
                _solve(w * h, lo1, di1, up1, rhs, tmp, cp, dp)
                for i in range(n):
                    U[j, which, i] = tmp[i]
        h0, h1 = h1, h0
        l0, l1 = l1, l0
        a0, a1 = a1, a0
        if store[k + 1]:
            res[si] = U
            si += 1
    return res


# ---------------------------------------------------------------- V solvers

def march_radii(r_min: float, r_max: float, n_r: int, r_out=()) -> np.ndarray:
    """Geometric r-grid from r_min to r_max with the requested radii inserted."""
    rs = r_min * (r_max / r_min) ** (np.arange(n_r + 1) / n_r)
    rs[-1] = r_max
    extra = [float(r) for r in r_out if r_min <= r <= r_max]
    rs = np.unique(np.concatenate([rs, extra]))
    # drop nodes that would create a vanishing step
    keep = np.concatenate([[True], np.diff(rs) > 1e-9 * rs[1:]])
    rs = rs[keep]
    for r in extra:
        rs[np.argmin(np.abs(rs - r))] = r
    return rs


def solver_grid(prob: PdeProblem) -> np.ndarray:
    dx = TWO_PI / prob.n_x
    if prob.eq_id == "pde":
        m = prob.periods * prob.n_x + prob.n_x // 2
        return dx * np.arange(-m, m + 1)
    # open interval (0, 2 pi); the Dirichlet ends are not unknowns
    return dx * np.arange(1, prob.n_x)


def _initial(prob: PdeProblem, xs: np.ndarray):
    eps = prob.r_min
    if prob.initial_data is not None:
        v0 = np.asarray(getattr(prob.initial_data, "values", prob.initial_data), dtype=float)
        if v0.shape != xs.shape:
            raise DomainError(f"initial data must have {xs.size} values on the solver grid")
        return v0, 1.0 - v0
    if prob.eq_id == "pde":
        # V(0+, x) = 1 for |x| < 2 pi, 0 beyond; smoothed on the scale r_min
        d = (np.abs(xs) - TWO_PI) / eps
        return 0.5 * special.erfc(d), 0.5 * special.erfc(-d)
    d = (TWO_PI - xs) / eps
    return special.erf(d), special.erfc(d)


def solve_V_multi(prob: PdeProblem, params: list[SleParams]) -> list[VSolution]:
    """March several kappa values together (the kernels are shared)."""
    xs = solver_grid(prob)
    rs = march_radii(prob.r_min, prob.r_max, prob.n_r, prob.r_out)
    if prob.r_out:
        store = np.zeros(len(rs), dtype=np.bool_)
        for r in prob.r_out:
            store[np.argmin(np.abs(rs - r))] = True
    else:
        store = np.ones(len(rs), dtype=np.bool_)
    v0, w0 = _initial(prob, xs)
    U0 = np.empty((len(params), 2, xs.size))
    U0[:, 0] = v0
    U0[:, 1] = w0
    res = _march(prob.eq_id == "pde2", rs, xs, np.array([p.kappa for p in params]),
                 np.array([p.b for p in params]), U0, store, 0.0 if prob.zero_potential else 1.0)
    out = []
    for j, p in enumerate(params):
        V = res[:, j, 0, :].copy()
        W = res[:, j, 1, :].copy()
        if not (np.all(np.isfinite(V)) and np.all(np.isfinite(W))):
            raise SolverError(f"non-finite values in the V march (kappa={p.kappa})")
        # roundoff can leave the last bits of a 1 - 1 cancellation slightly negative
        lo, hi = V.min(), V.max()
        if lo < -1e-10 or hi > 1 + 1e-10 or W.min() < -1e-10:
            raise SolverError(f"V left [0, 1] (min {lo:.3e}, max {hi:.3e}, kappa={p.kappa})")
        out.append(VSolution(rs[store], xs, np.clip(V, 0.0, 1.0), np.clip(W, 0.0, 1.0), prob.n_x))
    return out


def V_pde_solve(prob: PdeProblem, p: SleParams) -> VSolution:
    """V (eq_id 'pde') or V~ (eq_id 'pde2') on the solver grid, marched from r_min."""
    return solve_V_multi(prob, [p])[0]


def V_monte_carlo(r: float, x: float, n_paths: int, dt: float, p: SleParams, seed: int,
                  threads: int = 1) -> McEstimate:
    """Feynman-Kac estimate of V(r, x) from locally chordal paths started at x."""
    if not r > 0:
        raise DomainError("r must be positive")
    if n_paths < 100:
        raise DomainError("n_paths must be at least 100")
    ens = simulate_ensemble(SdeSpec("locally_chordal", r, p.kappa), x, dt, seed, n_paths,
                            threads=threads, with_functional=True)
    return _estimate(ens.deficits, seed)


def _estimate(deficits: np.ndarray, seed: int) -> McEstimate:
    n = len(deficits)
    d = float(np.mean(deficits))
    # the spread of exp(-W) equals the spread of 1 - exp(-W); the latter keeps its digits
    se = float(np.std(deficits, ddof=1) / math.sqrt(n))
    return McEstimate(value=1.0 - d, std_error=se, n_paths=n, seed=seed, deficit=d)


def tildeV(r: float, x: float, mode: str, p: SleParams, *, n_paths: int = 10_000,
           dt: float = 1e-4, seed: int = 0, threads: int = 1, n_x: int = 512, n_r: int = 400):
    """Chordal-case V~(r, x) for 0 <= x < 2 pi, with V~(r, 0) = 1.

    ``mode='mc'`` returns an McEstimate, ``mode='pde'`` the interpolated grid value.
    """
    if not 0.0 <= x < TWO_PI:
        raise DomainError("x must lie in [0, 2 pi)")
    if x == 0.0:
        return McEstimate(1.0, 0.0, 0, seed, 0.0) if mode == "mc" else 1.0
    if mode == "mc":
        ens = simulate_ensemble(SdeSpec("tilde_chordal", r, p.kappa), x, dt, seed, n_paths,
                                threads=threads, with_functional=True)
        return _estimate(ens.deficits, seed)
    if mode == "pde":
        sol = V_pde_solve(PdeProblem("pde2", r, n_x, n_r, r_out=(r,)), p)
        return sol.value(r, x)[0]
    raise DomainError("mode must be 'mc' or 'pde'")


# ---------------------------------------------------------------- winding sum and tables

@dataclass(frozen=True)
class PartitionTable:
    r_grid: np.ndarray
    x_grid: np.ndarray
    V: np.ndarray = field(repr=False)
    Psi_tilde: np.ndarray = field(repr=False)
    F: np.ndarray = field(repr=False)
    F_hat: np.ndarray = field(repr=False)
    K: np.ndarray = field(repr=False)
    tail_bound: np.ndarray = field(repr=False)
    kappa: float = math.nan

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("r,x,V,Psi_tilde,F,Fhat,K\n")
            cols = (self.V, self.Psi_tilde, self.F, self.F_hat, self.K)
            for i, r in enumerate(self.r_grid):
                for j, x in enumerate(self.x_grid):
                    row = [r, x] + [c[i, j] for c in cols]
                    # repr of a Python float round-trips exactly
                    fh.write(",".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "PartitionTable":
        cols = read_grid_csv(path)
        rs, xs = cols["r"], cols["x"]
        names = ("V", "Psi_tilde", "F", "Fhat", "K")
        grids = [cols[n] for n in names]
        return cls(rs, xs, *grids, tail_bound=np.zeros_like(grids[0]))


def read_grid_csv(path) -> dict:
    """Columns of an r-major CSV grid as 2-D arrays; ``r`` and ``x`` come back 1-D.

    Lines starting with '#' (the run configuration echo) are skipped.
    """
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    header = [h.strip() for h in lines[0].split(",")]
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    rs = np.unique(data[:, header.index("r")])
    xs = np.unique(data[:, header.index("x")])
    if len(rs) * len(xs) != len(data):
        raise DomainError("CSV is not a full r-by-x grid")
    out = {"r": rs, "x": xs}
    for k, h in enumerate(header):
        if h not in ("r", "x"):
            out[h] = data[:, k].reshape(len(rs), len(xs))
    return out


def _log_top_kernel_pow(r: float, y, b: float):
    # b log H(0, y + ir) with H = (pi^2 / 4r^2) sech^2(pi y / 2r), computed in log space
    u = np.abs(PI * np.asarray(y, dtype=float) / (2.0 * r))
    return b * (2.0 * math.log(PI / (2.0 * r)) - 2.0 * (u + np.log1p(np.exp(-2.0 * u)) - math.log(2.0)))


def winding_tail_bound(r: float, x: float, k0: int, p: SleParams, v_cap: float = 1.0) -> float:
    """Upper bound on sum_{|k| >= k0} F(r, x + 2 pi k) for |x| <= pi, k0 >= 1.

    Uses F <= beta v_cap H(0, . + ir)^b, where v_cap bounds V beyond the last
    included translate (1 in general, V at the grid edge since V decreases in
    |x|), and sech^{2b}(u) <= 4^b e^{-2bu} summed geometrically.
    """
    beta = eval_beta(r, p)
    a = PI / (2.0 * r)
    ratio = math.exp(-2.0 * p.b * a * TWO_PI)
    pref = beta * v_cap * (PI * PI / (4.0 * r * r)) ** p.b * 4.0 ** p.b
    tot = 0.0
    for sgn in (1.0, -1.0):
        y0 = abs(x + sgn * TWO_PI * k0)
        tot += math.exp(-2.0 * p.b * a * y0) / (1.0 - ratio)
    return pref * tot


def winding_sum(sol: VSolution, i: int, x_grid: np.ndarray, p: SleParams, tol: float = 1e-12):
    """(Psi_tilde, F, F_hat, tail bound) at r = sol.r[i] for |x| <= pi.

    The sum over translates runs over every x + 2 pi k inside the solver grid;
    the rest is certified by ``winding_tail_bound`` relative to F_hat.
    """
    r = float(sol.r[i])
    beta = eval_beta(r, p)
    X = sol.x[-1]
    v_cap = min(1.0, max(sol.V[i, 0], sol.V[i, -1]))
    kmax = int(math.floor((X - PI) / TWO_PI + 1e-9))
    psi = np.empty(len(x_grid))
    F = np.empty(len(x_grid))
    Fh = np.empty(len(x_grid))
    tails = np.empty(len(x_grid))
    for j, x in enumerate(x_grid):
        if abs(x) > PI + 1e-12:
            raise DomainError("table x values must lie in [-pi, pi]")
        tot = 0.0
        for k in range(-kmax, kmax + 1):
            y = x + TWO_PI * k
            v = sol.value(r, y)[0]
            term = beta * v * math.exp(_log_top_kernel_pow(r, y, p.b))
            if k == 0:
                psi[j] = v * math.exp(_log_top_kernel_pow(r, y, p.b))
                F[j] = term
            tot += term
        tail = winding_tail_bound(r, x, kmax + 1, p, v_cap)
        if not tail <= tol * tot:
            raise TailCertificationError(
                f"winding tail {tail:.3e} exceeds {tol:.0e} * F_hat at r={r}, x={x}; widen the grid")
        Fh[j] = tot
        tails[j] = tail
    return psi, F, Fh, tails


def periods_needed(r: float, p: SleParams, tol: float) -> int:
    """Translates on each side so that the winding tail is below tol relative."""
    # each translate gains exp(-b pi^2 / r); the 4^b prefactor and v_cap <= 1 give headroom
    per = p.b * PI * PI / r
    return max(2, int(math.ceil((math.log(1.0 / tol) + 2.0 * p.b * math.log(4.0) + 2.0) / per)) + 1)


def assemble_tables(r_grid, x_grid, p: SleParams, *, n_x: int = 512, n_r: int = 600,
                    periods: int | None = None, tol: float = 1e-12,
                    sol: VSolution | None = None) -> PartitionTable:
    """V, Psi_tilde, F, F_hat and K on r_grid x x_grid (x in [-pi, pi]).

    ``periods=None`` picks enough translates for the winding tail to certify.
    """
    r_grid = np.asarray(r_grid, dtype=float)
    x_grid = np.asarray(x_grid, dtype=float)
    if periods is None:
        periods = periods_needed(float(r_grid.max()), p, tol)
    if sol is None:
        prob = PdeProblem("pde", float(r_grid.max()), n_x, n_r, periods=periods,
                          r_out=tuple(r_grid))
        sol = V_pde_solve(prob, p)
    shape = (len(r_grid), len(x_grid))
    V = np.empty(shape)
    psi = np.empty(shape)
    F = np.empty(shape)
    Fh = np.empty(shape)
    K = np.empty(shape)
    tails = np.empty(shape)
    for a, r in enumerate(r_grid):
        i = sol.index(r)
        V[a] = [sol.value(r, x)[0] for x in x_grid]
        psi[a], F[a], Fh[a], tails[a] = winding_sum(sol, i, x_grid, p, tol)
        K[a] = eval_lambda(r, p) * Fh[a]
    return PartitionTable(r_grid, x_grid, V, psi, F, Fh, K, tails, p.kappa)


# ---------------------------------------------------------------- K on a periodic grid

@njit(cache=True)
def _cyclic_solve(c, lo, di, up, rhs, out):
    """Solve (I - c L) out = rhs for cyclic tridiagonal L (Sherman-Morrison)."""
    n = rhs.shape[0]
    a = -c * lo
    bdiag = 1.0 - c * di
    cc = -c * up
    alpha = cc[n - 1]   # couples row n-1 to column 0
    beta = a[0]         # couples row 0 to column n-1
    gam = -bdiag[0]
    bb = bdiag.copy()
    bb[0] = bdiag[0] - gam
    bb[n - 1] = bdiag[n - 1] - alpha * beta / gam
    u = np.zeros(n)
    u[0] = gam
    u[n - 1] = alpha
    cp = np.empty(n)
    dp = np.empty(n)
    y = np.empty(n)
    z = np.empty(n)
    for vec, sol in ((rhs, y), (u, z)):
        cp[0] = cc[0] / bb[0]
        dp[0] = vec[0] / bb[0]
        for i in range(1, n):
            m = bb[i] - a[i] * cp[i - 1]
            cp[i] = cc[i] / m
            dp[i] = (vec[i] - a[i] * dp[i - 1]) / m
        sol[n - 1] = dp[n - 1]
        for i in range(n - 2, -1, -1):
            sol[i] = dp[i] - cp[i] * sol[i + 1]
    fact = (y[0] + beta * y[n - 1] / gam) / (1.0 + z[0] + beta * z[n - 1] / gam)
    for i in range(n):
        out[i] = y[i] - fact * z[i]


@njit(cache=True)
def _k_operator(s, xs, kappa, b, lo, di, up):
    n = xs.shape[0]
    dx = xs[1] - xs[0]
    dif = 0.5 * kappa / (dx * dx)
    inv_s = 1.0 / s
    for i in range(n):
        hv = _hi_kernel(s, xs[i], KERNEL_TOL, 100000)[0]
        # H_I' = J - 1/r
        jv = _j_kernel(s, xs[i], KERNEL_TOL, 100000)[0]
        lo[i] = dif - hv / (2.0 * dx)
        up[i] = dif + hv / (2.0 * dx)
        di[i] = -2.0 * dif + b * (jv - inv_s)


@njit(cache=True)
def _k_march(rs, xs, kappa, b, K0, store):
    n = xs.shape[0]
    n_store = 0
    for k in range(store.shape[0]):
        if store[k]:
            n_store += 1
    res = np.empty((n_store, n))
    K = K0.copy()
    lo0 = np.empty(n); di0 = np.empty(n); up0 = np.empty(n)
    log_ = np.empty(n); dig = np.empty(n); upg = np.empty(n)
    lo1 = np.empty(n); di1 = np.empty(n); up1 = np.empty(n)
    tmp = np.empty(n); rhs = np.empty(n); us = np.empty(n)
    w = (1.0 - GAMMA) / (2.0 - GAMMA)
    c_a = 1.0 / (GAMMA * (2.0 - GAMMA))
    c_b = (1.0 - GAMMA) ** 2 / (GAMMA * (2.0 - GAMMA))
    si = 0
    if store[0]:
        res[si] = K
        si += 1
    _k_operator(rs[0], xs, kappa, b, lo0, di0, up0)
    for k in range(rs.shape[0] - 1):
        s0 = rs[k]
        h = rs[k + 1] - s0
        _k_operator(s0 + GAMMA * h, xs, kappa, b, log_, dig, upg)
        _k_operator(s0 + h, xs, kappa, b, lo1, di1, up1)
        for i in range(n):
            tmp[i] = di0[i] * K[i] + lo0[i] * K[(i - 1) % n] + up0[i] * K[(i + 1) % n]
            rhs[i] = K[i] + 0.5 * GAMMA * h * tmp[i]
        _cyclic_solve(0.5 * GAMMA * h, log_, dig, upg, rhs, us)
        for i in range(n):
            rhs[i] = c_a * us[i] - c_b * K[i]
        _cyclic_solve(w * h, lo1, di1, up1, rhs, K)
        lo0, lo1 = lo1, lo0
        di0, di1 = di1, di0
        up0, up1 = up1, up0
        if store[k + 1]:
            res[si] = K
            si += 1
    return res


def K_march(K0: Grid1P, r_max: float, n_r: int, p: SleParams, r_out=()) -> list[Grid1P]:
    """Continue K from K0 (at r = K0.r) to r_max with the periodic K equation."""
    xs = K0.x
    rs = np.linspace(K0.r, r_max, n_r + 1)
    rs = np.unique(np.concatenate([rs, [r for r in r_out if K0.r <= r <= r_max]]))
    store = np.ones(len(rs), dtype=np.bool_)
    if r_out:
        store[:] = False
        for r in r_out:
            store[np.argmin(np.abs(rs - r))] = True
    res = _k_march(rs, xs, p.kappa, p.b, np.asarray(K0.values, dtype=float), store)
    return [Grid1P(float(r), res[i]) for i, r in enumerate(rs[store])]


# ---------------------------------------------------------------- residuals

def _coefficients(eq_id: str, r: float, x: np.ndarray, p: SleParams):
    """(diffusion, drift, zeroth-order coefficient) of the named equation at (r, x)."""
    if eq_id == "kappa2":
        return 1.0, hi_closed_form(r, x), eval_H_I_prime(r, x)
    hi = hi_closed_form(r, x)
    if eq_id == "kpde":
        return p.kappa / 2, hi, p.b * eval_H_I_prime(r, x)
    if eq_id == "fpde2":
        gamma, _ = eval_Gamma_delta(r)
        zeroth = p.b * eval_H_I_prime(r, x) + p.b + p.b_tilde * (6.0 * gamma - 1.0) - p.b / r
        return p.kappa / 2, hi, zeroth
    if eq_id == "pde":
        from .special_functions import eval_A, eval_L
        return p.kappa / 2, hi - p.b * p.kappa * eval_L(r, x), -2.0 * p.b * eval_A(r, x)
    raise DomainError(f"unknown equation {eq_id!r}")


def pde_residual(r_grid, x_grid, values, eq_id: str, p: SleParams, periodic: bool = True):
    """Pointwise residual u_r - (D u'' + mu u' + q u) by centred differences.

    ``values`` has shape (len(r_grid), len(x_grid)) on a uniform grid in r and x.
    Returns (residual at interior r nodes, r nodes used, sup-norm).  Non-periodic
    data lose their first and last x column.
    """
    if eq_id not in EQ_IDS or eq_id == "pde2":
        raise DomainError(f"residuals are available for {EQ_IDS[:1] + EQ_IDS[2:]}")
    r_grid = np.asarray(r_grid, dtype=float)
    x_grid = np.asarray(x_grid, dtype=float)
    u = np.asarray(values, dtype=float)
    if len(r_grid) < 3 or len(x_grid) < 3:
        raise DomainError("need at least three r and x nodes")
    hr = np.diff(r_grid)
    hx = x_grid[1] - x_grid[0]
    if not np.allclose(hr, hr[0], rtol=1e-9, atol=0):
        raise DomainError("r grid must be uniform")
    hr = hr[0]
    ut = (u[2:] - u[:-2]) / (2.0 * hr)
    mid = u[1:-1]
    if periodic:
        up = np.roll(mid, -1, axis=1)
        dn = np.roll(mid, 1, axis=1)
        cols = slice(None)
    else:
        up = mid[:, 2:]
        dn = mid[:, :-2]
        mid = mid[:, 1:-1]
        ut = ut[:, 1:-1]
        cols = slice(1, -1)
    ux = (up - dn) / (2.0 * hx)
    uxx = (up - 2.0 * mid + dn) / (hx * hx)
    res = np.empty_like(mid)
    for i, r in enumerate(r_grid[1:-1]):
        D, mu, q = _coefficients(eq_id, float(r), x_grid[cols], p)
        res[i] = ut[i] - (D * uxx[i] + mu * ux[i] + q * mid[i])
    return res, r_grid[1:-1], float(np.max(np.abs(res)))


def kappa2_closed_form(r, x):
    """Phi = r J(r, x), the kappa = 2 solution of the K equation up to a constant."""
    from .special_functions import eval_J
    return float(r) * eval_J(float(r), x)


# ---------------------------------------------------------------- K limit

@dataclass(frozen=True)
class KLimit:
    K_inf: float
    decay_rate: float
    r_squared: float
    oscillation: np.ndarray = field(repr=False)


def K_limit(r_grid, x_grid, K, window=(6.0, 10.0)) -> KLimit:
    """K_inf from the largest r and the decay rate of the x-oscillation of K.

    The oscillation max_x K - min_x K is fitted log-linearly over ``window``;
    a non-monotone sequence triggers a fit-quality warning.
    """
    r_grid = np.asarray(r_grid, dtype=float)
    K = np.asarray(K, dtype=float)
    osc = K.max(axis=1) - K.min(axis=1)
    sel = (r_grid >= window[0] - 1e-12) & (r_grid <= window[1] + 1e-12) & (osc > 0)
    if sel.sum() < 3:
        raise DomainError("need at least three radii with positive oscillation in the window")
    rr = r_grid[sel]
    ly = np.log(osc[sel])
    if np.any(np.diff(osc[sel]) >= 0):
        warnings.warn("x-oscillation of K is not monotone in the fit window", RuntimeWarning)
    slope, icpt = np.polyfit(rr, ly, 1)
    pred = slope * rr + icpt
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return KLimit(float(np.mean(K[-1])), float(-slope), r2, osc)


def periodic_values(f, r: float, n_x: int) -> Grid1P:
    """Tabulate f(r, x) on the periodic grid."""
    return Grid1P(float(r), np.asarray(f(r, periodic_grid(n_x)), dtype=float))
