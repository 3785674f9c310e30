"""Random-walk loop measure and the lambda-SAW on finite subsets of Z^2.

Two independent routes to loop masses are kept side by side: explicit
enumeration of rooted closed walks (the definition, with a spectral tail bound)
and the log-determinant identity m(loops in D) = -log det(I - Q_D).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import permutations

import numpy as np
from numba import njit

from .core_types import DomainError, SleParams

STEPS = ((1, 0), (0, 1), (-1, 0), (0, -1))


class EnumerationBudgetError(RuntimeError):
    """A SAW enumeration would exceed its configured budget."""


class SingularMatrixError(RuntimeError):
    """I - Q is singular (the walk is not killed anywhere)."""


@dataclass(frozen=True)
class LatticeDomain:
    """Finite connected set of Z^2 sites; the walk is killed on leaving it.

    ``scale`` is the n of the lattice n^{-1} Z^2 and is metadata only.
    """

    sites: tuple
    scale: int = 1

    def __post_init__(self):
        pts = tuple(sorted({(int(a), int(b)) for a, b in self.sites}))
        if not pts:
            raise DomainError("a domain needs at least one site")
        object.__setattr__(self, "sites", pts)
        if not self._connected():
            raise DomainError("domain must be connected")

    @classmethod
    def rectangle(cls, w: int, h: int, origin=(0, 0)) -> "LatticeDomain":
        ox, oy = origin
        return cls(tuple((ox + i, oy + j) for i in range(w) for j in range(h)))

    @classmethod
    def parse(cls, spec: str) -> "LatticeDomain":
        w, h = (int(t) for t in spec.lower().split("x"))
        return cls.rectangle(w, h)

    @cached_property
    def index(self) -> dict:
        return {s: i for i, s in enumerate(self.sites)}

    def __len__(self):
        return len(self.sites)

    def __contains__(self, pt) -> bool:
        return tuple(pt) in self.index

    def _connected(self) -> bool:
        idx = {s: i for i, s in enumerate(self.sites)}
        seen = {self.sites[0]}
        stack = [self.sites[0]]
        while stack:
            x, y = stack.pop()
            for dx, dy in STEPS:
                q = (x + dx, y + dy)
                if q in idx and q not in seen:
                    seen.add(q)
                    stack.append(q)
        return len(seen) == len(self.sites)

    @cached_property
    def adjacency(self) -> np.ndarray:
        """(n, 4) neighbour indices, -1 where the step leaves the domain."""
        adj = -np.ones((len(self.sites), 4), dtype=np.int64)
        for i, (x, y) in enumerate(self.sites):
            for k, (dx, dy) in enumerate(STEPS):
                adj[i, k] = self.index.get((x + dx, y + dy), -1)
        return adj

    @cached_property
    def Q(self) -> np.ndarray:
        """Transition matrix of simple random walk killed on exit."""
        n = len(self.sites)
        q = np.zeros((n, n))
        for i in range(n):
            for j in self.adjacency[i]:
                if j >= 0:
                    q[i, j] = 0.25
        return q

    @cached_property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvalsh(self.Q))))

    def indices(self, pts) -> np.ndarray:
        out = []
        for p in pts:
            p = (int(p[0]), int(p[1]))
            if p not in self.index:
                raise DomainError(f"site {p} is not in the domain")
            out.append(self.index[p])
        return np.array(sorted(set(out)), dtype=np.int64)

    def sub(self, pts) -> "LatticeDomain":
        """Sub-domain on the given sites (must be connected)."""
        return LatticeDomain(tuple(pts), self.scale)


@dataclass(frozen=True)
class Saw:
    vertices: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "vertices", v)
        steps = np.abs(np.diff(v, axis=0)).sum(axis=1)
        if np.any(steps != 1):
            raise DomainError("a SAW takes nearest-neighbour steps")
        if len({tuple(p) for p in v}) != len(v):
            raise DomainError("a SAW does not revisit a vertex")

    def __len__(self):
        # number of steps |omega|
        return len(self.vertices) - 1

    @property
    def points(self) -> list:
        return [tuple(int(c) for c in p) for p in self.vertices]


def _least_rotation(seq: tuple) -> tuple:
    n = len(seq)
    return min(seq[j:] + seq[:j] for j in range(n))


@dataclass(frozen=True)
class UnrootedLoop:
    """Rotation class of a closed walk, stored by its least rotation."""

    canonical: tuple
    length: int
    multiplicity: int

    @classmethod
    def from_rooted(cls, seq) -> "UnrootedLoop":
        """``seq`` lists the vertices eta_0 .. eta_{n-1} (the closing eta_n = eta_0 omitted)."""
        seq = tuple(tuple(int(c) for c in p) for p in seq)
        n = len(seq)
        if n < 2:
            raise DomainError("a loop has positive length")
        for j in range(n):
            a, b = seq[j], seq[(j + 1) % n]
            if abs(a[0] - b[0]) + abs(a[1] - b[1]) != 1:
                raise DomainError("loop steps must be nearest-neighbour")
        rotations = {seq[j:] + seq[:j] for j in range(n)}
        return cls(_least_rotation(seq), n, len(rotations))

    @property
    def weight(self) -> float:
        """Sum of 4^{-n}/n over the distinct rooted loops in the class."""
        return self.multiplicity * 4.0 ** (-self.length) / self.length


def unrooted_loops(D: LatticeDomain, max_len: int):
    """All unrooted loops in D of length <= max_len (small domains only)."""
    found = {}
    adj = D.adjacency
    for root in range(len(D)):
        stack = [(root, (root,))]
        while stack:
            v, path = stack.pop()
            if len(path) >= max_len + 1:
                continue
            for w in adj[v]:
                if w < 0:
                    continue
                if w == root and len(path) >= 2:
                    loop = UnrootedLoop.from_rooted([D.sites[i] for i in path])
                    found.setdefault(loop.canonical, loop)
                stack.append((w, path + (int(w),)))
    return list(found.values())


# ---------------------------------------------------------------- enumeration route

@njit(cache=True)
def _closed_walk_sums(adj, coords, flag_a, flag_b, need_b, max_len):
    """Per length n, the number of rooted closed walks hitting A (and B if need_b)."""
    n_sites = adj.shape[0]
    counts = np.zeros(max_len + 1)
    path = np.empty(max_len + 1, dtype=np.int64)
    choice = np.empty(max_len + 1, dtype=np.int64)
    hits_a = np.empty(max_len + 2, dtype=np.int64)
    hits_b = np.empty(max_len + 2, dtype=np.int64)
    for root in range(n_sites):
        rx = coords[root, 0]
        ry = coords[root, 1]
        path[0] = root
        choice[0] = -1
        hits_a[0] = 1 if flag_a[root] else 0
        hits_b[0] = 1 if flag_b[root] else 0
        depth = 0
        while depth >= 0:
            choice[depth] += 1
            if choice[depth] >= 4 or depth == max_len:
                depth -= 1
                continue
            w = adj[path[depth], choice[depth]]
            if w < 0:
                continue
            # prune walks that cannot get back to the root in time
            dist = abs(coords[w, 0] - rx) + abs(coords[w, 1] - ry)
            if dist > max_len - depth - 1:
                continue
            ha = hits_a[depth] + (1 if flag_a[w] else 0)
            hb = hits_b[depth] + (1 if flag_b[w] else 0)
            if w == root:
                if ha > 0 and (hb > 0 or not need_b):
                    counts[depth + 1] += 1.0
            depth += 1
            path[depth] = w
            choice[depth] = -1
            hits_a[depth] = ha
            hits_b[depth] = hb
    return counts


@njit(cache=True)
def _spectral_tail(lams, weights, n_hit, n_start, n_terms):
    # per even length n: min(sum_i |l_i|^n / n, sum_i w_i |l_i|^n); w_i = sum_{v in V} phi_i(v)^2
    total = 0.0
    a = np.abs(lams)
    for t in range(n_terms):
        n = n_start + 2 * t
        p = a ** n
        total += min(p.sum() / n, (weights * p).sum() if n_hit > 0 else p.sum() / n)
    return total


def _tail_bound(D: LatticeDomain, hit_idx, max_len: int) -> float:
    """Certified bound on the mass of loops longer than max_len hitting hit_idx.

    Only even lengths occur on Z^2.  A length-n loop class hitting V has mass at
    most tr(Q^n)/n and at most sum over v in V of (Q^n)_vv; both come from the
    spectral decomposition of the symmetric Q.  The tail past the explicit
    terms is bounded geometrically by the spectral radius.
    """
    lams, vecs = np.linalg.eigh(D.Q)
    w = (vecs[hit_idx, :] ** 2).sum(axis=0)
    n_terms = 4000
    n0 = max_len + 2
    explicit = _spectral_tail(lams, w, len(hit_idx), n0, n_terms)
    rho = D.spectral_radius
    n_end = n0 + 2 * n_terms
    bound = explicit + len(D) * rho ** n_end / (n_end * (1.0 - rho * rho))
    # the bound is attained when V = D, so leave room for rounding in both routes
    return float(bound * (1.0 + 1e-9) + 1e-14)


def _enumerate(D: LatticeDomain, set_a, set_b, max_len: int):
    if max_len < 2 or max_len % 2:
        raise DomainError("max_len must be even and at least 2")
    fa = np.zeros(len(D), dtype=np.bool_)
    fb = np.zeros(len(D), dtype=np.bool_)
    ia = D.indices(set_a) if len(set_a) else np.zeros(0, dtype=np.int64)
    fa[ia] = True
    if set_b is not None:
        ib = D.indices(set_b) if len(set_b) else np.zeros(0, dtype=np.int64)
        fb[ib] = True
    coords = np.array(D.sites, dtype=np.int64)
    counts = _closed_walk_sums(D.adjacency, coords, fa, fb, set_b is not None, max_len)
    n = np.arange(max_len + 1)
    total = float(sum(counts[k] * 4.0 ** (-k) / k for k in n[2:] if counts[k]))
    return total, _tail_bound(D, ib if set_b is not None and len(ib) < len(ia) else ia, max_len)


def loop_measure_enumerate(D: LatticeDomain, hit_set, max_len: int) -> tuple[float, float]:
    """(mass of loops of length <= max_len hitting hit_set, bound on the rest).

    Each rooted closed walk contributes 4^{-n}/n, which is the unrooted measure
    summed over its rotation class.
    """
    hit_set = list(hit_set)
    if not hit_set:
        return 0.0, 0.0
    return _enumerate(D, hit_set, None, max_len)


def loop_measure_enumerate_both(D: LatticeDomain, set_a, set_b, max_len: int) -> tuple[float, float]:
    """Enumerated mass of loops hitting both set_a and set_b, with tail bound."""
    if not list(set_a) or not list(set_b):
        return 0.0, 0.0
    return _enumerate(D, list(set_a), list(set_b), max_len)


# ---------------------------------------------------------------- determinant route

def _logdet_I_minus_Q(D: LatticeDomain, keep: np.ndarray) -> float:
    if keep.size == 0:
        return 0.0
    m = np.eye(keep.size) - D.Q[np.ix_(keep, keep)]
    sign, logdet = np.linalg.slogdet(m)
    if sign <= 0 or not np.isfinite(logdet):
        raise SingularMatrixError("I - Q is singular on the requested set")
    return float(logdet)


def total_loop_mass(D: LatticeDomain, exclude=()) -> float:
    """-log det(I - Q) on D minus ``exclude``: every loop in that set."""
    ex = set(D.indices(exclude).tolist()) if len(list(exclude)) else set()
    keep = np.array([i for i in range(len(D)) if i not in ex], dtype=np.int64)
    return -_logdet_I_minus_Q(D, keep)


def loop_measure_det(D: LatticeDomain, hit_set) -> float:
    """log det(I - Q_{D minus V}) - log det(I - Q_D): mass of loops in D hitting V."""
    hit_set = list(hit_set)
    if not hit_set:
        return 0.0
    return total_loop_mass(D) - total_loop_mass(D, hit_set)


def loop_mass_hitting_both(D: LatticeDomain, set_a, set_b) -> float:
    """Loops in D hitting both sets, by inclusion-exclusion of determinants."""
    set_a, set_b = list(set_a), list(set_b)
    if not set_a or not set_b:
        return 0.0
    union = set_a + set_b
    return (total_loop_mass(D) - total_loop_mass(D, set_a) - total_loop_mass(D, set_b)
            + total_loop_mass(D, union))


# ---------------------------------------------------------------- SAWs

def enumerate_saws(D: LatticeDomain, z, w=None, max_len: int | None = None, budget: int = 5_000_000):
    """SAWs in D from z to w (or, with w=None, from z to a first site outside D).

    Returns (list of Saw, truncated flag) where truncated means max_len cut
    some walk short.
    """
    z = tuple(z)
    if z not in D:
        raise DomainError("z must be a site of D")
    if w is not None:
        w = tuple(w)
        if w not in D:
            raise DomainError("w must be a site of D")
        if w == z:
            raise DomainError("z and w must differ")
    out = []
    truncated = False
    visited = {z}
    path = [z]
    explored = 0

    def rec():
        nonlocal truncated, explored
        explored += 1
        if explored > budget:
            raise EnumerationBudgetError(f"more than {budget} partial walks")
        x, y = path[-1]
        for dx, dy in STEPS:
            q = (x + dx, y + dy)
            if q in visited:
                continue
            if q not in D:
                if w is None:
                    if max_len is not None and len(path) > max_len:
                        truncated = True
                        continue
                    out.append(Saw(np.array(path + [q])))
                continue
            if max_len is not None and len(path) >= max_len + (0 if w is None else 1):
                truncated = True
                continue
            if q == w:
                out.append(Saw(np.array(path + [q])))
                continue
            visited.add(q)
            path.append(q)
            rec()
            path.pop()
            visited.discard(q)

    rec()
    return out, truncated


@dataclass(frozen=True)
class SawSum:
    Z: float
    n_saws: int
    truncated: bool


def lambda_saw_Z(D: LatticeDomain, z, w, beta: float, lam: float, max_len: int | None = None) -> SawSum:
    """Z = sum over SAWs z -> w in D of exp(-beta |omega| + lambda m(omega, D))."""
    saws, truncated = enumerate_saws(D, z, w, max_len)
    m_all = total_loop_mass(D)
    Z = 0.0
    for s in saws:
        m = m_all - total_loop_mass(D, s.points)
        Z += math.exp(-beta * len(s) + lam * m)
    return SawSum(Z, len(saws), truncated)


def lerw_weight(D: LatticeDomain, omega: Saw) -> float:
    """4^{-|omega|} exp(m(loops in D hitting omega)) for omega ending outside D."""
    inside = [p for p in omega.points if p in D]
    return 4.0 ** (-len(omega)) * math.exp(loop_measure_det(D, inside))


def laplacian_walk_probability(D: LatticeDomain, omega: Saw) -> float:
    """Probability that loop-erased random walk from omega_0, killed on leaving D, equals omega.

    Computed as the Laplacian random walk: each step is chosen with probability
    proportional to the chance that simple random walk from the candidate site
    leaves D before hitting the path drawn so far.  No loop measure is involved.
    """
    pts = omega.points
    if pts[-1] in D or any(p not in D for p in pts[:-1]):
        raise DomainError("omega must stay in D and end at its first site outside D")
    n = len(D)
    prob = 1.0
    for j in range(len(pts) - 1):
        blocked = {D.index[p] for p in pts[:j + 1]}
        free = [i for i in range(n) if i not in blocked]
        esc = np.zeros(n)
        if free:
            fi = np.array(free)
            # h = Q h + (escape in one step); h = 0 on the path
            rhs = np.array([sum(0.25 for k in D.adjacency[i] if k < 0) for i in free])
            m = np.eye(len(free)) - D.Q[np.ix_(fi, fi)]
            esc[fi] = np.linalg.solve(m, rhs)
        x, y = pts[j]

        def h(q):
            if q not in D:
                return 1.0
            i = D.index[q]
            return 0.0 if i in blocked else esc[i]

        weights = {(x + dx, y + dy): h((x + dx, y + dy)) for dx, dy in STEPS}
        tot = sum(weights.values())
        prob *= weights[pts[j + 1]] / tot
    return prob


def boundary_perturbation_ratio(D1: LatticeDomain, D: LatticeDomain, omega: Saw, c: float) -> float:
    """exp{(c/2)[m(omega, D) - m(omega, D1)]} for omega inside D1 within D."""
    pts = omega.points
    if any(p not in D1 for p in pts):
        raise DomainError("omega must lie in D1")
    if any(p not in D for p in D1.sites):
        raise DomainError("D1 must be contained in D")
    return math.exp(0.5 * c * (loop_measure_det(D, pts) - loop_measure_det(D1, pts)))


def paths_intersect(a: Saw, b: Saw) -> bool:
    return bool(set(a.points) & set(b.points))


def multi_path_weight(paths, D: LatticeDomain, p: SleParams) -> float:
    """1{pairwise disjoint} exp{(c/2) sum_j m(loops hitting gamma^j and gamma^1..gamma^{j-1})}."""
    paths = list(paths)
    for i in range(len(paths)):
        for j in range(i + 1, len(paths)):
            if paths_intersect(paths[i], paths[j]):
                return 0.0
    expo = 0.0
    earlier = []
    for g in paths:
        if earlier:
            expo += loop_mass_hitting_both(D, g.points, earlier)
        earlier = earlier + g.points
    return math.exp(0.5 * p.c * expo)


def order_spread(paths, D: LatticeDomain, p: SleParams) -> float:
    """Largest relative change of multi_path_weight over all orderings of ``paths``."""
    vals = [multi_path_weight(perm, D, p) for perm in permutations(paths)]
    ref = vals[0]
    if ref == 0.0:
        return max(abs(v) for v in vals)
    return max(abs(v - ref) / abs(ref) for v in vals)
