"""Command line interface: ``annulus-sle <group> <command> [flags]``.

Every run echoes its full configuration (including the seed) at the top of
its output, so rerunning with those flags reproduces the numbers exactly.
CSV output carries the echo as leading ``# key=value`` lines; JSON output
carries it under ``"config"``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .core_types import DomainError, derive_params, periodic_grid

@dataclass
class RunConfig:
    command: str
    parameters: dict = field(default_factory=dict)
    seed: int | None = None
    output_path: str | None = None

    def echo_lines(self) -> list[str]:
        items = {"command": self.command, **self.parameters}
        if self.seed is not None:
            items["seed"] = self.seed
        return [f"{k}={v}" for k, v in items.items()]

    def as_dict(self) -> dict:
        d = {"command": self.command, **self.parameters}
        if self.seed is not None:
            d["seed"] = self.seed
        return d


def read_config_file(path: str) -> dict:
    """Plain ``key=value`` lines; ``#`` starts a comment; keys use flag names."""
    out = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected key=value")
            k, v = line.split("=", 1)
            out[k.strip().lstrip("-").replace("-", "_")] = v.strip()
    return out


# ---------------------------------------------------------------- flag types

def _point(text: str) -> tuple[int, int]:
    try:
        a, b = text.split(",")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y integers, got {text!r}")


def _domain(text: str) -> str:
    try:
        w, h = text.lower().split("x")
        if int(w) < 1 or int(h) < 1:
            raise ValueError
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected <w>x<h>, got {text!r}")
    return text


def _pos_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


# ---------------------------------------------------------------- output

class Output:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg

    def _write(self, text: str):
        if self.cfg.output_path:
            with open(self.cfg.output_path, "w", newline="") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)

    def csv(self, header, rows):
        buf = io.StringIO()
        for line in self.cfg.echo_lines():
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) for v in row])
        self._write(buf.getvalue())

    def json(self, payload: dict):
        body = {"config": self.cfg.as_dict(), **payload}
        self._write(json.dumps(body, indent=2, default=_plain) + "\n")


def _num(v):
    # CSV cells: shortest round-trip repr for floats
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _plain(v):
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialize {type(v).__name__}")


# ---------------------------------------------------------------- handlers

SCALAR_FNS = ("Gamma", "delta", "mstar")


def cmd_fn_tabulate(a, cfg, out):
    from . import special_functions as sf
    tol = a.tol if a.tol is not None else sf.DEFAULT_TOL
    trunc = sf.SumTruncation(abs_tol=tol)
    name = a.name
    if name in SCALAR_FNS:
        if name == "mstar":
            val, bound = sf.eval_mstar(a.r), 0.0
        elif name == "delta":
            val, t = sf.eval_delta(a.r, trunc, full=True)
            bound = t.achieved_tail_bound
        else:
            g, _ = sf.eval_Gamma_delta(a.r, trunc)
            _, t = sf.eval_delta(a.r, trunc, full=True)
            val, bound = g, t.achieved_tail_bound
        out.csv(["r", "x", "value", "tail_bound"], [(a.r, "", val, bound)])
        return 0
    if name in ("Atilde", "HItilde", "Ltilde"):
        x = 2 * math.pi * (np.arange(a.x_grid) + 0.5) / a.x_grid
        at, hit, lt = sf.eval_tilde_functions(a.r, x, trunc)
        vals = {"Atilde": at, "HItilde": hit, "Ltilde": lt}[name]
        rows = [(a.r, xi, v, tol if name != "Ltilde" else 0.0) for xi, v in zip(x, vals)]
        out.csv(["r", "x", "value", "tail_bound"], rows)
        return 0
    x = periodic_grid(a.x_grid)
    if name == "L":
        vals, bound = sf.eval_L(a.r, x), 0.0
    else:
        fn = {"J": sf.eval_J, "HI": sf.hi_closed_form, "A": sf.eval_A}[name]
        vals, t = fn(a.r, x, trunc, full=True)
        bound = t.achieved_tail_bound
    out.csv(["r", "x", "value", "tail_bound"], [(a.r, xi, v, bound) for xi, v in zip(x, vals)])
    return 0


def cmd_loewner_trace(a, cfg, out):
    from .loewner import brownian_driver, curve_from_driving, zero_driver
    p = derive_params(a.kappa)
    if a.driver == "zero":
        U = zero_driver(a.t, a.dt)
    else:
        U = brownian_driver(a.t, a.dt, a.kappa, cfg.seed)
    curve = curve_from_driving(U, p)
    out.csv(["t", "re", "im"], [(t, z.real, z.imag) for t, z in zip(curve.times, curve.points)])
    return 0


def cmd_loewner_rdot(a, cfg, out):
    from .loewner import measure_r_dot, vertical_slit_curve
    p = derive_params(a.kappa)
    val = measure_r_dot(p, vertical_slit_curve(p, a.t_max, a.n_fit), a.r0, a.n_fit)
    if cfg.output_path:
        out.json({"rdot": val})
    else:
        print(repr(val))
    return 0


def cmd_sde_sample(a, cfg, out):
    from .sde import SdeSpec, simulate
    spec = SdeSpec(a.kind, a.r, a.kappa)
    rows = []
    for i in range(a.n):
        path = simulate(spec, a.x0, a.dt, cfg.seed, path_index=i)
        for t, x in zip(path.times, path.samples):
            rows.append((i, t, x))
    out.csv(["path_id", "t", "x"], rows)
    return 0


def cmd_pf_v(a, cfg, out):
    from .partition_functions import PdeProblem, V_monte_carlo, V_pde_solve
    p = derive_params(a.kappa)
    if a.mode == "mc":
        est = V_monte_carlo(a.r, a.x, a.n_paths, a.dt, p, cfg.seed, threads=a.threads)
        out.json(est.to_dict())
    else:
        sol = V_pde_solve(PdeProblem("pde", a.r, a.nx, a.nr, r_out=(a.r,)), p)
        v, w = sol.value(a.r, a.x)
        out.json({"value": v, "deficit": w})
    return 0


def cmd_pf_table(a, cfg, out):
    from .partition_functions import assemble_tables
    p = derive_params(a.kappa)
    r_grid = np.linspace(a.r_max / a.n_rows, a.r_max, a.n_rows)
    x_grid = periodic_grid(a.nx_out)
    tol = a.tol if a.tol is not None else 1e-12
    tab = assemble_tables(r_grid, x_grid, p, n_x=a.nx, n_r=a.nr, tol=tol)
    rows = []
    for i, r in enumerate(tab.r_grid):
        for j, x in enumerate(tab.x_grid):
            rows.append((r, x, tab.V[i, j], tab.Psi_tilde[i, j], tab.F[i, j], tab.F_hat[i, j], tab.K[i, j]))
    out.csv(["r", "x", "V", "Psi_tilde", "F", "Fhat", "K"], rows)
    return 0


def cmd_pf_residual(a, cfg, out):
    from .partition_functions import pde_residual, read_grid_csv
    cols = read_grid_csv(a.infile)
    col = a.column or {"pde": "V", "fpde2": "Fhat", "kpde": "K", "kappa2": "K"}[a.eq]
    if col not in cols:
        print(f"error: column {col!r} not in {a.infile}", file=sys.stderr)
        return 2
    rs, xs = cols["r"], cols["x"]
    p = derive_params(a.kappa)
    periodic = a.eq != "pde"
    res, r_nodes, sup = pde_residual(rs, xs, cols[col], a.eq, p, periodic=periodic)
    used = xs if periodic else xs[1:-1]
    out.csv(["r", "x", "residual"],
            [(r, x, res[i, j]) for i, r in enumerate(r_nodes) for j, x in enumerate(used)])
    return 0


def cmd_lattice_z(a, cfg, out):
    from .lattice import LatticeDomain, lambda_saw_Z
    D = LatticeDomain.parse(a.domain)
    res = lambda_saw_Z(D, a.z, a.w, a.beta, a.lam, a.max_len)
    out.json({"Z": res.Z, "n_saws": res.n_saws, "truncated": res.truncated})
    return 0


def cmd_lattice_lerw(a, cfg, out):
    from .lattice import LatticeDomain, enumerate_saws, laplacian_walk_probability, lerw_weight
    D = LatticeDomain.parse(a.domain)
    dev = 0.0
    n = 0
    for z in D.sites:
        saws, _ = enumerate_saws(D, z)
        for s in saws:
            n += 1
            dev = max(dev, abs(lerw_weight(D, s) - laplacian_walk_probability(D, s)))
    tol = a.tol if a.tol is not None else 1e-12
    ok = dev <= tol
    out.json({"passed": ok, "max_deviation": dev, "n_saws": n, "tol": tol})
    return 0 if ok else 1


def cmd_verify(a, cfg, out):
    from .verify import verify_all
    results = verify_all(a.level, threads=a.threads, seed=cfg.seed,
                         echo=lambda s: print(s, file=sys.stderr))
    payload = {"level": a.level, "passed": all(r.passed for r in results),
               "criteria": [r.to_dict() for r in results]}
    out.json(payload)
    return 0 if payload["passed"] else 1


# ---------------------------------------------------------------- parser

def _global(sp):
    sp.add_argument("--seed", type=int, help="master seed (drawn from entropy and printed if omitted)")
    sp.add_argument("--threads", type=_pos_int, help="worker threads (default: logical cores)")
    sp.add_argument("--tol", type=float, help="truncation / pass tolerance where applicable")
    sp.add_argument("--out", "-o", help="write output here instead of stdout")
    sp.add_argument("--config", help="plain key=value file supplying defaults for flags")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="annulus-sle", description=__doc__.splitlines()[0])
    groups = ap.add_subparsers(dest="group", required=True)

    def leaf(parent, name, fn, needs_seed=False):
        sp = parent.add_parser(name)
        _global(sp)
        sp.set_defaults(fn=fn, needs_seed=needs_seed)
        return sp

    fn = groups.add_parser("fn").add_subparsers(dest="cmd", required=True)
    sp = leaf(fn, "tabulate", cmd_fn_tabulate)
    sp.add_argument("--name", required=True,
                    choices=["J", "HI", "A", "L", "Gamma", "delta", "mstar", "Atilde", "HItilde", "Ltilde"])
    sp.add_argument("--r", type=float, required=True)
    sp.add_argument("--x-grid", type=_pos_int, default=64)

    lw = groups.add_parser("loewner").add_subparsers(dest="cmd", required=True)
    sp = leaf(lw, "trace", cmd_loewner_trace, needs_seed=True)
    sp.add_argument("--driver", choices=["zero", "bm"], default="bm")
    sp.add_argument("--kappa", type=float, required=True)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--t", type=float, default=1.0)
    sp = leaf(lw, "rdot", cmd_loewner_rdot)
    sp.add_argument("--kappa", type=float, required=True)
    sp.add_argument("--r0", type=float, default=1.0)
    sp.add_argument("--t-max", type=float, default=2e-4)
    sp.add_argument("--n-fit", type=_pos_int, default=4)

    sd = groups.add_parser("sde").add_subparsers(dest="cmd", required=True)
    sp = leaf(sd, "sample", cmd_sde_sample, needs_seed=True)
    sp.add_argument("--kind", choices=["locally_chordal", "tilde_chordal", "hi_drift"], required=True)
    sp.add_argument("--kappa", type=float, required=True)
    sp.add_argument("--r", type=float, required=True)
    sp.add_argument("--x0", type=float, required=True)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--n", type=_pos_int, default=1)

    pf = groups.add_parser("pf").add_subparsers(dest="cmd", required=True)
    sp = leaf(pf, "v", cmd_pf_v, needs_seed=True)
    sp.add_argument("--mode", choices=["mc", "pde"], required=True)
    sp.add_argument("--kappa", type=float, default=3.0)
    sp.add_argument("--r", type=float, required=True)
    sp.add_argument("--x", type=float, required=True)
    sp.add_argument("--n-paths", type=_pos_int, default=10_000)
    sp.add_argument("--dt", type=float, default=2e-4)
    sp.add_argument("--nx", type=_pos_int, default=512)
    sp.add_argument("--nr", type=_pos_int, default=1600)
    sp = leaf(pf, "table", cmd_pf_table)
    sp.add_argument("--kappa", type=float, required=True)
    sp.add_argument("--r-max", type=float, required=True)
    sp.add_argument("--n-rows", type=_pos_int, default=20)
    sp.add_argument("--nx-out", type=_pos_int, default=64)
    sp.add_argument("--nx", type=_pos_int, default=512)
    sp.add_argument("--nr", type=_pos_int, default=600)
    sp = leaf(pf, "residual", cmd_pf_residual)
    sp.add_argument("--eq", choices=["pde", "fpde2", "kpde", "kappa2"], required=True)
    sp.add_argument("--in", dest="infile", required=True)
    sp.add_argument("--kappa", type=float, default=2.0)
    sp.add_argument("--column", help="column to test (default by equation)")

    lt = groups.add_parser("lattice").add_subparsers(dest="cmd", required=True)
    sp = leaf(lt, "z", cmd_lattice_z)
    sp.add_argument("--domain", type=_domain, required=True)
    sp.add_argument("--z", type=_point, required=True)
    sp.add_argument("--w", type=_point, required=True)
    sp.add_argument("--beta", type=float, required=True)
    sp.add_argument("--lambda", dest="lam", type=float, required=True)
    sp.add_argument("--max-len", type=_pos_int)
    sp = leaf(lt, "lerw-check", cmd_lattice_lerw)
    sp.add_argument("--domain", type=_domain, default="3x3")

    sp = groups.add_parser("verify")
    _global(sp)
    sp.set_defaults(fn=cmd_verify, needs_seed=True, cmd="")
    sp.add_argument("--level", choices=["fast", "full"], default="fast")
    return ap


def _apply_config(ap: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif tok.startswith("--config="):
            path = tok.split("=", 1)[1]
    if path is None:
        return ap.parse_args(argv)
    try:
        extra = read_config_file(path)
    except (OSError, ValueError) as exc:
        ap.error(str(exc))
    # config values act as flags placed before the command line ones, which win
    pre = []
    for k, v in extra.items():
        pre += [f"--{k.replace('_', '-')}", v]
    n_sub = 1 if argv and argv[0] == "verify" else 2
    return ap.parse_args(argv[:n_sub] + pre + argv[n_sub:])


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    a = _apply_config(ap, argv)
    if a.threads is None:
        a.threads = os.cpu_count() or 1
    seed = a.seed
    if a.needs_seed and seed is None:
        from .rng import entropy_seed
        seed = entropy_seed()
        print(f"seed={seed}", file=sys.stderr)
    skip = {"fn", "needs_seed", "group", "cmd", "seed", "out", "config", "threads"}
    # echo under flag names so the lines can be fed back through --config
    flag = {"lam": "lambda", "infile": "in"}
    params = {flag.get(k, k): (f"{v[0]},{v[1]}" if isinstance(v, tuple) else v)
              for k, v in vars(a).items() if k not in skip and v is not None}
    command = " ".join(x for x in (a.group, a.cmd) if x)
    cfg = RunConfig(command, params, seed if a.needs_seed else None, a.out)
    try:
        return a.fn(a, cfg, Output(cfg))
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
