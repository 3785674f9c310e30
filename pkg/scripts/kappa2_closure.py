"""Compare the winding-sum table at kappa = 2 with its closed form e^r J / 2."""
import argparse
import math

import numpy as np

from annulus_sle.core_types import derive_params, periodic_grid
from annulus_sle.partition_functions import assemble_tables
from annulus_sle.special_functions import eval_J


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--radii", type=float, nargs="+", default=[0.5, 1.0, 1.5, 2.0])
    ap.add_argument("--nx-out", type=int, default=32)
    ap.add_argument("--nx", type=int, default=512)
    ap.add_argument("--nr", type=int, default=400)
    a = ap.parse_args()
    p = derive_params(2.0)
    x = periodic_grid(a.nx_out)
    tab = assemble_tables(np.array(a.radii), x, p, n_x=a.nx, n_r=a.nr)
    print(f"{'r':>6} {'max rel err':>12}")
    for i, r in enumerate(tab.r_grid):
        exact = 0.5 * math.exp(r) * eval_J(r, x)
        err = np.max(np.abs(tab.F_hat[i] / exact - 1))
        print(f"{r:6.2f} {err:12.3e}")


if __name__ == "__main__":
    main()
