"""Locate the A below which the two-channel potential has two connections.

For each A the straight path (u1 = tanh(y/sqrt2), u2 = 0) is built and the
lowest eigenvalue of the u2 block of the linearization is computed; a negative
value means the straight path is not a minimizer and a bowed pair exists.
The crossing is then refined by bisection and the connection count checked on
both sides.

    python scripts/scan_threshold.py --a-min 0.05 --a-max 1.0 --steps 20
"""

import argparse
import math

import numpy as np
from scipy.optimize import brentq

from layerlab import connect1d as c1
from layerlab import discretization as dz
from layerlab import spectrum as spc
from layerlab.potential import make_two_channel


def straight(spec, grid):
    vals = np.zeros((grid.n, 2))
    vals[:, 0] = np.tanh(grid.nodes / math.sqrt(2.0))
    return dz.Profile1D(grid, vals)


def normal_eig(A, grid):
    spec = make_two_channel(A)
    return spc.normal_block_lowest(spec, straight(spec, grid), 1)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--a-min", type=float, default=0.05)
    ap.add_argument("--a-max", type=float, default=1.0)
    ap.add_argument("--steps", type=int, default=20)
    ap.add_argument("--y-max", type=float, default=30.0)
    ap.add_argument("--n", type=int, default=2001)
    args = ap.parse_args()

    grid = dz.Grid1D(args.y_max, args.n)
    As = np.linspace(args.a_min, args.a_max, args.steps)
    print(f"{'A':>8}  {'lambda_normal':>14}")
    vals = []
    for A in As:
        lam = normal_eig(A, grid)
        vals.append(lam)
        print(f"{A:8.4f}  {lam:14.6e}")
    sign = np.sign(vals)
    idx = np.nonzero(np.diff(sign))[0]
    if not len(idx):
        print("no sign change on the scanned range")
        return
    lo, hi = As[idx[0]], As[idx[0] + 1]
    A_star = brentq(lambda a: normal_eig(a, grid), lo, hi, xtol=1e-8)
    print(f"threshold A* = {A_star:.6f}")
    for A in (0.9 * A_star, 1.1 * A_star):
        cs = c1.find_all_connections(make_two_channel(A), dz.Grid1D(max(20.0, 13.5 / math.sqrt(A)), 2001))
        print(f"A = {A:.4f}: N = {cs.N}, labels {cs.labels}")


if __name__ == "__main__":
    main()
