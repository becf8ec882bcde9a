"""Watch minimizers of the weighted functional approach the damped wave solution.

Solves the eps continuation for one preset, integrates the same problem
with the method-of-lines reference and prints the error table together
with the iteration counts of the minimizer.

    python demos/convergence.py [--preset telegraph] [--p 4] [--n-x 64]
"""

import argparse
import math

import numpy as np

from widewave import ProblemSpec, SpatialGrid, continuation, convergence_table, preset, solve_mol

SCHEDULE = (0.4, 0.2, 0.1, 0.05)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="telegraph")
    ap.add_argument("--p", type=float, default=2.0)
    ap.add_argument("--n-x", type=int, default=64)
    ap.add_argument("--tau", type=float, default=0.05)
    args = ap.parse_args()
    g = SpatialGrid(args.n_x)
    s = g.mode(1)
    params = {} if args.preset == "wave" else {"p": args.p}
    P = ProblemSpec(*preset(args.preset, **params), g, s, s, 1.0)
    fam = continuation(P, SCHEDULE, tau=args.tau)
    ref = solve_mol(P)
    size = math.sqrt(float(np.max(g.norm_sq(ref.data))))
    print(f"{'eps':>6} {'iters':>6} {'err_sup_L2':>12} {'relative':>9} {'err_H1_time':>12}")
    for m, row in zip(fam, convergence_table(fam, ref)):
        print(f"{row['eps']:6g} {m.result.iterations:6d} {row['err_sup_L2']:12.4e} "
              f"{row['err_sup_L2'] / size:9.4f} {row['err_H1_time']:12.4e}")


if __name__ == "__main__":
    main()
