"""Global error and observed order of each ODE solver on dx/dt = x and dx/dt = sin(t) x."""

import argparse
import math

import numpy as np

from pixkit.flow import SOLVERS, Schedule, integrate

PROBLEMS = {
    "x": (lambda x, t, ci, ct: x, math.e),
    "sin(t)x": (lambda x, t, ci, ct: math.sin(t) * x, math.exp(1 - math.cos(1.0))),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, nargs="+", default=[8, 16, 32, 64, 128])
    args = ap.parse_args()
    for name, (field, exact) in PROBLEMS.items():
        print(f"\nf(x,t) = {name}")
        print(f"{'solver':<9} {'steps':>6} {'nfe':>5} {'error':>12} {'order':>7}")
        for solver in SOLVERS:
            prev = None
            for n in args.steps:
                r = integrate(field, np.array([1.0]), Schedule(n), solver)
                err = abs(r.x[0] - exact)
                order = "" if prev is None else f"{math.log2(prev / err):7.3f}"
                print(f"{solver:<9} {n:>6} {r.nfe:>5} {err:>12.3e} {order:>7}")
                prev = err


if __name__ == "__main__":
    main()
