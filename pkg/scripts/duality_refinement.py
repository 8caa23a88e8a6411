"""Duality residual of a mollification pair under refinement of the shared time mesh."""

import argparse
import math

from alexflow.flow import FlowControls, run_flow, uniform_store_times
from alexflow.grid import make_grid
from alexflow.potential import one_atom_spec, solve_potential
from alexflow.verification import default_eta, duality_terms


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=128)
    ap.add_argument("--pair-h", type=float, nargs=2, default=[4.0, 2.0])
    ap.add_argument("--intervals", type=float, nargs="+", default=[1e-3, 5e-4, 2.5e-4])
    ap.add_argument("--t-end", type=float, default=0.05)
    args = ap.parse_args()

    g = make_grid(args.n, args.n)
    spec = one_atom_spec(g, mass=math.pi, volume=6.0)
    w = [solve_potential(-spec.curvature, spec.volume, k * g.h).w for k in args.pair_h]
    s = args.t_end / 10
    prev = None
    print("interval      residual      residual/L1   ratio   psi range")
    for dt in args.intervals:
        controls = FlowControls(t_end=args.t_end, store_times=uniform_store_times(args.t_end, dt))
        t1, t2 = (run_flow(wi, controls) for wi in w)
        terms = duality_terms(t1, t2, default_eta(g), s, args.t_end)
        ratio = "" if prev is None else f"{prev / terms.residual:.2f}"
        print(f"{dt:<12.3g}  {terms.residual:<12.4e}  {terms.residual / terms.l1_at_s:<12.4e}  {ratio:<6}  "
              f"[{terms.backward.min_value:.6f}, {terms.backward.max_value:.6f}]")
        prev = terms.residual


if __name__ == "__main__":
    main()
