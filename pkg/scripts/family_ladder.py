"""Diagnostics of the mollified family of a bundled scenario's surface over an eps ladder."""

import argparse
import json

from alexflow.approximation import build_family
from alexflow.cli import load_scenario, resolve_scenario_path
from alexflow.distance import default_samples


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("scenario", nargs="?", default="two_cones")
    ap.add_argument("--ladder-h", type=float, nargs="+", default=None)
    args = ap.parse_args()

    sc = load_scenario(resolve_scenario_path(args.scenario))
    h = sc.spec.grid.h
    ladder = args.ladder_h or sc.eps_ladder_h
    fam = build_family(sc.spec, [k * h for k in ladder], default_samples(sc.spec.grid, sc.per_side))
    print(json.dumps(fam.report(), indent=2))


if __name__ == "__main__":
    main()
