"""Bandwidth pilot: mean L2 error of the oracle DR curve for each constant c.

Uses seeds disjoint from the acceptance runs. Record the winner as
``experiment.c`` in configs/reference_sim.yaml.
"""

import argparse
import json

from drcut.experiment import load_config, pilot_bandwidth
from drcut.sim import ScenarioConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--n", type=int, default=5000)
    ap.add_argument("--reps", type=int, default=30)
    ap.add_argument("--c", type=float, action="append", help="candidate constants (repeatable)")
    ap.add_argument("--seed", type=int, default=99)
    args = ap.parse_args()
    scenario = ScenarioConfig.from_dict(load_config(args.config).get("scenario", {})) if args.config else ScenarioConfig()
    cs = tuple(args.c) if args.c else (4, 6, 8, 10, 12)
    print(json.dumps(pilot_bandwidth(scenario, n=args.n, reps=args.reps, cs=cs, seed=args.seed), indent=2))


if __name__ == "__main__":
    main()
