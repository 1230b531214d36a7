"""Re-run the three-case comparison on the surrogate arm.

Runs ``pbic compare`` on the shipped presets, then writes ``angles.csv``
with the joint trajectories of every case on one time grid, ready for
external plotting.

    python scripts/reenact_case_comparison.py --out runs/reenact [--duration 20]
"""

import argparse
import csv
import sys
from pathlib import Path

from pbic.cli import main as cli_main
from pbic.sim import Trajectory

CASES = ("case1", "case2", "case3")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/reenact")
    parser.add_argument("--duration", type=float, default=None)
    parser.add_argument("--jobs", type=int, default=None)
    args = parser.parse_args()

    argv = ["compare", "--out", args.out]
    for case in CASES:
        argv += ["--config", case]
    if args.duration is not None:
        argv += ["--duration", str(args.duration)]
    if args.jobs is not None:
        argv += ["--jobs", str(args.jobs)]
    status = cli_main(argv)
    if status:
        return status

    out = Path(args.out)
    trajs = [Trajectory.from_csv(out / f"{i:02d}_{case}" / "trajectory.csv") for i, case in enumerate(CASES)]
    n = trajs[0].dof
    with open(out / "angles.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"{case}_q{j + 1}" for case in CASES for j in range(n)])
        for k, t in enumerate(trajs[0].times):
            writer.writerow([repr(float(t))] + [repr(float(tr.q[k, j])) for tr in trajs for j in range(n)])
    print(f"wrote {out / 'angles.csv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
