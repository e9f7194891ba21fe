"""Simulate one shot-noise path and write it as JSON and CSV (grid export)."""

import argparse
from pathlib import Path

from rvpaths import rng
from rvpaths.procsim import ExpEta, JumpLaw, ShotNoise


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--T", type=float, default=100.0)
    ap.add_argument("--alpha", type=float, default=1.5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--step", type=float, default=0.1, help="grid step of the CSV export")
    ap.add_argument("--out", default="path")
    args = ap.parse_args()
    model = ShotNoise(ExpEta(1.0), JumpLaw(args.alpha))
    path = model.simulate(rng.substream(args.seed, "simulate-path"), args.T).path
    out = Path(args.out)
    out.with_suffix(".json").write_text(path.to_json())
    out.with_suffix(".csv").write_text(path.to_csv(args.step))
    print(f"{len(path.breakpoints)} pieces on [0, {args.T}) -> {out}.json, {out}.csv")


if __name__ == "__main__":
    main()
