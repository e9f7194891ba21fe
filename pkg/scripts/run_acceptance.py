"""Run configs/acceptance.yaml and print one line per task plus a per-criterion tally."""

import argparse
import sys
from collections import defaultdict
from pathlib import Path

from rvpaths import cli

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(ROOT / "results" / "acceptance"))
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    manifest = cli.run(ROOT / "configs" / "acceptance.yaml", workers=args.workers, out=args.out, ci=True,
                       log=lambda m: print(m, file=sys.stderr))
    by_criterion = defaultdict(list)
    for t in manifest.tasks:
        by_criterion[t["id"].split("-")[0]].append(t["passed"])
        print(f"{'PASS' if t['passed'] else 'FAIL'} {t['id']}")
    for crit, flags in by_criterion.items():
        print(f"{crit}: {sum(flags)}/{len(flags)} tasks pass")
    return 0 if manifest.passed else 1


if __name__ == "__main__":
    sys.exit(main())
