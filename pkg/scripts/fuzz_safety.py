"""Run random adversarial schedules and report any safety violation."""
import argparse
import sys
import time

from ames.harness.fuzz import fuzz


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--runs", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--show", action="store_true", help="print the scenario of each failing run")
    args = ap.parse_args()
    t0 = time.time()
    bad = 0
    for o in fuzz(args.runs, seed0=args.seed):
        if not o.ok:
            bad += 1
            print(f"seed {o.seed} n={o.n}: {o.violations[0]}")
            if args.show:
                print(o.text)
    print(f"{args.runs} runs, {bad} with violations, {time.time() - t0:.1f}s")
    sys.exit(1 if bad else 0)


if __name__ == "__main__":
    main()
