"""Latency from a follower crash until its expulsion commits."""
import argparse
from pathlib import Path

from ames.harness import experiments as ex

RANGES = {"local": "25-50", "gcp": "200-300"}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", default="5,9,17,33")
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    ns = [int(x) for x in args.n.split(",")]
    out = Path(args.out)
    out.mkdir(exist_ok=True)
    for profile, rng in RANGES.items():
        lo, hi = ex.parse_range(rng)
        rows = ex.measure_expel(ns, lo, hi, profile, args.runs)
        (out / f"expel_{profile}.csv").write_text(ex.to_csv(rows))
        for (p, n, r), c in sorted(ex.cells(rows).items()):
            print(f"{p:5} n={n:2} T={r} ms  mean {c.mean_us / 1000:7.2f} ms  lost {c.missing}")


if __name__ == "__main__":
    main()
