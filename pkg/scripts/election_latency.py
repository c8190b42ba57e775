"""Leader-election latency after a leader crash, local and GCP profiles."""
import argparse
import math
from pathlib import Path

from ames.harness import experiments as ex

LOCAL_RANGES = "50-150,100-200,150-250,200-300"
GCP_RANGES = "50-100,200-300"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", default="5,9,17,33")
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    ns = [int(x) for x in args.n.split(",")]
    out = Path(args.out)
    out.mkdir(exist_ok=True)
    for profile, ranges in (("local", LOCAL_RANGES), ("gcp", GCP_RANGES)):
        rows = ex.sweep_election(ns, [ex.parse_range(r) for r in ranges.split(",")], profile, args.runs)
        (out / f"election_{profile}.csv").write_text(ex.to_csv(rows))
        for (p, n, rng), c in sorted(ex.cells(rows).items()):
            mean = "inf" if math.isinf(c.mean_us) else f"{c.mean_us / 1000:7.1f}"
            print(f"{p:5} n={n:2} {rng:>7} ms  mean {mean} ms  median {c.median_us / 1000:7.1f} ms  lost {c.missing}")


if __name__ == "__main__":
    main()
