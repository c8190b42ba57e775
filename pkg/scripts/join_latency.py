"""Commissioning latency of one new process, with and without host attestation delegates."""
import argparse
from pathlib import Path

from ames.harness import experiments as ex


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", default="5,9,17,33")
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    ns = [int(x) for x in args.n.split(",")]
    out = Path(args.out)
    out.mkdir(exist_ok=True)
    for profile in ("local", "gcp"):
        rows = []
        for had in (False, True):
            rows += ex.measure_new_process(ns, profile, had, args.runs)
        (out / f"join_{profile}.csv").write_text(ex.to_csv(rows))
        for (p, n, mode), c in sorted(ex.cells(rows).items()):
            ias = max(dict(r.extra)["ias_calls"] for r in rows if (r.n, r.range) == (n, mode))
            print(f"{p:5} n={n:2} {mode:7}  mean {c.mean_us / 1000:7.2f} ms  ias calls per join {ias}")


if __name__ == "__main__":
    main()
