"""Command line entry point: ``ames run|check|sweep-election|bench-join|bench-expel``.

Exit codes: 0 ok, 1 invariant violation, 2 parse or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import math
import sys
from pathlib import Path
from typing import Optional

from ..types import ConfigError
from . import experiments as ex
from .scenario import RunResult, ScenarioError, parse_scenario, run_scenario, validate

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG = 0, 1, 2


def _int_list(text: str) -> list:
    return [int(x) for x in text.split(",") if x]


def _ranges(text: str) -> list:
    return [ex.parse_range(x) for x in text.split(",") if x]


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text == "on"


def _load(path: str, seed: Optional[int]):
    text = Path(path).read_text()
    scen = parse_scenario(text)
    if seed is not None:
        scen = dataclasses.replace(scen, cluster=dataclasses.replace(scen.cluster, seed=seed))
    validate(scen, text)
    return scen


def metrics_csv(res: RunResult) -> str:
    rep = res.report
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "index", "value"])
    for name in ("election_latency_us", "new_process_latency_us", "expel_latency_us"):
        for i, v in enumerate(getattr(rep, name)):
            w.writerow([name, i, v])
    w.writerow(["ias_call_count", 0, rep.ias_call_count])
    w.writerow(["owner_ias_calls", 0, rep.owner_ias_calls])
    for i, (a, b) in enumerate(rep.anarchy_intervals):
        w.writerow(["anarchy_interval_us", i, f"{a}-{b}"])
    w.writerow(["seals", 0, rep.seals])
    w.writerow(["final_convergence", 0, int(rep.final_convergence)])
    w.writerow(["violations", 0, len(res.violations)])
    return buf.getvalue()


def _summary(res: RunResult, out) -> None:
    rep = res.report
    fmt = lambda xs: ", ".join(f"{x / 1000:.2f}" for x in xs) or "-"
    print(f"events: {len(res.trace)} trace records, clock {res.sim.clock / 1000:.1f} ms", file=out)
    print(f"elections (ms): {fmt(rep.election_latency_us)}", file=out)
    print(f"joins (ms): {fmt(rep.new_process_latency_us)}", file=out)
    print(f"expels (ms): {fmt(rep.expel_latency_us)}", file=out)
    print(f"ias calls: {rep.ias_call_count} (owner {rep.owner_ias_calls})", file=out)
    if rep.anarchy_intervals:
        spans = ", ".join(f"{a / 1000:.1f}-{b / 1000:.1f}" for a, b in rep.anarchy_intervals)
        print(f"anarchy (ms): {spans}", file=out)
    if rep.halted:
        print(f"halted: {' '.join(rep.halted)}", file=out)
    if not res.convergence:
        print(f"not converged: {res.convergence.detail}", file=out)
    for v in res.violations:
        print(f"VIOLATION {v}", file=out)


def cmd_run(args) -> int:
    scen = _load(args.scenario, args.seed)
    res = run_scenario(scen)
    if args.trace:
        Path(args.trace).write_text("\n".join(res.sim.trace_lines()) + "\n")
    if args.csv:
        Path(args.csv).write_text(metrics_csv(res))
    _summary(res, sys.stdout)
    return EXIT_OK if res.ok else EXIT_VIOLATION


def cmd_check(args) -> int:
    scen = _load(args.scenario, args.seed)
    res = run_scenario(scen)
    if res.ok:
        print("ok")
        return EXIT_OK
    if res.violations:
        first = res.violations[0]
        print(f"first violation at trace[{first.index}]: {first}")
        for v in res.violations[1:]:
            print(f"  {v}")
    if not res.convergence:
        print(f"not converged at trace[{res.convergence.index}]: {res.convergence.detail}")
    return EXIT_VIOLATION


def _emit(rows: list, path: Optional[str]) -> None:
    text = ex.to_csv(rows)
    if path:
        Path(path).write_text(text)
    for c in ex.cells(rows).values():
        mean = "inf" if math.isinf(c.mean_us) else f"{c.mean_us / 1000:.2f}"
        lost = f" ({c.missing} lost)" if c.missing else ""
        print(f"{c.profile} n={c.n} {c.range}: mean {mean} ms over {len(c.values) + c.missing} runs{lost}")
    if not path:
        sys.stdout.write(text)


def cmd_sweep(args) -> int:
    rows = ex.sweep_election(args.n, args.ranges, args.profile, args.runs, args.seed)
    _emit(rows, args.csv)
    return EXIT_OK


def cmd_join(args) -> int:
    rows = ex.measure_new_process(args.n, args.profile, args.had, args.runs, args.seed)
    _emit(rows, args.csv)
    return EXIT_OK


def cmd_expel(args) -> int:
    lo, hi = ex.parse_range(args.range)
    rows = ex.measure_expel(args.n, lo, hi, args.profile, args.runs, args.seed)
    _emit(rows, args.csv)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ames", description="Membership-service simulator and benchmarks")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="simulate a scenario file")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int)
    p.add_argument("--trace", help="write the trace, one t,p,kind,detail record per line")
    p.add_argument("--csv", help="write run metrics as CSV")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("check", help="simulate and exit nonzero on any invariant violation")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_check)

    def bench(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--n", type=_int_list, default=[5, 9, 17, 33])
        p.add_argument("--profile", choices=("local", "gcp"), default="local")
        p.add_argument("--runs", type=int, default=20)
        p.add_argument("--seed", type=int, default=0, help="first seed")
        p.add_argument("--csv")
        p.set_defaults(fn=fn)
        return p

    p = bench("sweep-election", cmd_sweep, "leader election latency after a leader crash")
    p.add_argument("--ranges", type=_ranges, default=_ranges("50-150,100-200,150-250,200-300"))
    p = bench("bench-join", cmd_join, "commissioning latency of one new process")
    p.add_argument("--had", type=_on_off, default=False)
    p = bench("bench-expel", cmd_expel, "latency from a follower crash to its expulsion")
    p.add_argument("--range", default="25-50")
    return ap


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "runs", 1) < 1:
        print("error: --runs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(args)
    except (ScenarioError, ConfigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
