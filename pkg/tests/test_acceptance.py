"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` or as a script.
"""
import itertools
import math
import time

import pytest

from ames.attest import AttestRegistry, LatencyModel, Measurement
from ames.harness import experiments as ex
from ames.harness.cli import metrics_csv
from ames.harness.fuzz import fuzz, random_scenario_text
from ames.harness.observers import check_safety, secret_confinement, silent_after, terminal_roles
from ames.harness.scenario import parse_scenario, run_scenario
from ames.types import ClusterCensus, ProcessId, is_anarchy

from conftest import ACCEPTANCE_LINES, SCENARIOS, scenario_path

N_LIST = [5, 9, 17, 33]
RANGES = ["50-150", "100-200", "150-250", "200-300"]
RUNS = 20


def verdict(k, ok, detail, elapsed):
    line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail} [{elapsed:.1f}s]"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def ms(us):
    return "inf" if math.isinf(us) else f"{us / 1000:.1f}"


# ---------------------------------------------------------------- 1


def test_criterion_1_anarchy_predicate():
    t0 = time.perf_counter()
    labelled = {(5, 2, 0): False, (5, 1, 1): False, (5, 1, 2): True}
    ok = all(is_anarchy(ClusterCensus(*k)) is v for k, v in labelled.items())
    checked = 0
    for n in range(1, 65):
        majority = next(k for k in range(1, n + 1) if 2 * k > n)
        for f in range(n + 1):
            for i in range(n - f + 1):
                ok &= is_anarchy(ClusterCensus(n, f, i)) == (n - f - i < majority)
                checked += 1
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 1.0
    verdict(1, ok, f"3 labelled cases and {checked} censuses up to n=64 agree", elapsed)


# ---------------------------------------------------------------- 2


def test_criterion_2_safety_under_adversarial_schedules():
    t0 = time.perf_counter()
    bad = [o for o in fuzz(1000, sizes=(3, 5, 7)) if not o.ok]
    elapsed = time.perf_counter() - t0
    first = f"; first: seed {bad[0].seed} {bad[0].violations[0]}" if bad else ""
    verdict(2, not bad and elapsed < 300, f"1000 random schedules, {len(bad)} with violations{first}", elapsed)


# ---------------------------------------------------------------- 3


def test_criterion_3_suicide_fulfillment():
    t0 = time.perf_counter()
    scen = parse_scenario(scenario_path("unjust_expel").read_text())
    res = run_scenario(scen, record_messages=True)
    t = scen.timeouts()
    bound = t.candidature_timeout_us + t.heartbeat_max_us
    commit = next(tt for tt, p, k, d in res.trace if k == "qcommit" and d.endswith("expel:p3"))
    halts = [(tt, d) for tt, p, k, d in res.trace if p == "p3" and k == "halt"]
    reactions = silent_after(res.trace, "p3", commit)
    ok = bool(halts) and halts[0][0] - commit <= bound and not reactions and res.ok
    gap = halts[0][0] - commit if halts else math.inf
    verdict(3, ok, f"p3 halted ({halts[0][1] if halts else '-'}) {ms(gap)} ms after its expel commit "
                   f"(bound {ms(bound)} ms); {len(reactions)} member reactions to its later traffic",
            time.perf_counter() - t0)


# ---------------------------------------------------------------- 4


def test_criterion_4_anarchy_shutdown():
    t0 = time.perf_counter()
    down = run_scenario(parse_scenario(scenario_path("anarchy_leader_down").read_text()))
    up = run_scenario(parse_scenario(scenario_path("anarchy_leader_up").read_text()))
    roles_down, roles_up = terminal_roles(down.trace), terminal_roles(up.trace)
    leader_halt = [d for tt, p, k, d in up.trace if p == "p1" and k == "halt"]
    ok = (set(roles_down.values()) == {"Halted"} and set(roles_up.values()) == {"Halted"}
          and leader_halt == ["isolated"] and down.ok and up.ok)
    verdict(4, ok, f"leader down: {sorted(roles_down.items())}; leader up: p1 halt={leader_halt}, "
                   f"all halted={set(roles_up.values()) == {'Halted'}}", time.perf_counter() - t0)


# ---------------------------------------------------------------- 5


def test_criterion_5_election_latency_trends():
    t0 = time.perf_counter()
    ranges = [ex.parse_range(r) for r in RANGES]
    local = ex.cells(ex.sweep_election(N_LIST, ranges, "local", RUNS))
    parts, ok_a = [], True
    for n in N_LIST:
        means = [local[("local", n, r)].mean_us for r in RANGES]
        mono = all(a < b for a, b in zip(means, means[1:]))
        inside = all(0 <= m <= ex.election_envelope_us(hi, ex.PROFILE_DELTA_US["local"])[1]
                     for m, (_, hi) in zip(means, ranges))
        ok_a &= mono and inside
        parts.append(f"n={n} " + "/".join(ms(m) for m in means))
    gcp = ex.cells(ex.sweep_election([33], [ex.parse_range("50-100"), ex.parse_range("200-300")], "gcp", RUNS))
    short, long_ = gcp[("gcp", 33, "50-100")], gcp[("gcp", 33, "200-300")]
    ok_b = long_.mean_us < short.mean_us
    elapsed = time.perf_counter() - t0
    detail = (f"(a) local means ms {'; '.join(parts)} monotone and in envelope={ok_a}; "
              f"(b) gcp n=33 mean 50-100 {ms(short.mean_us)} ({short.missing} of {RUNS} never elected, "
              f"converged mean {ms(short.converged_mean_us)}, median {ms(short.median_us)}) vs "
              f"200-300 {ms(long_.mean_us)} (converged mean {ms(long_.converged_mean_us)}, "
              f"median {ms(long_.median_us)})")
    verdict(5, ok_a and ok_b and elapsed < 120, detail, elapsed)


# ---------------------------------------------------------------- 6


def test_criterion_6_had_savings():
    t0 = time.perf_counter()
    target = LatencyModel().ias_roundtrip_us
    parts, ok = [], True
    for profile in ("local", "gcp"):
        off = ex.cells(ex.measure_new_process(N_LIST, profile, False, RUNS))
        on_rows = ex.measure_new_process(N_LIST, profile, True, RUNS)
        on = ex.cells(on_rows)
        ok &= all(dict(r.extra)["ias_calls"] == 0 for r in on_rows)
        diffs = []
        for n in N_LIST:
            a, b = off[(profile, n, "had-off")], on[(profile, n, "had-on")]
            d = a.mean_us - b.mean_us
            ok &= not a.missing and not b.missing and abs(d - target) <= 0.1 * target
            diffs.append(ms(d))
        parts.append(f"{profile} off-on ms {'/'.join(diffs)}")
    elapsed = time.perf_counter() - t0
    verdict(6, ok and elapsed < 60, f"{'; '.join(parts)} (target {ms(target)} +-10%); "
                                    f"HAD-on joins used 0 IAS calls", elapsed)


# ---------------------------------------------------------------- 7


def test_criterion_7_expel_envelope():
    t0 = time.perf_counter()
    lo_us, hi_us = 25_000, 50_000
    cells = ex.cells(ex.measure_expel(N_LIST, lo_us, hi_us, "local", RUNS))
    means = [cells[("local", n, "25-50")].mean_us for n in N_LIST]
    lo, hi = ex.expel_envelope_us(lo_us, hi_us)
    ok = all(lo <= m <= hi for m in means) and all(a < b for a, b in zip(means, means[1:]))
    elapsed = time.perf_counter() - t0
    verdict(7, ok and elapsed < 60, f"local T 25-50 means ms {'/'.join(f'{m / 1000:.2f}' for m in means)} "
                                    f"for n={N_LIST}, envelope [{ms(lo)}, {ms(hi)}]", elapsed)


# ---------------------------------------------------------------- 8


APP, EVIL = Measurement.of_code("app"), Measurement.of_code("evil")


def _attest(kinds, delegated):
    m = {"honest": APP, "tampered": APP, "wrong": EVIL}
    p1, p2 = ProcessId(1, "h1"), ProcessId(2, "h2")
    reg = AttestRegistry(LatencyModel(), seed=1)
    reg.register_enclave(p1, m[kinds[0]])
    reg.register_enclave(p2, m[kinds[1]])
    tamper = tuple(k == "tampered" for k in kinds)
    if delegated:
        reg.had_pair("h1", "h2")
        return reg.delegated_attest(p1, p2, APP, tamper=tamper)
    return reg.remote_attest(p1, p2, APP, tamper=tamper)


def _confinement_text(seed):
    n = (3, 5, 7)[seed % 3]
    extra = [
        "at=1050 tamper kinds=AttestQuote until=1120" if seed % 3 == 0 else
        "at=1050 tamper kinds=Provision until=1500" if seed % 3 == 1 else "",
        "at=1060 join p30",
        "at=1070 join p31 code=evil",
    ]
    return random_scenario_text(50_000 + seed, n) + "\n".join(x for x in extra if x) + "\n"


def test_criterion_8_attestation_equivalence_and_confinement():
    t0 = time.perf_counter()
    kinds = ("honest", "tampered", "wrong")
    cells = list(itertools.product(kinds, kinds))
    agree = sum(_attest(c, False).accepted == _attest(c, True).accepted for c in cells)
    leaks = 0
    for seed in range(200):
        res = run_scenario(parse_scenario(_confinement_text(seed)))
        sim = res.sim
        leaks += bool(secret_confinement(res.trace))
        leaks += any(p not in sim.accepted for p in sim.ever_operational)
        leaks += ProcessId(31, "h31") in sim.ever_operational
    elapsed = time.perf_counter() - t0
    verdict(8, agree == 9 and leaks == 0 and elapsed < 30,
            f"delegated equals direct in {agree}/9 cells; 200 confinement runs, {leaks} leaks", elapsed)


# ---------------------------------------------------------------- 9


def test_criterion_9_determinism():
    t0 = time.perf_counter()
    paths = sorted(SCENARIOS.glob("*.scn"))
    same = 0
    for path in paths:
        runs = []
        for _ in range(2):
            res = run_scenario(parse_scenario(path.read_text()), record_messages=True)
            runs.append(("\n".join(res.sim.trace_lines()).encode(), metrics_csv(res).encode()))
        same += runs[0] == runs[1]
    csvs = {ex.to_csv(ex.sweep_election([5], [ex.parse_range("50-150")], "local", 3, seed0=7)) for _ in range(2)}
    ok = same == len(paths) and len(csvs) == 1
    verdict(9, ok, f"{same}/{len(paths)} scenarios bitwise identical on rerun; sweep CSV identical={len(csvs) == 1}",
            time.perf_counter() - t0)


# ---------------------------------------------------------------- 10


def test_criterion_10_excluded():
    line = ("SKIP criterion 10: enclave CPU overhead on a CPU benchmark suite needs real hardware; "
            "excluded, criteria 1-9 stand in for it")
    ACCEPTANCE_LINES.append(line)
    print(line)
    pytest.skip("needs enclave hardware and a licensed benchmark suite")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v", "-s"]))
