"""Latency experiments: leader election, new-process commission and expulsion.

Each cell runs ``runs`` independent seeds.  Seeds are shared across cluster
sizes and timeout ranges (common random numbers), so per-process timeouts,
crash offsets and victims line up between cells and trends are not buried
under sampling noise.
"""
from __future__ import annotations

import csv
import io
import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Optional

from ..engine import EngineParams, Role
from ..simnet import Crash, LatencyProfile, Sim, SimConfig
from ..types import ProcessId, TimeoutConfig
from .scenario import ElectionProbe

# Synchronous-delivery bound per profile: above the worst one-way latency.
PROFILE_DELTA_US = {"local": 1_000, "gcp": 70_000}


@dataclass(frozen=True)
class Row:
    profile: str
    n: int
    range: str
    run: int
    latency_us: Optional[int]
    extra: tuple = ()


@dataclass
class Cell:
    profile: str
    n: int
    range: str
    values: list = field(default_factory=list)
    missing: int = 0

    @property
    def mean_us(self) -> float:
        """Mean over all runs; a run that never finished counts as unbounded."""
        if self.missing:
            return math.inf
        return self.converged_mean_us

    @property
    def converged_mean_us(self) -> float:
        return sum(self.values) / len(self.values) if self.values else math.nan

    @property
    def median_us(self) -> float:
        xs = sorted(self.values + [math.inf] * self.missing)
        if not xs:
            return math.nan
        mid = len(xs) // 2
        return xs[mid] if len(xs) % 2 else (xs[mid - 1] + xs[mid]) / 2


def parse_range(text: str) -> tuple[int, int]:
    lo, hi = text.split("-")
    return int(float(lo) * 1000), int(float(hi) * 1000)


def range_label(lo_us: int, hi_us: int) -> str:
    return f"{lo_us // 1000}-{hi_us // 1000}"


def members(n: int) -> list:
    return [ProcessId(i, f"h{i}") for i in range(1, n + 1)]


def profile_for(name: str, hosts: Iterable[str], seed: Optional[int] = None) -> LatencyProfile:
    if name == "local":
        return LatencyProfile.uniform()
    if name == "gcp":
        return LatencyProfile.gcp(hosts, seed)
    raise ValueError(f"unknown profile {name!r}")


def make_sim(n_hosts: int, profile: str, lo_us: int, hi_us: int, seed: int, *, sla_max: int = 64,
             had: bool = False, factor: float = 5.0) -> Sim:
    delta = PROFILE_DELTA_US[profile]
    # GCP with a 50 ms floor sits below the 70 ms delivery bound on purpose:
    # that is the regime where short timeouts misfire.
    t = TimeoutConfig(lo_us, hi_us, factor, delta_us=delta)
    params = EngineParams(t, sla_max=sla_max, seed=seed)
    hosts = [f"h{i}" for i in range(1, n_hosts + 1)]
    return Sim(SimConfig(params, profile=profile_for(profile, hosts, seed), had=had))


def _warmup(hi_us: int) -> int:
    return 2 * hi_us


def _offset(seed: int, span: int) -> int:
    return random.Random(f"{seed}:offset").randrange(max(1, span))


# ---------------------------------------------------------------- election


def _all_halted(sim: Sim) -> bool:
    return all(p.state.role is Role.HALTED for p in sim.procs.values())


# Hard stop for an election that neither converges nor burns out; in
# practice every run ends well before this.
ELECTION_CAP_CANDIDATURES = 40


def election_run(n: int, lo_us: int, hi_us: int, profile: str, seed: int) -> Optional[int]:
    """Crash the leader and time until a successor is heard by a majority.

    Returns None when the cluster never recovers: every survivor gave up its
    candidature and halted, so no leader will ever exist.
    """
    sim = make_sim(n, profile, lo_us, hi_us, seed)
    ms = members(n)
    sim.warm_start(ms)
    probe = ElectionProbe()
    sim.heartbeat_hooks.append(probe)
    t = sim.params.timeouts
    crash_at = _warmup(hi_us) + _offset(seed, t.leader_send_interval_us)

    def on_crash(sm, pid):
        probe.crashed_leader(sm.clock, sm.procs[pid].state.term)

    sim.crash_hooks.append(on_crash)
    sim.inject(Crash(ms[0], crash_at))
    horizon = crash_at + ELECTION_CAP_CANDIDATURES * t.candidature_timeout_us
    now = crash_at
    while not probe.latencies and now < horizon and not _all_halted(sim):
        now = min(horizon, now + hi_us)
        sim.run_until(now)
    return probe.latencies[0] if probe.latencies else None


def sweep_election(n_list, ranges, profile: str = "local", runs: int = 20, seed0: int = 0) -> list:
    rows = []
    for n in n_list:
        for lo, hi in ranges:
            for run in range(runs):
                lat = election_run(n, lo, hi, profile, seed0 + run)
                rows.append(Row(profile, n, range_label(lo, hi), run, lat))
    return rows


# ---------------------------------------------------------------- new process


JOIN_RANGE_US = {"local": (50_000, 150_000), "gcp": (200_000, 300_000)}


def join_run(n: int, profile: str, had: bool, seed: int) -> tuple:
    lo_us, hi_us = JOIN_RANGE_US[profile]
    sim = make_sim(n + 1, profile, lo_us, hi_us, seed, had=had)
    ms = members(n)
    joiner = ProcessId(n + 1, f"h{n + 1}")
    sim.add_process(joiner)
    sim.warm_start(ms)
    if had:
        sim.pair_hosts()
    before = sim.registry.ias_calls
    t = sim.params.timeouts
    at = _warmup(hi_us) + _offset(seed, t.leader_send_interval_us)
    sim.schedule_join(joiner, at)
    horizon = at + t.candidature_timeout_us + sim.cfg.attest_latency.ias_roundtrip_us
    now = at
    done = lambda: sim.procs[joiner].state.has_secret
    while not done() and now < horizon:
        now = min(horizon, now + t.heartbeat_min_us)
        sim.run_until(now)
    marks = {label: tt for tt, pid, label in sim.marks if pid == joiner}
    lat = marks["provisioned"] - marks["join_requested"] if "provisioned" in marks else None
    return lat, sim.registry.ias_calls - before


def measure_new_process(n_list, profile: str = "local", had: bool = False, runs: int = 20, seed0: int = 0) -> list:
    rows = []
    for n in n_list:
        for run in range(runs):
            lat, ias = join_run(n, profile, had, seed0 + run)
            rows.append(Row(profile, n, "had-on" if had else "had-off", run, lat, (("ias_calls", ias),)))
    return rows


# ---------------------------------------------------------------- expel


def expel_run(n: int, lo_us: int, hi_us: int, profile: str, seed: int) -> Optional[int]:
    sim = make_sim(n, profile, lo_us, hi_us, seed)
    ms = members(n)
    sim.warm_start(ms)
    rng = random.Random(f"{seed}:victim")
    victim = ms[rng.randrange(1, min(5, n))]
    t = sim.params.timeouts
    crash_at = _warmup(hi_us) + _offset(seed, t.leader_send_interval_us)
    sim.inject(Crash(victim, crash_at))
    horizon = crash_at + 4 * t.heartbeat_max_us
    label = f"expelled:{victim}"
    now = crash_at
    while now < horizon:
        now = min(horizon, now + t.heartbeat_min_us)
        sim.run_until(now)
        hit = [tt for tt, pid, lab in sim.marks if lab == label]
        if hit:
            return hit[0] - crash_at
    return None


def measure_expel(n_list, lo_us: int = 25_000, hi_us: int = 50_000, profile: str = "local", runs: int = 20,
                  seed0: int = 0) -> list:
    rows = []
    for n in n_list:
        for run in range(runs):
            rows.append(Row(profile, n, range_label(lo_us, hi_us), run, expel_run(n, lo_us, hi_us, profile, seed0 + run)))
    return rows


# ---------------------------------------------------------------- aggregation and CSV


def cells(rows: list) -> dict:
    out: dict = {}
    for r in rows:
        key = (r.profile, r.n, r.range)
        c = out.setdefault(key, Cell(r.profile, r.n, r.range))
        if r.latency_us is None:
            c.missing += 1
        else:
            c.values.append(r.latency_us)
    return out


def to_csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    extra_keys = sorted({k for r in rows for k, _ in r.extra})
    w.writerow(["profile", "n", "range", "run", "latency_us", *extra_keys])
    for r in sorted(rows, key=lambda r: (r.profile, r.n, r.range, r.run)):
        ex = dict(r.extra)
        w.writerow([r.profile, r.n, r.range, r.run, "" if r.latency_us is None else r.latency_us,
                    *(ex.get(k, "") for k in extra_keys)])
    for key, c in sorted(cells(rows).items()):
        w.writerow([c.profile, c.n, c.range, "mean", f"{c.mean_us:.1f}", *("" for _ in extra_keys)])
    return buf.getvalue()


# ---------------------------------------------------------------- envelopes


def delta_round_us(delta_us: int) -> int:
    return 2 * delta_us


def replication_round_us(t: TimeoutConfig) -> int:
    return t.leader_send_interval_us + 2 * t.delta_us


def election_envelope_us(hi_us: int, delta_us: int) -> tuple[int, int]:
    return 0, hi_us + 3 * delta_round_us(delta_us)


def expel_envelope_us(lo_us: int, hi_us: int, delta_us: int = PROFILE_DELTA_US["local"]) -> tuple[float, int]:
    t = TimeoutConfig(lo_us, hi_us, delta_us=delta_us)
    # lower end: mean residual of a uniform timeout measured from a random instant
    return lo_us / 2, hi_us + 2 * replication_round_us(t)
