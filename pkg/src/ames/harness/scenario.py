"""Line-oriented scenario files and the runner that turns them into simulations.

::

    [cluster]
    n_initial=5
    heartbeat_min_ms=50
    heartbeat_max_ms=150
    profile=local
    [hosts]
    h1 site=us-west1
    [latency]
    h1 h2 24.7
    [events]
    at=1000 crash p3
    at=2000 join p6 host=h2
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from ..engine import EngineParams
from ..simnet import GCP_REGIONS, INF, Crash, LatencyProfile, LinkDelay, Partition, Sim, SimConfig, Tamper
from ..types import ConfigError, ProcessId, TimeoutConfig, majority_quorum
from . import observers


class ScenarioError(ValueError):
    """Parse or validation failure, naming the line and field at fault."""

    def __init__(self, line: int, field_name: str, message: str):
        super().__init__(f"line {line}: {field_name}: {message}")
        self.line = line
        self.field = field_name


@dataclass(frozen=True)
class ClusterSpec:
    n_initial: int = 5
    sla_max: int = 8
    heartbeat_min_ms: float = 50
    heartbeat_max_ms: float = 150
    candidature_factor: float = 5
    delta_ms: float = 1
    seed: int = 0
    profile: str = "local"
    had: bool = False
    start: str = "warm"
    send_interval_ms: Optional[float] = None
    horizon_ms: Optional[float] = None
    record_messages: bool = False


@dataclass(frozen=True)
class HostSpec:
    name: str
    site: Optional[str] = None


@dataclass(frozen=True)
class Event:
    at_ms: float
    verb: str
    args: tuple = ()
    opts: tuple = ()

    def opt(self, key: str, default=None):
        for k, v in self.opts:
            if k == key:
                return v
        return default


@dataclass(frozen=True)
class Scenario:
    cluster: ClusterSpec = field(default_factory=ClusterSpec)
    hosts: tuple = ()
    latency: tuple = ()
    events: tuple = ()

    def timeouts(self) -> TimeoutConfig:
        c = self.cluster
        send = None if c.send_interval_ms is None else _us(c.send_interval_ms)
        return TimeoutConfig(_us(c.heartbeat_min_ms), _us(c.heartbeat_max_ms), c.candidature_factor, send, _us(c.delta_ms))


VERBS = {
    "crash": (1, ()),
    "join": (1, ("host", "code")),
    "isolate": (1, ("until",)),
    "partition": (1, ("until",)),
    "delay": (2, ("extra", "until")),
    "tamper": (0, ("kinds", "until", "src", "dst")),
    "shutdown": (0, ()),
    "forged_shutdown": (0, ()),
    "bootstrap": (1, ("host", "tamper")),
}

_BOOL = {"on": True, "off": False, "true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _us(ms: float) -> int:
    return int(round(ms * 1000))


def _num(v: float) -> str:
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return repr(v) if isinstance(v, float) else str(v)


def _pid_num(token: str, line: int, key: str) -> int:
    if not token.startswith("p") or not token[1:].isdigit():
        raise ScenarioError(line, key, f"expected a process name like p3, got {token!r}")
    return int(token[1:])


# ---------------------------------------------------------------- parse


def parse_scenario(text: str) -> Scenario:
    section = None
    cluster: dict = {}
    hosts: list = []
    latency: list = []
    events: list = []
    types = {f.name: f for f in fields(ClusterSpec)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in ("cluster", "hosts", "latency", "events"):
                raise ScenarioError(lineno, "section", f"unknown section [{section}]")
            continue
        if section is None:
            raise ScenarioError(lineno, "section", "content before any section header")
        if section == "cluster":
            if "=" not in line:
                raise ScenarioError(lineno, line, "expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key == "had_enabled":
                key = "had"
            if key not in types:
                raise ScenarioError(lineno, key, "unknown key")
            cluster[key] = _convert(key, val, lineno)
        elif section == "hosts":
            parts = line.split()
            opts = dict(p.split("=", 1) for p in parts[1:] if "=" in p)
            unknown = set(opts) - {"site"}
            if unknown or any("=" not in p for p in parts[1:]):
                raise ScenarioError(lineno, "hosts", f"unexpected host options {sorted(unknown) or parts[1:]}")
            hosts.append(HostSpec(parts[0], opts.get("site")))
        elif section == "latency":
            parts = line.split()
            if len(parts) != 3:
                raise ScenarioError(lineno, "latency", "expected 'host host ms'")
            try:
                ms = float(parts[2])
            except ValueError:
                raise ScenarioError(lineno, "latency", f"bad latency {parts[2]!r}") from None
            latency.append((parts[0], parts[1], ms))
        else:
            events.append(_parse_event(line, lineno))
    spec = ClusterSpec(**cluster)
    scen = Scenario(spec, tuple(hosts), tuple(latency), tuple(events))
    validate(scen, text)
    return scen


def _convert(key: str, val: str, lineno: int):
    try:
        if key in ("n_initial", "sla_max", "seed"):
            return int(val)
        if key in ("had", "record_messages"):
            return _BOOL[val.lower()]
        if key in ("profile", "start"):
            return val
        return float(val)
    except (ValueError, KeyError):
        raise ScenarioError(lineno, key, f"bad value {val!r}") from None


def _parse_event(line: str, lineno: int) -> Event:
    parts = line.split()
    if not parts[0].startswith("at="):
        raise ScenarioError(lineno, "at", "event lines start with at=<ms>")
    try:
        at = float(parts[0][3:])
    except ValueError:
        raise ScenarioError(lineno, "at", f"bad time {parts[0][3:]!r}") from None
    if len(parts) < 2:
        raise ScenarioError(lineno, "event", "missing verb")
    verb = parts[1]
    if verb not in VERBS:
        raise ScenarioError(lineno, "event", f"unknown verb {verb!r}")
    nargs, allowed = VERBS[verb]
    args = tuple(p for p in parts[2:] if "=" not in p)
    opts = tuple(tuple(p.split("=", 1)) for p in parts[2:] if "=" in p)
    if verb == "bootstrap":
        args, flags = args[:1], args[1:]
        opts = opts + tuple((f, "on") for f in flags)
    if len(args) != nargs:
        raise ScenarioError(lineno, verb, f"expected {nargs} argument(s), got {len(args)}")
    for k, _ in opts:
        if k not in allowed:
            raise ScenarioError(lineno, k, f"unknown option for {verb}")
    return Event(at, verb, args, opts)


def validate(scen: Scenario, text: Optional[str] = None) -> None:
    c = scen.cluster
    line = lambda needle: _line_of(text, needle)
    if c.n_initial < 0:
        raise ScenarioError(line("n_initial"), "n_initial", "must be nonnegative")
    if c.sla_max < max(1, c.n_initial):
        raise ScenarioError(line("sla_max"), "sla_max", "below the initial cluster size")
    if c.profile not in ("local", "gcp", "custom"):
        raise ScenarioError(line("profile"), "profile", f"unknown profile {c.profile!r}")
    if c.start not in ("warm", "bootstrap", "none"):
        raise ScenarioError(line("start"), "start", f"unknown start mode {c.start!r}")
    if c.start == "warm" and c.n_initial < 1:
        raise ScenarioError(line("n_initial"), "n_initial", "a warm start needs at least one member")
    if c.candidature_factor <= 0:
        raise ScenarioError(line("candidature_factor"), "candidature_factor", "heartbeat timeout must not exceed candidature timeout")
    try:
        scen.timeouts().validate()
    except ConfigError as exc:
        raise ScenarioError(line("delta_ms") if "delta" in str(exc) else line("candidature_factor"), "timeouts", str(exc)) from None
    if c.profile == "custom" and not scen.latency:
        raise ScenarioError(line("profile"), "latency", "custom profile needs a [latency] section")
    if c.profile != "custom" and scen.latency:
        raise ScenarioError(line("[latency]"), "latency", "a latency matrix needs profile=custom")
    declared_hosts = {h.name for h in scen.hosts} | {f"h{i}" for i in range(1, c.n_initial + 1)}
    if c.profile == "gcp":
        for h in scen.hosts:
            if h.site is not None and h.site not in GCP_REGIONS:
                raise ScenarioError(line(h.name), "site", f"unknown region {h.site!r}")
    declared = set(range(1, c.n_initial + 1))
    for ev in scen.events:
        ln = line(f"at={_num(ev.at_ms)} {ev.verb}")
        if ev.at_ms < 0:
            raise ScenarioError(ln, "at", "negative time")
        if ev.verb in ("join", "bootstrap"):
            pid = _pid_num(ev.args[0], ln, ev.verb)
            if pid in declared:
                raise ScenarioError(ln, ev.verb, f"process id p{pid} reused")
            host = ev.opt("host", f"h{pid}")
            if ev.opt("host") is not None and host not in declared_hosts:
                raise ScenarioError(ln, "host", f"undeclared host {host}")
            declared_hosts.add(host)
            declared.add(pid)
        elif ev.verb in ("crash", "isolate"):
            pid = _pid_num(ev.args[0], ln, ev.verb)
            if pid not in declared:
                raise ScenarioError(ln, ev.verb, f"undeclared process p{pid}")
        elif ev.verb == "delay":
            for a in ev.args:
                if _pid_num(a, ln, "delay") not in declared:
                    raise ScenarioError(ln, "delay", f"undeclared process {a}")
        elif ev.verb == "partition":
            for group in ev.args[0].split("/"):
                for tok in group.split(","):
                    if not tok.isdigit() or int(tok) not in declared:
                        raise ScenarioError(ln, "partition", f"undeclared process {tok}")
        for key in ("until",):
            v = ev.opt(key)
            if v is not None and v != "inf":
                try:
                    if float(v) < ev.at_ms:
                        raise ScenarioError(ln, key, "window ends before it starts")
                except ValueError:
                    raise ScenarioError(ln, key, f"bad time {v!r}") from None
    if c.profile == "custom":
        mentioned = {a for a, _, _ in scen.latency} | {b for _, b, _ in scen.latency}
        missing = sorted(declared_hosts - mentioned)
        if missing:
            raise ScenarioError(line("[latency]"), "latency", f"no latency for hosts {missing}")


def _line_of(text: Optional[str], needle: str) -> int:
    if text:
        for i, raw in enumerate(text.splitlines(), start=1):
            if needle in raw:
                return i
    return 0


# ---------------------------------------------------------------- render


def render_scenario(s: Scenario) -> str:
    c = s.cluster
    out = ["[cluster]"]
    for f in fields(ClusterSpec):
        v = getattr(c, f.name)
        if v is None:
            continue
        if isinstance(v, bool):
            v = "on" if v else "off"
        out.append(f"{f.name}={_num(v)}")
    if s.hosts:
        out.append("[hosts]")
        for h in s.hosts:
            out.append(h.name + (f" site={h.site}" if h.site else ""))
    if s.latency:
        out.append("[latency]")
        for a, b, ms in s.latency:
            out.append(f"{a} {b} {_num(ms)}")
    if s.events:
        out.append("[events]")
        for ev in s.events:
            parts = [f"at={_num(ev.at_ms)}", ev.verb, *ev.args]
            parts += [f"{k}={v}" for k, v in ev.opts]
            out.append(" ".join(parts))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------- build and run


def engine_params(s: Scenario, *, check: bool = True) -> EngineParams:
    t = s.timeouts()
    if check:
        t.validate()
    return EngineParams(t, sla_max=s.cluster.sla_max, seed=s.cluster.seed)


def _host_of(s: Scenario, pid: int) -> str:
    for ev in s.events:
        if ev.verb in ("join", "bootstrap") and ev.args and ev.args[0] == f"p{pid}":
            return ev.opt("host", f"h{pid}")
    return f"h{pid}"


def _profile(s: Scenario, host_names: list) -> LatencyProfile:
    c = s.cluster
    if c.profile == "local":
        return LatencyProfile.uniform()
    if c.profile == "gcp":
        explicit = {h.name: h.site for h in s.hosts if h.site}
        free = [h for h in host_names if h not in explicit]
        auto = LatencyProfile.gcp(free)
        sites = tuple(explicit.items()) + auto.sites
        return replace(auto, sites=sites)
    return LatencyProfile.from_ms_pairs(s.latency, sites=tuple((h.name, h.site) for h in s.hosts if h.site))


def build_sim(s: Scenario, *, check: bool = True, record_messages: Optional[bool] = None) -> Sim:
    c = s.cluster
    params = engine_params(s, check=check)
    pids = [ProcessId(i, f"h{i}") for i in range(1, c.n_initial + 1)]
    hosts = [h.name for h in s.hosts] + [p.host for p in pids]
    for ev in s.events:
        if ev.verb in ("join", "bootstrap"):
            hosts.append(ev.opt("host", f"h{ev.args[0][1:]}"))
    hosts = list(dict.fromkeys(hosts))
    rec = c.record_messages if record_messages is None else record_messages
    sim = Sim(SimConfig(params, profile=_profile(s, hosts), had=c.had, record_messages=rec))
    for h in hosts:
        sim.registry.register_host(h)
    for p in pids:
        sim.add_process(p)
    for ev in s.events:
        if ev.verb in ("join", "bootstrap"):
            pid = ProcessId(int(ev.args[0][1:]), ev.opt("host", f"h{ev.args[0][1:]}"))
            code = "evil-build" if ev.opt("code") == "evil" else None
            sim.add_process(pid, code)
    if c.had:
        sim.pair_hosts()
    if c.start == "warm" and pids:
        sim.warm_start(pids)
    elif c.start == "bootstrap" and pids:
        sim.bootstrap(pids[0])
        for p in pids[1:]:
            sim.schedule_join(p, 1, retries=20)
    by_id = {p.id: p for p in sim.procs}
    for ev in s.events:
        at = _us(ev.at_ms)
        until = ev.opt("until")
        end = INF if until in (None, "inf") else _us(float(until))
        if ev.verb == "crash":
            sim.inject(Crash(by_id[int(ev.args[0][1:])], at))
        elif ev.verb == "join":
            sim.schedule_join(by_id[int(ev.args[0][1:])], at)
        elif ev.verb == "bootstrap":
            pid = by_id[int(ev.args[0][1:])]
            tamper = _BOOL.get(str(ev.opt("tamper", "off")).lower(), False)
            sim.at(at, lambda sm, pid=pid, tamper=tamper: sm.bootstrap(pid, tamper=tamper))
        elif ev.verb == "isolate":
            sim.inject(Partition(frozenset({by_id[int(ev.args[0][1:])]}), frozenset(), at, end))
        elif ev.verb == "partition":
            groups = [frozenset(by_id[int(x)] for x in g.split(",")) for g in ev.args[0].split("/")]
            b = groups[1] if len(groups) > 1 else frozenset()
            sim.inject(Partition(groups[0], b, at, end))
        elif ev.verb == "delay":
            a, b = (by_id[int(x[1:])] for x in ev.args)
            extra = ev.opt("extra", "inf")
            sim.inject(LinkDelay(a, b, at, end, None if extra == "inf" else _us(float(extra))))
        elif ev.verb == "tamper":
            kinds = frozenset(k for k in ev.opt("kinds", "").split(",") if k)
            src = by_id.get(int(ev.opt("src")[1:])) if ev.opt("src") else None
            dst = by_id.get(int(ev.opt("dst")[1:])) if ev.opt("dst") else None
            sim.inject(Tamper(kinds, at, end, src, dst))
        elif ev.verb == "shutdown":
            sim.schedule_shutdown(at)
        elif ev.verb == "forged_shutdown":
            sim.schedule_shutdown(at, forged=True)
    return sim


def horizon_us(s: Scenario) -> int:
    c = s.cluster
    if c.horizon_ms is not None:
        return _us(c.horizon_ms)
    t = s.timeouts()
    last = 0
    for ev in s.events:
        last = max(last, _us(ev.at_ms))
        until = ev.opt("until")
        if until not in (None, "inf"):
            last = max(last, _us(float(until)))
    joins = sum(1 for ev in s.events if ev.verb in ("join", "bootstrap")) + (c.n_initial if c.start == "bootstrap" else 0)
    attest = joins * (t.candidature_timeout_us + 300_000)
    return last + attest + 3 * t.candidature_timeout_us + 4 * t.heartbeat_max_us


@dataclass
class MetricsReport:
    election_latency_us: list = field(default_factory=list)
    new_process_latency_us: list = field(default_factory=list)
    expel_latency_us: list = field(default_factory=list)
    ias_call_count: int = 0
    owner_ias_calls: int = 0
    anarchy_intervals: list = field(default_factory=list)
    final_convergence: bool = True
    seals: int = 0
    halted: list = field(default_factory=list)

    @staticmethod
    def mean(values: list) -> float:
        return sum(values) / len(values) if values else math.nan


@dataclass
class RunResult:
    scenario: Scenario
    sim: Sim
    report: MetricsReport
    violations: list
    convergence: observers.Convergence

    @property
    def trace(self) -> list:
        return self.sim.trace

    @property
    def ok(self) -> bool:
        return not self.violations and bool(self.convergence)


class ElectionProbe:
    """Times crash-of-leader to the new leader's first heartbeat taken by a majority."""

    def __init__(self):
        self.crashes: list = []
        self.latencies: list = []
        self._open: Optional[tuple] = None
        self._seen: set = set()

    def crashed_leader(self, t: int, term: int) -> None:
        if self._open is None:
            self._open = (t, term)
            self._seen = set()

    def __call__(self, sim: Sim, follower: ProcessId, msg) -> None:
        if self._open is None or msg.term <= self._open[1]:
            return
        leader = sim.procs[msg.leader].state
        if leader.term != msg.term:
            return
        self._seen.add(follower)
        if 1 + len(self._seen) >= majority_quorum(len(leader.peer_list)):
            self.latencies.append(sim.clock - self._open[0])
            self._open = None


def _metrics(sim: Sim, probe: ElectionProbe, crashes: dict) -> MetricsReport:
    rep = MetricsReport()
    rep.election_latency_us = list(probe.latencies)
    requested = {}
    for t, pid, label in sim.marks:
        if label == "join_requested":
            requested.setdefault(pid, t)
        elif label == "provisioned" and pid in requested:
            rep.new_process_latency_us.append(t - requested[pid])
        elif label.startswith("expelled:"):
            victim = label.split(":", 1)[1]
            if victim in crashes:
                rep.expel_latency_us.append(t - crashes.pop(victim))
    rep.ias_call_count = sim.registry.ias_calls
    rep.owner_ias_calls = sim.registry.owner_ias_calls
    rep.anarchy_intervals = observers.anarchy_intervals(sim.trace, sim.clock)
    rep.seals = sum(sim.seals.values())
    rep.halted = [str(p) for p in sorted(sim.procs) if sim.procs[p].state.role.value == "Halted"]
    return rep


def run_scenario(s: Scenario, *, check: bool = True, record_messages: Optional[bool] = None,
                 until_us: Optional[int] = None) -> RunResult:
    sim = build_sim(s, check=check, record_messages=record_messages)
    probe = ElectionProbe()
    sim.heartbeat_hooks.append(probe)
    crashes: dict = {}

    def on_crash(sm: Sim, pid: ProcessId) -> None:
        st = sm.procs[pid].state
        if st.role.value == "Leader":
            probe.crashed_leader(sm.clock, st.term)
        if st.has_secret and st.role.value != "Halted":
            crashes[str(pid)] = sm.clock

    sim.crash_hooks.append(on_crash)
    sim.run_until(until_us if until_us is not None else horizon_us(s))
    report = _metrics(sim, probe, crashes)
    conv = observers.check_convergence(sim.trace)
    report.final_convergence = bool(conv)
    violations = observers.check_safety(sim.trace, s.cluster.sla_max)
    return RunResult(s, sim, report, violations, conv)

