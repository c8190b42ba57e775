"""Deterministic discrete-event network for running many :class:`Process` instances.

The simulator owns the virtual clock, the per-pair channels, the adversarial
delivery schedule (faults) and the attestation runtime.  Everything that
happens is appended to a trace of ``(time_us, process, kind, detail)``
records which the harness observers fold over.
"""
from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .attest import AttestRegistry, DelegatedEvidence, LatencyModel, Measurement, tamper_evidence
from .engine import EngineParams, Process, Role, bootstrap_first, formed_cluster, initial_timers
from .messages import (
    ArmTimer, AttestChallenge, AttestQuote, AttestVerdict, GenerateQuote, Halt, Heartbeat, JoinRequest,
    MetricsMark, Provision, ProvisionComplete, SealData, Send, ShutdownRequest, VerifyQuote, describe,
)
from .types import OWNER, ClusterCensus, ContractViolation, ProcessId, is_anarchy

INF = math.inf

APP_CODE = "ames-app-v1"

GCP_REGIONS = ("us-west1", "us-west2", "us-east1", "us-east4")

# One-way latencies between regions, milliseconds.
GCP_TABLE_MS = {
    ("us-west1", "us-west2"): 24.7,
    ("us-west1", "us-east1"): 66.7,
    ("us-west1", "us-east4"): 59.0,
    ("us-west2", "us-east1"): 62.9,
    ("us-west2", "us-east4"): 60.5,
    ("us-east1", "us-east4"): 12.7,
}

LOCAL_LATENCY_US = 130


# ---------------------------------------------------------------- latency


@dataclass(frozen=True)
class LatencyProfile:
    """Either one uniform latency or a symmetric site matrix.

    Hosts map to sites; two distinct hosts on one site talk at ``intra_us``.
    """

    name: str = "local"
    base_us: int = LOCAL_LATENCY_US
    matrix: tuple = ()
    sites: tuple = ()
    intra_us: int = LOCAL_LATENCY_US

    def __post_init__(self):
        seen = {}
        for a, b, us in self.matrix:
            if a == b and us != 0:
                raise ValueError("latency matrix diagonal must be zero")
            key = frozenset((a, b))
            if key in seen and seen[key] != us:
                raise ValueError(f"latency matrix asymmetric for {a},{b}")
            seen[key] = us
        object.__setattr__(self, "_m", seen)
        object.__setattr__(self, "_s", dict(self.sites))

    @classmethod
    def uniform(cls, base_us: int = LOCAL_LATENCY_US, name: str = "local") -> "LatencyProfile":
        return cls(name=name, base_us=base_us)

    @classmethod
    def from_ms_pairs(cls, pairs: Iterable[tuple], *, name: str = "custom", sites: Iterable[tuple] = (),
                      intra_us: int = LOCAL_LATENCY_US) -> "LatencyProfile":
        return cls(name=name, base_us=0, matrix=tuple((a, b, round(ms * 1000)) for a, b, ms in pairs),
                   sites=tuple(sites), intra_us=intra_us)

    @classmethod
    def gcp(cls, hosts: Iterable[str] = (), seed: Optional[int] = None) -> "LatencyProfile":
        """Hosts go round-robin over the regions, or uniformly at random when seeded."""
        hosts = list(hosts)
        if seed is None:
            sites = tuple((h, GCP_REGIONS[i % len(GCP_REGIONS)]) for i, h in enumerate(hosts))
        else:
            rng = random.Random(f"{seed}:site")
            sites = tuple((h, rng.choice(GCP_REGIONS)) for h in hosts)
        return cls.from_ms_pairs(((a, b, ms) for (a, b), ms in GCP_TABLE_MS.items()), name="gcp", sites=sites)

    @property
    def is_matrix(self) -> bool:
        return bool(self.matrix)

    def site(self, host: str) -> str:
        return self._s.get(host, host)

    def latency_us(self, h1: str, h2: str) -> int:
        if not self.matrix:
            return self.base_us
        s1, s2 = self.site(h1), self.site(h2)
        if s1 == s2:
            return self.intra_us if h1 != h2 else 0
        try:
            return self._m[frozenset((s1, s2))]
        except KeyError:
            raise ContractViolation(f"no latency between {h1} and {h2}") from None

    def max_us(self) -> int:
        return max([self.base_us, self.intra_us] + [us for _, _, us in self.matrix])


# ---------------------------------------------------------------- faults


@dataclass(frozen=True)
class Crash:
    process: ProcessId
    at: int


@dataclass(frozen=True)
class LinkDelay:
    """Extra delay on both directions of a link; ``extra_us=None`` holds forever."""

    a: ProcessId
    b: ProcessId
    start: int
    end: float
    extra_us: Optional[int] = None


@dataclass(frozen=True)
class Partition:
    """Messages crossing the cut are held until the window closes.

    ``group_b`` empty means everybody outside ``group_a``.
    """

    group_a: frozenset
    group_b: frozenset
    start: int
    end: float


@dataclass(frozen=True)
class Tamper:
    """Corrupt matching messages sent inside the window."""

    kinds: frozenset
    start: int
    end: float
    src: Optional[ProcessId] = None
    dst: Optional[ProcessId] = None

    def matches(self, src: ProcessId, dst: ProcessId, msg, at: int) -> bool:
        if not self.start <= at < self.end:
            return False
        if self.kinds and type(msg).__name__ not in self.kinds:
            return False
        return (self.src is None or src == self.src) and (self.dst is None or dst == self.dst)


FaultSpec = object  # Crash | LinkDelay | Partition | Tamper


def describe_fault(f) -> str:
    if isinstance(f, Crash):
        return f"crash;p={f.process}"
    if isinstance(f, LinkDelay):
        extra = "inf" if f.extra_us is None else f.extra_us
        return f"delay;{f.a}-{f.b};extra={extra};until={f.end}"
    if isinstance(f, Partition):
        a = ".".join(str(p.id) for p in sorted(f.group_a))
        b = ".".join(str(p.id) for p in sorted(f.group_b)) or "*"
        return f"partition;{a}|{b};until={f.end}"
    if isinstance(f, Tamper):
        return f"tamper;{'.'.join(sorted(f.kinds)) or '*'};until={f.end}"
    return type(f).__name__


# ---------------------------------------------------------------- simulator


@dataclass
class SimConfig:
    params: EngineParams
    profile: LatencyProfile = field(default_factory=LatencyProfile.uniform)
    attest_latency: LatencyModel = field(default_factory=LatencyModel)
    had: bool = False
    record_messages: bool = False
    held_cap: int = 10_000
    jitter_us: int = 0
    code: str = APP_CODE

    @property
    def cpu_msg_us(self) -> int:
        return self.attest_latency.local_us


@dataclass(order=True)
class _Event:
    at: int
    seq: int
    kind: str = field(compare=False)
    payload: tuple = field(compare=False)


class Sim:
    """Single-threaded event loop over processes, channels and faults."""

    def __init__(self, config: SimConfig):
        self.cfg = config
        self.params = config.params
        self.clock = 0
        self._seq = 0
        self._queue: list = []
        self.procs: dict = {}
        self.crashed: set = set()
        self.trace: list = []
        self.faults: list = []
        self.registry = AttestRegistry(config.attest_latency, seed=config.params.seed)
        self.app_measurement = Measurement.of_code(config.code)
        self.busy_until: dict = {}
        self.held: dict = {}
        self.held_overflow = 0
        self.seals: dict = {}
        self.marks: list = []
        self.accepted: set = set()
        self.provisioned_by: dict = {}
        self.ever_operational: set = set()
        self.roots: list = []
        self.heartbeat_hooks: list = []
        self.crash_hooks: list = []
        self._views: dict = {}
        self._commits: dict = {}
        self._rng = random.Random(f"{config.params.seed}:net")
        self._last_census = None

    # ---- bookkeeping

    def _push(self, at, kind: str, *payload) -> None:
        self._seq += 1
        heapq.heappush(self._queue, _Event(at, self._seq, kind, payload))

    def record(self, proc, kind: str, detail="") -> None:
        self.trace.append((self.clock, str(proc), kind, str(detail)))

    def _observe(self, pid: ProcessId, was_leader: bool = False) -> None:
        proc = self.procs[pid]
        s = proc.state
        done = self._commits.get(pid, 0)
        if s.commit_index > done:
            kind = "qcommit" if was_leader or s.role is Role.LEADER else "commit"
            for e in s.log[done:s.commit_index]:
                self.record(pid, kind, e.token())
            self._commits[pid] = s.commit_index
        view = s.view()
        if view != self._views.get(pid):
            self._views[pid] = view
            role, term, commit, peers, secret = view
            self.record(pid, "state", f"role={role};term={term};commit={commit};peers={peers};secret={secret}")
            if secret and pid not in self.ever_operational:
                self.ever_operational.add(pid)

    # ---- population

    def add_process(self, pid: ProcessId, code: Optional[str] = None) -> Process:
        if pid in self.procs:
            raise ContractViolation(f"process id {pid} reused")
        m = Measurement.of_code(code or self.cfg.code)
        self.registry.register_enclave(pid, m)
        proc = Process.nonoperational(self.params, pid, m.digest)
        self.procs[pid] = proc
        self.busy_until[pid] = 0
        self.record(pid, "spawn", f"host={pid.host}")
        return proc

    def pair_hosts(self) -> int:
        """Pair every declared host's delegate; returns IAS calls spent."""
        hosts = sorted(self.registry.hosts)
        before = self.registry.ias_calls
        for i, h1 in enumerate(hosts):
            for h2 in hosts[i + 1:]:
                out = self.registry.had_pair(h1, h2, now=self.clock)
                self.record("had", "pair", f"{h1}-{h2};ok={int(out.accepted)};ias={out.ias_calls}")
        return self.registry.ias_calls - before

    def warm_start(self, members: list, secret: bytes = b"app-secret") -> None:
        """Install an already formed cluster at the current instant."""
        for p in members:
            if p not in self.procs:
                self.add_process(p)
        formed = formed_cluster(self.params, list(members), secret, measurement=self.app_measurement.digest,
                                now=self.clock)
        root = members[0]
        self.roots.append(root)
        self.record(root, "boot", "warm")
        for p, proc in formed.items():
            self.procs[p] = proc
            self.accepted.add(p)
            if p != root:
                self.record(p, "attest", f"{p};ok=1;by=warm;r=ok")
                self.record(root, "provision", f"{p};auth=1;attested=1")
            self._observe(p)
            self._execute(p, initial_timers(proc))

    def bootstrap(self, pid: ProcessId, secret: bytes = b"app-secret", tamper: bool = False) -> None:
        """Owner attests ``pid`` over the IAS and, on success, provisions it."""
        if pid not in self.procs:
            self.add_process(pid)
        nonce = self.registry.fresh_nonce(f"owner:{pid}:{self.clock}")
        quote, sign = self.registry.generate_quote(pid, nonce)
        if tamper:
            quote = tamper_evidence(quote)
        out = self.registry.ias_verify(quote, self.app_measurement, nonce=nonce, owner=True)
        self._push(self.clock + sign + out.cost_us, "owner-boot", pid, secret, out.accepted, out.reason.value)

    def _finish_bootstrap(self, pid, secret, ok, reason) -> None:
        self.record(pid, "attest", f"{pid};ok={int(ok)};by=owner;r={reason}")
        if not ok or pid in self.crashed:
            return
        self.accepted.add(pid)
        old = self.procs[pid]
        if old.state.has_secret:
            return
        proc = bootstrap_first(self.params, pid, secret, measurement=self.app_measurement.digest, now=self.clock)
        self.procs[pid] = proc
        self.roots.append(pid)
        self.record(pid, "boot", "owner")
        self._observe(pid)
        self._execute(pid, initial_timers(proc))

    def leader(self) -> Optional[ProcessId]:
        """The live leader with the highest term, as the CSP would route to."""
        best = None
        for pid in sorted(self.procs):
            s = self.procs[pid].state
            if s.role is Role.LEADER and pid not in self.crashed and s.has_secret:
                if best is None or s.term > self.procs[best].state.term:
                    best = pid
        return best

    # ---- scheduling API

    def inject(self, fault) -> None:
        start = fault.at if isinstance(fault, Crash) else fault.start
        if start < self.clock:
            raise ContractViolation("fault window already started")
        self._push(start, "fault", fault)

    def at(self, t: int, fn: Callable[["Sim"], None]) -> None:
        self._push(t, "call", fn)

    def schedule_join(self, pid: ProcessId, t: int, code: Optional[str] = None, retries: int = 0) -> None:
        if pid not in self.procs:
            self.add_process(pid, code)
        self._push(t, "join", pid, retries)

    def schedule_shutdown(self, t: int, forged: bool = False, retries: int = 3) -> None:
        self._push(t, "shutdown", forged, retries)

    # ---- channels

    def channel_delay(self, src: ProcessId, dst: ProcessId, depart: int) -> float:
        base = self.cfg.profile.latency_us(src.host, dst.host)
        if self.cfg.jitter_us:
            base += self._rng.randint(0, self.cfg.jitter_us)
        arrive = depart + base
        extra = 0
        for f in self.faults:
            if isinstance(f, LinkDelay):
                if {src, dst} == {f.a, f.b} and f.start <= depart < f.end:
                    if f.extra_us is None:
                        return INF
                    extra += f.extra_us
            elif isinstance(f, Partition):
                if f.start <= depart < f.end and self._cut(f, src, dst):
                    if f.end == INF:
                        return INF
                    arrive = max(arrive, f.end + base)
        return arrive + extra

    @staticmethod
    def _cut(f: Partition, src, dst) -> bool:
        a, b = f.group_a, f.group_b
        if not b:
            return (src in a) != (dst in a)
        return (src in a and dst in b) or (src in b and dst in a)

    def synchronous(self, p: ProcessId, q: ProcessId, now: int) -> bool:
        return self.channel_delay(p, q, now) - now <= self.params.timeouts.delta_us

    def _send(self, src: ProcessId, dst: ProcessId, msg, depart: int) -> None:
        authentic = True
        for f in self.faults:
            if isinstance(f, Tamper) and f.matches(src, dst, msg, depart):
                if isinstance(msg, AttestQuote):
                    msg = AttestQuote(msg.joiner, msg.nonce, tamper_evidence(msg.evidence))
                else:
                    authentic = False
                if self.cfg.record_messages:
                    self.record(src, "tamper", f"{dst}:{type(msg).__name__}")
                break
        if isinstance(msg, Provision):
            self.provisioned_by[dst] = src
            self.record(src, "provision", f"{dst};auth={int(authentic)};attested={int(dst in self.accepted)}")
        if self.cfg.record_messages:
            self.record(src, "send", f"{dst}:{describe(msg)}")
        at = self.channel_delay(src, dst, depart)
        if at == INF:
            key = (src, dst)
            n = self.held.get(key, 0) + 1
            self.held[key] = n
            if n > self.cfg.held_cap:
                self.held_overflow += 1
            return
        self._push(int(at), "deliver", src, dst, msg, authentic)

    # ---- action execution

    def _execute(self, pid: ProcessId, actions: list, start: Optional[int] = None) -> None:
        now = self.clock if start is None else start
        cpu = self.cfg.cpu_msg_us
        t = max(now, self.busy_until.get(pid, 0))
        for act in actions:
            if isinstance(act, Send):
                t += cpu
                if isinstance(act.msg, AttestChallenge):
                    self.registry.challenge(act.msg.nonce)
                self._send(pid, act.to, act.msg, t)
            elif isinstance(act, ArmTimer):
                self._push(act.deadline, "timer", pid, act.kind)
            elif isinstance(act, SealData):
                self.seals[pid] = self.seals.get(pid, 0) + 1
                self.record(pid, "seal")
            elif isinstance(act, Halt):
                self.record(pid, "halt", act.reason)
                self._census()
            elif isinstance(act, MetricsMark):
                self.marks.append((self.clock, pid, act.label))
                self.record(pid, "mark", act.label)
            elif isinstance(act, ProvisionComplete):
                self.record(pid, "provisioned", str(act.new))
            elif isinstance(act, GenerateQuote):
                t = self._generate_quote(pid, act, t)
            elif isinstance(act, VerifyQuote):
                t = self._verify_quote(pid, act, t)
            else:
                raise ContractViolation(f"unknown action {act!r}")
        self.busy_until[pid] = t

    def _use_delegate(self, a: ProcessId, b: ProcessId) -> bool:
        return a.host == b.host or (self.cfg.had and self.registry.paired(a.host, b.host))

    def _generate_quote(self, pid: ProcessId, act: GenerateQuote, t: int) -> int:
        if self._use_delegate(pid, act.to):
            ev, cost = self.registry.delegate_evidence(pid, act.nonce, act.to.host)
            if ev is None:
                return t + cost
        else:
            ev, cost = self.registry.generate_quote(pid, act.nonce)
        t += cost
        self._send(pid, act.to, AttestQuote(pid, act.nonce, ev), t)
        return t

    def _verify_quote(self, pid: ProcessId, act: VerifyQuote, t: int) -> int:
        out = self.registry.verify_evidence(act.evidence, pid, self.app_measurement, nonce=act.nonce)
        if out.accepted:
            self.accepted.add(act.joiner)
            self.registry.open_channel(pid, act.joiner, t + out.cost_us)
        via = "had" if isinstance(act.evidence, DelegatedEvidence) else "ias"
        self.record(pid, "attest", f"{act.joiner};ok={int(out.accepted)};by={via};r={out.reason.value}")
        # the IAS round trip is a wait, not CPU work
        self._push(t + out.cost_us, "deliver", pid, pid, AttestVerdict(act.joiner, out.accepted, out.reason.value), True)
        return t

    # ---- census

    def census(self) -> Optional[ClusterCensus]:
        existing = sorted(self.ever_operational)
        if not existing:
            return None
        n = len(existing)
        faulty = {p for p in existing if p in self.crashed or self.procs[p].state.role is Role.HALTED}
        correct = [p for p in existing if p not in faulty]
        quorum = n // 2
        isolated = 0
        for p in correct:
            reach = sum(1 for q in correct if q != p and self.synchronous(p, q, self.clock))
            if reach < quorum:
                isolated += 1
        return ClusterCensus(n, len(faulty), isolated)

    def _census(self) -> None:
        c = self.census()
        if c is None:
            return
        key = (c.n, c.f, c.i)
        if key != self._last_census:
            self._last_census = key
            self.record("census", "census", f"n={c.n};f={c.f};i={c.i};anarchy={int(is_anarchy(c))}")

    # ---- event loop

    def _runnable(self, pid: ProcessId) -> bool:
        return pid in self.procs and pid not in self.crashed and self.procs[pid].state.role is not Role.HALTED

    def _defer(self, ev: _Event, pid: ProcessId) -> bool:
        busy = self.busy_until.get(pid, 0)
        if busy > ev.at:
            self._push(busy, ev.kind, *ev.payload)
            return True
        return False

    def step(self, ev: _Event) -> None:
        kind, payload = ev.kind, ev.payload
        if kind == "deliver":
            src, dst, msg, authentic = payload
            if not self._runnable(dst):
                if self.cfg.record_messages:
                    self.record(dst, "drop", describe(msg))
                return
            if self._defer(ev, dst):
                return
            self.busy_until[dst] = self.clock + self.cfg.cpu_msg_us
            proc = self.procs[dst]
            was_leader = proc.state.role is Role.LEADER
            if self.cfg.record_messages:
                self.record(dst, "recv", f"{src}:{describe(msg)};auth={int(authentic)}")
            acts = proc.receive(src, msg, self.clock, authentic)
            if self.heartbeat_hooks and isinstance(msg, Heartbeat) and authentic:
                s = proc.state
                if s.leader_id == msg.leader and s.term == msg.term and s.role is Role.FOLLOWER:
                    for hook in self.heartbeat_hooks:
                        hook(self, dst, msg)
            self._execute(dst, acts)
            self._observe(dst, was_leader)
        elif kind == "timer":
            pid, tkind = payload
            if not self._runnable(pid) or self._defer(ev, pid):
                return
            proc = self.procs[pid]
            was_leader = proc.state.role is Role.LEADER
            if self.cfg.record_messages:
                self.record(pid, "timer", tkind)
            acts = proc.timer(tkind, self.clock)
            self._execute(pid, acts)
            self._observe(pid, was_leader)
        elif kind == "fault":
            (f,) = payload
            self.record("net", "fault", describe_fault(f))
            if isinstance(f, Crash):
                p = f.process
                if p in self.procs and p not in self.crashed:
                    for hook in self.crash_hooks:
                        hook(self, p)
                    self.crashed.add(p)
                    proc = self.procs[p]
                    if proc.state.role is not Role.HALTED:
                        proc._halt("crash")
                        self.record(p, "halt", "crash")
                    self._observe(p)
            else:
                self.faults.append(f)
                if f.end != INF:
                    self._push(int(f.end), "heal", f)
            self._census()
        elif kind == "heal":
            (f,) = payload
            if f in self.faults:
                self.faults.remove(f)
            self.record("net", "heal", describe_fault(f))
            self._census()
        elif kind == "join":
            pid, retries = payload
            if not self._runnable(pid) or self.procs[pid].state.has_secret:
                return
            target = self.leader()
            if target is None:
                if retries > 0:
                    self._push(self.clock + self.params.timeouts.heartbeat_max_us, "join", pid, retries - 1)
                return
            self._execute(pid, self.procs[pid].start_join(target, self.clock))
            if retries > 0:
                self._push(self.clock + self.params.timeouts.candidature_timeout_us, "join", pid, retries - 1)
        elif kind == "shutdown":
            forged, retries = payload
            target = self.leader()
            if target is None or self.procs[target].state.shutting_down:
                if target is None and retries > 0:
                    self._push(self.clock + self.params.timeouts.heartbeat_max_us, "shutdown", forged, retries - 1)
                return
            self.record("owner", "shutdown", f"{target};forged={int(forged)}")
            self._push(self.clock + LOCAL_LATENCY_US,
                       "deliver", OWNER, target, ShutdownRequest(), not forged)
        elif kind == "owner-boot":
            self._finish_bootstrap(*payload)
        elif kind == "call":
            (fn,) = payload
            fn(self)
        else:
            raise ContractViolation(f"unknown event kind {kind}")

    def run_until(self, t: int) -> list:
        """Execute every event at or before ``t``; returns the new trace records."""
        if t < self.clock:
            raise ContractViolation("cannot run backwards")
        mark = len(self.trace)
        q = self._queue
        while q and q[0].at <= t:
            ev = heapq.heappop(q)
            self.clock = ev.at
            try:
                self.step(ev)
            except ContractViolation as exc:
                raise ContractViolation(f"{exc} (trace position {len(self.trace)}, t={self.clock})") from exc
        self.clock = t
        return self.trace[mark:]

    def pending(self) -> int:
        return len(self._queue)

    # ---- export

    def trace_lines(self) -> list:
        return [f"{t},{p},{k},{d}" for t, p, k, d in self.trace]

    @property
    def operational(self) -> list:
        return [p for p in sorted(self.procs) if self._runnable(p) and self.procs[p].state.has_secret]
