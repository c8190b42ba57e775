"""Deterministic per-process membership state machine.

A :class:`Process` consumes timestamped inputs (messages, timer expiries,
local commands) and returns a list of actions.  It never performs I/O; the
simulator (or any other runtime) delivers inputs and executes actions.
"""
from __future__ import annotations

import enum
import hashlib
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .messages import (
    Action, ArmTimer, AttestChallenge, AttestQuote, AttestVerdict, CandidateInfo,
    CommitShutdown, EntriesReply, FetchEntries, GenerateQuote, Halt, Heartbeat,
    HeartbeatAck, JoinQuery, JoinRequest, JoinVote, MetricsMark, Provision,
    ProvisionComplete, RequestVote, SealData, Send, ShutdownRequest, VerifyQuote,
    VoteGrant,
)
from .types import (
    OWNER, Add, Command, ContractViolation, Dominance, Expel, LogEntry, PeerList,
    PreShutdown, ProcessId, ReplicatedLog, TimeoutConfig, log_dominates,
    majority_quorum,
)


class Role(enum.Enum):
    LEADER = "Leader"
    FOLLOWER = "Follower"
    CANDIDATE = "Candidate"
    HALTED = "Halted"


class JoinPhase(enum.Enum):
    ATTESTING = "Attesting"
    AWAITING_VOTES = "AwaitingVotes"
    AWAITING_REPLICATION = "AwaitingReplication"
    PROVISIONING = "Provisioning"


@dataclass
class JoinSession:
    joiner: ProcessId
    case_n: int
    nonce: bytes
    started_at: int
    phase: JoinPhase = JoinPhase.ATTESTING
    verifying: bool = False
    attested: bool = False
    vote: Optional[bool] = None
    acks: set = field(default_factory=set)
    entry_index: Optional[int] = None
    timeout_us: int = 0


@dataclass(frozen=True)
class QueuedVote:
    candidate: ProcessId
    term: int
    last_log_index: int


@dataclass(frozen=True)
class Vote:
    term: int
    candidate: ProcessId
    last_log_index: int


@dataclass(frozen=True)
class EngineParams:
    timeouts: TimeoutConfig
    sla_max: int = 64
    seed: int = 0
    join_vote_yes: bool = True

    @property
    def join_session_timeout_us(self) -> int:
        return self.timeouts.candidature_timeout_us

    @property
    def join_accept_window_us(self) -> int:
        return self.timeouts.candidature_timeout_us

    @property
    def expel_grace_us(self) -> int:
        # Longest an expelled process can stay operational: a late provision
        # accepted inside the accept window, then a full candidacy.
        t = self.timeouts
        return 2 * (t.candidature_timeout_us + t.heartbeat_max_us)

    @property
    def ack_grace_us(self) -> int:
        return 2 * self.timeouts.delta_us


def draw_timeout(params: EngineParams, pid: ProcessId) -> int:
    """Per-process heartbeat timeout, uniform over the configured range."""
    t = params.timeouts
    rng = random.Random(f"{params.seed}:T:{pid.id}")
    return rng.randint(t.heartbeat_min_us, t.heartbeat_max_us)


@dataclass
class ProcessState:
    self_id: ProcessId
    measurement: bytes
    params: EngineParams
    role: Role = Role.FOLLOWER
    term: int = 0
    log: list = field(default_factory=list)
    commit_index: int = 0
    applied_index: int = 0
    peer_list: PeerList = field(default_factory=PeerList)
    bootstrap: Optional[ProcessId] = None
    has_secret: bool = False
    secret: Optional[bytes] = None
    my_timeout_us: int = 0
    leader_id: Optional[ProcessId] = None
    last_leader_contact: int = 0
    contact_deadline: Optional[int] = None
    leader_lost: bool = False
    queued_vote: Optional[QueuedVote] = None
    voted_for: Optional[Vote] = None
    votes: set = field(default_factory=set)
    retry_deadline: Optional[int] = None
    candidature_deadline: Optional[int] = None
    # leader side
    follower_deadlines: dict = field(default_factory=dict)
    follower_timeouts: dict = field(default_factory=dict)
    match_index: dict = field(default_factory=dict)
    known_commit: dict = field(default_factory=dict)
    next_index: dict = field(default_factory=dict)
    pending: deque = field(default_factory=deque)
    expelling: set = field(default_factory=set)
    pending_join: Optional[JoinSession] = None
    join_queue: deque = field(default_factory=deque)
    authority_acks: set = field(default_factory=set)
    authority_announced: bool = False
    last_quorum_ok: int = 0
    next_tick: Optional[int] = None
    nonce_counter: int = 0
    expel_grace: dict = field(default_factory=dict)
    # joiner side
    join_target: Optional[ProcessId] = None
    quote_sent_at: Optional[int] = None
    # shutdown
    sealed: bool = False
    shutting_down: bool = False
    halt_reason: Optional[str] = None
    armed: dict = field(default_factory=dict)

    @property
    def last_index(self) -> int:
        return len(self.log)

    @property
    def operational(self) -> bool:
        return self.has_secret and self.role is not Role.HALTED

    @property
    def replicated_log(self) -> ReplicatedLog:
        return ReplicatedLog(tuple(self.log), self.commit_index)

    def view(self) -> tuple:
        """Observable summary recorded in traces whenever it changes."""
        return (self.role.value, self.term, self.commit_index, self.peer_list.token(), int(self.has_secret))


class Process:
    """One enclave process running the membership protocol."""

    def __init__(self, state: ProcessState):
        self.state = state

    # ------------------------------------------------------------ creation

    @classmethod
    def nonoperational(cls, params: EngineParams, pid: ProcessId, measurement: bytes) -> "Process":
        return cls(ProcessState(self_id=pid, measurement=measurement, params=params))

    @property
    def pid(self) -> ProcessId:
        return self.state.self_id

    @property
    def role(self) -> Role:
        return self.state.role

    @property
    def cfg(self) -> TimeoutConfig:
        return self.state.params.timeouts

    # ------------------------------------------------------------ dispatch

    def receive(self, sender: ProcessId, msg, now: int, authentic: bool = True) -> list:
        s = self.state
        if s.role is Role.HALTED or not authentic:
            return []
        if not s.has_secret:
            return self._joiner_receive(sender, msg, now)
        if isinstance(msg, JoinRequest):
            if s.role is Role.LEADER and sender == msg.new_process:
                return self.on_join_request(msg, now)
            return []
        if isinstance(msg, AttestQuote):
            if s.role is Role.LEADER and sender == msg.joiner:
                return self._on_attest_quote(msg, now)
            return []
        if isinstance(msg, AttestVerdict):
            if sender == s.self_id and s.role is Role.LEADER:
                return self._on_attest_verdict(msg, now)
            return []
        if isinstance(msg, ShutdownRequest):
            if sender == OWNER and s.role is Role.LEADER:
                return self.start_shutdown(msg, now)
            return []
        if sender not in s.peer_list or sender == s.self_id:
            return []
        if isinstance(msg, Heartbeat):
            return self.on_heartbeat(msg, now) if msg.leader == sender else []
        if isinstance(msg, EntriesReply):
            if msg.leader != sender:
                return []
            hb = Heartbeat(msg.leader, msg.term, msg.commit_index, msg.prev_index, msg.prev_term, msg.new_entries)
            return self.on_heartbeat(hb, now)
        if isinstance(msg, HeartbeatAck):
            return self.on_heartbeat_ack(msg, now) if msg.follower == sender else []
        if isinstance(msg, FetchEntries):
            return self._on_fetch(msg, now) if msg.follower == sender else []
        if isinstance(msg, RequestVote):
            return self.on_request_vote(msg, now) if msg.candidate == sender else []
        if isinstance(msg, VoteGrant):
            return self.on_vote_grant(msg, now) if msg.voter == sender else []
        if isinstance(msg, CandidateInfo):
            return self.on_candidate_info(msg, now)
        if isinstance(msg, CommitShutdown):
            return self._on_commit_shutdown(msg, now) if msg.leader == sender else []
        return []

    def timer(self, kind: str, now: int) -> list:
        s = self.state
        armed = s.armed.get(kind)
        if armed is not None and armed <= now:
            del s.armed[kind]
        if s.role is Role.HALTED:
            return []
        if kind == "contact":
            if s.role is not Role.FOLLOWER or s.contact_deadline is None or not s.has_secret:
                return []
            if now < s.contact_deadline:
                return self._arm("contact", s.contact_deadline)
            return self._on_contact_expiry(now)
        if kind == "retry":
            if s.role is not Role.CANDIDATE or s.retry_deadline is None:
                return []
            if now < s.retry_deadline:
                return self._arm("retry", s.retry_deadline)
            return self.on_heartbeat_timeout(now)
        if kind == "candidature":
            if s.role is not Role.CANDIDATE or s.candidature_deadline is None:
                return []
            if now < s.candidature_deadline:
                return self._arm("candidature", s.candidature_deadline)
            return self.on_candidature_timeout(now)
        if kind == "tick":
            if s.role is not Role.LEADER or s.next_tick is None:
                return []
            if now < s.next_tick:
                return self._arm("tick", s.next_tick)
            return self.leader_tick(now)
        if kind == "join":
            return self._check_join_timeout(now)
        return []

    # ------------------------------------------------------------ helpers

    def _arm(self, kind: str, deadline: int) -> list:
        armed = self.state.armed
        current = armed.get(kind)
        if current is not None and current <= deadline:
            return []
        armed[kind] = deadline
        return [ArmTimer(kind, deadline)]

    def _halt(self, reason: str) -> list:
        s = self.state
        if s.role is Role.HALTED:
            return []
        s.role = Role.HALTED
        s.halt_reason = reason
        s.armed.clear()
        s.contact_deadline = s.retry_deadline = s.candidature_deadline = s.next_tick = None
        return [Halt(reason)]

    def _timeout_of(self, pid: ProcessId) -> int:
        return self.state.follower_timeouts.get(pid, self.cfg.heartbeat_max_us)

    def _broadcast(self, make) -> list:
        s = self.state
        return [Send(p, make(p)) for p in s.peer_list if p != s.self_id]

    def _seal(self) -> list:
        s = self.state
        if s.sealed:
            return []
        s.sealed = True
        return [SealData()]

    def _new_nonce(self, joiner: ProcessId) -> bytes:
        s = self.state
        s.nonce_counter += 1
        raw = f"{s.params.seed}:{s.self_id.id}:{joiner.id}:{s.term}:{s.nonce_counter}".encode()
        return hashlib.sha256(raw).digest()[:16]

    # ------------------------------------------------------------ follower

    def on_heartbeat(self, msg: Heartbeat, now: int) -> list:
        s = self.state
        if msg.leader not in s.peer_list or msg.term < s.term:
            return []
        acts: list = []
        if s.role is Role.LEADER:
            if msg.term == s.term:
                return []
            self._step_down()
        if msg.term > s.term:
            s.term = msg.term
        if s.role is Role.CANDIDATE:
            s.role = Role.FOLLOWER
            s.retry_deadline = s.candidature_deadline = None
            s.votes = set()
        s.leader_id = msg.leader
        s.leader_lost = False
        s.queued_vote = None
        s.last_leader_contact = now
        s.contact_deadline = now + s.my_timeout_us
        acts += self._arm("contact", s.contact_deadline)
        acked, applied = self._append_from_leader(msg.prev_index, msg.prev_term, msg.new_entries, msg.commit_index, now)
        acts += applied
        if s.role is Role.HALTED:
            return acts
        vote = None
        if msg.piggyback is not None:
            vote = JoinVote(msg.piggyback.joiner, s.params.join_vote_yes and not s.shutting_down)
        acts.append(Send(msg.leader, HeartbeatAck(s.self_id, s.term, acked, s.my_timeout_us, vote, s.commit_index)))
        if acked < 0:
            acts.append(Send(msg.leader, FetchEntries(s.self_id, s.term, s.commit_index + 1)))
        return acts

    def _append_from_leader(self, prev_index, prev_term, entries, leader_commit, now) -> tuple[int, list]:
        s = self.state
        log = s.log
        if prev_index > len(log):
            return -1, []
        if prev_index > 0 and log[prev_index - 1].term != prev_term:
            return -1, []
        acts: list = []
        for e in entries:
            if e.index <= len(log):
                if log[e.index - 1].term == e.term:
                    continue
                if e.index <= s.commit_index:
                    # never rewrite a committed entry
                    return -1, acts
                del log[e.index - 1:]
            log.append(e)
            if isinstance(e.command, PreShutdown):
                acts += self._seal()
        match = prev_index + len(entries)
        target = min(leader_commit, match)
        if target > s.commit_index:
            acts += self._commit_to(target, now)
        return match, acts

    def _on_contact_expiry(self, now: int) -> list:
        s = self.state
        q = s.queued_vote
        if (
            q is not None
            and q.candidate in s.peer_list
            and log_dominates(q.last_log_index, s.last_index) is not Dominance.B
            and (s.voted_for is None or s.voted_for.term < q.term)
        ):
            return self._grant(q.candidate, q.term, q.last_log_index, now)
        s.queued_vote = None
        return self.on_heartbeat_timeout(now)

    def _grant(self, candidate: ProcessId, term: int, last: int, now: int) -> list:
        s = self.state
        s.voted_for = Vote(term, candidate, last)
        s.term = max(s.term, term)
        s.queued_vote = None
        s.leader_lost = True
        acts: list = []
        if s.role is Role.CANDIDATE:
            s.votes = set()
            s.retry_deadline = now + s.my_timeout_us
            acts += self._arm("retry", s.retry_deadline)
        else:
            s.contact_deadline = now + s.my_timeout_us
            acts += self._arm("contact", s.contact_deadline)
        acts.append(Send(candidate, VoteGrant(s.self_id, term)))
        return acts

    def on_request_vote(self, msg: RequestVote, now: int) -> list:
        s = self.state
        cand = msg.candidate
        if cand not in s.peer_list or cand == s.self_id or s.role is Role.LEADER:
            return []
        if msg.term < s.term:
            return []
        vf = s.voted_for
        if vf is not None and vf.term >= msg.term:
            if vf.candidate == cand:
                return [Send(cand, VoteGrant(s.self_id, msg.term))] if vf.term == msg.term else []
            if log_dominates(msg.last_log_index, vf.last_log_index) is not Dominance.A:
                return [Send(cand, CandidateInfo(vf.candidate, vf.last_log_index))]
            return []
        if s.role is Role.FOLLOWER and not s.leader_lost and s.contact_deadline is not None and now < s.contact_deadline:
            q = s.queued_vote
            if q is None or q.candidate == cand:
                s.queued_vote = QueuedVote(cand, msg.term, msg.last_log_index)
                return []
            if log_dominates(msg.last_log_index, q.last_log_index) is Dominance.A:
                s.queued_vote = QueuedVote(cand, msg.term, msg.last_log_index)
                return [Send(q.candidate, CandidateInfo(cand, msg.last_log_index))]
            return [Send(cand, CandidateInfo(q.candidate, q.last_log_index))]
        if s.role is Role.FOLLOWER and not s.leader_lost:
            # contact lapsed but the expiry timer has not run yet
            s.queued_vote = QueuedVote(cand, msg.term, msg.last_log_index)
            return self._on_contact_expiry(now)
        if log_dominates(msg.last_log_index, s.last_index) is not Dominance.B:
            return self._grant(cand, msg.term, msg.last_log_index, now)
        return []

    def on_heartbeat_timeout(self, now: int) -> list:
        s = self.state
        floor = s.voted_for.term if s.voted_for is not None else 0
        s.term = max(s.term, floor) + 1
        s.role = Role.CANDIDATE
        s.voted_for = Vote(s.term, s.self_id, s.last_index)
        s.votes = {s.self_id}
        s.queued_vote = None
        s.contact_deadline = None
        acts: list = []
        if s.candidature_deadline is None:
            s.candidature_deadline = now + self.cfg.candidature_timeout_us
            acts += self._arm("candidature", s.candidature_deadline)
        s.retry_deadline = now + s.my_timeout_us
        acts += self._arm("retry", s.retry_deadline)
        rv = RequestVote(s.self_id, s.term, s.last_index)
        acts += self._broadcast(lambda p: rv)
        if len(s.votes) >= majority_quorum(len(s.peer_list)):
            acts += self._become_leader(now)
        return acts

    def on_vote_grant(self, msg: VoteGrant, now: int) -> list:
        s = self.state
        if s.role is not Role.CANDIDATE or msg.term != s.term:
            return []
        s.votes.add(msg.voter)
        tally = sum(1 for v in s.votes if v in s.peer_list)
        if tally >= majority_quorum(len(s.peer_list)):
            return self._become_leader(now)
        return []

    def on_candidate_info(self, msg: CandidateInfo, now: int) -> list:
        s = self.state
        if s.role is not Role.CANDIDATE:
            return []
        if log_dominates(msg.last_log_index, s.last_index) is Dominance.A:
            s.retry_deadline = now + s.my_timeout_us
            return self._arm("retry", s.retry_deadline)
        return []

    def on_candidature_timeout(self, now: int) -> list:
        s = self.state
        if s.role is not Role.CANDIDATE or s.candidature_deadline is None or now < s.candidature_deadline:
            return []
        return self._halt("suicide")

    def _on_commit_shutdown(self, msg: CommitShutdown, now: int) -> list:
        s = self.state
        if msg.term < s.term or s.role is Role.LEADER:
            return []
        return self._seal() + self._halt("shutdown")

    # ------------------------------------------------------------ log application

    def _commit_to(self, target: int, now: int) -> list:
        s = self.state
        s.commit_index = target
        acts: list = []
        provisions: list = []
        while s.applied_index < s.commit_index and s.role is not Role.HALTED:
            entry = s.log[s.applied_index]
            acts += self.apply_entry(entry, now, provisions)
        if s.role is Role.HALTED:
            # entries past the one that halted us are never applied here
            s.commit_index = s.applied_index
        if provisions and s.role is Role.LEADER:
            acts += self._send_provisions(provisions, now)
        return acts

    def apply_entry(self, entry: LogEntry, now: int, provisions: Optional[list] = None) -> list:
        s = self.state
        if entry.index != s.applied_index + 1 or entry.index > s.commit_index:
            raise ContractViolation(f"apply {entry.index} after {s.applied_index} (commit {s.commit_index})")
        s.applied_index = entry.index
        cmd = entry.command
        acts: list = []
        if isinstance(cmd, Add):
            s.peer_list = s.peer_list.add(cmd.process)
            if s.role is Role.LEADER:
                p = cmd.process
                sess = s.pending_join
                if sess is not None and sess.joiner == p:
                    sess.phase = JoinPhase.PROVISIONING
                    if provisions is not None:
                        provisions.append(p)
                t = s.follower_timeouts.setdefault(p, draw_timeout(s.params, p))
                s.follower_deadlines[p] = now + t + s.params.ack_grace_us
        elif isinstance(cmd, Expel):
            p = cmd.process
            s.peer_list = s.peer_list.remove(p)
            s.expel_grace[p] = now
            if p == s.self_id:
                return self._halt("expelled")
            if s.role is Role.LEADER:
                s.expelling.discard(p)
                for d in (s.follower_deadlines, s.match_index, s.next_index, s.known_commit):
                    d.pop(p, None)
                s.authority_acks.discard(p)
                acts.append(MetricsMark(f"expelled:{p}"))
                sess = s.pending_join
                if sess is not None and sess.joiner == p:
                    s.pending_join = None
        elif isinstance(cmd, PreShutdown):
            s.shutting_down = True
            acts += self._seal()
            if s.role is Role.LEADER:
                cs = CommitShutdown(s.self_id, s.term)
                acts += self._broadcast(lambda p: cs)
                acts.append(MetricsMark("shutdown_served"))
                acts += self._halt("shutdown")
        return acts

    # ------------------------------------------------------------ leader

    def _become_leader(self, now: int) -> list:
        s = self.state
        s.role = Role.LEADER
        s.retry_deadline = s.candidature_deadline = None
        s.queued_vote = None
        s.votes = set()
        old = s.leader_id
        s.leader_id = s.self_id
        self._init_leader_state(now)
        acts: list = [MetricsMark("leader_elected")]
        if old is not None and old != s.self_id and old in s.peer_list:
            acts += self.start_expel(old, now)
        if not any(isinstance(a, Send) and isinstance(a.msg, Heartbeat) for a in acts):
            acts += self._send_heartbeats()
        s.next_tick = now + self.cfg.leader_send_interval_us
        acts += self._arm("tick", s.next_tick)
        return acts

    def _init_leader_state(self, now: int) -> None:
        s = self.state
        grace = s.params.ack_grace_us
        s.follower_deadlines = {}
        s.match_index = {}
        s.known_commit = {}
        s.next_index = {}
        for p in s.peer_list:
            if p == s.self_id:
                continue
            s.follower_deadlines[p] = now + self._timeout_of(p) + grace
            s.match_index[p] = 0
            s.next_index[p] = s.last_index + 1
        s.pending = deque()
        s.expelling = set()
        s.pending_join = None
        s.join_queue = deque()
        s.authority_acks = set()
        s.authority_announced = False
        s.last_quorum_ok = now

    def _step_down(self) -> None:
        s = self.state
        s.role = Role.FOLLOWER
        s.next_tick = None
        s.armed.pop("tick", None)
        s.pending_join = None
        s.pending = deque()
        s.expelling = set()

    def _heartbeat_for(self, p: ProcessId) -> Heartbeat:
        s = self.state
        nxt = s.next_index.get(p, s.last_index + 1)
        prev = nxt - 1
        prev_term = s.log[prev - 1].term if prev > 0 else 0
        query = None
        sess = s.pending_join
        if sess is not None and sess.case_n == 2 and sess.vote is None and len(s.peer_list) == 2:
            query = JoinQuery(sess.joiner)
        return Heartbeat(s.self_id, s.term, s.commit_index, prev, prev_term, tuple(s.log[prev:]), query)

    def _send_heartbeats(self) -> list:
        return self._broadcast(self._heartbeat_for)

    def leader_tick(self, now: int) -> list:
        s = self.state
        if s.role is not Role.LEADER:
            return []
        acts: list = []
        for p in list(s.peer_list):
            if p == s.self_id or p in s.expelling or p not in s.peer_list:
                continue
            if p not in s.follower_deadlines:
                s.follower_deadlines[p] = now + self._timeout_of(p) + s.params.ack_grace_us
            elif s.follower_deadlines[p] <= now:
                acts += self.start_expel(p, now, broadcast=False)
                if s.role is not Role.LEADER:
                    return acts
        fresh = 1 + sum(
            1 for p in s.peer_list if p != s.self_id and s.follower_deadlines.get(p, 0) > now
        )
        if fresh >= majority_quorum(len(s.peer_list)):
            s.last_quorum_ok = now
        elif now - s.last_quorum_ok >= self.cfg.heartbeat_max_us:
            return acts + [MetricsMark("isolated")] + self._halt("isolated")
        acts += self._send_heartbeats()
        s.next_tick = now + self.cfg.leader_send_interval_us
        acts += self._arm("tick", s.next_tick)
        return acts

    def on_heartbeat_ack(self, msg: HeartbeatAck, now: int) -> list:
        s = self.state
        if s.role is not Role.LEADER or msg.term != s.term:
            return []
        f = msg.follower
        s.follower_timeouts[f] = msg.timeout_us
        s.follower_deadlines[f] = now + msg.timeout_us
        acts: list = []
        if msg.acked_index >= 0:
            if msg.acked_index > s.match_index.get(f, 0):
                s.match_index[f] = msg.acked_index
            s.next_index[f] = s.match_index[f] + 1
        if msg.commit_index > s.known_commit.get(f, 0):
            s.known_commit[f] = msg.commit_index
        if not s.authority_announced:
            s.authority_acks.add(f)
            if 1 + len(s.authority_acks) >= majority_quorum(len(s.peer_list)):
                s.authority_announced = True
                acts.append(MetricsMark("authority"))
        sess = s.pending_join
        if msg.piggyback is not None and sess is not None and msg.piggyback.joiner == sess.joiner and sess.vote is None:
            sess.vote = msg.piggyback.yes
            sess.acks.add(f)
            acts += self._advance_join(now)
        acts += self._try_commit(now)
        if s.role is Role.LEADER and s.pending and not self._uncommitted_own_entry():
            acts += self._pump(now, broadcast=False)
        return acts

    def _on_fetch(self, msg: FetchEntries, now: int) -> list:
        s = self.state
        if s.role is not Role.LEADER or msg.term > s.term:
            return []
        start = max(1, min(msg.from_index, s.last_index + 1))
        s.next_index[msg.follower] = start
        prev = start - 1
        prev_term = s.log[prev - 1].term if prev > 0 else 0
        reply = EntriesReply(s.self_id, s.term, s.commit_index, prev, prev_term, tuple(s.log[prev:]))
        return [Send(msg.follower, reply)]

    def _replicas(self, index: int, population) -> int:
        s = self.state
        own = 1 if s.self_id in population else 0
        return own + sum(1 for p in population if p != s.self_id and s.match_index.get(p, 0) >= index)

    def _entry_replicated(self, index: int) -> bool:
        s = self.state
        peers = s.peer_list
        for e in s.log[s.commit_index:index]:
            cmd = e.command
            if isinstance(cmd, Expel) and cmd.process in peers:
                population = [p for p in peers if p != cmd.process]
                if self._replicas(index, population) < majority_quorum(len(population)):
                    return False
            elif self._replicas(index, peers) < majority_quorum(len(peers)):
                return False
        return True

    def _try_commit(self, now: int) -> list:
        s = self.state
        if s.role is not Role.LEADER:
            return []
        for n in range(s.last_index, s.commit_index, -1):
            if s.log[n - 1].term != s.term:
                break
            if self._entry_replicated(n):
                acts = self._commit_to(n, now)
                if s.role is Role.LEADER:
                    acts += self._pump(now)
                return acts
        return []

    def _membership_settled(self) -> bool:
        """True once a majority of the current peers know the last membership change committed."""
        s = self.state
        last = next((e.index for e in reversed(s.log[:s.commit_index]) if isinstance(e.command, (Add, Expel))), 0)
        if last == 0:
            return True
        known = 1 + sum(1 for p in s.peer_list if p != s.self_id and s.known_commit.get(p, 0) >= last)
        return known >= majority_quorum(len(s.peer_list))

    def _uncommitted_own_entry(self) -> bool:
        s = self.state
        return s.last_index > s.commit_index and s.log[-1].term == s.term

    def _slots_in_use(self, now: int) -> int:
        s = self.state
        grace = s.params.expel_grace_us
        lingering = sum(1 for p, t in s.expel_grace.items() if now < t + grace and p not in s.peer_list)
        return len(s.peer_list) + lingering

    def _append(self, cmd: Command) -> LogEntry:
        s = self.state
        entry = LogEntry(s.term, s.last_index + 1, cmd)
        s.log.append(entry)
        return entry

    def _pump(self, now: int, broadcast: bool = True) -> list:
        """Move the next queued change into the single-entry window."""
        s = self.state
        acts: list = []
        while s.role is Role.LEADER and not self._uncommitted_own_entry() and s.pending:
            cmd = s.pending.popleft()
            sess = s.pending_join
            if isinstance(cmd, (Add, Expel)) and not self._membership_settled():
                s.pending.appendleft(cmd)
                break
            if isinstance(cmd, Expel):
                if cmd.process not in s.peer_list:
                    s.expelling.discard(cmd.process)
                    continue
            elif isinstance(cmd, Add):
                if sess is None or sess.joiner != cmd.process or s.shutting_down:
                    continue
                if s.commit_index < s.last_index:
                    # old-term leftovers must settle before membership grows
                    s.pending.appendleft(cmd)
                    break
                if self._slots_in_use(now) >= s.params.sla_max:
                    acts += self._abort_join(now, "sla")
                    continue
            elif isinstance(cmd, PreShutdown):
                acts += self._seal()
            entry = self._append(cmd)
            if isinstance(cmd, Add):
                sess.phase = JoinPhase.AWAITING_REPLICATION
                sess.entry_index = entry.index
                if sess.case_n == 2 and sess.vote and len(s.peer_list) == 2:
                    # both participants voted yes: coordinator commits
                    acts += self._commit_to(entry.index, now)
                    continue
            if self._entry_replicated(entry.index):
                acts += self._commit_to(entry.index, now)
        if broadcast and s.role is Role.LEADER:
            acts += self._send_heartbeats()
        return acts

    def start_expel(self, suspect: ProcessId, now: int, broadcast: bool = True) -> list:
        s = self.state
        if s.role is not Role.LEADER or suspect == s.self_id:
            return []
        if suspect not in s.peer_list or suspect in s.expelling:
            return []
        s.expelling.add(suspect)
        s.pending.append(Expel(suspect))
        return self._pump(now, broadcast=broadcast)

    def start_shutdown(self, req: ShutdownRequest, now: int) -> list:
        s = self.state
        if s.role is not Role.LEADER or s.shutting_down or any(isinstance(c, PreShutdown) for c in s.pending):
            return []
        s.pending.append(PreShutdown())
        return self._pump(now)

    # ------------------------------------------------------------ joins (leader side)

    def on_join_request(self, msg: JoinRequest, now: int) -> list:
        s = self.state
        joiner = msg.new_process
        if joiner in s.peer_list or s.shutting_down:
            return []
        sess = s.pending_join
        if sess is not None:
            if sess.joiner != joiner and joiner not in s.join_queue:
                s.join_queue.append(joiner)
            return []
        return self.start_new_process(msg, s.params.sla_max, now)

    def start_new_process(self, join: JoinRequest, sla_max: int, now: int) -> list:
        s = self.state
        if s.role is not Role.LEADER or s.pending_join is not None:
            return []
        joiner = join.new_process
        if self._slots_in_use(now) >= sla_max:
            return [MetricsMark(f"join_rejected:{joiner}")]
        sess = JoinSession(joiner, len(s.peer_list), self._new_nonce(joiner), now)
        sess.timeout_us = s.params.join_session_timeout_us
        s.pending_join = sess
        acts: list = [Send(joiner, AttestChallenge(s.self_id, sess.nonce))]
        acts += self._arm("join", now + sess.timeout_us)
        return acts

    def _on_attest_quote(self, msg: AttestQuote, now: int) -> list:
        sess = self.state.pending_join
        if sess is None or sess.joiner != msg.joiner or msg.nonce != sess.nonce or sess.verifying:
            return []
        sess.verifying = True
        return [VerifyQuote(msg.joiner, msg.evidence, sess.nonce)]

    def _on_attest_verdict(self, msg: AttestVerdict, now: int) -> list:
        sess = self.state.pending_join
        if sess is None or sess.joiner != msg.joiner or sess.attested:
            return []
        if not msg.accepted:
            return self._abort_join(now, f"attest-{msg.reason}")
        sess.attested = True
        return self._advance_join(now)

    def _advance_join(self, now: int) -> list:
        s = self.state
        sess = s.pending_join
        if sess is None or not sess.attested or sess.phase is not JoinPhase.ATTESTING and sess.phase is not JoinPhase.AWAITING_VOTES:
            return []
        if sess.case_n == 2 and len(s.peer_list) == 2:
            if sess.vote is None:
                sess.phase = JoinPhase.AWAITING_VOTES
                return []
            if not sess.vote:
                return self._abort_join(now, "vote-no")
        sess.phase = JoinPhase.AWAITING_REPLICATION
        s.pending.append(Add(sess.joiner))
        return self._pump(now)

    def _abort_join(self, now: int, why: str) -> list:
        s = self.state
        sess = s.pending_join
        if sess is None:
            return []
        s.pending_join = None
        acts: list = [MetricsMark(f"join_aborted:{sess.joiner}:{why}")]
        return acts + self._next_join(now)

    def _next_join(self, now: int) -> list:
        s = self.state
        while s.join_queue and s.pending_join is None and s.role is Role.LEADER:
            joiner = s.join_queue.popleft()
            if joiner not in s.peer_list:
                return self.start_new_process(JoinRequest(joiner), s.params.sla_max, now)
        return []

    def _check_join_timeout(self, now: int) -> list:
        s = self.state
        sess = s.pending_join
        if s.role is not Role.LEADER or sess is None:
            return []
        deadline = sess.started_at + sess.timeout_us
        if now < deadline:
            return self._arm("join", deadline)
        if sess.phase in (JoinPhase.ATTESTING, JoinPhase.AWAITING_VOTES):
            return self._abort_join(now, "timeout")
        return []

    def _send_provisions(self, joiners: list, now: int) -> list:
        s = self.state
        acts: list = []
        snapshot = tuple(s.log[: s.commit_index])
        for p in joiners:
            if p not in s.peer_list:
                continue
            t = s.follower_timeouts[p]
            s.match_index[p] = s.commit_index
            s.next_index[p] = s.commit_index + 1
            prov = Provision(s.self_id, s.secret, s.peer_list, t, snapshot, s.commit_index, s.term)
            acts.append(Send(p, prov))
            acts.append(ProvisionComplete(p))
            s.pending_join = None
        return acts + self._next_join(now)

    # ------------------------------------------------------------ joiner side

    def start_join(self, target: ProcessId, now: int) -> list:
        s = self.state
        if s.has_secret or s.role is Role.HALTED:
            return []
        s.join_target = target
        return [Send(target, JoinRequest(s.self_id)), MetricsMark("join_requested")]

    def _joiner_receive(self, sender, msg, now: int) -> list:
        s = self.state
        if s.join_target is None or sender != s.join_target:
            return []
        if isinstance(msg, AttestChallenge):
            s.quote_sent_at = now
            return [GenerateQuote(sender, msg.nonce)]
        if isinstance(msg, Provision):
            if s.quote_sent_at is None or now - s.quote_sent_at > s.params.join_accept_window_us:
                return []
            return self._accept_provision(msg, now)
        return []

    def _accept_provision(self, msg: Provision, now: int) -> list:
        s = self.state
        s.has_secret = True
        s.secret = msg.secret
        s.role = Role.FOLLOWER
        s.term = msg.term
        s.log = list(msg.log_snapshot)
        s.commit_index = s.applied_index = msg.commit_index
        s.peer_list = msg.peer_list
        s.bootstrap = s.bootstrap or _bootstrap_of(msg)
        s.leader_id = msg.leader
        s.my_timeout_us = msg.assigned_timeout_us
        s.last_leader_contact = now
        s.contact_deadline = now + s.my_timeout_us
        return [MetricsMark("provisioned")] + self._arm("contact", s.contact_deadline)


def _bootstrap_of(msg: Provision) -> Optional[ProcessId]:
    # The first process never appears in an Add entry.
    added = {e.command.process for e in msg.log_snapshot if isinstance(e.command, Add)}
    candidates = [p for p in msg.peer_list if p not in added]
    expelled = [e.command.process for e in msg.log_snapshot if isinstance(e.command, Expel)]
    if candidates:
        return candidates[0]
    return expelled[0] if expelled else None


# ---------------------------------------------------------------- constructors


def bootstrap_first(params: EngineParams, self_id: ProcessId, owner_secret: bytes, *,
                    measurement: bytes, now: int = 0) -> Process:
    """First process of an application, after the owner's attestation succeeded."""
    state = ProcessState(self_id=self_id, measurement=measurement, params=params)
    state.role = Role.LEADER
    state.term = 1
    state.peer_list = PeerList((self_id,))
    state.bootstrap = self_id
    state.has_secret = True
    state.secret = owner_secret
    state.my_timeout_us = draw_timeout(params, self_id)
    state.voted_for = Vote(1, self_id, 0)
    state.leader_id = self_id
    proc = Process(state)
    proc._init_leader_state(now)
    state.next_tick = now + params.timeouts.leader_send_interval_us
    return proc


def formed_cluster(params: EngineParams, members: list, secret: bytes, *, measurement: bytes,
                   now: int = 0) -> dict:
    """A cluster in the state it would reach after ``members[0]`` bootstrapped
    and every other member joined in order, all entries committed in term 1."""
    first = members[0]
    log = [LogEntry(1, i, Add(p)) for i, p in enumerate(members[1:], start=1)]
    peers = PeerList(tuple(members))
    timeouts = {p: draw_timeout(params, p) for p in members}
    procs = {}
    for p in members:
        st = ProcessState(self_id=p, measurement=measurement, params=params)
        st.term = 1
        st.log = list(log)
        st.commit_index = st.applied_index = len(log)
        st.peer_list = peers
        st.bootstrap = first
        st.has_secret = True
        st.secret = secret
        st.my_timeout_us = timeouts[p]
        st.leader_id = first
        if p == first:
            st.role = Role.LEADER
            st.voted_for = Vote(1, first, 0)
            st.follower_timeouts = {q: timeouts[q] for q in members if q != first}
        else:
            st.role = Role.FOLLOWER
            st.last_leader_contact = now
            st.contact_deadline = now + timeouts[p] + params.ack_grace_us
        proc = Process(st)
        if p == first:
            proc._init_leader_state(now)
            st.known_commit = {q: len(log) for q in members if q != first}
            st.next_tick = now
        procs[p] = proc
    return procs


def initial_timers(proc: Process) -> list:
    """Timer arms a runtime must schedule for a freshly constructed process."""
    s = proc.state
    acts: list = []
    if s.role is Role.LEADER and s.next_tick is not None:
        acts += proc._arm("tick", s.next_tick)
    if s.role is Role.FOLLOWER and s.contact_deadline is not None:
        acts += proc._arm("contact", s.contact_deadline)
    return acts
