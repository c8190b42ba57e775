"""Wire messages exchanged between processes and actions emitted by the engine.

Every message travels inside a simnet envelope that carries its
authenticity tag; the engine only sees the payload plus a verdict.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional, Union

from .types import LogEntry, PeerList, ProcessId, Term


@dataclass(frozen=True, slots=True)
class JoinQuery:
    joiner: ProcessId


@dataclass(frozen=True, slots=True)
class JoinVote:
    joiner: ProcessId
    yes: bool


@dataclass(frozen=True, slots=True)
class Heartbeat:
    leader: ProcessId
    term: Term
    commit_index: int
    prev_index: int = 0
    prev_term: Term = 0
    new_entries: tuple[LogEntry, ...] = ()
    piggyback: Optional[JoinQuery] = None


@dataclass(frozen=True, slots=True)
class HeartbeatAck:
    follower: ProcessId
    term: Term
    # -1 means the heartbeat's entries could not be appended
    acked_index: int
    timeout_us: int
    piggyback: Optional[JoinVote] = None
    # the follower's commit index after handling the heartbeat
    commit_index: int = 0


@dataclass(frozen=True, slots=True)
class FetchEntries:
    follower: ProcessId
    term: Term
    from_index: int


@dataclass(frozen=True, slots=True)
class EntriesReply:
    leader: ProcessId
    term: Term
    commit_index: int
    prev_index: int
    prev_term: Term
    new_entries: tuple[LogEntry, ...]


@dataclass(frozen=True, slots=True)
class RequestVote:
    candidate: ProcessId
    term: Term
    last_log_index: int


@dataclass(frozen=True, slots=True)
class VoteGrant:
    voter: ProcessId
    term: Term


@dataclass(frozen=True, slots=True)
class CandidateInfo:
    dominating_candidate: ProcessId
    last_log_index: int


@dataclass(frozen=True, slots=True)
class JoinRequest:
    new_process: ProcessId


@dataclass(frozen=True, slots=True)
class AttestChallenge:
    leader: ProcessId
    nonce: bytes


@dataclass(frozen=True, slots=True)
class AttestQuote:
    joiner: ProcessId
    nonce: bytes
    evidence: Any


@dataclass(frozen=True, slots=True)
class AttestVerdict:
    """Verification outcome handed back to the verifier by its runtime."""

    joiner: ProcessId
    accepted: bool
    reason: str = ""


@dataclass(frozen=True, slots=True)
class Provision:
    leader: ProcessId
    secret: bytes
    peer_list: PeerList
    assigned_timeout_us: int
    log_snapshot: tuple[LogEntry, ...]
    commit_index: int
    term: Term


@dataclass(frozen=True, slots=True)
class ShutdownRequest:
    pass


@dataclass(frozen=True, slots=True)
class CommitShutdown:
    leader: ProcessId
    term: Term


Message = Union[
    Heartbeat, HeartbeatAck, FetchEntries, EntriesReply, RequestVote, VoteGrant,
    CandidateInfo, JoinRequest, AttestChallenge, AttestQuote, AttestVerdict,
    Provision, ShutdownRequest, CommitShutdown,
]

# Kinds a not-yet-member may exchange with the leader.
HANDSHAKE_KINDS = (JoinRequest, AttestQuote)


# ---------------------------------------------------------------- actions


@dataclass(frozen=True, slots=True)
class Send:
    to: ProcessId
    msg: Message


@dataclass(frozen=True, slots=True)
class ArmTimer:
    kind: str
    deadline: int


@dataclass(frozen=True, slots=True)
class SealData:
    pass


@dataclass(frozen=True, slots=True)
class Halt:
    reason: str


@dataclass(frozen=True, slots=True)
class ProvisionComplete:
    new: ProcessId


@dataclass(frozen=True, slots=True)
class MetricsMark:
    label: str


@dataclass(frozen=True, slots=True)
class GenerateQuote:
    """Ask the runtime to produce attestation evidence for ``to``."""

    to: ProcessId
    nonce: bytes


@dataclass(frozen=True, slots=True)
class VerifyQuote:
    """Ask the runtime to verify a joiner's evidence; answered by AttestVerdict."""

    joiner: ProcessId
    evidence: Any
    nonce: bytes


Action = Union[Send, ArmTimer, SealData, Halt, ProvisionComplete, MetricsMark, GenerateQuote, VerifyQuote]


def describe(msg) -> str:
    """Compact comma-free token for trace records."""
    name = type(msg).__name__
    if isinstance(msg, Heartbeat):
        extra = f";q={msg.piggyback.joiner}" if msg.piggyback else ""
        ents = "|".join(e.token() for e in msg.new_entries)
        return f"{name};t={msg.term};c={msg.commit_index};prev={msg.prev_index};e={ents}{extra}"
    if isinstance(msg, HeartbeatAck):
        extra = f";v={msg.piggyback.joiner}:{int(msg.piggyback.yes)}" if msg.piggyback else ""
        return f"{name};t={msg.term};a={msg.acked_index}{extra}"
    if isinstance(msg, RequestVote):
        return f"{name};t={msg.term};last={msg.last_log_index}"
    if isinstance(msg, VoteGrant):
        return f"{name};t={msg.term}"
    if isinstance(msg, CandidateInfo):
        return f"{name};dom={msg.dominating_candidate};last={msg.last_log_index}"
    if isinstance(msg, EntriesReply):
        ents = "|".join(e.token() for e in msg.new_entries)
        return f"{name};t={msg.term};c={msg.commit_index};prev={msg.prev_index};e={ents}"
    if isinstance(msg, FetchEntries):
        return f"{name};from={msg.from_index}"
    if isinstance(msg, (JoinRequest,)):
        return f"{name};p={msg.new_process}"
    if isinstance(msg, AttestVerdict):
        return f"{name};p={msg.joiner};ok={int(msg.accepted)};r={msg.reason}"
    if isinstance(msg, (AttestChallenge, AttestQuote)):
        return f"{name};n={msg.nonce.hex()[:12]}"
    if isinstance(msg, Provision):
        return f"{name};peers={msg.peer_list.token()};T={msg.assigned_timeout_us};c={msg.commit_index}"
    if isinstance(msg, CommitShutdown):
        return f"{name};t={msg.term}"
    return name
