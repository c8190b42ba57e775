"""Core value types and membership arithmetic shared by every other module."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Union


class ContractViolation(ValueError):
    """An operation was called outside its precondition."""


class ConfigError(ValueError):
    """A timeout configuration breaks the liveness ordering."""


class ProcessId(NamedTuple):
    id: int
    host: str = ""

    def __str__(self) -> str:
        return f"p{self.id}"


# The owner is a harness actor, never a member.
OWNER = ProcessId(0, "owner")

Term = int


@dataclass(frozen=True, slots=True)
class Add:
    process: ProcessId

    def token(self) -> str:
        return f"add:{self.process}"


@dataclass(frozen=True, slots=True)
class Expel:
    process: ProcessId

    def token(self) -> str:
        return f"expel:{self.process}"


@dataclass(frozen=True, slots=True)
class PreShutdown:
    def token(self) -> str:
        return "preshutdown"


Command = Union[Add, Expel, PreShutdown]


@dataclass(frozen=True, slots=True)
class LogEntry:
    term: Term
    index: int
    command: Command

    def token(self) -> str:
        return f"{self.index}/{self.term}/{self.command.token()}"


@dataclass(frozen=True)
class ReplicatedLog:
    """Snapshot of a log with its commit point."""

    entries: tuple[LogEntry, ...] = ()
    commit_index: int = 0

    def __post_init__(self):
        for pos, entry in enumerate(self.entries, start=1):
            if entry.index != pos:
                raise ContractViolation(f"log index {entry.index} at position {pos}")
        for a, b in zip(self.entries, self.entries[1:]):
            if b.term < a.term:
                raise ContractViolation("entry terms must be nondecreasing")
        if not 0 <= self.commit_index <= self.last_index:
            raise ContractViolation("commit_index beyond last entry")

    @property
    def last_index(self) -> int:
        return len(self.entries)

    def committed(self) -> tuple[LogEntry, ...]:
        return self.entries[: self.commit_index]


@dataclass(frozen=True)
class PeerList:
    """Ordered set of members; iteration is always by process id."""

    members: tuple[ProcessId, ...] = ()
    _index: frozenset = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ordered = tuple(sorted(set(self.members)))
        object.__setattr__(self, "members", ordered)
        object.__setattr__(self, "_index", frozenset(ordered))

    @classmethod
    def of(cls, members: Iterable[ProcessId]) -> "PeerList":
        return cls(tuple(members))

    def __contains__(self, pid) -> bool:
        return pid in self._index

    def __iter__(self):
        return iter(self.members)

    def __len__(self) -> int:
        return len(self.members)

    def add(self, pid: ProcessId) -> "PeerList":
        return self if pid in self._index else PeerList(self.members + (pid,))

    def remove(self, pid: ProcessId) -> "PeerList":
        if pid not in self._index:
            return self
        return PeerList(tuple(m for m in self.members if m != pid))

    def token(self) -> str:
        return ".".join(str(m.id) for m in self.members)


def fold_peers(bootstrap: ProcessId, committed: Iterable[LogEntry]) -> PeerList:
    """Membership implied by a committed prefix."""
    peers = PeerList((bootstrap,))
    for entry in committed:
        cmd = entry.command
        if isinstance(cmd, Add):
            peers = peers.add(cmd.process)
        elif isinstance(cmd, Expel):
            peers = peers.remove(cmd.process)
    return peers


@dataclass(frozen=True)
class TimeoutConfig:
    """Virtual-time microsecond timing parameters.

    Each follower's heartbeat timeout is drawn uniformly from
    ``[heartbeat_min_us, heartbeat_max_us]``; the candidature timeout is
    ``candidature_factor * heartbeat_max_us``.
    """

    heartbeat_min_us: int
    heartbeat_max_us: int
    candidature_factor: float = 5.0
    leader_send_interval_us: int | None = None
    delta_us: int = 1_000

    def __post_init__(self):
        if self.heartbeat_min_us <= 0:
            raise ConfigError("heartbeat_min_us must be positive")
        if self.heartbeat_min_us > self.heartbeat_max_us:
            raise ConfigError("heartbeat_min_us exceeds heartbeat_max_us")
        if self.delta_us < 0:
            raise ConfigError("delta_us must be nonnegative")
        if self.leader_send_interval_us is None:
            object.__setattr__(self, "leader_send_interval_us", max(1, self.heartbeat_min_us // 5))
        elif self.leader_send_interval_us <= 0:
            raise ConfigError("leader_send_interval_us must be positive")

    @property
    def candidature_timeout_us(self) -> int:
        return int(self.candidature_factor * self.heartbeat_max_us)

    def validate(self) -> "TimeoutConfig":
        """Enforce broadcast << heartbeat timeout <= candidature timeout."""
        if self.delta_us >= self.heartbeat_min_us:
            raise ConfigError(
                f"delta {self.delta_us}us must be well below heartbeat_min {self.heartbeat_min_us}us"
            )
        if self.candidature_timeout_us < self.heartbeat_max_us:
            raise ConfigError(
                f"candidature timeout {self.candidature_timeout_us}us below heartbeat_max {self.heartbeat_max_us}us"
            )
        return self


@dataclass(frozen=True)
class ClusterCensus:
    n: int
    f: int
    i: int

    def __post_init__(self):
        if self.n < 1 or self.f < 0 or self.i < 0 or self.f + self.i > self.n:
            raise ContractViolation(f"inconsistent census {self}")


def is_anarchy(census: ClusterCensus) -> bool:
    return census.f + census.i > (census.n - 1) // 2


def majority_quorum(n: int) -> int:
    if n < 1:
        raise ContractViolation("quorum of an empty group")
    return n // 2 + 1


class Dominance(enum.Enum):
    A = "A"
    B = "B"
    TIE = "Tie"


def log_dominates(a_last_index: int, b_last_index: int) -> Dominance:
    """Compare two candidates by last log index only."""
    if a_last_index > b_last_index:
        return Dominance.A
    if a_last_index < b_last_index:
        return Dominance.B
    return Dominance.TIE
