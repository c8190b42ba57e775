"""Mock enclave attestation: quotes, reports, an IAS stub and host delegates.

Signatures and MACs are keyed digests under keys that only the registry
holds, standing in for the hardware root of trust.  Every operation returns
the virtual time it consumed so callers can charge it to the right clock.
"""
from __future__ import annotations

import enum
import hashlib
import hmac
import random
from dataclasses import dataclass, field, replace
from typing import Optional, Union

from .types import ContractViolation, ProcessId


@dataclass(frozen=True)
class Measurement:
    digest: bytes

    def __post_init__(self):
        if len(self.digest) != 32:
            raise ValueError("measurement digest must be 32 bytes")

    @classmethod
    def of_code(cls, code: Union[bytes, str]) -> "Measurement":
        if isinstance(code, str):
            code = code.encode()
        return cls(hashlib.sha256(code).digest())

    def short(self) -> str:
        return self.digest.hex()[:8]


@dataclass(frozen=True)
class Quote:
    enclave: ProcessId
    measurement: Measurement
    challenge_response: bytes
    ephemeral_pubkey: bytes
    signature: bytes


@dataclass(frozen=True)
class Report:
    prover: ProcessId
    target: ProcessId
    measurement: Measurement
    mac: bytes


@dataclass(frozen=True)
class DelegatedEvidence:
    """A joiner's identity vouched for by its host delegate over a paired channel."""

    enclave: ProcessId
    measurement: Measurement
    challenge_response: bytes
    src_host: str
    tag: bytes


Evidence = Union[Quote, DelegatedEvidence]


@dataclass(frozen=True)
class SecureChannel:
    endpoints: tuple
    session_key: bytes
    established_at: int


@dataclass(frozen=True)
class LatencyModel:
    sign_us: int = 450
    verify_us: int = 844
    symmetric_us: int = 5
    context_switch_us: int = 5
    ias_roundtrip_us: int = 250_000
    ias_jitter_us: int = 0

    def __post_init__(self):
        for name in ("sign_us", "verify_us", "symmetric_us", "context_switch_us", "ias_roundtrip_us", "ias_jitter_us"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def local_us(self) -> int:
        return self.symmetric_us + self.context_switch_us


class Reason(enum.Enum):
    OK = "ok"
    BAD_SIGNATURE = "bad-signature"
    STALE_CHALLENGE = "stale-challenge"
    WRONG_MEASUREMENT = "wrong-measurement"
    BAD_MAC = "bad-mac"
    NO_CHANNEL = "no-channel"


@dataclass(frozen=True)
class Outcome:
    accepted: bool
    reason: Reason
    cost_us: int
    ias_calls: int = 0
    channel: Optional[SecureChannel] = None

    def __bool__(self) -> bool:
        return self.accepted


def _flip(b: bytes) -> bytes:
    return bytes([b[0] ^ 0x01]) + b[1:] if b else b"\x01"


def tamper_evidence(ev):
    """What an in-path adversary's bit flip does to a piece of evidence."""
    if isinstance(ev, Quote):
        return replace(ev, signature=_flip(ev.signature))
    if isinstance(ev, DelegatedEvidence):
        return replace(ev, tag=_flip(ev.tag))
    if isinstance(ev, Report):
        return replace(ev, mac=_flip(ev.mac))
    return ev


HAD_ID_BASE = 1_000_000


@dataclass
class AttestRegistry:
    """Attestation ground truth for one simulation.

    Holds the hardware keys, which enclave runs which code on which host,
    the outstanding challenges, the HAD channels and the IAS call counters.
    """

    latency: LatencyModel = field(default_factory=LatencyModel)
    seed: int = 0
    hosts: dict = field(default_factory=dict)
    enclaves: dict = field(default_factory=dict)
    had_channels: dict = field(default_factory=dict)
    channels: list = field(default_factory=list)
    events: list = field(default_factory=list)
    outstanding: set = field(default_factory=set)
    consumed: set = field(default_factory=set)
    ias_calls: int = 0
    owner_ias_calls: int = 0

    def __post_init__(self):
        self._root = hashlib.sha256(f"ames-root:{self.seed}".encode()).digest()
        self._rng = random.Random(f"{self.seed}:ias")

    # ---- declarations

    def register_host(self, host: str) -> ProcessId:
        if host not in self.hosts:
            had = ProcessId(HAD_ID_BASE + len(self.hosts), host)
            self.hosts[host] = had
            self.enclaves[had] = Measurement.of_code("had-enclave")
        return self.hosts[host]

    def register_enclave(self, pid: ProcessId, measurement: Measurement) -> None:
        self.register_host(pid.host)
        self.enclaves[pid] = measurement

    def had_of(self, host: str) -> ProcessId:
        return self.hosts[host]

    def _key(self, *parts) -> bytes:
        return hmac.new(self._root, "|".join(str(p) for p in parts).encode(), hashlib.sha256).digest()

    def _mac(self, key: bytes, *parts) -> bytes:
        return hmac.new(key, "|".join(p.hex() if isinstance(p, bytes) else str(p) for p in parts).encode(),
                        hashlib.sha256).digest()

    # ---- challenges

    def challenge(self, nonce: bytes) -> bytes:
        self.outstanding.add(nonce)
        return nonce

    def fresh_nonce(self, label: str) -> bytes:
        nonce = self._key("nonce", label, len(self.outstanding) + len(self.consumed))[:16]
        return self.challenge(nonce)

    # ---- remote attestation

    def generate_quote(self, enclave: ProcessId, challenge: bytes) -> tuple[Quote, int]:
        if enclave not in self.enclaves:
            raise ContractViolation(f"unknown enclave {enclave}")
        m = self.enclaves[enclave]
        pub = self._key("eph", enclave, challenge)[:16]
        sig = self._mac(self._key("sign", enclave.host), enclave, m.digest, challenge, pub)
        return Quote(enclave, m, challenge, pub, sig), self.latency.sign_us

    def ias_cost(self) -> int:
        j = self.latency.ias_jitter_us
        base = self.latency.ias_roundtrip_us
        return base + (self._rng.randint(-j, j) if j else 0)

    def ias_verify(self, quote: Quote, expected: Measurement, *, nonce: Optional[bytes] = None,
                   owner: bool = False) -> Outcome:
        if owner:
            self.owner_ias_calls += 1
        else:
            self.ias_calls += 1
        cost = self.ias_cost() + self.latency.verify_us
        want = self._mac(self._key("sign", quote.enclave.host), quote.enclave, quote.measurement.digest,
                         quote.challenge_response, quote.ephemeral_pubkey)
        if not hmac.compare_digest(want, quote.signature):
            return self._record(quote.enclave, Outcome(False, Reason.BAD_SIGNATURE, cost, 1))
        r = quote.challenge_response
        if r in self.consumed or r not in self.outstanding or (nonce is not None and r != nonce):
            return self._record(quote.enclave, Outcome(False, Reason.STALE_CHALLENGE, cost, 1))
        self.outstanding.discard(r)
        self.consumed.add(r)
        if quote.measurement != expected:
            return self._record(quote.enclave, Outcome(False, Reason.WRONG_MEASUREMENT, cost, 1))
        return self._record(quote.enclave, Outcome(True, Reason.OK, cost, 1))

    def _record(self, who, out: Outcome) -> Outcome:
        self.events.append(("verify", who, out.accepted, out.reason.value))
        return out

    # ---- local attestation

    def make_report(self, prover: ProcessId, target: ProcessId) -> Report:
        if prover.host != target.host:
            raise ContractViolation(f"local attestation across hosts {prover.host} and {target.host}")
        m = self.enclaves[prover]
        mac = self._mac(self._key("report", target.host, target), prover, m.digest)
        return Report(prover, target, m, mac)

    def local_attest(self, prover: ProcessId, target: ProcessId, expected: Optional[Measurement] = None, *,
                     report: Optional[Report] = None) -> Outcome:
        if prover.host != target.host:
            raise ContractViolation(f"local attestation across hosts {prover.host} and {target.host}")
        report = report if report is not None else self.make_report(prover, target)
        cost = self.latency.local_us
        want = self._mac(self._key("report", target.host, target), report.prover, report.measurement.digest)
        if report.target != target or not hmac.compare_digest(want, report.mac):
            return Outcome(False, Reason.BAD_MAC, cost)
        expected = expected if expected is not None else self.enclaves[target]
        if report.measurement != expected:
            return Outcome(False, Reason.WRONG_MEASUREMENT, cost)
        return Outcome(True, Reason.OK, cost)

    # ---- host delegates

    def had_pair(self, h1: str, h2: str, *, now: int = 0, tamper: bool = False) -> Outcome:
        """Mutually attest the two host delegates through the IAS, once."""
        key = frozenset((h1, h2))
        if h1 == h2:
            raise ContractViolation("a host is trivially paired with itself")
        if key in self.had_channels:
            return Outcome(True, Reason.OK, 0, 0, self.had_channels[key])
        a, b = self.register_host(h1), self.register_host(h2)
        had_m = Measurement.of_code("had-enclave")
        cost, calls, verdict = 0, 0, Outcome(True, Reason.OK, 0)
        for prover, verifier in ((a, b), (b, a)):
            nonce = self.fresh_nonce(f"pair:{verifier}:{prover}")
            q, c = self.generate_quote(prover, nonce)
            if tamper:
                q = tamper_evidence(q)
            out = self.ias_verify(q, had_m, nonce=nonce)
            cost += c + out.cost_us
            calls += 1
            if not out:
                verdict = out
                break
        if not verdict:
            return Outcome(False, verdict.reason, cost, calls)
        chan = SecureChannel((a, b), self._key("had-chan", *sorted((h1, h2))), now + cost)
        self.had_channels[key] = chan
        self.channels.append(chan)
        self.events.append(("had-pair", h1, h2))
        return Outcome(True, Reason.OK, cost, calls, chan)

    def paired(self, h1: str, h2: str) -> bool:
        return h1 == h2 or frozenset((h1, h2)) in self.had_channels

    def delegate_evidence(self, enclave: ProcessId, challenge: bytes, dst_host: str) -> tuple[Optional[DelegatedEvidence], int]:
        """Local attestation of ``enclave`` to its delegate, who then tags the
        claim for the delegate on ``dst_host``."""
        had = self.had_of(enclave.host)
        out = self.local_attest(enclave, had, self.enclaves[enclave])
        cost = out.cost_us
        if not out:
            return None, cost
        if dst_host == enclave.host:
            key = self._key("host-local", enclave.host)
        else:
            chan = self.had_channels.get(frozenset((enclave.host, dst_host)))
            if chan is None:
                raise ContractViolation(f"hosts {enclave.host} and {dst_host} are not paired; call had_pair first")
            key = chan.session_key
        m = self.enclaves[enclave]
        tag = self._mac(key, enclave, m.digest, challenge, enclave.host)
        return DelegatedEvidence(enclave, m, challenge, enclave.host, tag), cost

    def verify_delegated(self, ev: DelegatedEvidence, verifier: ProcessId, expected: Measurement, *,
                         nonce: Optional[bytes] = None) -> Outcome:
        cost = self.latency.local_us
        if ev.src_host == verifier.host:
            key = self._key("host-local", verifier.host)
        else:
            chan = self.had_channels.get(frozenset((ev.src_host, verifier.host)))
            if chan is None:
                return Outcome(False, Reason.NO_CHANNEL, cost)
            key = chan.session_key
        want = self._mac(key, ev.enclave, ev.measurement.digest, ev.challenge_response, ev.src_host)
        if not hmac.compare_digest(want, ev.tag):
            return self._record(ev.enclave, Outcome(False, Reason.BAD_SIGNATURE, cost))
        r = ev.challenge_response
        if r in self.consumed or r not in self.outstanding or (nonce is not None and r != nonce):
            return self._record(ev.enclave, Outcome(False, Reason.STALE_CHALLENGE, cost))
        self.outstanding.discard(r)
        self.consumed.add(r)
        if ev.measurement != expected:
            return self._record(ev.enclave, Outcome(False, Reason.WRONG_MEASUREMENT, cost))
        return self._record(ev.enclave, Outcome(True, Reason.OK, cost))

    def verify_evidence(self, ev, verifier: ProcessId, expected: Measurement, *, nonce: Optional[bytes] = None) -> Outcome:
        if isinstance(ev, Quote):
            return self.ias_verify(ev, expected, nonce=nonce)
        if isinstance(ev, DelegatedEvidence):
            return self.verify_delegated(ev, verifier, expected, nonce=nonce)
        return Outcome(False, Reason.BAD_SIGNATURE, 0)

    def open_channel(self, a: ProcessId, b: ProcessId, now: int) -> SecureChannel:
        chan = SecureChannel((a, b), self._key("chan", a, b, now), now)
        self.channels.append(chan)
        self.events.append(("channel", a, b))
        return chan

    # ---- mutual flows over both sides

    def remote_attest(self, p1: ProcessId, p2: ProcessId, expected: Measurement, *, now: int = 0,
                      tamper: tuple = (False, False)) -> Outcome:
        """Direct mutual attestation: each side quotes, the other asks the IAS."""
        cost, calls = 0, 0
        for side, (prover, verifier) in enumerate(((p1, p2), (p2, p1))):
            nonce = self.fresh_nonce(f"direct:{verifier}:{prover}")
            q, c = self.generate_quote(prover, nonce)
            if tamper[side]:
                q = tamper_evidence(q)
            out = self.ias_verify(q, expected, nonce=nonce)
            cost += c + out.cost_us
            calls += 1
            if not out:
                return Outcome(False, out.reason, cost, calls)
        return Outcome(True, Reason.OK, cost, calls, self.open_channel(p1, p2, now + cost))

    def delegated_attest(self, p1: ProcessId, p2: ProcessId, expected: Optional[Measurement] = None, *,
                         now: int = 0, tamper: tuple = (False, False)) -> Outcome:
        """Mutual attestation bridged by the two host delegates, no IAS."""
        if p1.host == p2.host:
            raise ContractViolation("delegation needs two different hosts")
        if frozenset((p1.host, p2.host)) not in self.had_channels:
            raise ContractViolation(f"hosts {p1.host} and {p2.host} are not paired; call had_pair first")
        cost = 0
        for side, (prover, verifier) in enumerate(((p1, p2), (p2, p1))):
            want = expected if expected is not None else self.enclaves[verifier]
            report = self.make_report(prover, self.had_of(prover.host))
            if tamper[side]:
                report = tamper_evidence(report)
            out = self.local_attest(prover, self.had_of(prover.host), want, report=report)
            cost += out.cost_us
            if not out:
                return Outcome(False, out.reason, cost)
            # the far delegate hands the vouched identity to the verifier
            cost += self.latency.local_us
        return Outcome(True, Reason.OK, cost, 0, self.open_channel(p1, p2, now + cost))
