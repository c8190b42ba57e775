"""Ground-truth checks computed as independent folds over a simulation trace.

None of these look at process internals; they only read the trace records
``(time_us, process, kind, detail)`` that the simulator emits.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True)
class Violation:
    observer: str
    index: int
    detail: str

    def __str__(self) -> str:
        return f"{self.observer} at trace[{self.index}]: {self.detail}"


def _fields(detail: str) -> dict:
    out = {}
    for part in detail.split(";"):
        if "=" in part:
            k, v = part.split("=", 1)
            out[k] = v
    return out


def _first(detail: str) -> str:
    return detail.split(";", 1)[0]


def _fold_peers(root: str, committed: list) -> str:
    peers = {int(root[1:])}
    for token in committed:
        cmd = token.split("/", 2)[2]
        if cmd.startswith("add:"):
            peers.add(int(cmd[5:]))
        elif cmd.startswith("expel:"):
            peers.discard(int(cmd[7:]))
    return ".".join(str(i) for i in sorted(peers))


# ---------------------------------------------------------------- safety


def election_safety(trace) -> list:
    leaders: dict = {}
    out = []
    for i, (t, p, kind, detail) in enumerate(trace):
        if kind != "state":
            continue
        f = _fields(detail)
        if f["role"] != "Leader":
            continue
        term = int(f["term"])
        other = leaders.setdefault(term, p)
        if other != p:
            out.append(Violation("election-safety", i, f"{other} and {p} both lead term {term}"))
    return out


def _agreement(trace, kinds, name) -> list:
    chosen: dict = {}
    out = []
    for i, (t, p, kind, detail) in enumerate(trace):
        if kind not in kinds:
            continue
        index = int(detail.split("/", 1)[0])
        prev = chosen.setdefault(index, (detail, p))
        if prev[0] != detail:
            out.append(Violation(name, i, f"index {index}: {prev[1]} has {prev[0]} but {p} has {detail}"))
    return out


def prefix_agreement(trace) -> list:
    """No two processes ever commit different entries at one index."""
    return _agreement(trace, ("commit", "qcommit"), "prefix-agreement")


def fork_free(trace) -> list:
    """No two quorum commits (by leaders) disagree on an index."""
    return _agreement(trace, ("qcommit",), "fork")


def coherence(trace) -> list:
    """Every recorded peer list equals the fold of its committed prefix."""
    root_of: dict = {}
    committed: dict = {}
    out = []
    for i, (t, p, kind, detail) in enumerate(trace):
        if kind == "boot":
            root_of[p] = p
        elif kind == "provision":
            dst = _first(detail)
            if p in root_of:
                root_of[dst] = root_of[p]
        elif kind in ("commit", "qcommit"):
            committed.setdefault(p, []).append(detail)
        elif kind == "state":
            f = _fields(detail)
            if f["secret"] != "1" or p not in root_of:
                continue
            want = _fold_peers(root_of[p], committed.get(p, []))
            if f["peers"] != want:
                out.append(Violation("coherence", i, f"{p} peers {f['peers']} but log folds to {want}"))
    return out


def monotonicity(trace) -> list:
    last: dict = {}
    out = []
    for i, (t, p, kind, detail) in enumerate(trace):
        if kind != "state":
            continue
        f = _fields(detail)
        term, commit, role = int(f["term"]), int(f["commit"]), f["role"]
        if p in last:
            pt, pc, pr = last[p]
            if term < pt or commit < pc:
                out.append(Violation("monotonicity", i, f"{p} went from term {pt}/commit {pc} to {term}/{commit}"))
            if pr == "Halted" and role != "Halted":
                out.append(Violation("monotonicity", i, f"{p} left Halted"))
        last[p] = (term, commit, role)
    return out


def sla_bound(trace, sla_max: int) -> list:
    operational: set = set()
    roots: list = []
    out = []
    for i, (t, p, kind, detail) in enumerate(trace):
        if kind == "boot":
            roots.append(p)
            if len(roots) > 1:
                out.append(Violation("sla", i, f"application bootstrapped twice ({', '.join(roots)})"))
        elif kind == "state":
            f = _fields(detail)
            if f["secret"] == "1" and f["role"] != "Halted":
                operational.add(p)
                if len(operational) > sla_max:
                    out.append(Violation("sla", i, f"{len(operational)} operational processes exceed {sla_max}"))
            else:
                operational.discard(p)
    return out


def secret_confinement(trace) -> list:
    """The secret reaches only processes whose attestation was accepted."""
    accepted: set = set()
    provisioned: set = set()
    roots: set = set()
    seen: set = set()
    out = []
    for i, (t, p, kind, detail) in enumerate(trace):
        if kind == "attest":
            f = _fields(detail)
            if f.get("ok") == "1":
                accepted.add(_first(detail))
        elif kind == "boot":
            roots.add(p)
        elif kind == "provision":
            dst = _first(detail)
            if dst not in accepted:
                out.append(Violation("secret-confinement", i, f"secret sent to unattested {dst}"))
            if _fields(detail).get("auth") == "1":
                provisioned.add(dst)
        elif kind == "state":
            f = _fields(detail)
            if f["secret"] == "1" and p not in seen:
                seen.add(p)
                if p in roots:
                    continue
                if p not in accepted or p not in provisioned:
                    out.append(Violation("secret-confinement", i, f"{p} operational without verified provisioning"))
    return out


# ---------------------------------------------------------------- liveness and census


@dataclass(frozen=True)
class Convergence:
    converged: bool
    index: int = -1
    pair: tuple = ()
    detail: str = ""

    def __bool__(self) -> bool:
        return self.converged


def final_states(trace) -> dict:
    last: dict = {}
    for i, (t, p, kind, detail) in enumerate(trace):
        if kind == "state":
            last[p] = (i, _fields(detail))
    return last


def check_convergence(trace) -> Convergence:
    """At quiescence all operational processes agree on peers and commit point."""
    live = [(p, i, f) for p, (i, f) in final_states(trace).items() if f["secret"] == "1" and f["role"] != "Halted"]
    live.sort(key=lambda x: x[1])
    for (p, i, f), (q, j, g) in zip(live, live[1:]):
        if (f["peers"], f["commit"]) != (g["peers"], g["commit"]):
            return Convergence(False, j, (p, q),
                               f"{p} peers={f['peers']} commit={f['commit']} vs {q} peers={g['peers']} commit={g['commit']}")
    return Convergence(True)


def anarchy_intervals(trace, end: Optional[int] = None) -> list:
    out = []
    start = None
    t = 0
    for t, p, kind, detail in trace:
        if kind != "census":
            continue
        on = _fields(detail)["anarchy"] == "1"
        if on and start is None:
            start = t
        elif not on and start is not None:
            out.append((start, t))
            start = None
    if start is not None:
        out.append((start, end if end is not None else t))
    return out


def census_at(trace, t: int) -> Optional[dict]:
    cur = None
    for tt, p, kind, detail in trace:
        if tt > t:
            break
        if kind == "census":
            cur = {k: int(v) for k, v in _fields(detail).items()}
    return cur


def terminal_roles(trace) -> dict:
    return {p: f["role"] for p, (i, f) in final_states(trace).items()}


SAFETY_OBSERVERS = ("election-safety", "prefix-agreement", "fork", "coherence", "monotonicity", "sla", "secret-confinement")


def check_safety(trace, sla_max: int) -> list:
    out = []
    out += election_safety(trace)
    out += prefix_agreement(trace)
    out += fork_free(trace)
    out += coherence(trace)
    out += monotonicity(trace)
    out += sla_bound(trace, sla_max)
    out += secret_confinement(trace)
    out.sort(key=lambda v: v.index)
    return out


def silent_after(trace, pid: str, t0: int) -> list:
    """Indices where ``pid``'s traffic changed a member's state after ``t0``.

    Needs a message-level trace: a ``recv`` from ``pid`` followed, in the same
    step, by a ``state`` or ``commit`` record of the receiver.
    """
    out = []
    for i, (t, p, kind, detail) in enumerate(trace):
        if t < t0 or kind != "recv" or not detail.startswith(f"{pid}:"):
            continue
        j = i + 1
        while j < len(trace) and trace[j][0] == t and trace[j][1] == p and trace[j][2] not in ("recv", "timer"):
            if trace[j][2] in ("state", "commit", "qcommit", "send"):
                out.append(i)
                break
            j += 1
    return out
