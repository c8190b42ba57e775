"""Random adversarial schedules for the safety observers.

Each schedule is generated as scenario text, so the parser and renderer are
exercised on every run as well.  Timeouts are short to keep a run cheap.
"""
from __future__ import annotations

import random
from dataclasses import dataclass

from .scenario import Scenario, parse_scenario, run_scenario

TAMPER_KINDS = (
    "Heartbeat", "HeartbeatAck", "RequestVote", "VoteGrant", "CandidateInfo", "EntriesReply",
    "AttestQuote", "Provision", "JoinVote", "CommitShutdown",
)
HORIZON_MS = 1500


@dataclass(frozen=True)
class FuzzOutcome:
    seed: int
    n: int
    text: str
    violations: tuple

    @property
    def ok(self) -> bool:
        return not self.violations


def random_scenario_text(seed: int, n: int) -> str:
    rng = random.Random(f"fuzz:{seed}")
    lo = rng.choice((15, 20, 30))
    hi = lo + rng.choice((10, 20, 30))
    lines = [
        "[cluster]",
        f"n_initial={n}",
        f"sla_max={n + 3}",
        f"heartbeat_min_ms={lo}",
        f"heartbeat_max_ms={hi}",
        f"candidature_factor={rng.choice((3, 5))}",
        "delta_ms=1",
        f"seed={seed}",
        f"had={rng.choice(('on', 'off'))}",
        f"horizon_ms={HORIZON_MS}",
        "[events]",
    ]
    ids = list(range(1, n + 1))
    next_id = n + 1
    events = []

    def window(at):
        return rng.choice((f"{at + rng.randint(20, 600)}", "inf")) if rng.random() < 0.3 else f"{at + rng.randint(20, 600)}"

    for at in sorted(rng.randint(50, 1000) for _ in range(rng.randint(1, 7))):
        kind = rng.choices(
            ("crash", "isolate", "partition", "delay", "tamper", "join", "shutdown", "forged_shutdown"),
            weights=(3, 2, 3, 3, 2, 3, 1, 1),
        )[0]
        if kind == "crash":
            events.append((at, f"crash p{rng.choice(ids)}"))
        elif kind == "isolate":
            events.append((at, f"isolate p{rng.choice(ids)} until={window(at)}"))
        elif kind == "partition":
            side = rng.sample(ids, rng.randint(1, len(ids) - 1))
            rest = [i for i in ids if i not in side]
            events.append((at, f"partition {','.join(map(str, sorted(side)))}/{','.join(map(str, rest))} until={window(at)}"))
        elif kind == "delay":
            a, b = rng.sample(ids, 2)
            extra = rng.choice(("inf", str(rng.randint(2, 200))))
            events.append((at, f"delay p{a} p{b} extra={extra} until={window(at)}"))
        elif kind == "tamper":
            kinds = ",".join(sorted(rng.sample(TAMPER_KINDS, rng.randint(1, 3))))
            extra = ""
            if rng.random() < 0.5:
                extra = f" src=p{rng.choice(ids)}"
            events.append((at, f"tamper kinds={kinds} until={window(at)}{extra}"))
        elif kind == "join":
            code = " code=evil" if rng.random() < 0.25 else ""
            events.append((at, f"join p{next_id}{code}"))
            ids.append(next_id)
            next_id += 1
        else:
            events.append((at, kind))
    lines += [f"at={at} {body}" for at, body in events]
    return "\n".join(lines) + "\n"


def fuzz_once(seed: int, n: int) -> FuzzOutcome:
    text = random_scenario_text(seed, n)
    scen: Scenario = parse_scenario(text)
    res = run_scenario(scen)
    return FuzzOutcome(seed, n, text, tuple(res.violations))


def fuzz(runs: int, sizes=(3, 5, 7), seed0: int = 0):
    for k in range(runs):
        seed = seed0 + k
        yield fuzz_once(seed, sizes[k % len(sizes)])
