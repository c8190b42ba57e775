import copy

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ames.engine import Role, Vote, bootstrap_first, draw_timeout, initial_timers
from ames.messages import (
    AttestChallenge, AttestQuote, AttestVerdict, CandidateInfo, CommitShutdown, EntriesReply, FetchEntries,
    Halt, Heartbeat, HeartbeatAck, JoinRequest, MetricsMark, Provision, RequestVote, SealData, Send,
    ShutdownRequest, VerifyQuote, VoteGrant,
)
from ames.types import OWNER, Add, ContractViolation, Expel, LogEntry, PreShutdown, ProcessId, majority_quorum

from conftest import MEASUREMENT, cluster, make_params, pids


def sent(acts, kind):
    return [a for a in acts if isinstance(a, Send) and isinstance(a.msg, kind)]


def marks(acts):
    return [a.label for a in acts if isinstance(a, MetricsMark)]


def heartbeat_from(leader_state, to_state, **kw):
    """A heartbeat carrying nothing new for an in-sync follower."""
    s = leader_state
    args = dict(leader=s.self_id, term=s.term, commit_index=s.commit_index, prev_index=s.last_index,
                prev_term=s.log[-1].term if s.log else 0)
    args.update(kw)
    return Heartbeat(**args)


def ack(pid, procs, acked, term=1):
    return HeartbeatAck(pid, term, acked, procs[pid].state.my_timeout_us)


# ---------------------------------------------------------------- bootstrap


def test_bootstrap_first_is_a_singleton_leader():
    params = make_params()
    p1 = ProcessId(1, "h1")
    proc = bootstrap_first(params, p1, b"s", measurement=MEASUREMENT)
    s = proc.state
    assert s.role is Role.LEADER and s.has_secret and list(s.peer_list) == [p1]
    assert s.my_timeout_us == draw_timeout(params, p1)
    assert any(a.kind == "tick" for a in initial_timers(proc))


def test_draw_timeout_in_range_and_deterministic():
    params = make_params(seed=4)
    ts = [draw_timeout(params, p) for p in pids(50)]
    assert all(50_000 <= t <= 150_000 for t in ts)
    assert ts == [draw_timeout(params, p) for p in pids(50)]
    assert len(set(ts)) > 40


# ---------------------------------------------------------------- on_heartbeat


def test_in_sync_heartbeat_is_acked_and_resets_deadline(five):
    _, ms, procs = five
    p1, p2 = ms[0], ms[1]
    f = procs[p2]
    acts = f.receive(p1, heartbeat_from(procs[p1].state, f.state), 5_000)
    (a,) = sent(acts, HeartbeatAck)
    assert a.to == p1 and a.msg.acked_index == f.state.last_index == 4
    assert f.state.contact_deadline == 5_000 + f.state.my_timeout_us


def test_heartbeat_from_non_member_is_ignored(five):
    _, ms, procs = five
    f = procs[ms[1]]
    before = copy.deepcopy(f.state)
    stranger = ProcessId(9, "h9")
    assert f.receive(stranger, Heartbeat(stranger, 7, 0), 1_000) == []
    assert f.on_heartbeat(Heartbeat(stranger, 7, 0), 1_000) == []
    assert f.state == before


def test_candidate_reverts_on_equal_term_heartbeat(five):
    _, ms, procs = five
    p2, p3 = procs[ms[1]], procs[ms[2]]
    p2.on_heartbeat_timeout(200_000)
    assert p2.state.role is Role.CANDIDATE and p2.state.term == 2
    hb = Heartbeat(ms[2], 2, 4, 4, 1)
    acts = p2.receive(ms[2], hb, 210_000)
    assert p2.state.role is Role.FOLLOWER
    assert p2.state.candidature_deadline is None
    assert [a.to for a in sent(acts, HeartbeatAck)] == [ms[2]]


def test_stale_term_heartbeat_is_discarded(five):
    _, ms, procs = five
    f = procs[ms[1]]
    f.state.term = 3
    assert f.receive(ms[0], heartbeat_from(procs[ms[0]].state, f.state), 1_000) == []


def test_log_gap_triggers_fetch(five):
    _, ms, procs = five
    f = procs[ms[1]]
    hb = Heartbeat(ms[0], 1, 6, prev_index=6, prev_term=1)
    acts = f.receive(ms[0], hb, 1_000)
    assert sent(acts, HeartbeatAck)[0].msg.acked_index == -1
    (fetch,) = sent(acts, FetchEntries)
    assert fetch.msg.from_index == f.state.commit_index + 1


# ---------------------------------------------------------------- join, acks and commit


def drive_join_to_add(leader, joiner, now=1_000):
    acts = leader.receive(joiner, JoinRequest(joiner), now)
    (ch,) = sent(acts, AttestChallenge)
    acts = leader.receive(joiner, AttestQuote(joiner, ch.msg.nonce, None), now)
    assert any(isinstance(a, VerifyQuote) for a in acts)
    return leader.receive(leader.pid, AttestVerdict(joiner, True), now)


def test_quorum_of_acks_commits_and_only_then_provisions(five):
    _, ms, procs = five
    leader = procs[ms[0]]
    p6 = ProcessId(6, "h6")
    acts = drive_join_to_add(leader, p6)
    s = leader.state
    assert s.log[-1].command == Add(p6) and s.commit_index == 4
    assert not sent(acts, Provision)
    replicas = 1
    for pid in ms[1:]:
        acts = leader.receive(pid, ack(pid, procs, 5), 2_000)
        replicas += 1
        if replicas < majority_quorum(5):
            assert s.commit_index == 4 and not sent(acts, Provision)
        else:
            break
    assert replicas == 3 and s.commit_index == 5
    assert [a.to for a in sent(acts, Provision)] == [p6]
    assert p6 in s.peer_list
    # the same ack again commits nothing new and provisions nobody
    again = leader.receive(ms[2], ack(ms[2], procs, 5), 2_100)
    assert s.commit_index == 5 and not sent(again, Provision)


def test_join_with_one_member_needs_no_consensus_round():
    params = make_params()
    p1, p2 = pids(2)
    leader = bootstrap_first(params, p1, b"s", measurement=MEASUREMENT)
    acts = drive_join_to_add(leader, p2)
    assert leader.state.commit_index == 1
    assert [a.to for a in sent(acts, Provision)] == [p2]


def test_join_with_two_members_waits_for_the_piggybacked_vote():
    _, ms, procs = cluster(2)
    leader, follower = procs[ms[0]], procs[ms[1]]
    p3 = ProcessId(3, "h3")
    acts = drive_join_to_add(leader, p3)
    assert leader.state.last_index == 1 and not sent(acts, Provision)
    hb = leader._heartbeat_for(ms[1])
    assert hb.piggyback is not None and hb.piggyback.joiner == p3
    reply = sent(follower.receive(ms[0], hb, 2_000), HeartbeatAck)[0].msg
    assert reply.piggyback.yes
    acts = leader.receive(ms[1], reply, 2_100)
    assert [a.to for a in sent(acts, Provision)] == [p3]
    assert p3 in leader.state.peer_list


def test_join_at_sla_max_is_rejected():
    _, ms, procs = cluster(3, sla_max=3)
    leader = procs[ms[0]]
    p4 = ProcessId(4, "h4")
    acts = leader.receive(p4, JoinRequest(p4), 1_000)
    assert marks(acts) == [f"join_rejected:{p4}"]
    assert not sent(acts, AttestChallenge)


def test_rejected_attestation_aborts_join(five):
    _, ms, procs = five
    leader = procs[ms[0]]
    p6 = ProcessId(6, "h6")
    acts = leader.receive(p6, JoinRequest(p6), 1_000)
    (ch,) = sent(acts, AttestChallenge)
    leader.receive(p6, AttestQuote(p6, ch.msg.nonce, None), 1_000)
    acts = leader.receive(leader.pid, AttestVerdict(p6, False, "bad-signature"), 1_000)
    assert any(m.startswith(f"join_aborted:{p6}") for m in marks(acts))
    assert leader.state.last_index == 4 and leader.state.pending_join is None


# ---------------------------------------------------------------- elections


def test_heartbeat_timeout_broadcasts_request_vote(five):
    _, ms, procs = five
    f = procs[ms[1]]
    acts = f.timer("contact", f.state.contact_deadline)
    rvs = sent(acts, RequestVote)
    assert sorted(a.to for a in rvs) == [ms[0], ms[2], ms[3], ms[4]]
    assert all(a.msg.term == 2 and a.msg.last_log_index == 4 for a in rvs)
    assert f.state.role is Role.CANDIDATE


def test_retry_keeps_candidature_deadline(five):
    _, ms, procs = five
    f = procs[ms[1]]
    f.on_heartbeat_timeout(100_000)
    deadline = f.state.candidature_deadline
    assert deadline == 100_000 + f.cfg.candidature_timeout_us
    acts = f.timer("retry", f.state.retry_deadline)
    assert {a.msg.term for a in sent(acts, RequestVote)} == {3}
    assert f.state.candidature_deadline == deadline


def test_request_vote_rule_a_non_member(five):
    _, ms, procs = five
    f = procs[ms[1]]
    stranger = ProcessId(9, "h9")
    assert f.receive(stranger, RequestVote(stranger, 5, 10), 200_000) == []


def test_request_vote_rule_b_queues_while_contact_is_fresh(five):
    _, ms, procs = five
    f = procs[ms[1]]
    assert f.receive(ms[2], RequestVote(ms[2], 2, 4), 1_000) == []
    assert f.state.queued_vote.candidate == ms[2]
    # a dominating candidate replaces the queued one, which is told about it
    acts = f.receive(ms[3], RequestVote(ms[3], 2, 5), 1_000)
    assert [(a.to, a.msg) for a in sent(acts, CandidateInfo)] == [(ms[2], CandidateInfo(ms[3], 5))]
    # a dominated candidate is told about the queued one
    acts = f.receive(ms[4], RequestVote(ms[4], 2, 3), 1_000)
    assert [(a.to, a.msg) for a in sent(acts, CandidateInfo)] == [(ms[4], CandidateInfo(ms[3], 5))]
    assert f.state.queued_vote.candidate == ms[3]


def test_request_vote_rule_c_names_the_candidate_voted_for(five):
    _, ms, procs = five
    f = procs[ms[1]]
    f.state.leader_lost = True
    f.state.voted_for = Vote(2, ms[2], 7)
    acts = f.receive(ms[3], RequestVote(ms[3], 2, 5), 1_000)
    assert [(a.to, a.msg) for a in sent(acts, CandidateInfo)] == [(ms[3], CandidateInfo(ms[2], 7))]


def test_request_vote_rule_d_grants_a_dominating_queued_candidate(five):
    _, ms, procs = five
    f = procs[ms[1]]
    f.receive(ms[2], RequestVote(ms[2], 2, 4), 1_000)
    acts = f.timer("contact", f.state.contact_deadline)
    assert [(a.to, a.msg) for a in sent(acts, VoteGrant)] == [(ms[2], VoteGrant(ms[1], 2))]
    assert f.state.voted_for == Vote(2, ms[2], 4)
    assert f.state.role is Role.FOLLOWER


def test_request_vote_rule_d_discards_a_dominated_queued_candidate(five):
    _, ms, procs = five
    f = procs[ms[1]]
    f.receive(ms[2], RequestVote(ms[2], 2, 3), 1_000)
    acts = f.timer("contact", f.state.contact_deadline)
    assert not sent(acts, VoteGrant)
    assert len(sent(acts, RequestVote)) == 4 and f.state.role is Role.CANDIDATE


def test_self_and_two_grants_elect_in_five(five):
    _, ms, procs = five
    c = procs[ms[1]]
    c.on_heartbeat_timeout(200_000)
    assert c.receive(ms[2], VoteGrant(ms[2], 2), 200_500) == []
    acts = c.receive(ms[3], VoteGrant(ms[3], 2), 200_600)
    assert c.state.role is Role.LEADER and "leader_elected" in marks(acts)
    # the new term opens by expelling the old leader, appended once a majority
    # is known to have committed the last membership change
    assert ms[0] in c.state.expelling and c.state.last_index == 4
    assert c.state.candidature_deadline is None
    c.receive(ms[2], HeartbeatAck(ms[2], 2, 4, procs[ms[2]].state.my_timeout_us, None, 4), 201_000)
    assert c.state.last_index == 4
    c.receive(ms[3], HeartbeatAck(ms[3], 2, 4, procs[ms[3]].state.my_timeout_us, None, 4), 201_100)
    assert c.state.log[-1] == LogEntry(2, 5, Expel(ms[0]))


def test_grant_after_suicide_is_absorbed(five):
    _, ms, procs = five
    c = procs[ms[1]]
    c.on_heartbeat_timeout(0)
    acts = c.timer("candidature", c.state.candidature_deadline)
    assert acts == [Halt("suicide")]
    assert c.receive(ms[2], VoteGrant(ms[2], 2), c.state.params.timeouts.candidature_timeout_us + 1) == []
    assert c.state.role is Role.HALTED


def test_two_members_one_crashed_never_elects_and_suicides():
    _, ms, procs = cluster(2)
    p2 = procs[ms[1]]
    t = p2.state.contact_deadline
    p2.timer("contact", t)
    deadline = t + p2.cfg.candidature_timeout_us
    assert p2.state.candidature_deadline == deadline
    now = t
    while p2.state.role is Role.CANDIDATE:
        nxt = min(p2.state.retry_deadline, p2.state.candidature_deadline)
        kind = "retry" if nxt == p2.state.retry_deadline and nxt < deadline else "candidature"
        acts = p2.timer(kind, nxt)
        assert nxt >= now
        now = nxt
    assert p2.state.role is Role.HALTED and now == deadline and p2.state.halt_reason == "suicide"


def test_candidate_info_from_a_longer_log_defers_retry(five):
    _, ms, procs = five
    c = procs[ms[1]]
    c.on_heartbeat_timeout(0)
    acts = c.receive(ms[2], CandidateInfo(ms[3], 9), 40_000)
    assert not sent(acts, RequestVote)
    assert c.state.retry_deadline == 40_000 + c.state.my_timeout_us


def test_candidate_info_ignored_when_dominated_or_follower(five):
    _, ms, procs = five
    c = procs[ms[1]]
    c.on_heartbeat_timeout(0)
    before = c.state.retry_deadline
    assert c.receive(ms[2], CandidateInfo(ms[3], 2), 40_000) == []
    assert c.state.retry_deadline == before
    f = procs[ms[2]]
    assert f.receive(ms[3], CandidateInfo(ms[4], 99), 40_000) == []


def test_candidature_timer_is_cancelled_by_election_or_reversion(five):
    _, ms, procs = five
    c = procs[ms[1]]
    c.on_heartbeat_timeout(0)
    deadline = c.state.candidature_deadline
    c.receive(ms[2], VoteGrant(ms[2], 2), 1_000)
    c.receive(ms[3], VoteGrant(ms[3], 2), 1_000)
    assert c.timer("candidature", deadline) == [] and c.state.role is Role.LEADER
    d = procs[ms[4]]
    d.on_heartbeat_timeout(0)
    d.receive(ms[1], Heartbeat(ms[1], 2, 4, 4, 1), 2_000)
    assert d.timer("candidature", d.cfg.candidature_timeout_us) == [] and d.state.role is Role.FOLLOWER


# ---------------------------------------------------------------- leader_tick


def test_healthy_tick_sends_one_heartbeat_per_follower(five):
    _, ms, procs = five
    leader = procs[ms[0]]
    acts = leader.timer("tick", 0)
    assert sorted(a.to for a in sent(acts, Heartbeat)) == ms[1:]
    assert len(leader.state.log) == 4


def run_ticks(leader, procs, silent, until, stop):
    interval = leader.cfg.leader_send_interval_us
    t = 0
    while t <= until:
        acts = leader.timer("tick", t)
        if stop(acts):
            return t, acts
        for a in sent(acts, Heartbeat):
            if a.to not in silent:
                f = procs[a.to]
                for r in sent(f.receive(leader.pid, a.msg, t), HeartbeatAck):
                    leader.receive(a.to, r.msg, t)
        t += interval
    raise AssertionError("condition never reached")


def test_silent_follower_is_expelled_after_its_timeout(five):
    _, ms, procs = five
    leader = procs[ms[0]]
    p3 = ms[2]
    t3 = procs[p3].state.my_timeout_us
    t, acts = run_ticks(leader, procs, {p3}, 1_000_000, lambda acts: any(
        e.command == Expel(p3) for a in sent(acts, Heartbeat) for e in a.msg.new_entries))
    assert t3 <= t <= t3 + leader.state.params.ack_grace_us + leader.cfg.leader_send_interval_us


def test_partitioned_leader_halts_isolated(five):
    _, ms, procs = five
    leader = procs[ms[0]]
    t, acts = run_ticks(leader, procs, set(ms[1:]), 2_000_000, lambda acts: Halt("isolated") in acts)
    latest = max(leader.state.follower_timeouts.values()) + leader.state.params.ack_grace_us
    assert t <= latest + leader.cfg.heartbeat_max_us + leader.cfg.leader_send_interval_us
    assert leader.state.role is Role.HALTED


# ---------------------------------------------------------------- apply_entry, expel, shutdown


def deliver(follower, leader_id, entry, term=1):
    prev = entry.index - 1
    prev_term = follower.state.log[prev - 1].term if prev else 0
    return follower.receive(leader_id, Heartbeat(leader_id, term, entry.index, prev, prev_term, (entry,)), 1_000)


def test_apply_add_grows_peer_list(five):
    _, ms, procs = five
    f = procs[ms[1]]
    p6 = ProcessId(6, "h6")
    deliver(f, ms[0], LogEntry(1, 5, Add(p6)))
    assert p6 in f.state.peer_list and f.state.applied_index == 5


def test_apply_own_expel_halts(five):
    _, ms, procs = five
    f = procs[ms[2]]
    acts = deliver(f, ms[0], LogEntry(1, 5, Expel(ms[2])))
    assert Halt("expelled") in acts and f.state.role is Role.HALTED


def test_apply_preshutdown_seals(five):
    _, ms, procs = five
    f = procs[ms[1]]
    acts = deliver(f, ms[0], LogEntry(1, 5, PreShutdown()))
    assert acts.count(SealData()) == 1
    assert f.receive(ms[0], CommitShutdown(ms[0], 1), 2_000) == [Halt("shutdown")]


def test_apply_out_of_order_is_a_contract_violation(five):
    _, ms, procs = five
    f = procs[ms[1]]
    s = f.state
    s.log.append(LogEntry(1, 5, Add(ProcessId(6))))
    s.log.append(LogEntry(1, 6, Add(ProcessId(7))))
    s.commit_index = 6
    with pytest.raises(ContractViolation):
        f.apply_entry(s.log[5], 1_000)


def test_expel_quorum_excludes_the_suspect():
    _, ms, procs = cluster(4)
    leader = procs[ms[0]]
    leader.start_expel(ms[3], 1_000)
    assert leader.state.log[-1].command == Expel(ms[3]) and leader.state.commit_index == 3
    # three remaining members: the leader and one ack are a majority
    acts = leader.receive(ms[1], ack(ms[1], procs, 4), 2_000)
    assert leader.state.commit_index == 4 and ms[3] not in leader.state.peer_list
    assert f"expelled:{ms[3]}" in marks(acts)


def test_expel_with_two_members_needs_only_the_leader():
    _, ms, procs = cluster(2)
    leader = procs[ms[0]]
    acts = leader.start_expel(ms[1], 1_000)
    assert leader.state.commit_index == 2 and list(leader.state.peer_list) == [ms[0]]
    assert f"expelled:{ms[1]}" in marks(acts)
    assert leader.start_expel(ms[1], 2_000) == []


def test_next_membership_change_waits_until_a_majority_knows_the_last_one():
    _, ms, procs = cluster(3)
    leader = procs[ms[0]]
    leader.start_expel(ms[1], 1_000)
    leader.receive(ms[2], HeartbeatAck(ms[2], 1, 3, procs[ms[2]].state.my_timeout_us, None, 2), 1_500)
    assert leader.state.commit_index == 3 and list(leader.state.peer_list) == [ms[0], ms[2]]
    # p3 has not yet learned that its peer list shrank, so it could still side with p2
    leader.start_expel(ms[2], 1_600)
    assert leader.state.last_index == 3 and ms[2] in leader.state.peer_list
    leader.receive(ms[2], HeartbeatAck(ms[2], 1, 3, procs[ms[2]].state.my_timeout_us, None, 3), 2_000)
    assert leader.state.log[-1] == LogEntry(1, 4, Expel(ms[2])) and list(leader.state.peer_list) == [ms[0]]


def test_leader_never_counts_itself_toward_its_own_expel(five):
    _, ms, procs = five
    c = procs[ms[1]]
    c.receive(ms[0], Heartbeat(ms[0], 1, 4, 4, 1, (LogEntry(1, 5, Expel(ms[1])),)), 1_000)
    assert c.state.last_index == 5 and c.state.commit_index == 4
    c.on_heartbeat_timeout(200_000)
    c.receive(ms[2], VoteGrant(ms[2], 2), 200_100)
    c.receive(ms[3], VoteGrant(ms[3], 2), 200_200)
    assert c.state.role is Role.LEADER
    t = c.state.my_timeout_us
    for k, p in enumerate((ms[2], ms[3])):
        c.receive(p, HeartbeatAck(p, 2, 5, t, None, 4), 200_300 + k)
    for k, p in enumerate((ms[2], ms[3])):
        c.receive(p, HeartbeatAck(p, 2, c.state.last_index, t, None, 4), 200_400 + k)
    # two of the four other members hold the expel: not a majority without the suspect
    assert c.state.commit_index == 4 and c.state.role is Role.LEADER
    acts = c.receive(ms[4], HeartbeatAck(ms[4], 2, c.state.last_index, t, None, 4), 200_500)
    assert Halt("expelled") in acts and c.state.commit_index == 5


def test_halting_mid_batch_leaves_later_entries_uncommitted(five):
    _, ms, procs = five
    f = procs[ms[2]]
    p6 = ProcessId(6, "h6")
    entries = (LogEntry(1, 5, Expel(ms[2])), LogEntry(1, 6, Add(p6)))
    acts = f.receive(ms[0], Heartbeat(ms[0], 1, 6, 4, 1, entries), 1_000)
    assert Halt("expelled") in acts and f.state.role is Role.HALTED
    assert f.state.commit_index == f.state.applied_index == 5 and p6 not in f.state.peer_list


def test_expelled_process_traffic_is_discarded(five):
    _, ms, procs = five
    leader = procs[ms[0]]
    leader.start_expel(ms[2], 1_000)
    leader.receive(ms[1], ack(ms[1], procs, 5), 1_500)
    leader.receive(ms[3], ack(ms[3], procs, 5), 1_500)
    assert ms[2] not in leader.state.peer_list
    before = copy.deepcopy(leader.state)
    assert leader.receive(ms[2], ack(ms[2], procs, 5), 2_000) == []
    assert leader.receive(ms[2], RequestVote(ms[2], 9, 9), 2_000) == []
    assert leader.state == before


def test_shutdown_from_owner_only(five):
    _, ms, procs = five
    leader = procs[ms[0]]
    assert leader.receive(OWNER, ShutdownRequest(), 1_000, authentic=False) == []
    assert leader.receive(ms[1], ShutdownRequest(), 1_000) == []
    assert leader.state.last_index == 4
    leader.receive(OWNER, ShutdownRequest(), 1_000)
    assert leader.state.log[-1].command == PreShutdown() and leader.state.sealed
    leader.receive(ms[1], ack(ms[1], procs, 5), 1_500)
    acts = leader.receive(ms[2], ack(ms[2], procs, 5), 1_500)
    assert len(sent(acts, CommitShutdown)) == 4 and Halt("shutdown") in acts


# ---------------------------------------------------------------- index-only election


def test_index_only_vote_can_favour_a_log_missing_a_committed_entry(five):
    """Votes compare last indices only, so an equal-length stale log wins a vote.

    p4 committed a term-3 entry at index 5; p2 holds a different, never
    committed term-2 entry at the same index.  p4 still grants p2 its vote.
    The committed-entry guard then refuses p2's overwrite, so the flaw costs
    liveness, not the committed prefix.
    """
    _, ms, procs = five
    p2, p4 = procs[ms[1]], procs[ms[3]]
    committed = LogEntry(3, 5, Add(ProcessId(6)))
    p4.receive(ms[0], Heartbeat(ms[0], 3, 5, 4, 1, (committed,)), 1_000)
    assert p4.state.commit_index == 5
    stale = LogEntry(2, 5, Add(ProcessId(7)))
    p2.state.log.append(stale)
    p2.state.term = 3
    later = p4.state.contact_deadline + 1
    acts = p4.receive(ms[1], RequestVote(ms[1], 4, 5), later)
    assert [a.msg for a in sent(acts, VoteGrant)] == [VoteGrant(ms[3], 4)]
    reply = p4.receive(ms[1], Heartbeat(ms[1], 4, 4, 4, 1, (stale,)), later + 1)
    assert sent(reply, HeartbeatAck)[0].msg.acked_index == -1
    assert p4.state.log[4] == committed


# ---------------------------------------------------------------- properties


terms = st.integers(0, 6)
idx = st.integers(-1, 8)


def any_message(sender):
    return st.one_of(
        st.builds(Heartbeat, st.just(sender), terms, idx, idx, terms),
        st.builds(HeartbeatAck, st.just(sender), terms, idx, st.integers(1, 10**6)),
        st.builds(RequestVote, st.just(sender), terms, idx),
        st.builds(VoteGrant, st.just(sender), terms),
        st.builds(CandidateInfo, st.sampled_from(pids(5)), idx),
        st.builds(CommitShutdown, st.just(sender), terms),
        st.builds(FetchEntries, st.just(sender), terms, idx),
        st.builds(EntriesReply, st.just(sender), terms, idx, idx, terms, st.just(())),
    )


def _prepare(role_of):
    _, ms, procs = cluster(5)
    proc = procs[ms[role_of]]
    if role_of == 2:
        proc.on_heartbeat_timeout(10_000)
    return ms, proc


@given(st.sampled_from([0, 1, 2]), any_message(ProcessId(9, "h9")), st.integers(0, 10**6))
def test_non_member_messages_change_nothing(role_of, msg, now):
    ms, proc = _prepare(role_of)
    before = copy.deepcopy(proc.state)
    assert proc.receive(ProcessId(9, "h9"), msg, now) == []
    assert proc.state == before


@given(st.sampled_from([0, 1, 2]), st.integers(1, 4), st.data())
def test_unauthentic_messages_change_nothing(role_of, k, data):
    ms, proc = _prepare(role_of)
    sender = ms[k] if ms[k] != proc.pid else ms[0]
    msg = data.draw(any_message(sender))
    before = copy.deepcopy(proc.state)
    assert proc.receive(sender, msg, 50_000, authentic=False) == []
    assert proc.state == before


@given(st.sampled_from([0, 1, 2]), st.integers(1, 4), st.data(),
       st.sampled_from(["contact", "retry", "candidature", "tick", "join"]))
def test_halted_is_absorbing(role_of, k, data, timer):
    ms, proc = _prepare(role_of)
    proc._halt("test")
    sender = ms[k]
    msg = data.draw(any_message(sender))
    before = copy.deepcopy(proc.state)
    assert proc.receive(sender, msg, 10**7) == []
    assert proc.timer(timer, 10**7) == []
    assert proc.start_expel(ms[1], 10**7) == [] and proc.start_join(ms[0], 10**7) == []
    assert proc.state == before and proc.state.role is Role.HALTED
