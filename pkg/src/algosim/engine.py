"""Round driver: provisions users and keys, runs the per-round pipeline
(sortition, proposal, vote, agreement or simple majority, certification),
invokes adversary strategies, detects forks and accumulates metrics.

A run is a pure function of its ScenarioConfig: every random stream is seeded
from the configured seed, so chains and metrics are bit-identical across
executions.
"""

from __future__ import annotations

import json
import logging
import random
import time
from dataclasses import dataclass, field

from . import consensus, sortition
from .adversary import (
    AdversaryConfig,
    AttackFailedError,
    announce_roles,
    bribe_and_recertify,
    fork_from,
)
from .consensus import (
    BBAVote,
    CertMessage,
    GCRelay,
    ProposalMessage,
    SoftVote,
    canonical_empty_digest,
)
from .crypto import KeyRegistry, UserId, be8, sha256
from .ledger import (
    Chain,
    IncompatibleGenesisError,
    Payment,
    block_hash,
    empty_block,
    make_genesis,
    make_payment,
    users_at,
    validate_block,
)
from .netsim import Network
from .sortition import ProtocolParams, select_leader

log = logging.getLogger("algosim.engine")

CONSENSUS_MODES = ("ba", "simple", "both")


class EngineError(Exception):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    num_genesis_users: int = 10
    initial_balance: int = 1000
    rounds: int = 20
    params: ProtocolParams = field(default_factory=ProtocolParams)
    consensus_mode: str = "ba"
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    payments_per_round: int = 5
    new_users_per_round: int = 0

    def validate(self) -> None:
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.num_genesis_users < 2:
            raise ValueError("need at least 2 genesis users")
        if self.consensus_mode not in CONSENSUS_MODES:
            raise ValueError(f"unknown consensus mode {self.consensus_mode!r}")
        if self.params.horizon < self.rounds + 1:
            raise ValueError("horizon must cover every round plus one")


@dataclass
class RoundRecord:
    round: int
    leader: UserId | None
    committee_sizes: dict[int, int]
    steps_to_decision: int
    ba_digest: bytes | None
    simple_digest: bytes | None
    equivalent: bool | None
    empty_block: bool
    message_count: int
    flags: tuple[str, ...] = ()


@dataclass
class ForkReport:
    round: int
    digest_a: bytes
    digest_b: bytes
    cert_a: tuple
    cert_b: tuple
    classification: str


@dataclass
class RoundTranscript:
    """Step-2 vote multiset plus the committed agreement digest, kept so the
    two consensus paths can be re-compared after the fact."""

    round: int
    votes: tuple[SoftVote, ...]
    committee_size_2: int
    ba_digest: bytes
    empty_digest: bytes


@dataclass
class RunMetrics:
    rounds: list[RoundRecord]
    forks_detected: int
    fork_reports: list[ForkReport]
    total_messages: int
    wall_time: float
    attack_error: str | None = None


def _sub_seed(seed: int, tag: bytes) -> int:
    return int.from_bytes(sha256(tag + be8(seed))[:8], "big")


class SimulationRun:
    def __init__(self, config: ScenarioConfig):
        config.validate()
        self.config = config
        self.params = config.params
        self.registry = KeyRegistry(config.seed, horizon=self.params.horizon,
                                    max_step=self.params.max_step)
        self.net = Network()
        self._workload_rng = random.Random(_sub_seed(config.seed, b"WORK"))
        self._policy_rng = random.Random(_sub_seed(config.seed, b"POLI"))
        self._policy: dict[UserId, str] = {}
        genesis_users = range(1, config.num_genesis_users + 1)
        for u in genesis_users:
            self._register_user(u)
        self.next_uid = config.num_genesis_users + 1
        self.chain = make_genesis(
            {u: config.initial_balance for u in genesis_users}, self.registry)
        self.records: list[RoundRecord] = []
        self.transcripts: list[RoundTranscript] = []

    def _register_user(self, uid: UserId) -> None:
        self.registry.register_user(uid)
        self.net.add_node(uid)
        retain = (self.config.adversary.strategy == "bribery"
                  and self._policy_rng.random() < self.config.adversary.retention_fraction)
        self._policy[uid] = "retain" if retain else "honest"

    # -- workload -----------------------------------------------------------

    def _workload(self, round: int) -> list[Payment]:
        cfg = self.config
        rng = self._workload_rng
        balances = dict(self.chain.status_entering(round).balances)
        live = sorted(u for u, a in balances.items() if a > 0)
        payments: list[Payment] = []
        for _ in range(cfg.payments_per_round):
            # amount <= balance/10, so payers below 10 units sit a round out
            funded = [u for u in live if balances[u] >= 10]
            if not funded:
                break
            payer = rng.choice(funded)
            payee = rng.choice(live)
            amount = rng.randint(1, balances[payer] // 10)
            payments.append(make_payment(self.registry, payer, payee, amount, round))
            balances[payer] -= amount
            balances[payee] += amount
        for _ in range(cfg.new_users_per_round):
            funded = [u for u in live if balances[u] >= 2]
            if not funded:
                break
            payer = rng.choice(funded)
            uid = self.next_uid
            self.next_uid += 1
            self._register_user(uid)
            payments.append(make_payment(self.registry, payer, uid, 1, round))
            balances[payer] -= 1
            balances[uid] = 1
        return payments

    # -- committees ---------------------------------------------------------

    def _committee(self, round: int, step: int, prev_seed: bytes,
                   eligible: list[UserId]) -> list:
        out = []
        for u in eligible:
            cred = sortition.verifier_credential(
                u, round, step, prev_seed, self.chain, self.params, self.registry)
            if cred is not None:
                out.append(cred)
        return out

    # -- round pipeline -------------------------------------------------------

    def run_round(self, r: int) -> None:
        params = self.params
        mode = self.config.consensus_mode
        prev = self.chain.blocks[r - 1]
        prev_seed, prev_hash = prev.seed, block_hash(prev)

        if r < params.lookback:
            # No user can clear the lookback rule yet: the round degenerates
            # to an uncertified empty block.
            self.chain.append(empty_block(r, prev_seed, prev_hash))
            self.records.append(RoundRecord(
                r, None, {}, 0, None, None, None, True, 0, ("bootstrap",)))
            return

        eligible = sorted(users_at(self.chain, r - params.lookback))
        if self.config.adversary.strategy == "bribery":
            for u in eligible:
                if self._policy[u] == "retain":
                    announce_roles(u, r, self.chain, params, self.registry)

        pending = self._workload(r)
        messages = 0
        sizes: dict[int, int] = {}
        flags: list[str] = []

        # Step 1: every potential leader proposes a candidate block.
        cache: dict = {}
        leader_creds = []
        for u in eligible:
            cred = sortition.leader_credential(
                u, r, prev_seed, self.chain, params, self.registry)
            if cred is not None:
                leader_creds.append(cred)
        for cred in leader_creds:
            msg = consensus.propose(cred, pending, self.chain, params,
                                    self.registry, self._policy[cred.user],
                                    cache)
            self.net.broadcast(cred.user, msg, r, 1)
        messages += self.net.step()
        sizes[1] = len(leader_creds)
        leader = select_leader(leader_creds) if leader_creds else None

        proposals = [m for m in self.net.inbox_common()
                     if isinstance(m, ProposalMessage)]
        blocks_by_digest = {block_hash(p.block): p.block for p in proposals}

        # Step 2: the vote committee backs the best valid proposal.
        sv2 = self._committee(r, 2, prev_seed, eligible)
        sizes[2] = len(sv2)
        for cred in sv2:
            vote = consensus.soft_vote(
                cred, [m for m in self.net.inbox(cred.user)
                       if isinstance(m, ProposalMessage)],
                self.chain, params, self.registry, self._policy[cred.user], cache)
            self.net.broadcast(cred.user, vote, r, 2)
        messages += self.net.step()
        votes = tuple(m for m in self.net.inbox_common() if isinstance(m, SoftVote))
        n2 = len(sv2)

        empty_digest = canonical_empty_digest(self.chain, r)
        simple_digest = None
        if mode in ("simple", "both"):
            result = consensus.simple_vote_finalize(votes, n2)
            simple_digest = result if result is not None else empty_digest

        ba_digest = None
        decision_step = 3
        if mode in ("ba", "both"):
            ba_digest, decision_step, ba_sizes, ba_msgs, ba_flags = \
                self._run_agreement(r, prev_seed, eligible, votes, n2, empty_digest)
            sizes.update(ba_sizes)
            messages += ba_msgs
            flags += ba_flags

        committed = ba_digest if mode in ("ba", "both") else simple_digest
        is_empty = committed == empty_digest
        block = (empty_block(r, prev_seed, prev_hash) if is_empty
                 else blocks_by_digest[committed])

        cert_msgs, cert_sizes, cert_messages = self._certify(
            r, prev_seed, eligible, committed, is_empty, decision_step)
        for s, n in cert_sizes.items():
            sizes.setdefault(s, n)
        messages += cert_messages
        cert = consensus.assemble_cert(cert_msgs, committed, self.chain,
                                       params, self.registry)
        if cert is None:
            raise EngineError(f"round {r}: certificate threshold unreachable")
        self.chain.append(block.with_cert(cert))

        equivalent = None
        if mode == "both":
            equivalent = ba_digest == simple_digest
            self.transcripts.append(RoundTranscript(
                r, votes, n2, ba_digest, empty_digest))
            if not equivalent:
                log.warning("round %d: agreement %s vs simple vote %s",
                            r, ba_digest.hex()[:16], simple_digest.hex()[:16])

        self.records.append(RoundRecord(
            r, leader, sizes, decision_step, ba_digest, simple_digest,
            equivalent, is_empty, messages, tuple(flags)))

    def _run_agreement(self, r, prev_seed, eligible, votes, n2, empty_digest):
        """Graded consensus then binary agreement; returns the agreed digest,
        the step at which nodes decided, committee sizes, message count and
        any flags raised."""
        params = self.params
        sizes: dict[int, int] = {}
        messages = 0
        flags: list[str] = []

        sv3 = self._committee(r, 3, prev_seed, eligible)
        sizes[3] = len(sv3)
        for cred in sv3:
            relay = consensus.gc_relay(cred, votes, n2, self.registry,
                                       self._policy[cred.user])
            if relay is not None:
                self.net.broadcast(cred.user, relay, r, 3)
        messages += self.net.step()
        relays = [m for m in self.net.inbox_common() if isinstance(m, GCRelay)]
        graded = consensus.gc_grade(relays, len(sv3))
        bit = 0 if graded.grade == 2 else 1

        decided = None
        decision_step = params.max_ba_steps + 4
        for s in range(4, params.max_ba_steps + 4):
            committee = self._committee(r, s, prev_seed, eligible)
            sizes[s] = len(committee)
            for cred in committee:
                sig = self.registry.ephemeral_sign(cred.user, r, s, bytes([bit]))
                self.registry.destroy_ephemeral(cred.user, r, s,
                                                self._policy[cred.user])
                self.net.broadcast(cred.user,
                                   BBAVote(cred.user, r, s, bit, sig, cred), r, s)
            messages += self.net.step()
            step_votes = [m for m in self.net.inbox_common()
                          if isinstance(m, BBAVote) and m.step == s]
            zeros = len({m.voter for m in step_votes if m.bit == 0})
            ones = len({m.voter for m in step_votes if m.bit == 1})
            phase = (s - 4) % 3
            coin = consensus.coin_bit(prev_seed, (s - 4) // 3) if phase == 2 else None
            bit, decided = consensus.bba_transition(
                zeros, ones, len(committee), phase, coin)
            if decided is not None:
                decision_step = s + 1
                break
        if decided is None:
            flags.append("no-termination")
            decided = 1

        try:
            value = consensus.ba_output(graded, decided)
        except consensus.ProtocolInconsistencyError:
            flags.append("ba-inconsistency")
            value = None
        ba_digest = value if value is not None else empty_digest
        return ba_digest, decision_step, sizes, messages, flags

    def _certify(self, r, prev_seed, eligible, committed, is_empty,
                 decision_step):
        """Fresh committees certify the decided digest, starting at the
        decision step and continuing until the threshold is reachable."""
        params = self.params
        msgs: list[CertMessage] = []
        sizes: dict[int, int] = {}
        messages = 0
        voters: set[UserId] = set()
        step = max(decision_step, 2)
        while step <= params.max_step:
            committee = self._committee(r, step, prev_seed, eligible)
            sizes[step] = len(committee)
            for cred in committee:
                if cred.user in voters:
                    continue
                msg = consensus.make_cert_message(
                    cred, committed, is_empty, self.registry,
                    self._policy[cred.user])
                self.net.broadcast(cred.user, msg, r, step)
                voters.add(cred.user)
            messages += self.net.step()
            msgs.extend(m for m in self.net.inbox_common()
                        if isinstance(m, CertMessage))
            if len(voters) >= params.cert_threshold:
                break
            step += 1
        return msgs, sizes, messages

    # -- adversary phase -------------------------------------------------------

    def run(self) -> tuple[list[Chain], RunMetrics]:
        start = time.perf_counter()
        for r in range(1, self.config.rounds + 1):
            self.run_round(r)
        chains = [self.chain]
        reports: list[ForkReport] = []
        attack_error = None
        adv = self.config.adversary
        if adv.strategy == "genesis_fork":
            forked = fork_from(self.chain, adv.fork_round, self.params,
                               self.registry)
            chains.append(forked)
            reports = detect_fork(chains, self.params, self.registry,
                                  classification="genesis-fork")
        elif adv.strategy == "bribery":
            retained = self.registry.retained_records(adv.target_round)
            try:
                alt = bribe_and_recertify(self.chain, adv.target_round,
                                          retained, self.params, self.registry)
                forked = self.chain.prefix(adv.target_round)
                forked.append(alt)
                chains.append(forked)
                reports = detect_fork(chains, self.params, self.registry,
                                      classification="bribery-fork")
            except AttackFailedError as exc:
                attack_error = str(exc)
        self._audit_adversary()
        metrics = RunMetrics(
            rounds=self.records,
            forks_detected=len(reports),
            fork_reports=reports,
            total_messages=sum(rec.message_count for rec in self.records),
            wall_time=time.perf_counter() - start,
            attack_error=attack_error,
        )
        return chains, metrics

    def _audit_adversary(self) -> None:
        # No adversarial signature may come from a destroyed key, and the
        # signer restriction guarantees only corrupted users appear; keep the
        # stronger check cheap and unconditional.
        for event in self.registry.audit:
            if event.kind == "ephemeral" and event.key_state == "destroyed":
                raise EngineError(
                    f"audit: destroyed key of user {event.owner} signed")


def run_scenario(config: ScenarioConfig) -> tuple[list[Chain], RunMetrics]:
    """Execute one scenario; deterministic for a given config."""
    return SimulationRun(config).run()


def detect_fork(chains: list[Chain], params: ProtocolParams,
                registry: KeyRegistry,
                classification: str = "protocol-violation") -> list[ForkReport]:
    """One report per chain pair diverging with two validly certified blocks
    on a common prefix.  Pure extensions are not forks."""
    reports = []
    for i in range(len(chains)):
        for j in range(i + 1, len(chains)):
            a, b = chains[i], chains[j]
            if block_hash(a.blocks[0]) != block_hash(b.blocks[0]):
                raise IncompatibleGenesisError("chains do not share genesis")
            for r in range(1, min(len(a.blocks), len(b.blocks))):
                da, db = block_hash(a.blocks[r]), block_hash(b.blocks[r])
                if da == db:
                    continue
                prefix = a.prefix(r)
                ok_a = not validate_block(prefix, a.blocks[r], params, registry)
                ok_b = not validate_block(prefix, b.blocks[r], params, registry)
                if ok_a and ok_b:
                    reports.append(ForkReport(
                        r, da, db, a.blocks[r].cert, b.blocks[r].cert,
                        classification))
                break
    return reports


def compare_consensus(transcripts: list[RoundTranscript]) -> list[dict]:
    """Re-evaluate the simple majority rule on each round's recorded vote
    multiset and compare it with the committed agreement digest."""
    verdicts = []
    for t in transcripts:
        result = consensus.simple_vote_finalize(t.votes, t.committee_size_2)
        simple = result if result is not None else t.empty_digest
        verdicts.append({
            "round": t.round,
            "equivalent": simple == t.ba_digest,
            "ba_digest": t.ba_digest.hex(),
            "simple_digest": simple.hex(),
        })
    return verdicts


# -- metrics serialization ------------------------------------------------------
# wall_time is deliberately left out of the file format so identical runs
# produce byte-identical output; it is only printed in console summaries.

def metrics_to_lines(metrics: RunMetrics) -> list[str]:
    lines = []
    for rec in metrics.rounds:
        lines.append(json.dumps({
            "round": rec.round,
            "leader": rec.leader,
            "committee_sizes": {str(k): v for k, v in sorted(rec.committee_sizes.items())},
            "steps_to_decision": rec.steps_to_decision,
            "ba_digest": rec.ba_digest.hex() if rec.ba_digest else None,
            "simple_digest": rec.simple_digest.hex() if rec.simple_digest else None,
            "equivalent": rec.equivalent,
            "empty_block": rec.empty_block,
            "message_count": rec.message_count,
            "flags": list(rec.flags),
        }, sort_keys=True, separators=(",", ":")))
    lines.append(json.dumps({"summary": {
        "rounds": len(metrics.rounds),
        "forks_detected": metrics.forks_detected,
        "fork_descriptions": [{
            "round": rep.round,
            "digest_a": rep.digest_a.hex(),
            "digest_b": rep.digest_b.hex(),
            "cert_a_voters": sorted(m.voter for m in rep.cert_a),
            "cert_b_voters": sorted(m.voter for m in rep.cert_b),
            "classification": rep.classification,
        } for rep in metrics.fork_reports],
        "total_messages": metrics.total_messages,
        "attack_error": metrics.attack_error,
    }}, sort_keys=True, separators=(",", ":")))
    return lines
