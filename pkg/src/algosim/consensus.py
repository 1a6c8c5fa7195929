"""Round pipeline operations: proposal, soft vote, graded consensus, binary
agreement, the simplified two-step majority protocol, and certificates.

All vote counting is over distinct voters (a voter equivocating or repeating
counts once per value) and all thresholds use exact integer arithmetic:
``count > 2n/3`` is evaluated as ``3*count > 2*n``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .crypto import Digest, KeyRegistry, Signature, UserId, be8, hash_to_unit, sha256
from .ledger import (
    Block,
    Chain,
    InvalidPaymentError,
    Payment,
    apply_payset,
    block_hash,
    cert_payload,
    check_cert_message,
    empty_block,
    empty_round_seed,
    leader_round_seed,
    verify_payment,
)
from .sortition import Credential, ProtocolParams, verify_credential


class NoTerminationError(Exception):
    """Binary agreement exhausted its step budget without a decision."""


class ProtocolInconsistencyError(Exception):
    """Binary agreement settled on a value nobody graded; cannot occur with an
    honest supermajority, flagged for attack analysis."""


@dataclass(frozen=True)
class ProposalMessage:
    block: Block
    block_sig: Signature  # ephemeral (proposer, round, 1) over the block hash
    credential: Credential


@dataclass(frozen=True)
class SoftVote:
    voter: UserId
    round: int
    value: Digest
    sig: Signature
    credential: Credential


@dataclass(frozen=True)
class GCRelay:
    voter: UserId
    round: int
    value: Digest
    sig: Signature
    credential: Credential


@dataclass(frozen=True)
class GradedValue:
    value: Digest | None
    grade: int  # 0, 1 or 2; grade 0 iff value is None


@dataclass(frozen=True)
class BBAVote:
    voter: UserId
    round: int
    step: int
    bit: int
    sig: Signature
    credential: Credential


@dataclass(frozen=True)
class CertMessage:
    voter: UserId
    round: int
    step: int
    bit: int  # 1 iff the certified block is the round's empty block
    block_digest: Digest
    sig: Signature
    credential: Credential


def canonical_empty_digest(chain: Chain, round: int) -> Digest:
    """Hash of the one possible empty block for `round` on this chain."""
    prev = chain.blocks[round - 1]
    return block_hash(empty_block(round, prev.seed, block_hash(prev)))


def distinct_voter_counts(messages: Iterable) -> dict[Digest, int]:
    """Distinct-voter tally per value over messages with .voter and .value."""
    voters: dict[Digest, set[UserId]] = {}
    for m in messages:
        voters.setdefault(m.value, set()).add(m.voter)
    return {v: len(s) for v, s in voters.items()}


# -- step 1: proposal ----------------------------------------------------------

def _payment_ok(registry: KeyRegistry, p: Payment, round: int,
                cache: dict | None) -> bool:
    if cache is None:
        return verify_payment(registry, p, round)
    key = ("payment", p.sig)
    if key not in cache:
        cache[key] = verify_payment(registry, p, round)
    return cache[key]


def propose(credential: Credential, pending: Sequence[Payment], chain: Chain,
            params: ProtocolParams, registry: KeyRegistry,
            policy: str = "honest", cache: dict | None = None) -> ProposalMessage:
    """Build and sign the leader's candidate block.

    The payset is the maximal valid subset of `pending` in arrival order
    (invalid payments are skipped, later payments may still apply).  The
    proposer's ephemeral step-1 key is retired per `policy` after signing.
    `cache` memoizes payment signature checks across co-round proposers.
    """
    r = credential.round
    prev = chain.blocks[r - 1]
    status = chain.status_entering(r)
    balances = dict(status.balances)
    payset = []
    for p in pending:
        if p.amount < 1 or not _payment_ok(registry, p, r, cache):
            continue
        if balances.get(p.payer, 0) < p.amount:
            continue
        balances[p.payer] -= p.amount
        balances[p.payee] = balances.get(p.payee, 0) + p.amount
        payset.append(p)
    if payset:
        seed = leader_round_seed(registry.unique_sign(credential.user, prev.seed))
    else:
        seed = empty_round_seed(prev.seed, r)
    block = Block(r, tuple(payset), seed, block_hash(prev), ())
    sig = registry.ephemeral_sign(credential.user, r, 1, block_hash(block))
    registry.destroy_ephemeral(credential.user, r, 1, policy)
    return ProposalMessage(block, sig, credential)


def verify_proposal(p: ProposalMessage, chain: Chain, params: ProtocolParams,
                    registry: KeyRegistry, cache: dict | None = None) -> bool:
    """Full proposal check: credential, block structure, seed rule, signature."""
    r = p.credential.round
    key = (p.credential.user, r, p.block_sig)
    if cache is not None and key in cache:
        return cache[key]
    ok = _verify_proposal(p, chain, params, registry)
    if cache is not None:
        cache[key] = ok
    return ok


def _verify_proposal(p: ProposalMessage, chain: Chain, params: ProtocolParams,
                     registry: KeyRegistry) -> bool:
    r = p.credential.round
    if p.credential.step != 1 or p.block.round != r:
        return False
    if r < 1 or r > len(chain.blocks):
        return False
    prev = chain.blocks[r - 1]
    check = verify_credential(p.credential, prev.seed, chain, params, registry)
    if not check:
        return False
    if p.block.prev_hash != block_hash(prev):
        return False
    try:
        apply_payset(chain.status_entering(r), p.block.payset, registry)
    except InvalidPaymentError:
        return False
    if p.block.is_empty():
        expected = empty_round_seed(prev.seed, r)
    else:
        expected = leader_round_seed(
            registry.expected_signature(p.credential.user, prev.seed))
    if p.block.seed != expected:
        return False
    return registry.verify_ephemeral(p.credential.user, r, 1,
                                     block_hash(p.block), p.block_sig)


def select_proposal(proposals: Sequence[ProposalMessage], round: int,
                    chain: Chain, params: ProtocolParams, registry: KeyRegistry,
                    cache: dict | None = None) -> Digest:
    """Digest of the valid proposal with the smallest hashed credential; the
    canonical empty-block digest when no valid proposal was received.

    `cache` may be shared across callers only while they see the same
    proposal multiset (true for honest verifiers under synchrony); it then
    memoizes both per-proposal checks and the selection itself.
    """
    if cache is not None and ("selected", round) in cache:
        return cache[("selected", round)]
    valid = [p for p in proposals
             if p.credential.round == round
             and verify_proposal(p, chain, params, registry, cache)]
    if not valid:
        result = canonical_empty_digest(chain, round)
    else:
        best = min(valid, key=lambda p: (p.credential.unit, p.credential.user))
        result = block_hash(best.block)
    if cache is not None:
        cache[("selected", round)] = result
    return result


# -- step 2: soft vote ----------------------------------------------------------

def soft_vote(credential: Credential, proposals: Sequence[ProposalMessage],
              chain: Chain, params: ProtocolParams, registry: KeyRegistry,
              policy: str = "honest", cache: dict | None = None) -> SoftVote:
    r = credential.round
    value = select_proposal(proposals, r, chain, params, registry, cache)
    sig = registry.ephemeral_sign(credential.user, r, 2, value)
    registry.destroy_ephemeral(credential.user, r, 2, policy)
    return SoftVote(credential.user, r, value, sig, credential)


# -- graded consensus ------------------------------------------------------------

def relay_value(votes: Iterable[SoftVote], committee_size_2: int) -> Digest | None:
    """The value backed by more than two thirds of the step-2 committee, if
    any (at most one value can qualify)."""
    counts = distinct_voter_counts(votes)
    qualifying = [v for v, c in counts.items() if 3 * c > 2 * committee_size_2]
    return min(qualifying) if qualifying else None


def gc_relay(credential: Credential, votes: Iterable[SoftVote],
             committee_size_2: int, registry: KeyRegistry,
             policy: str = "honest") -> GCRelay | None:
    """Relay the supermajority-backed value, signed for step 3."""
    value = relay_value(votes, committee_size_2)
    if value is None:
        return None
    r = credential.round
    sig = registry.ephemeral_sign(credential.user, r, 3, value)
    registry.destroy_ephemeral(credential.user, r, 3, policy)
    return GCRelay(credential.user, r, value, sig, credential)


def gc_grade(relays: Iterable[GCRelay], committee_size_3: int) -> GradedValue:
    """Grade the best-supported relayed value: 2 above two thirds, 1 above one
    third, else 0 with no value."""
    counts = distinct_voter_counts(relays)
    if not counts:
        return GradedValue(None, 0)
    value, count = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if 3 * count > 2 * committee_size_3:
        return GradedValue(value, 2)
    if 3 * count > committee_size_3:
        return GradedValue(value, 1)
    return GradedValue(None, 0)


# -- binary agreement -------------------------------------------------------------

def coin_bit(prev_seed: Digest, iteration: int) -> int:
    """Shared per-iteration coin derived from the round's entropy seed."""
    return 1 if hash_to_unit(sha256(prev_seed + be8(iteration))) > 0.5 else 0


def bba_transition(zeros: int, ones: int, n: int, phase: int,
                   coin: int | None = None) -> tuple[int, int | None]:
    """One voting step of binary agreement.

    Given distinct-voter tallies for a committee of size n, returns
    (next_bit, decided) where decided is 0/1 when the step's halting
    condition fires and None otherwise.  Phase 0 can only decide 0, phase 1
    only 1; phase 2 falls back to the shared coin when neither bit holds a
    two-thirds supermajority.
    """
    zero_super = 3 * zeros > 2 * n
    one_super = 3 * ones > 2 * n
    if phase == 0:
        if zero_super:
            return 0, 0
        return (1, None) if one_super else (0, None)
    if phase == 1:
        if one_super:
            return 1, 1
        return (0, None) if zero_super else (1, None)
    if phase == 2:
        if zero_super:
            return 0, None
        if one_super:
            return 1, None
        if coin not in (0, 1):
            raise ValueError("phase 2 requires the iteration coin")
        return coin, None
    raise ValueError(f"invalid phase {phase}")


def bba(initial_bits: dict[UserId, int], committees: dict[int, list[UserId]],
        params: ProtocolParams, prev_seed: Digest) -> tuple[int, int]:
    """Run binary agreement over per-step committees with honest participants.

    `committees` maps absolute step numbers (4, 5, ...) to the verifier set of
    that step; step-4 voters use their own entry of `initial_bits`, later
    committees vote the shared bit derived from the previous step's tally.
    Returns (decided_bit, deciding_step).  Bit 0 means the graded value is
    agreed, bit 1 means the round falls back to the empty block.
    """
    shared: int | None = None
    for step in range(4, params.max_ba_steps + 4):
        voters = committees.get(step, [])
        if step == 4:
            bits = [initial_bits[v] for v in voters]
        else:
            bits = [shared] * len(voters)
        zeros = sum(1 for b in bits if b == 0)
        ones = len(bits) - zeros
        phase = (step - 4) % 3
        coin = coin_bit(prev_seed, (step - 4) // 3) if phase == 2 else None
        shared, decided = bba_transition(zeros, ones, len(voters), phase, coin)
        if decided is not None:
            return decided, step
    raise NoTerminationError(
        f"no agreement within {params.max_ba_steps} binary-agreement steps")


def ba_output(graded: GradedValue, bba_result: int) -> Digest | None:
    """Final value of the agreement pipeline: the graded value when the bit
    protocol settles on 0, otherwise None (empty block)."""
    if bba_result == 1:
        return None
    if graded.grade == 0 or graded.value is None:
        raise ProtocolInconsistencyError(
            "agreement settled on a value but no value was graded")
    return graded.value


# -- simplified two-step protocol --------------------------------------------------

def simple_vote_finalize(votes: Iterable[SoftVote],
                         committee_size_2: int) -> Digest | None:
    """Finalize the value voted by more than two thirds of the step-2
    committee; None when no value clears the threshold."""
    counts = distinct_voter_counts(votes)
    qualifying = [v for v, c in counts.items() if 3 * c > 2 * committee_size_2]
    if not qualifying:
        return None
    return min(qualifying, key=lambda v: (-counts[v], v))


# -- certificates ------------------------------------------------------------------

def make_cert_message(credential: Credential, block_digest: Digest,
                      is_empty: bool, registry: KeyRegistry,
                      policy: str = "honest", signer=None) -> CertMessage:
    """Certify a block digest with the verifier's ephemeral key for the step at
    which it decided.  `signer` defaults to the registry (honest self-signing);
    adversarial callers pass their restricted signer."""
    signer = signer if signer is not None else registry
    r, s = credential.round, credential.step
    bit = 1 if is_empty else 0
    sig = signer.ephemeral_sign(credential.user, r, s,
                                cert_payload(bit, block_digest))
    registry.destroy_ephemeral(credential.user, r, s, policy)
    return CertMessage(credential.user, r, s, bit, block_digest, sig, credential)


def assemble_cert(msgs: Sequence[CertMessage], block_digest: Digest,
                  chain: Chain, params: ProtocolParams,
                  registry: KeyRegistry) -> tuple[CertMessage, ...] | None:
    """Collect credential-verified, distinct-voter messages over
    `block_digest`; None unless at least cert_threshold of them exist."""
    if not msgs:
        return None
    out: list[CertMessage] = []
    seen: set[UserId] = set()
    for m in sorted(msgs, key=lambda m: (m.step, m.voter)):
        if m.block_digest != block_digest or m.voter in seen:
            continue
        prev = chain.blocks[m.round - 1]
        if check_cert_message(m, m.round, block_digest, None, prev.seed,
                              chain, params, registry) is not None:
            continue
        seen.add(m.voter)
        out.append(m)
    if len(out) < params.cert_threshold:
        return None
    return tuple(out)
