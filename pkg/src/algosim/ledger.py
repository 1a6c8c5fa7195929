"""Accounts, payments, blocks and chain validation.

The canonical serialization used for hashing and on-disk export is
length-prefixed big-endian fields in declaration order, so golden digests can
be reproduced with any SHA-256 implementation (see README for the exact byte
layout).  A block hash covers (round, payset, seed, prev_hash) and explicitly
excludes the certificate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Iterable, Sequence

from .crypto import (
    TAG_BLOCK,
    TAG_PAYMENT,
    ZERO_DIGEST,
    Digest,
    KeyRegistry,
    Signature,
    UserId,
    be8,
    sha256,
)

if TYPE_CHECKING:
    from .consensus import CertMessage


class LedgerError(Exception):
    pass


class InvalidPaymentError(LedgerError):
    def __init__(self, index: int, reason: str):
        super().__init__(f"payment {index}: {reason}")
        self.index = index
        self.reason = reason


class InvalidSignatureError(InvalidPaymentError):
    def __init__(self, index: int):
        super().__init__(index, "invalid signature")


class InsufficientFundsError(InvalidPaymentError):
    def __init__(self, index: int, payer: UserId):
        super().__init__(index, f"insufficient funds for payer {payer}")
        self.payer = payer


class RoundOutOfRangeError(LedgerError):
    pass


class IncompatibleGenesisError(LedgerError):
    pass


@dataclass
class Status:
    """Account balances entering a round (non-negative money units)."""

    round: int
    balances: dict[UserId, int]

    def total(self) -> int:
        return sum(self.balances.values())

    def holders(self) -> set[UserId]:
        return {u for u, a in self.balances.items() if a > 0}


@dataclass(frozen=True)
class Payment:
    payer: UserId
    payee: UserId
    amount: int
    sig: Signature


@dataclass(frozen=True)
class Block:
    round: int
    payset: tuple[Payment, ...]
    seed: Digest
    prev_hash: Digest
    cert: tuple["CertMessage", ...]

    def is_empty(self) -> bool:
        return not self.payset

    def with_cert(self, cert: Sequence["CertMessage"]) -> "Block":
        return replace(self, cert=tuple(cert))


def payment_message(payer: UserId, payee: UserId, amount: int, round: int) -> bytes:
    return TAG_PAYMENT + be8(payer) + be8(payee) + be8(amount) + be8(round)


def cert_payload(bit: int, block_digest: Digest) -> bytes:
    """Byte string an ephemeral certificate signature covers."""
    return bytes([bit]) + block_digest


def make_payment(signer, payer: UserId, payee: UserId, amount: int,
                 round: int) -> Payment:
    """Build a signed payment for `round`.  `signer` is a KeyRegistry for
    honest code or an AdversarySigner for corrupted payers."""
    if amount < 1:
        raise ValueError("payment amount must be positive")
    sig = signer.unique_sign(payer, payment_message(payer, payee, amount, round))
    return Payment(payer, payee, amount, sig)


def verify_payment(registry: KeyRegistry, p: Payment, round: int) -> bool:
    if not registry.is_registered(p.payer):
        return False
    return registry.verify_unique(
        p.payer, payment_message(p.payer, p.payee, p.amount, round), p.sig)


def apply_payset(status: Status, payset: Sequence[Payment],
                 registry: KeyRegistry) -> Status:
    """Apply the round's payments sequentially, in list order.

    New payees are created with the received amount.  Total money is
    conserved.  Raises with the offending payment index if a signature fails
    or a payer cannot cover an amount at its position in the list.
    """
    balances = dict(status.balances)
    for i, p in enumerate(payset):
        if p.amount < 1:
            raise InvalidPaymentError(i, "non-positive amount")
        if not verify_payment(registry, p, status.round):
            raise InvalidSignatureError(i)
        if balances.get(p.payer, 0) < p.amount:
            raise InsufficientFundsError(i, p.payer)
        balances[p.payer] -= p.amount
        balances[p.payee] = balances.get(p.payee, 0) + p.amount
    return Status(status.round + 1, balances)


# -- blocks and seeds --------------------------------------------------------

def block_hash(b: Block) -> Digest:
    """Hash of the canonical block serialization; the cert is not covered."""
    parts = [TAG_BLOCK, be8(b.round), be8(len(b.payset))]
    for p in b.payset:
        parts += [be8(p.payer), be8(p.payee), be8(p.amount), p.sig]
    parts += [b.seed, b.prev_hash]
    return sha256(b"".join(parts))


def empty_round_seed(prev_seed: Digest, round: int) -> Digest:
    """Seed of an empty block: hash of the previous seed and the round."""
    return sha256(prev_seed + be8(round))


def leader_round_seed(sig_of_prev_seed: Signature) -> Digest:
    """Seed of a non-empty block: hash of the leader's unique signature over
    the previous seed."""
    return sha256(sig_of_prev_seed)


def empty_block(round: int, prev_seed: Digest, prev_hash: Digest) -> Block:
    """The canonical (and only) empty block for a round."""
    return Block(round, (), empty_round_seed(prev_seed, round), prev_hash, ())


@dataclass
class Chain:
    """Validated sequence of blocks starting at genesis.

    Keeps an incremental status cache: `_statuses[r]` is the Status entering
    round r, i.e. after replaying paysets 0..r-1.
    """

    genesis_status: Status
    blocks: list[Block] = field(default_factory=list)
    registry: KeyRegistry | None = None
    _statuses: list[Status] = field(default_factory=list, repr=False)
    _holders: dict[int, set[UserId]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._statuses:
            self._statuses = [Status(0, dict(self.genesis_status.balances))]

    @property
    def tip_round(self) -> int:
        return len(self.blocks) - 1

    def tip(self) -> Block:
        return self.blocks[-1]

    def append(self, block: Block) -> None:
        if block.round != len(self.blocks):
            raise LedgerError(
                f"expected block for round {len(self.blocks)}, got {block.round}")
        self.blocks.append(block)

    def status_entering(self, round: int) -> Status:
        """S^round: balances after replaying paysets of rounds 0..round-1."""
        if round < 0 or round > len(self.blocks):
            raise RoundOutOfRangeError(f"no status for round {round}")
        while len(self._statuses) <= round:
            r = len(self._statuses) - 1
            self._statuses.append(
                apply_payset(self._statuses[r], self.blocks[r].payset, self.registry))
        return self._statuses[round]

    def prefix(self, length: int) -> "Chain":
        """A chain holding the first `length` blocks (shared, immutable)."""
        return Chain(self.genesis_status, list(self.blocks[:length]), self.registry)


def make_genesis(balances: dict[UserId, int], registry: KeyRegistry) -> Chain:
    genesis = Status(0, dict(balances))
    chain = Chain(genesis, registry=registry)
    chain.append(Block(0, (), registry.genesis_seed, ZERO_DIGEST, ()))
    return chain


def users_at(chain: Chain, round: int) -> set[UserId]:
    """Users holding a positive balance after replaying through `round`."""
    if round < 0 or round > chain.tip_round:
        raise RoundOutOfRangeError(f"round {round} not on chain")
    cached = chain._holders.get(round)
    if cached is None:
        cached = chain.status_entering(round + 1).holders()
        chain._holders[round] = cached
    return cached


def validate_block(chain: Chain, b: Block, params, registry: KeyRegistry) -> list[str]:
    """Check a block against the chain prefix through round b.round - 1.

    Returns the full violation list (empty means valid) instead of failing
    fast, so adversarial blocks can be analyzed.
    """
    from . import sortition  # imported late: sortition depends on this module

    violations: list[str] = []
    if b.round < 1 or b.round > len(chain.blocks):
        return [f"round {b.round} has no validated predecessor"]
    prev = chain.blocks[b.round - 1]
    if b.prev_hash != block_hash(prev):
        violations.append("previous-block hash mismatch")

    # Payset replay.
    try:
        apply_payset(chain.status_entering(b.round), b.payset, registry)
    except LedgerError as exc:
        violations.append(f"payset does not apply: {exc}")

    bootstrap = b.round < params.lookback

    # Seed rule: empty blocks chain the previous seed with the round number;
    # non-empty blocks embed the hash of the leader's signature over it.
    if b.is_empty():
        if b.seed != empty_round_seed(prev.seed, b.round):
            violations.append("seed rule violated for empty block")
    elif bootstrap:
        violations.append("non-empty block before the lookback horizon")
    else:
        leader = sortition.view_leader(b.round, prev.seed, chain, params, registry)
        if leader is None:
            violations.append("non-empty block in a round with no potential leader")
        else:
            expected = leader_round_seed(
                registry.expected_signature(leader, prev.seed))
            if b.seed != expected:
                violations.append("seed rule violated for non-empty block")

    # Certificate: at least cert_threshold valid messages from distinct
    # sortition-verified committee members, all over this block's hash.
    # Rounds before the lookback horizon cannot have committees at all and
    # are exempt (they must be empty blocks, checked above).
    if not bootstrap:
        digest = block_hash(b)
        expected_bit = 1 if b.is_empty() else 0
        seen: set[UserId] = set()
        valid = 0
        for m in b.cert:
            reason = check_cert_message(
                m, b.round, digest, expected_bit, prev.seed, chain, params, registry)
            if reason is not None:
                violations.append(f"cert message from user {m.voter}: {reason}")
                continue
            if m.voter in seen:
                violations.append(f"cert message from user {m.voter}: duplicate voter")
                continue
            seen.add(m.voter)
            valid += 1
        if valid < params.cert_threshold:
            violations.append(
                f"insufficient certificates: have {valid}, "
                f"need {params.cert_threshold}")
    return violations


def check_cert_message(m, round: int, digest: Digest, expected_bit: int | None,
                       prev_seed: Digest, chain: Chain, params,
                       registry: KeyRegistry) -> str | None:
    """Why a certificate message is unacceptable for `digest`, or None if it
    is fine.  `expected_bit` of None skips the emptiness consistency check."""
    from . import sortition

    if m.round != round:
        return "wrong round"
    if m.block_digest != digest:
        return "wrong block digest"
    if expected_bit is not None and m.bit != expected_bit:
        return "bit does not match block emptiness"
    if m.credential.user != m.voter or m.credential.round != round \
            or m.credential.step != m.step:
        return "credential does not match message"
    check = sortition.verify_credential(m.credential, prev_seed, chain, params,
                                        registry)
    if not check:
        return f"credential invalid ({check.reason})"
    if not registry.verify_ephemeral(m.voter, round, m.step,
                                     cert_payload(m.bit, m.block_digest), m.sig):
        return "bad ephemeral signature"
    return None


def verify_chain(chain: Chain, params, registry: KeyRegistry) -> list[tuple[int, str]]:
    """Replay validate_block over every round; returns (round, violation) pairs."""
    problems: list[tuple[int, str]] = []
    g = chain.blocks[0]
    if g.round != 0 or g.payset or g.prev_hash != ZERO_DIGEST:
        problems.append((0, "malformed genesis block"))
    for b in chain.blocks[1:]:
        for v in validate_block(chain, b, params, registry):
            problems.append((b.round, v))
    return problems


def chain_compare(a: Chain, b: Chain) -> str:
    """Longest-chain preference: returns "a", "b" or "equal".

    Equal length is broken by the lexicographically smaller tip block hash.
    """
    if block_hash(a.blocks[0]) != block_hash(b.blocks[0]):
        raise IncompatibleGenesisError("chains do not share a genesis block")
    if len(a.blocks) != len(b.blocks):
        return "a" if len(a.blocks) > len(b.blocks) else "b"
    ta, tb = block_hash(a.tip()), block_hash(b.tip())
    if ta == tb:
        return "equal"
    return "a" if ta < tb else "b"


# -- line-delimited export (one JSON object per block) ------------------------

def chain_to_lines(chain: Chain) -> list[str]:
    lines = [json.dumps(
        {"genesis_status": {str(u): a for u, a in
                            sorted(chain.genesis_status.balances.items())}},
        sort_keys=True, separators=(",", ":"))]
    for b in chain.blocks:
        lines.append(json.dumps(_block_to_obj(b), sort_keys=True,
                                separators=(",", ":")))
    return lines


def _block_to_obj(b: Block) -> dict:
    return {
        "round": b.round,
        "payset": [{"payer": p.payer, "payee": p.payee, "amount": p.amount,
                    "sig": p.sig.hex()} for p in b.payset],
        "seed": b.seed.hex(),
        "prev_hash": b.prev_hash.hex(),
        "cert": [{"voter": m.voter, "round": m.round, "step": m.step,
                  "bit": m.bit, "block_digest": m.block_digest.hex(),
                  "sig": m.sig.hex(),
                  "credential": {"user": m.credential.user,
                                 "round": m.credential.round,
                                 "step": m.credential.step,
                                 "sig": m.credential.sig.hex()}}
                 for m in b.cert],
    }


def chain_from_lines(lines: Iterable[str],
                     registry: KeyRegistry | None = None) -> Chain:
    from .consensus import CertMessage
    from .sortition import Credential

    it = iter(lines)
    try:
        header = json.loads(next(it))
        balances = {int(u): int(a) for u, a in header["genesis_status"].items()}
    except (StopIteration, KeyError, ValueError) as exc:
        raise LedgerError(f"malformed chain file header: {exc}") from exc
    chain = Chain(Status(0, balances), registry=registry)
    for line in it:
        if not line.strip():
            continue
        try:
            o = json.loads(line)
            payset = tuple(Payment(p["payer"], p["payee"], p["amount"],
                                   bytes.fromhex(p["sig"])) for p in o["payset"])
            cert = tuple(CertMessage(
                voter=m["voter"], round=m["round"], step=m["step"], bit=m["bit"],
                block_digest=bytes.fromhex(m["block_digest"]),
                sig=bytes.fromhex(m["sig"]),
                credential=Credential(m["credential"]["user"],
                                      m["credential"]["round"],
                                      m["credential"]["step"],
                                      bytes.fromhex(m["credential"]["sig"])))
                for m in o["cert"])
            block = Block(o["round"], payset, bytes.fromhex(o["seed"]),
                          bytes.fromhex(o["prev_hash"]), cert)
        except (KeyError, ValueError, TypeError) as exc:
            raise LedgerError(f"malformed chain record: {exc}") from exc
        chain.append(block)
    return chain
