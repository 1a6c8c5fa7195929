"""Simulated cryptographic primitives.

Signatures here are keyed SHA-256 digests held together by a per-run
KeyRegistry that knows every secret seed.  This gives us the two properties
the protocol logic actually depends on -- determinism and uniqueness (exactly
one byte string verifies per (signer, message)) -- without pretending to be
real cryptography.  Ephemeral per-(user, round, step) keys carry an explicit
destroy/retain lifecycle so key-reuse attacks can be expressed and audited.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum

UserId = int
Digest = bytes
Signature = bytes

DIGEST_LEN = 32
ZERO_DIGEST = b"\x00" * DIGEST_LEN

# Domain-separation tags, exactly 4 ASCII bytes each (3-letter names are
# padded with "_").  Every hashed payload starts with one of these.
TAG_LEADER = b"LEAD"
TAG_VERIFIER = b"VERF"
TAG_BLOCK = b"BLK_"
TAG_PAYMENT = b"PAY_"
TAG_EPHEMERAL = b"EPH_"


class CryptoError(Exception):
    pass


class UnknownUserError(CryptoError):
    pass


class KeyMissingError(CryptoError):
    pass


class KeyDestroyedError(CryptoError):
    pass


class InvalidTransitionError(CryptoError):
    pass


class UnauthorizedSignerError(CryptoError):
    pass


def sha256(data: bytes) -> Digest:
    """32-byte SHA-256 digest of `data`."""
    return hashlib.sha256(data).digest()


def hash_to_unit(digest: Digest) -> float:
    """Map a digest to a fraction: first 8 bytes as big-endian u64 over 2^64."""
    return int.from_bytes(digest[:8], "big") / 2**64


def be8(value: int) -> bytes:
    """Big-endian 8-byte encoding used by all canonical serializations."""
    return value.to_bytes(8, "big")


class KeyState(Enum):
    AVAILABLE = "available"
    DESTROYED = "destroyed"
    RETAINED = "retained"


@dataclass
class LongTermKey:
    owner: UserId
    secret_seed: bytes
    public_handle: bytes


@dataclass
class EphemeralKeyRecord:
    """Per-(owner, round, step) signing key with a one-way lifecycle."""

    owner: UserId
    round: int
    step: int
    secret_seed: bytes
    state: KeyState = KeyState.AVAILABLE


@dataclass(frozen=True)
class SignEvent:
    """Audit-log entry; one per signature produced through any API path."""

    kind: str  # "unique" | "ephemeral"
    owner: UserId
    round: int | None
    step: int | None
    context: str  # "honest" | "adversary"
    key_state: str


class KeyRegistry:
    """Holds every secret seed of one simulation run.

    All key material derives from the u64 run seed, so a run's crypto output
    is bit-identical across executions.  The registry is the trusted verifier:
    verification recomputes the unique signature and compares, which makes a
    second accepting signature impossible by construction.

    Honest code signs through the registry directly; adversarial code must go
    through an :class:`AdversarySigner`, which restricts signing to corrupted
    users and tags the audit log.
    """

    def __init__(self, run_seed: int, horizon: int, max_step: int):
        self.run_seed = run_seed
        self.horizon = horizon
        self.max_step = max_step
        self._master = sha256(b"SEED" + be8(run_seed))
        self.genesis_seed = sha256(b"GENQ" + self._master)
        self._keys: dict[UserId, LongTermKey] = {}
        self._ephemeral: dict[tuple[UserId, int, int], EphemeralKeyRecord] = {}
        self.audit: list[SignEvent] = []

    # -- registration -------------------------------------------------------

    def register_user(self, user: UserId) -> None:
        """Provision a user's long-term key and its ephemeral key space."""
        if user in self._keys:
            return
        seed = sha256(b"LTSK" + self._master + be8(user))
        handle = sha256(b"USER" + be8(user))
        self._keys[user] = LongTermKey(user, seed, handle)

    def is_registered(self, user: UserId) -> bool:
        return user in self._keys

    def users(self) -> list[UserId]:
        return sorted(self._keys)

    def public_handle(self, user: UserId) -> bytes:
        return self._require_key(user).public_handle

    def _require_key(self, user: UserId) -> LongTermKey:
        try:
            return self._keys[user]
        except KeyError:
            raise UnknownUserError(f"user {user} is not registered") from None

    # -- unique (long-term) signatures --------------------------------------

    def _raw_unique(self, user: UserId, message: bytes) -> Signature:
        return sha256(self._require_key(user).secret_seed + message)

    def unique_sign(self, owner: UserId, message: bytes,
                    _context: str = "honest") -> Signature:
        sig = self._raw_unique(owner, message)
        self.audit.append(SignEvent("unique", owner, None, None, _context, "-"))
        return sig

    def expected_signature(self, owner: UserId, message: bytes) -> Signature:
        """Verification helper: the one signature that verifies for (owner,
        message).  Produces no audit entry; never exposes the seed."""
        return self._raw_unique(owner, message)

    def verify_unique(self, owner: UserId, message: bytes, sig: Signature) -> bool:
        return self._raw_unique(owner, message) == sig

    # -- ephemeral keys ------------------------------------------------------

    def _provisioned(self, owner: UserId, round: int, step: int) -> bool:
        return (owner in self._keys
                and 0 <= round <= self.horizon
                and 1 <= step <= self.max_step)

    def _record(self, owner: UserId, round: int, step: int) -> EphemeralKeyRecord:
        if not self._provisioned(owner, round, step):
            raise KeyMissingError(
                f"no ephemeral key for user {owner} at round {round} step {step}")
        key = (owner, round, step)
        rec = self._ephemeral.get(key)
        if rec is None:
            seed = sha256(TAG_EPHEMERAL + self._master
                          + be8(owner) + be8(round) + be8(step))
            rec = EphemeralKeyRecord(owner, round, step, seed)
            self._ephemeral[key] = rec
        return rec

    def ephemeral_state(self, owner: UserId, round: int, step: int) -> KeyState:
        return self._record(owner, round, step).state

    def ephemeral_sign(self, owner: UserId, round: int, step: int,
                       message: bytes, _context: str = "honest") -> Signature:
        rec = self._record(owner, round, step)
        if rec.state is KeyState.DESTROYED:
            raise KeyDestroyedError(
                f"ephemeral key of user {owner} for round {round} step {step} "
                "was destroyed")
        sig = sha256(rec.secret_seed + message)
        self.audit.append(SignEvent(
            "ephemeral", owner, round, step, _context, rec.state.value))
        return sig

    def verify_ephemeral(self, owner: UserId, round: int, step: int,
                         message: bytes, sig: Signature) -> bool:
        """Check an ephemeral signature.  Works regardless of key state:
        destroying a key revokes signing, not past signatures."""
        if not self._provisioned(owner, round, step):
            return False
        return sha256(self._record(owner, round, step).secret_seed + message) == sig

    def destroy_ephemeral(self, owner: UserId, round: int, step: int,
                          policy: str = "honest") -> KeyState:
        """Retire a key: `honest` destroys it, `retain` keeps it signable.

        Re-applying the same terminal state is a no-op; crossing from one
        terminal state to the other is an invalid transition.
        """
        if policy not in ("honest", "retain"):
            raise ValueError(f"unknown key policy {policy!r}")
        rec = self._record(owner, round, step)
        target = KeyState.DESTROYED if policy == "honest" else KeyState.RETAINED
        if rec.state is KeyState.AVAILABLE:
            rec.state = target
        elif rec.state is not target:
            raise InvalidTransitionError(
                f"key of user {owner} at ({round},{step}) is {rec.state.value}; "
                f"cannot move to {target.value}")
        return rec.state

    def retained_records(self, round: int | None = None) -> list[EphemeralKeyRecord]:
        recs = [r for r in self._ephemeral.values() if r.state is KeyState.RETAINED]
        if round is not None:
            recs = [r for r in recs if r.round == round]
        return sorted(recs, key=lambda r: (r.round, r.step, r.owner))


@dataclass
class AdversarySigner:
    """Adversary-facing signing API: only users the active strategy has
    corrupted can be signed for.  Every signature is audit-tagged."""

    registry: KeyRegistry
    corrupted: set[UserId] = field(default_factory=set)

    def corrupt(self, user: UserId) -> None:
        self.corrupted.add(user)

    def _check(self, owner: UserId) -> None:
        if owner not in self.corrupted:
            raise UnauthorizedSignerError(
                f"adversary does not control user {owner}")

    def unique_sign(self, owner: UserId, message: bytes) -> Signature:
        self._check(owner)
        return self.registry.unique_sign(owner, message, _context="adversary")

    def ephemeral_sign(self, owner: UserId, round: int, step: int,
                       message: bytes) -> Signature:
        self._check(owner)
        return self.registry.ephemeral_sign(
            owner, round, step, message, _context="adversary")
