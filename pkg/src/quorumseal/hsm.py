"""Software key custodian.

The master key is stored wrapped (AES-256-GCM) under an access key that
is the hash of the threshold-shared secret. The custodian is therefore
cryptographically unable to touch the master key until a quorum of
verifiable shares arrives; holding the sealed state alone yields only a
key check value.

Surface rules: no operation returns raw key material and nothing here
logs secrets. Python cannot force memory erasure, so unwrapped keys are
kept in bytearrays and zeroed best effort the moment a session ends.
"""

from __future__ import annotations

import hashlib
import hmac as hmac_mod
import json
import logging
import time
from dataclasses import dataclass, field as dc_field
from enum import Enum
from pathlib import Path
from typing import Callable

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .field import FieldElement, Rng, rand_bytes, system_rng
from .sharing import Share, ThresholdConfig, shamir_reconstruct
from .vss import CommitmentVector, VerifiableShare, VssGroupParams, vss_verify

logger = logging.getLogger(__name__)

SEALED_FILE_VERSION = 1
MASTER_KEY_LEN = 32
KCV_BITS_CHOICES = (24, 48, 64)

_WRAP_AAD = b"quorumseal.master-wrap.v1"
_VERIFIER_CONTEXT = b"quorumseal.access-verifier.v1"
_ZERO_BLOCK = b"\x00" * 16

DEFAULT_SESSION_TIMEOUT = 30.0
DEFAULT_MAX_SESSIONS = 16


class CustodyError(Exception):
    """Base for custodian failures."""


class AuthenticationFailed(CustodyError):
    """Request authenticator did not verify."""


class TooManySessions(CustodyError):
    """Concurrent session cap reached."""


class SessionExpired(CustodyError):
    """Deadline passed before the quorum arrived."""


class SessionNotCollecting(CustodyError):
    """Share submitted to a session in a terminal or unlocked state."""


class SessionNotUnlocked(CustodyError):
    """Operation requested without an unlocked session."""


class DuplicateIndex(CustodyError):
    """Same share index submitted twice in one session."""


class VerifierMismatch(CustodyError):
    """Reconstructed access key does not match the sealed verifier."""


class WrapIntegrityError(CustodyError):
    """Sealed master-key blob failed authenticated decryption."""


def _wipe(buf: bytearray | None) -> None:
    if buf is not None:
        for i in range(len(buf)):
            buf[i] = 0


def derive_access_key(secret: FieldElement) -> bytes:
    """Access key = SHA-256 of the minimal big-endian secret encoding."""
    return hashlib.sha256(secret.to_bytes()).digest()


def access_verifier(access_key: bytes) -> bytes:
    return hashlib.sha256(access_key + _VERIFIER_CONTEXT).digest()


def compute_kcv(master_key: bytes, kcv_len_bits: int) -> bytes:
    """Leading bits of AES-256-ECB over one zero block.

    Safe to publish: inverting it means breaking AES on a known
    plaintext. 24, 48 or 64 bits keep byte alignment.
    """
    if len(master_key) != MASTER_KEY_LEN:
        raise ValueError(f"master key must be {MASTER_KEY_LEN} bytes")
    if kcv_len_bits not in KCV_BITS_CHOICES:
        raise ValueError(f"kcv length must be one of {KCV_BITS_CHOICES} bits")
    enc = Cipher(algorithms.AES(master_key), modes.ECB()).encryptor()
    block = enc.update(_ZERO_BLOCK) + enc.finalize()
    return block[: kcv_len_bits // 8]


def verify_request_tag(credential_key: bytes, payload: bytes, tag: bytes) -> bool:
    """HMAC-SHA-256 check in constant time. Pluggable point: any scheme
    producing a verifiable tag over the payload slots in here."""
    expected = hmac_mod.new(credential_key, payload, hashlib.sha256).digest()
    return hmac_mod.compare_digest(expected, tag)


def make_request_tag(credential_key: bytes, payload: bytes) -> bytes:
    return hmac_mod.new(credential_key, payload, hashlib.sha256).digest()


# ---------------------------------------------------------------------------
# sealed state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SealedState:
    """Everything the custodian persists. Contains no plaintext key
    material: the wrap is AEAD ciphertext, the verifier and kcv are
    one-way derived."""

    wrap_nonce: bytes
    wrap_ct: bytes
    verifier: bytes
    kcv: bytes
    kcv_len_bits: int
    params: VssGroupParams
    commitments: CommitmentVector
    k: int
    n: int

    def to_json_dict(self) -> dict:
        return {
            "version": SEALED_FILE_VERSION,
            "wrap": {"nonce": self.wrap_nonce.hex(), "ct": self.wrap_ct.hex()},
            "verifier": self.verifier.hex(),
            "kcv": self.kcv.hex(),
            "kcv_len_bits": self.kcv_len_bits,
            "vss": {
                **self.params.to_json_dict(),
                "commitments": [
                    c.to_bytes(max(1, (c.bit_length() + 7) // 8), "big").hex()
                    for c in self.commitments.values
                ],
            },
            "k": self.k,
            "n": self.n,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> SealedState:
        if data.get("version") != SEALED_FILE_VERSION:
            raise ValueError(f"unsupported sealed state version {data.get('version')!r}")
        vss_data = data["vss"]
        params = VssGroupParams.from_json_dict(vss_data)
        commitments = CommitmentVector(tuple(int(c, 16) for c in vss_data["commitments"]))
        for c in commitments.values:
            if not params.contains(c):
                raise ValueError("commitment outside the order-q subgroup")
        kcv_len_bits = int(data["kcv_len_bits"])
        if kcv_len_bits not in KCV_BITS_CHOICES:
            raise ValueError(f"kcv length must be one of {KCV_BITS_CHOICES} bits")
        kcv = bytes.fromhex(data["kcv"])
        if len(kcv) * 8 != kcv_len_bits:
            raise ValueError("kcv length does not match kcv_len_bits")
        k = int(data["k"])
        n = int(data["n"])
        ThresholdConfig(k, n)
        if len(commitments) != k:
            raise ValueError("commitment vector length does not match threshold")
        return cls(
            wrap_nonce=bytes.fromhex(data["wrap"]["nonce"]),
            wrap_ct=bytes.fromhex(data["wrap"]["ct"]),
            verifier=bytes.fromhex(data["verifier"]),
            kcv=kcv,
            kcv_len_bits=kcv_len_bits,
            params=params,
            commitments=commitments,
            k=k,
            n=n,
        )


def save_sealed_state(path: str | Path, state: SealedState) -> None:
    Path(path).write_text(json.dumps(state.to_json_dict(), indent=2) + "\n")


def load_sealed_state(path: str | Path) -> SealedState:
    return SealedState.from_json_dict(json.loads(Path(path).read_text()))


def provision(
    master_key: bytes,
    sharing_secret: FieldElement,
    params: VssGroupParams,
    commitments: CommitmentVector,
    cfg: ThresholdConfig,
    kcv_len_bits: int = 24,
    rng: Rng | None = None,
) -> SealedState:
    """Wrap a master key under the shared secret's access key.

    Ceremony-time only. The caller keeps custody of master_key and the
    sharing secret and is responsible for discarding both; this function
    wipes its own intermediate access-key buffer.
    """
    if len(master_key) != MASTER_KEY_LEN:
        raise ValueError(f"master key must be {MASTER_KEY_LEN} bytes")
    if sharing_secret.modulus.p != params.q:
        raise ValueError("sharing secret must live in the exponent field Z_q")
    if len(commitments) != cfg.k:
        raise ValueError("commitment vector length does not match threshold")
    rng = rng or system_rng()
    ak = bytearray(derive_access_key(sharing_secret))
    try:
        verifier = access_verifier(bytes(ak))
        nonce = rand_bytes(rng, 12)
        ct = AESGCM(bytes(ak)).encrypt(nonce, master_key, _WRAP_AAD)
    finally:
        _wipe(ak)
    state = SealedState(
        wrap_nonce=nonce,
        wrap_ct=ct,
        verifier=verifier,
        kcv=compute_kcv(master_key, kcv_len_bits),
        kcv_len_bits=kcv_len_bits,
        params=params,
        commitments=commitments,
        k=cfg.k,
        n=cfg.n,
    )
    logger.info("custodian provisioned: k=%d n=%d kcv=%s", cfg.k, cfg.n, state.kcv.hex())
    return state


# ---------------------------------------------------------------------------
# unlock sessions
# ---------------------------------------------------------------------------


class SessionState(Enum):
    COLLECTING = "collecting"
    UNLOCKED = "unlocked"
    DONE = "done"
    ABORTED = "aborted"


OP_ENCRYPT = "encrypt"
OP_MAC = "mac"
OPERATIONS = (OP_ENCRYPT, OP_MAC)


@dataclass
class UnlockSession:
    """State for one authorization attempt. Share values and the master
    key live here only between unlock and the single operation."""

    session_id: bytes
    op: str
    deadline: float
    request_payload: bytes = dc_field(repr=False, default=b"")
    state: SessionState = SessionState.COLLECTING
    shares: dict[int, Share] = dc_field(default_factory=dict, repr=False)
    culprits: list[int] = dc_field(default_factory=list)
    unlocked_with: int | None = None
    _master_key: bytearray | None = dc_field(default=None, repr=False)

    @property
    def short_id(self) -> str:
        return self.session_id.hex()[:8]


@dataclass(frozen=True)
class SubmitResult:
    """Outcome of one share submission."""

    status: str  # "progress" | "unlocked" | "rejected"
    rejected_index: int | None = None


PROGRESS = "progress"
UNLOCKED = "unlocked"
REJECTED = "rejected"


class Custodian:
    """Holds the sealed state and runs unlock sessions against it."""

    def __init__(
        self,
        sealed: SealedState,
        credential_key: bytes,
        *,
        session_timeout: float = DEFAULT_SESSION_TIMEOUT,
        max_sessions: int = DEFAULT_MAX_SESSIONS,
        clock: Callable[[], float] = time.monotonic,
        rng: Rng | None = None,
    ):
        self._sealed = sealed
        self._credential_key = bytes(credential_key)
        self._session_timeout = session_timeout
        self._max_sessions = max_sessions
        self._clock = clock
        self._rng = rng or system_rng()
        self._sessions: dict[bytes, UnlockSession] = {}

    @property
    def sealed_state(self) -> SealedState:
        return self._sealed

    @property
    def threshold(self) -> ThresholdConfig:
        return ThresholdConfig(self._sealed.k, self._sealed.n)

    def kcv(self) -> bytes:
        """The only key-derived value obtainable without a quorum."""
        return self._sealed.kcv

    def session(self, session_id: bytes) -> UnlockSession | None:
        return self._sessions.get(session_id)

    def sessions(self) -> list[UnlockSession]:
        return list(self._sessions.values())

    def active_session_count(self) -> int:
        return sum(
            1
            for s in self._sessions.values()
            if s.state in (SessionState.COLLECTING, SessionState.UNLOCKED)
        )

    def begin_session(
        self,
        request_payload: bytes,
        request_tag: bytes,
        op: str,
        *,
        session_id: bytes | None = None,
    ) -> UnlockSession:
        """Open a collecting session after checking the request tag.

        The tag is checked here even when an upstream gatekeeper already
        checked it; the custodian trusts nobody on authorization.
        """
        if op not in OPERATIONS:
            raise ValueError(f"unknown operation {op!r}")
        if not verify_request_tag(self._credential_key, request_payload, request_tag):
            logger.warning("session rejected: request tag failed verification")
            raise AuthenticationFailed("request tag failed verification")
        now = self._clock()
        self.expire_sessions(now)
        if self.active_session_count() >= self._max_sessions:
            raise TooManySessions(f"cap of {self._max_sessions} concurrent sessions reached")
        sid = session_id if session_id is not None else rand_bytes(self._rng, 16)
        if sid in self._sessions:
            raise ValueError("session id already in use")
        session = UnlockSession(
            session_id=sid,
            op=op,
            deadline=now + self._session_timeout,
            request_payload=request_payload,
        )
        self._sessions[sid] = session
        logger.info("session %s collecting (op=%s)", session.short_id, op)
        return session

    def submit_share(self, session: UnlockSession, vshare: VerifiableShare) -> SubmitResult:
        """Feed one share in. Bad shares are recorded and reported, not
        raised: a rejection names the culprit and collection continues."""
        if session.state is not SessionState.COLLECTING:
            if session.state is SessionState.ABORTED:
                raise SessionExpired(f"session {session.short_id} already aborted")
            raise SessionNotCollecting(f"session {session.short_id} is {session.state.value}")
        now = self._clock()
        if now > session.deadline:
            self._abort(session)
            raise SessionExpired(f"session {session.short_id} deadline passed")
        index = vshare.share.index
        if index in session.shares or index in session.culprits:
            raise DuplicateIndex(f"share index {index} already submitted")
        # Shares are checked against the ceremony commitments inside the
        # sealed state, never against a vector the submitter supplied.
        if not vss_verify(vshare.share, self._sealed.commitments, self._sealed.params):
            session.culprits.append(index)
            logger.warning("session %s rejected share index %d", session.short_id, index)
            return SubmitResult(REJECTED, rejected_index=index)
        session.shares[index] = vshare.share
        if len(session.shares) < self._sealed.k:
            logger.info(
                "session %s holds %d/%d shares", session.short_id, len(session.shares), self._sealed.k
            )
            return SubmitResult(PROGRESS)
        return self._unlock(session)

    def _unlock(self, session: UnlockSession) -> SubmitResult:
        secret = shamir_reconstruct(list(session.shares.values()), self._sealed.k)
        count = len(session.shares)
        ak = bytearray(derive_access_key(secret))
        try:
            if not hmac_mod.compare_digest(access_verifier(bytes(ak)), self._sealed.verifier):
                self._abort(session)
                raise VerifierMismatch("reconstructed access key does not match sealed verifier")
            try:
                master = AESGCM(bytes(ak)).decrypt(
                    self._sealed.wrap_nonce, self._sealed.wrap_ct, _WRAP_AAD
                )
            except InvalidTag as exc:
                self._abort(session)
                raise WrapIntegrityError("sealed master-key blob failed decryption") from exc
        finally:
            _wipe(ak)
        session._master_key = bytearray(master)
        # Shares are spent: the unlocked key supersedes them, so shrink
        # the window where reconstruction material sits in memory.
        session.shares.clear()
        session.unlocked_with = count
        session.state = SessionState.UNLOCKED
        logger.info("session %s unlocked with %d shares", session.short_id, count)
        return SubmitResult(UNLOCKED)

    def perform(self, session: UnlockSession, op: str, payload: bytes) -> bytes:
        """Run exactly one operation, then wipe the key and close."""
        if session.state is not SessionState.UNLOCKED or session._master_key is None:
            raise SessionNotUnlocked(f"session {session.short_id} is {session.state.value}")
        if op != session.op:
            raise ValueError(f"session authorized {session.op!r}, not {op!r}")
        master = bytes(session._master_key)
        try:
            if op == OP_ENCRYPT:
                nonce = rand_bytes(self._rng, 12)
                result = nonce + AESGCM(master).encrypt(nonce, payload, None)
            elif op == OP_MAC:
                result = hmac_mod.new(master, payload, hashlib.sha256).digest()
            else:
                raise ValueError(f"unknown operation {op!r}")
        finally:
            _wipe(session._master_key)
            session._master_key = None
            master = b""
            session.state = SessionState.DONE
        logger.info("session %s performed %s and closed", session.short_id, op)
        return result

    def abort_session(self, session: UnlockSession) -> None:
        if session.state in (SessionState.COLLECTING, SessionState.UNLOCKED):
            self._abort(session)

    def expire_sessions(self, now: float | None = None) -> list[bytes]:
        """Abort every collecting session past its deadline; partial
        share sets are wiped with it."""
        now = self._clock() if now is None else now
        expired = []
        for session in self._sessions.values():
            if session.state is SessionState.COLLECTING and now > session.deadline:
                self._abort(session)
                expired.append(session.session_id)
                logger.info("session %s expired", session.short_id)
        return expired

    def _abort(self, session: UnlockSession) -> None:
        _wipe(session._master_key)
        session._master_key = None
        session.shares.clear()
        session.state = SessionState.ABORTED
