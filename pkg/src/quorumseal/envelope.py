"""Authenticated-encrypted message envelopes.

Every hop between two nodes is protected by AES-256-GCM under that
link's pre-shared key. The header (version, session id, sender,
receiver, sequence number, message type) travels in the clear but is
bound as associated data, so any header edit kills the tag. Sequence
numbers must strictly increase per sender per session, which turns a
recorded-and-replayed envelope into a detectable drop.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .field import Rng, rand_bytes

WIRE_VERSION = 1
LINK_KEY_LEN = 32

MSG_REQUEST = "request"
MSG_SESSION_OPEN = "session_open"
MSG_UNLOCK_REQUEST = "unlock_request"
MSG_SHARE_CONTRIBUTION = "share_contribution"
MSG_RESULT = "result"


class IntegrityFailure(Exception):
    """Envelope failed authenticated decryption."""


class ReplayDetected(Exception):
    """Sequence number did not advance."""


class MalformedEnvelope(ValueError):
    """Wire bytes did not parse into an envelope."""


def _check_id(node_id: str) -> str:
    # "|" delimits associated-data fields; ids must not contain it.
    if not node_id or "|" in node_id:
        raise ValueError(f"bad node id {node_id!r}")
    return node_id


@dataclass(frozen=True)
class MessageEnvelope:
    session_id: bytes
    sender: str
    receiver: str
    seq: int
    msg_type: str
    nonce: bytes
    ct: bytes
    version: int = WIRE_VERSION

    def associated_data(self) -> bytes:
        return _associated_data(
            self.version, self.session_id, self.sender, self.receiver, self.seq, self.msg_type
        )

    def to_wire(self) -> bytes:
        doc = {
            "version": self.version,
            "session_id": self.session_id.hex(),
            "sender": self.sender,
            "receiver": self.receiver,
            "seq": self.seq,
            "msg_type": self.msg_type,
            "nonce": self.nonce.hex(),
            "ct": self.ct.hex(),
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def from_wire(cls, data: bytes) -> MessageEnvelope:
        try:
            doc = json.loads(data)
            env = cls(
                session_id=bytes.fromhex(doc["session_id"]),
                sender=_check_id(doc["sender"]),
                receiver=_check_id(doc["receiver"]),
                seq=int(doc["seq"]),
                msg_type=str(doc["msg_type"]),
                nonce=bytes.fromhex(doc["nonce"]),
                ct=bytes.fromhex(doc["ct"]),
                version=int(doc["version"]),
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedEnvelope(f"bad envelope wire data: {exc}") from exc
        if env.seq < 1:
            raise MalformedEnvelope("sequence numbers start at 1")
        return env


def _associated_data(
    version: int, session_id: bytes, sender: str, receiver: str, seq: int, msg_type: str
) -> bytes:
    parts = (str(version), session_id.hex(), sender, receiver, str(seq), msg_type)
    return "|".join(parts).encode()


def seal(
    link_key: bytes,
    *,
    session_id: bytes,
    sender: str,
    receiver: str,
    seq: int,
    msg_type: str,
    payload: bytes,
    rng: Rng,
    insecure: bool = False,
) -> MessageEnvelope:
    """Encrypt a payload for one hop.

    insecure=True skips encryption entirely and is for control
    experiments that demonstrate what the armed channel buys; nothing
    outside a test harness may set it.
    """
    _check_id(sender)
    _check_id(receiver)
    if seq < 1:
        raise ValueError("sequence numbers start at 1")
    if insecure:
        return MessageEnvelope(session_id, sender, receiver, seq, msg_type, b"", payload)
    if len(link_key) != LINK_KEY_LEN:
        raise ValueError(f"link key must be {LINK_KEY_LEN} bytes")
    nonce = rand_bytes(rng, 12)
    ad = _associated_data(WIRE_VERSION, session_id, sender, receiver, seq, msg_type)
    ct = AESGCM(link_key).encrypt(nonce, payload, ad)
    return MessageEnvelope(session_id, sender, receiver, seq, msg_type, nonce, ct)


def open_envelope(link_key: bytes, env: MessageEnvelope, *, insecure: bool = False) -> bytes:
    """Decrypt and authenticate one envelope; IntegrityFailure on any
    mismatch between ciphertext and header."""
    if insecure:
        return env.ct
    if env.version != WIRE_VERSION:
        raise IntegrityFailure(f"unsupported wire version {env.version}")
    try:
        return AESGCM(link_key).decrypt(env.nonce, env.ct, env.associated_data())
    except InvalidTag as exc:
        raise IntegrityFailure("envelope failed authentication") from exc
    except ValueError as exc:
        # Unusable nonce or key length: fail closed like any forgery.
        raise IntegrityFailure(f"envelope undecryptable: {exc}") from exc


class ReplayGuard:
    """Tracks the highest accepted seq per (sender, session). Call after
    the envelope authenticates, never before."""

    def __init__(self) -> None:
        self._last: dict[tuple[str, bytes], int] = {}

    def check(self, env: MessageEnvelope) -> None:
        key = (env.sender, env.session_id)
        last = self._last.get(key, 0)
        if env.seq <= last:
            raise ReplayDetected(
                f"seq {env.seq} from {env.sender} not above {last} in session {env.session_id.hex()[:8]}"
            )
        self._last[key] = env.seq
