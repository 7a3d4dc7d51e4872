"""Message-driven protocol roles.

Flow for one operation: the requester sends an authenticated request to
the facade; the facade checks the request tag, opens a session at the
custodian, and broadcasts unlock requests to the share-holding parties;
each party contributes its share directly to the custodian (never back
through the facade); the custodian unlocks at quorum, performs the one
operation, and the result returns facade-first to the requester.

Nodes are transport-agnostic: handle() consumes one envelope and
returns the envelopes to send, so the same objects run under the
in-process simulator and the socket transport. Nothing here logs or
forwards plaintext key material; per-node plaintext views exist for
containment audits in tests.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field as dc_field

from . import hsm
from .envelope import (
    MSG_REQUEST,
    MSG_RESULT,
    MSG_SESSION_OPEN,
    MSG_SHARE_CONTRIBUTION,
    MSG_UNLOCK_REQUEST,
    IntegrityFailure,
    MessageEnvelope,
    ReplayDetected,
    ReplayGuard,
    open_envelope,
    seal,
)
from .field import FieldElement, Rng, rand_bytes
from .hsm import Custodian, SealedState, UnlockSession
from .sharing import Share
from .vss import VerifiableShare

logger = logging.getLogger(__name__)

ROLE_REQUESTER = "requester"
ROLE_FACADE = "facade"
ROLE_PARTY = "party"
ROLE_CUSTODIAN = "custodian"

REQUESTER_ID = "requester"
FACADE_ID = "facade"
CUSTODIAN_ID = "custodian"


def party_node_id(index: int) -> str:
    return f"party-{index}"


STATUS_OK = "ok"
STATUS_ABORTED = "aborted"

ABORT_AUTH_FAILED = "auth_failed"
ABORT_QUORUM_TIMEOUT = "quorum_timeout"
ABORT_INSUFFICIENT_SHARES = "insufficient_valid_shares"
ABORT_VERIFIER_MISMATCH = "verifier_mismatch"
ABORT_SEAL_INTEGRITY = "seal_integrity"
ABORT_BAD_REQUEST = "bad_request"
ABORT_BUSY = "busy"
ABORT_NO_RESPONSE = "no_response"


@dataclass(frozen=True)
class RequestMessage:
    """What the requester wants: payload, request tag over it, operation."""

    payload: bytes
    tag: bytes
    op: str


def make_request(credential_key: bytes, payload: bytes, op: str) -> RequestMessage:
    if op not in hsm.OPERATIONS:
        raise ValueError(f"unknown operation {op!r}")
    return RequestMessage(payload=payload, tag=hsm.make_request_tag(credential_key, payload), op=op)


@dataclass(frozen=True)
class ResultMessage:
    status: str
    ciphertext: bytes | None = None
    reason: str | None = None
    culprits: tuple[int, ...] = ()

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK

    def to_payload(self) -> dict:
        doc: dict = {"status": self.status}
        if self.ciphertext is not None:
            doc["c"] = self.ciphertext.hex()
        if self.reason is not None:
            doc["reason"] = self.reason
        if self.culprits:
            doc["culprits"] = list(self.culprits)
        return doc

    @classmethod
    def from_payload(cls, doc: dict) -> ResultMessage:
        return cls(
            status=str(doc["status"]),
            ciphertext=bytes.fromhex(doc["c"]) if doc.get("c") is not None else None,
            reason=doc.get("reason"),
            culprits=tuple(int(i) for i in doc.get("culprits", ())),
        )


@dataclass
class NodeIdentity:
    node_id: str
    role: str
    index: int | None = None
    link_keys: dict[str, bytes] = dc_field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if "|" in self.node_id or not self.node_id:
            raise ValueError(f"bad node id {self.node_id!r}")


def _encode_payload(doc: dict) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


class _ClockCell:
    """Mutable clock the custodian reads; handle()/on_time() set it from
    whichever time source drives the node."""

    def __init__(self) -> None:
        self.now = 0.0

    def __call__(self) -> float:
        return self.now


class Node:
    """Common plumbing: sealing, opening, replay guarding, audit trail."""

    def __init__(self, identity: NodeIdentity, *, rng: Rng, insecure_links: bool = False):
        self.identity = identity
        self.rng = rng
        self._insecure = insecure_links
        self._guard = ReplayGuard()
        self._seq: dict[tuple[str, bytes], int] = {}
        # Everything this node saw or said in the clear, for containment
        # audits. Not consulted by protocol logic.
        self.plaintext_view: list[dict] = []
        # Drop events, without payload bytes.
        self.audit_log: list[dict] = []

    @property
    def node_id(self) -> str:
        return self.identity.node_id

    def handle(self, env: MessageEnvelope, now: float) -> list[MessageEnvelope]:
        raise NotImplementedError

    def next_deadline(self) -> float | None:
        return None

    def on_time(self, now: float) -> list[MessageEnvelope]:
        return []

    def _audit(self, event: str, env: MessageEnvelope) -> None:
        self.audit_log.append(
            {"event": event, "peer": env.sender, "msg_type": env.msg_type, "seq": env.seq}
        )

    def _seal_to(
        self, peer: str, session_id: bytes, msg_type: str, payload: dict
    ) -> MessageEnvelope:
        key = self.identity.link_keys[peer]
        seq_key = (peer, session_id)
        seq = self._seq.get(seq_key, 0) + 1
        self._seq[seq_key] = seq
        env = seal(
            key,
            session_id=session_id,
            sender=self.node_id,
            receiver=peer,
            seq=seq,
            msg_type=msg_type,
            payload=_encode_payload(payload),
            rng=self.rng,
            insecure=self._insecure,
        )
        self.plaintext_view.append(
            {"dir": "out", "peer": peer, "msg_type": msg_type, "payload": payload}
        )
        return env

    def _open_in(self, env: MessageEnvelope) -> dict | None:
        """Decrypt, authenticate and replay-check; None means drop."""
        if env.receiver != self.node_id:
            self._audit("misaddressed", env)
            return None
        key = self.identity.link_keys.get(env.sender)
        if key is None:
            self._audit("unknown_peer", env)
            return None
        try:
            body = open_envelope(key, env, insecure=self._insecure)
        except IntegrityFailure:
            self._audit("integrity_failure", env)
            logger.warning(
                "%s dropped envelope from %s: integrity failure", self.node_id, env.sender
            )
            return None
        try:
            self._guard.check(env)
        except ReplayDetected:
            self._audit("replay", env)
            logger.warning("%s dropped envelope from %s: replay", self.node_id, env.sender)
            return None
        try:
            payload = json.loads(body)
        except ValueError:
            self._audit("malformed", env)
            return None
        if not isinstance(payload, dict):
            self._audit("malformed", env)
            return None
        self.plaintext_view.append(
            {"dir": "in", "peer": env.sender, "msg_type": env.msg_type, "payload": payload}
        )
        return payload


class RequesterNode(Node):
    """Originates one request and waits for its result. Sees only its
    own payload, the request tag and the returned ciphertext."""

    def __init__(self, identity: NodeIdentity, facade: str, *, rng: Rng, insecure_links=False):
        super().__init__(identity, rng=rng, insecure_links=insecure_links)
        self.facade = facade
        self.session_id: bytes | None = None
        self.result: ResultMessage | None = None

    def begin(self, request: RequestMessage, now: float) -> list[MessageEnvelope]:
        self.session_id = rand_bytes(self.rng, 16)
        payload = {"m": request.payload.hex(), "tag": request.tag.hex(), "op": request.op}
        return [self._seal_to(self.facade, self.session_id, MSG_REQUEST, payload)]

    def handle(self, env: MessageEnvelope, now: float) -> list[MessageEnvelope]:
        payload = self._open_in(env)
        if payload is None or env.msg_type != MSG_RESULT or env.session_id != self.session_id:
            return []
        if self.result is None:
            self.result = ResultMessage.from_payload(payload)
        return []


@dataclass
class _PendingRequest:
    deadline: float
    answered: bool = False


class FacadeNode(Node):
    """Gatekeeper and fan-out point. Verifies the request tag before any
    party hears about the session; never touches shares."""

    def __init__(
        self,
        identity: NodeIdentity,
        credential_key: bytes,
        party_ids: list[str],
        *,
        custodian: str = CUSTODIAN_ID,
        requester: str = REQUESTER_ID,
        quorum_timeout: float = hsm.DEFAULT_SESSION_TIMEOUT,
        rng: Rng,
        insecure_links: bool = False,
    ):
        super().__init__(identity, rng=rng, insecure_links=insecure_links)
        self._credential_key = bytes(credential_key)
        self.party_ids = list(party_ids)
        self.custodian = custodian
        self.requester = requester
        self.quorum_timeout = quorum_timeout
        self._pending: dict[bytes, _PendingRequest] = {}
        self.unlock_broadcasts = 0

    def handle(self, env: MessageEnvelope, now: float) -> list[MessageEnvelope]:
        payload = self._open_in(env)
        if payload is None:
            return []
        if env.msg_type == MSG_REQUEST and env.sender == self.requester:
            return self._on_request(env, payload, now)
        if env.msg_type == MSG_RESULT and env.sender == self.custodian:
            return self._on_result(env, payload)
        self._audit("unexpected", env)
        return []

    def _on_request(self, env: MessageEnvelope, payload: dict, now: float) -> list[MessageEnvelope]:
        sid = env.session_id
        if sid in self._pending:
            self._audit("duplicate_session", env)
            return []
        try:
            m = bytes.fromhex(payload["m"])
            tag = bytes.fromhex(payload["tag"])
            op = str(payload["op"])
        except (KeyError, ValueError):
            self._audit("malformed", env)
            return [self._result_to_requester(sid, ResultMessage(STATUS_ABORTED, reason=ABORT_BAD_REQUEST))]
        if op not in hsm.OPERATIONS:
            return [self._result_to_requester(sid, ResultMessage(STATUS_ABORTED, reason=ABORT_BAD_REQUEST))]
        if not hsm.verify_request_tag(self._credential_key, m, tag):
            # Nothing fans out on a failed tag; parties never hear of it.
            self._audit("auth_failed", env)
            logger.warning("facade rejected request %s: tag failed", sid.hex()[:8])
            return [self._result_to_requester(sid, ResultMessage(STATUS_ABORTED, reason=ABORT_AUTH_FAILED))]
        self._pending[sid] = _PendingRequest(deadline=now + self.quorum_timeout)
        outs = [
            self._seal_to(
                self.custodian,
                sid,
                MSG_SESSION_OPEN,
                {"m": m.hex(), "tag": tag.hex(), "op": op},
            )
        ]
        for pid in self.party_ids:
            outs.append(self._seal_to(pid, sid, MSG_UNLOCK_REQUEST, {"op": op}))
            self.unlock_broadcasts += 1
        logger.info("facade opened session %s to %d parties", sid.hex()[:8], len(self.party_ids))
        return outs

    def _on_result(self, env: MessageEnvelope, payload: dict) -> list[MessageEnvelope]:
        pending = self._pending.get(env.session_id)
        if pending is None or pending.answered:
            self._audit("unexpected", env)
            return []
        pending.answered = True
        return [self._seal_to(self.requester, env.session_id, MSG_RESULT, payload)]

    def _result_to_requester(self, sid: bytes, result: ResultMessage) -> MessageEnvelope:
        return self._seal_to(self.requester, sid, MSG_RESULT, result.to_payload())

    def next_deadline(self) -> float | None:
        open_deadlines = [p.deadline for p in self._pending.values() if not p.answered]
        return min(open_deadlines) if open_deadlines else None

    def on_time(self, now: float) -> list[MessageEnvelope]:
        outs = []
        for sid, pending in self._pending.items():
            if not pending.answered and now >= pending.deadline:
                pending.answered = True
                logger.warning("facade timed out session %s waiting for quorum", sid.hex()[:8])
                outs.append(
                    self._result_to_requester(
                        sid, ResultMessage(STATUS_ABORTED, reason=ABORT_QUORUM_TIMEOUT)
                    )
                )
        return outs


class PartyNode(Node):
    """Holds one share. On an unlock request from the facade it sends
    the share to the custodian, once per session, and to nobody else."""

    def __init__(
        self,
        identity: NodeIdentity,
        vshare: VerifiableShare,
        *,
        custodian: str = CUSTODIAN_ID,
        facade: str = FACADE_ID,
        rng: Rng,
        insecure_links: bool = False,
    ):
        super().__init__(identity, rng=rng, insecure_links=insecure_links)
        self.vshare = vshare
        self.custodian = custodian
        self.facade = facade
        self.contributed: set[bytes] = set()

    def contribution_value(self) -> FieldElement:
        """Override point for adversarial parties in tests."""
        return self.vshare.share.value

    def handle(self, env: MessageEnvelope, now: float) -> list[MessageEnvelope]:
        payload = self._open_in(env)
        if payload is None:
            return []
        if env.msg_type != MSG_UNLOCK_REQUEST or env.sender != self.facade:
            self._audit("unexpected", env)
            return []
        if env.session_id in self.contributed:
            self._audit("duplicate_unlock", env)
            return []
        self.contributed.add(env.session_id)
        value = self.contribution_value()
        contribution = {"index": self.vshare.share.index, "value": value.to_hex()}
        return [self._seal_to(self.custodian, env.session_id, MSG_SHARE_CONTRIBUTION, contribution)]


class CustodianNode(Node):
    """Wraps the key custodian. Sessions open on the facade's word (the
    tag is re-verified inside), shares arrive directly from parties."""

    # Contributions that arrive before session_open are buffered, but a
    # flood of unknown session ids must not grow memory without bound.
    MAX_EARLY_SESSIONS = 64

    def __init__(
        self,
        identity: NodeIdentity,
        sealed: SealedState,
        credential_key: bytes,
        *,
        facade: str = FACADE_ID,
        session_timeout: float = hsm.DEFAULT_SESSION_TIMEOUT,
        max_sessions: int = hsm.DEFAULT_MAX_SESSIONS,
        rng: Rng,
        insecure_links: bool = False,
    ):
        super().__init__(identity, rng=rng, insecure_links=insecure_links)
        self.facade = facade
        self._clock = _ClockCell()
        self.custodian = Custodian(
            sealed,
            credential_key,
            session_timeout=session_timeout,
            max_sessions=max_sessions,
            clock=self._clock,
            rng=rng,
        )
        self._sessions: dict[bytes, UnlockSession] = {}
        self._early: dict[bytes, list[dict]] = {}
        self.performed = 0

    def handle(self, env: MessageEnvelope, now: float) -> list[MessageEnvelope]:
        self._clock.now = now
        payload = self._open_in(env)
        if payload is None:
            return []
        if env.msg_type == MSG_SESSION_OPEN and env.sender == self.facade:
            return self._on_open(env, payload)
        if env.msg_type == MSG_SHARE_CONTRIBUTION:
            return self._on_contribution(env, payload)
        self._audit("unexpected", env)
        return []

    def _on_open(self, env: MessageEnvelope, payload: dict) -> list[MessageEnvelope]:
        sid = env.session_id
        if sid in self._sessions:
            self._audit("duplicate_session", env)
            return []
        try:
            m = bytes.fromhex(payload["m"])
            tag = bytes.fromhex(payload["tag"])
            op = str(payload["op"])
        except (KeyError, ValueError):
            self._audit("malformed", env)
            return []
        try:
            session = self.custodian.begin_session(m, tag, op, session_id=sid)
        except hsm.AuthenticationFailed:
            self._audit("auth_failed", env)
            return [self._result(sid, ResultMessage(STATUS_ABORTED, reason=ABORT_AUTH_FAILED))]
        except hsm.TooManySessions:
            return [self._result(sid, ResultMessage(STATUS_ABORTED, reason=ABORT_BUSY))]
        except ValueError:
            self._audit("malformed", env)
            return []
        self._sessions[sid] = session
        outs: list[MessageEnvelope] = []
        for contribution in self._early.pop(sid, []):
            outs.extend(self._consume(session, contribution))
        return outs

    def _on_contribution(self, env: MessageEnvelope, payload: dict) -> list[MessageEnvelope]:
        sid = env.session_id
        session = self._sessions.get(sid)
        if session is None:
            if len(self._early) >= self.MAX_EARLY_SESSIONS and sid not in self._early:
                self._audit("early_overflow", env)
                return []
            self._early.setdefault(sid, []).append(payload)
            return []
        return self._consume(session, payload)

    def _consume(self, session: UnlockSession, payload: dict) -> list[MessageEnvelope]:
        if session.state is not hsm.SessionState.COLLECTING:
            return []
        try:
            index = int(payload["index"])
            value = self.custodian.sealed_state.params.share_field.element(
                int(payload["value"], 16)
            )
            vshare = VerifiableShare(
                Share(index, value), self.custodian.sealed_state.commitments
            )
        except (KeyError, ValueError):
            return []
        sid = session.session_id
        try:
            outcome = self.custodian.submit_share(session, vshare)
        except hsm.SessionExpired:
            return []
        except hsm.DuplicateIndex:
            return []
        except hsm.VerifierMismatch:
            return [self._result(sid, ResultMessage(STATUS_ABORTED, reason=ABORT_VERIFIER_MISMATCH))]
        except hsm.WrapIntegrityError:
            return [self._result(sid, ResultMessage(STATUS_ABORTED, reason=ABORT_SEAL_INTEGRITY))]
        if outcome.status == hsm.REJECTED:
            # Abort as soon as the quorum is arithmetically out of reach.
            n, k = self.custodian.sealed_state.n, self.custodian.sealed_state.k
            if len(session.culprits) > n - k:
                self.custodian.abort_session(session)
                return [
                    self._result(
                        sid,
                        ResultMessage(
                            STATUS_ABORTED,
                            reason=ABORT_INSUFFICIENT_SHARES,
                            culprits=tuple(sorted(session.culprits)),
                        ),
                    )
                ]
            return []
        if outcome.status == hsm.UNLOCKED:
            result = self.custodian.perform(session, session.op, session.request_payload)
            self.performed += 1
            return [self._result(sid, ResultMessage(STATUS_OK, ciphertext=result))]
        return []

    def _result(self, sid: bytes, result: ResultMessage) -> MessageEnvelope:
        return self._seal_to(self.facade, sid, MSG_RESULT, result.to_payload())

    def next_deadline(self) -> float | None:
        deadlines = [
            s.deadline
            for s in self._sessions.values()
            if s.state is hsm.SessionState.COLLECTING
        ]
        return min(deadlines) if deadlines else None

    def on_time(self, now: float) -> list[MessageEnvelope]:
        self._clock.now = now
        self.custodian.expire_sessions(now)
        return []
