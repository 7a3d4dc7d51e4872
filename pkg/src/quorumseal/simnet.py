"""Deterministic in-process network simulator.

Runs the protocol nodes on a virtual clock with a priority queue of
deliveries. A fault script can drop, delay, duplicate or tamper
envelopes per link and mark nodes as compromised (meaning an adversary
reads that node's plaintext view). The simulator records a full
ciphertext-level transcript, which doubles as the eavesdropper's view
of every link.

Same seed, same script, same byte-for-byte transcript.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field as dc_field
from pathlib import Path

from .envelope import MessageEnvelope
from .nodes import (
    ABORT_NO_RESPONSE,
    STATUS_ABORTED,
    Node,
    RequesterNode,
    RequestMessage,
    ResultMessage,
)

FAULT_SCRIPT_VERSION = 1

ACTION_DROP = "drop"
ACTION_DELAY = "delay"
ACTION_DUPLICATE = "duplicate"
ACTION_TAMPER = "tamper"
_ACTIONS = (ACTION_DROP, ACTION_DELAY, ACTION_DUPLICATE, ACTION_TAMPER)

# Deadlines fire on "strictly after", so the clock steps a hair past them.
_EPS = 1e-6


@dataclass
class FaultRule:
    """One link fault. src/dst/msg_type match exactly or as "*"; count
    limits how many envelopes the rule touches (None = all)."""

    action: str
    src: str = "*"
    dst: str = "*"
    msg_type: str = "*"
    delay: float = 0.0
    count: int | None = None

    def __post_init__(self) -> None:
        if self.action not in _ACTIONS:
            raise ValueError(f"unknown fault action {self.action!r}")

    def matches(self, env: MessageEnvelope) -> bool:
        if self.count is not None and self.count <= 0:
            return False
        return (
            self.src in ("*", env.sender)
            and self.dst in ("*", env.receiver)
            and self.msg_type in ("*", env.msg_type)
        )

    def consume(self) -> None:
        if self.count is not None:
            self.count -= 1

    def to_dict(self) -> dict:
        doc: dict = {"action": self.action, "src": self.src, "dst": self.dst}
        if self.msg_type != "*":
            doc["msg_type"] = self.msg_type
        if self.action == ACTION_DELAY:
            doc["delay"] = self.delay
        if self.count is not None:
            doc["count"] = self.count
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> FaultRule:
        return cls(
            action=doc["action"],
            src=doc.get("src", "*"),
            dst=doc.get("dst", "*"),
            msg_type=doc.get("msg_type", "*"),
            delay=float(doc.get("delay", 0.0)),
            count=doc.get("count"),
        )


@dataclass
class FaultScript:
    rules: list[FaultRule] = dc_field(default_factory=list)
    compromised: tuple[str, ...] = ()
    # Control-experiment switch: runs every link unencrypted so tests
    # can show the transcript leaking. Never meaningful in production.
    plaintext_links: bool = False

    def to_json_dict(self) -> dict:
        return {
            "version": FAULT_SCRIPT_VERSION,
            "rules": [r.to_dict() for r in self.rules],
            "compromised": list(self.compromised),
            "plaintext_links": self.plaintext_links,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> FaultScript:
        if doc.get("version") != FAULT_SCRIPT_VERSION:
            raise ValueError(f"unsupported fault script version {doc.get('version')!r}")
        return cls(
            rules=[FaultRule.from_dict(r) for r in doc.get("rules", [])],
            compromised=tuple(doc.get("compromised", ())),
            plaintext_links=bool(doc.get("plaintext_links", False)),
        )

    @classmethod
    def load(cls, path: str | Path) -> FaultScript:
        return cls.from_json_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class TranscriptEntry:
    """One observed wire event. wire holds exactly what crossed the
    link, so the transcript is the eavesdropper's complete take."""

    time: float
    kind: str  # "deliver" | "drop" | "tamper" | "duplicate"
    src: str
    dst: str
    wire: str


class SimNetwork:
    def __init__(
        self,
        nodes: dict[str, Node],
        *,
        script: FaultScript | None = None,
        seed: int = 0,
        latency: float = 1.0,
    ):
        self.nodes = dict(nodes)
        self.script = script or FaultScript()
        self.latency = latency
        self._rng = random.Random(f"simnet:{seed}")
        self._queue: list[tuple[float, int, MessageEnvelope]] = []
        self._tiebreak = 0
        self.now = 0.0
        self.transcript: list[TranscriptEntry] = []
        self.events = 0

    def submit(self, envelopes: list[MessageEnvelope]) -> None:
        for env in envelopes:
            self._route(env)

    def _record(self, kind: str, env: MessageEnvelope, at: float) -> None:
        self.transcript.append(
            TranscriptEntry(
                time=at, kind=kind, src=env.sender, dst=env.receiver, wire=env.to_wire().decode()
            )
        )

    def _push(self, at: float, env: MessageEnvelope) -> None:
        self._tiebreak += 1
        heapq.heappush(self._queue, (at, self._tiebreak, env))

    def _route(self, env: MessageEnvelope) -> None:
        at = self.now + self.latency
        copies = 1
        for rule in self.script.rules:
            if not rule.matches(env):
                continue
            rule.consume()
            if rule.action == ACTION_DROP:
                self._record("drop", env, self.now)
                return
            if rule.action == ACTION_DELAY:
                at += rule.delay
            elif rule.action == ACTION_DUPLICATE:
                copies += 1
            elif rule.action == ACTION_TAMPER:
                env = self._tamper(env)
                self._record("tamper", env, self.now)
        for i in range(copies):
            if i > 0:
                self._record("duplicate", env, self.now)
            self._push(at, env)

    def _tamper(self, env: MessageEnvelope) -> MessageEnvelope:
        target = env.ct if env.ct else env.nonce
        if not target:
            return env
        bit = self._rng.randrange(len(target) * 8)
        flipped = bytearray(target)
        flipped[bit // 8] ^= 1 << (bit % 8)
        if env.ct:
            return MessageEnvelope(
                env.session_id, env.sender, env.receiver, env.seq, env.msg_type,
                env.nonce, bytes(flipped), env.version,
            )
        return MessageEnvelope(
            env.session_id, env.sender, env.receiver, env.seq, env.msg_type,
            bytes(flipped), env.ct, env.version,
        )

    def _deadlines(self) -> float | None:
        ds = [d for n in self.nodes.values() if (d := n.next_deadline()) is not None]
        return min(ds) if ds else None

    def run(self, *, max_time: float = 1e6, max_events: int = 100_000) -> None:
        """Drain deliveries and timers until the network goes quiet."""
        while True:
            self.events += 1
            if self.events > max_events:
                raise RuntimeError("simulation did not quiesce")
            if self._queue:
                at, _, env = heapq.heappop(self._queue)
                self.now = max(self.now, at)
                self._record("deliver", env, self.now)
                node = self.nodes.get(env.receiver)
                if node is not None:
                    self.submit(node.handle(env, self.now))
                continue
            deadline = self._deadlines()
            if deadline is None or deadline > max_time:
                return
            self.now = max(self.now, deadline + _EPS)
            for node in self.nodes.values():
                d = node.next_deadline()
                if d is not None and d <= self.now:
                    self.submit(node.on_time(self.now))

    def transcript_text(self) -> str:
        """Concatenated wire view, the whole-network eavesdropper take."""
        return "\n".join(e.wire for e in self.transcript)

    def transcript_body_bytes(self) -> bytes:
        """Raw nonce and ciphertext bytes of every observed envelope, the
        wire view with the hex framing peeled off."""
        chunks = []
        for entry in self.transcript:
            doc = json.loads(entry.wire)
            chunks.append(bytes.fromhex(doc["nonce"]))
            chunks.append(bytes.fromhex(doc["ct"]))
        return b"\x00".join(chunks)

    def compromised_views(self) -> dict[str, str]:
        """Serialized plaintext views of script-compromised nodes."""
        out = {}
        for node_id in self.script.compromised:
            node = self.nodes.get(node_id)
            if node is not None:
                out[node_id] = json.dumps(node.plaintext_view, sort_keys=True)
        return out


def run_session(
    network: SimNetwork, request: RequestMessage, *, requester_id: str = "requester"
) -> ResultMessage:
    """Drive one request through the network to a terminal result."""
    requester = network.nodes[requester_id]
    if not isinstance(requester, RequesterNode):
        raise TypeError(f"{requester_id} is not a requester node")
    network.submit(requester.begin(request, network.now))
    network.run()
    if requester.result is None:
        return ResultMessage(STATUS_ABORTED, reason=ABORT_NO_RESPONSE)
    return requester.result


def build_network(
    deployment,
    *,
    seed: int = 0,
    script: FaultScript | None = None,
    quorum_timeout: float = 30.0,
    session_timeout: float = 30.0,
    latency: float = 1.0,
) -> SimNetwork:
    """Instantiate the full node set for one deployment.

    Per-node rngs are derived from the seed and node id, so a run is
    reproducible yet no two nodes share a stream.
    """
    from .ceremony import Deployment  # local import avoids a cycle at module load
    from .nodes import (
        CUSTODIAN_ID,
        FACADE_ID,
        REQUESTER_ID,
        ROLE_CUSTODIAN,
        ROLE_FACADE,
        ROLE_PARTY,
        ROLE_REQUESTER,
        CustodianNode,
        FacadeNode,
        NodeIdentity,
        PartyNode,
    )

    assert isinstance(deployment, Deployment)
    script = script or FaultScript()
    insecure = script.plaintext_links

    def node_rng(node_id: str) -> random.Random:
        return random.Random(f"node:{seed}:{node_id}")

    def identity(node_id: str, role: str, index: int | None = None) -> NodeIdentity:
        return NodeIdentity(
            node_id, role, index=index, link_keys=deployment.node_link_keys(node_id)
        )

    nodes: dict[str, Node] = {
        REQUESTER_ID: RequesterNode(
            identity(REQUESTER_ID, ROLE_REQUESTER),
            FACADE_ID,
            rng=node_rng(REQUESTER_ID),
            insecure_links=insecure,
        ),
        FACADE_ID: FacadeNode(
            identity(FACADE_ID, ROLE_FACADE),
            deployment.credential_key,
            deployment.party_ids,
            quorum_timeout=quorum_timeout,
            rng=node_rng(FACADE_ID),
            insecure_links=insecure,
        ),
        CUSTODIAN_ID: CustodianNode(
            identity(CUSTODIAN_ID, ROLE_CUSTODIAN),
            deployment.sealed,
            deployment.credential_key,
            session_timeout=session_timeout,
            rng=node_rng(CUSTODIAN_ID),
            insecure_links=insecure,
        ),
    }
    for i, pid in enumerate(deployment.party_ids, start=1):
        nodes[pid] = PartyNode(
            identity(pid, ROLE_PARTY, index=i),
            deployment.party_shares[i - 1],
            rng=node_rng(pid),
            insecure_links=insecure,
        )
    return SimNetwork(nodes, script=script, seed=seed, latency=latency)
