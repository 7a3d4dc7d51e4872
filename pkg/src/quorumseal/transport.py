"""Socket transport: the same nodes, framed over TCP.

Framing is a 4-byte big-endian length followed by the envelope's
canonical JSON. Peers with a listed address get fresh connections per
envelope; the requester connects in, and its connection is held open so
the session result can travel back the way the request came.

Confidentiality and integrity come from the envelope layer, so the
transport itself needs no TLS.
"""

from __future__ import annotations

import json
import logging
import socket
import threading
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

from . import hsm
from .envelope import MalformedEnvelope, MessageEnvelope
from .nodes import (
    CUSTODIAN_ID,
    FACADE_ID,
    REQUESTER_ID,
    ROLE_CUSTODIAN,
    ROLE_FACADE,
    ROLE_PARTY,
    CustodianNode,
    FacadeNode,
    Node,
    NodeIdentity,
    PartyNode,
    RequesterNode,
    RequestMessage,
    ResultMessage,
    make_request,
)
from .field import system_rng
from .sharing import load_share
from .vss import VerifiableShare, load_commitments, vss_verify

logger = logging.getLogger(__name__)

NODE_CONFIG_VERSION = 1
CREDENTIAL_FILE_VERSION = 1

MAX_FRAME = 1 << 24  # nothing in this protocol legitimately nears 16 MiB
_POLL_INTERVAL = 0.05


# ---------------------------------------------------------------------------
# framing
# ---------------------------------------------------------------------------


def write_frame(sock: socket.socket, env: MessageEnvelope) -> None:
    wire = env.to_wire()
    sock.sendall(len(wire).to_bytes(4, "big") + wire)


def read_frame(sock: socket.socket) -> MessageEnvelope | None:
    """One envelope off the socket; None on clean EOF."""
    header = _read_exact(sock, 4)
    if header is None:
        return None
    length = int.from_bytes(header, "big")
    if not 0 < length <= MAX_FRAME:
        raise MalformedEnvelope(f"frame length {length} out of range")
    body = _read_exact(sock, length)
    if body is None:
        raise MalformedEnvelope("connection closed mid-frame")
    return MessageEnvelope.from_wire(body)


def _read_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            if buf:
                raise MalformedEnvelope("connection closed mid-frame")
            return None
        buf += chunk
    return buf


def parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return host, int(port)


def send_envelope(addr: str, env: MessageEnvelope, *, timeout: float = 5.0) -> None:
    host, port = parse_addr(addr)
    with socket.create_connection((host, port), timeout=timeout) as sock:
        write_frame(sock, env)


# ---------------------------------------------------------------------------
# node configuration files
# ---------------------------------------------------------------------------


@dataclass
class PeerConfig:
    id: str
    addr: str | None
    link_key: bytes = dc_field(repr=False, default=b"")


@dataclass
class NodeConfig:
    id: str
    role: str
    listen: str | None
    peers: list[PeerConfig]
    index: int | None = None
    parties: list[str] = dc_field(default_factory=list)
    credential_file: str | None = None
    commitments_file: str | None = None
    share_file: str | None = None
    sealed_file: str | None = None
    timeout: float = hsm.DEFAULT_SESSION_TIMEOUT
    base_dir: Path = dc_field(default_factory=Path)

    def to_json_dict(self) -> dict:
        doc: dict = {
            "version": NODE_CONFIG_VERSION,
            "id": self.id,
            "role": self.role,
            "listen": self.listen,
            "peers": [
                {"id": p.id, "addr": p.addr, "link_key": p.link_key.hex()} for p in self.peers
            ],
            "timeout": self.timeout,
        }
        if self.index is not None:
            doc["index"] = self.index
        if self.parties:
            doc["parties"] = self.parties
        for name in ("credential_file", "commitments_file", "share_file", "sealed_file"):
            value = getattr(self, name)
            if value is not None:
                doc[name] = value
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict, *, base_dir: Path = Path(".")) -> NodeConfig:
        if doc.get("version") != NODE_CONFIG_VERSION:
            raise ValueError(f"unsupported node config version {doc.get('version')!r}")
        peers = [
            PeerConfig(p["id"], p.get("addr"), bytes.fromhex(p["link_key"]))
            for p in doc["peers"]
        ]
        return cls(
            id=doc["id"],
            role=doc["role"],
            listen=doc.get("listen"),
            peers=peers,
            index=doc.get("index"),
            parties=list(doc.get("parties", [])),
            credential_file=doc.get("credential_file"),
            commitments_file=doc.get("commitments_file"),
            share_file=doc.get("share_file"),
            sealed_file=doc.get("sealed_file"),
            timeout=float(doc.get("timeout", hsm.DEFAULT_SESSION_TIMEOUT)),
            base_dir=base_dir,
        )

    @classmethod
    def load(cls, path: str | Path) -> NodeConfig:
        path = Path(path)
        return cls.from_json_dict(json.loads(path.read_text()), base_dir=path.parent)

    def resolve(self, name: str) -> Path:
        # Relative file references resolve against the config's directory.
        p = Path(name)
        return p if p.is_absolute() else self.base_dir / p

    def _credential_key(self) -> bytes:
        if self.credential_file is None:
            raise ValueError(f"{self.role} config needs credential_file")
        doc = json.loads(self.resolve(self.credential_file).read_text())
        if doc.get("version") != CREDENTIAL_FILE_VERSION:
            raise ValueError("unsupported credential file version")
        return bytes.fromhex(doc["credential_key"])

    def build_node(self) -> Node:
        identity = NodeIdentity(
            self.id, self.role, index=self.index,
            link_keys={p.id: p.link_key for p in self.peers},
        )
        rng = system_rng()
        if self.role == ROLE_FACADE:
            return FacadeNode(
                identity,
                self._credential_key(),
                self.parties,
                quorum_timeout=self.timeout,
                rng=rng,
            )
        if self.role == ROLE_CUSTODIAN:
            if self.sealed_file is None:
                raise ValueError("custodian config needs sealed_file")
            sealed = hsm.load_sealed_state(self.resolve(self.sealed_file))
            return CustodianNode(
                identity, sealed, self._credential_key(), session_timeout=self.timeout, rng=rng
            )
        if self.role == ROLE_PARTY:
            if self.share_file is None or self.commitments_file is None:
                raise ValueError("party config needs share_file and commitments_file")
            share = load_share(self.resolve(self.share_file))
            params, commitments = load_commitments(self.resolve(self.commitments_file))
            if not vss_verify(share, commitments, params):
                raise ValueError(
                    f"share index {share.index} does not verify against the commitments; refusing to serve"
                )
            return PartyNode(identity, VerifiableShare(share, commitments), rng=rng)
        raise ValueError(f"role {self.role!r} does not run as a server node")


# ---------------------------------------------------------------------------
# server
# ---------------------------------------------------------------------------


class NodeServer:
    """Serves one protocol node over TCP until told to stop."""

    def __init__(self, config: NodeConfig):
        self.config = config
        self.node = config.build_node()
        self._peer_addrs = {p.id: p.addr for p in config.peers}
        self._lock = threading.Lock()
        # Open connections awaiting a result, keyed by session id.
        self._held: dict[bytes, tuple[socket.socket, threading.Event]] = {}
        self._stop = threading.Event()
        host, port = parse_addr(config.listen) if config.listen else ("127.0.0.1", 0)
        self._server = socket.create_server((host, port))
        self._server.settimeout(_POLL_INTERVAL)
        self.port = self._server.getsockname()[1]

    def serve_forever(self, stop_event: threading.Event | None = None) -> None:
        stop = stop_event or self._stop
        timer = threading.Thread(target=self._timer_loop, args=(stop,), daemon=True)
        timer.start()
        logger.info("%s listening on port %d", self.config.id, self.port)
        try:
            while not stop.is_set():
                try:
                    conn, _ = self._server.accept()
                except socket.timeout:
                    continue
                threading.Thread(target=self._serve_conn, args=(conn,), daemon=True).start()
        finally:
            self._server.close()

    def stop(self) -> None:
        self._stop.set()

    def _timer_loop(self, stop: threading.Event) -> None:
        while not stop.is_set():
            with self._lock:
                outs = self.node.on_time(time.monotonic())
            for env in outs:
                self._route(env)
            stop.wait(_POLL_INTERVAL)

    def _serve_conn(self, conn: socket.socket) -> None:
        hold_key: bytes | None = None
        try:
            conn.settimeout(10.0)
            env = read_frame(conn)
            if env is None:
                return
            # A sender with no listed return address gets its reply on
            # this same connection, whenever the result materializes.
            if self._peer_addrs.get(env.sender, "") is None:
                event = threading.Event()
                hold_key = env.session_id
                with self._lock:
                    self._held[hold_key] = (conn, event)
            with self._lock:
                outs = self.node.handle(env, time.monotonic())
            for out in outs:
                self._route(out)
            if hold_key is not None:
                event.wait(self.config.timeout + 10.0)
        except (OSError, MalformedEnvelope) as exc:
            logger.warning("%s connection error: %s", self.config.id, exc)
        finally:
            if hold_key is not None:
                with self._lock:
                    self._held.pop(hold_key, None)
            conn.close()

    def _route(self, env: MessageEnvelope) -> None:
        addr = self._peer_addrs.get(env.receiver)
        if addr:
            try:
                send_envelope(addr, env)
            except OSError as exc:
                logger.warning(
                    "%s could not reach %s at %s: %s", self.config.id, env.receiver, addr, exc
                )
            return
        with self._lock:
            held = self._held.get(env.session_id)
        if held is None:
            logger.warning("%s has no route to %s", self.config.id, env.receiver)
            return
        conn, event = held
        try:
            write_frame(conn, env)
        except OSError as exc:
            logger.warning("%s reply failed: %s", self.config.id, exc)
        finally:
            event.set()


def run_node(config: NodeConfig | str | Path, stop_event: threading.Event | None = None) -> None:
    if not isinstance(config, NodeConfig):
        config = NodeConfig.load(config)
    NodeServer(config).serve_forever(stop_event)


# ---------------------------------------------------------------------------
# requester client
# ---------------------------------------------------------------------------


@dataclass
class RequesterCredential:
    node_id: str
    facade_id: str
    facade_addr: str | None
    credential_key: bytes
    link_key: bytes

    def to_json_dict(self) -> dict:
        return {
            "version": CREDENTIAL_FILE_VERSION,
            "id": self.node_id,
            "facade_id": self.facade_id,
            "facade_addr": self.facade_addr,
            "credential_key": self.credential_key.hex(),
            "link_key": self.link_key.hex(),
        }

    @classmethod
    def load(cls, path: str | Path) -> RequesterCredential:
        doc = json.loads(Path(path).read_text())
        if doc.get("version") != CREDENTIAL_FILE_VERSION:
            raise ValueError("unsupported credential file version")
        return cls(
            node_id=doc["id"],
            facade_id=doc["facade_id"],
            facade_addr=doc.get("facade_addr"),
            credential_key=bytes.fromhex(doc["credential_key"]),
            link_key=bytes.fromhex(doc["link_key"]),
        )


def request_over_socket(
    credential: RequesterCredential,
    payload: bytes,
    op: str,
    *,
    facade_addr: str | None = None,
    timeout: float = hsm.DEFAULT_SESSION_TIMEOUT + 10.0,
) -> ResultMessage:
    """One request, one result, over a single connection to the facade."""
    addr = facade_addr or credential.facade_addr
    if not addr:
        raise ValueError("no facade address configured")
    identity = NodeIdentity(
        credential.node_id, "requester", link_keys={credential.facade_id: credential.link_key}
    )
    node = RequesterNode(identity, credential.facade_id, rng=system_rng())
    request = make_request(credential.credential_key, payload, op)
    envs = node.begin(request, time.monotonic())
    host, port = parse_addr(addr)
    with socket.create_connection((host, port), timeout=timeout) as sock:
        for env in envs:
            write_frame(sock, env)
        sock.settimeout(timeout)
        deadline = time.monotonic() + timeout
        while node.result is None and time.monotonic() < deadline:
            try:
                env = read_frame(sock)
            except socket.timeout:
                break
            if env is None:
                break
            node.handle(env, time.monotonic())
    if node.result is None:
        from .nodes import ABORT_NO_RESPONSE, STATUS_ABORTED

        return ResultMessage(STATUS_ABORTED, reason=ABORT_NO_RESPONSE)
    return node.result
