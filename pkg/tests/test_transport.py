from __future__ import annotations

import json
import random
import socket
import threading

import pytest

from quorumseal.ceremony import run_ceremony
from quorumseal.envelope import MalformedEnvelope
from quorumseal.hsm import OP_ENCRYPT, OP_MAC, save_sealed_state
from quorumseal.nodes import (
    ABORT_AUTH_FAILED,
    ABORT_QUORUM_TIMEOUT,
    CUSTODIAN_ID,
    FACADE_ID,
    REQUESTER_ID,
    ROLE_CUSTODIAN,
    ROLE_FACADE,
    ROLE_PARTY,
)
from quorumseal.sharing import Share, ThresholdConfig, save_share
from quorumseal.transport import (
    NodeConfig,
    NodeServer,
    PeerConfig,
    RequesterCredential,
    parse_addr,
    read_frame,
    request_over_socket,
    write_frame,
)
from quorumseal.vss import TOY_GROUP, save_commitments

from aes_oracle import aes256_gcm_decrypt
from test_envelope import _seal

_PLACEHOLDER = "127.0.0.1:1"


# ---------------------------------------------------------------------------
# framing
# ---------------------------------------------------------------------------


def test_frame_roundtrip():
    a, b = socket.socketpair()
    try:
        env = _seal(b"framed payload")
        write_frame(a, env)
        assert read_frame(b) == env
    finally:
        a.close()
        b.close()


def test_clean_eof_reads_as_none():
    a, b = socket.socketpair()
    a.close()
    try:
        assert read_frame(b) is None
    finally:
        b.close()


def test_mid_frame_eof_is_malformed():
    a, b = socket.socketpair()
    try:
        a.sendall((100).to_bytes(4, "big") + b"only ten b")
        a.close()
        with pytest.raises(MalformedEnvelope):
            read_frame(b)
    finally:
        b.close()


def test_partial_header_is_malformed():
    a, b = socket.socketpair()
    try:
        a.sendall(b"\x00\x00")
        a.close()
        with pytest.raises(MalformedEnvelope):
            read_frame(b)
    finally:
        b.close()


@pytest.mark.parametrize("length", [0, 1 << 25])
def test_out_of_range_lengths_are_malformed(length):
    a, b = socket.socketpair()
    try:
        a.sendall(length.to_bytes(4, "big"))
        with pytest.raises(MalformedEnvelope):
            read_frame(b)
    finally:
        a.close()
        b.close()


def test_parse_addr():
    assert parse_addr("127.0.0.1:8080") == ("127.0.0.1", 8080)
    assert parse_addr("localhost:9") == ("localhost", 9)
    with pytest.raises(ValueError):
        parse_addr("no-port-here")


# ---------------------------------------------------------------------------
# node configuration
# ---------------------------------------------------------------------------


def _facade_config(tmp_path, dep, timeout=3.0):
    lk = dep.node_link_keys(FACADE_ID)
    return NodeConfig(
        id=FACADE_ID,
        role=ROLE_FACADE,
        listen="127.0.0.1:0",
        peers=[PeerConfig(REQUESTER_ID, None, lk[REQUESTER_ID])]
        + [
            PeerConfig(pid, _PLACEHOLDER, lk[pid])
            for pid in [CUSTODIAN_ID] + dep.party_ids
        ],
        parties=dep.party_ids,
        credential_file="credential.json",
        timeout=timeout,
        base_dir=tmp_path,
    )


def _custodian_config(tmp_path, dep, timeout=3.0):
    lk = dep.node_link_keys(CUSTODIAN_ID)
    return NodeConfig(
        id=CUSTODIAN_ID,
        role=ROLE_CUSTODIAN,
        listen="127.0.0.1:0",
        peers=[PeerConfig(pid, _PLACEHOLDER, lk[pid]) for pid in [FACADE_ID] + dep.party_ids],
        credential_file="credential.json",
        sealed_file="sealed.json",
        timeout=timeout,
        base_dir=tmp_path,
    )


def _party_config(tmp_path, dep, index, timeout=3.0):
    pid = dep.party_ids[index - 1]
    lk = dep.node_link_keys(pid)
    return NodeConfig(
        id=pid,
        role=ROLE_PARTY,
        listen="127.0.0.1:0",
        peers=[
            PeerConfig(FACADE_ID, _PLACEHOLDER, lk[FACADE_ID]),
            PeerConfig(CUSTODIAN_ID, _PLACEHOLDER, lk[CUSTODIAN_ID]),
        ],
        index=index,
        share_file=f"share_{index}.json",
        commitments_file="commitments.json",
        timeout=timeout,
        base_dir=tmp_path,
    )


def _write_artifacts(tmp_path, dep):
    save_sealed_state(tmp_path / "sealed.json", dep.sealed)
    save_commitments(tmp_path / "commitments.json", dep.params, dep.commitments)
    for vs in dep.party_shares:
        save_share(tmp_path / f"share_{vs.share.index}.json", vs.share)
    (tmp_path / "credential.json").write_text(
        json.dumps({"version": 1, "credential_key": dep.credential_key.hex()})
    )


def test_node_config_roundtrip(tmp_path, toy_deployment):
    cfg = _party_config(tmp_path, toy_deployment, 2)
    doc = cfg.to_json_dict()
    again = NodeConfig.from_json_dict(doc, base_dir=tmp_path)
    assert again.id == cfg.id
    assert again.role == cfg.role
    assert again.index == 2
    assert again.share_file == cfg.share_file
    assert again.timeout == cfg.timeout
    assert [(p.id, p.addr, p.link_key) for p in again.peers] == [
        (p.id, p.addr, p.link_key) for p in cfg.peers
    ]


def test_node_config_version_check(tmp_path, toy_deployment):
    doc = _party_config(tmp_path, toy_deployment, 1).to_json_dict()
    doc["version"] = 99
    with pytest.raises(ValueError):
        NodeConfig.from_json_dict(doc)


def test_build_node_insists_on_role_files(tmp_path, toy_deployment):
    cfg = _party_config(tmp_path, toy_deployment, 1)
    cfg.share_file = None
    with pytest.raises(ValueError):
        cfg.build_node()
    bad_role = _facade_config(tmp_path, toy_deployment)
    bad_role.role = "requester"
    with pytest.raises(ValueError):
        bad_role.build_node()


def test_party_refuses_a_share_that_fails_verification(tmp_path, toy_deployment):
    _write_artifacts(tmp_path, toy_deployment)
    good = toy_deployment.party_shares[0].share
    save_share(tmp_path / "share_1.json", Share(good.index, good.value + 1))
    with pytest.raises(ValueError, match="refusing to serve"):
        _party_config(tmp_path, toy_deployment, 1).build_node()


def test_requester_credential_roundtrip(tmp_path):
    cred = RequesterCredential(
        node_id=REQUESTER_ID,
        facade_id=FACADE_ID,
        facade_addr="127.0.0.1:4000",
        credential_key=b"\x01" * 32,
        link_key=b"\x02" * 32,
    )
    path = tmp_path / "requester.json"
    path.write_text(json.dumps(cred.to_json_dict()))
    loaded = RequesterCredential.load(path)
    assert loaded == cred
    doc = cred.to_json_dict()
    doc["version"] = 5
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError):
        RequesterCredential.load(path)


def test_request_needs_an_address():
    cred = RequesterCredential(REQUESTER_ID, FACADE_ID, None, b"\x01" * 32, b"\x02" * 32)
    with pytest.raises(ValueError):
        request_over_socket(cred, b"m", OP_ENCRYPT)


# ---------------------------------------------------------------------------
# live sockets
# ---------------------------------------------------------------------------


class SocketHarness:
    """All the deployment's servers on ephemeral ports, wired together."""

    def __init__(self, tmp_path, dep, timeout=3.0):
        self.dep = dep
        _write_artifacts(tmp_path, dep)
        configs = [
            _facade_config(tmp_path, dep, timeout),
            _custodian_config(tmp_path, dep, timeout),
        ] + [_party_config(tmp_path, dep, i, timeout) for i in range(1, dep.cfg.n + 1)]
        self.servers = {cfg.id: NodeServer(cfg) for cfg in configs}
        addrs = {nid: f"127.0.0.1:{srv.port}" for nid, srv in self.servers.items()}
        for srv in self.servers.values():
            for pid, addr in list(srv._peer_addrs.items()):
                if addr is not None:
                    srv._peer_addrs[pid] = addrs.get(pid, addr)
        self.facade_addr = addrs[FACADE_ID]
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []

    def start(self, only=None):
        for nid, srv in self.servers.items():
            if only is not None and nid not in only:
                srv._server.close()  # nobody home: connections are refused
                continue
            t = threading.Thread(target=srv.serve_forever, args=(self._stop,), daemon=True)
            t.start()
            self._threads.append(t)

    def stop(self):
        self._stop.set()
        for t in self._threads:
            t.join(timeout=2.0)

    def credential(self) -> RequesterCredential:
        return RequesterCredential(
            node_id=REQUESTER_ID,
            facade_id=FACADE_ID,
            facade_addr=self.facade_addr,
            credential_key=self.dep.credential_key,
            link_key=self.dep.link_key(REQUESTER_ID, FACADE_ID),
        )


@pytest.fixture()
def harness(tmp_path, toy_deployment):
    h = SocketHarness(tmp_path, toy_deployment)
    yield h
    h.stop()


def test_socket_end_to_end(harness):
    harness.start()
    result = request_over_socket(
        harness.credential(), b"socket payload", OP_ENCRYPT, timeout=8.0
    )
    assert result.ok
    nonce, ct = result.ciphertext[:12], result.ciphertext[12:]
    assert (
        aes256_gcm_decrypt(harness.dep.master_key, nonce, ct, b"") == b"socket payload"
    )


def test_socket_mac_and_forged_credential(harness):
    harness.start()
    good = harness.credential()
    first = request_over_socket(good, b"mac me", OP_MAC, timeout=8.0)
    second = request_over_socket(good, b"mac me", OP_MAC, timeout=8.0)
    assert first.ok and second.ok
    assert first.ciphertext == second.ciphertext

    forged = RequesterCredential(
        node_id=good.node_id,
        facade_id=good.facade_id,
        facade_addr=good.facade_addr,
        credential_key=b"\x00" * 32,
        link_key=good.link_key,
    )
    result = request_over_socket(forged, b"mac me", OP_MAC, timeout=8.0)
    assert result.status == "aborted"
    assert result.reason == ABORT_AUTH_FAILED


def test_socket_quorum_timeout_with_parties_offline(harness):
    harness.start(only={FACADE_ID, CUSTODIAN_ID, "party-1"})
    result = request_over_socket(
        harness.credential(), b"will time out", OP_ENCRYPT, timeout=10.0
    )
    assert result.status == "aborted"
    assert result.reason == ABORT_QUORUM_TIMEOUT
