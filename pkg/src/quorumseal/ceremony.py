"""Key ceremony: everything done once, in one trusted room.

Generates the master key, threshold-splits a fresh access secret with
coefficient commitments, wraps the master key for the custodian, and
issues per-link channel keys plus the requester credential. The output
bundle holds each node's startup material; production ceremonies write
the files and discard the process, so the plaintext master key never
persists anywhere.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .field import FieldModulus, Rng, rand_bytes, random_element
from .hsm import MASTER_KEY_LEN, SealedState, provision
from .nodes import CUSTODIAN_ID, FACADE_ID, REQUESTER_ID, party_node_id
from .sharing import ThresholdConfig
from .vss import CommitmentVector, VerifiableShare, VssGroupParams, generate_group, vss_split

logger = logging.getLogger(__name__)


@dataclass
class Deployment:
    """Ceremony output. master_key is retained ONLY so verification
    harnesses can check results against an independent oracle; nothing
    may write it to any file or wire, and the CLI discards it."""

    cfg: ThresholdConfig
    params: VssGroupParams
    commitments: CommitmentVector
    sealed: SealedState
    party_shares: list[VerifiableShare]
    credential_key: bytes
    link_keys: dict[tuple[str, str], bytes]
    master_key: bytes

    @property
    def party_ids(self) -> list[str]:
        return [party_node_id(i) for i in range(1, self.cfg.n + 1)]

    def link_key(self, a: str, b: str) -> bytes:
        return self.link_keys[_pair(a, b)]

    def node_link_keys(self, node_id: str) -> dict[str, bytes]:
        """peer id -> key, for every link this node sits on."""
        out = {}
        for (x, y), key in self.link_keys.items():
            if x == node_id:
                out[y] = key
            elif y == node_id:
                out[x] = key
        return out


def _pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


def topology_edges(n: int) -> list[tuple[str, str]]:
    """Who talks to whom: requester-facade, facade-custodian, and per
    party a facade link and a custodian link. No party-party links and
    no requester-party links exist at all."""
    edges = [(REQUESTER_ID, FACADE_ID), (FACADE_ID, CUSTODIAN_ID)]
    for i in range(1, n + 1):
        pid = party_node_id(i)
        edges.append((FACADE_ID, pid))
        edges.append((pid, CUSTODIAN_ID))
    return edges


def run_ceremony(
    cfg: ThresholdConfig,
    rng: Rng,
    *,
    kcv_len_bits: int = 24,
    params: VssGroupParams | None = None,
    p_bits: int = 2048,
    q_bits: int = 256,
) -> Deployment:
    """One full ceremony. Pass params to reuse a vetted group; otherwise
    a fresh one is generated at the requested sizes."""
    if params is None:
        params = generate_group(rng, p_bits=p_bits, q_bits=q_bits)
    if cfg.n >= params.q:
        raise ValueError(f"n={cfg.n} does not fit in a subgroup of order {params.q}")
    master_key = rand_bytes(rng, MASTER_KEY_LEN)
    secret = random_element(FieldModulus(params.q), rng)
    vshares, commitments = vss_split(secret, cfg, params, rng)
    sealed = provision(
        master_key, secret, params, commitments, cfg, kcv_len_bits=kcv_len_bits, rng=rng
    )
    credential_key = rand_bytes(rng, 32)
    link_keys = {_pair(a, b): rand_bytes(rng, 32) for a, b in topology_edges(cfg.n)}
    logger.info(
        "ceremony complete: k=%d n=%d, %d links, kcv=%s",
        cfg.k, cfg.n, len(link_keys), sealed.kcv.hex(),
    )
    return Deployment(
        cfg=cfg,
        params=params,
        commitments=commitments,
        sealed=sealed,
        party_shares=vshares,
        credential_key=credential_key,
        link_keys=link_keys,
        master_key=master_key,
    )
