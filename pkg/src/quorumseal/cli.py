"""Operator command line.

ceremony       generate all deployment material into a directory
node           run one configured node (facade, custodian, or party)
request        submit an operation to a running deployment
verify-share   check a share file against a commitments file
kcv            print the key check value from a sealed state
attack-report  run the adversary scenarios and write the verdict report

Exit codes: 0 success, 2 authentication failure, 3 quorum not reached,
4 file or parse error, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
from pathlib import Path

from . import hsm
from .ceremony import Deployment, run_ceremony
from .field import system_rng
from .nodes import (
    ABORT_AUTH_FAILED,
    ABORT_NO_RESPONSE,
    ABORT_QUORUM_TIMEOUT,
    CUSTODIAN_ID,
    FACADE_ID,
    REQUESTER_ID,
    ROLE_CUSTODIAN,
    ROLE_FACADE,
    ROLE_PARTY,
)
from .sharing import ThresholdConfig, load_share, save_share
from .transport import (
    NodeConfig,
    PeerConfig,
    RequesterCredential,
    request_over_socket,
    run_node,
)
from .vss import load_commitments, save_commitments, vss_verify

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_AUTH = 2
EXIT_QUORUM = 3
EXIT_IO = 4

_ABORT_EXIT_CODES = {
    ABORT_AUTH_FAILED: EXIT_AUTH,
    ABORT_QUORUM_TIMEOUT: EXIT_QUORUM,
    ABORT_NO_RESPONSE: EXIT_QUORUM,
}


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n")
    print(f"wrote {path}")


def cmd_ceremony(args: argparse.Namespace) -> int:
    cfg = ThresholdConfig(args.k, args.n)
    rng = random.Random(f"ceremony:{args.seed}") if args.seed is not None else system_rng()
    deployment = run_ceremony(
        cfg,
        rng,
        kcv_len_bits=args.kcv_bits,
        p_bits=args.group_bits,
        q_bits=args.subgroup_bits,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_deployment(deployment, out, host=args.host, base_port=args.base_port, timeout=args.timeout)
    print(f"kcv {deployment.sealed.kcv.hex()}")
    return EXIT_OK


def _write_deployment(
    deployment: Deployment, out: Path, *, host: str, base_port: int, timeout: float
) -> None:
    """All deployment files. The plaintext master key is dropped on the
    floor here, on purpose: no file ever contains it."""
    n = deployment.cfg.n
    addrs = {FACADE_ID: f"{host}:{base_port}", CUSTODIAN_ID: f"{host}:{base_port + 1}"}
    for i, pid in enumerate(deployment.party_ids, start=1):
        addrs[pid] = f"{host}:{base_port + 1 + i}"

    hsm.save_sealed_state(out / "sealed_state.json", deployment.sealed)
    print(f"wrote {out / 'sealed_state.json'}")
    save_commitments(out / "commitments.json", deployment.params, deployment.commitments)
    print(f"wrote {out / 'commitments.json'}")
    for vs in deployment.party_shares:
        path = out / f"share_{vs.share.index}.json"
        save_share(path, vs.share)
        print(f"wrote {path}")

    _write_json(out / "credential.json", {"version": 1, "credential_key": deployment.credential_key.hex()})
    requester_cred = RequesterCredential(
        node_id=REQUESTER_ID,
        facade_id=FACADE_ID,
        facade_addr=addrs[FACADE_ID],
        credential_key=deployment.credential_key,
        link_key=deployment.link_key(REQUESTER_ID, FACADE_ID),
    )
    _write_json(out / "requester.json", requester_cred.to_json_dict())

    facade_peers = [PeerConfig(REQUESTER_ID, None, deployment.link_key(REQUESTER_ID, FACADE_ID))]
    facade_peers.append(PeerConfig(CUSTODIAN_ID, addrs[CUSTODIAN_ID], deployment.link_key(FACADE_ID, CUSTODIAN_ID)))
    for pid in deployment.party_ids:
        facade_peers.append(PeerConfig(pid, addrs[pid], deployment.link_key(FACADE_ID, pid)))
    facade_cfg = NodeConfig(
        id=FACADE_ID,
        role=ROLE_FACADE,
        listen=addrs[FACADE_ID],
        peers=facade_peers,
        parties=deployment.party_ids,
        credential_file="credential.json",
        timeout=timeout,
    )
    _write_json(out / "facade.json", facade_cfg.to_json_dict())

    custodian_peers = [PeerConfig(FACADE_ID, addrs[FACADE_ID], deployment.link_key(FACADE_ID, CUSTODIAN_ID))]
    for pid in deployment.party_ids:
        custodian_peers.append(PeerConfig(pid, addrs[pid], deployment.link_key(pid, CUSTODIAN_ID)))
    custodian_cfg = NodeConfig(
        id=CUSTODIAN_ID,
        role=ROLE_CUSTODIAN,
        listen=addrs[CUSTODIAN_ID],
        peers=custodian_peers,
        credential_file="credential.json",
        sealed_file="sealed_state.json",
        timeout=timeout,
    )
    _write_json(out / "custodian.json", custodian_cfg.to_json_dict())

    for i, pid in enumerate(deployment.party_ids, start=1):
        party_cfg = NodeConfig(
            id=pid,
            role=ROLE_PARTY,
            listen=addrs[pid],
            peers=[
                PeerConfig(FACADE_ID, addrs[FACADE_ID], deployment.link_key(FACADE_ID, pid)),
                PeerConfig(CUSTODIAN_ID, addrs[CUSTODIAN_ID], deployment.link_key(pid, CUSTODIAN_ID)),
            ],
            index=i,
            share_file=f"share_{i}.json",
            commitments_file="commitments.json",
            timeout=timeout,
        )
        _write_json(out / f"party_{i}.json", party_cfg.to_json_dict())

    topology = {
        "version": 1,
        "k": deployment.cfg.k,
        "n": n,
        "nodes": [
            {"id": REQUESTER_ID, "role": "requester", "addr": None},
            {"id": FACADE_ID, "role": ROLE_FACADE, "addr": addrs[FACADE_ID]},
            {"id": CUSTODIAN_ID, "role": ROLE_CUSTODIAN, "addr": addrs[CUSTODIAN_ID]},
            *(
                {"id": pid, "role": ROLE_PARTY, "addr": addrs[pid]}
                for pid in deployment.party_ids
            ),
        ],
    }
    _write_json(out / "topology.json", topology)


def cmd_node(args: argparse.Namespace) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        run_node(args.config)
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def cmd_request(args: argparse.Namespace) -> int:
    credential = RequesterCredential.load(args.credential)
    payload = Path(args.infile).read_bytes()
    result = request_over_socket(
        credential, payload, args.op, facade_addr=args.facade, timeout=args.timeout
    )
    if result.ok and result.ciphertext is not None:
        print(result.ciphertext.hex())
        return EXIT_OK
    reason = result.reason or "unknown"
    detail = f" culprits={sorted(result.culprits)}" if result.culprits else ""
    print(f"aborted: {reason}{detail}", file=sys.stderr)
    return _ABORT_EXIT_CODES.get(reason, EXIT_FAILURE)


def cmd_verify_share(args: argparse.Namespace) -> int:
    share = load_share(args.share)
    params, commitments = load_commitments(args.commitments)
    if vss_verify(share, commitments, params):
        print("OK")
        return EXIT_OK
    print(f"FAIL index={share.index}")
    return EXIT_FAILURE


def cmd_kcv(args: argparse.Namespace) -> int:
    sealed = hsm.load_sealed_state(args.sealed)
    print(sealed.kcv.hex())
    return EXIT_OK


def cmd_attack_report(args: argparse.Namespace) -> int:
    from .attacks import run_all
    from .report import render_table, write_report_files

    reports = run_all(args.seed)
    print(render_table(reports))
    paths = write_report_files(reports, args.out_dir, seed=args.seed)
    for path in paths.values():
        print(f"wrote {path}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quorumseal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ceremony", help="generate a full deployment into a directory")
    p.add_argument("--k", type=int, required=True, help="unlock threshold")
    p.add_argument("--n", type=int, required=True, help="number of share holders")
    p.add_argument("--kcv-bits", type=int, default=24, choices=hsm.KCV_BITS_CHOICES)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None, help="deterministic material; tests only")
    p.add_argument("--group-bits", type=int, default=2048)
    p.add_argument("--subgroup-bits", type=int, default=256)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--base-port", type=int, default=7601)
    p.add_argument("--timeout", type=float, default=hsm.DEFAULT_SESSION_TIMEOUT)
    p.set_defaults(func=cmd_ceremony)

    p = sub.add_parser("node", help="run one node from its config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_node)

    p = sub.add_parser("request", help="submit one operation")
    p.add_argument("--credential", required=True)
    p.add_argument("--op", required=True, choices=hsm.OPERATIONS)
    p.add_argument("--in", dest="infile", required=True, help="file with the payload bytes")
    p.add_argument("--facade", default=None, help="host:port override")
    p.add_argument("--timeout", type=float, default=hsm.DEFAULT_SESSION_TIMEOUT + 10.0)
    p.set_defaults(func=cmd_request)

    p = sub.add_parser("verify-share", help="check a share against commitments")
    p.add_argument("--share", required=True)
    p.add_argument("--commitments", required=True)
    p.set_defaults(func=cmd_verify_share)

    p = sub.add_parser("kcv", help="print the key check value of a sealed state")
    p.add_argument("--sealed", required=True)
    p.set_defaults(func=cmd_kcv)

    p = sub.add_parser("attack-report", help="run adversary scenarios, write verdicts")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_attack_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
