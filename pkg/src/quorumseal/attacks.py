"""Executable adversary model.

Four scenarios, ordered by increasing adversary strength, each run as a
real protocol session with the attack wired into the network or node
set. A scenario measures its verdict from evidence:

  defended      the adversary position yields no key material and no
                unauthorized operation
  detected      the adversary can disrupt but every bad contribution is
                attributed to its source index
  undefendable  the adversary position defeats the design by
                construction, recorded honestly with its rationale
  breached      evidence contradicted the expected defense (a bug)

Scenarios are deterministic under a fixed seed and run on a reduced
(512-bit modulus, 64-bit subgroup) ceremony so the whole suite replays
in seconds; nothing in the logic depends on the group size.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field as dc_field
from functools import lru_cache

from . import hsm
from .ceremony import Deployment, run_ceremony
from .field import rand_bytes
from .hsm import Custodian, SessionState
from .nodes import (
    ABORT_AUTH_FAILED,
    ABORT_INSUFFICIENT_SHARES,
    STATUS_ABORTED,
    CustodianNode,
    FacadeNode,
    PartyNode,
    RequesterNode,
    make_request,
)
from .sharing import ThresholdConfig
from .simnet import ACTION_TAMPER, FaultRule, FaultScript, SimNetwork, build_network, run_session
from .vss import generate_group

VERDICT_DEFENDED = "defended"
VERDICT_DETECTED = "detected"
VERDICT_UNDEFENDABLE = "undefendable"
VERDICT_BREACHED = "breached"

# Monotone adversary strength; the verdict table must never get safer
# as the adversary gets stronger.
SEVERITY_RANK = {
    VERDICT_DEFENDED: 0,
    VERDICT_DETECTED: 1,
    VERDICT_UNDEFENDABLE: 2,
    VERDICT_BREACHED: 3,
}

SCENARIO_GROUP_P_BITS = 512
SCENARIO_GROUP_Q_BITS = 64


@dataclass(frozen=True)
class ScenarioReport:
    name: str
    adversary: str
    verdict: str
    expected: str
    passed: bool
    residual: str | None = None
    details: dict = dc_field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "adversary": self.adversary,
            "verdict": self.verdict,
            "expected": self.expected,
            "passed": self.passed,
            "residual": self.residual,
            "details": self.details,
        }


@lru_cache(maxsize=8)
def _scenario_deployment(seed: int, k: int = 2, n: int = 3) -> Deployment:
    rng = random.Random(f"attack-ceremony:{seed}")
    params = generate_group(
        random.Random(f"attack-group:{seed}"),
        p_bits=SCENARIO_GROUP_P_BITS,
        q_bits=SCENARIO_GROUP_Q_BITS,
    )
    return run_ceremony(ThresholdConfig(k, n), rng, params=params)


def _secret_hexes(deployment: Deployment, payload: bytes) -> dict[str, str]:
    """Hex strings that must never appear where the adversary can read."""
    secrets = {"master_key": deployment.master_key.hex(), "payload": payload.hex()}
    for vs in deployment.party_shares:
        secrets[f"share_{vs.share.index}"] = vs.share.value.to_hex()
    return secrets


def _leaks_in(text: str, secrets: dict[str, str]) -> list[str]:
    return sorted(name for name, hexval in secrets.items() if hexval in text)


def _transcript_leaks(network: SimNetwork, secrets: dict[str, str]) -> list[str]:
    """Secrets visible to a wire eavesdropper, searched at every
    encoding depth: the hex wire text, the raw envelope bodies, and hex
    strings riding inside those bodies."""
    text = network.transcript_text()
    body = network.transcript_body_bytes()
    found = []
    for name, hexval in secrets.items():
        if hexval in text or hexval.encode() in body or bytes.fromhex(hexval) in body:
            found.append(name)
    return sorted(found)


# ---------------------------------------------------------------------------
# scenario 1: eavesdropper and tamperer on every link
# ---------------------------------------------------------------------------


def attack_channel(seed: int = 0) -> ScenarioReport:
    """Adversary records every link and, in a second run, flips bits on
    the wire. Expected: defended. A third, deliberately unencrypted run
    shows the transcript leaking, proving the check has teeth."""
    deployment = _scenario_deployment(seed)
    payload = rand_bytes(random.Random(f"attack-channel-m:{seed}"), 32)
    secrets = _secret_hexes(deployment, payload)
    request = make_request(deployment.credential_key, payload, hsm.OP_ENCRYPT)

    network = build_network(deployment, seed=seed)
    result = run_session(network, request)
    armed_leaks = _transcript_leaks(network, secrets)

    control = build_network(deployment, seed=seed, script=FaultScript(plaintext_links=True))
    run_session(control, request)
    control_leaks = _transcript_leaks(control, secrets)

    tamper_script = FaultScript(rules=[FaultRule(action=ACTION_TAMPER)])
    tampered = build_network(deployment, seed=seed, script=tamper_script)
    tampered_result = run_session(tampered, request)
    integrity_drops = sum(
        1
        for node in tampered.nodes.values()
        for entry in node.audit_log
        if entry["event"] == "integrity_failure"
    )
    custodian = tampered.nodes["custodian"]
    assert isinstance(custodian, CustodianNode)

    ok = (
        result.ok
        and not armed_leaks
        and control_leaks  # the armed/control contrast is what proves containment
        and tampered_result.status == STATUS_ABORTED
        and integrity_drops > 0
        and custodian.performed == 0
    )
    return ScenarioReport(
        name="channel",
        adversary="records and tampers with every link",
        verdict=VERDICT_DEFENDED if ok else VERDICT_BREACHED,
        expected=VERDICT_DEFENDED,
        passed=ok,
        details={
            "armed_run_ok": result.ok,
            "armed_transcript_leaks": armed_leaks,
            "control_transcript_leaks": control_leaks,
            "tampered_run_status": tampered_result.status,
            "tampered_run_reason": tampered_result.reason,
            "integrity_drops": integrity_drops,
            "tampered_operations_performed": custodian.performed,
        },
    )


# ---------------------------------------------------------------------------
# scenario 2: compromised requester
# ---------------------------------------------------------------------------


def attack_requester(seed: int = 0) -> ScenarioReport:
    """Adversary owns the requester endpoint. Expected: defended for key
    material, with one documented residual: a stolen valid credential
    still buys authorized operations until revoked."""
    deployment = _scenario_deployment(seed)
    payload = rand_bytes(random.Random(f"attack-requester-m:{seed}"), 32)
    secrets = _secret_hexes(deployment, payload)
    key_secrets = {k: v for k, v in secrets.items() if k != "payload"}

    # Honest run, requester marked compromised: what does its view hold?
    script = FaultScript(compromised=("requester",))
    network = build_network(deployment, seed=seed, script=script)
    result = run_session(network, make_request(deployment.credential_key, payload, hsm.OP_ENCRYPT))
    view = network.compromised_views()["requester"]
    view_leaks = _leaks_in(view, key_secrets)

    # Forged tag: no credential, no fan-out.
    forged = build_network(deployment, seed=seed + 1)
    facade = forged.nodes["facade"]
    assert isinstance(facade, FacadeNode)
    from .nodes import RequestMessage

    bad = RequestMessage(payload=payload, tag=b"\x00" * 32, op=hsm.OP_ENCRYPT)
    forged_result = run_session(forged, bad)

    # Stolen credential: the request is indistinguishable from honest.
    stolen = build_network(deployment, seed=seed + 2, script=FaultScript(compromised=("requester",)))
    stolen_result = run_session(
        stolen, make_request(deployment.credential_key, payload, hsm.OP_MAC)
    )
    stolen_leaks = _leaks_in(stolen.compromised_views()["requester"], key_secrets)

    ok = (
        result.ok
        and not view_leaks
        and forged_result.status == STATUS_ABORTED
        and forged_result.reason == ABORT_AUTH_FAILED
        and facade.unlock_broadcasts == 0
        and stolen_result.ok
        and not stolen_leaks
    )
    return ScenarioReport(
        name="requester",
        adversary="controls the requester endpoint and its traffic",
        verdict=VERDICT_DEFENDED if ok else VERDICT_BREACHED,
        expected=VERDICT_DEFENDED,
        passed=ok,
        residual=(
            "a stolen valid credential authorizes operations until revoked; "
            "the requester position still never yields shares or the master key"
        ),
        details={
            "honest_run_ok": result.ok,
            "requester_view_leaks": view_leaks,
            "forged_tag_status": forged_result.status,
            "forged_tag_reason": forged_result.reason,
            "unlock_broadcasts_after_forged_tag": facade.unlock_broadcasts,
            "stolen_credential_status": stolen_result.status,
            "stolen_credential_view_leaks": stolen_leaks,
        },
    )


# ---------------------------------------------------------------------------
# scenario 3: compromised share holders
# ---------------------------------------------------------------------------


class _TamperingParty(PartyNode):
    """Contributes its true share plus one, which the commitment check
    pins to this index."""

    def contribution_value(self):
        true = self.vshare.share.value
        return true.modulus.element(true.value + 1)


def _with_malicious(network: SimNetwork, indices: list[int]) -> None:
    for i in indices:
        pid = f"party-{i}"
        honest = network.nodes[pid]
        assert isinstance(honest, PartyNode)
        network.nodes[pid] = _TamperingParty(
            honest.identity, honest.vshare, rng=honest.rng,
            insecure_links=honest._insecure,
        )


def attack_party(seed: int = 0) -> ScenarioReport:
    """Adversary corrupts share holders. Expected: detected. Below the
    breaking point the session still completes and names the culprits;
    past it the session aborts and still names them."""
    deployment = _scenario_deployment(seed)  # k=2, n=3: one bad party survivable
    payload = rand_bytes(random.Random(f"attack-party-m:{seed}"), 32)
    request = make_request(deployment.credential_key, payload, hsm.OP_ENCRYPT)

    one_bad = build_network(deployment, seed=seed)
    _with_malicious(one_bad, [2])
    one_result = run_session(one_bad, request)
    one_custodian = one_bad.nodes["custodian"]
    assert isinstance(one_custodian, CustodianNode)
    one_culprits = sorted(
        set(
            i
            for s in one_custodian.custodian.sessions()
            for i in s.culprits
        )
    )

    two_bad = build_network(deployment, seed=seed + 1)
    _with_malicious(two_bad, [1, 3])
    two_result = run_session(two_bad, request)

    # Passive compromise: a listed-but-honest party's view must hold no
    # other party's share.
    passive = build_network(
        deployment, seed=seed + 2, script=FaultScript(compromised=("party-3",))
    )
    run_session(passive, request)
    other_shares = {
        f"share_{vs.share.index}": vs.share.value.to_hex()
        for vs in deployment.party_shares
        if vs.share.index != 3
    }
    other_shares["master_key"] = deployment.master_key.hex()
    passive_leaks = _leaks_in(passive.compromised_views()["party-3"], other_shares)

    ok = (
        one_result.ok
        and one_culprits == [2]
        and two_result.status == STATUS_ABORTED
        and two_result.reason == ABORT_INSUFFICIENT_SHARES
        and sorted(two_result.culprits) == [1, 3]
        and not passive_leaks
    )
    return ScenarioReport(
        name="party",
        adversary="corrupts share holders up to and past the tolerance",
        verdict=VERDICT_DETECTED if ok else VERDICT_BREACHED,
        expected=VERDICT_DETECTED,
        passed=ok,
        details={
            "one_malicious_status": one_result.status,
            "one_malicious_culprits": one_culprits,
            "past_tolerance_status": two_result.status,
            "past_tolerance_reason": two_result.reason,
            "past_tolerance_culprits": sorted(two_result.culprits),
            "passive_view_leaks": passive_leaks,
        },
    )


# ---------------------------------------------------------------------------
# scenario 4: custodian memory during an unlocked session
# ---------------------------------------------------------------------------


def custodian_memory_image(custodian: Custodian) -> str:
    """Proxy for a process memory dump: every key-bearing buffer the
    custodian currently holds, hex-concatenated."""
    parts = [json.dumps(custodian.sealed_state.to_json_dict())]
    for session in custodian.sessions():
        for share in session.shares.values():
            parts.append(share.value.to_hex())
        if session._master_key is not None:
            parts.append(bytes(session._master_key).hex())
    return "\n".join(parts)


def attack_custodian_memory(seed: int = 0) -> ScenarioReport:
    """Adversary reads custodian memory at chosen moments. Expected:
    undefendable while a session is unlocked; the design answer is to
    shrink that window to a single operation and wipe at every exit."""
    deployment = _scenario_deployment(seed)
    payload = rand_bytes(random.Random(f"attack-custodian-m:{seed}"), 32)
    mk_hex = deployment.master_key.hex()
    k = deployment.cfg.k

    clock = lambda: 0.0  # noqa: E731 - frozen clock keeps the dump moments exact
    custodian = Custodian(
        deployment.sealed,
        deployment.credential_key,
        clock=clock,
        rng=random.Random(f"attack-custodian-rng:{seed}"),
    )
    request = make_request(deployment.credential_key, payload, hsm.OP_ENCRYPT)
    session = custodian.begin_session(request.payload, request.tag, request.op)

    for vs in deployment.party_shares[: k - 1]:
        custodian.submit_share(session, vs)
    collecting_dump = custodian_memory_image(custodian)
    collecting_exposed = mk_hex in collecting_dump
    collecting_share_count = len(session.shares)

    custodian.submit_share(session, deployment.party_shares[k - 1])
    unlocked_dump = custodian_memory_image(custodian)
    unlocked_exposed = mk_hex in unlocked_dump

    custodian.perform(session, hsm.OP_ENCRYPT, payload)
    closed_dump = custodian_memory_image(custodian)
    closed_exposed = mk_hex in closed_dump

    window_minimized = (
        not collecting_exposed
        and unlocked_exposed
        and not closed_exposed
        and session.state is SessionState.DONE
        and collecting_share_count == k - 1
    )
    return ScenarioReport(
        name="custodian-memory",
        adversary="reads custodian process memory at will",
        verdict=VERDICT_UNDEFENDABLE if unlocked_exposed else VERDICT_BREACHED,
        expected=VERDICT_UNDEFENDABLE,
        passed=unlocked_exposed and window_minimized,
        residual=(
            "an adversary inside the custodian process during the unlocked "
            "instant holds the master key; no protocol layer above can help. "
            "mitigation is operational: wipe on every exit and keep the "
            "unlocked window to one operation"
        ),
        details={
            "collecting_dump_exposes_master_key": collecting_exposed,
            "collecting_share_count": collecting_share_count,
            "unlocked_dump_exposes_master_key": unlocked_exposed,
            "closed_dump_exposes_master_key": closed_exposed,
            "final_session_state": session.state.value,
        },
    )


SCENARIOS = (
    attack_channel,
    attack_requester,
    attack_party,
    attack_custodian_memory,
)


def run_all(seed: int = 0) -> list[ScenarioReport]:
    """All scenarios, weakest adversary first. Verifies that measured
    verdicts never get safer as the adversary strengthens."""
    reports = [scenario(seed) for scenario in SCENARIOS]
    ranks = [SEVERITY_RANK[r.verdict] for r in reports]
    if ranks != sorted(ranks):
        raise AssertionError(f"verdict severity not monotone: {[r.verdict for r in reports]}")
    return reports
