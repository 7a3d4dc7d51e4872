from __future__ import annotations

import random

import pytest
import sympy

from quorumseal.field import FieldModulus
from quorumseal.sharing import Share, SharePolynomial, ThresholdConfig, shamir_reconstruct
from quorumseal.vss import (
    TOY_GROUP,
    CommitmentVector,
    InsufficientValidShares,
    InvalidGroup,
    VerifiableShare,
    VssGroupParams,
    commit_coefficients,
    commitments_from_json_dict,
    commitments_to_json_dict,
    generate_group,
    load_commitments,
    save_commitments,
    vss_reconstruct,
    vss_split,
    vss_verify,
)

Q11 = TOY_GROUP.share_field


def _toy_split(secret_value: int, k: int, n: int, seed: int = 0):
    secret = Q11.element(secret_value)
    return vss_split(secret, ThresholdConfig(k, n), TOY_GROUP, random.Random(seed))


def test_toy_group_is_valid_and_small():
    assert TOY_GROUP.P == 23 and TOY_GROUP.q == 11 and TOY_GROUP.g == 2
    assert TOY_GROUP.contains(2)


def test_group_validation_rejects_bad_parameters():
    with pytest.raises(InvalidGroup):
        VssGroupParams(P=22, q=11, g=2)  # P composite
    with pytest.raises(InvalidGroup):
        VssGroupParams(P=23, q=10, g=2)  # q composite
    with pytest.raises(InvalidGroup):
        VssGroupParams(P=23, q=7, g=2)  # q does not divide P-1
    with pytest.raises(InvalidGroup):
        VssGroupParams(P=23, q=11, g=1)  # trivial generator
    with pytest.raises(InvalidGroup):
        VssGroupParams(P=23, q=11, g=5)  # 5 has order 22, not 11


def test_commitments_worked_example():
    # coefficients (7, 3) over Z_11 commit to (2^7, 2^3) mod 23 = (13, 8)
    poly = SharePolynomial([Q11.element(7), Q11.element(3)])
    commitments = commit_coefficients(poly, TOY_GROUP)
    assert commitments.values == (13, 8)
    # q(1) = 10: g^10 = 12 and 13 * 8^1 = 104 = 12 (mod 23)
    assert vss_verify(Share(1, Q11.element(10)), commitments, TOY_GROUP)
    assert not vss_verify(Share(1, Q11.element(0)), commitments, TOY_GROUP)


def test_split_outputs_always_verify_toy_exhaustive():
    for k, n in ((1, 2), (2, 3), (3, 5)):
        for secret in range(11):
            vshares, commitments = _toy_split(secret, k, n, seed=secret)
            assert commitments.threshold == k
            for vs in vshares:
                assert vss_verify(vs.share, commitments, TOY_GROUP)


def test_soundness_every_single_value_tamper_fails():
    # Exhaustive over the toy group: any wrong value at any index must
    # be rejected. Zero false accepts.
    vshares, commitments = _toy_split(4, 2, 3, seed=9)
    false_accepts = 0
    for vs in vshares:
        true_value = vs.share.value.value
        for wrong in range(11):
            if wrong == true_value:
                continue
            forged = Share(vs.share.index, Q11.element(wrong))
            if vss_verify(forged, commitments, TOY_GROUP):
                false_accepts += 1
    assert false_accepts == 0


def test_verify_rejects_malformed_inputs_quietly():
    vshares, commitments = _toy_split(4, 2, 3)
    wrong_field = Share(1, FieldModulus(13).element(3))
    assert not vss_verify(wrong_field, commitments, TOY_GROUP)
    bad_commitments = CommitmentVector((0, 8))
    assert not vss_verify(vshares[0].share, bad_commitments, TOY_GROUP)


def test_commitments_are_additively_homomorphic():
    rng = random.Random(5)
    k = 3
    poly_a = SharePolynomial.random(Q11.element(4), k, rng)
    poly_b = SharePolynomial.random(Q11.element(9), k, rng)
    sum_poly = SharePolynomial(
        [a + b for a, b in zip(poly_a.coefficients, poly_b.coefficients)]
    )
    ca = commit_coefficients(poly_a, TOY_GROUP)
    cb = commit_coefficients(poly_b, TOY_GROUP)
    cs = commit_coefficients(sum_poly, TOY_GROUP)
    combined = tuple(a * b % TOY_GROUP.P for a, b in zip(ca.values, cb.values))
    assert combined == cs.values


def test_reconstruct_agrees_with_plain_interpolation():
    vshares, commitments = _toy_split(7, 2, 3, seed=2)
    secret, culprits = vss_reconstruct(vshares, 2, commitments, TOY_GROUP)
    assert culprits == []
    assert secret == shamir_reconstruct([vs.share for vs in vshares], 2)
    assert secret == Q11.element(7)


def test_reconstruct_names_culprits_and_still_succeeds():
    vshares, commitments = _toy_split(7, 2, 3, seed=3)
    bad = VerifiableShare(
        Share(2, vshares[1].share.value + 1), commitments
    )
    mixed = [vshares[0], bad, vshares[2]]
    secret, culprits = vss_reconstruct(mixed, 2, commitments, TOY_GROUP)
    assert secret == Q11.element(7)
    assert culprits == [2]


def test_reconstruct_fails_closed_with_culprit_list():
    vshares, commitments = _toy_split(7, 2, 3, seed=4)
    forged = [
        VerifiableShare(Share(vs.share.index, vs.share.value + 1), commitments)
        for vs in vshares[:2]
    ]
    with pytest.raises(InsufficientValidShares) as excinfo:
        vss_reconstruct(forged + [vshares[2]], 2, commitments, TOY_GROUP)
    assert excinfo.value.culprits == [1, 2]
    assert excinfo.value.needed == 2
    assert excinfo.value.got == 1


def test_generated_group_checks_out_against_oracle():
    params = generate_group(random.Random("vss-test"), p_bits=256, q_bits=64)
    assert sympy.isprime(params.P)
    assert sympy.isprime(params.q)
    assert (params.P - 1) % params.q == 0
    assert pow(params.g, params.q, params.P) == 1
    assert params.g != 1
    assert params.P.bit_length() == 256
    assert params.q.bit_length() == 64


def test_generated_group_supports_full_cycle():
    params = generate_group(random.Random("vss-cycle"), p_bits=256, q_bits=64)
    rng = random.Random(6)
    secret = params.share_field.element(123456)
    vshares, commitments = vss_split(secret, ThresholdConfig(2, 3), params, rng)
    assert all(vss_verify(vs.share, commitments, params) for vs in vshares)
    got, culprits = vss_reconstruct(vshares, 2, commitments, params)
    assert got == secret and culprits == []


def test_production_splits_verify(production_group):
    rng = random.Random(11)
    fq = production_group.share_field
    for _ in range(20):
        secret = fq.element(rng.getrandbits(200))
        vshares, commitments = vss_split(
            secret, ThresholdConfig(2, 3), production_group, rng
        )
        assert all(vss_verify(vs.share, commitments, production_group) for vs in vshares)


def test_commitment_file_roundtrip(tmp_path):
    vshares, commitments = _toy_split(5, 2, 3)
    path = tmp_path / "commitments.json"
    save_commitments(path, TOY_GROUP, commitments)
    params, loaded = load_commitments(path)
    assert params == TOY_GROUP
    assert loaded == commitments


def test_commitment_file_rejects_subgroup_outsiders():
    doc = commitments_to_json_dict(TOY_GROUP, CommitmentVector((13, 8)))
    doc["commitments"][1] = "05"  # 5 has order 22 mod 23, not in the subgroup
    with pytest.raises(ValueError):
        commitments_from_json_dict(doc)


def test_commitment_file_rejects_unknown_version():
    doc = commitments_to_json_dict(TOY_GROUP, CommitmentVector((13, 8)))
    doc["version"] = 2
    with pytest.raises(ValueError):
        commitments_from_json_dict(doc)


def test_split_requires_secret_in_exponent_field():
    with pytest.raises(ValueError):
        vss_split(
            FieldModulus(13).element(5), ThresholdConfig(2, 3), TOY_GROUP, random.Random(0)
        )
