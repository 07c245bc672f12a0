import json
import math
from fractions import Fraction

import pytest

from graph import generators
from graph.NfcGraph import GraphMode, NfcGraph, NodeRole
from solvability.search import (
    SolvabilityInstance,
    Status,
    brute_force_search,
    capacity_lower_bound,
    capacity_report_dict,
    count_candidates,
    linear_identity_check,
    sweep_pairs,
    target_preset,
    verdict_to_dict,
    verify_witness,
    write_report,
)


def _instance(g, field, target, K=1, L=1, linear=False):
    return SolvabilityInstance(g, field, target_preset(target), K=K, L=L, linear=linear)


def test_single_relay_star_fails_cut_condition(star2):
    check = linear_identity_check(star2, star2.destinations[0])
    assert not check.solvable
    assert check.cut == 1
    assert check.message == "not solvable (cut 1 < N=2)"


def test_disjoint_paths_pass_cut_condition():
    g = generators.disjoint_paths(2)
    check = linear_identity_check(g, g.destinations[0])
    assert check.solvable
    assert check.cut == 2


def test_verdict_uses_source_flow_not_the_plain_cut():
    # s0 and s1 share the relay arc a0 -> d, s2 has three disjoint paths
    g = NfcGraph(
        names=("s0", "s1", "s2", "a0", "a1", "a2", "a3", "d"),
        roles=(NodeRole.SOURCE,) * 3 + (NodeRole.ATOMIC,) * 4 + (NodeRole.DESTINATION,),
        arcs=((0, 3), (1, 3), (3, 7), (2, 4), (2, 5), (2, 6), (4, 7), (5, 7), (6, 7)),
        mode=GraphMode.DAG,
    )
    check = linear_identity_check(g, g.destinations[0])
    assert check.cut == 4
    assert check.flow == 2
    assert not check.solvable
    assert check.message == "not solvable (source flow 2 < N=3, cut 4)"


def test_single_source_chain_is_solvable():
    g = generators.chain(3)
    check = linear_identity_check(g, g.destinations[0])
    assert check.solvable
    assert check.message == "solvable (cut 1 >= N=1)"


def test_xor_over_star_is_solvable(gf2, star2):
    instance = _instance(star2, gf2, "xor")
    verdict = brute_force_search(instance)
    assert verdict.status is Status.SOLVABLE
    assert verdict.ratio == 1
    assert verify_witness(instance, verdict.witness)
    relay = verdict.witness.arc_functions[("a0", "d")]
    assert {inputs: out for inputs, out in relay.items()} == {(a, b): a ^ b for a in (0, 1) for b in (0, 1)}


def test_identity_over_star_needs_two_symbols(gf2, star2):
    assert brute_force_search(_instance(star2, gf2, "identity")).status is Status.NOT_SOLVABLE
    instance = _instance(star2, gf2, "identity", L=2)
    verdict = brute_force_search(instance)
    assert verdict.solvable
    assert verdict.ratio == Fraction(1, 2)
    assert verify_witness(instance, verdict.witness)


def test_max_has_no_linear_form(gf2, star2):
    with pytest.raises(ValueError):
        _instance(star2, gf2, "max", linear=True)


def test_unknown_target():
    with pytest.raises(ValueError):
        target_preset("median")


def test_block_lengths_must_be_positive(gf2, star2):
    with pytest.raises(ValueError):
        _instance(star2, gf2, "xor", K=0)


@pytest.mark.parametrize(
    "graph",
    [
        generators.star(2),
        generators.star(2, relays=0),
        generators.disjoint_paths(2),
        generators.binary_tree(2),
    ],
    ids=["single-relay", "direct", "two-relay", "depth-two-tree"],
)
def test_cut_condition_agrees_with_linear_search(gf2, graph):
    check = linear_identity_check(graph, graph.destinations[0])
    instance = _instance(graph, gf2, "identity", linear=True)
    verdict = brute_force_search(instance)
    assert check.solvable == verdict.solvable
    if verdict.solvable:
        assert verify_witness(instance, verdict.witness)


def test_linear_xor_witness(gf2, star2):
    instance = _instance(star2, gf2, "xor", linear=True)
    verdict = brute_force_search(instance)
    assert verdict.solvable
    assert verdict.witness.linear
    assert verify_witness(instance, verdict.witness)


def test_candidate_counts(gf2, star2):
    assert count_candidates(_instance(star2, gf2, "identity", K=1, L=2)) == 2 ** 16
    assert count_candidates(_instance(star2, gf2, "identity", K=2, L=1)) == 2 ** 12
    assert count_candidates(_instance(star2, gf2, "identity", K=2, L=2)) == 2 ** 48


def test_huge_search_counts_as_infinite(gf256):
    g = generators.star(20)
    assert math.isinf(count_candidates(_instance(g, gf256, "identity", K=4, L=4)))


def test_search_over_cap_is_reported_not_run(gf2, star2):
    verdict = brute_force_search(_instance(star2, gf2, "identity", L=2), cap=100)
    assert verdict.status is Status.UNKNOWN_CAPPED
    assert verdict.candidates == 2 ** 16
    assert verdict.ratio is None


def test_identity_capacity_sweep(gf2, star2):
    report = capacity_lower_bound(star2, gf2, target_preset("identity"), [(1, 1), (1, 2), (2, 1), (2, 2)])
    assert report.best_ratio == Fraction(1, 2)
    assert (report.best.K, report.best.L) == (1, 2)
    assert report.skipped == [(2, 2)]


def test_xor_capacity_at_least_one(gf2, star2):
    report = capacity_lower_bound(star2, gf2, target_preset("xor"), sweep_pairs(1, 1))
    assert report.best_ratio >= 1


def test_empty_sweep(gf2, star2):
    report = capacity_lower_bound(star2, gf2, target_preset("identity"), [])
    assert report.points == []
    assert report.best is None
    assert report.best_ratio is None


def test_sweep_pairs():
    assert sweep_pairs(2, 2) == [(1, 1), (1, 2), (2, 1), (2, 2)]
    assert sweep_pairs(0, 3) == []


def test_report_is_json(tmp_path, gf2, star2):
    instance = _instance(star2, gf2, "xor")
    check = linear_identity_check(star2, star2.destinations[0])
    report = capacity_lower_bound(star2, gf2, instance.target, [(1, 1)])
    path = write_report(str(tmp_path / "out" / "capacity_report.json"), capacity_report_dict(instance, check, report))
    with open(path, encoding="utf-8") as handle:
        body = json.load(handle)
    assert body["best"] == {"K": 1, "L": 1, "ratio": "1", "lower_bound": True}
    assert body["linear_identity_check"]["cut"] == 1
    assert body["sweep"][0]["witness"]["arcs"]["a0->d"]["1,0"] == 1


def test_capped_verdict_serialises_infinite_count(gf256):
    g = generators.star(20)
    verdict = brute_force_search(_instance(g, gf256, "identity", K=4, L=4))
    assert verdict_to_dict(verdict)["candidates"] is None
