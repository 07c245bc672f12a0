import itertools

import networkx as nx
import numpy as np
import pytest

from errors import CycleDetected, DanglingReference, RoleConflict, TopologyError, TreeViolation
from graph import generators
from graph.NfcGraph import (
    GraphMode,
    NfcGraph,
    NodeRole,
    TopologyConfig,
    build_graph,
    min_cut,
    set_topology,
    source_flow,
    validate_graph,
)


def _config(nodes, arcs, mode="tree"):
    children = {}
    for tail, head in arcs:
        children.setdefault(head, []).append(tail)
    return TopologyConfig.from_lists(nodes, children, mode)


def _brute_force_cut(g, dest, sources=None):
    """Smallest arc subset whose removal disconnects every source from dest."""
    sources = g.sources if sources is None else sources
    for size in range(len(g.arcs) + 1):
        for removed in itertools.combinations(g.arcs, size):
            G = nx.DiGraph()
            G.add_nodes_from(range(g.size))
            G.add_edges_from(a for a in g.arcs if a not in removed)
            if not any(nx.has_path(G, s, dest) for s in sources):
                return size
    return len(g.arcs)


def _brute_force_source_flow(g, dest):
    """Unit-supply max-flow as the smallest (sources left out) + (cut of the rest)."""
    return min(
        g.N - k + _brute_force_cut(g, dest, subset)
        for k in range(g.N + 1)
        for subset in itertools.combinations(g.sources, k)
    )


def _every_dag(sources, atomics):
    """Every arc subset over sources, atomics in the given order and one destination d."""
    names = tuple(sources + atomics + ["d"])
    roles = tuple([NodeRole.SOURCE] * len(sources) + [NodeRole.ATOMIC] * len(atomics) + [NodeRole.DESTINATION])
    candidates = [
        (u, v)
        for u, v in itertools.combinations(range(len(names)), 2)
        if roles[u] is not NodeRole.DESTINATION and roles[v] is not NodeRole.SOURCE
    ]
    for mask in range(1 << len(candidates)):
        arcs = tuple(arc for i, arc in enumerate(candidates) if mask >> i & 1)
        yield NfcGraph(names=names, roles=roles, arcs=arcs, mode=GraphMode.DAG)


def test_star_counts(star2):
    assert (star2.N, star2.M, star2.R) == (2, 1, 1)
    assert validate_graph(star2).ok
    a0 = star2.node_id("a0")
    assert [star2.name(k) for k in star2.in_neighborhood[a0]] == ["s0", "s1"]
    assert [star2.name(k) for k in star2.out_neighborhood[a0]] == ["d"]


def test_binary_tree_of_depth_six():
    g = generators.binary_tree(6)
    assert g.size == 127
    assert len(g.arcs) == 126
    assert g.N == 64
    d = g.destinations[0]
    assert all(g.path_length(s, d) == 6 for s in g.sources)


def test_destination_with_outgoing_arc_rejected():
    nodes = [("s0", "source"), ("a0", "atomic"), ("d", "destination")]
    arcs = [("s0", "a0"), ("a0", "d"), ("d", "a0")]
    with pytest.raises((RoleConflict, TreeViolation, CycleDetected)):
        build_graph(_config(nodes, arcs))


def test_destination_out_arc_reported_in_dag_mode():
    nodes = [("s0", "source"), ("a0", "atomic"), ("d", "destination"), ("e", "destination")]
    arcs = [("s0", "a0"), ("a0", "d"), ("d", "e")]
    with pytest.raises(RoleConflict) as info:
        build_graph(_config(nodes, arcs, "dag"))
    assert "RoleConflict" in info.value.report.codes()


def test_two_cycle_reported():
    nodes = [("s0", "source"), ("a", "atomic"), ("b", "atomic"), ("d", "destination")]
    arcs = [("s0", "a"), ("a", "b"), ("b", "a"), ("b", "d")]
    with pytest.raises(CycleDetected) as info:
        build_graph(_config(nodes, arcs, "dag"))
    assert info.value.report.codes()[0] == "CycleDetected"


def test_source_with_incoming_arc_violates_tree_mode():
    nodes = [("s0", "source"), ("s1", "source"), ("d", "destination")]
    arcs = [("s0", "s1"), ("s1", "d")]
    with pytest.raises(TreeViolation) as info:
        build_graph(_config(nodes, arcs))
    assert any("leaf" in issue.message for issue in info.value.report.issues)


def test_source_with_incoming_arc_allowed_in_dag_mode():
    nodes = [("s0", "source"), ("s1", "source"), ("d", "destination")]
    g = build_graph(_config(nodes, [("s0", "s1"), ("s1", "d")], "dag"))
    assert g.mode is GraphMode.DAG
    assert min_cut(g, g.node_id("d")) == 1


def test_node_declared_with_two_roles():
    nodes = [("s0", "source"), ("s0", "destination"), ("d", "destination")]
    with pytest.raises(RoleConflict):
        build_graph(_config(nodes, [("s0", "d")]))


def test_undeclared_child_is_dangling():
    nodes = [("s0", "source"), ("d", "destination")]
    with pytest.raises(DanglingReference):
        build_graph(_config(nodes, [("s0", "d"), ("ghost", "d")]))


def test_two_destinations_allowed_in_dag_mode():
    nodes = [("s0", "source"), ("s1", "source"), ("a0", "atomic"), ("d", "destination"), ("e", "destination")]
    arcs = [("s0", "d"), ("s1", "a0"), ("a0", "e")]
    g = build_graph(_config(nodes, arcs, "dag"))
    assert validate_graph(g).ok
    assert g.R == 2


def test_disconnected_source_flagged_in_dag_mode():
    nodes = [("s0", "source"), ("s1", "source"), ("d", "destination")]
    with pytest.raises(TopologyError) as info:
        build_graph(_config(nodes, [("s0", "d")], "dag"))
    assert info.value.report.codes() == ["SourceDisconnected"]


def test_topological_order_respects_arcs(tree64):
    position = {node: i for i, node in enumerate(tree64.topological_order)}
    assert all(position[u] < position[v] for u, v in tree64.arcs)


def test_tree_arc_count_invariant():
    rng = np.random.default_rng(5)
    for _ in range(20):
        g = generators.random_tree(int(rng.integers(1, 12)), 4, rng)
        assert len(g.arcs) == g.size - 1
        assert sum(1 for v in range(g.size) if g.out_degree(v) == 0) == 1


def test_levels(seven_node_tree):
    g = seven_node_tree
    assert [g.levels[s] for s in g.sources] == [0, 0, 0, 0]
    assert [g.levels[a] for a in g.atomics] == [1, 1]
    assert g.levels[g.destinations[0]] == 2


def test_min_cut_examples(star3):
    assert min_cut(star3, star3.destinations[0]) == 1
    paths = generators.disjoint_paths(2)
    assert min_cut(paths, paths.destinations[0]) == 2
    four = generators.binary_tree(2)
    assert min_cut(four, four.destinations[0]) == 2


def test_min_cut_of_unreachable_destination_is_zero():
    g = NfcGraph(
        names=("s0", "d", "e"),
        roles=(NodeRole.SOURCE, NodeRole.DESTINATION, NodeRole.DESTINATION),
        arcs=((0, 1),),
        mode=GraphMode.DAG,
    )
    assert min_cut(g, g.node_id("d")) == 1
    assert min_cut(g, g.node_id("e")) == 0
    assert source_flow(g, g.node_id("e")) == 0


def test_min_cut_rejects_non_destination(star2):
    with pytest.raises(ValueError):
        min_cut(star2, star2.node_id("a0"))


def test_min_cut_matches_brute_force_on_small_graphs():
    rng = np.random.default_rng(21)
    checked = 0
    while checked < 30:
        g = generators.random_tree(int(rng.integers(1, 6)), 3, rng)
        if len(g.arcs) > 10:
            continue
        d = g.destinations[0]
        assert min_cut(g, d) == _brute_force_cut(g, d)
        checked += 1
    for n in (1, 2, 3):
        g = generators.disjoint_paths(n)
        assert min_cut(g, g.destinations[0]) == _brute_force_cut(g, g.destinations[0])


@pytest.mark.parametrize(
    "sources, atomics",
    [
        (["s0", "s1"], ["a0"]),
        (["s0"], ["a0", "a1"]),
        (["s0", "s1", "s2"], []),
        pytest.param(["s0", "s1"], ["a0", "a1"], marks=pytest.mark.slow),
    ],
    ids=["two-sources-one-relay", "one-source-two-relays", "three-sources-direct", "two-sources-two-relays"],
)
def test_min_cut_matches_brute_force_on_every_small_dag(sources, atomics):
    for g in _every_dag(sources, atomics):
        assert len(g.arcs) <= 10
        d = g.destinations[0]
        assert min_cut(g, d) == _brute_force_cut(g, d), g.arcs
        assert source_flow(g, d) == _brute_force_source_flow(g, d), g.arcs


def test_source_flow_counts_each_source_once():
    nodes = [("s0", "source"), ("a0", "atomic"), ("a1", "atomic"), ("d", "destination")]
    arcs = [("s0", "a0"), ("s0", "a1"), ("a0", "d"), ("a1", "d")]
    g = build_graph(_config(nodes, arcs, "dag"))
    d = g.node_id("d")
    assert min_cut(g, d) == 2
    assert source_flow(g, d) == 1


def test_set_topology_adds_a_layer(star2):
    patch = TopologyConfig.from_lists([("b0", "atomic")], {"b0": ["a0"], "d": ["b0"]}, mode=None)
    g = set_topology(star2, patch)
    assert g.size == star2.size + 1
    assert len(g.arcs) == len(star2.arcs) + 1
    assert star2.size == 4


def test_set_topology_rejects_cycle(star2):
    patch = TopologyConfig.from_lists([], {"a0": ["s0", "s1", "d"]}, mode="dag")
    with pytest.raises(CycleDetected):
        set_topology(star2, patch)


def test_reparenting_touches_two_neighbourhoods():
    g = generators.binary_tree(2)
    before = {g.name(v): {g.name(k) for k in g.in_neighborhood[v]} for v in range(g.size)}
    moved = g.name(g.in_neighborhood[g.node_id("a2")][0])
    kept_a2 = [g.name(k) for k in g.in_neighborhood[g.node_id("a2")] if g.name(k) != moved]
    a3 = [g.name(k) for k in g.in_neighborhood[g.node_id("a3")]]
    h = set_topology(g, TopologyConfig.from_lists([], {"a2": kept_a2, "a3": a3 + [moved]}, mode=None))
    after = {h.name(v): {h.name(k) for k in h.in_neighborhood[v]} for v in range(h.size)}
    changed = [name for name in before if before[name] != after[name]]
    assert sorted(changed) == ["a2", "a3"]


def test_graph_roles_fixed(star2):
    assert star2.role(star2.node_id("s0")) is NodeRole.SOURCE
    assert star2.role(star2.node_id("d")) is NodeRole.DESTINATION
