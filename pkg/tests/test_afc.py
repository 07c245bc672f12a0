import numpy as np
import pytest

from afc.FunctionProcessor import (
    FunctionAssignment,
    decompose_average,
    install_functions,
    uniform_assignment,
)
from afc.functions import (
    AtomicFunctionSpec,
    FunctionKind,
    Packet,
    eval_aafc,
    eval_dafc,
    histogram_counts,
)
from errors import ArityMismatch, DanglingReference, DomainError, DomainMismatch, MissingAssignment
from graph import generators


def _real(*values):
    return Packet.real(values)


def test_xor_over_gf2(gf2):
    spec = AtomicFunctionSpec.linear_combination([1, 1])
    out = eval_dafc(spec, [Packet.field(gf2.array([1, 0, 1])), Packet.field(gf2.array([0, 0, 1]))])
    assert out.symbols.tolist() == [1, 0, 0]
    assert out.count == 2


def test_linear_combination_over_gf256(gf256):
    spec = AtomicFunctionSpec.linear_combination([0x57, 1])
    a, b = gf256.array([0x83]), gf256.array([0x01])
    out = eval_dafc(spec, [Packet.field(a), Packet.field(b)])
    assert out.symbols.tolist() == [0xC1 ^ 0x01]


def test_max_and_min():
    inputs = [_real(3, 7), _real(5, 2)]
    assert eval_dafc(AtomicFunctionSpec.simple("max", 2), inputs).symbols.tolist() == [5, 7]
    assert eval_dafc(AtomicFunctionSpec.simple("min", 2), inputs).symbols.tolist() == [3, 2]


def test_average_of_constants():
    inputs = [_real(v, v, v) for v in (1, 2, 3, 4)]
    out = eval_dafc(AtomicFunctionSpec.simple("average", 4), inputs)
    assert out.symbols.tolist() == [2.5, 2.5, 2.5]


def test_average_weights_partial_sums_by_count():
    partial = Packet.real([6.0], count=3)
    single = Packet.real([10.0], count=1)
    out = eval_dafc(AtomicFunctionSpec.simple("average", 2), [partial, single])
    assert out.symbols.tolist() == [4.0]
    assert out.count == 4


def test_histogram_clamps_out_of_range():
    counts, clamped = histogram_counts(np.array([[0, 1, 9], [1, -2, 3]]), 4)
    assert counts.tolist() == [2, 2, 0, 2]
    assert clamped == 2


def test_arity_mismatch():
    with pytest.raises(ArityMismatch):
        eval_dafc(AtomicFunctionSpec.simple("sum", 3), [_real(1), _real(2)])


def test_mixed_lengths_rejected():
    with pytest.raises(DomainMismatch):
        eval_dafc(AtomicFunctionSpec.simple("sum", 2), [_real(1), _real(1, 2)])


def test_mixed_fields_rejected(gf2, gf16):
    spec = AtomicFunctionSpec.linear_combination([1, 1])
    with pytest.raises(DomainMismatch):
        eval_dafc(spec, [Packet.field(gf2.array([1])), Packet.field(gf16.array([1]))])


def test_nomographic_needs_channel_evaluation():
    spec = AtomicFunctionSpec.nomographic_preset("mean", [1.0, 1.0])
    with pytest.raises(DomainMismatch):
        eval_dafc(spec, [_real(1), _real(2)])


@pytest.mark.parametrize(
    "preset, channel, values, expected",
    [
        ("mean", [0.5, 1.0, 2.0, 4.0], (1, 2, 3, 4), 2.5),
        ("euclidean_norm", [0.7, 1.3], (3, 4), 5.0),
        ("geometric_mean", [1.0, 2.0], (1, 4), 2.0),
        ("sum", [1.0, 3.0], (2, 5), 7.0),
    ],
)
def test_noiseless_presets_are_exact(preset, channel, values, expected):
    spec = AtomicFunctionSpec.nomographic_preset(preset, channel)
    inputs = [_real(v, v) for v in values]
    out = eval_aafc(spec, inputs, 0.0, np.random.default_rng(0))
    assert out.symbols == pytest.approx([expected, expected], rel=1e-12)


@pytest.mark.parametrize("sigma", [0.1, 0.3])
def test_noise_standard_deviation(sigma):
    spec = AtomicFunctionSpec.nomographic_preset("sum", [1.0, 1.0])
    inputs = [Packet.real(np.zeros(10_000)), Packet.real(np.zeros(10_000))]
    out = eval_aafc(spec, inputs, sigma, np.random.default_rng(17))
    assert np.std(out.symbols) == pytest.approx(sigma, rel=0.1)


def test_geometric_mean_of_zero_is_undefined():
    spec = AtomicFunctionSpec.nomographic_preset("geometric_mean", [1.0, 1.0])
    with pytest.raises(DomainError):
        eval_aafc(spec, [_real(0), _real(4)], 0.0, np.random.default_rng(0))


def test_negative_noise_rejected():
    spec = AtomicFunctionSpec.nomographic_preset("mean", [1.0])
    with pytest.raises(ValueError):
        eval_aafc(spec, [_real(1)], -1.0, np.random.default_rng(0))


def test_zero_channel_coefficient_rejected():
    with pytest.raises(ValueError):
        AtomicFunctionSpec.nomographic_preset("mean", [1.0, 0.0])


def test_restrict_keeps_matching_coefficients():
    spec = AtomicFunctionSpec.linear_combination([3, 5, 7])
    assert spec.restrict([0, 2]).coefficients == (3, 7)
    assert spec.restrict([0, 1, 2]) is spec
    with pytest.raises(ArityMismatch):
        spec.restrict([])


def test_star_sum(star3):
    network = install_functions(star3, uniform_assignment(star3, "sum"))
    out = network.evaluate({"s0": _real(1, 10), "s1": _real(2, 20), "s2": _real(3, 30)})
    assert out.outputs[star3.node_id("d")].symbols.tolist() == [6, 60]


def test_missing_atomic_assignment_named(star2):
    with pytest.raises(MissingAssignment) as info:
        install_functions(star2, FunctionAssignment())
    assert info.value.node == "a0"


def test_unknown_node_in_assignment(star2):
    assignment = uniform_assignment(star2, "sum").merged(
        FunctionAssignment(node_functions={"ghost": AtomicFunctionSpec.simple("sum", 1)})
    )
    with pytest.raises(DanglingReference):
        install_functions(star2, assignment)


def test_wrong_arity_assignment(star3):
    assignment = FunctionAssignment(node_functions={"a0": AtomicFunctionSpec.simple("sum", 2)})
    with pytest.raises(ArityMismatch):
        install_functions(star3, assignment)


def test_arc_override_replaces_node_function(star2):
    assignment = uniform_assignment(star2, "sum").merged(
        FunctionAssignment(arc_functions={("a0", "d"): AtomicFunctionSpec.simple("max", 2)})
    )
    network = install_functions(star2, assignment)
    out = network.evaluate({"s0": _real(1), "s1": _real(4)})
    assert out.outputs[star2.node_id("d")].symbols.tolist() == [4]


def test_two_level_sum_is_grand_total(seven_node_tree):
    g = seven_node_tree
    network = install_functions(g, uniform_assignment(g, "sum"))
    rng = np.random.default_rng(2)
    packets = {s: Packet.real(rng.normal(size=5)) for s in g.sources}
    out = network.evaluate(packets)
    expected = np.sum([p.symbols for p in packets.values()], axis=0)
    assert out.outputs[g.destinations[0]].symbols == pytest.approx(expected, rel=1e-12)


def test_average_on_star(star3):
    network = install_functions(star3, decompose_average(star3))
    out = network.evaluate({"s0": _real(1), "s1": _real(2), "s2": _real(3)})
    assert out.outputs[star3.node_id("d")].symbols.tolist() == [2.0]


def test_average_of_ones_on_binary_tree():
    g = generators.binary_tree(3)
    network = install_functions(g, decompose_average(g))
    out = network.evaluate({s: _real(1.0) for s in g.sources})
    assert out.outputs[g.destinations[0]].symbols.tolist() == [1.0]


def test_average_on_random_tree_matches_direct_mean():
    rng = np.random.default_rng(31)
    for _ in range(5):
        g = generators.random_tree(10, 4, rng)
        network = install_functions(g, decompose_average(g))
        values = {s: Packet.real(rng.uniform(-100, 100, size=3)) for s in g.sources}
        out = network.evaluate(values)
        direct = np.mean([p.symbols for p in values.values()], axis=0)
        assert out.outputs[g.destinations[0]].symbols == pytest.approx(direct, rel=1e-12)


def test_output_independent_of_topological_order(seven_node_tree):
    g = seven_node_tree
    network = install_functions(g, uniform_assignment(g, "max"))
    packets = {s: _real(float(s), float(-s)) for s in g.sources}
    default = network.evaluate(packets)
    reverse_sources = list(reversed(g.sources)) + list(reversed(g.atomics)) + list(g.destinations)
    other = network.evaluate(packets, order=reverse_sources)
    d = g.destinations[0]
    assert default.outputs[d] == other.outputs[d]


def test_non_topological_order_rejected(star2):
    network = install_functions(star2, uniform_assignment(star2, "sum"))
    with pytest.raises(ValueError):
        network.evaluate({"s0": _real(1), "s1": _real(2)}, order=[3, 2, 1, 0])


def test_noisy_network_is_reproducible(star3):
    assignment = uniform_assignment(star3, "nomographic", "identity", preset="mean", channel=[0.9, 1.0, 1.1])
    network = install_functions(star3, assignment, noise_sigma=0.2)
    packets = {"s0": _real(1, 2), "s1": _real(3, 4), "s2": _real(5, 6)}
    first = network.evaluate(packets, seed=9, generation=4)
    second = network.evaluate(packets, seed=9, generation=4)
    third = network.evaluate(packets, seed=9, generation=5)
    d = star3.node_id("d")
    assert first.outputs[d] == second.outputs[d]
    assert first.outputs[d] != third.outputs[d]


def test_dropped_child_restricts_function(star3):
    network = install_functions(star3, uniform_assignment(star3, "sum"))
    a0 = star3.node_id("a0")
    produced = network.evaluate_node(a0, {star3.node_id("s0"): _real(2), star3.node_id("s2"): _real(5)})
    packet = produced[star3.node_id("d")]
    assert packet.symbols.tolist() == [7]
    assert packet.count == 2


def test_function_kind_values():
    assert FunctionKind("histogram") is FunctionKind.HISTOGRAM
