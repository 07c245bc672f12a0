from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

from afc.functions import AtomicFunctionSpec, FunctionKind, Packet, evaluate
from errors import ArityMismatch, DanglingReference, MissingAssignment, NotATree
from graph.NfcGraph import GraphMode, NfcGraph, NodeRole
from utils import get_logger, substream

logger = get_logger(__name__)

Arc = Tuple[int, int]


@dataclass(frozen=True)
class FunctionAssignment:
    """
    Atomic functions by node name, with optional per-arc overrides keyed (tail, head).

    A node's function produces the packet on each of its outgoing arcs unless that
    arc has its own entry; destinations use their node function to form the output.
    """

    node_functions: Mapping[str, AtomicFunctionSpec] = field(default_factory=dict)
    arc_functions: Mapping[Tuple[str, str], AtomicFunctionSpec] = field(default_factory=dict)

    def merged(self, other: "FunctionAssignment") -> "FunctionAssignment":
        return FunctionAssignment(
            node_functions={**self.node_functions, **other.node_functions},
            arc_functions={**self.arc_functions, **other.arc_functions},
        )


@dataclass(frozen=True)
class NetworkOutput:
    arc_packets: Dict[Arc, Packet]
    outputs: Dict[int, Packet]

    @property
    def clamped(self) -> int:
        return sum(p.clamped for p in self.outputs.values())


@dataclass(frozen=True)
class ConfiguredNetwork:
    """An NfcGraph with a resolved atomic function on every arc leaving a non-source node."""

    graph: NfcGraph
    arc_specs: Mapping[Arc, AtomicFunctionSpec]
    destination_specs: Mapping[int, AtomicFunctionSpec]
    noise_sigma: float = 0.0

    def _check_order(self, order: Sequence[int]) -> None:
        position = {node: i for i, node in enumerate(order)}
        if len(position) != self.graph.size:
            raise ValueError(f"Order lists {len(position)} of {self.graph.size} nodes")
        for tail, head in self.graph.arcs:
            if position[tail] >= position[head]:
                raise ValueError(
                    f"Order is not topological: {self.graph.name(tail)} comes after {self.graph.name(head)}"
                )

    def _run(self, spec: AtomicFunctionSpec, inputs, seed: int, key: Tuple[int, ...]) -> Packet:
        rng = substream(seed, *key, purpose="aafc-noise") if spec.is_analog else None
        return evaluate(spec, inputs, self.noise_sigma, rng)

    def evaluate_node(
            self,
            node: int,
            inputs: Mapping[int, Packet],
            seed: int = 0,
            generation: int = 0,
    ) -> Dict[int, Packet]:
        """
        Evaluate one non-source node on the packets its children delivered.

        Children missing from `inputs` (dropped for this generation) are left out
        and the function is restricted to the inputs that did arrive.

        Returns:
            Dict[int, Packet]: Packet per outgoing arc keyed by head; a destination
                keys its output by its own id.
        """
        g = self.graph
        kids = g.in_neighborhood[node]
        present = [i for i, kid in enumerate(kids) if kid in inputs]
        packets = [inputs[kids[i]] for i in present]

        if g.role(node) is NodeRole.DESTINATION:
            spec = self.destination_specs[node].restrict(present)
            return {node: self._run(spec, packets, seed, (node, node, generation))}
        return {
            head: self._run(self.arc_specs[(node, head)].restrict(present), packets, seed, (node, head, generation))
            for head in g.out_neighborhood[node]
        }

    def evaluate(
            self,
            source_packets: Mapping[Union[int, str], Packet],
            seed: int = 0,
            generation: int = 0,
            order: Optional[Sequence[int]] = None,
    ) -> NetworkOutput:
        """
        Push one generation of source packets through the network.

        Args:
            source_packets: Packet per source, keyed by node id or name.
            seed (int): Scenario seed; analog noise is drawn from per-arc streams.
            generation (int): Generation index, part of every stream key.
            order (Optional[Sequence[int]]): Any topological order; defaults to the graph's.

        Returns:
            NetworkOutput: Packet on every arc and the output of every destination.
        """
        g = self.graph
        packets = {(g.node_id(k) if isinstance(k, str) else int(k)): p for k, p in source_packets.items()}
        missing = [g.name(s) for s in g.sources if s not in packets]
        if missing:
            raise ValueError(f"No packet given for sources {missing}")

        if order is None:
            order = g.topological_order
        else:
            self._check_order(order)

        arc_packets: Dict[Arc, Packet] = {}
        outputs: Dict[int, Packet] = {}
        for node in order:
            role = g.role(node)
            if role is NodeRole.SOURCE:
                for head in g.out_neighborhood[node]:
                    arc_packets[(node, head)] = packets[node]
                continue

            inputs = {kid: arc_packets[(kid, node)] for kid in g.in_neighborhood[node]}
            produced = self.evaluate_node(node, inputs, seed, generation)
            if role is NodeRole.DESTINATION:
                outputs[node] = produced[node]
                continue
            for head, packet in produced.items():
                arc_packets[(node, head)] = packet

        return NetworkOutput(arc_packets=arc_packets, outputs=outputs)


def _check_arity(g: NfcGraph, node: int, spec: AtomicFunctionSpec) -> None:
    if spec.arity != g.in_degree(node):
        raise ArityMismatch(
            f"Node '{g.name(node)}' has {g.in_degree(node)} inputs but its {spec.kind.value} function takes {spec.arity}"
        )


def install_functions(g: NfcGraph, assignment: FunctionAssignment, noise_sigma: float = 0.0) -> ConfiguredNetwork:
    """
    Resolve an assignment against a graph into an executable network.

    Args:
        g (NfcGraph): A validated graph.
        assignment (FunctionAssignment): Functions by node name and optional arc overrides.
        noise_sigma (float): Receiver noise for any nomographic nodes.

    Returns:
        ConfiguredNetwork: The executable network.

    Raises:
        MissingAssignment: An atomic node (or one of its arcs) has no function, or a
            destination with several inputs has none.
        ArityMismatch: A function's arity differs from the node's in-degree.
        DanglingReference: The assignment names an unknown node or arc.
    """
    for name in assignment.node_functions:
        g.node_id(name)
    arcs = set(g.arcs)
    for tail, head in assignment.arc_functions:
        if (g.node_id(tail), g.node_id(head)) not in arcs:
            raise DanglingReference(f"Assignment names arc {tail} -> {head} which is not in the graph")

    arc_specs: Dict[Arc, AtomicFunctionSpec] = {}
    destination_specs: Dict[int, AtomicFunctionSpec] = {}

    for node in g.topological_order:
        role = g.role(node)
        name = g.name(node)
        node_spec = assignment.node_functions.get(name)

        if role is NodeRole.SOURCE:
            if node_spec is not None:
                logger.warning(f"Ignoring function assigned to source '{name}'")
            continue

        if role is NodeRole.DESTINATION:
            if node_spec is None:
                if g.in_degree(node) != 1:
                    raise MissingAssignment(name)
                node_spec = AtomicFunctionSpec(FunctionKind.IDENTITY, 1)
            _check_arity(g, node, node_spec)
            destination_specs[node] = node_spec
            continue

        for head in g.out_neighborhood[node]:
            spec = assignment.arc_functions.get((name, g.name(head)), node_spec)
            if spec is None:
                raise MissingAssignment(name)
            _check_arity(g, node, spec)
            arc_specs[(node, head)] = spec

    logger.debug(f"Installed functions on {len(arc_specs)} arcs and {len(destination_specs)} destinations")
    return ConfiguredNetwork(graph=g, arc_specs=arc_specs, destination_specs=destination_specs, noise_sigma=noise_sigma)


def decompose_average(g: NfcGraph) -> FunctionAssignment:
    """
    Average as a composition: atomic nodes forward (partial sum, count) and the
    destination divides the total sum by the total count.
    """
    if g.mode is not GraphMode.TREE:
        raise NotATree(f"Average decomposition needs a rooted tree, got a {g.mode.value} graph")

    functions = {g.name(a): AtomicFunctionSpec(FunctionKind.SUM, g.in_degree(a)) for a in g.atomics}
    for d in g.destinations:
        functions[g.name(d)] = AtomicFunctionSpec(FunctionKind.AVERAGE, g.in_degree(d))
    return FunctionAssignment(node_functions=functions)


def uniform_assignment(g: NfcGraph, kind: str, destination_kind: Optional[str] = None, **params) -> FunctionAssignment:
    """The same function kind at every atomic node (and destination), arity taken from the graph."""
    def spec(node: int, k: str) -> AtomicFunctionSpec:
        arity = g.in_degree(node)
        if k == FunctionKind.HISTOGRAM.value:
            return AtomicFunctionSpec.histogram(arity, params["bins"])
        if k == FunctionKind.LINEAR_COMBINATION.value:
            return AtomicFunctionSpec.linear_combination(params.get("coefficients") or [1] * arity)
        if k == FunctionKind.NOMOGRAPHIC.value:
            channel = params.get("channel") or [1.0] * arity
            return AtomicFunctionSpec.nomographic_preset(params["preset"], channel)
        return AtomicFunctionSpec.simple(k, arity)

    functions = {g.name(a): spec(a, kind) for a in g.atomics}
    for d in g.destinations:
        functions[g.name(d)] = spec(d, destination_kind or kind)
    return FunctionAssignment(node_functions=functions)
