from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import networkx as nx

from errors import (
    CycleDetected,
    DanglingReference,
    RoleConflict,
    TopologyError,
    TreeViolation,
)
from utils import get_logger

logger = get_logger(__name__)

SUPER_SOURCE = "__super_source__"


class NodeRole(str, Enum):
    SOURCE = "source"
    ATOMIC = "atomic"
    DESTINATION = "destination"


class GraphMode(str, Enum):
    TREE = "tree"
    DAG = "dag"


@dataclass(frozen=True)
class TopologyConfig:
    """
    Declarative topology: node names with roles and the children of every node.

    A config used as a patch for set_topology may also list nodes to remove and
    leave mode unset to keep the graph's current mode.
    """

    nodes: Tuple[Tuple[str, NodeRole], ...] = ()
    children: Mapping[str, Tuple[str, ...]] = field(default_factory=dict)
    mode: Optional[GraphMode] = GraphMode.TREE
    removed: Tuple[str, ...] = ()

    @classmethod
    def from_lists(
            cls,
            nodes: Sequence[Tuple[str, str]],
            children: Mapping[str, Sequence[str]],
            mode: Optional[str] = "tree",
            removed: Sequence[str] = (),
    ) -> "TopologyConfig":
        return cls(
            nodes=tuple((name, NodeRole(role)) for name, role in nodes),
            children={parent: tuple(kids) for parent, kids in children.items()},
            mode=GraphMode(mode) if mode is not None else None,
            removed=tuple(removed),
        )


@dataclass(frozen=True)
class Issue:
    code: str
    message: str
    node: Optional[str] = None
    arc: Optional[Tuple[str, str]] = None


@dataclass(frozen=True)
class ValidationReport:
    issues: Tuple[Issue, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.issues

    def codes(self) -> List[str]:
        return [issue.code for issue in self.issues]

    def __str__(self) -> str:
        if self.ok:
            return "valid"
        return "; ".join(f"{issue.code}: {issue.message}" for issue in self.issues)


_ERRORS = {
    "CycleDetected": CycleDetected,
    "RoleConflict": RoleConflict,
    "DanglingReference": DanglingReference,
    "TreeViolation": TreeViolation,
}


@dataclass(frozen=True)
class NfcGraph:
    """
    Immutable NFC graph. Node ids are dense indices into `names`/`roles`;
    arcs are (tail, head) id pairs in declaration order.
    """

    names: Tuple[str, ...]
    roles: Tuple[NodeRole, ...]
    arcs: Tuple[Tuple[int, int], ...]
    mode: GraphMode = GraphMode.TREE

    def __post_init__(self):
        if len(self.names) != len(self.roles):
            raise ValueError("names and roles must have the same length")

    # -- identities -------------------------------------------------------

    @cached_property
    def index(self) -> Dict[str, int]:
        return {name: i for i, name in enumerate(self.names)}

    def node_id(self, name: str) -> int:
        try:
            return self.index[name]
        except KeyError:
            raise DanglingReference(f"Unknown node '{name}'") from None

    def name(self, node: int) -> str:
        return self.names[node]

    def role(self, node: int) -> NodeRole:
        return self.roles[node]

    @property
    def size(self) -> int:
        return len(self.names)

    def _with_role(self, role: NodeRole) -> Tuple[int, ...]:
        return tuple(i for i, r in enumerate(self.roles) if r is role)

    @cached_property
    def sources(self) -> Tuple[int, ...]:
        return self._with_role(NodeRole.SOURCE)

    @cached_property
    def atomics(self) -> Tuple[int, ...]:
        return self._with_role(NodeRole.ATOMIC)

    @cached_property
    def destinations(self) -> Tuple[int, ...]:
        return self._with_role(NodeRole.DESTINATION)

    @property
    def N(self) -> int:
        return len(self.sources)

    @property
    def M(self) -> int:
        return len(self.atomics)

    @property
    def R(self) -> int:
        return len(self.destinations)

    @cached_property
    def source_position(self) -> Dict[int, int]:
        """Position of each source in the source ordering (index into coding vectors)."""
        return {node: i for i, node in enumerate(self.sources)}

    # -- neighbourhoods ---------------------------------------------------

    @cached_property
    def in_neighborhood(self) -> Tuple[Tuple[int, ...], ...]:
        incoming: List[List[int]] = [[] for _ in self.names]
        for tail, head in self.arcs:
            incoming[head].append(tail)
        return tuple(tuple(kids) for kids in incoming)

    @cached_property
    def out_neighborhood(self) -> Tuple[Tuple[int, ...], ...]:
        outgoing: List[List[int]] = [[] for _ in self.names]
        for tail, head in self.arcs:
            outgoing[tail].append(head)
        return tuple(tuple(parents) for parents in outgoing)

    def in_degree(self, node: int) -> int:
        return len(self.in_neighborhood[node])

    def out_degree(self, node: int) -> int:
        return len(self.out_neighborhood[node])

    # -- graph algorithms -------------------------------------------------

    @cached_property
    def digraph(self) -> nx.DiGraph:
        G = nx.DiGraph()
        G.add_nodes_from(range(self.size))
        G.add_edges_from(self.arcs)
        return nx.freeze(G)

    @cached_property
    def topological_order(self) -> Tuple[int, ...]:
        """Deterministic topological order: lexicographically smallest by node id."""
        try:
            return tuple(nx.lexicographical_topological_sort(self.digraph))
        except nx.NetworkXUnfeasible:
            raise CycleDetected(f"Graph contains a cycle: {self._describe_cycle()}") from None

    def _describe_cycle(self) -> str:
        try:
            cycle = nx.find_cycle(self.digraph)
        except nx.NetworkXNoCycle:
            return ""
        return ", ".join(f"{self.names[u]} -> {self.names[v]}" for u, v in cycle)

    @cached_property
    def levels(self) -> Tuple[int, ...]:
        """Sources sit at level 0; every other node one above its highest child."""
        level = [0] * self.size
        for node in self.topological_order:
            kids = self.in_neighborhood[node]
            if kids and self.roles[node] is not NodeRole.SOURCE:
                level[node] = 1 + max(level[k] for k in kids)
        return tuple(level)

    def path_length(self, node: int, dest: int) -> int:
        return nx.shortest_path_length(self.digraph, node, dest)

    def to_config(self) -> TopologyConfig:
        return TopologyConfig(
            nodes=tuple(zip(self.names, self.roles)),
            children={
                self.names[v]: tuple(self.names[k] for k in kids)
                for v, kids in enumerate(self.in_neighborhood) if kids
            },
            mode=self.mode,
        )

    def describe(self) -> str:
        return f"{self.mode.value} graph: N={self.N} M={self.M} R={self.R}, {len(self.arcs)} arcs"


def _arcs_from_config(config: TopologyConfig, index: Mapping[str, int]) -> List[Issue]:
    issues = []
    for parent, kids in config.children.items():
        if parent not in index:
            issues.append(Issue("DanglingReference", f"Child set declared for undeclared node '{parent}'", node=parent))
        for kid in kids:
            if kid not in index:
                issues.append(Issue("DanglingReference", f"Node '{parent}' lists undeclared child '{kid}'", node=parent, arc=(kid, parent)))
    return issues


def _raw_graph(config: TopologyConfig) -> Tuple[Optional[NfcGraph], List[Issue]]:
    issues: List[Issue] = []
    names: List[str] = []
    roles: List[NodeRole] = []
    seen: Dict[str, NodeRole] = {}

    for name, role in config.nodes:
        if name in seen:
            if seen[name] is not role:
                issues.append(Issue("RoleConflict", f"Node '{name}' declared as both {seen[name].value} and {role.value}", node=name))
            else:
                issues.append(Issue("RoleConflict", f"Node '{name}' declared twice", node=name))
            continue
        seen[name] = role
        names.append(name)
        roles.append(role)

    index = {name: i for i, name in enumerate(names)}
    issues.extend(_arcs_from_config(config, index))
    if issues:
        return None, issues

    arcs: List[Tuple[int, int]] = []
    seen_arcs = set()
    # declaration order of parents, then children order
    for parent in names:
        for kid in config.children.get(parent, ()):
            arc = (index[kid], index[parent])
            if arc in seen_arcs:
                issues.append(Issue("DanglingReference", f"Arc {kid} -> {parent} declared twice", arc=(kid, parent)))
                continue
            seen_arcs.add(arc)
            arcs.append(arc)

    graph = NfcGraph(
        names=tuple(names),
        roles=tuple(roles),
        arcs=tuple(arcs),
        mode=config.mode or GraphMode.TREE,
    )
    return graph, issues


def validate_graph(g: NfcGraph) -> ValidationReport:
    """
    List every violated invariant of g; an empty report means the graph is valid.
    """
    issues: List[Issue] = []
    names = g.names

    if not nx.is_directed_acyclic_graph(g.digraph):
        cycle = nx.find_cycle(g.digraph)
        u, v = cycle[0]
        issues.append(Issue(
            "CycleDetected",
            f"Cycle through {', '.join(f'{names[a]} -> {names[b]}' for a, b in cycle)}",
            arc=(names[u], names[v]),
        ))

    if not g.sources:
        issues.append(Issue("RoleConflict", "Graph has no source node"))
    if not g.destinations:
        issues.append(Issue("RoleConflict", "Graph has no destination node"))

    for d in g.destinations:
        for head in g.out_neighborhood[d]:
            issues.append(Issue(
                "RoleConflict",
                f"Destination '{names[d]}' has outgoing arc to '{names[head]}'",
                node=names[d], arc=(names[d], names[head]),
            ))

    for node in list(g.atomics) + list(g.destinations):
        if g.in_degree(node) == 0:
            issues.append(Issue("TreeViolation" if g.mode is GraphMode.TREE else "NoInputs",
                                f"{g.roles[node].value.capitalize()} node '{names[node]}' has no incoming arcs",
                                node=names[node]))

    if g.mode is GraphMode.TREE:
        if len(g.destinations) != 1:
            issues.append(Issue("TreeViolation", f"Tree must have exactly one destination, found {len(g.destinations)}"))
        for node in range(g.size):
            if g.roles[node] is NodeRole.DESTINATION:
                continue
            if g.out_degree(node) != 1:
                issues.append(Issue(
                    "TreeViolation",
                    f"Node '{names[node]}' has out-degree {g.out_degree(node)}, tree nodes need exactly 1",
                    node=names[node],
                ))
        for s in g.sources:
            for kid in g.in_neighborhood[s]:
                issues.append(Issue(
                    "TreeViolation",
                    f"Source '{names[s]}' must be a leaf but has incoming arc from '{names[kid]}'",
                    node=names[s], arc=(names[kid], names[s]),
                ))
        if g.size and len(g.arcs) != g.size - 1:
            issues.append(Issue("TreeViolation", f"Tree with {g.size} nodes must have {g.size - 1} arcs, found {len(g.arcs)}"))
    elif g.destinations and not any(i.code == "CycleDetected" for i in issues):
        for s in g.sources:
            if not any(nx.has_path(g.digraph, s, d) for d in g.destinations):
                issues.append(Issue("SourceDisconnected", f"Source '{names[s]}' reaches no destination", node=names[s]))

    return ValidationReport(tuple(issues))


def _raise_for(report: ValidationReport) -> None:
    first = report.issues[0]
    error = _ERRORS.get(first.code, TopologyError)
    raise error(f"{first.message} ({len(report.issues)} issue(s): {report})", report=report)


def build_graph(config: TopologyConfig) -> NfcGraph:
    """
    Build and validate an NfcGraph from a declarative topology.

    Args:
        config (TopologyConfig): Nodes with roles and their child sets.

    Returns:
        NfcGraph: The validated graph with neighbourhoods derived.

    Raises:
        CycleDetected, RoleConflict, DanglingReference, TreeViolation: The first
            violated invariant; the exception carries the full report.
    """
    graph, issues = _raw_graph(config)
    if issues:
        _raise_for(ValidationReport(tuple(issues)))

    report = validate_graph(graph)
    if not report.ok:
        logger.debug(f"Rejected topology: {report}")
        _raise_for(report)

    logger.debug(f"Built {graph.describe()}")
    return graph


def set_topology(g: NfcGraph, patch: TopologyConfig) -> NfcGraph:
    """
    Return a new graph with the patch applied; g itself is left untouched.

    Nodes listed in the patch are added (or have their role replaced), child sets
    listed in the patch replace the node's current child set, and removed nodes
    disappear together with every arc touching them. Surviving nodes keep their
    relative order, so their ids stay dense and stable.
    """
    current = g.to_config()
    removed = set(patch.removed)

    roles = {name: role for name, role in current.nodes if name not in removed}
    order = [name for name, _ in current.nodes if name not in removed]
    for name, role in patch.nodes:
        if name not in roles:
            order.append(name)
        roles[name] = role

    children = {
        parent: tuple(kid for kid in kids if kid not in removed)
        for parent, kids in current.children.items() if parent not in removed
    }
    children.update({parent: tuple(kids) for parent, kids in patch.children.items()})

    merged = TopologyConfig(
        nodes=tuple((name, roles[name]) for name in order),
        children=children,
        mode=patch.mode or g.mode,
    )
    return build_graph(merged)


def _flow_network(g: NfcGraph, dest: int, source_capacity: Optional[int]) -> nx.DiGraph:
    if not 0 <= dest < g.size or g.roles[dest] is not NodeRole.DESTINATION:
        raise ValueError(f"Node {dest} is not a destination")

    G = nx.DiGraph()
    G.add_nodes_from(range(g.size))
    for tail, head in g.arcs:
        G.add_edge(tail, head, capacity=1)
    for s in g.sources:
        if source_capacity is None:
            G.add_edge(SUPER_SOURCE, s)  # no capacity attribute: unbounded
        else:
            G.add_edge(SUPER_SOURCE, s, capacity=source_capacity)
    return G


def _reachable(g: NfcGraph, dest: int) -> bool:
    return any(nx.has_path(g.digraph, s, dest) for s in g.sources)


def min_cut(g: NfcGraph, dest: int) -> int:
    """
    Minimum number of unit arcs whose removal disconnects every source from dest.

    Computed as the max-flow from a super-source tied to each source with an
    unbounded arc. Returns 0 when no source reaches dest.
    """
    if not _reachable(g, dest):
        logger.warning(f"No source reaches destination '{g.names[dest]}'")
        return 0
    G = _flow_network(g, dest, source_capacity=None)
    return int(nx.maximum_flow_value(G, SUPER_SOURCE, dest))


def source_flow(g: NfcGraph, dest: int) -> int:
    """Max-flow to dest when every source injects at most one symbol per generation."""
    if not _reachable(g, dest):
        return 0
    G = _flow_network(g, dest, source_capacity=1)
    return int(nx.maximum_flow_value(G, SUPER_SOURCE, dest))
