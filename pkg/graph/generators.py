from typing import Dict, List

import numpy as np

from graph.NfcGraph import GraphMode, NfcGraph, NodeRole, TopologyConfig, build_graph


def star_config(n_sources: int, relays: int = 1) -> TopologyConfig:
    """N sources into one atomic node (relays=1) or straight into the destination (relays=0)."""
    if n_sources < 1:
        raise ValueError("A star needs at least one source")
    if relays not in (0, 1):
        raise ValueError("A star has zero or one relay")

    sources = [f"s{i}" for i in range(n_sources)]
    nodes = [(s, NodeRole.SOURCE) for s in sources]
    if relays:
        nodes += [("a0", NodeRole.ATOMIC), ("d", NodeRole.DESTINATION)]
        children = {"a0": tuple(sources), "d": ("a0",)}
    else:
        nodes += [("d", NodeRole.DESTINATION)]
        children = {"d": tuple(sources)}
    return TopologyConfig(nodes=tuple(nodes), children=children, mode=GraphMode.TREE)


def star(n_sources: int, relays: int = 1) -> NfcGraph:
    return build_graph(star_config(n_sources, relays))


def chain_config(n_atomic: int) -> TopologyConfig:
    """One source, n_atomic relays in a line, one destination."""
    names = ["s0"] + [f"a{i}" for i in range(n_atomic)] + ["d"]
    roles = [NodeRole.SOURCE] + [NodeRole.ATOMIC] * n_atomic + [NodeRole.DESTINATION]
    children = {names[i + 1]: (names[i],) for i in range(len(names) - 1)}
    return TopologyConfig(nodes=tuple(zip(names, roles)), children=children, mode=GraphMode.TREE)


def chain(n_atomic: int) -> NfcGraph:
    return build_graph(chain_config(n_atomic))


def binary_tree_config(depth: int) -> TopologyConfig:
    """
    Balanced binary tree with 2^depth source leaves and the destination at the root.

    Nodes use heap numbering: node k has children 2k and 2k+1, so a tree of depth 6
    has 127 nodes and 126 arcs.
    """
    if depth < 1:
        raise ValueError("A binary tree needs depth >= 1")

    n_nodes = 2 ** (depth + 1) - 1
    first_leaf = 2 ** depth

    def name(k: int) -> str:
        if k == 1:
            return "d"
        return f"s{k - first_leaf}" if k >= first_leaf else f"a{k}"

    nodes = []
    children: Dict[str, tuple] = {}
    for k in range(1, n_nodes + 1):
        if k == 1:
            role = NodeRole.DESTINATION
        elif k >= first_leaf:
            role = NodeRole.SOURCE
        else:
            role = NodeRole.ATOMIC
        nodes.append((name(k), role))
        if k < first_leaf:
            children[name(k)] = (name(2 * k), name(2 * k + 1))
    return TopologyConfig(nodes=tuple(nodes), children=children, mode=GraphMode.TREE)


def binary_tree(depth: int) -> NfcGraph:
    return build_graph(binary_tree_config(depth))


def disjoint_paths_config(n_sources: int) -> TopologyConfig:
    """Every source reaches the destination through its own relay."""
    nodes = [(f"s{i}", NodeRole.SOURCE) for i in range(n_sources)]
    nodes += [(f"a{i}", NodeRole.ATOMIC) for i in range(n_sources)]
    nodes += [("d", NodeRole.DESTINATION)]
    children = {f"a{i}": (f"s{i}",) for i in range(n_sources)}
    children["d"] = tuple(f"a{i}" for i in range(n_sources))
    return TopologyConfig(nodes=tuple(nodes), children=children, mode=GraphMode.TREE)


def disjoint_paths(n_sources: int) -> NfcGraph:
    return build_graph(disjoint_paths_config(n_sources))


def random_tree_config(n_sources: int, max_depth: int, rng: np.random.Generator) -> TopologyConfig:
    """
    Random rooted tree: sources hang at depth <= max_depth; atomic nodes left without
    children are pruned so every atomic node has at least one input.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")

    # parent index and depth per internal node; index 0 is the destination
    parents: List[int] = [-1]
    depths: List[int] = [0]
    if max_depth > 1:
        for _ in range(int(rng.integers(0, max(1, n_sources)))):
            candidates = [i for i, depth in enumerate(depths) if depth < max_depth - 1]
            parent = int(rng.choice(candidates))
            parents.append(parent)
            depths.append(depths[parent] + 1)

    kids: Dict[int, List[str]] = {i: [] for i in range(len(parents))}
    for s in range(n_sources):
        kids[int(rng.integers(0, len(parents)))].append(f"s{s}")

    # prune childless atomic nodes bottom-up
    alive = set(range(len(parents)))
    changed = True
    while changed:
        changed = False
        for i in sorted(alive, reverse=True):
            if i == 0:
                continue
            has_atomic_child = any(parents[j] == i for j in alive)
            if not kids[i] and not has_atomic_child:
                alive.discard(i)
                changed = True

    def name(i: int) -> str:
        return "d" if i == 0 else f"a{i}"

    nodes = [(f"s{s}", NodeRole.SOURCE) for s in range(n_sources)]
    nodes += [(name(i), NodeRole.ATOMIC if i else NodeRole.DESTINATION) for i in sorted(alive)]
    children = {}
    for i in sorted(alive):
        child_set = [name(j) for j in sorted(alive) if j != 0 and parents[j] == i] + kids[i]
        if child_set:
            children[name(i)] = tuple(child_set)
    return TopologyConfig(nodes=tuple(nodes), children=children, mode=GraphMode.TREE)


def random_tree(n_sources: int, max_depth: int, rng: np.random.Generator) -> NfcGraph:
    return build_graph(random_tree_config(n_sources, max_depth, rng))
