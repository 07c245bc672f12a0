"""
Solvability of function computation on small networks.

The general search assigns every arc an encoding function from its realised
input domain to L-symbol blocks, enumerated as truth tables in lexicographic order, and
derives the destination decoders; the first assignment whose decoders are well
defined is the witness. The linear search does the same over coefficient
matrices and solves for a linear decoder.
"""
import itertools
import json
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from constants import SEARCH_CAP, TOOL_VERSION
from errors import CapExceeded
from field.FiniteField import FieldSpec, solve_particular
from graph.NfcGraph import NfcGraph, NodeRole, min_cut, source_flow
from utils import ensure_directory_exists, get_logger

logger = get_logger(__name__)

Arc = Tuple[int, int]
Symbols = Tuple[int, ...]

MAX_COUNT_BITS = 1024


@dataclass(frozen=True)
class TargetFunction:
    """
    A target mapping one symbol per source to an output tuple, applied to every generation symbol.

    Outputs are tuples so that the output alphabet may be a product (the identity
    target returns all N symbols). `linear_rows(N)` gives the rows of f as a
    matrix over the field when f is linear.
    """

    name: str
    component: Callable[[Symbols], Symbols]
    output_size: Callable[[int, int], int]
    linear_rows: Optional[Callable[[int], List[List[int]]]] = None

    @property
    def is_linear(self) -> bool:
        return self.linear_rows is not None


def _xor(values: Symbols) -> Symbols:
    acc = 0
    for v in values:
        acc ^= v
    return (acc,)


TARGETS: Dict[str, TargetFunction] = {
    "identity": TargetFunction(
        "identity",
        lambda x: tuple(x),
        lambda q, n: q ** n,
        lambda n: [[int(i == j) for j in range(n)] for i in range(n)],
    ),
    # addition in GF(2^m) is XOR of the bit patterns
    "sum": TargetFunction("sum", _xor, lambda q, n: q, lambda n: [[1] * n]),
    "max": TargetFunction("max", lambda x: (max(x),), lambda q, n: q),
    "min": TargetFunction("min", lambda x: (min(x),), lambda q, n: q),
}
TARGETS["xor"] = TARGETS["sum"]


def target_preset(name: str) -> TargetFunction:
    try:
        return TARGETS[name]
    except KeyError:
        raise ValueError(f"Unknown target '{name}', expected one of {sorted(TARGETS)}") from None


@dataclass(frozen=True)
class SolvabilityInstance:
    graph: NfcGraph
    field: FieldSpec
    target: TargetFunction
    K: int = 1
    L: int = 1
    linear: bool = False

    def __post_init__(self):
        if self.K < 1 or self.L < 1:
            raise ValueError(f"Block lengths must be >= 1, got K={self.K}, L={self.L}")
        if self.linear and not self.target.is_linear:
            raise ValueError(f"Target '{self.target.name}' has no linear form")

    @property
    def q(self) -> int:
        return self.field.order

    def describe(self) -> dict:
        g = self.graph
        return {
            "graph": {
                "mode": g.mode.value,
                "nodes": [[name, role.value] for name, role in zip(g.names, g.roles)],
                "arcs": [[g.name(u), g.name(v)] for u, v in g.arcs],
            },
            "alphabet": self.q,
            "function_alphabet": self.target.output_size(self.q, g.N),
            "target": self.target.name,
            "K": self.K,
            "L": self.L,
            "linear": self.linear,
        }


class Status(str, Enum):
    SOLVABLE = "solvable"
    NOT_SOLVABLE = "not_solvable"
    UNKNOWN_CAPPED = "unknown_capped"


@dataclass(frozen=True)
class Witness:
    """Truth tables (general search) or coefficient matrices (linear search) per arc, plus decoders."""

    arc_functions: Dict[Tuple[str, str], dict]
    decoders: Dict[str, dict]
    linear: bool = False


@dataclass(frozen=True)
class SolvabilityVerdict:
    status: Status
    K: int
    L: int
    candidates: int
    witness: Optional[Witness] = None
    message: str = ""

    @property
    def solvable(self) -> bool:
        return self.status is Status.SOLVABLE

    @property
    def ratio(self) -> Optional[Fraction]:
        return Fraction(self.K, self.L) if self.solvable else None


@dataclass(frozen=True)
class LinearCheck:
    solvable: bool
    cut: int
    flow: int
    N: int

    @property
    def message(self) -> str:
        if self.solvable:
            return f"solvable (cut {self.cut} >= N={self.N})"
        if self.cut < self.N:
            return f"not solvable (cut {self.cut} < N={self.N})"
        return f"not solvable (source flow {self.flow} < N={self.N}, cut {self.cut})"


def linear_identity_check(g: NfcGraph, dest: int) -> LinearCheck:
    """
    Whether linear coding delivers all N source symbols to dest each generation.

    The verdict is `source_flow >= N`, not `min_cut >= N`. The plain cut between
    all sources and dest can reach N while a subset of the sources is squeezed
    through fewer arcs than it has members: two sources behind a single relay
    arc plus a third source with three disjoint paths give a cut of 4 for N=3,
    yet only two symbols get through. The max-flow with one unit of supply per
    source checks every source subset at once. For a single source the two
    conditions agree. The reported `cut` is still the plain arc cut.
    """
    cut = min_cut(g, dest)
    flow = source_flow(g, dest)
    return LinearCheck(solvable=flow >= g.N, cut=cut, flow=flow, N=g.N)


# -- shared enumeration helpers ---------------------------------------------


def _ordered_arcs(g: NfcGraph) -> List[Arc]:
    position = {node: i for i, node in enumerate(g.topological_order)}
    declared = {arc: i for i, arc in enumerate(g.arcs)}
    return sorted(g.arcs, key=lambda arc: (position[arc[0]], declared[arc]))


def _in_arcs(g: NfcGraph, node: int) -> List[Arc]:
    return [(kid, node) for kid in g.in_neighborhood[node]]


def _own_width(g: NfcGraph, node: int, K: int) -> int:
    return K if g.role(node) is NodeRole.SOURCE else 0


def count_candidates(instance: SolvabilityInstance) -> Union[int, float]:
    """
    Upper bound on the assignments the search may visit, computed without searching.

    General search: every arc contributes (q^L)^d with d the smaller of q^(NK)
    and the arc's input-domain size. Linear search: q^(L*D) coefficient matrices
    per arc with D the arc's input width in symbols. Counts beyond 2^1024 are
    returned as infinity.
    """
    g, q, K, L = instance.graph, instance.q, instance.K, instance.L
    log_q = math.log2(q)
    exponents = []
    for tail, _ in g.arcs:
        width = _own_width(g, tail, K) + L * g.in_degree(tail)
        if instance.linear:
            exponents.append(L * width)
        else:
            if min(g.N * K, width) * log_q > 64:
                return math.inf
            exponents.append(L * min(q ** (g.N * K), q ** width))
    if sum(exponents) * log_q >= MAX_COUNT_BITS:
        return math.inf
    return q ** sum(exponents)


def _check_cap(instance: SolvabilityInstance, cap: int) -> int:
    candidates = count_candidates(instance)
    if candidates > cap:
        raise CapExceeded(candidates, cap)
    return candidates


def _expected_outputs(instance: SolvabilityInstance, inputs: List[Symbols]) -> List[Symbols]:
    g, K = instance.graph, instance.K
    expected = []
    for sigma in inputs:
        out: Tuple[int, ...] = ()
        for k in range(K):
            out += tuple(instance.target.component(tuple(sigma[n * K + k] for n in range(g.N))))
        expected.append(out)
    return expected


def _own_symbols(instance: SolvabilityInstance, node: int, sigma: Symbols) -> Symbols:
    g, K = instance.graph, instance.K
    if g.role(node) is not NodeRole.SOURCE:
        return ()
    start = g.source_position[node] * K
    return tuple(sigma[start:start + K])


# -- general search ------------------------------------------------------------


def _decoder(
        received: List[Symbols],
        expected: List[Symbols],
) -> Optional[Dict[Symbols, Symbols]]:
    table: Dict[Symbols, Symbols] = {}
    for message, want in zip(received, expected):
        have = table.setdefault(message, want)
        if have != want:
            return None
    return table


def _general_search(instance: SolvabilityInstance) -> Optional[Witness]:
    g, q, L = instance.graph, instance.q, instance.L
    inputs = list(itertools.product(range(q), repeat=g.N * instance.K))
    expected = _expected_outputs(instance, inputs)
    arcs = _ordered_arcs(g)
    last_into = {}
    for i, (_, head) in enumerate(arcs):
        if g.role(head) is NodeRole.DESTINATION:
            last_into[head] = i
    finishing = {i: d for d, i in last_into.items()}

    messages: Dict[Arc, List[int]] = {}
    tables: Dict[Arc, Dict[Symbols, int]] = {}
    n_messages = q ** L

    def received_at(dest: int) -> List[Symbols]:
        into = _in_arcs(g, dest)
        return [tuple(messages[a][p] for a in into) for p in range(len(inputs))]

    def local_inputs(tail: int) -> List[Symbols]:
        into = _in_arcs(g, tail)
        return [
            _own_symbols(instance, tail, sigma) + tuple(messages[a][p] for a in into)
            for p, sigma in enumerate(inputs)
        ]

    def descend(i: int) -> bool:
        if i == len(arcs):
            return True
        arc = arcs[i]
        local = local_inputs(arc[0])
        domain = sorted(set(local))
        slot = {value: j for j, value in enumerate(domain)}
        index = [slot[value] for value in local]

        for table in itertools.product(range(n_messages), repeat=len(domain)):
            messages[arc] = [table[j] for j in index]
            if i in finishing and _decoder(received_at(finishing[i]), expected) is None:
                continue
            if descend(i + 1):
                tables[arc] = dict(zip(domain, table))
                return True
        del messages[arc]
        return False

    if not descend(0):
        return None

    decoders = {}
    for d in g.destinations:
        decoders[g.name(d)] = _decoder(received_at(d), expected)
    return Witness(
        arc_functions={(g.name(u), g.name(v)): tables[(u, v)] for u, v in arcs},
        decoders=decoders,
    )


def _unpack(message: int, q: int, L: int) -> Symbols:
    digits = []
    for _ in range(L):
        message, digit = divmod(message, q)
        digits.append(digit)
    return tuple(reversed(digits))


def verify_witness(instance: SolvabilityInstance, witness: Witness) -> bool:
    """Compose the witness on every input tuple and compare with the target at every destination."""
    g, q = instance.graph, instance.q
    inputs = list(itertools.product(range(q), repeat=g.N * instance.K))
    expected = _expected_outputs(instance, inputs)
    if witness.linear:
        return _verify_linear(instance, witness, inputs, expected)

    arcs = _ordered_arcs(g)
    for sigma, want in zip(inputs, expected):
        sent: Dict[Arc, int] = {}
        for u, v in arcs:
            local = _own_symbols(instance, u, sigma) + tuple(sent[a] for a in _in_arcs(g, u))
            table = witness.arc_functions[(g.name(u), g.name(v))]
            if local not in table:
                return False
            sent[(u, v)] = table[local]
        for d in g.destinations:
            got = witness.decoders[g.name(d)].get(tuple(sent[a] for a in _in_arcs(g, d)))
            if got != want:
                return False
    return True


# -- linear search -------------------------------------------------------------


def _target_matrix(instance: SolvabilityInstance, GF):
    """Rows (k, r) of the target over the stacked source symbols, column n*K + k."""
    g, K = instance.graph, instance.K
    rows = instance.target.linear_rows(g.N)
    T = GF.Zeros((K * len(rows), g.N * K))
    for k in range(K):
        for r, row in enumerate(rows):
            for n, coefficient in enumerate(row):
                T[k * len(rows) + r, n * K + k] = coefficient
    return T


def _linear_search(instance: SolvabilityInstance) -> Optional[Witness]:
    g, K, L = instance.graph, instance.K, instance.L
    GF = instance.field.gf
    q = instance.q
    NK = g.N * K
    arcs = _ordered_arcs(g)
    T = _target_matrix(instance, GF)

    transfer: Dict[Arc, object] = {}
    chosen: Dict[Arc, object] = {}
    decoders: Dict[int, object] = {}
    finishing = {}
    for i, (_, head) in enumerate(arcs):
        if g.role(head) is NodeRole.DESTINATION:
            finishing[head] = i
    finishing = {i: d for d, i in finishing.items()}

    def stacked_inputs(tail: int):
        blocks = []
        if g.role(tail) is NodeRole.SOURCE:
            own = GF.Zeros((K, NK))
            start = g.source_position[tail] * K
            for k in range(K):
                own[k, start + k] = 1
            blocks.append(own)
        blocks.extend(transfer[a] for a in _in_arcs(g, tail))
        return GF(np.concatenate([b.view(np.ndarray) for b in blocks], axis=0))

    def decoder_for(dest: int):
        M = GF(np.concatenate([transfer[a].view(np.ndarray) for a in _in_arcs(g, dest)], axis=0))
        X = solve_particular(M.T, T.T)
        return None if X is None else X.T

    def descend(i: int) -> bool:
        if i == len(arcs):
            return True
        arc = arcs[i]
        S = stacked_inputs(arc[0])
        width = S.shape[0]
        for entries in itertools.product(range(q), repeat=L * width):
            C = GF(np.asarray(entries, dtype=np.int64).reshape(L, width))
            transfer[arc] = C @ S
            if i in finishing:
                X = decoder_for(finishing[i])
                if X is None:
                    continue
                decoders[finishing[i]] = X
            if descend(i + 1):
                chosen[arc] = C
                return True
        transfer.pop(arc, None)
        return False

    if not descend(0):
        return None
    return Witness(
        arc_functions={(g.name(u), g.name(v)): {"matrix": chosen[(u, v)].tolist()} for u, v in arcs},
        decoders={g.name(d): {"matrix": X.tolist()} for d, X in decoders.items()},
        linear=True,
    )


def _verify_linear(instance: SolvabilityInstance, witness: Witness, inputs, expected) -> bool:
    g, K, L = instance.graph, instance.K, instance.L
    GF = instance.field.gf
    arcs = _ordered_arcs(g)
    matrices = {arc: GF(np.asarray(witness.arc_functions[(g.name(arc[0]), g.name(arc[1]))]["matrix"], dtype=np.int64))
                for arc in arcs}
    for sigma, want in zip(inputs, expected):
        sent: Dict[Arc, object] = {}
        for u, v in arcs:
            parts = [list(_own_symbols(instance, u, sigma))] + [sent[a].tolist() for a in _in_arcs(g, u)]
            local = GF(np.asarray([s for part in parts for s in part], dtype=np.int64))
            sent[(u, v)] = matrices[(u, v)] @ local
        for d in g.destinations:
            received = GF(np.concatenate([sent[a].view(np.ndarray) for a in _in_arcs(g, d)]))
            decoded = GF(np.asarray(witness.decoders[g.name(d)]["matrix"], dtype=np.int64)) @ received
            # target rows are ordered (k, r); the expected tuple is ordered the same way
            if tuple(int(v) for v in decoded) != want:
                return False
    return True


# -- entry points --------------------------------------------------------------


def brute_force_search(instance: SolvabilityInstance, cap: int = SEARCH_CAP) -> SolvabilityVerdict:
    """
    Exhaustively search for encoding functions and decoders that compute the target.

    Args:
        instance (SolvabilityInstance): Graph, alphabet, target and block lengths.
        cap (int): Largest number of candidate assignments allowed before searching.

    Returns:
        SolvabilityVerdict: solvable with a verified witness, not_solvable, or
            unknown_capped when the candidate count exceeds the cap.
    """
    try:
        candidates = _check_cap(instance, cap)
    except CapExceeded as e:
        logger.warning(f"K={instance.K} L={instance.L}: {e}")
        return SolvabilityVerdict(Status.UNKNOWN_CAPPED, instance.K, instance.L, e.candidates, message=str(e))

    witness = _linear_search(instance) if instance.linear else _general_search(instance)
    if witness is None:
        return SolvabilityVerdict(Status.NOT_SOLVABLE, instance.K, instance.L, candidates, message="not solvable")

    if not verify_witness(instance, witness):
        raise RuntimeError(f"Witness for '{instance.target.name}' at K={instance.K} L={instance.L} failed verification")
    return SolvabilityVerdict(
        Status.SOLVABLE, instance.K, instance.L, candidates, witness=witness, message="solvable, witness attached"
    )


@dataclass
class CapacityReport:
    points: List[SolvabilityVerdict] = field(default_factory=list)

    @property
    def best(self) -> Optional[SolvabilityVerdict]:
        solved = [v for v in self.points if v.solvable]
        if not solved:
            return None
        # largest ratio, smallest block lengths on ties
        return max(solved, key=lambda v: (v.ratio, -v.L, -v.K))

    @property
    def skipped(self) -> List[Tuple[int, int]]:
        return [(v.K, v.L) for v in self.points if v.status is Status.UNKNOWN_CAPPED]

    @property
    def best_ratio(self) -> Optional[Fraction]:
        return self.best.ratio if self.best else None


def capacity_lower_bound(
        graph: NfcGraph,
        field_spec: FieldSpec,
        target: TargetFunction,
        sweep: Sequence[Tuple[int, int]],
        linear: bool = False,
        cap: int = SEARCH_CAP,
) -> CapacityReport:
    """
    Best K/L among the solvable points of a (K, L) sweep: a certified lower bound
    on the computing capacity, never the supremum itself. Points over the cap are
    reported as skipped.
    """
    report = CapacityReport()
    for K, L in sweep:
        instance = SolvabilityInstance(graph, field_spec, target, K=K, L=L, linear=linear)
        report.points.append(brute_force_search(instance, cap))
    if report.best is not None:
        logger.info(f"Capacity lower bound for '{target.name}': {report.best_ratio} at K={report.best.K}, L={report.best.L}")
    return report


def sweep_pairs(k_max: int, l_max: int) -> List[Tuple[int, int]]:
    return [(K, L) for K in range(1, k_max + 1) for L in range(1, l_max + 1)]


def _table_to_json(table: dict) -> dict:
    if "matrix" in table:
        return table
    return {",".join(map(str, key)): value if isinstance(value, int) else list(value) for key, value in table.items()}


def verdict_to_dict(verdict: SolvabilityVerdict) -> dict:
    body = {
        "status": verdict.status.value,
        "K": verdict.K,
        "L": verdict.L,
        "ratio": str(verdict.ratio) if verdict.ratio is not None else None,
        "candidates": None if math.isinf(verdict.candidates) else verdict.candidates,
        "message": verdict.message,
    }
    if verdict.witness is not None:
        body["witness"] = {
            "linear": verdict.witness.linear,
            "arcs": {f"{u}->{v}": _table_to_json(t) for (u, v), t in verdict.witness.arc_functions.items()},
            "decoders": {d: _table_to_json(t) for d, t in verdict.witness.decoders.items()},
        }
    return body


def capacity_report_dict(instance: SolvabilityInstance, check: LinearCheck, report: CapacityReport) -> dict:
    best = report.best
    return {
        "tool_version": TOOL_VERSION,
        "instance": instance.describe(),
        "linear_identity_check": {
            "solvable": check.solvable,
            "cut": check.cut,
            "source_flow": check.flow,
            "N": check.N,
            "message": check.message,
        },
        "sweep": [verdict_to_dict(v) for v in report.points],
        "best": None if best is None else {"K": best.K, "L": best.L, "ratio": str(best.ratio), "lower_bound": True},
        "skipped": [list(p) for p in report.skipped],
    }


def write_report(path: str, report: dict) -> str:
    ensure_directory_exists(os.path.dirname(path) or ".")
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(report, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return path
