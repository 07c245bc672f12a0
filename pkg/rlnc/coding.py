"""
Random linear network coding over a rooted tree: leaves tag their packet with a
unit coding vector, relays forward random combinations together with the
combined global coefficients, and the destination solves for the sources.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import galois
import numpy as np

from errors import InconsistentDimensions, RankDeficient
from field.FiniteField import gaussian_solve, matrix_rank
from graph.NfcGraph import NfcGraph, NodeRole
from utils import get_logger, substream

logger = get_logger(__name__)


@dataclass(frozen=True)
class CodedPacket:
    payload: galois.FieldArray
    coding_vector: galois.FieldArray

    @property
    def N(self) -> int:
        return int(self.coding_vector.shape[0])

    @property
    def L(self) -> int:
        return int(self.payload.shape[0])


def source_encode(g: NfcGraph, s: int, x_s: galois.FieldArray) -> CodedPacket:
    """Leaf rule: the payload is the source packet, the coding vector the unit vector at s."""
    if g.role(s) is not NodeRole.SOURCE:
        raise ValueError(f"Node '{g.name(s)}' is not a source")
    GF = type(x_s)
    c = GF.Zeros(g.N)
    c[g.source_position[s]] = 1
    return CodedPacket(payload=x_s.reshape(-1), coding_vector=c)


def atomic_recode(
        children: Sequence[CodedPacket],
        rng: np.random.Generator,
        coefficients: Optional[galois.FieldArray] = None,
) -> CodedPacket:
    """
    Forward the sum of e[b] * payload[b] over the children b; the coding vector is combined the same way.

    The local coefficients e are drawn uniformly over the whole field (zero
    included) from rng, independently of the payloads, unless given explicitly.

    Raises:
        InconsistentDimensions: If the children disagree on N, L or the field.
    """
    if not children:
        raise InconsistentDimensions("Recoding needs at least one child packet")
    GF = type(children[0].payload)
    if any(type(p.payload) is not GF or type(p.coding_vector) is not GF for p in children):
        raise InconsistentDimensions("Child packets come from different fields")
    if len({p.N for p in children}) > 1 or len({p.L for p in children}) > 1:
        raise InconsistentDimensions(
            f"Child packets disagree on dimensions: N={sorted({p.N for p in children})}, L={sorted({p.L for p in children})}"
        )

    if coefficients is None:
        coefficients = GF(rng.integers(0, GF.order, size=len(children), dtype=np.int64))
    elif len(coefficients) != len(children):
        raise InconsistentDimensions(f"{len(coefficients)} local coefficients for {len(children)} children")

    payload = GF.Zeros(children[0].L)
    vector = GF.Zeros(children[0].N)
    for e, child in zip(coefficients, children):
        payload = payload + e * child.payload
        vector = vector + e * child.coding_vector
    return CodedPacket(payload=payload, coding_vector=vector)


def coding_consistent(packet: CodedPacket, sources: galois.FieldArray) -> bool:
    """payload == coding_vector @ sources for the known (N, L) source matrix."""
    return bool(np.array_equal(packet.coding_vector @ sources, packet.payload))


@dataclass
class DecoderState:
    """Pairs collected at a destination; rank only ever grows as pairs arrive."""

    N: int
    pairs: List[CodedPacket] = field(default_factory=list)

    def collect(self, packet: CodedPacket) -> None:
        if packet.N != self.N:
            raise InconsistentDimensions(f"Coding vector of length {packet.N}, decoder expects {self.N}")
        self.pairs.append(packet)

    def _stack(self, rows) -> galois.FieldArray:
        GF = type(rows[0])
        return GF(np.stack([row.view(np.ndarray) for row in rows]))

    @property
    def coefficient_matrix(self) -> galois.FieldArray:
        return self._stack([p.coding_vector for p in self.pairs])

    @property
    def payload_matrix(self) -> galois.FieldArray:
        return self._stack([p.payload for p in self.pairs])

    @property
    def rank(self) -> int:
        if not self.pairs:
            return 0
        return matrix_rank(self.coefficient_matrix)


@dataclass(frozen=True)
class Decoded:
    sources: galois.FieldArray
    rank: int
    success = True


@dataclass(frozen=True)
class Insufficient:
    rank: int
    success = False


DecodeOutcome = Union[Decoded, Insufficient]


def destination_decode(state: DecoderState) -> DecodeOutcome:
    """Solve C @ X = Y for the N source packets, or report the rank reached so far."""
    if not state.pairs:
        return Insufficient(rank=0)
    try:
        result = gaussian_solve(state.coefficient_matrix, state.payload_matrix)
    except RankDeficient as e:
        return Insufficient(rank=e.rank)
    return Decoded(sources=result.solution, rank=result.rank)


@dataclass
class GenerationTrace:
    """Everything one generation of coded delivery produced."""

    passes: List[Dict[Tuple[int, int], CodedPacket]] = field(default_factory=list)
    decoders: Dict[int, DecoderState] = field(default_factory=dict)
    outcomes: Dict[int, DecodeOutcome] = field(default_factory=dict)
    violations: int = 0


def deliver_generation(
        g: NfcGraph,
        sources: galois.FieldArray,
        passes: int,
        seed: int,
        generation: int = 0,
        verify: bool = False,
        on_packet: Optional[Callable[[int, Tuple[int, int], CodedPacket], None]] = None,
        on_node: Optional[Callable[[int, int], None]] = None,
) -> GenerationTrace:
    """
    Run `passes` sequential coding passes over the same source packets and decode.

    Every pass draws fresh local coefficients from the (node, generation, pass)
    stream. Destinations keep each incoming pair without recoding.

    Args:
        g (NfcGraph): The topology.
        sources (galois.FieldArray): (N, L) source packets, rows in source order.
        passes (int): Number of passes N'.
        seed (int): Scenario seed.
        generation (int): Generation index.
        verify (bool): Count packets whose payload disagrees with their coding vector.
        on_packet: Called with (pass, arc, packet) for every transmitted packet.
        on_node: Called with (pass, node) just before a non-source node reads its inputs.

    Returns:
        GenerationTrace: Per-pass arc packets, decoder states and outcomes.
    """
    if sources.shape[0] != g.N:
        raise InconsistentDimensions(f"{sources.shape[0]} source packets for {g.N} sources")

    trace = GenerationTrace(decoders={d: DecoderState(N=g.N) for d in g.destinations})
    for p in range(passes):
        arc_packets: Dict[Tuple[int, int], CodedPacket] = {}
        for node in g.topological_order:
            role = g.role(node)
            if on_node is not None and role is not NodeRole.SOURCE:
                on_node(p, node)
            if role is NodeRole.DESTINATION:
                for kid in g.in_neighborhood[node]:
                    trace.decoders[node].collect(arc_packets[(kid, node)])
                continue

            if role is NodeRole.SOURCE:
                packet = source_encode(g, node, sources[g.source_position[node]])
            else:
                rng = substream(seed, node, generation, p, purpose="rlnc-local")
                packet = atomic_recode([arc_packets[(kid, node)] for kid in g.in_neighborhood[node]], rng)

            if verify and not coding_consistent(packet, sources):
                trace.violations += 1
                logger.warning(f"Coding vector of node '{g.name(node)}' inconsistent in generation {generation}, pass {p}")

            for head in g.out_neighborhood[node]:
                arc_packets[(node, head)] = packet
                if on_packet is not None:
                    on_packet(p, (node, head), packet)
        trace.passes.append(arc_packets)

    trace.outcomes = {d: destination_decode(state) for d, state in trace.decoders.items()}
    return trace
