import json
import math
import os
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Tuple

import networkx as nx
import numpy as np

from afc.FunctionProcessor import ConfiguredNetwork, FunctionAssignment, decompose_average, install_functions
from afc.functions import Domain, Packet
from constants import (
    ARC_SYMBOLS_COLUMNS,
    COST_COLUMNS,
    HEADER_SYMBOLS,
    OUTPUT_COLUMNS,
    SUCCESS_COLUMNS,
    TRAJECTORY_COLUMNS,
)
from engine.events import GenerationBarrier
from errors import DomainError, MismatchedScenarios, NotATree, SimulationError
from field.FiniteField import FieldSpec
from graph.NfcGraph import GraphMode, NfcGraph, NodeRole
from learning.NeuralTree import (
    NO_FAILURES,
    DownwardReport,
    FailureModel,
    ForwardResult,
    NeuralTree,
    nn_train,
    separable_dataset,
)
from learning.consensus import ConsensusState, StepSchedule, consensus_step
from rlnc.coding import CodedPacket, Decoded, deliver_generation
from rlnc.experiment import SuccessStats, run_recovery_experiment
from utils import ensure_directory_exists, get_logger, substream, write_csv

logger = get_logger(__name__)

Arc = Tuple[int, int]
UP = "up"
DOWN = "down"
DOWNWARD_ROUND = 1


class Application(str, Enum):
    FORWARDING = "forwarding"
    FUNCTION = "function"
    AVERAGE = "average"
    RLNC = "rlnc"
    CONSENSUS = "consensus"
    NEURAL = "neural"


REAL_ONLY = {Application.AVERAGE, Application.CONSENSUS, Application.NEURAL}


@dataclass(frozen=True)
class SourceModel:
    """How real-valued source symbols are drawn each generation."""

    distribution: str = "normal"
    mean: float = 0.0
    std: float = 1.0
    low: float = 0.0
    high: float = 1.0

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.distribution == "normal":
            return rng.normal(self.mean, self.std, size=size)
        if self.distribution == "uniform":
            return rng.uniform(self.low, self.high, size=size)
        if self.distribution == "integers":
            return rng.integers(int(self.low), int(self.high), size=size, endpoint=True).astype(np.float64)
        if self.distribution == "constant":
            return np.full(size, self.mean, dtype=np.float64)
        raise ValueError(f"Unknown source distribution '{self.distribution}'")


@dataclass(frozen=True)
class Scenario:
    graph: NfcGraph
    application: Application
    generations: int = 1
    seed: int = 0
    length: int = 1
    field_spec: Optional[FieldSpec] = None
    failures: FailureModel = NO_FAILURES
    assignment: Optional[FunctionAssignment] = None
    noise_sigma: float = 0.0
    n_prime: int = 0
    trials: int = 0
    verify_coding: bool = False
    schedule: StepSchedule = field(default_factory=StepSchedule)
    initial: float = 0.0
    sources: SourceModel = field(default_factory=SourceModel)
    dataset_size: Optional[int] = None
    header_symbols: Optional[int] = None
    name: str = "scenario"
    record_events: bool = False

    def __post_init__(self):
        if self.generations < 0:
            raise ValueError(f"generations must be >= 0, got {self.generations}")
        if self.length < 1:
            raise ValueError(f"Packet length must be >= 1, got {self.length}")
        if self.application is Application.RLNC and self.field_spec is None:
            raise ValueError("rlnc needs a finite field domain")
        if self.n_prime < 0:
            raise ValueError(f"n_prime must be >= 0, got {self.n_prime}")
        if self.trials < 0:
            raise ValueError(f"trials must be >= 0, got {self.trials}")
        if self.application in REAL_ONLY and self.field_spec is not None:
            raise ValueError(f"{self.application.value} runs on real symbols, not {self.field_spec.describe()}")
        if self.application is Application.FUNCTION and self.assignment is None:
            raise ValueError("function scenarios need a function assignment")

    @property
    def domain(self) -> Domain:
        return Domain.REAL if self.field_spec is None else Domain.FIELD

    @property
    def header(self) -> int:
        """Header symbols charged per message."""
        if self.header_symbols is not None:
            return self.header_symbols
        if self.application is Application.RLNC:
            return self.graph.N
        return HEADER_SYMBOLS[self.application.value]

    def source_symbols(self, source: int, generation: int) -> np.ndarray:
        rng = substream(self.seed, source, generation, purpose="source-data")
        if self.field_spec is not None:
            return self.field_spec.random(self.length, rng)
        return self.sources.draw(rng, self.length)

    def source_packet(self, source: int, generation: int) -> Packet:
        symbols = self.source_symbols(source, generation)
        if self.field_spec is not None:
            return Packet.field(symbols)
        return Packet.real(symbols)


@dataclass
class Metrics:
    # (generation, tail, head, direction) -> [messages, payload symbols, header symbols]
    counters: Dict[Tuple[int, int, int, str], List[int]] = field(default_factory=dict)
    trajectory: List[list] = field(default_factory=list)
    outputs: List[list] = field(default_factory=list)
    failed_generations: List[int] = field(default_factory=list)
    dropped_nodes: int = 0
    lost_messages: int = 0
    stale_generations: int = 0
    coding_violations: int = 0
    clamped: int = 0
    wall_clock: float = 0.0

    def charge(self, generation: int, arc: Arc, direction: str, payload: int, header: int, messages: int = 1) -> None:
        counter = self.counters.setdefault((generation, arc[0], arc[1], direction), [0, 0, 0])
        counter[0] += messages
        counter[1] += payload
        counter[2] += header

    @property
    def total_symbols(self) -> int:
        return sum(payload + header for _, payload, header in self.counters.values())

    def arc_totals(self) -> Dict[Arc, int]:
        totals: Dict[Arc, int] = {}
        for (_, tail, head, _), (_, payload, header) in self.counters.items():
            totals[(tail, head)] = totals.get((tail, head), 0) + payload + header
        return totals

    def arc_rows(self, g: NfcGraph) -> List[list]:
        position = {arc: i for i, arc in enumerate(g.arcs)}
        rows = []
        for key in sorted(self.counters, key=lambda k: (k[0], position[(k[1], k[2])], k[3])):
            generation, tail, head, direction = key
            messages, payload, header = self.counters[key]
            rows.append([generation, g.name(tail), g.name(head), direction, messages, payload, header, payload + header])
        return rows


@dataclass
class ScenarioResult:
    scenario: Scenario
    metrics: Metrics
    headline: Tuple[str, Optional[float]]
    success: Optional[SuccessStats] = None
    # kept only when the scenario sets record_events
    events: List[Any] = field(default_factory=list)
    event_counts: Dict[str, int] = field(default_factory=dict)
    order_violations: List[str] = field(default_factory=list)

    def summary(self) -> str:
        label, value = self.headline
        shown = "n/a" if value is None else f"{value:.6g}"
        return (
            f"{self.scenario.application.value}: generations={self.scenario.generations} "
            f"total_symbols={self.metrics.total_symbols} {label}={shown}"
        )


# -- generation runners ----------------------------------------------------------


def _draw_dropouts(s: Scenario, generation: int) -> List[int]:
    p = s.failures.node_dropout_p
    if p <= 0:
        return []
    return [a for a in s.graph.atomics if substream(s.seed, a, generation, purpose="dropout").random() < p]


def _value_rows(generation: int, name: str, packet: Packet) -> List[list]:
    if packet.domain is Domain.FIELD:
        values = [int(v) for v in packet.symbols]
    else:
        values = [float(v) for v in packet.symbols]
    return [[generation, name, i, v] for i, v in enumerate(values)]


def _network_generation(
        s: Scenario,
        network: ConfiguredNetwork,
        barrier: GenerationBarrier,
        metrics: Metrics,
        t: int,
) -> Tuple[Dict[int, Packet], int]:
    """One generation of a configured network under the barrier; returns destination outputs and drops."""
    g = s.graph
    for node in _draw_dropouts(s, t):
        barrier.drop(t, node)

    outputs: Dict[int, Packet] = {}
    for node in g.topological_order:
        if g.role(node) is NodeRole.SOURCE:
            packet = s.source_packet(node, t)
            for head in g.out_neighborhood[node]:
                barrier.deliver(t, node, head, packet)
                metrics.charge(t, (node, head), UP, packet.length, s.header)
            continue
        if barrier.is_dropped(t, node):
            continue

        inputs = barrier.collect(node, t)
        if not inputs:
            # every child dropped
            barrier.drop(t, node)
            continue
        produced = network.evaluate_node(node, inputs, s.seed, t)
        if g.role(node) is NodeRole.DESTINATION:
            outputs[node] = produced[node]
            continue
        for head, packet in produced.items():
            barrier.deliver(t, node, head, packet)
            metrics.charge(t, (node, head), UP, packet.length, s.header)

    dropped = len(barrier.dropped.get(t, ()))
    return outputs, dropped


def _run_network(s: Scenario, network: ConfiguredNetwork, metrics: Metrics, barrier: GenerationBarrier,
                 on_output: Optional[Callable[[int, Packet], float]] = None) -> int:
    """
    Run every generation through the network. The trajectory value is the mean of
    the first destination's symbols, or whatever `on_output` returns for it.
    """
    g = s.graph
    completed = 0
    for t in range(s.generations):
        try:
            outputs, dropped = _network_generation(s, network, barrier, metrics, t)
        except DomainError as e:
            logger.warning(f"Generation {t} failed: {e}")
            metrics.failed_generations.append(t)
            continue
        finally:
            barrier.release(t)
        metrics.dropped_nodes += dropped

        missing = [d for d in g.destinations if d not in outputs]
        if missing:
            logger.warning(f"Generation {t}: no input reached {[g.name(d) for d in missing]}")
            metrics.failed_generations.append(t)
        for d in g.destinations:
            if d in outputs:
                metrics.outputs.extend(_value_rows(t, g.name(d), outputs[d]))
                metrics.clamped += outputs[d].clamped

        first = outputs.get(g.destinations[0])
        if first is None:
            continue
        completed += 1
        value = on_output(t, first) if on_output is not None else float(np.mean(first.as_real()))
        metrics.trajectory.append([t, value, dropped, 0])
    return completed


def _run_function(s: Scenario, metrics: Metrics, barrier: GenerationBarrier) -> Tuple[str, Optional[float]]:
    network = install_functions(s.graph, s.assignment, s.noise_sigma)
    completed = _run_network(s, network, metrics, barrier)
    return "completed_generations", float(completed)


def _run_average(s: Scenario, metrics: Metrics, barrier: GenerationBarrier) -> Tuple[str, Optional[float]]:
    network = install_functions(s.graph, decompose_average(s.graph), s.noise_sigma)
    _run_network(s, network, metrics, barrier)
    last = metrics.trajectory[-1][1] if metrics.trajectory else None
    return "final_average", last


def _run_consensus(s: Scenario, metrics: Metrics, barrier: GenerationBarrier) -> Tuple[str, Optional[float]]:
    network = install_functions(s.graph, decompose_average(s.graph), s.noise_sigma)
    state = ConsensusState.start(np.full(s.length, s.initial), s.schedule)

    def step(t: int, output: Packet) -> float:
        nonlocal state
        state = consensus_step(state, output.symbols)
        return float(np.mean(state.w))

    _run_network(s, network, metrics, barrier, on_output=step)
    return "final_estimate", float(np.mean(state.w)) if state.t else None


def _routes(g: NfcGraph) -> Dict[Tuple[int, int], int]:
    """Next hop of every source's packet at every node on its shortest path to a destination."""
    hops: Dict[Tuple[int, int], int] = {}
    for s in g.sources:
        best = None
        for d in g.destinations:
            if nx.has_path(g.digraph, s, d):
                path = nx.shortest_path(g.digraph, s, d)
                if best is None or len(path) < len(best):
                    best = path
        if best is None:
            continue
        for here, there in zip(best, best[1:]):
            hops[(s, here)] = there
    return hops


def _run_forwarding(s: Scenario, metrics: Metrics, barrier: GenerationBarrier) -> Tuple[str, Optional[float]]:
    """Raw forwarding: every source packet travels unchanged along its route, one message per hop."""
    g = s.graph
    hops = _routes(g)
    delivered_total = 0

    for t in range(s.generations):
        for node in _draw_dropouts(s, t):
            barrier.drop(t, node)
        delivered = 0
        for node in g.topological_order:
            if g.role(node) is NodeRole.SOURCE:
                bundle = [(node, s.source_packet(node, t))]
            elif barrier.is_dropped(t, node):
                continue
            else:
                inputs = barrier.collect(node, t)
                bundle = [item for kid in g.in_neighborhood[node] for item in inputs.get(kid, [])]

            if g.role(node) is NodeRole.DESTINATION:
                for origin, packet in sorted(bundle, key=lambda item: item[0]):
                    metrics.outputs.extend(_value_rows(t, f"{g.name(node)}:{g.name(origin)}", packet))
                delivered += len(bundle)
                continue

            outgoing: Dict[int, list] = {head: [] for head in g.out_neighborhood[node]}
            for origin, packet in bundle:
                head = hops.get((origin, node))
                if head is not None:
                    outgoing[head].append((origin, packet))
            for head, items in outgoing.items():
                barrier.deliver(t, node, head, items)
                if items:
                    metrics.charge(t, (node, head), UP, s.length * len(items), s.header * len(items), messages=len(items))

        dropped = len(barrier.dropped.get(t, ()))
        barrier.release(t)
        metrics.dropped_nodes += dropped
        metrics.trajectory.append([t, float(delivered), dropped, 0])
        delivered_total += delivered

    return "delivered_packets", float(delivered_total)


def _run_rlnc(s: Scenario, metrics: Metrics, barrier: GenerationBarrier) -> Tuple[str, Optional[float]]:
    g = s.graph
    decoded = 0
    for t in range(s.generations):
        sources = s.field_spec.gf(np.stack([s.source_symbols(src, t).view(np.ndarray) for src in g.sources]))

        def meter(p: int, arc: Arc, packet: CodedPacket, t=t) -> None:
            barrier.deliver(t, arc[0], arc[1], packet, round=p)
            metrics.charge(t, arc, UP, packet.L, s.header)

        def gate(p: int, node: int, t=t) -> None:
            barrier.collect(node, t, round=p)

        try:
            trace = deliver_generation(g, sources, s.n_prime, s.seed, t, verify=s.verify_coding,
                                       on_packet=meter, on_node=gate)
        finally:
            barrier.release(t)
        metrics.coding_violations += trace.violations

        ok = True
        for d, outcome in trace.outcomes.items():
            exact = isinstance(outcome, Decoded) and np.array_equal(outcome.sources, sources)
            ok = ok and exact
            if exact:
                for position, src in enumerate(g.sources):
                    packet = Packet.field(outcome.sources[position])
                    metrics.outputs.extend(_value_rows(t, f"{g.name(d)}:{g.name(src)}", packet))
        if ok:
            decoded += 1
        else:
            metrics.failed_generations.append(t)
        metrics.trajectory.append([t, 1.0 if ok else 0.0, 0, 0])

    if s.trials > 0:
        return "success_probability", None
    return "decode_rate", decoded / s.generations if s.generations else None


def _run_neural(s: Scenario, metrics: Metrics, barrier: GenerationBarrier) -> Tuple[str, Optional[float]]:
    g = s.graph
    if s.generations == 0:
        return "final_loss", None

    network = NeuralTree(g, s.length, s.seed)
    dataset = separable_dataset(g, s.dataset_size or s.generations, s.seed, s.length)
    stream = [dataset[t % len(dataset)] for t in range(s.generations)]

    def upward(t: int, forward: ForwardResult) -> None:
        for node in sorted(forward.dropped):
            barrier.drop(t, node)
        sent: Dict[int, List[Tuple[int, int]]] = {}
        for (tail, head), symbols in forward.messages:
            sent.setdefault(tail, []).append((head, symbols))
        for node in g.topological_order:
            if barrier.is_dropped(t, node):
                continue
            if g.role(node) is not NodeRole.SOURCE:
                barrier.collect(node, t)
            for head, symbols in sent.get(node, []):
                barrier.deliver(t, node, head, symbols)
                metrics.charge(t, (node, head), UP, symbols, s.header)
        barrier.release(t)

    def meter(t: int, forward: Optional[ForwardResult], reports: List[DownwardReport]) -> None:
        if forward is not None:
            upward(t, forward)
        for report in reports:
            # reports list the arc child-first; the delta travels parent to child
            for (kid, node), symbols in report.messages:
                barrier.deliver(report.t, node, kid, symbols, round=DOWNWARD_ROUND)
                metrics.charge(report.t, (kid, node), DOWN, symbols, s.header)
            barrier.release(report.t)

    result = nn_train(network, stream, 1, s.schedule, s.failures, s.seed, on_generation=meter)
    for record in result.losses:
        metrics.trajectory.append(record.as_row())
        metrics.dropped_nodes += record.dropped_nodes
        metrics.lost_messages += record.lost_messages
    metrics.stale_generations = result.stale_generations

    last = s.generations - 1
    for node, weights in sorted(result.weights.items()):
        metrics.outputs.extend([[last, g.name(node), i, float(w)] for i, w in enumerate(weights)])
    return "final_loss", result.final_loss


_RUNNERS: Dict[Application, Callable[[Scenario, Metrics, GenerationBarrier], Tuple[str, Optional[float]]]] = {
    Application.FORWARDING: _run_forwarding,
    Application.FUNCTION: _run_function,
    Application.AVERAGE: _run_average,
    Application.CONSENSUS: _run_consensus,
    Application.RLNC: _run_rlnc,
    Application.NEURAL: _run_neural,
}


def check_scenario(s: Scenario) -> None:
    """
    Build the per-node programs the application needs without running a generation.

    Raises:
        ValueError: MissingAssignment, ArityMismatch, NotATree and the like, exactly
            as the run would raise them.
    """
    g = s.graph
    if s.application is Application.FUNCTION:
        install_functions(g, s.assignment, s.noise_sigma)
    elif s.application in (Application.AVERAGE, Application.CONSENSUS):
        install_functions(g, decompose_average(g), s.noise_sigma)
    elif s.application is Application.NEURAL:
        NeuralTree(g, s.length, s.seed)
    elif s.application is Application.RLNC and s.trials > 0 and g.mode is not GraphMode.TREE:
        raise NotATree(f"Recovery experiments run on rooted trees, got a {g.mode.value} graph")


def run_scenario(s: Scenario) -> ScenarioResult:
    """
    Execute T generations of a scenario in topological order under the barrier.

    Args:
        s (Scenario): The resolved scenario.

    Returns:
        ScenarioResult: Metrics, outputs, headline statistic, event counts and
            ordering violations; the full event log when `record_events` is set.
            Identical scenarios give identical results.

    Raises:
        ValueError: For invalid scenarios, propagated from the modules.
        SimulationError: For any unexpected failure while executing.
    """
    logger.info(f"Running {s.name}: {s.application.value} on {s.graph.describe()}, T={s.generations}, seed={s.seed}")
    metrics = Metrics()
    barrier = GenerationBarrier(s.graph, keep_events=s.record_events)
    started = time.perf_counter()
    try:
        headline = _RUNNERS[s.application](s, metrics, barrier)
        barrier.finish()
        success = None
        if s.application is Application.RLNC and s.trials > 0:
            success = run_recovery_experiment(s.graph, s.field_spec, s.n_prime, s.trials, s.seed)
            headline = ("success_probability", success.probability)
    except (ValueError, SimulationError):
        raise
    except Exception as e:
        raise SimulationError(f"Scenario '{s.name}' failed: {e}") from e
    metrics.wall_clock = time.perf_counter() - started

    result = ScenarioResult(
        scenario=s,
        metrics=metrics,
        headline=headline,
        success=success,
        events=barrier.events,
        event_counts=dict(barrier.event_counts),
        order_violations=barrier.violations,
    )
    if result.order_violations:
        logger.error(f"{len(result.order_violations)} evaluations ran ahead of their inputs: {result.order_violations[0]}")
    if metrics.failed_generations:
        logger.warning(f"{len(metrics.failed_generations)} of {s.generations} generations failed")
    logger.info(f"Finished {s.name}: {result.summary()} in {metrics.wall_clock:.3f}s")
    return result


# -- cost comparison -------------------------------------------------------------


@dataclass(frozen=True)
class CostReport:
    nfc_total: int
    forwarding_total: int
    rows: List[list]

    @property
    def ratio(self) -> float:
        """forwarding_total / nfc_total."""
        if self.nfc_total == 0:
            return 1.0 if self.forwarding_total == 0 else math.inf
        return self.forwarding_total / self.nfc_total


def compare_costs(nfc: ScenarioResult, forwarding: ScenarioResult) -> CostReport:
    """
    Communication cost of an NFC run against the raw-forwarding run of the same sources.

    Raises:
        MismatchedScenarios: If the runs differ in graph, generations, packet length
            or seed, or the baseline is not a forwarding run.
    """
    a, b = nfc.scenario, forwarding.scenario
    if b.application is not Application.FORWARDING:
        raise MismatchedScenarios(f"Baseline must be a forwarding run, got {b.application.value}")
    if (a.graph.names, a.graph.arcs) != (b.graph.names, b.graph.arcs):
        raise MismatchedScenarios("Scenarios use different graphs")
    for attribute in ("generations", "length", "seed"):
        if getattr(a, attribute) != getattr(b, attribute):
            raise MismatchedScenarios(
                f"Scenarios differ in {attribute}: {getattr(a, attribute)} vs {getattr(b, attribute)}"
            )

    g = a.graph
    nfc_arcs = nfc.metrics.arc_totals()
    fwd_arcs = forwarding.metrics.arc_totals()
    rows = [[g.name(u), g.name(v), fwd_arcs.get((u, v), 0), nfc_arcs.get((u, v), 0)] for u, v in g.arcs]
    report = CostReport(nfc_total=nfc.metrics.total_symbols, forwarding_total=forwarding.metrics.total_symbols, rows=rows)
    logger.info(f"Forwarding {report.forwarding_total} vs NFC {report.nfc_total} symbols, ratio {report.ratio:.4f}")
    return report


# -- serialisation -----------------------------------------------------------------


def write_results(result: ScenarioResult, out_dir: str, manifest: Dict[str, Any]) -> List[str]:
    """Write the CSV tables and the run manifest; wall-clock time stays out of both."""
    ensure_directory_exists(out_dir)
    g = result.scenario.graph
    m = result.metrics
    paths = [
        write_csv(os.path.join(out_dir, "arc_symbols.csv"), ARC_SYMBOLS_COLUMNS, m.arc_rows(g)),
        write_csv(os.path.join(out_dir, "trajectory.csv"), TRAJECTORY_COLUMNS, m.trajectory),
        write_csv(os.path.join(out_dir, "outputs.csv"), OUTPUT_COLUMNS, m.outputs),
    ]
    if result.success is not None:
        paths.append(write_csv(os.path.join(out_dir, "success.csv"), SUCCESS_COLUMNS, [result.success.as_row()]))

    label, value = result.headline
    body = dict(manifest)
    body["results"] = {
        "total_symbols": m.total_symbols,
        "headline": {"name": label, "value": value},
        "failed_generations": m.failed_generations,
        "dropped_nodes": m.dropped_nodes,
        "lost_messages": m.lost_messages,
        "stale_generations": m.stale_generations,
        "coding_violations": m.coding_violations,
        "clamped_symbols": m.clamped,
        "events": dict(sorted(result.event_counts.items())),
        "order_violations": len(result.order_violations),
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as handle:
        json.dump(body, handle, indent=2, sort_keys=True)
        handle.write("\n")
    paths.append(manifest_path)
    return paths


def write_cost_report(report: CostReport, out_dir: str) -> str:
    ensure_directory_exists(out_dir)
    return write_csv(os.path.join(out_dir, "cost_breakdown.csv"), COST_COLUMNS, report.rows)
