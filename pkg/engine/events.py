from collections import Counter
from typing import Any, Dict, List, Set, Tuple, Union

from pydantic import BaseModel, ConfigDict

from errors import SimulationError
from graph.NfcGraph import NfcGraph


class Event(BaseModel):
    model_config = ConfigDict(frozen=True)

    generation: int
    # coding pass or message direction inside one generation
    round: int = 0


class DeliverEvent(Event):
    tail: int
    head: int


class EvaluateEvent(Event):
    node: int
    inputs: Tuple[int, ...]


class DropEvent(Event):
    node: int


EngineEvent = Union[DeliverEvent, EvaluateEvent, DropEvent]


class GenerationBarrier:
    """
    Per-node input buffers keyed by (child, generation, round).

    A node may evaluate generation t only once every child that was not dropped
    in t has delivered its generation-t message for that round. A drop holds for
    every round of its generation.

    Events of a generation are audited when the generation is released. The
    counts and any ordering violations are always kept; the events themselves
    are appended to `events` only when `keep_events` is set.
    """

    def __init__(self, g: NfcGraph, keep_events: bool = False):
        self.graph = g
        self.keep_events = keep_events
        self.buffers: Dict[Tuple[int, int, int], Dict[int, Any]] = {}
        self.dropped: Dict[int, Set[int]] = {}
        self.events: List[EngineEvent] = []
        self.event_counts: Counter = Counter()
        self.violations: List[str] = []
        self._pending: List[EngineEvent] = []

    def _record(self, event: EngineEvent) -> None:
        self._pending.append(event)
        self.event_counts[type(event).__name__] += 1

    def deliver(self, generation: int, tail: int, head: int, message: Any, round: int = 0) -> None:
        buffer = self.buffers.setdefault((head, generation, round), {})
        if tail in buffer:
            raise SimulationError(
                f"Duplicate generation-{generation} message from '{self.graph.name(tail)}' to '{self.graph.name(head)}'"
            )
        buffer[tail] = message
        self._record(DeliverEvent(generation=generation, round=round, tail=tail, head=head))

    def drop(self, generation: int, node: int) -> None:
        self.dropped.setdefault(generation, set()).add(node)
        self._record(DropEvent(generation=generation, node=node))

    def is_dropped(self, generation: int, node: int) -> bool:
        return node in self.dropped.get(generation, ())

    def required(self, node: int, generation: int) -> List[int]:
        return [kid for kid in self.graph.in_neighborhood[node] if not self.is_dropped(generation, kid)]

    def ready(self, node: int, generation: int, round: int = 0) -> bool:
        buffer = self.buffers.get((node, generation, round), {})
        return all(kid in buffer for kid in self.required(node, generation))

    def collect(self, node: int, generation: int, round: int = 0) -> Dict[int, Any]:
        """Hand the buffered generation-t inputs to the node and release the buffer."""
        if not self.ready(node, generation, round):
            waiting = [self.graph.name(k) for k in self.required(node, generation)
                       if k not in self.buffers.get((node, generation, round), {})]
            raise SimulationError(f"Node '{self.graph.name(node)}' evaluated generation {generation} before {waiting} delivered")
        inputs = self.buffers.pop((node, generation, round), {})
        self._record(EvaluateEvent(generation=generation, round=round, node=node, inputs=tuple(sorted(inputs))))
        return inputs

    def release(self, generation: int) -> None:
        """Forget generation t and audit the events recorded since the last release."""
        self.dropped.pop(generation, None)
        for key in [k for k in self.buffers if k[1] == generation]:
            del self.buffers[key]
        self.finish()

    def finish(self) -> None:
        if not self._pending:
            return
        self.violations.extend(audit_event_order(self.graph, self._pending))
        if self.keep_events:
            self.events.extend(self._pending)
        self._pending = []


def audit_event_order(g: NfcGraph, events: List[EngineEvent]) -> List[str]:
    """
    Replay an event log and list every evaluation that happened before one of its
    required inputs was delivered. An empty list means the barrier held.
    """
    delivered: Set[Tuple[int, int, int, int]] = set()
    dropped: Set[Tuple[int, int]] = set()
    problems = []
    for event in events:
        if isinstance(event, DeliverEvent):
            delivered.add((event.generation, event.round, event.tail, event.head))
        elif isinstance(event, DropEvent):
            dropped.add((event.generation, event.node))
        elif isinstance(event, EvaluateEvent):
            for kid in g.in_neighborhood[event.node]:
                if (event.generation, kid) in dropped:
                    continue
                if (event.generation, event.round, kid, event.node) not in delivered:
                    problems.append(
                        f"generation {event.generation}: '{g.name(event.node)}' evaluated before '{g.name(kid)}' delivered"
                    )
    return problems
