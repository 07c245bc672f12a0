"""
A feed-forward network embedded in the NFC tree: every atomic node is a logistic
unit over its children's outputs and the destination is the output unit.

Training alternates an upward pass (activities flow to the destination, every
unit stores its local gradients for the generation) with a downward pass
(gradient contributions flow back to the children, every unit updates its own
weights and drops the stored tuple).
"""
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from afc.functions import sigmoid
from constants import (
    GRADIENT_CHECK_FLOOR,
    GRADIENT_CHECK_STEP,
    LOSS_EPSILON,
    STALENESS_WINDOW,
    WEIGHT_INIT_RANGE,
)
from errors import StaleGeneration
from graph.NfcGraph import NfcGraph, NodeRole
from learning.consensus import StepSchedule
from utils import get_logger, substream

logger = get_logger(__name__)

Arc = Tuple[int, int]


@dataclass(frozen=True)
class FailureModel:
    node_dropout_p: float = 0.0
    message_loss_p: float = 0.0
    downward_delay: int = 0

    def __post_init__(self):
        for name in ("node_dropout_p", "message_loss_p"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.downward_delay < 0:
            raise ValueError(f"downward_delay must be >= 0, got {self.downward_delay}")


NO_FAILURES = FailureModel()


@dataclass(frozen=True)
class TrainingSample:
    """Per-source inputs (N, L) and a label in {-1, +1}."""

    x: np.ndarray
    y: int

    def __post_init__(self):
        if self.y not in (-1, 1):
            raise ValueError(f"Labels must be -1 or +1, got {self.y}")
        x = np.asarray(self.x, dtype=np.float64)
        # one symbol per source when given a flat vector
        object.__setattr__(self, "x", x.reshape(-1, 1) if x.ndim <= 1 else x)

    @property
    def target(self) -> int:
        """Label on the {0, 1} scale of the log-loss."""
        return (self.y + 1) // 2


@dataclass(frozen=True)
class GradientTuple:
    t: int
    d_weights: np.ndarray
    d_inputs: np.ndarray
    x_out: float


@dataclass
class NeuralNode:
    node: int
    level: int
    weights: np.ndarray
    # children in in-neighbourhood order with the slice of the weight vector each one feeds
    slots: Tuple[Tuple[int, slice], ...]
    store: Dict[int, GradientTuple] = field(default_factory=dict)


def nn_upward_gradients(
        unit: NeuralNode,
        x_in: np.ndarray,
        x_out: float,
        t: int,
        window: int = STALENESS_WINDOW,
) -> GradientTuple:
    """
    Store (t, dx/dw, dx/dx_in) for generation t: x(1-x) * x_in and x(1-x) * w.

    Tuples at least `window` generations older than t are evicted.
    """
    slope = x_out * (1.0 - x_out)
    entry = GradientTuple(t=t, d_weights=slope * x_in, d_inputs=slope * unit.weights, x_out=x_out)
    for old in [k for k in unit.store if t - k >= window]:
        del unit.store[old]
    unit.store[t] = entry
    return entry


@dataclass
class ForwardResult:
    activities: Dict[int, np.ndarray]
    prediction: float
    dropped: Set[int]
    messages: List[Tuple[Arc, int]] = field(default_factory=list)


@dataclass
class DownwardReport:
    t: int
    updated: Set[int] = field(default_factory=set)
    stale: Set[int] = field(default_factory=set)
    lost_messages: int = 0
    messages: List[Tuple[Arc, int]] = field(default_factory=list)
    gradients: Dict[int, np.ndarray] = field(default_factory=dict)


class NeuralTree:
    """
    Logistic units on every non-source node of g; sources feed their raw L-vectors.

    Args:
        g (NfcGraph): Graph with exactly one destination, the output unit.
        length (int): Symbols per source packet L.
        seed (int): Seeds the uniform [-0.5, 0.5] weight initialisation.
        window (int): Staleness window for stored gradient tuples.
    """

    def __init__(self, g: NfcGraph, length: int = 1, seed: int = 0, window: int = STALENESS_WINDOW):
        if g.R != 1:
            raise ValueError(f"A neural tree needs exactly one output node, found {g.R} destinations")
        self.graph = g
        self.length = length
        self.window = window
        self.output = g.destinations[0]
        self.units: Dict[int, NeuralNode] = {}
        # dropped units per generation still awaiting its downward pass
        self.dropped: Dict[int, Set[int]] = {}

        levels = g.levels
        for node in g.topological_order:
            if g.role(node) is NodeRole.SOURCE:
                continue
            slots = []
            offset = 0
            for kid in g.in_neighborhood[node]:
                width = length if g.role(kid) is NodeRole.SOURCE else 1
                slots.append((kid, slice(offset, offset + width)))
                offset += width
            rng = substream(seed, node, purpose="weight-init")
            weights = rng.uniform(-WEIGHT_INIT_RANGE, WEIGHT_INIT_RANGE, size=offset)
            self.units[node] = NeuralNode(node=node, level=levels[node], weights=weights, slots=tuple(slots))

    @property
    def depth(self) -> int:
        return max(unit.level for unit in self.units.values())

    def weights(self) -> Dict[int, np.ndarray]:
        return {node: unit.weights.copy() for node, unit in self.units.items()}

    def set_weights(self, weights: Dict[int, np.ndarray]) -> None:
        for node, w in weights.items():
            w = np.asarray(w, dtype=np.float64)
            if w.shape != self.units[node].weights.shape:
                raise ValueError(
                    f"Node '{self.graph.name(node)}' expects {self.units[node].weights.size} weights, got {w.size}"
                )
            self.units[node].weights = w.copy()

    def _inputs(self, unit: NeuralNode, activities: Dict[int, np.ndarray]) -> np.ndarray:
        return np.concatenate([np.atleast_1d(activities[kid]) for kid, _ in unit.slots])

    def activity(self, x: np.ndarray) -> float:
        """Root activity for inputs x with current weights; nothing is stored."""
        g = self.graph
        x = np.asarray(x, dtype=np.float64)
        if x.ndim <= 1:
            x = x.reshape(-1, 1)
        activities = {s: x[g.source_position[s]] for s in g.sources}
        for node in g.topological_order:
            unit = self.units.get(node)
            if unit is not None:
                activities[node] = np.array([sigmoid(unit.weights @ self._inputs(unit, activities))])
        return float(activities[self.output][0])

    def purge(self, t: int) -> None:
        for unit in self.units.values():
            unit.store.pop(t, None)
        self.dropped.pop(t, None)


def log_loss(prediction: float, target: int) -> float:
    x = float(np.clip(prediction, LOSS_EPSILON, 1.0 - LOSS_EPSILON))
    return -(target * np.log(x) + (1 - target) * np.log(1.0 - x))


def nn_forward(
        network: NeuralTree,
        sample: TrainingSample,
        failures: FailureModel = NO_FAILURES,
        t: int = 0,
        seed: int = 0,
) -> ForwardResult:
    """
    Upward pass for generation t: x = sigmoid(w . x_in) level by level.

    Hidden units drop out with node_dropout_p, drawn from their own (node, t)
    stream; a dropped unit outputs 0, stores nothing and sends no message.
    """
    g = network.graph
    x = sample.x
    if x.shape != (g.N, network.length):
        raise ValueError(f"Sample has shape {x.shape}, network expects {(g.N, network.length)}")

    activities: Dict[int, np.ndarray] = {s: x[g.source_position[s]] for s in g.sources}
    dropped: Set[int] = set()
    messages: List[Tuple[Arc, int]] = []
    for s in g.sources:
        for head in g.out_neighborhood[s]:
            messages.append(((s, head), network.length))

    for node in g.topological_order:
        unit = network.units.get(node)
        if unit is None:
            continue
        if g.role(node) is NodeRole.ATOMIC and failures.node_dropout_p > 0:
            if substream(seed, node, t, purpose="dropout").random() < failures.node_dropout_p:
                dropped.add(node)
                activities[node] = np.zeros(1)
                continue

        x_in = network._inputs(unit, activities)
        x_out = float(sigmoid(unit.weights @ x_in))
        activities[node] = np.array([x_out])
        nn_upward_gradients(unit, x_in, x_out, t, network.window)
        for head in g.out_neighborhood[node]:
            messages.append(((node, head), 1))

    network.dropped[t] = dropped
    return ForwardResult(
        activities=activities,
        prediction=float(activities[network.output][0]),
        dropped=dropped,
        messages=messages,
    )


def _take_tuple(network: NeuralTree, node: int, t: int) -> GradientTuple:
    entry = network.units[node].store.get(t)
    if entry is None:
        raise StaleGeneration(network.graph.name(node), t)
    return entry


def _backpropagate(network: NeuralTree, y: int, t: int, failures: FailureModel, seed: int) -> DownwardReport:
    """Assemble dJ/dw for every reachable unit from stored tuples and delta messages."""
    g = network.graph
    report = DownwardReport(t=t)
    dropped = network.dropped.get(t, set())
    target = (y + 1) // 2

    upstream: Dict[int, float] = {}
    try:
        top = _take_tuple(network, network.output, t)
    except StaleGeneration as e:
        logger.debug(str(e))
        report.stale.add(network.output)
        return report
    x = float(np.clip(top.x_out, LOSS_EPSILON, 1.0 - LOSS_EPSILON))
    upstream[network.output] = -target / x + (1 - target) / (1 - x)

    for node in reversed(g.topological_order):
        if node not in upstream:
            continue
        try:
            entry = _take_tuple(network, node, t)
        except StaleGeneration as e:
            logger.debug(str(e))
            report.stale.add(node)
            continue

        grad = upstream[node]
        report.gradients[node] = grad * entry.d_weights
        unit = network.units[node]
        for kid, span in unit.slots:
            if g.role(kid) is NodeRole.SOURCE or kid in dropped:
                continue
            report.messages.append(((kid, node), 1))
            if failures.message_loss_p > 0:
                rng = substream(seed, node, kid, t, purpose="message-loss")
                if rng.random() < failures.message_loss_p:
                    report.lost_messages += 1
                    continue
            delta = grad * float(entry.d_inputs[span][0])
            upstream[kid] = upstream.get(kid, 0.0) + delta
    return report


def nn_downward_pass(
        network: NeuralTree,
        y: int,
        t: int,
        eta: float,
        failures: FailureModel = NO_FAILURES,
        seed: int = 0,
) -> DownwardReport:
    """
    Downward pass for generation t with step size eta.

    The output unit seeds dJ/dx = -y/x + (1-y)/(1-x); each unit sends
    delta[k] = dJ/dx * x(1-x) * w[k] to every non-dropped child unit k, applies
    w -= eta * dJ/dx * x(1-x) * x_in, and the generation's tuples are purged.
    A lost delta drops one summand of the child's accumulated gradient; a unit
    whose tuple was evicted skips its update and is reported as stale.
    """
    report = _backpropagate(network, y, t, failures, seed)
    for node, gradient in report.gradients.items():
        network.units[node].weights = network.units[node].weights - eta * gradient
        report.updated.add(node)
    network.purge(t)
    return report


@dataclass
class LossRecord:
    generation: int
    value: float
    dropped_nodes: int
    lost_messages: int

    def as_row(self) -> List:
        return [self.generation, self.value, self.dropped_nodes, self.lost_messages]


@dataclass
class TrainingResult:
    losses: List[LossRecord]
    initial_loss: float
    final_loss: float
    weights: Dict[int, np.ndarray]
    stale_generations: int = 0


def dataset_loss(network: NeuralTree, dataset: Sequence[TrainingSample]) -> float:
    """Mean log-loss over the dataset with the current weights and no failures."""
    if not dataset:
        return 0.0
    return float(np.mean([log_loss(network.activity(s.x), s.target) for s in dataset]))


def nn_predict(network: NeuralTree, x: np.ndarray) -> int:
    return 1 if network.activity(x) >= 0.5 else -1


def nn_train(
        network: NeuralTree,
        dataset: Sequence[TrainingSample],
        epochs: int,
        schedule: StepSchedule,
        failures: FailureModel = NO_FAILURES,
        seed: int = 0,
        on_generation: Optional[Callable[[int, Optional[ForwardResult], List[DownwardReport]], None]] = None,
) -> TrainingResult:
    """
    Stochastic gradient descent on the log-loss, one upward/downward cycle per sample.

    Generation t counts samples across epochs. With a downward delay d the
    downward pass for generation t runs after the upward pass of t + d; pending
    passes are flushed at the end.

    Returns:
        TrainingResult: Per-generation loss (as seen during the upward pass), the
            failure-free mean dataset loss before and after training, and the weights.
    """
    logger.debug("Labels -1/+1 map to log-loss targets 0/1")
    initial = dataset_loss(network, dataset)
    losses: List[LossRecord] = []
    pending = deque()
    stale = 0

    def run_downward(entry) -> DownwardReport:
        nonlocal stale
        t_done, label = entry
        report = nn_downward_pass(network, label, t_done, schedule(t_done), failures, seed)
        if report.stale:
            stale += 1
        return report

    t = 0
    for _ in range(epochs):
        for sample in dataset:
            forward = nn_forward(network, sample, failures, t, seed)
            pending.append((t, sample.y))
            reports = []
            while pending and pending[0][0] <= t - failures.downward_delay:
                reports.append(run_downward(pending.popleft()))

            record = LossRecord(
                generation=t,
                value=log_loss(forward.prediction, sample.target),
                dropped_nodes=len(forward.dropped),
                lost_messages=sum(r.lost_messages for r in reports),
            )
            losses.append(record)
            if on_generation is not None:
                on_generation(t, forward, reports)
            t += 1

    while pending:
        report = run_downward(pending.popleft())
        if losses:
            losses[-1].lost_messages += report.lost_messages
        if on_generation is not None:
            on_generation(t - 1, None, [report])

    final = dataset_loss(network, dataset)
    if stale:
        logger.warning(f"{stale} downward passes hit evicted gradient tuples")
    return TrainingResult(losses=losses, initial_loss=initial, final_loss=final, weights=network.weights(), stale_generations=stale)


def gradient_check(network: NeuralTree, sample: TrainingSample, step: float = GRADIENT_CHECK_STEP) -> float:
    """
    Largest relative error between the message-passing gradient and central
    differences of the log-loss over every weight of every unit.
    """
    scratch = -1
    nn_forward(network, sample, NO_FAILURES, scratch)
    report = _backpropagate(network, sample.y, scratch, NO_FAILURES, seed=0)
    network.purge(scratch)

    worst = 0.0
    for node, unit in network.units.items():
        analytic = report.gradients.get(node, np.zeros_like(unit.weights))
        original = unit.weights.copy()
        for i in range(original.size):
            bumped = original.copy()
            bumped[i] += step
            unit.weights = bumped
            upper = log_loss(network.activity(sample.x), sample.target)
            bumped[i] -= 2 * step
            lower = log_loss(network.activity(sample.x), sample.target)
            unit.weights = original
            numeric = (upper - lower) / (2 * step)
            error = abs(analytic[i] - numeric) / max(abs(analytic[i]), abs(numeric), GRADIENT_CHECK_FLOOR)
            worst = max(worst, error)
    return worst


def separable_dataset(g: NfcGraph, size: int, seed: int, length: int = 1) -> List[TrainingSample]:
    """
    Inputs uniform in [-1, 1]; label +1 when the first half of the sources outweighs
    the second half. The rule needs no bias term in any unit.
    """
    rng = substream(seed, purpose="separable-dataset")
    half = g.N // 2
    samples = []
    for _ in range(size):
        x = rng.uniform(-1.0, 1.0, size=(g.N, length))
        margin = x[:half].sum() - x[half:].sum()
        samples.append(TrainingSample(x=x, y=1 if margin > 0 else -1))
    return samples
