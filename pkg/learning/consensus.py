"""
Consensus stochastic gradient: every generation the network computes the mean of
the source samples and the destination moves its estimate towards it.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, List, Optional

import numpy as np

from afc.FunctionProcessor import ConfiguredNetwork, NetworkOutput, decompose_average, install_functions
from afc.functions import Packet
from graph.NfcGraph import NfcGraph
from utils import get_logger, substream

logger = get_logger(__name__)


class ScheduleKind(str, Enum):
    INVERSE = "inverse"
    CONSTANT = "constant"
    INVERSE_SQRT = "inverse_sqrt"


@dataclass(frozen=True)
class StepSchedule:
    """Step size per generation; `inverse` (1/(t+1)) turns the consensus update into an exact running average."""

    kind: ScheduleKind = ScheduleKind.INVERSE
    eta0: float = 1.0

    def __post_init__(self):
        if self.eta0 <= 0:
            raise ValueError(f"eta0 must be positive, got {self.eta0}")

    @classmethod
    def parse(cls, kind: str, eta0: float = 1.0) -> "StepSchedule":
        return cls(ScheduleKind(kind), float(eta0))

    def __call__(self, t: int) -> float:
        if self.kind is ScheduleKind.INVERSE:
            return self.eta0 / (t + 1)
        if self.kind is ScheduleKind.INVERSE_SQRT:
            return self.eta0 / np.sqrt(t + 1)
        return self.eta0


@dataclass(frozen=True)
class ConsensusState:
    w: np.ndarray
    t: int = 0
    schedule: StepSchedule = field(default_factory=StepSchedule)

    def __post_init__(self):
        if self.t < 0:
            raise ValueError(f"Generation counter must be >= 0, got {self.t}")
        if not np.all(np.isfinite(self.w)):
            raise ValueError("Consensus estimate must be finite")

    @classmethod
    def start(cls, initial, schedule: Optional[StepSchedule] = None) -> "ConsensusState":
        return cls(np.atleast_1d(np.asarray(initial, dtype=np.float64)), 0, schedule or StepSchedule())

    @property
    def estimate(self):
        return float(self.w[0]) if self.w.shape == (1,) else self.w


def consensus_step(state: ConsensusState, sample_mean) -> ConsensusState:
    """
    w <- w - eta_t * (w - mean_t).

    With the inverse schedule and eta0 = 1 this is t/(t+1) * w + 1/(t+1) * mean, so the
    initial estimate is erased after the first step.
    """
    mean = np.broadcast_to(np.asarray(sample_mean, dtype=np.float64), state.w.shape)
    t = state.t
    if state.schedule.kind is ScheduleKind.INVERSE and state.schedule.eta0 == 1.0:
        w = (t / (t + 1)) * state.w + (1.0 / (t + 1)) * mean
    else:
        eta = state.schedule(t)
        w = state.w - eta * (state.w - mean)
    return ConsensusState(w=w, t=t + 1, schedule=state.schedule)


@dataclass
class ConsensusTrajectory:
    states: List[ConsensusState] = field(default_factory=list)
    means: List[np.ndarray] = field(default_factory=list)

    @property
    def final(self) -> ConsensusState:
        return self.states[-1]

    def running_average(self) -> List[np.ndarray]:
        """Mean of the first t sample means for t = 1..T, the exact target of the inverse schedule."""
        totals = np.cumsum(np.stack(self.means), axis=0) if self.means else np.empty((0,))
        return [totals[t - 1] / t for t in range(1, len(self.means) + 1)]


def average_network(g: NfcGraph) -> ConfiguredNetwork:
    return install_functions(g, decompose_average(g))


def consensus_run(
        g: NfcGraph,
        samples: Iterable[np.ndarray],
        T: int,
        initial=0.0,
        schedule: Optional[StepSchedule] = None,
        seed: int = 0,
        on_generation: Optional[Callable[[int, NetworkOutput], None]] = None,
) -> ConsensusTrajectory:
    """
    Run T generations of consensus SGD over the average decomposition of g.

    Args:
        g (NfcGraph): Rooted tree.
        samples (Iterable[np.ndarray]): One (N, Q) array per generation, rows in source order.
        T (int): Number of generations.
        initial: Starting estimate w^(0), scalar or length Q.
        schedule (Optional[StepSchedule]): Step sizes; defaults to the inverse schedule.
        seed (int): Scenario seed, forwarded to the network evaluation.
        on_generation: Called with (t, network output) after each generation is computed.

    Returns:
        ConsensusTrajectory: States w^(0)..w^(T) and the network-computed means.
    """
    network = average_network(g)
    dest = g.destinations[0]
    state = ConsensusState.start(initial, schedule)
    trajectory = ConsensusTrajectory(states=[state])

    iterator = iter(samples)
    for t in range(T):
        try:
            sample = np.asarray(next(iterator), dtype=np.float64)
        except StopIteration:
            raise ValueError(f"Sample stream ended after {t} of {T} generations") from None
        if sample.ndim == 1:
            sample = sample[:, None]

        packets = {s: Packet.real(sample[g.source_position[s]]) for s in g.sources}
        output = network.evaluate(packets, seed=seed, generation=t)
        mean = output.outputs[dest].symbols
        if on_generation is not None:
            on_generation(t, output)

        state = consensus_step(state, mean)
        trajectory.states.append(state)
        trajectory.means.append(mean)

    if T:
        logger.debug(f"Consensus after {T} generations: {trajectory.final.estimate}")
    return trajectory


def normal_samples(n_sources: int, length: int, mean: float, std: float, seed: int):
    """Endless stream of (N, length) normal source samples, one stream per generation."""
    t = 0
    while True:
        yield substream(seed, t, purpose="consensus-samples").normal(mean, std, size=(n_sources, length))
        t += 1
