from dataclasses import dataclass
from typing import Dict, List

import galois
import numpy as np

from errors import NotATree
from field.FiniteField import FieldSpec, batch_rank
from graph.NfcGraph import GraphMode, NfcGraph, NodeRole
from utils import get_logger, substream

logger = get_logger(__name__)


@dataclass(frozen=True)
class SuccessStats:
    field_order: int
    N: int
    N_prime: int
    trials: int
    successes: int
    seed: int
    mean_rank: float = 0.0

    @property
    def probability(self) -> float:
        return self.successes / self.trials if self.trials else 0.0

    @property
    def standard_error(self) -> float:
        p = self.probability
        return float(np.sqrt(p * (1 - p) / self.trials)) if self.trials else 0.0

    def as_row(self) -> List:
        return [self.field_order, self.N, self.N_prime, self.trials, self.successes, self.probability, self.seed]


def full_rank_probability(q: int, n: int, rows: int) -> float:
    """Probability that `rows` i.i.d. uniform vectors of GF(q)^n span the space: prod over i < n of (1 - q^(i - rows))."""
    if rows < n:
        return 0.0
    return float(np.prod([1.0 - float(q) ** (i - rows) for i in range(n)]))


def _coding_vectors(
        g: NfcGraph,
        GF,
        trials: int,
        seed: int,
        pass_index: int,
) -> Dict[int, galois.FieldArray]:
    """Global coding vectors of every non-destination node for one pass, all trials at once."""
    vectors: Dict[int, galois.FieldArray] = {}
    for node in g.topological_order:
        role = g.role(node)
        if role is NodeRole.DESTINATION:
            continue
        if role is NodeRole.SOURCE:
            unit = GF.Zeros((trials, g.N))
            unit[:, g.source_position[node]] = 1
            vectors[node] = unit
            continue

        kids = g.in_neighborhood[node]
        rng = substream(seed, node, pass_index, purpose="rlnc-local")
        local = GF(rng.integers(0, GF.order, size=(trials, len(kids)), dtype=np.int64))
        acc = GF.Zeros((trials, g.N))
        for b, kid in enumerate(kids):
            acc = acc + local[:, b:b + 1] * vectors[kid]
        vectors[node] = acc
    return vectors


def run_recovery_experiment(g: NfcGraph, field: FieldSpec, n_prime: int, trials: int, seed: int) -> SuccessStats:
    """
    Estimate the probability that the destination reaches rank N after n_prime passes.

    Only coding vectors are simulated: a decode succeeds exactly when the collected
    coefficient matrix has full column rank, whatever the payloads. Each pass draws
    its local coefficients from the (node, pass) stream, so a run with more passes
    extends a run with fewer and success is monotone in n_prime for a fixed seed.

    Args:
        g (NfcGraph): Tree with a single destination.
        field (FieldSpec): Coding field.
        n_prime (int): Number of sequential passes N'.
        trials (int): Independent repetitions.
        seed (int): Experiment seed.

    Returns:
        SuccessStats: Successes over trials and the mean rank reached.
    """
    if g.mode is not GraphMode.TREE:
        raise NotATree(f"Recovery experiments run on rooted trees, got a {g.mode.value} graph")
    if n_prime < 0 or trials < 0:
        raise ValueError(f"n_prime and trials must be non-negative, got {n_prime} and {trials}")

    dest = g.destinations[0]
    GF = field.gf
    rows = []
    for p in range(n_prime):
        vectors = _coding_vectors(g, GF, trials, seed, p)
        for kid in g.in_neighborhood[dest]:
            rows.append(vectors[kid].view(np.ndarray))

    if rows:
        stack = GF(np.stack(rows, axis=1))
        ranks = batch_rank(stack)
    else:
        ranks = np.zeros(trials, dtype=np.int64)

    successes = int(np.count_nonzero(ranks >= g.N))
    stats = SuccessStats(
        field_order=field.order,
        N=g.N,
        N_prime=n_prime,
        trials=trials,
        successes=successes,
        seed=seed,
        mean_rank=float(ranks.mean()) if trials else 0.0,
    )
    logger.info(
        f"Recovery over {field.describe()}: N={g.N} N'={n_prime} -> {successes}/{trials} "
        f"(p={stats.probability:.4f}, mean rank {stats.mean_rank:.3f})"
    )
    return stats
