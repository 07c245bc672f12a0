"""
Atomic functions: digital evaluation inside a node (D-AFC) and simulated
superposition over a multiple-access channel (A-AFC).
"""
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import galois
import numpy as np

from errors import ArityMismatch, DomainError, DomainMismatch
from utils import get_logger

logger = get_logger(__name__)


class Domain(str, Enum):
    FIELD = "field"
    REAL = "real"


@dataclass(frozen=True)
class Packet:
    """
    A length-L symbol vector. Field packets hold a galois array, real packets float64.

    `count` is the number of source packets aggregated into this one (the count
    symbol of an average decomposition); `clamped` counts histogram symbols that
    fell outside the bin range.
    """

    symbols: np.ndarray
    domain: Domain
    count: int = 1
    clamped: int = 0

    @classmethod
    def real(cls, values, count: int = 1) -> "Packet":
        return cls(np.asarray(values, dtype=np.float64).reshape(-1), Domain.REAL, count)

    @classmethod
    def field(cls, values: galois.FieldArray, count: int = 1) -> "Packet":
        if not isinstance(values, galois.FieldArray):
            raise DomainMismatch("Field packets need galois field symbols")
        return cls(values.reshape(-1), Domain.FIELD, count)

    @property
    def length(self) -> int:
        return int(self.symbols.shape[0])

    def as_real(self) -> np.ndarray:
        """Integer/real interpretation of the symbols."""
        if self.domain is Domain.FIELD:
            return np.asarray(self.symbols.view(np.ndarray), dtype=np.float64)
        return self.symbols

    def __eq__(self, other) -> bool:
        if not isinstance(other, Packet):
            return NotImplemented
        if self.domain is not other.domain or self.length != other.length:
            return False
        if self.domain is Domain.FIELD and type(self.symbols) is not type(other.symbols):
            return False
        return bool(np.array_equal(np.asarray(self.symbols), np.asarray(other.symbols))) and self.count == other.count



class FunctionKind(str, Enum):
    LINEAR_COMBINATION = "linear_combination"
    SUM = "sum"
    MAX = "max"
    MIN = "min"
    HISTOGRAM = "histogram"
    AVERAGE = "average"
    NOMOGRAPHIC = "nomographic"
    IDENTITY = "identity"
    NEURON = "neuron"


@dataclass(frozen=True)
class NomographicForm:
    """
    post(sum of h[s] * pre[s](x[s])) realised over a superposition channel.

    Each transmitter sends pre[s](x) / h[s] so that the channel gain h[s] restores pre[s](x)
    at the receiver; the gains are known when the function is designed.
    """

    name: str
    pre_functions: Tuple[Callable[[np.ndarray], np.ndarray], ...]
    channel_coefficients: Tuple[float, ...]
    post_function: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        if len(self.pre_functions) != len(self.channel_coefficients):
            raise ArityMismatch(
                f"{len(self.pre_functions)} pre-functions for {len(self.channel_coefficients)} channel coefficients"
            )
        if any(h == 0 for h in self.channel_coefficients):
            raise ValueError(f"Channel coefficients must be nonzero: {self.channel_coefficients}")

    @property
    def arity(self) -> int:
        return len(self.pre_functions)


def _identity(x):
    return x


def mean_form(channel: Sequence[float]) -> NomographicForm:
    n = len(channel)
    return NomographicForm("mean", (_identity,) * n, tuple(channel), lambda r: r / n)


def sum_form(channel: Sequence[float]) -> NomographicForm:
    return NomographicForm("sum", (_identity,) * len(channel), tuple(channel), _identity)


def euclidean_norm_form(channel: Sequence[float]) -> NomographicForm:
    return NomographicForm("euclidean_norm", (np.square,) * len(channel), tuple(channel), np.sqrt)


def geometric_mean_form(channel: Sequence[float]) -> NomographicForm:
    n = len(channel)
    return NomographicForm("geometric_mean", (np.log,) * n, tuple(channel), lambda r: np.exp(r / n))


NOMOGRAPHIC_PRESETS = {
    "mean": mean_form,
    "sum": sum_form,
    "euclidean_norm": euclidean_norm_form,
    "geometric_mean": geometric_mean_form,
}


@dataclass(frozen=True)
class AtomicFunctionSpec:
    kind: FunctionKind
    arity: int
    coefficients: Optional[Tuple[int, ...]] = None
    bins: Optional[int] = None
    nomographic: Optional[NomographicForm] = None
    weights: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.arity < 1:
            raise ArityMismatch(f"{self.kind.value} needs at least one input")
        if self.kind is FunctionKind.LINEAR_COMBINATION:
            if self.coefficients is None or len(self.coefficients) != self.arity:
                raise ArityMismatch(f"linear combination of arity {self.arity} needs {self.arity} coefficients")
        if self.kind is FunctionKind.HISTOGRAM and (self.bins is None or self.bins < 1):
            raise ValueError("histogram needs bins >= 1")
        if self.kind is FunctionKind.NOMOGRAPHIC:
            if self.nomographic is None or self.nomographic.arity != self.arity:
                raise ArityMismatch(f"nomographic form must have arity {self.arity}")
        if self.kind is FunctionKind.NEURON and (self.weights is None or len(self.weights) != self.arity):
            raise ArityMismatch(f"neuron of arity {self.arity} needs {self.arity} weights")
        if self.kind is FunctionKind.IDENTITY and self.arity != 1:
            raise ArityMismatch("identity takes exactly one input")

    @property
    def is_analog(self) -> bool:
        return self.kind is FunctionKind.NOMOGRAPHIC

    @classmethod
    def linear_combination(cls, coefficients: Sequence[int]) -> "AtomicFunctionSpec":
        return cls(FunctionKind.LINEAR_COMBINATION, len(coefficients), coefficients=tuple(coefficients))

    @classmethod
    def simple(cls, kind: str, arity: int) -> "AtomicFunctionSpec":
        return cls(FunctionKind(kind), arity)

    @classmethod
    def histogram(cls, arity: int, bins: int) -> "AtomicFunctionSpec":
        return cls(FunctionKind.HISTOGRAM, arity, bins=bins)

    @classmethod
    def nomographic_preset(cls, name: str, channel: Sequence[float]) -> "AtomicFunctionSpec":
        try:
            form = NOMOGRAPHIC_PRESETS[name](channel)
        except KeyError:
            raise ValueError(f"Unknown nomographic preset '{name}', expected one of {sorted(NOMOGRAPHIC_PRESETS)}") from None
        return cls(FunctionKind.NOMOGRAPHIC, len(channel), nomographic=form)

    @classmethod
    def neuron(cls, weights: Sequence[float]) -> "AtomicFunctionSpec":
        return cls(FunctionKind.NEURON, len(weights), weights=tuple(float(w) for w in weights))

    def restrict(self, slots: Sequence[int]) -> "AtomicFunctionSpec":
        """The same function over a subset of its inputs, given by input position."""
        slots = list(slots)
        if not slots:
            raise ArityMismatch(f"{self.kind.value} restricted to no inputs")
        if len(slots) == self.arity:
            return self
        if self.kind is FunctionKind.IDENTITY:
            raise ArityMismatch("identity cannot be restricted")
        changes = {"arity": len(slots)}
        if self.coefficients is not None:
            changes["coefficients"] = tuple(self.coefficients[i] for i in slots)
        if self.weights is not None:
            changes["weights"] = tuple(self.weights[i] for i in slots)
        if self.nomographic is not None:
            form = self.nomographic
            changes["nomographic"] = replace(
                form,
                pre_functions=tuple(form.pre_functions[i] for i in slots),
                channel_coefficients=tuple(form.channel_coefficients[i] for i in slots),
            )
        return replace(self, **changes)


def _check_inputs(spec: AtomicFunctionSpec, inputs: Sequence[Packet]) -> None:
    if len(inputs) != spec.arity:
        raise ArityMismatch(f"{spec.kind.value} expects {spec.arity} inputs, got {len(inputs)}")
    lengths = {p.length for p in inputs}
    if len(lengths) > 1:
        raise DomainMismatch(f"Input packets have different lengths: {sorted(lengths)}")
    domains = {p.domain for p in inputs}
    if len(domains) > 1:
        raise DomainMismatch("Input packets mix field and real symbols")
    if Domain.FIELD in domains and len({type(p.symbols) for p in inputs}) > 1:
        raise DomainMismatch("Input packets come from different fields")


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def eval_dafc(spec: AtomicFunctionSpec, inputs: Sequence[Packet]) -> Packet:
    """
    Evaluate a digital atomic function symbol-wise over the input packets.

    Linear combinations stay in the packets' domain (field arithmetic for field
    packets); Sum, Max, Min, Average and Histogram use the integer/real reading of
    the symbols and return real packets. Average divides by the total count, so
    feeding it (partial_sum, count) packets yields the mean over all sources.

    Raises:
        ArityMismatch: Wrong number of inputs.
        DomainMismatch: Mixed lengths, domains or fields, or a nomographic spec.
    """
    _check_inputs(spec, inputs)
    kind = spec.kind
    total = sum(p.count for p in inputs)

    if kind is FunctionKind.NOMOGRAPHIC:
        raise DomainMismatch("Nomographic functions are evaluated over the channel, use eval_aafc")

    if kind is FunctionKind.IDENTITY:
        return inputs[0]

    if kind is FunctionKind.LINEAR_COMBINATION:
        if inputs[0].domain is Domain.FIELD:
            GF = type(inputs[0].symbols)
            coefficients = GF(np.asarray(spec.coefficients, dtype=np.int64) % GF.order)
            acc = GF.Zeros(inputs[0].length)
            for c, p in zip(coefficients, inputs):
                acc = acc + c * p.symbols
            return Packet.field(acc, count=total)
        acc = sum(float(c) * p.symbols for c, p in zip(spec.coefficients, inputs))
        return Packet.real(acc, count=total)

    stacked = np.stack([p.as_real() for p in inputs])

    if kind is FunctionKind.SUM:
        return Packet.real(stacked.sum(axis=0), count=total)
    if kind is FunctionKind.MAX:
        return Packet.real(stacked.max(axis=0), count=total)
    if kind is FunctionKind.MIN:
        return Packet.real(stacked.min(axis=0), count=total)
    if kind is FunctionKind.AVERAGE:
        return Packet.real(stacked.sum(axis=0) / total, count=total)
    if kind is FunctionKind.NEURON:
        weights = np.asarray(spec.weights, dtype=np.float64)
        return Packet.real(sigmoid(weights @ stacked), count=total)
    if kind is FunctionKind.HISTOGRAM:
        counts, clamped = histogram_counts(stacked, spec.bins)
        if clamped:
            logger.debug(f"Histogram clamped {clamped} out-of-range symbols to edge bins")
        return Packet(counts, Domain.REAL, count=total, clamped=clamped + sum(p.clamped for p in inputs))

    raise ValueError(f"Unsupported atomic function {kind}")


def histogram_counts(symbols: np.ndarray, bins: int) -> Tuple[np.ndarray, int]:
    """Counts over integer bins [0, bins); out-of-range symbols land in the edge bins."""
    values = np.rint(np.asarray(symbols, dtype=np.float64).reshape(-1)).astype(np.int64)
    clamped = int(np.count_nonzero((values < 0) | (values >= bins)))
    counts = np.bincount(np.clip(values, 0, bins - 1), minlength=bins).astype(np.float64)
    return counts, clamped


def eval_aafc(
        spec: AtomicFunctionSpec,
        inputs: Sequence[Packet],
        noise_sigma: float,
        rng: np.random.Generator,
) -> Packet:
    """
    Simulate one A-AFC: the receiver sees the superposed pre-processed symbols plus noise and applies post.

    Args:
        spec (AtomicFunctionSpec): A nomographic spec.
        inputs (Sequence[Packet]): Real packets of equal length, one per transmitter.
        noise_sigma (float): Standard deviation of the receiver noise (>= 0).
        rng (np.random.Generator): Stream owned by the caller for the noise draws.

    Returns:
        Packet: The real output packet.

    Raises:
        DomainError: If a pre- or post-processing function is undefined at the given values.
        DomainMismatch: For field packets or a non-nomographic spec.
    """
    if spec.kind is not FunctionKind.NOMOGRAPHIC:
        raise DomainMismatch(f"{spec.kind.value} is not a nomographic function")
    _check_inputs(spec, inputs)
    if any(p.domain is not Domain.REAL for p in inputs):
        raise DomainMismatch("Analog computation needs real packets")
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")

    form = spec.nomographic
    length = inputs[0].length
    with np.errstate(all="ignore"):
        received = np.zeros(length, dtype=np.float64)
        for phi, h, packet in zip(form.pre_functions, form.channel_coefficients, inputs):
            transmitted = phi(packet.symbols) / h
            if not np.all(np.isfinite(transmitted)):
                raise DomainError(f"{form.name}: pre-function undefined at {packet.symbols.tolist()}")
            received = received + h * transmitted

        if noise_sigma > 0:
            received = received + rng.normal(0.0, noise_sigma, size=length)

        output = form.post_function(received)
    if not np.all(np.isfinite(output)):
        raise DomainError(f"{form.name}: post-function undefined at {received.tolist()}")

    return Packet.real(output, count=sum(p.count for p in inputs))


def evaluate(
        spec: AtomicFunctionSpec,
        inputs: List[Packet],
        noise_sigma: float = 0.0,
        rng: Optional[np.random.Generator] = None,
) -> Packet:
    if spec.is_analog:
        if rng is None:
            rng = np.random.default_rng(0)
        return eval_aafc(spec, inputs, noise_sigma, rng)
    return eval_dafc(spec, inputs)
