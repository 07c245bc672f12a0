"""
Scenario files: YAML documents validated by pydantic models, resolved into an
executable Scenario or a solvability sweep.
"""
import json
from dataclasses import dataclass
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from afc.FunctionProcessor import FunctionAssignment, uniform_assignment
from afc.functions import AtomicFunctionSpec, FunctionKind
from constants import SCHEMA_VERSION, SEARCH_CAP, TOOL_NAME, TOOL_VERSION
from engine.Simulator import Application, Scenario, SourceModel, check_scenario
from errors import ScenarioError, TopologyError
from field.FiniteField import FieldSpec
from graph import generators
from graph.NfcGraph import NfcGraph, TopologyConfig, build_graph
from learning.NeuralTree import FailureModel
from learning.consensus import StepSchedule
from solvability.search import TargetFunction, sweep_pairs, target_preset
from utils import get_logger, substream

logger = get_logger(__name__)


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


# -- topology ----------------------------------------------------------------------


class StarGenerator(StrictModel):
    kind: Literal["star"]
    n_sources: int = Field(ge=1)
    relays: Literal[0, 1] = 1


class ChainGenerator(StrictModel):
    kind: Literal["chain"]
    n_atomic: int = Field(ge=0)


class BinaryTreeGenerator(StrictModel):
    kind: Literal["binary_tree"]
    depth: int = Field(ge=1, le=16)


class DisjointPathsGenerator(StrictModel):
    kind: Literal["disjoint_paths"]
    n_sources: int = Field(ge=1)


class RandomTreeGenerator(StrictModel):
    kind: Literal["random_tree"]
    n_sources: int = Field(ge=1)
    max_depth: int = Field(ge=1)


Generator = Union[StarGenerator, ChainGenerator, BinaryTreeGenerator, DisjointPathsGenerator, RandomTreeGenerator]


class TopologyModel(StrictModel):
    mode: Literal["tree", "dag"] = "tree"
    nodes: Optional[Dict[str, Literal["source", "atomic", "destination"]]] = None
    arcs: Optional[List[Tuple[str, str]]] = None
    generator: Optional[Generator] = Field(default=None, discriminator="kind")

    @model_validator(mode="after")
    def _one_form(self):
        explicit = self.nodes is not None or self.arcs is not None
        if explicit and self.generator is not None:
            raise ValueError("give either nodes/arcs or a generator, not both")
        if not explicit and self.generator is None:
            raise ValueError("topology needs nodes and arcs or a generator")
        if explicit and (self.nodes is None or self.arcs is None):
            raise ValueError("explicit topologies need both nodes and arcs")
        return self


# -- functions ---------------------------------------------------------------------


class FunctionModel(StrictModel):
    kind: Literal[
        "linear_combination", "sum", "max", "min", "histogram", "average", "nomographic", "identity", "neuron"
    ]
    coefficients: Optional[List[int]] = None
    bins: Optional[int] = Field(default=None, ge=1)
    preset: Optional[Literal["mean", "sum", "euclidean_norm", "geometric_mean"]] = None
    channel: Optional[List[float]] = None
    weights: Optional[List[float]] = None

    def build(self, arity: int) -> AtomicFunctionSpec:
        kind = FunctionKind(self.kind)
        if kind is FunctionKind.LINEAR_COMBINATION:
            return AtomicFunctionSpec.linear_combination(self.coefficients or [1] * arity)
        if kind is FunctionKind.HISTOGRAM:
            if self.bins is None:
                raise ValueError("histogram needs bins")
            return AtomicFunctionSpec.histogram(arity, self.bins)
        if kind is FunctionKind.NOMOGRAPHIC:
            if self.preset is None:
                raise ValueError("nomographic functions need a preset")
            return AtomicFunctionSpec.nomographic_preset(self.preset, self.channel or [1.0] * arity)
        if kind is FunctionKind.NEURON:
            return AtomicFunctionSpec.neuron(self.weights or [1.0] * arity)
        return AtomicFunctionSpec.simple(kind.value, arity)


class ArcFunctionModel(StrictModel):
    tail: str
    head: str
    function: FunctionModel


class UniformModel(StrictModel):
    kind: str
    destination_kind: Optional[str] = None
    bins: Optional[int] = None
    coefficients: Optional[List[int]] = None
    preset: Optional[str] = None
    channel: Optional[List[float]] = None


class FunctionsModel(StrictModel):
    uniform: Optional[UniformModel] = None
    nodes: Dict[str, FunctionModel] = Field(default_factory=dict)
    arcs: List[ArcFunctionModel] = Field(default_factory=list)


# -- everything else ---------------------------------------------------------------


class FieldModel(StrictModel):
    m: int = Field(default=8, ge=1, le=16)
    polynomial: Optional[int] = None


class SourcesModel(StrictModel):
    distribution: Literal["normal", "uniform", "integers", "constant"] = "normal"
    mean: float = 0.0
    std: float = Field(default=1.0, ge=0.0)
    low: float = 0.0
    high: float = 1.0


class FailuresModel(StrictModel):
    node_dropout_p: float = Field(default=0.0, ge=0.0, le=1.0)
    message_loss_p: float = Field(default=0.0, ge=0.0, le=1.0)
    downward_delay: int = Field(default=0, ge=0)


class ScheduleModel(StrictModel):
    kind: Literal["inverse", "constant", "inverse_sqrt"] = "inverse"
    eta0: float = Field(default=1.0, gt=0.0)


class RlncModel(StrictModel):
    n_prime: int = Field(ge=0)
    trials: int = Field(default=0, ge=0)
    verify: bool = False


class NeuralModel(StrictModel):
    dataset_size: Optional[int] = Field(default=None, ge=1)


class CapacityModel(StrictModel):
    target: str
    k_max: int = Field(default=1, ge=1)
    l_max: int = Field(default=1, ge=1)
    sweep: Optional[List[Tuple[int, int]]] = None
    linear: bool = False
    cap: int = Field(default=SEARCH_CAP, ge=1)
    destination: Optional[str] = None


class ScenarioFile(StrictModel):
    schema_version: Literal[1]
    name: str = "scenario"
    application: Literal["forwarding", "function", "average", "rlnc", "consensus", "neural"] = "forwarding"
    topology: TopologyModel
    seed: int = Field(default=0, ge=0)
    generations: int = Field(default=1, ge=0)
    length: int = Field(default=1, ge=1)
    field: Optional[FieldModel] = None
    sources: SourcesModel = Field(default_factory=SourcesModel)
    functions: Optional[FunctionsModel] = None
    noise_sigma: float = Field(default=0.0, ge=0.0)
    failures: FailuresModel = Field(default_factory=FailuresModel)
    schedule: ScheduleModel = Field(default_factory=ScheduleModel)
    initial: float = 0.0
    rlnc: Optional[RlncModel] = None
    neural: NeuralModel = Field(default_factory=NeuralModel)
    header_symbols: Optional[int] = Field(default=None, ge=0)
    capacity: Optional[CapacityModel] = None
    output: Optional[str] = None


# -- diagnostics -------------------------------------------------------------------


@dataclass(frozen=True)
class Diagnostic:
    """One problem in a scenario file; `line` is 1-based, None when it has no place in the file."""

    message: str
    location: str = ""
    line: Optional[int] = None

    def render(self, path: str) -> str:
        where = f"{path}:{self.line}" if self.line is not None else path
        return f"{where}: {self.location}: {self.message}" if self.location else f"{where}: {self.message}"


def _find_node(root: Optional[yaml.Node], loc: Sequence[Union[str, int]]) -> Optional[yaml.Node]:
    """Deepest YAML node reached along a pydantic error location."""
    node = root
    found = root
    for key in loc:
        # keys absent from the document (union tags, missing fields) are skipped
        if isinstance(node, yaml.MappingNode):
            match = next(((k, v) for k, v in node.value if k.value == str(key)), None)
            if match is not None:
                found, node = match
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            found = node
    return found


def _line_of(root: Optional[yaml.Node], loc: Sequence[Union[str, int]]) -> Optional[int]:
    node = _find_node(root, loc)
    return None if node is None else node.start_mark.line + 1


@dataclass
class ScenarioDocument:
    path: str
    model: ScenarioFile
    root: Optional[yaml.Node] = None

    def line(self, *loc) -> Optional[int]:
        return _line_of(self.root, loc)

    def arc_line(self, tail: str, head: str) -> Optional[int]:
        arcs = self.model.topology.arcs or []
        for i, arc in enumerate(arcs):
            if tuple(arc) == (tail, head):
                return self.line("topology", "arcs", i)
        return self.line("topology")


def _read(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return handle.read()
    except OSError as e:
        logger.error(f"Cannot read scenario '{path}': {e}")
        raise


def parse_scenario(text: str, path: str = "<string>") -> ScenarioDocument:
    """
    Parse and schema-validate a scenario document.

    Raises:
        ScenarioError: With line-addressed diagnostics for YAML syntax errors,
            unknown keys and invalid values.
    """
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ScenarioError(f"Invalid YAML in {path}", [Diagnostic(str(getattr(e, "problem", e)), line=line)]) from e

    if not isinstance(data, dict):
        raise ScenarioError(f"{path} is not a mapping", [Diagnostic("scenario must be a YAML mapping", line=1)])

    try:
        model = ScenarioFile.model_validate(data)
    except ValidationError as e:
        diagnostics = [
            Diagnostic(error["msg"], ".".join(str(part) for part in error["loc"]), _line_of(root, error["loc"]))
            for error in e.errors()
        ]
        raise ScenarioError(f"{path} failed schema validation", diagnostics) from e
    return ScenarioDocument(path=path, model=model, root=root)


def load_scenario(path: str) -> ScenarioDocument:
    return parse_scenario(_read(path), path)


def load_manifest(path: str) -> ScenarioDocument:
    """A run manifest replays its echoed scenario; results recorded alongside are ignored."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            body = json.load(handle)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{path} is not valid JSON", [Diagnostic(e.msg, line=e.lineno)]) from e
    if not isinstance(body, dict) or "scenario" not in body:
        raise ScenarioError(f"{path} is not a run manifest", [Diagnostic("missing 'scenario' key")])
    try:
        model = ScenarioFile.model_validate(body["scenario"])
    except ValidationError as e:
        diagnostics = [Diagnostic(error["msg"], ".".join(str(p) for p in ("scenario",) + tuple(error["loc"]))) for error in e.errors()]
        raise ScenarioError(f"{path} holds an invalid scenario", diagnostics) from e
    return ScenarioDocument(path=path, model=model)


# -- resolution --------------------------------------------------------------------


def _topology_config(model: TopologyModel, seed: int) -> TopologyConfig:
    gen = model.generator
    if gen is None:
        children: Dict[str, List[str]] = {}
        for tail, head in model.arcs:
            children.setdefault(head, []).append(tail)
        return TopologyConfig.from_lists(list(model.nodes.items()), children, model.mode)

    if isinstance(gen, StarGenerator):
        config = generators.star_config(gen.n_sources, gen.relays)
    elif isinstance(gen, ChainGenerator):
        config = generators.chain_config(gen.n_atomic)
    elif isinstance(gen, BinaryTreeGenerator):
        config = generators.binary_tree_config(gen.depth)
    elif isinstance(gen, DisjointPathsGenerator):
        config = generators.disjoint_paths_config(gen.n_sources)
    else:
        config = generators.random_tree_config(gen.n_sources, gen.max_depth, substream(seed, purpose="topology"))
    return config


def _graph_diagnostics(doc: ScenarioDocument, error: TopologyError) -> List[Diagnostic]:
    diagnostics = []
    issues = error.report.issues if error.report is not None else ()
    for issue in issues:
        if issue.arc is not None:
            line = doc.arc_line(*issue.arc)
        elif issue.node is not None:
            line = doc.line("topology", "nodes", issue.node)
        else:
            line = doc.line("topology")
        diagnostics.append(Diagnostic(issue.message, f"topology[{issue.code}]", line))
    return diagnostics or [Diagnostic(str(error), "topology", doc.line("topology"))]


def resolve_graph(doc: ScenarioDocument) -> NfcGraph:
    model = doc.model
    try:
        return build_graph(_topology_config(model.topology, model.seed))
    except TopologyError as e:
        raise ScenarioError(f"{doc.path}: invalid topology", _graph_diagnostics(doc, e)) from e


def _field_spec(model: Optional[FieldModel]) -> Optional[FieldSpec]:
    if model is None:
        return None
    return FieldSpec(model.m, model.polynomial)


def _assignment(g: NfcGraph, model: FunctionsModel) -> FunctionAssignment:
    assignment = FunctionAssignment()
    if model.uniform is not None:
        u = model.uniform
        params = {k: v for k, v in (("bins", u.bins), ("coefficients", u.coefficients),
                                    ("preset", u.preset), ("channel", u.channel)) if v is not None}
        assignment = uniform_assignment(g, u.kind, u.destination_kind, **params)

    node_functions = {name: fn.build(g.in_degree(g.node_id(name))) for name, fn in model.nodes.items()}
    arc_functions = {
        (arc.tail, arc.head): arc.function.build(g.in_degree(g.node_id(arc.tail)))
        for arc in model.arcs
    }
    return assignment.merged(FunctionAssignment(node_functions=node_functions, arc_functions=arc_functions))


def _wrap(doc: ScenarioDocument, location: Tuple[str, ...], error: Exception) -> ScenarioError:
    return ScenarioError(
        f"{doc.path}: {error}",
        [Diagnostic(str(error), ".".join(location), doc.line(*location) if location else None)],
    )


def resolve_scenario(doc: ScenarioDocument, seed: Optional[int] = None) -> Scenario:
    """
    Turn a validated document into a Scenario; `seed` overrides the file's seed.

    Raises:
        ScenarioError: When the graph, field, functions or application settings
            are inconsistent, including per-node programs that cannot be installed.
    """
    model = doc.model
    if seed is not None:
        model = model.model_copy(update={"seed": seed})
        doc = ScenarioDocument(doc.path, model, doc.root)
    g = resolve_graph(doc)

    try:
        field_spec = _field_spec(model.field)
    except ValueError as e:
        raise _wrap(doc, ("field",), e) from e

    assignment = None
    if model.functions is not None:
        try:
            assignment = _assignment(g, model.functions)
        except (ValueError, KeyError) as e:
            raise _wrap(doc, ("functions",), e) from e

    rlnc = model.rlnc or RlncModel(n_prime=g.N)
    try:
        scenario = Scenario(
            graph=g,
            application=Application(model.application),
            generations=model.generations,
            seed=model.seed,
            length=model.length,
            field_spec=field_spec,
            failures=FailureModel(**model.failures.model_dump()),
            assignment=assignment,
            noise_sigma=model.noise_sigma,
            n_prime=rlnc.n_prime,
            trials=rlnc.trials,
            verify_coding=rlnc.verify,
            schedule=StepSchedule.parse(model.schedule.kind, model.schedule.eta0),
            initial=model.initial,
            sources=SourceModel(**model.sources.model_dump()),
            dataset_size=model.neural.dataset_size,
            header_symbols=model.header_symbols,
            name=model.name,
        )
    except ValueError as e:
        raise _wrap(doc, ("application",), e) from e

    try:
        check_scenario(scenario)
    except ValueError as e:
        location = ("functions",) if model.functions is not None else ("application",)
        raise _wrap(doc, location, e) from e
    return scenario


@dataclass(frozen=True)
class CapacityRequest:
    graph: NfcGraph
    field_spec: FieldSpec
    target: TargetFunction
    sweep: List[Tuple[int, int]]
    linear: bool
    cap: int
    destination: int


def resolve_capacity(doc: ScenarioDocument) -> CapacityRequest:
    """The solvability sweep a scenario declares; the field defaults to GF(2)."""
    model = doc.model
    if model.capacity is None:
        raise ScenarioError(f"{doc.path} declares no capacity section", [Diagnostic("missing 'capacity' section", line=1)])
    g = resolve_graph(doc)
    c = model.capacity
    try:
        field_spec = _field_spec(model.field) or FieldSpec(1)
        target = target_preset(c.target)
        if c.destination is not None:
            destination = g.node_id(c.destination)
        elif len(g.destinations) == 1:
            destination = g.destinations[0]
        else:
            raise ValueError("several destinations; name one with capacity.destination")
    except (ValueError, KeyError) as e:
        raise _wrap(doc, ("capacity",), e) from e

    sweep = [tuple(p) for p in c.sweep] if c.sweep is not None else sweep_pairs(c.k_max, c.l_max)
    return CapacityRequest(g, field_spec, target, sweep, c.linear, c.cap, destination)


def validate_document(doc: ScenarioDocument) -> List[Diagnostic]:
    """Everything `run` would reject before executing; an empty list means valid."""
    try:
        resolve_scenario(doc)
        if doc.model.capacity is not None:
            resolve_capacity(doc)
    except ScenarioError as e:
        return e.diagnostics
    return []


def manifest_for(doc: ScenarioDocument, scenario: Scenario) -> Dict[str, Any]:
    """Canonical echo of the resolved scenario; replaying it reproduces the run."""
    echo = doc.model.model_copy(update={"seed": scenario.seed}).model_dump(mode="json")
    return {
        "tool": TOOL_NAME,
        "tool_version": TOOL_VERSION,
        "schema_version": SCHEMA_VERSION,
        "seed": scenario.seed,
        "scenario": echo,
        "graph": scenario.graph.describe(),
        "header_symbols": scenario.header,
    }
