"""Named failures raised across the simulator.

Bad input is a ValueError, a failure while executing is a RuntimeError, so
callers that only know the builtins still catch them.
"""


class ZeroInverse(ZeroDivisionError, ValueError):
    pass


class RankDeficient(ValueError):
    def __init__(self, rank: int, required: int):
        self.rank = rank
        self.required = required
        super().__init__(f"Matrix has rank {rank}, {required} required; collect more coded packets")


class TopologyError(ValueError):
    code = "TopologyError"

    def __init__(self, message: str, report=None):
        self.report = report
        super().__init__(message)


class CycleDetected(TopologyError):
    code = "CycleDetected"


class RoleConflict(TopologyError):
    code = "RoleConflict"


class DanglingReference(TopologyError):
    code = "DanglingReference"


class TreeViolation(TopologyError):
    code = "TreeViolation"


class NotATree(TopologyError):
    code = "NotATree"


class ArityMismatch(ValueError):
    pass


class DomainMismatch(ValueError):
    pass


class DomainError(ValueError):
    pass


class MissingAssignment(ValueError):
    def __init__(self, node: str):
        self.node = node
        super().__init__(f"No atomic function assigned to node '{node}'")


class InconsistentDimensions(ValueError):
    pass


class StaleGeneration(RuntimeError):
    def __init__(self, node: str, generation: int):
        self.node = node
        self.generation = generation
        super().__init__(f"Node '{node}' no longer holds local gradients for generation {generation}")


class CapExceeded(RuntimeError):
    def __init__(self, candidates: int, cap: int):
        self.candidates = candidates
        self.cap = cap
        super().__init__(f"Search space of {candidates} candidate assignments exceeds the cap of {cap}")


class MismatchedScenarios(ValueError):
    pass


class ScenarioError(ValueError):
    def __init__(self, message: str, diagnostics=None):
        self.diagnostics = diagnostics or []
        super().__init__(message)


class SimulationError(RuntimeError):
    pass
