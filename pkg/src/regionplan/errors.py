"""Exception hierarchy shared by the planner, cost model, simulator and CLI.

The CLI maps these onto process exit codes:

* :class:`InputError` and subclasses -> exit 1 (bad workflow input)
* :class:`PlanningError` and subclasses -> exit 2 (planning / costing failed)
* :class:`CutSpaceTooLarge` -> exit 3 (cut enumeration bound exceeded)
* :class:`DeadlockDetected` -> exit 4 (simulation cannot make progress)
"""


class RegionPlanError(Exception):
    """Base class for all errors raised by this package."""


class InputError(RegionPlanError):
    """A workflow input file could not be accepted."""


class ParseError(InputError):
    """The input was not well-formed JSON."""


class SchemaError(InputError):
    """The JSON was well-formed but did not match the expected schema."""


class ValidationError(InputError):
    """The workflow violated a semantic invariant (cycle, dangling link, ...)."""


class PlanningError(RegionPlanError):
    """Region-graph construction or choice evaluation failed."""


class NotASource(PlanningError):
    """A region extraction was requested from an operator with pipelined inputs."""


class CyclicRegionGraph(PlanningError):
    """A region graph contains a dependency cycle and admits no schedule."""


class UnknownLink(PlanningError):
    """A materialization choice referenced a link that does not exist."""


class NotPipelined(PlanningError):
    """A materialization choice tried to cut a non-pipelined link."""


class EmptyCutSpace(PlanningError):
    """A conflict has no cuttable links (g_f is empty)."""


class UnschedulableError(PlanningError):
    """No materialization choice breaks the dependency cycle."""


class CutSpaceTooLarge(PlanningError):
    """The cut space exceeds the enumeration bound."""


class MissingCost(PlanningError):
    """The cost model has no entry for an operator that needs one."""


class MultipleResultOperators(PlanningError):
    """An estimate that assumes a single result operator found several."""


class DeadlockDetected(RegionPlanError):
    """The simulator found a region that can never become ready."""
