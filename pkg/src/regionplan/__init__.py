"""regionplan: result-aware region planning and simulation for workflow DAGs.

A workflow is a DAG of operators joined by pipelined or blocking links.
Maximal pipelined sub-DAGs (regions) are the unit of scheduling; blocking
links impose an order between regions.  When that order is cyclic, the
planner breaks the cycle by materializing a minimal set of pipelined links,
choosing the cut that minimizes the estimated time to the first result tuple.
"""

from .costs import (
    ChoiceEvaluation,
    CostModel,
    OperatorCost,
    bottleneck_estimate,
    cost_model_from_dict,
    estimate_plan,
    evaluate_and_choose,
    make_chooser,
    parse_cost_model,
    propagate_cardinalities,
)
from .errors import (
    CutSpaceTooLarge,
    CyclicRegionGraph,
    DeadlockDetected,
    EmptyCutSpace,
    InputError,
    MissingCost,
    MultipleResultOperators,
    NotASource,
    NotPipelined,
    ParseError,
    PlanningError,
    RegionPlanError,
    SchemaError,
    UnknownLink,
    UnschedulableError,
    ValidationError,
)
from .materialize import (
    ChoiceDecision,
    ConflictContext,
    MaterializationChoice,
    MaterializationRecord,
    apply_choice,
    build_conflict_context,
    enumerate_choices,
    first_choice,
)
from .model import (
    LinkSpec,
    OperatorSpec,
    WorkflowDag,
    export_dot,
    natural_key,
    parse_workflow,
    validate_workflow,
    workflow_from_dict,
    workflow_to_dict,
)
from .planner import BuildResult, Plan, build_region_graph, plan_workflow
from .regions import (
    Region,
    RegionEdge,
    RegionGraph,
    coarse_regions,
    extract_region,
    pipelined_closure,
    schedule,
    source_operators,
)
from .simulate import (
    CostEstimate,
    RegionWindow,
    SimConfig,
    SimReport,
    measure_region_times,
    simulate,
    simulate_plan,
)

__version__ = "0.1.0"
