"""Cost model, cardinality propagation, analytic estimates, and choice policies.

The cost model assigns each operator a per-tuple processing cost and a
selectivity; scans carry a cardinality.  Two estimators are provided: the
pipeline simulator (exact under the simulation semantics, the default) and a
fast analytic bottleneck bound.  ``evaluate_and_choose`` ranks materialization
choices by estimated first-response time tau_c(1) and is packaged as a chooser
callable for the planner via :func:`make_chooser`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

from .errors import (
    MissingCost,
    MultipleResultOperators,
    ParseError,
    SchemaError,
)
from .materialize import ChoiceDecision, ConflictContext, MaterializationChoice, apply_choice
from .model import OperatorSpec, WorkflowDag, natural_key
from .regions import Region, pipelined_closure

MAT_KINDS = ("mat-writer", "mat-reader")


@dataclass(frozen=True)
class OperatorCost:
    """Resolved cost figures for one operator."""

    per_tuple_cost: float
    selectivity: float = 1.0
    scan_cardinality: Optional[int] = None
    blocking_input_cost: Optional[float] = None

    @property
    def blocking_cost(self) -> float:
        if self.blocking_input_cost is None:
            return self.per_tuple_cost
        return self.blocking_input_cost


@dataclass(frozen=True)
class CostModel:
    """Per-operator cost entries plus the machine description.

    ``cores`` of None means an unbounded machine (no contention).  Operators
    absent from ``operators`` are only legal if they are planner-inserted
    mat-writers/mat-readers, which default to ``writer_cost``/``reader_cost``
    per tuple and selectivity 1.
    """

    operators: Mapping[str, OperatorCost] = field(default_factory=dict)
    cores: Optional[int] = None
    writer_cost: float = 0.0
    reader_cost: float = 0.0

    def resolve(self, op: OperatorSpec) -> OperatorCost:
        entry = self.operators.get(op.op_id)
        if entry is None:
            if op.kind == "mat-writer":
                return OperatorCost(per_tuple_cost=self.writer_cost)
            if op.kind == "mat-reader":
                return OperatorCost(per_tuple_cost=self.reader_cost)
            raise MissingCost(f"operator {op.op_id}: no cost entry")
        if op.kind == "scan" and entry.scan_cardinality is None:
            raise MissingCost(f"operator {op.op_id}: scan_cardinality missing")
        return entry

    def scaled(self, factor: float) -> "CostModel":
        """Every per-tuple cost (incl. blocking) multiplied by ``factor``."""
        scaled_ops = {
            op_id: replace(
                entry,
                per_tuple_cost=entry.per_tuple_cost * factor,
                blocking_input_cost=(
                    None
                    if entry.blocking_input_cost is None
                    else entry.blocking_input_cost * factor
                ),
            )
            for op_id, entry in self.operators.items()
        }
        return replace(
            self,
            operators=scaled_ops,
            writer_cost=self.writer_cost * factor,
            reader_cost=self.reader_cost * factor,
        )


def _require_number(value, where: str, *, minimum=None, exclusive=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{where}: expected a number, got {value!r}")
    number = float(value)
    if minimum is not None:
        if exclusive and number <= minimum:
            raise SchemaError(f"{where}: must be > {minimum}")
        if not exclusive and number < minimum:
            raise SchemaError(f"{where}: must be >= {minimum}")
    return number


def cost_model_from_dict(data: dict) -> CostModel:
    """Build a CostModel from the JSON cost-file structure."""
    if not isinstance(data, dict):
        raise SchemaError("cost model: expected a JSON object")
    raw_ops = data.get("operators", {})
    if not isinstance(raw_ops, dict):
        raise SchemaError("cost model: 'operators' must be an object")
    operators: dict[str, OperatorCost] = {}
    for op_id, raw in raw_ops.items():
        if not isinstance(raw, dict):
            raise SchemaError(f"cost entry {op_id}: expected an object")
        unknown = set(raw) - {
            "per_tuple_cost",
            "selectivity",
            "scan_cardinality",
            "blocking_input_cost",
        }
        if unknown:
            raise SchemaError(
                f"cost entry {op_id}: unknown fields {sorted(unknown)}"
            )
        if "per_tuple_cost" not in raw:
            raise SchemaError(f"cost entry {op_id}: per_tuple_cost is required")
        per_tuple = _require_number(
            raw["per_tuple_cost"], f"cost entry {op_id}: per_tuple_cost", minimum=0.0
        )
        selectivity = 1.0
        if "selectivity" in raw:
            selectivity = _require_number(
                raw["selectivity"],
                f"cost entry {op_id}: selectivity",
                minimum=0.0,
                exclusive=True,
            )
        cardinality = None
        if "scan_cardinality" in raw:
            value = raw["scan_cardinality"]
            if isinstance(value, bool) or not isinstance(value, int):
                raise SchemaError(
                    f"cost entry {op_id}: scan_cardinality must be an integer"
                )
            if value < 0:
                raise SchemaError(
                    f"cost entry {op_id}: scan_cardinality must be >= 0"
                )
            cardinality = value
        blocking = None
        if "blocking_input_cost" in raw:
            blocking = _require_number(
                raw["blocking_input_cost"],
                f"cost entry {op_id}: blocking_input_cost",
                minimum=0.0,
            )
        operators[op_id] = OperatorCost(
            per_tuple_cost=per_tuple,
            selectivity=selectivity,
            scan_cardinality=cardinality,
            blocking_input_cost=blocking,
        )
    machine = data.get("machine", {})
    if not isinstance(machine, dict):
        raise SchemaError("cost model: 'machine' must be an object")
    cores = None
    if "cores" in machine and machine["cores"] is not None:
        value = machine["cores"]
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            raise SchemaError("machine.cores must be a positive integer")
        cores = value
    return CostModel(operators=operators, cores=cores)


def parse_cost_model(path: str) -> CostModel:
    """Read and validate a cost-model JSON file."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    return cost_model_from_dict(data)


def propagate_cardinalities(dag: WorkflowDag, costs: CostModel) -> dict[str, int]:
    """Tuple count carried by every link, in topological order.

    Scans output their cardinality; every other operator outputs
    floor(selectivity x sum of all input-link counts), and each of its
    out-links carries the full output stream.
    """
    link_counts: dict[str, int] = {}
    for op_id in dag.topo_order:
        op = dag.operator(op_id)
        entry = costs.resolve(op)
        if op.kind == "scan":
            out = entry.scan_cardinality
            if out is None:
                raise MissingCost(f"operator {op_id}: scan_cardinality missing")
        else:
            total_in = sum(
                link_counts[link.link_id] for link in dag.inputs_of[op_id]
            )
            out = math.floor(entry.selectivity * total_in)
        for link in dag.outputs_of[op_id]:
            link_counts[link.link_id] = out
    return link_counts


@dataclass(frozen=True)
class ChoiceEvaluation:
    """Estimated first-response time for one materialization choice."""

    index: int
    cut: tuple[str, ...]
    tau_c: Optional[float]
    t_other: Optional[float]
    breakdown: tuple = ()
    materialized_tuples: Optional[int] = None


def bottleneck_estimate(
    dag: WorkflowDag,
    region: Region,
    costs: CostModel,
    link_counts: Optional[Mapping[str, int]] = None,
):
    """Analytic region-time bounds from per-operator work.

    t_full is the largest single-operator busy time (a lower bound of the
    simulated window on chain regions); t_first is the cheapest pipelined
    source-to-result path cost for one output tuple, where upstream demand is
    inflated by ceil(needed / selectivity) at each hop (an upper bound).
    """
    from .simulate import CostEstimate

    if link_counts is None:
        link_counts = propagate_cardinalities(dag, costs)
    members = region.member_set

    t_full = 0.0
    for op_id in region.members:
        op = dag.operator(op_id)
        entry = costs.resolve(op)
        if op.kind == "scan":
            in_tuples = entry.scan_cardinality or 0
        elif op_id == region.source:
            in_tuples = sum(
                link_counts[link.link_id] for link in dag.inputs_of[op_id]
            )
        else:
            in_tuples = sum(
                link_counts[link.link_id]
                for link in dag.inputs_of[op_id]
                if link.is_pipelined
            )
        t_full = max(t_full, in_tuples * entry.per_tuple_cost)

    results = [
        op_id
        for op_id in region.members
        if dag.operator(op_id).is_result
    ]
    t_first: Optional[float] = None
    if results:
        cache: dict[tuple[str, int], Optional[float]] = {}

        def best(op_id: str, need: int) -> Optional[float]:
            key = (op_id, need)
            if key in cache:
                return cache[key]
            entry = costs.resolve(dag.operator(op_id))
            own = need * entry.per_tuple_cost
            if op_id == region.source:
                cache[key] = own
                return own
            upstream: Optional[float] = None
            for link in dag.inputs_of[op_id]:
                if not link.is_pipelined or link.from_op not in members:
                    continue
                producer = costs.resolve(dag.operator(link.from_op))
                if dag.operator(link.from_op).kind == "scan":
                    need_up = need
                else:
                    need_up = math.ceil(need / producer.selectivity)
                candidate = best(link.from_op, max(1, need_up))
                if candidate is not None and (upstream is None or candidate < upstream):
                    upstream = candidate
            total = None if upstream is None else own + upstream
            cache[key] = total
            return total

        candidates = [best(r, 1) for r in results]
        candidates = [c for c in candidates if c is not None]
        if candidates:
            t_first = min(candidates)
    return CostEstimate(region_id=region.region_id, t_full=t_full, t_first=t_first)


def estimate_plan(plan, costs: CostModel, d: int = 1, *, cores: Optional[int] = None):
    """Simulate a plan and report (tau(d), per-region time estimates).

    The plan must have exactly one result operator; use the simulator directly
    for multi-result workflows.
    """
    from .simulate import SimConfig, measure_region_times, simulate

    results = plan.dag.result_operators
    if len(results) != 1:
        raise MultipleResultOperators(
            f"expected exactly one result operator, found {len(results)}: "
            f"{list(results)}"
        )
    cfg = SimConfig(
        cores=costs.cores if cores is None else cores,
        writer_cost=costs.writer_cost,
        reader_cost=costs.reader_cost,
        d_target=d,
    )
    report = simulate(plan.dag, plan.region_graph, plan.schedule, costs, cfg)
    return report.tau, measure_region_times(report, plan)


def _affected_split(plan, ctx: ConflictContext):
    """Partition a candidate plan's regions into (split+reader, unaffected)."""
    affected = []
    unaffected = []
    for region in plan.region_graph.regions:
        if region.source == ctx.source or region.source.startswith("mr_"):
            affected.append(region)
        else:
            unaffected.append(region)
    return affected, unaffected


def evaluate_and_choose(
    dag: WorkflowDag,
    ctx: ConflictContext,
    choices: Sequence[MaterializationChoice],
    costs: CostModel,
    policy: str = "simulate",
    *,
    d: int = 1,
    cores: Optional[int] = None,
):
    """Rank the choices for one conflict, returning (chosen, evaluations).

    Policies: ``simulate`` (default; plan and simulate each candidate,
    tau_c is the simulated tau(d)), ``bottleneck`` (analytic two-case
    formula: T + t_full of the split region + either the cheapest
    reader-region first-tuple time when the split region held the result
    operator, or the sum of reader-region full times otherwise),
    ``materialized-size`` (fewest projected materialized tuples), and
    ``first`` (choice 0 unconditionally).  Ties fall to the smaller cut,
    then lexicographic cut ids.
    """
    from .planner import plan_workflow
    from .simulate import SimConfig, measure_region_times, simulate

    if not choices:
        raise ValueError("evaluate_and_choose requires at least one choice")
    if policy not in ("simulate", "bottleneck", "first", "materialized-size"):
        raise ValueError(f"unknown policy: {policy}")

    if policy == "first":
        evaluations = tuple(
            ChoiceEvaluation(index=c.index, cut=c.cut, tau_c=None, t_other=None)
            for c in choices
        )
        return choices[0], evaluations

    if policy == "materialized-size":
        link_counts = propagate_cardinalities(dag, costs)
        evaluations = []
        for choice in choices:
            size = sum(link_counts[link_id] for link_id in choice.cut)
            evaluations.append(
                ChoiceEvaluation(
                    index=choice.index,
                    cut=choice.cut,
                    tau_c=None,
                    t_other=None,
                    materialized_tuples=size,
                )
            )
        chosen = min(
            evaluations,
            key=lambda ev: (
                ev.materialized_tuples,
                len(ev.cut),
                tuple(natural_key(l) for l in ev.cut),
            ),
        )
        return choices[chosen.index], tuple(evaluations)

    chooser = make_chooser(costs, policy, d=d, cores=cores)
    result_ids = set(dag.result_operators)
    split_members = set(pipelined_closure(dag, ctx.source))
    result_in_split = bool(result_ids & split_members)

    evaluations = []
    for choice in choices:
        candidate_dag = apply_choice(dag, choice)
        candidate = plan_workflow(candidate_dag, chooser)
        affected, unaffected = _affected_split(candidate, ctx)
        if policy == "simulate":
            cfg = SimConfig(
                cores=costs.cores if cores is None else cores,
                writer_cost=costs.writer_cost,
                reader_cost=costs.reader_cost,
                d_target=d,
            )
            report = simulate(
                candidate.dag, candidate.region_graph, candidate.schedule, costs, cfg
            )
            breakdown = measure_region_times(report, candidate)
            by_id = {est.region_id: est for est in breakdown}
            t_other = sum(by_id[r.region_id].t_full for r in unaffected)
            tau_c = report.tau
            if tau_c is None:
                tau_c = report.total_time
        else:
            link_counts = propagate_cardinalities(candidate.dag, costs)
            breakdown = tuple(
                bottleneck_estimate(candidate.dag, region, costs, link_counts)
                for region in candidate.region_graph.regions
            )
            by_id = {est.region_id: est for est in breakdown}
            t_other = sum(by_id[r.region_id].t_full for r in unaffected)
            split_estimates = [
                by_id[r.region_id] for r in affected if r.source == ctx.source
            ]
            reader_estimates = [
                by_id[r.region_id] for r in affected if r.source != ctx.source
            ]
            t_split = sum(est.t_full for est in split_estimates)
            if result_in_split:
                firsts = [
                    est.t_first
                    for est in reader_estimates
                    if est.t_first is not None
                ]
                if firsts:
                    tail = min(firsts)
                else:
                    tail = sum(est.t_full for est in reader_estimates)
            else:
                tail = sum(est.t_full for est in reader_estimates)
            tau_c = t_other + t_split + tail
        evaluations.append(
            ChoiceEvaluation(
                index=choice.index,
                cut=choice.cut,
                tau_c=tau_c,
                t_other=t_other,
                breakdown=tuple(breakdown),
            )
        )
    chosen = min(
        evaluations,
        key=lambda ev: (
            ev.tau_c,
            len(ev.cut),
            tuple(natural_key(l) for l in ev.cut),
        ),
    )
    return choices[chosen.index], tuple(evaluations)


def make_chooser(
    costs: CostModel,
    policy: str = "simulate",
    *,
    d: int = 1,
    cores: Optional[int] = None,
):
    """Package a cost policy as a planner chooser callable."""

    def chooser(dag, ctx, choices) -> ChoiceDecision:
        chosen, evaluations = evaluate_and_choose(
            dag, ctx, choices, costs, policy, d=d, cores=cores
        )
        return ChoiceDecision(chosen_index=chosen.index, evaluations=evaluations)

    return chooser
