"""Command-line interface: validate, regions, choices, plan, simulate.

Exit codes: 0 success, 1 input/validation error, 2 planning error,
3 choice-enumeration bound exceeded, 4 simulation deadlock.

All JSON output is canonical — sorted keys, two-space indent, floats rounded
to six decimals, trailing newline — so identical inputs produce byte-identical
artifacts.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from collections import deque
from typing import Optional

from .costs import CostModel, make_chooser, parse_cost_model
from .errors import (
    CutSpaceTooLarge,
    DeadlockDetected,
    InputError,
    PlanningError,
)
from .materialize import MaterializationRecord
from .model import WorkflowDag, natural_key, parse_workflow, workflow_to_dict
from .planner import Plan, plan_workflow
from .regions import Region, RegionEdge, RegionGraph, pipelined_closure, source_operators
from .simulate import SimConfig, SimReport, simulate


def _canonical(value):
    if isinstance(value, dict):
        return {key: _canonical(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_canonical(item) for item in value]
    if isinstance(value, float):
        rounded = round(value, 6)
        if rounded == 0:
            rounded = 0.0
        return rounded
    return value


def canonical_json(value) -> str:
    """Serialize deterministically: sorted keys, 6-decimal floats."""
    return json.dumps(_canonical(value), sort_keys=True, indent=2) + "\n"


def _emit(text: str, out_path: Optional[str] = None) -> None:
    if out_path:
        with open(out_path, "w", encoding="utf-8") as handle:
            handle.write(text)
    else:
        sys.stdout.write(text)


def _region_graph_dict(region_graph: RegionGraph) -> dict:
    return {
        "regions": [
            {
                "id": region.region_id,
                "source": region.source,
                "members": list(region.members),
            }
            for region in region_graph.regions
        ],
        "edges": [
            {
                "from": edge.from_region,
                "to": edge.to_region,
                "via": list(edge.via_links),
            }
            for edge in region_graph.edges
        ],
    }


def _region_graph_dot(region_graph: RegionGraph) -> str:
    lines = ["digraph regions {"]
    for region in region_graph.regions:
        label = f"{region.region_id}\\nsource: {region.source}"
        lines.append(f'  "{region.region_id}" [label="{label}"];')
    for edge in region_graph.edges:
        vias = ",".join(edge.via_links)
        lines.append(
            f'  "{edge.from_region}" -> "{edge.to_region}" [label="{vias}"];'
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


def _raw_region_structure(dag: WorkflowDag):
    """Fine regions plus blocking-link edges with no cycle repair."""
    regions: dict[str, Region] = {}
    source_to_region: dict[str, str] = {}
    closures = {src: pipelined_closure(dag, src) for src in source_operators(dag)}
    counter = 0
    for op in dag.topo_order:
        for src in sorted(closures, key=natural_key):
            if src in source_to_region:
                continue
            if op in closures[src]:
                counter += 1
                rid = f"r{counter}"
                regions[rid] = Region(rid, src, closures[src])
                source_to_region[src] = rid
    edges: dict[tuple[str, str], set[str]] = {}
    membership: dict[str, list[str]] = {}
    for rid, region in regions.items():
        for member in region.members:
            membership.setdefault(member, []).append(rid)
    for link in dag.links:
        if not link.is_blocking:
            continue
        for ru in membership.get(link.from_op, ()):
            for ro in membership.get(link.to_op, ()):
                edges.setdefault((ru, ro), set()).add(link.link_id)
    graph = RegionGraph(
        regions=tuple(regions[rid] for rid in sorted(regions, key=natural_key)),
        edges=tuple(
            RegionEdge(src, dst, tuple(sorted(vias, key=natural_key)))
            for (src, dst), vias in sorted(
                edges.items(),
                key=lambda kv: (natural_key(kv[0][0]), natural_key(kv[0][1])),
            )
        ),
    )
    return graph


def _cyclic_core(region_graph: RegionGraph) -> list[str]:
    """Region ids that lie on at least one dependency cycle."""
    nodes = {r.region_id for r in region_graph.regions}
    succ: dict[str, set[str]] = {rid: set() for rid in nodes}
    pred: dict[str, set[str]] = {rid: set() for rid in nodes}
    self_loops = set()
    for edge in region_graph.edges:
        if edge.from_region == edge.to_region:
            self_loops.add(edge.from_region)
            continue
        succ[edge.from_region].add(edge.to_region)
        pred[edge.to_region].add(edge.from_region)
    remaining = set(nodes)
    frontier = deque(
        rid
        for rid in remaining
        if not pred[rid] or not succ[rid]
    )
    while frontier:
        rid = frontier.popleft()
        if rid not in remaining:
            continue
        if pred[rid] and succ[rid]:
            continue
        remaining.discard(rid)
        for nxt in succ[rid]:
            pred[nxt].discard(rid)
            if not pred[nxt]:
                frontier.append(nxt)
        for prv in pred[rid]:
            succ[prv].discard(rid)
            if not succ[prv]:
                frontier.append(prv)
    return sorted(remaining | self_loops, key=natural_key)


def _materialization_dict(record: MaterializationRecord) -> dict:
    ctx = record.context
    evaluations = None
    if record.evaluations is not None:
        evaluations = []
        for ev in record.evaluations:
            breakdown = [
                {
                    "region_id": est.region_id,
                    "t_full": est.t_full,
                    "t_first": est.t_first,
                }
                for est in ev.breakdown
            ]
            evaluations.append(
                {
                    "index": ev.index,
                    "cut": list(ev.cut),
                    "tau_c": ev.tau_c,
                    "t_other": ev.t_other,
                    "materialized_tuples": ev.materialized_tuples,
                    "breakdown": breakdown,
                }
            )
    return {
        "conflict_op": ctx.conflict_op,
        "blocking_link": ctx.blocking_link,
        "r_u": ctx.r_u,
        "r_o": ctx.r_o,
        "r_m": ctx.r_m,
        "source": ctx.source,
        "cut_space": list(ctx.g_f),
        "boundary": list(ctx.boundary),
        "choices": [
            {"index": choice.index, "cut": list(choice.cut)}
            for choice in record.choices
        ],
        "chosen_index": record.chosen_index,
        "writers": list(record.writers),
        "readers": list(record.readers),
        "store_links": list(record.store_links),
        "evaluations": evaluations,
    }


def _plan_bundle(plan: Plan) -> dict:
    bundle = {
        "workflow": workflow_to_dict(plan.dag),
        "schedule": list(plan.schedule),
        "materializations": [
            _materialization_dict(record) for record in plan.materializations
        ],
    }
    bundle.update(_region_graph_dict(plan.region_graph))
    return bundle


def _report_dict(report: SimReport) -> dict:
    return {
        "regions": [
            {
                "region_id": w.region_id,
                "start": w.start,
                "end": w.end,
                "first_output": w.first_output,
            }
            for w in report.windows
        ],
        "result_outputs": {
            op: list(times) for op, times in report.result_outputs.items()
        },
        "link_delivered": dict(report.link_delivered),
        "materialized": dict(report.materialized),
        "tau": report.tau,
        "total_time": report.total_time,
    }


def _load_costs(args) -> Optional[CostModel]:
    if getattr(args, "costs", None):
        return parse_cost_model(args.costs)
    return None


def _chooser_for(args, costs: Optional[CostModel]):
    policy = getattr(args, "policy", "simulate")
    if policy == "first":
        return None
    if costs is None:
        raise InputError(f"--costs is required for policy '{policy}'")
    cores = getattr(args, "cores", None)
    d = getattr(args, "first_k", 1)
    return make_chooser(costs, policy, d=d, cores=cores)


def cmd_validate(args) -> int:
    parse_workflow(args.workflow)
    print(f"{args.workflow}: ok", file=sys.stderr)
    return 0


def cmd_regions(args) -> int:
    dag = parse_workflow(args.workflow)
    if args.no_materialize:
        graph = _raw_region_structure(dag)
        cyclic = _cyclic_core(graph)
        payload = _region_graph_dict(graph)
        payload["cyclic_regions"] = cyclic
        if args.format == "dot":
            _emit(_region_graph_dot(graph))
        else:
            _emit(canonical_json(payload))
        if cyclic:
            print(f"cycle detected at region {cyclic[0]}", file=sys.stderr)
        return 0
    plan = plan_workflow(dag)
    if args.format == "dot":
        _emit(_region_graph_dot(plan.region_graph))
    else:
        payload = _region_graph_dict(plan.region_graph)
        payload["schedule"] = list(plan.schedule)
        _emit(canonical_json(payload))
    return 0


def cmd_choices(args) -> int:
    dag = parse_workflow(args.workflow)
    costs = _load_costs(args)
    chooser = make_chooser(costs, "simulate") if costs is not None else None
    plan = plan_workflow(dag, chooser)
    conflicts = []
    for record in plan.materializations:
        tau_by_index = {}
        if record.evaluations is not None:
            tau_by_index = {ev.index: ev.tau_c for ev in record.evaluations}
        conflicts.append(
            {
                "conflict_op": record.context.conflict_op,
                "choices": [
                    {
                        "index": choice.index,
                        "cut": list(choice.cut),
                        "tau_c": tau_by_index.get(choice.index),
                    }
                    for choice in record.choices
                ],
            }
        )
    _emit(canonical_json(conflicts))
    return 0


def cmd_plan(args) -> int:
    dag = parse_workflow(args.workflow)
    costs = _load_costs(args)
    chooser = _chooser_for(args, costs)
    plan = plan_workflow(dag, chooser)
    _emit(canonical_json(_plan_bundle(plan)), args.out)
    return 0


def _plan_from_bundle(data: dict) -> Plan:
    from .model import workflow_from_dict

    if not isinstance(data, dict):
        raise InputError("plan bundle: expected a JSON object")
    for key in ("workflow", "regions", "edges", "schedule"):
        if key not in data:
            raise InputError(f"plan bundle: missing '{key}'")
    dag = workflow_from_dict(data["workflow"], allow_planner_ops=True)
    regions = tuple(
        Region(r["id"], r["source"], tuple(r["members"])) for r in data["regions"]
    )
    edges = tuple(
        RegionEdge(e["from"], e["to"], tuple(e["via"])) for e in data["edges"]
    )
    graph = RegionGraph(regions=regions, edges=edges)
    known = {r.region_id for r in regions}
    for region in regions:
        for member in region.members:
            if member not in dag.op_by_id:
                raise InputError(
                    f"plan bundle: region {region.region_id} references "
                    f"unknown operator {member}"
                )
    for edge in edges:
        if edge.from_region not in known or edge.to_region not in known:
            raise InputError("plan bundle: edge references unknown region")
    return Plan(
        dag=dag,
        region_graph=graph,
        schedule=tuple(data["schedule"]),
        materializations=(),
    )


def cmd_simulate(args) -> int:
    costs = _load_costs(args)
    if costs is None:
        raise InputError("simulate requires --costs")
    if args.plan:
        try:
            with open(args.plan, "r", encoding="utf-8") as handle:
                data = json.load(handle)
        except OSError as exc:
            raise InputError(f"cannot read {args.plan}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise InputError(f"{args.plan}: invalid JSON: {exc}") from exc
        plan = _plan_from_bundle(data)
    else:
        dag = parse_workflow(args.workflow)
        chooser = _chooser_for(args, costs)
        plan = plan_workflow(dag, chooser)
    cfg = SimConfig(
        cores=args.cores if args.cores is not None else costs.cores,
        writer_cost=costs.writer_cost,
        reader_cost=costs.reader_cost,
        d_target=args.first_k,
        collect_trace=bool(args.trace),
    )
    report = simulate(plan.dag, plan.region_graph, plan.schedule, costs, cfg)
    if args.trace:
        with open(args.trace, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["time", "operator", "event", "detail"])
            for time, op_id, event, detail in report.trace:
                writer.writerow([round(time, 6), op_id, event, detail])
    _emit(canonical_json(_report_dict(report)))
    return 0


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regionplan",
        description="Plan and simulate region-based workflow schedules.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="check a workflow file")
    p_validate.add_argument("workflow")
    p_validate.set_defaults(func=cmd_validate)

    p_regions = sub.add_parser("regions", help="show the region graph")
    p_regions.add_argument("workflow")
    p_regions.add_argument("--format", choices=("json", "dot"), default="json")
    p_regions.add_argument(
        "--no-materialize",
        action="store_true",
        help="report the raw dependency structure without cycle repair",
    )
    p_regions.set_defaults(func=cmd_regions)

    p_choices = sub.add_parser(
        "choices", help="enumerate materialization choices per conflict"
    )
    p_choices.add_argument("workflow")
    p_choices.add_argument("--costs")
    p_choices.set_defaults(func=cmd_choices)

    p_plan = sub.add_parser("plan", help="produce a full plan bundle")
    p_plan.add_argument("workflow")
    p_plan.add_argument("--costs")
    p_plan.add_argument(
        "--policy",
        choices=("simulate", "bottleneck", "first", "materialized-size"),
        default="simulate",
    )
    p_plan.add_argument("--first-k", type=_positive_int, default=1)
    p_plan.add_argument("--cores", type=_positive_int, default=None)
    p_plan.add_argument("--out")
    p_plan.set_defaults(func=cmd_plan)

    p_sim = sub.add_parser("simulate", help="simulate a plan")
    p_sim.add_argument("workflow")
    p_sim.add_argument("--costs")
    p_sim.add_argument("--plan", help="plan bundle JSON produced by 'plan --out'")
    p_sim.add_argument(
        "--policy",
        choices=("simulate", "bottleneck", "first", "materialized-size"),
        default="simulate",
    )
    p_sim.add_argument("--first-k", type=_positive_int, default=1)
    p_sim.add_argument("--cores", type=_positive_int, default=None)
    p_sim.add_argument("--trace", help="write an event trace CSV to this path")
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CutSpaceTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except DeadlockDetected as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PlanningError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
