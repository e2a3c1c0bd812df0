"""Region-graph construction and full workflow planning.

Operators are visited in deterministic topological order.  The first time an
operator of a not-yet-seen region source is reached, that region is created
(ids ``r1``, ``r2``, ... in creation order).  Each blocking input link then
adds region edges from every region of its producer to every region of its
consumer; if such an edge would close a cycle, a materialization is inserted
and the link is retried against the rewired graph.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .errors import PlanningError, UnschedulableError
from .materialize import Chooser, MaterializationRecord, add_materialization
from .model import WorkflowDag, natural_key
from .regions import (
    Region,
    RegionEdge,
    RegionGraph,
    pipelined_closure,
    reaches,
    schedule,
    source_operators,
)


@dataclass(frozen=True)
class BuildResult:
    """A finished region graph plus the (possibly rewritten) DAG behind it."""

    dag: WorkflowDag
    region_graph: RegionGraph
    materializations: tuple[MaterializationRecord, ...]


@dataclass(frozen=True)
class Plan:
    """A schedulable plan: region graph plus its execution order."""

    dag: WorkflowDag
    region_graph: RegionGraph
    schedule: tuple[str, ...]
    materializations: tuple[MaterializationRecord, ...]


def build_region_graph(
    dag: WorkflowDag,
    chooser: Optional[Chooser] = None,
    *,
    enumeration_bound: int = 24,
) -> BuildResult:
    """Build the acyclic region graph, inserting materializations as needed."""
    regions: dict[str, Region] = {}
    edges: dict[tuple[str, str], set[str]] = {}
    source_to_region: dict[str, str] = {}
    established: list[str] = []
    records: list[MaterializationRecord] = []
    counter = 0

    closures = {
        src: pipelined_closure(dag, src) for src in source_operators(dag)
    }
    rounds_limit = len(dag.operators) + len(dag.links) + 8

    def refresh_closures() -> None:
        closures.clear()
        for src in source_operators(dag):
            closures[src] = pipelined_closure(dag, src)

    walk_order = list(dag.topo_order)
    for op in walk_order:
        # Lazily create regions: one per source whose closure first touches here.
        for src in sorted(closures, key=natural_key):
            if src in source_to_region:
                continue
            if op in closures[src]:
                counter += 1
                rid = f"r{counter}"
                regions[rid] = Region(rid, src, closures[src])
                source_to_region[src] = rid

        blocking_in = sorted(
            (l.link_id for l in dag.inputs_of[op] if l.is_blocking), key=natural_key
        )
        for link_id in blocking_in:
            rounds = 0
            while True:
                rounds += 1
                if rounds > rounds_limit:
                    raise UnschedulableError(
                        f"materialization did not converge while wiring {link_id}"
                    )
                link = dag.link(link_id)
                sr_u = sorted(
                    (rid for rid, r in regions.items() if link.from_op in r.member_set),
                    key=natural_key,
                )
                sr_o = sorted(
                    (rid for rid, r in regions.items() if op in r.member_set),
                    key=natural_key,
                )
                if not sr_u or not sr_o:
                    raise PlanningError(
                        f"link {link_id}: endpoint not covered by any region"
                    )
                conflict = None
                for ru in sr_u:
                    for ro in sr_o:
                        if (ru, ro) in edges:
                            continue
                        if ru == ro or reaches(edges, ro, ru):
                            conflict = (ru, ro)
                            break
                    if conflict is not None:
                        break
                if conflict is None:
                    for ru in sr_u:
                        for ro in sr_o:
                            edges.setdefault((ru, ro), set()).add(link_id)
                    break
                dag, regions, edges, store_links, record = add_materialization(
                    dag,
                    regions,
                    edges,
                    established,
                    conflict[0],
                    conflict[1],
                    op,
                    link_id,
                    chooser,
                    bound=enumeration_bound,
                )
                established.extend(store_links)
                records.append(record)
                source_to_region = {
                    r.source: rid for rid, r in regions.items()
                }
                refresh_closures()
            established.append(link_id)

    region_graph = _assemble(dag, regions, edges)
    return BuildResult(
        dag=dag, region_graph=region_graph, materializations=tuple(records)
    )


def _assemble(
    dag: WorkflowDag,
    regions: dict[str, Region],
    edges: dict[tuple[str, str], set[str]],
) -> RegionGraph:
    """Final ordering and consistency checks for the built graph."""
    index = dag.topo_index
    final_regions = []
    covered: set[str] = set()
    for rid in sorted(regions, key=natural_key):
        region = regions[rid]
        members = tuple(sorted(region.members, key=lambda o: index[o]))
        if set(members) != set(pipelined_closure(dag, region.source)):
            raise PlanningError(
                f"region {rid} no longer matches the pipelined closure of {region.source}"
            )
        covered.update(members)
        final_regions.append(Region(rid, region.source, members))
    missing = {o.op_id for o in dag.operators} - covered
    if missing:
        raise PlanningError(
            f"operators not covered by any region: {sorted(missing, key=natural_key)}"
        )
    final_edges = tuple(
        RegionEdge(src, dst, tuple(sorted(vias, key=natural_key)))
        for (src, dst), vias in sorted(
            edges.items(), key=lambda kv: (natural_key(kv[0][0]), natural_key(kv[0][1]))
        )
    )
    return RegionGraph(regions=tuple(final_regions), edges=final_edges)


def plan_workflow(
    dag: WorkflowDag,
    chooser: Optional[Chooser] = None,
    *,
    enumeration_bound: int = 24,
) -> Plan:
    """Build the region graph and topologically order it for execution."""
    built = build_region_graph(dag, chooser, enumeration_bound=enumeration_bound)
    order = schedule(built.region_graph)
    return Plan(
        dag=built.dag,
        region_graph=built.region_graph,
        schedule=order,
        materializations=built.materializations,
    )
