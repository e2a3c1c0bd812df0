"""Execution regions of a workflow DAG.

A *source operator* has no pipelined input links: scans, materialization
readers, and operators whose inputs are all blocking (a group-by fed only by
a blocking link).  The *region* of a source is the sub-DAG of operators
reachable from it over pipelined links only; those operators run concurrently
while the region executes.  An operator can belong to several regions (after
a merge of two pipelines, the shared tail is in both).

The *region graph* has one vertex per region and one edge per blocking
dependency: an edge r_u -> r_o means some operator of r_o consumes a blocking
input produced by r_u, so r_u must complete first.  Regions are executed one
at a time in a topological order of this graph.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass

from .errors import CyclicRegionGraph, NotASource
from .model import WorkflowDag, natural_key


@dataclass(frozen=True)
class Region:
    """A pipelined region: its source operator and all members."""

    region_id: str
    source: str
    members: tuple[str, ...]

    @property
    def member_set(self) -> frozenset[str]:
        return frozenset(self.members)


@dataclass(frozen=True)
class RegionEdge:
    """A dependency edge between two regions.

    ``via_links`` lists the blocking links that witness the dependency,
    sorted; the smallest one is reported as the provoking link.
    """

    from_region: str
    to_region: str
    via_links: tuple[str, ...]

    @property
    def provoking_link(self) -> str:
        return self.via_links[0]


@dataclass(frozen=True)
class RegionGraph:
    """All regions of a workflow plus their dependency edges."""

    regions: tuple[Region, ...]
    edges: tuple[RegionEdge, ...]

    def region(self, region_id: str) -> Region:
        for region in self.regions:
            if region.region_id == region_id:
                return region
        raise KeyError(region_id)

    def regions_of(self, op_id: str) -> tuple[str, ...]:
        """Ids of all regions that contain the given operator."""
        return tuple(r.region_id for r in self.regions if op_id in r.member_set)


def source_operators(dag: WorkflowDag) -> tuple[str, ...]:
    """Operators without any pipelined input link, in natural id order."""
    sources = [
        op.op_id
        for op in dag.operators
        if not any(link.is_pipelined for link in dag.inputs_of[op.op_id])
    ]
    return tuple(sorted(sources, key=natural_key))


def pipelined_closure(dag: WorkflowDag, source: str) -> tuple[str, ...]:
    """All operators reachable from ``source`` via pipelined links (incl. itself).

    The result is ordered by the workflow's deterministic topological order.
    """
    seen = {source}
    frontier = deque([source])
    while frontier:
        current = frontier.popleft()
        for link in dag.outputs_of[current]:
            if link.is_pipelined and link.to_op not in seen:
                seen.add(link.to_op)
                frontier.append(link.to_op)
    index = dag.topo_index
    return tuple(sorted(seen, key=lambda op: index[op]))


def extract_region(dag: WorkflowDag, source: str, region_id: str) -> Region:
    """Build the region rooted at ``source``.

    Raises:
        NotASource: if the operator has a pipelined input link and therefore
            cannot start a region.
    """
    if source not in dag.op_by_id:
        raise NotASource(f"unknown operator: {source}")
    if any(link.is_pipelined for link in dag.inputs_of[source]):
        raise NotASource(f"operator {source} has pipelined inputs and is not a region source")
    return Region(region_id=region_id, source=source, members=pipelined_closure(dag, source))


def coarse_regions(dag: WorkflowDag) -> tuple[frozenset[str], ...]:
    """Maximal weakly connected components of the pipelined-links-only subgraph.

    This is the coarser region notion used as a testing oracle: whenever no
    operator has two or more pipelined inputs, the fine regions coincide with
    these components.
    """
    neighbours: dict[str, set[str]] = {op.op_id: set() for op in dag.operators}
    for link in dag.links:
        if link.is_pipelined:
            neighbours[link.from_op].add(link.to_op)
            neighbours[link.to_op].add(link.from_op)
    components: list[frozenset[str]] = []
    seen: set[str] = set()
    for op in sorted(neighbours, key=natural_key):
        if op in seen:
            continue
        group = {op}
        frontier = deque([op])
        while frontier:
            current = frontier.popleft()
            for other in neighbours[current]:
                if other not in group:
                    group.add(other)
                    frontier.append(other)
        seen.update(group)
        components.append(frozenset(group))
    return tuple(components)


def schedule(region_graph: RegionGraph) -> tuple[str, ...]:
    """Topological execution order of the regions (min region id first).

    Raises:
        CyclicRegionGraph: if the region graph has a dependency cycle.
    """
    indegree = {region.region_id: 0 for region in region_graph.regions}
    successors: dict[str, list[str]] = {rid: [] for rid in indegree}
    for edge in region_graph.edges:
        indegree[edge.to_region] += 1
        successors[edge.from_region].append(edge.to_region)

    key_to_id = {natural_key(rid): rid for rid in indegree}
    ready = [natural_key(rid) for rid, deg in indegree.items() if deg == 0]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        rid = key_to_id[heapq.heappop(ready)]
        order.append(rid)
        for nxt in successors[rid]:
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                heapq.heappush(ready, natural_key(nxt))
    if len(order) != len(indegree):
        stuck = sorted(set(indegree) - set(order), key=natural_key)
        raise CyclicRegionGraph(
            f"region graph has a cycle involving: {', '.join(stuck)}"
        )
    return tuple(order)


def reaches(edges: dict[tuple[str, str], set[str]], start: str, goal: str) -> bool:
    """True if ``goal`` is reachable from ``start`` over region-graph edges."""
    if start == goal:
        return True
    adjacency: dict[str, set[str]] = {}
    for (src, dst) in edges:
        adjacency.setdefault(src, set()).add(dst)
    seen = {start}
    frontier = deque([start])
    while frontier:
        current = frontier.popleft()
        for nxt in adjacency.get(current, ()):
            if nxt == goal:
                return True
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return False
