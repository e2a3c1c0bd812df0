"""Materialization: breaking region-dependency cycles by cutting pipelined links.

When a blocking link would add a region-graph edge r_u -> r_o that closes a
cycle, the conflicting operator's pipelined supply must be interrupted: a cut
link ``from -> to`` is replaced by ``from -> writer`` (pipelined), ``writer ->
reader`` (blocking store) and ``reader -> to`` (pipelined replay).  The reader
has no pipelined input, so it starts a new region that can run after r_u.

The legal cut space g_f is the pipelined sub-DAG feeding the conflicting
operator minus the part that also supplies the blocking input chain; a *choice*
is a minimal set of g_f links whose removal makes the conflicting operator
unreachable from the boundary operators.  All minimal choices are enumerated,
ordered lexicographically by their sorted link ids.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

from .errors import (
    CutSpaceTooLarge,
    EmptyCutSpace,
    NotPipelined,
    PlanningError,
    UnknownLink,
    UnschedulableError,
)
from .model import LinkSpec, OperatorSpec, WorkflowDag, natural_key
from .regions import Region, RegionEdge, RegionGraph, pipelined_closure, reaches

WRITER_PREFIX = "mw_"
READER_PREFIX = "mr_"


@dataclass(frozen=True)
class ConflictContext:
    """Everything needed to enumerate materialization choices for one conflict.

    Attributes:
        conflict_op: operator whose blocking input provoked the cycle.
        blocking_link: id of that blocking input link.
        r_u: region supplying the blocking input.
        r_o: region containing the conflicting operator (to be split).
        r_m: region after r_o on the cycle (receives blocking data from r_o).
        source: source operator of r_o.
        g_o: links on pipelined paths source -> conflict_op.
        g_m: links supplying the blocking input chain from the source.
        g_f: legal cut space, g_o minus g_m.
        boundary: operators of the g_m side that feed at least one g_f link.
        link_ends: (from, to) endpoints for every link mentioned above.
    """

    conflict_op: str
    blocking_link: str
    r_u: str
    r_o: str
    r_m: str
    source: str
    g_o: tuple[str, ...]
    g_m: tuple[str, ...]
    g_f: tuple[str, ...]
    boundary: tuple[str, ...]
    link_ends: Mapping[str, tuple[str, str]] = field(repr=False)


@dataclass(frozen=True)
class MaterializationChoice:
    """One minimal cut-link set that would break the conflict."""

    index: int
    cut: tuple[str, ...]

    @property
    def writers(self) -> tuple[str, ...]:
        return tuple(WRITER_PREFIX + link_id for link_id in self.cut)

    @property
    def readers(self) -> tuple[str, ...]:
        return tuple(READER_PREFIX + link_id for link_id in self.cut)


@dataclass(frozen=True)
class ChoiceDecision:
    """A chooser's verdict: which choice to apply, plus optional evaluations."""

    chosen_index: int
    evaluations: Optional[tuple] = None


@dataclass(frozen=True)
class MaterializationRecord:
    """Log entry for one resolved conflict."""

    context: ConflictContext
    choices: tuple[MaterializationChoice, ...]
    evaluations: Optional[tuple]
    chosen_index: int
    writers: tuple[str, ...]
    readers: tuple[str, ...]
    store_links: tuple[str, ...]


Chooser = Callable[[WorkflowDag, ConflictContext, tuple[MaterializationChoice, ...]], ChoiceDecision]


def first_choice(dag, ctx, choices) -> ChoiceDecision:
    """Default chooser: take the first enumerated choice, no evaluation."""
    return ChoiceDecision(chosen_index=0, evaluations=None)


def _links_on_pipelined_paths(dag: WorkflowDag, start: str, goal: str) -> set[str]:
    """Ids of all pipelined links lying on some pipelined path start -> goal."""
    forward = {start}
    frontier = deque([start])
    while frontier:
        current = frontier.popleft()
        for link in dag.outputs_of[current]:
            if link.is_pipelined and link.to_op not in forward:
                forward.add(link.to_op)
                frontier.append(link.to_op)
    backward = {goal}
    frontier = deque([goal])
    while frontier:
        current = frontier.popleft()
        for link in dag.inputs_of[current]:
            if link.is_pipelined and link.from_op not in backward:
                backward.add(link.from_op)
                frontier.append(link.from_op)
    return {
        link.link_id
        for link in dag.links
        if link.is_pipelined and link.from_op in forward and link.to_op in backward
    }


def _first_cyclic_pair(
    regions: Mapping[str, Region],
    edges: Mapping[tuple[str, str], set[str]],
    from_op: str,
    to_op: str,
) -> Optional[tuple[str, str]]:
    """First (r_u, r_o) pair, in natural order, whose new edge would cycle."""
    sr_u = sorted(
        (rid for rid, r in regions.items() if from_op in r.member_set), key=natural_key
    )
    sr_o = sorted(
        (rid for rid, r in regions.items() if to_op in r.member_set), key=natural_key
    )
    for ru in sr_u:
        for ro in sr_o:
            if (ru, ro) in edges:
                continue
            if ru == ro or reaches(edges, ro, ru):
                return (ru, ro)
    return None


def _first_hop_towards(
    edges: Mapping[tuple[str, str], set[str]], start: str, goal: str
) -> str:
    """First region after ``start`` on a shortest edge path to ``goal``."""
    adjacency: dict[str, list[str]] = {}
    for (src, dst) in edges:
        adjacency.setdefault(src, []).append(dst)
    for succs in adjacency.values():
        succs.sort(key=natural_key)
    parent: dict[str, str] = {}
    frontier = deque([start])
    seen = {start}
    while frontier:
        current = frontier.popleft()
        for nxt in adjacency.get(current, ()):
            if nxt in seen:
                continue
            seen.add(nxt)
            parent[nxt] = current
            if nxt == goal:
                hop = goal
                while parent[hop] != start:
                    hop = parent[hop]
                return hop
            frontier.append(nxt)
    raise PlanningError(f"no path from region {start} to region {goal}")


def build_conflict_context(
    dag: WorkflowDag,
    region_graph: RegionGraph,
    conflict_op: str,
    blocking_link: str,
) -> ConflictContext:
    """Derive the cut space for the cycle provoked by ``blocking_link`` into ``conflict_op``."""
    if blocking_link not in dag.link_by_id:
        raise UnknownLink(f"unknown link: {blocking_link}")
    link = dag.link(blocking_link)
    if not link.is_blocking:
        raise PlanningError(f"link {blocking_link} is not blocking; no conflict possible")

    regions = {r.region_id: r for r in region_graph.regions}
    edges = {(e.from_region, e.to_region): set(e.via_links) for e in region_graph.edges}
    pair = _first_cyclic_pair(regions, edges, link.from_op, conflict_op)
    if pair is None:
        raise PlanningError(
            f"blocking link {blocking_link} into {conflict_op} does not create a cycle"
        )
    r_u, r_o = pair

    if r_u == r_o:
        r_m = r_o
        via_links = [blocking_link]
    else:
        r_m = _first_hop_towards(edges, r_o, r_u)
        via_links = sorted(edges[(r_o, r_m)], key=natural_key)

    source = regions[r_o].source
    g_o = _links_on_pipelined_paths(dag, source, conflict_op)

    g_m: set[str] = set()
    ops_m: set[str] = {source}
    for via_id in via_links:
        via = dag.link(via_id)
        path_links = _links_on_pipelined_paths(dag, source, via.from_op)
        g_m |= path_links
        g_m.add(via_id)
        for link_id in path_links:
            l = dag.link(link_id)
            ops_m.add(l.from_op)
            ops_m.add(l.to_op)
        ops_m.add(via.from_op)
        ops_m.add(via.to_op)

    g_f = g_o - g_m
    if not g_f:
        raise EmptyCutSpace(
            f"conflict at {conflict_op}: the pipelined supply has no cuttable links"
        )
    boundary = sorted(
        {dag.link(l).from_op for l in g_f} & ops_m, key=natural_key
    )
    mentioned = g_o | g_m | g_f
    link_ends = {
        l: (dag.link(l).from_op, dag.link(l).to_op) for l in mentioned
    }
    return ConflictContext(
        conflict_op=conflict_op,
        blocking_link=blocking_link,
        r_u=r_u,
        r_o=r_o,
        r_m=r_m,
        source=source,
        g_o=tuple(sorted(g_o, key=natural_key)),
        g_m=tuple(sorted(g_m, key=natural_key)),
        g_f=tuple(sorted(g_f, key=natural_key)),
        boundary=tuple(boundary),
        link_ends=link_ends,
    )


def enumerate_choices(
    ctx: ConflictContext, *, bound: int = 24
) -> tuple[MaterializationChoice, ...]:
    """All minimal cut-link sets of g_f, ordered lexicographically by link ids.

    A set is a cut if removing it leaves the conflicting operator unreachable
    from every boundary operator (and from the region source) over g_f links.
    Enumeration is brute force over subsets in ascending size with minimality
    pruning; above ``bound`` links it refuses with :class:`CutSpaceTooLarge`.
    """
    cut_space = sorted(ctx.g_f, key=natural_key)
    if len(cut_space) > bound:
        raise CutSpaceTooLarge(
            f"cut space has {len(cut_space)} links, enumeration bound is {bound}"
        )
    outgoing: dict[str, list[tuple[str, str]]] = {}
    for link_id in cut_space:
        src, dst = ctx.link_ends[link_id]
        outgoing.setdefault(src, []).append((link_id, dst))
    starts = sorted(set(ctx.boundary) | {ctx.source}, key=natural_key)
    target = ctx.conflict_op

    def disconnected(removed: frozenset[str]) -> bool:
        seen = set(starts)
        frontier = deque(starts)
        while frontier:
            current = frontier.popleft()
            for link_id, dst in outgoing.get(current, ()):
                if link_id in removed or dst in seen:
                    continue
                if dst == target:
                    return False
                seen.add(dst)
                frontier.append(dst)
        return True

    if disconnected(frozenset()):
        raise EmptyCutSpace(
            f"conflict at {target}: operator already unreachable in the cut space"
        )

    minimal: list[tuple[str, ...]] = []
    for size in range(1, len(cut_space) + 1):
        for combo in itertools.combinations(cut_space, size):
            combo_set = frozenset(combo)
            if any(set(found) <= combo_set for found in minimal):
                continue
            if disconnected(combo_set):
                minimal.append(combo)
    minimal.sort(key=lambda cut: tuple(natural_key(link_id) for link_id in cut))
    return tuple(
        MaterializationChoice(index=i, cut=cut) for i, cut in enumerate(minimal)
    )


def apply_choice(dag: WorkflowDag, choice: MaterializationChoice) -> WorkflowDag:
    """Rewrite the DAG: each cut link becomes writer -> store -> reader.

    For a cut link ``L: a -> b`` the result contains ``a -> mw_L`` (pipelined),
    ``mw_L -> mr_L`` (blocking store, link id ``L_s``) and ``mr_L -> b``
    (pipelined, preserving b's input port).
    """
    cut = tuple(sorted(choice.cut, key=natural_key))
    for link_id in cut:
        if link_id not in dag.link_by_id:
            raise UnknownLink(f"cannot cut unknown link: {link_id}")
        if not dag.link(link_id).is_pipelined:
            raise NotPipelined(f"cannot cut non-pipelined link: {link_id}")

    cut_set = set(cut)
    operators = list(dag.operators)
    links = [l for l in dag.links if l.link_id not in cut_set]
    for link_id in cut:
        old = dag.link(link_id)
        writer = WRITER_PREFIX + link_id
        reader = READER_PREFIX + link_id
        for new_id in (writer, reader):
            if new_id in dag.op_by_id:
                raise PlanningError(f"operator id collision while materializing: {new_id}")
        operators.append(OperatorSpec(op_id=writer, kind="mat-writer", label=f"store {link_id}"))
        operators.append(OperatorSpec(op_id=reader, kind="mat-reader", label=f"replay {link_id}"))
        for new_id in (f"{link_id}_w", f"{link_id}_s", f"{link_id}_r"):
            if new_id in dag.link_by_id:
                raise PlanningError(f"link id collision while materializing: {new_id}")
        links.append(LinkSpec(f"{link_id}_w", old.from_op, writer, 0, "pipelined"))
        links.append(LinkSpec(f"{link_id}_s", writer, reader, 0, "blocking"))
        links.append(LinkSpec(f"{link_id}_r", reader, old.to_op, old.to_port, "pipelined"))
    return dag.with_changes(operators=operators, links=links)


def _rewire(
    new_dag: WorkflowDag,
    old_dag: WorkflowDag,
    regions: "dict[str, Region]",
    established: Sequence[str],
    choice: MaterializationChoice,
    r_u: str,
    blocking_link: str,
):
    """Recompute regions and edges after a cut; None if the result still cycles.

    Regions whose pipelined closure changed are *broken*: each is replaced by
    a ``<id>_1`` region for its old source plus ``<id>_2``, ``<id>_3``, ...
    reader regions (in ascending cut-link order).  Edges are rebuilt from
    scratch from every already-processed blocking link, then the conflict's
    own edges from r_u to the new reader regions are added.
    """
    broken: dict[str, Region] = {}
    closures: dict[str, tuple[str, ...]] = {}
    for rid, region in regions.items():
        closure = pipelined_closure(new_dag, region.source)
        closures[rid] = closure
        if set(closure) != region.member_set:
            broken[rid] = region

    owners: dict[str, list[str]] = {rid: [] for rid in broken}
    for link_id in sorted(choice.cut, key=natural_key):
        old_link = old_dag.link(link_id)
        for rid in sorted(broken, key=natural_key):
            members = broken[rid].member_set
            if old_link.from_op in members and old_link.to_op in members:
                owners[rid].append(link_id)
                break
        else:
            raise PlanningError(
                f"cut link {link_id} is not interior to any broken region"
            )

    new_regions: dict[str, Region] = {}
    for rid, region in regions.items():
        if rid not in broken:
            new_regions[rid] = region
            continue
        base = f"{rid}_1"
        new_regions[base] = Region(base, region.source, closures[rid])
        for offset, link_id in enumerate(owners[rid], start=2):
            reader = READER_PREFIX + link_id
            reader_rid = f"{rid}_{offset}"
            new_regions[reader_rid] = Region(
                reader_rid, reader, pipelined_closure(new_dag, reader)
            )

    member_index: dict[str, list[str]] = {}
    for rid, region in new_regions.items():
        for op in region.members:
            member_index.setdefault(op, []).append(rid)

    store_links = [f"{link_id}_s" for link_id in sorted(choice.cut, key=natural_key)]
    new_edges: dict[tuple[str, str], set[str]] = {}
    for link_id in sorted(set(established) | set(store_links), key=natural_key):
        link = new_dag.link_by_id.get(link_id)
        if link is None:
            continue
        for rs in member_index.get(link.from_op, ()):
            for rt in member_index.get(link.to_op, ()):
                if rs == rt:
                    return None
                new_edges.setdefault((rs, rt), set()).add(link_id)

    source_u = regions[r_u].source
    r_u_new = None
    for rid, region in new_regions.items():
        if region.source == source_u:
            r_u_new = rid
            break
    if r_u_new is None:
        raise PlanningError(f"region for source {source_u} vanished during rewiring")
    reader_ops = set(choice.readers)
    for rid, region in new_regions.items():
        if region.source in reader_ops:
            if rid == r_u_new:
                return None
            new_edges.setdefault((r_u_new, rid), set()).add(blocking_link)

    if _has_cycle(new_regions, new_edges):
        return None
    return new_regions, new_edges, store_links


def _has_cycle(
    regions: Mapping[str, Region], edges: Mapping[tuple[str, str], set[str]]
) -> bool:
    indegree = {rid: 0 for rid in regions}
    successors: dict[str, list[str]] = {rid: [] for rid in regions}
    for (src, dst) in edges:
        indegree[dst] += 1
        successors[src].append(dst)
    frontier = deque(rid for rid, deg in indegree.items() if deg == 0)
    emitted = 0
    while frontier:
        rid = frontier.popleft()
        emitted += 1
        for nxt in successors[rid]:
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                frontier.append(nxt)
    return emitted != len(indegree)


def add_materialization(
    dag: WorkflowDag,
    regions: "dict[str, Region]",
    edges: "dict[tuple[str, str], set[str]]",
    established: Sequence[str],
    r_u: str,
    r_o: str,
    conflict_op: str,
    blocking_link: str,
    chooser: Optional[Chooser] = None,
    *,
    bound: int = 24,
):
    """Resolve one region-graph cycle by materializing a chosen cut.

    Enumerates the choices for the conflict, asks the chooser to pick one, and
    applies it.  If the preferred choice still leaves the region graph cyclic
    the remaining choices are tried in enumeration order.

    Returns:
        ``(new_dag, new_regions, new_edges, store_links, record)``.

    Raises:
        UnschedulableError: if every choice still yields a cycle.
    """
    graph_view = RegionGraph(
        regions=tuple(regions.values()),
        edges=tuple(
            RegionEdge(src, dst, tuple(sorted(vias, key=natural_key)))
            for (src, dst), vias in edges.items()
        ),
    )
    ctx = build_conflict_context(dag, graph_view, conflict_op, blocking_link)
    choices = enumerate_choices(ctx, bound=bound)
    decision = (chooser or first_choice)(dag, ctx, choices)
    if not 0 <= decision.chosen_index < len(choices):
        raise PlanningError(
            f"chooser returned invalid choice index {decision.chosen_index}"
        )

    try_order = [decision.chosen_index] + [
        i for i in range(len(choices)) if i != decision.chosen_index
    ]
    for index in try_order:
        choice = choices[index]
        trial_dag = apply_choice(dag, choice)
        rewired = _rewire(
            trial_dag, dag, regions, established, choice, ctx.r_u, blocking_link
        )
        if rewired is None:
            continue
        new_regions, new_edges, store_links = rewired
        record = MaterializationRecord(
            context=ctx,
            choices=choices,
            evaluations=decision.evaluations,
            chosen_index=index,
            writers=choice.writers,
            readers=choice.readers,
            store_links=tuple(store_links),
        )
        return trial_dag, new_regions, new_edges, store_links, record
    raise UnschedulableError(
        f"conflict at {conflict_op}: every materialization choice still yields a cycle"
    )
