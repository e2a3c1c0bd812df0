import random

import pytest

from regionplan import (
    CyclicRegionGraph,
    NotASource,
    Region,
    RegionEdge,
    RegionGraph,
    coarse_regions,
    extract_region,
    parse_workflow,
    pipelined_closure,
    plan_workflow,
    schedule,
    source_operators,
)
from wfgen import random_workflow


def test_source_operators_include_scans_and_blocking_only_consumers(fixture_path):
    dag = parse_workflow(fixture_path("j4_outline.json"))
    # g3 and g4 receive only blocking inputs, so they root their own regions.
    assert source_operators(dag) == ("g3", "g4", "s1", "s2")


def test_pipelined_closure_follows_only_pipelined_links(fixture_path):
    dag = parse_workflow(fixture_path("j4_outline.json"))
    assert pipelined_closure(dag, "s1") == ("s1", "b1")
    assert pipelined_closure(dag, "s2") == ("s2", "j1", "d1", "x", "p1", "p2", "y", "j4", "res")
    assert pipelined_closure(dag, "g3") == ("g3",)


def test_closure_is_listed_in_topological_order(fixture_path):
    dag = parse_workflow(fixture_path("running_example.json"))
    closure = pipelined_closure(dag, "Scan1")
    index = dag.topo_index
    positions = [index[op] for op in closure]
    assert positions == sorted(positions)


def test_extract_region_requires_a_source(fixture_path):
    dag = parse_workflow(fixture_path("self_join.json"))
    with pytest.raises(NotASource, match="Filter"):
        extract_region(dag, "Filter", "r1")


def test_merge_workflow_regions_share_downstream_operators(fixture_path):
    plan = plan_workflow(parse_workflow(fixture_path("merge_workflow.json")))
    regions = {r.region_id: set(r.members) for r in plan.region_graph.regions}
    assert regions == {
        "r1": {"Scan1", "Merge", "Viz"},
        "r2": {"Scan2", "HashJoin", "Project", "Merge", "Viz"},
    }
    assert not plan.materializations
    edges = [(e.from_region, e.to_region, tuple(e.via_links)) for e in plan.region_graph.edges]
    assert edges == [("r1", "r2", ("M2",))]
    assert plan.schedule == ("r1", "r2")


def test_coarse_regions_merge_overlapping_fine_regions(fixture_path):
    dag = parse_workflow(fixture_path("merge_workflow.json"))
    assert coarse_regions(dag) == (
        frozenset({"Scan1", "Scan2", "HashJoin", "Project", "Merge", "Viz"}),
    )


def test_coarse_regions_of_running_example(fixture_path):
    # The shared BarChart glues the three join branches into one weak
    # component, so coarse grouping loses the per-period split that the fine
    # regions keep.
    dag = parse_workflow(fixture_path("running_example.json"))
    components = set(coarse_regions(dag))
    all_ops = {op.op_id for op in dag.operators}
    assert components == {
        frozenset({"Scan1", "Filter1"}),
        frozenset(all_ops - {"Scan1", "Filter1"}),
    }


def test_schedule_orders_regions_topologically(fixture_path):
    plan = plan_workflow(parse_workflow(fixture_path("running_example.json")))
    assert plan.schedule == ("r1", "r2", "r3", "r4")


def test_schedule_rejects_cyclic_region_graphs():
    graph = RegionGraph(
        regions=(
            Region("r1", "a", ("a",)),
            Region("r2", "b", ("b",)),
        ),
        edges=(
            RegionEdge("r1", "r2", ("L1",)),
            RegionEdge("r2", "r1", ("L2",)),
        ),
    )
    with pytest.raises(CyclicRegionGraph):
        schedule(graph)


def test_region_graph_lookup_helpers(fixture_path):
    plan = plan_workflow(parse_workflow(fixture_path("merge_workflow.json")))
    graph = plan.region_graph
    assert graph.region("r2").source == "Scan2"
    assert graph.regions_of("Merge") == ("r1", "r2")
    assert graph.regions_of("Scan2") == ("r2",)


def test_fine_regions_partition_when_single_pipelined_inputs():
    rng = random.Random(7)
    for _ in range(50):
        dag = random_workflow(rng, single_pipelined_input=True)
        fine = [
            frozenset(pipelined_closure(dag, src)) for src in source_operators(dag)
        ]
        seen = {}
        for members in fine:
            for op in members:
                assert op not in seen, "operator in two fine regions"
                seen[op] = True
        assert set(seen) == {op.op_id for op in dag.operators}
