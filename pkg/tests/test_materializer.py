import itertools
import random

import pytest

from regionplan import (
    ConflictContext,
    CutSpaceTooLarge,
    EmptyCutSpace,
    MaterializationChoice,
    NotPipelined,
    PlanningError,
    Region,
    RegionEdge,
    RegionGraph,
    UnknownLink,
    apply_choice,
    build_conflict_context,
    enumerate_choices,
    natural_key,
    parse_workflow,
    plan_workflow,
    workflow_from_dict,
)
from wfgen import random_conflict_context


def brute_force_minimal_cuts(ctx):
    """Oracle: all minimal g_f subsets disconnecting the target, by definition.

    A subset is a cut if its removal leaves the conflicting operator
    unreachable from the boundary operators and the region source; it is
    minimal if dropping any single link breaks that property.
    """
    links = sorted(ctx.g_f, key=natural_key)
    starts = set(ctx.boundary) | {ctx.source}

    def disconnected(removed):
        reach = set(starts)
        changed = True
        while changed:
            changed = False
            for link_id in links:
                if link_id in removed:
                    continue
                src, dst = ctx.link_ends[link_id]
                if src in reach and dst not in reach:
                    reach.add(dst)
                    changed = True
        return ctx.conflict_op not in reach

    cuts = set()
    for size in range(1, len(links) + 1):
        for combo in itertools.combinations(links, size):
            as_set = frozenset(combo)
            if not disconnected(as_set):
                continue
            if all(not disconnected(as_set - {link_id}) for link_id in combo):
                cuts.add(as_set)
    return cuts


def test_self_join_conflict_context(fixture_path):
    dag = parse_workflow(fixture_path("self_join.json"))
    plan = plan_workflow(dag)
    assert len(plan.materializations) == 1
    ctx = plan.materializations[0].context
    assert ctx.conflict_op == "HashJoin"
    assert ctx.blocking_link == "L4"
    assert (ctx.r_u, ctx.r_o, ctx.r_m) == ("r1", "r1", "r1")
    assert ctx.source == "Scan"
    assert set(ctx.g_o) == {"L1", "L2", "L3"}
    assert set(ctx.g_m) == {"L1", "L4"}
    assert set(ctx.g_f) == {"L2", "L3"}
    assert ctx.boundary == ("Duplicate",)


def test_self_join_choices_are_the_two_single_link_cuts(fixture_path):
    dag = parse_workflow(fixture_path("self_join.json"))
    plan = plan_workflow(dag)
    record = plan.materializations[0]
    assert [c.cut for c in record.choices] == [("L2",), ("L3",)]
    assert record.chosen_index == 0
    assert record.writers == ("mw_L2",)
    assert record.readers == ("mr_L2",)
    assert record.store_links == ("L2_s",)


def test_j4_conflict_context(fixture_path):
    dag = parse_workflow(fixture_path("j4_outline.json"))
    plan = plan_workflow(dag)
    assert len(plan.materializations) == 1
    ctx = plan.materializations[0].context
    assert ctx.conflict_op == "j4"
    assert ctx.blocking_link == "L13"
    assert (ctx.r_u, ctx.r_o, ctx.r_m) == ("r4", "r2", "r3")
    assert ctx.source == "s2"
    assert set(ctx.g_m) == {"L03", "L04", "L05"}
    assert set(ctx.g_f) == {"L06", "L07", "L08", "L09", "L10", "L11"}
    assert ctx.boundary == ("d1",)


def test_j4_choice_enumeration_order_and_sizes(fixture_path):
    dag = parse_workflow(fixture_path("j4_outline.json"))
    plan = plan_workflow(dag)
    cuts = [c.cut for c in plan.materializations[0].choices]
    assert cuts == [
        ("L06",),
        ("L07", "L08"),
        ("L07", "L10"),
        ("L08", "L09"),
        ("L09", "L10"),
        ("L11",),
    ]
    assert [len(c) for c in cuts] == [1, 2, 2, 2, 2, 1]
    assert [c.index for c in plan.materializations[0].choices] == list(range(6))


def test_enumeration_matches_brute_force_on_random_contexts():
    rng = random.Random(20240817)
    for _ in range(120):
        ctx = random_conflict_context(rng, max_links=10)
        expected = brute_force_minimal_cuts(ctx)
        got = enumerate_choices(ctx)
        assert {frozenset(c.cut) for c in got} == expected
        ordered = [tuple(natural_key(l) for l in c.cut) for c in got]
        assert ordered == sorted(ordered)


def parallel_links_context(count):
    links = {f"e{i}": ("S", "O") for i in range(1, count + 1)}
    return ConflictContext(
        conflict_op="O",
        blocking_link="b",
        r_u="ru",
        r_o="ro",
        r_m="rm",
        source="S",
        g_o=tuple(links),
        g_m=(),
        g_f=tuple(links),
        boundary=(),
        link_ends=links,
    )


def test_enumeration_bound_is_on_the_cut_space_size():
    with pytest.raises(CutSpaceTooLarge, match="25 links"):
        enumerate_choices(parallel_links_context(25))
    with pytest.raises(CutSpaceTooLarge, match="bound is 4"):
        enumerate_choices(parallel_links_context(5), bound=4)
    choices = enumerate_choices(parallel_links_context(5), bound=5)
    # Parallel links admit exactly one minimal cut: remove all of them.
    assert [c.cut for c in choices] == [("e1", "e2", "e3", "e4", "e5")]


def test_unreachable_target_is_an_empty_cut_space():
    ctx = random_conflict_context(random.Random(1))
    broken = ConflictContext(
        conflict_op="elsewhere",
        blocking_link=ctx.blocking_link,
        r_u=ctx.r_u,
        r_o=ctx.r_o,
        r_m=ctx.r_m,
        source=ctx.source,
        g_o=ctx.g_o,
        g_m=ctx.g_m,
        g_f=ctx.g_f,
        boundary=ctx.boundary,
        link_ends=ctx.link_ends,
    )
    with pytest.raises(EmptyCutSpace):
        enumerate_choices(broken)


def empty_supply_workflow():
    """A DAG where one conflict has no cuttable pipelined supply.

    The blocking chain into ``o`` hangs off o's own pipelined descendant
    ``w``, so every pipelined path link s -> o also feeds the via link and
    g_f comes out empty.
    """
    return workflow_from_dict(
        {
            "operators": [
                {"id": "s", "kind": "scan"},
                {"id": "c", "kind": "transform"},
                {"id": "o", "kind": "join-probe-build"},
                {"id": "w", "kind": "transform"},
                {"id": "z", "kind": "scan"},
                {"id": "m", "kind": "join-probe-build"},
                {"id": "y", "kind": "transform"},
                {"id": "u", "kind": "transform"},
            ],
            "links": [
                {"id": "L1", "from": "s", "to": "c", "mode": "pipelined"},
                {"id": "L2", "from": "c", "to": "o", "to_port": 0, "mode": "pipelined"},
                {"id": "L3", "from": "o", "to": "w", "mode": "pipelined"},
                {"id": "L4", "from": "w", "to": "m", "to_port": 1, "mode": "blocking"},
                {"id": "L5", "from": "z", "to": "m", "to_port": 0, "mode": "pipelined"},
                {"id": "L6", "from": "z", "to": "y", "mode": "pipelined"},
                {"id": "L7", "from": "y", "to": "u", "mode": "blocking"},
                {"id": "L8", "from": "u", "to": "o", "to_port": 1, "mode": "blocking"},
            ],
        }
    )


def test_conflict_with_no_cuttable_supply_raises():
    dag = empty_supply_workflow()
    graph = RegionGraph(
        regions=(
            Region("r1", "s", ("s", "c", "o", "w")),
            Region("r2", "z", ("z", "m", "y")),
            Region("r3", "u", ("u",)),
        ),
        edges=(
            RegionEdge("r1", "r2", ("L4",)),
            RegionEdge("r2", "r3", ("L7",)),
        ),
    )
    with pytest.raises(EmptyCutSpace, match="no cuttable links"):
        build_conflict_context(dag, graph, "o", "L8")


def test_apply_choice_rewrites_the_cut_link(fixture_path):
    dag = parse_workflow(fixture_path("j4_outline.json"))
    rewritten = apply_choice(dag, MaterializationChoice(index=0, cut=("L06",)))
    assert "L06" not in rewritten.link_by_id
    assert rewritten.operator("mw_L06").kind == "mat-writer"
    assert rewritten.operator("mr_L06").kind == "mat-reader"
    into_writer = rewritten.link("L06_w")
    assert (into_writer.from_op, into_writer.to_op) == ("d1", "mw_L06")
    assert into_writer.is_pipelined
    store = rewritten.link("L06_s")
    assert (store.from_op, store.to_op) == ("mw_L06", "mr_L06")
    assert store.is_blocking
    out = rewritten.link("L06_r")
    assert (out.from_op, out.to_op) == ("mr_L06", "x")
    assert out.is_pipelined
    assert out.to_port == dag.link("L06").to_port
    assert len(rewritten.operators) == len(dag.operators) + 2
    assert len(rewritten.links) == len(dag.links) + 2


def test_apply_choice_rejects_bad_cuts(fixture_path):
    dag = parse_workflow(fixture_path("j4_outline.json"))
    with pytest.raises(UnknownLink):
        apply_choice(dag, MaterializationChoice(index=0, cut=("nope",)))
    with pytest.raises(NotPipelined):
        apply_choice(dag, MaterializationChoice(index=0, cut=("L13",)))


def test_apply_choice_detects_id_collisions():
    # A user operator that happens to carry a writer-style name blocks the cut.
    dag = workflow_from_dict(
        {
            "operators": [
                {"id": "S", "kind": "scan"},
                {"id": "T", "kind": "transform"},
                {"id": "mw_L1", "kind": "transform"},
            ],
            "links": [
                {"id": "L1", "from": "S", "to": "T", "mode": "pipelined"},
                {"id": "L2", "from": "T", "to": "mw_L1", "mode": "pipelined"},
            ],
        }
    )
    with pytest.raises(PlanningError, match="collision"):
        apply_choice(dag, MaterializationChoice(index=0, cut=("L1",)))


def test_chooser_decides_which_cut_is_applied(fixture_path):
    from regionplan import ChoiceDecision

    dag = parse_workflow(fixture_path("self_join.json"))

    def pick_second(dag_arg, ctx, choices):
        return ChoiceDecision(chosen_index=1)

    plan = plan_workflow(dag, pick_second)
    record = plan.materializations[0]
    assert record.chosen_index == 1
    assert record.writers == ("mw_L3",)
    members = {r.region_id: set(r.members) for r in plan.region_graph.regions}
    assert members == {
        "r1_1": {"Scan", "Duplicate", "Filter", "mw_L3"},
        "r1_2": {"mr_L3", "HashJoin", "Result"},
    }


def test_reader_region_schedules_after_its_writer(fixture_path):
    plan = plan_workflow(parse_workflow(fixture_path("self_join.json")))
    members = {r.region_id: set(r.members) for r in plan.region_graph.regions}
    assert members == {
        "r1_1": {"Scan", "Duplicate", "mw_L2"},
        "r1_2": {"mr_L2", "Filter", "HashJoin", "Result"},
    }
    edges = [(e.from_region, e.to_region, set(e.via_links)) for e in plan.region_graph.edges]
    assert edges == [("r1_1", "r1_2", {"L2_s", "L4"})]
    assert plan.schedule == ("r1_1", "r1_2")
