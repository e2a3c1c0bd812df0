"""Deterministic tuple-level discrete-event simulation of a region schedule.

Regions execute strictly one after another (barrier scheduling): region k+1
starts at the instant region k's window has fully quiesced, which includes any
blocking-input consumption by downstream operators.  Within a window each
operator is a single logical worker with a FIFO backlog; a tuple started at an
instant with A busy-or-backlogged operators on a K-core machine takes
per_tuple_cost x max(1, A/K) seconds.

Emission follows the cumulative floor-selectivity rule: after consuming its
k-th input an operator's total output is floor(selectivity x k), so the k-th
finish emits the difference.  Scans emit exactly one tuple per stored unit
and result operators report one output per consumed tuple.  An operator fed
by a blocking link consumes those tuples during the producing region's window
(at blocking_input_cost each) but emits nothing until its own region starts,
at which point the accumulated output credit is released.  Mat-writers count
what they persist; mat-readers do not consume during the producing window and
instead replay the stored tuple count as a source when their region runs.
"""

from __future__ import annotations

import heapq
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .costs import CostModel
from .errors import DeadlockDetected, PlanningError
from .model import WorkflowDag, natural_key
from .regions import RegionGraph


@dataclass(frozen=True)
class SimConfig:
    """Simulation knobs: machine size, mat-op default costs, output target."""

    cores: Optional[int] = None
    writer_cost: float = 0.0
    reader_cost: float = 0.0
    d_target: int = 1
    collect_trace: bool = False


@dataclass(frozen=True)
class RegionWindow:
    """One region's execution interval plus its first result-output instant."""

    region_id: str
    start: float
    end: float
    first_output: Optional[float]


@dataclass(frozen=True)
class CostEstimate:
    """Region timing: full window time and (optionally) time to first output."""

    region_id: str
    t_full: float
    t_first: Optional[float]


@dataclass(frozen=True)
class SimReport:
    windows: tuple[RegionWindow, ...]
    result_outputs: Mapping[str, tuple[float, ...]]
    link_delivered: Mapping[str, int]
    materialized: Mapping[str, int]
    tau: Optional[float]
    total_time: float
    trace: tuple = ()


def simulate(
    dag: WorkflowDag,
    region_graph: RegionGraph,
    schedule: Sequence[str],
    costs: CostModel,
    cfg: Optional[SimConfig] = None,
) -> SimReport:
    """Run the schedule to completion and report times and tuple counts."""
    cfg = cfg or SimConfig()
    if cfg.d_target < 1:
        raise ValueError("d_target must be >= 1")
    known = {r.region_id for r in region_graph.regions}
    if sorted(schedule, key=natural_key) != sorted(known, key=natural_key):
        raise PlanningError("schedule must list every region exactly once")

    resolved = {op.op_id: costs.resolve(op) for op in dag.operators}
    kind_of = {op.op_id: op.kind for op in dag.operators}
    is_result = {op.op_id: op.is_result for op in dag.operators}
    regions_of_op: dict[str, list[str]] = defaultdict(list)
    for region in region_graph.regions:
        for member in region.members:
            regions_of_op[member].append(region.region_id)

    consumed: dict[str, int] = defaultdict(int)
    emitted: dict[str, int] = defaultdict(int)
    link_delivered: dict[str, int] = {l.link_id: 0 for l in dag.links}
    result_stream: list[float] = []
    per_result: dict[str, list[float]] = {
        op.op_id: [] for op in dag.operators if op.is_result
    }
    finished: set[str] = set()
    trace: list[tuple] = []
    windows: list[RegionWindow] = []
    clock = 0.0

    def emission_delta(op_id: str) -> int:
        """Output owed under the cumulative floor rule after a consumption."""
        kind = kind_of[op_id]
        if kind == "scan" or is_result[op_id]:
            return consumed[op_id] - emitted[op_id]
        target = math.floor(resolved[op_id].selectivity * consumed[op_id])
        return max(0, target - emitted[op_id])

    for rid in schedule:
        region = region_graph.region(rid)
        members = region.member_set
        start = clock

        for member in sorted(members, key=natural_key):
            for link in dag.inputs_of[member]:
                if not link.is_blocking:
                    continue
                producer = link.from_op
                if producer in members:
                    raise DeadlockDetected(
                        f"region {rid}: member {member} takes blocking input "
                        f"{link.link_id} from co-member {producer}"
                    )
                unfinished = [
                    pr for pr in regions_of_op[producer] if pr not in finished
                ]
                if unfinished:
                    raise DeadlockDetected(
                        f"region {rid}: blocking input {link.link_id} of {member} "
                        f"depends on unfinished region(s) {unfinished}"
                    )

        pending: dict[str, int] = defaultdict(int)
        busy: set[str] = set()
        tracked: set[str] = set()
        first_output: Optional[float] = None
        heap: list[tuple[float, tuple, int, str]] = []
        seq = 0
        current_time = start
        last_time = start

        def record_output(op_id: str, time: float) -> None:
            nonlocal first_output
            result_stream.append(time)
            per_result[op_id].append(time)
            if first_output is None:
                first_output = time

        def deliver(op_id: str, count: int, time: float) -> None:
            if count <= 0:
                return
            for link in dag.outputs_of[op_id]:
                link_delivered[link.link_id] += count
                dst = link.to_op
                if link.is_pipelined:
                    pending[dst] += count
                    tracked.add(dst)
                elif kind_of[dst] != "mat-reader":
                    pending[dst] += count
                    tracked.add(dst)

        # Window start: preload the source, then release any output credit
        # accumulated by members while they were blocked.
        for member in sorted(members, key=natural_key):
            entry = resolved[member]
            if member == region.source:
                if kind_of[member] == "scan":
                    pending[member] += entry.scan_cardinality or 0
                    tracked.add(member)
                elif kind_of[member] == "mat-reader":
                    stored = sum(
                        link_delivered[l.link_id]
                        for l in dag.inputs_of[member]
                        if l.is_blocking
                    )
                    pending[member] += stored
                    tracked.add(member)
            has_blocking = any(l.is_blocking for l in dag.inputs_of[member])
            if has_blocking and kind_of[member] != "mat-reader":
                delta = emission_delta(member)
                if delta > 0:
                    emitted[member] += delta
                    if cfg.collect_trace:
                        trace.append((start, member, "flush", delta))
                    if is_result[member]:
                        for _ in range(delta):
                            record_output(member, start)
                    deliver(member, delta, start)

        while True:
            runnable = sorted(
                (o for o in tracked if pending[o] > 0 and o not in busy),
                key=natural_key,
            )
            for op_id in runnable:
                active = sum(
                    1 for o in tracked if o in busy or pending[o] > 0
                )
                factor = 1.0
                if cfg.cores is not None:
                    factor = max(1.0, active / cfg.cores)
                if op_id in members:
                    base = resolved[op_id].per_tuple_cost
                else:
                    base = resolved[op_id].blocking_cost
                pending[op_id] -= 1
                busy.add(op_id)
                seq += 1
                heapq.heappush(
                    heap, (current_time + base * factor, natural_key(op_id), seq, op_id)
                )
                if cfg.collect_trace:
                    trace.append((current_time, op_id, "dispatch", factor))
            if not heap:
                break
            time, _, _, op_id = heapq.heappop(heap)
            current_time = time
            last_time = time
            busy.discard(op_id)
            consumed[op_id] += 1
            if cfg.collect_trace:
                trace.append((time, op_id, "finish", consumed[op_id]))
            if op_id in members:
                if is_result[op_id]:
                    record_output(op_id, time)
                    emitted[op_id] += 1
                else:
                    delta = emission_delta(op_id)
                    if delta > 0:
                        emitted[op_id] += delta
                        deliver(op_id, delta, time)
            # Foreign blocking consumers only consume; their output credit is
            # released when their own region starts.

        end = last_time
        windows.append(RegionWindow(rid, start, end, first_output))
        if cfg.collect_trace:
            trace.append((end, rid, "window-end", end - start))
        finished.add(rid)
        clock = end

    materialized = {
        op.op_id: sum(
            link_delivered[l.link_id]
            for l in dag.outputs_of[op.op_id]
            if l.is_blocking
        )
        for op in dag.operators
        if op.kind == "mat-writer"
    }
    tau = None
    if len(result_stream) >= cfg.d_target:
        tau = result_stream[cfg.d_target - 1]
    return SimReport(
        windows=tuple(windows),
        result_outputs={
            op_id: tuple(times[: cfg.d_target])
            for op_id, times in per_result.items()
        },
        link_delivered=dict(link_delivered),
        materialized=materialized,
        tau=tau,
        total_time=clock,
        trace=tuple(trace),
    )


def simulate_plan(plan, costs: CostModel, cfg: Optional[SimConfig] = None) -> SimReport:
    """Convenience wrapper running :func:`simulate` on a planner Plan."""
    return simulate(plan.dag, plan.region_graph, plan.schedule, costs, cfg)


def measure_region_times(report: SimReport, plan) -> tuple[CostEstimate, ...]:
    """Per-region t_full/t_first read off a simulation report."""
    estimates = []
    for window in report.windows:
        t_first = None
        if window.first_output is not None:
            t_first = window.first_output - window.start
        estimates.append(
            CostEstimate(
                region_id=window.region_id,
                t_full=window.end - window.start,
                t_first=t_first,
            )
        )
    return tuple(estimates)
