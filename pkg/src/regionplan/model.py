"""Workflow graph model: operators, links, parsing, validation and export.

A workflow is a DAG of operators connected by data links.  A link is either
*pipelined* (the destination consumes tuples as they arrive) or *blocking*
(the destination does not produce any output until all data on the link has
been processed -- e.g. the build input of a hash join).  Values are immutable
after construction; planner passes that modify a workflow build a new one.
"""

from __future__ import annotations

import json
import re
from collections import deque
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path

from .errors import ParseError, SchemaError, ValidationError

OPERATOR_KINDS = (
    "scan",
    "transform",
    "replicate",
    "merge",
    "join-probe-build",
    "result",
    "mat-writer",
    "mat-reader",
)

#: Kinds inserted by the planner; they are rejected in user-supplied
#: workflows and only accepted when loading planner output back in.
PLANNER_KINDS = ("mat-writer", "mat-reader")

LINK_MODES = ("pipelined", "blocking")

_NUM_RE = re.compile(r"(\d+)")


def natural_key(text: str) -> tuple:
    """Sort key that orders embedded integers numerically (r2 < r10)."""
    return tuple(
        (0, int(chunk)) if chunk.isdigit() else (1, chunk)
        for chunk in _NUM_RE.split(text)
        if chunk
    )


@dataclass(frozen=True)
class OperatorSpec:
    """One operator of a workflow."""

    op_id: str
    kind: str
    label: str = ""
    is_result: bool = False


@dataclass(frozen=True)
class LinkSpec:
    """A directed data link between two operators."""

    link_id: str
    from_op: str
    to_op: str
    to_port: int = 0
    mode: str = "pipelined"

    @property
    def is_blocking(self) -> bool:
        return self.mode == "blocking"

    @property
    def is_pipelined(self) -> bool:
        return self.mode == "pipelined"


@dataclass(frozen=True)
class WorkflowDag:
    """An immutable workflow DAG with index structures for traversal."""

    operators: tuple[OperatorSpec, ...]
    links: tuple[LinkSpec, ...]

    @cached_property
    def op_by_id(self) -> dict[str, OperatorSpec]:
        return {op.op_id: op for op in self.operators}

    @cached_property
    def link_by_id(self) -> dict[str, LinkSpec]:
        return {link.link_id: link for link in self.links}

    @cached_property
    def inputs_of(self) -> dict[str, tuple[LinkSpec, ...]]:
        table: dict[str, list[LinkSpec]] = {op.op_id: [] for op in self.operators}
        for link in self.links:
            table[link.to_op].append(link)
        return {
            op: tuple(sorted(links, key=lambda l: natural_key(l.link_id)))
            for op, links in table.items()
        }

    @cached_property
    def outputs_of(self) -> dict[str, tuple[LinkSpec, ...]]:
        table: dict[str, list[LinkSpec]] = {op.op_id: [] for op in self.operators}
        for link in self.links:
            table[link.from_op].append(link)
        return {
            op: tuple(sorted(links, key=lambda l: natural_key(l.link_id)))
            for op, links in table.items()
        }

    @cached_property
    def topo_order(self) -> tuple[str, ...]:
        return topological_order(self)

    @cached_property
    def topo_index(self) -> dict[str, int]:
        return {op: i for i, op in enumerate(self.topo_order)}

    @cached_property
    def result_operators(self) -> tuple[str, ...]:
        return tuple(op.op_id for op in self.operators if op.is_result)

    def operator(self, op_id: str) -> OperatorSpec:
        return self.op_by_id[op_id]

    def link(self, link_id: str) -> LinkSpec:
        return self.link_by_id[link_id]

    def with_changes(self, operators=None, links=None) -> "WorkflowDag":
        """Return a copy with the given operator/link tuples substituted."""
        return replace(
            self,
            operators=self.operators if operators is None else tuple(operators),
            links=self.links if links is None else tuple(links),
        )


def topological_order(dag: WorkflowDag) -> tuple[str, ...]:
    """Deterministic topological order of the operators.

    Kahn's algorithm; among simultaneously ready operators the smallest
    operator id (natural order) is emitted first.

    Raises:
        ValidationError: if the workflow graph contains a cycle.
    """
    indegree = {op.op_id: 0 for op in dag.operators}
    for link in dag.links:
        indegree[link.to_op] += 1
    import heapq

    ready = [natural_key(op) for op, deg in indegree.items() if deg == 0]
    key_to_id = {natural_key(op.op_id): op.op_id for op in dag.operators}
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        op = key_to_id[heapq.heappop(ready)]
        order.append(op)
        for link in dag.outputs_of[op]:
            indegree[link.to_op] -= 1
            if indegree[link.to_op] == 0:
                heapq.heappush(ready, natural_key(link.to_op))
    if len(order) != len(dag.operators):
        stuck = sorted(set(indegree) - set(order), key=natural_key)
        raise ValidationError(f"workflow contains a cycle involving: {', '.join(stuck)}")
    return tuple(order)


def _require(mapping: dict, key: str, kind: type, where: str):
    if key not in mapping:
        raise SchemaError(f"{where}: missing required field '{key}'")
    value = mapping[key]
    if kind is int:
        # bool is a subclass of int; reject it explicitly for integer fields.
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(f"{where}: field '{key}' must be an integer")
    elif not isinstance(value, kind):
        raise SchemaError(f"{where}: field '{key}' must be of type {kind.__name__}")
    return value


def workflow_from_dict(data: dict, *, allow_planner_ops: bool = False) -> WorkflowDag:
    """Build and validate a :class:`WorkflowDag` from parsed JSON data.

    Args:
        data: mapping with ``operators`` and ``links`` arrays.
        allow_planner_ops: accept mat-writer/mat-reader operators (used when
            re-loading planner output; user workflows must not contain them).
    """
    if not isinstance(data, dict):
        raise SchemaError("workflow document must be a JSON object")
    ops_raw = _require(data, "operators", list, "workflow")
    links_raw = _require(data, "links", list, "workflow")

    operators = []
    for i, entry in enumerate(ops_raw):
        where = f"operators[{i}]"
        if not isinstance(entry, dict):
            raise SchemaError(f"{where}: must be an object")
        op_id = _require(entry, "id", str, where)
        kind = _require(entry, "kind", str, where)
        label = entry.get("label", "")
        if not isinstance(label, str):
            raise SchemaError(f"{where}: field 'label' must be of type str")
        is_result = entry.get("is_result", False)
        if not isinstance(is_result, bool):
            raise SchemaError(f"{where}: field 'is_result' must be of type bool")
        operators.append(OperatorSpec(op_id=op_id, kind=kind, label=label, is_result=is_result))

    links = []
    for i, entry in enumerate(links_raw):
        where = f"links[{i}]"
        if not isinstance(entry, dict):
            raise SchemaError(f"{where}: must be an object")
        link_id = _require(entry, "id", str, where)
        from_op = _require(entry, "from", str, where)
        to_op = _require(entry, "to", str, where)
        mode = _require(entry, "mode", str, where)
        to_port = entry.get("to_port", 0)
        if isinstance(to_port, bool) or not isinstance(to_port, int):
            raise SchemaError(f"{where}: field 'to_port' must be an integer")
        links.append(
            LinkSpec(link_id=link_id, from_op=from_op, to_op=to_op, to_port=to_port, mode=mode)
        )

    dag = WorkflowDag(operators=tuple(operators), links=tuple(links))
    validate_workflow(dag, allow_planner_ops=allow_planner_ops)
    return dag


def workflow_to_dict(dag: WorkflowDag) -> dict:
    """Serialize a workflow back to its JSON structure (round-trip stable)."""
    return {
        "operators": [
            {"id": op.op_id, "label": op.label, "kind": op.kind, "is_result": op.is_result}
            for op in dag.operators
        ],
        "links": [
            {
                "id": link.link_id,
                "from": link.from_op,
                "to": link.to_op,
                "to_port": link.to_port,
                "mode": link.mode,
            }
            for link in dag.links
        ],
    }


def parse_workflow(path: str | Path, *, allow_planner_ops: bool = False) -> WorkflowDag:
    """Read, parse and validate a workflow JSON file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read workflow file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path} is not valid JSON: {exc}") from exc
    return workflow_from_dict(data, allow_planner_ops=allow_planner_ops)


def validate_workflow(dag: WorkflowDag, *, allow_planner_ops: bool = False) -> None:
    """Check all semantic invariants; raise :class:`ValidationError` on the first breach.

    Checks: unique ids, known kinds and modes, no dangling or self links,
    unique (to, to_port) pairs, scans have no inputs, result operators have no
    outputs, the graph is acyclic, at least one scan exists, and every
    operator is reachable from some scan.
    """
    seen_ops: set[str] = set()
    for op in dag.operators:
        if not op.op_id:
            raise ValidationError("operator id must be a non-empty string")
        if op.op_id in seen_ops:
            raise ValidationError(f"duplicate operator id: {op.op_id}")
        seen_ops.add(op.op_id)
        if op.kind not in OPERATOR_KINDS:
            raise ValidationError(f"operator {op.op_id}: unknown kind '{op.kind}'")
        if op.kind in PLANNER_KINDS and not allow_planner_ops:
            raise ValidationError(
                f"operator {op.op_id}: kind '{op.kind}' is reserved for planner output"
            )
        if (op.kind == "result") != op.is_result:
            raise ValidationError(
                f"operator {op.op_id}: kind 'result' and is_result flag must agree"
            )

    seen_links: set[str] = set()
    seen_ports: set[tuple[str, int]] = set()
    for link in dag.links:
        if not link.link_id:
            raise ValidationError("link id must be a non-empty string")
        if link.link_id in seen_links:
            raise ValidationError(f"duplicate link id: {link.link_id}")
        seen_links.add(link.link_id)
        if link.mode not in LINK_MODES:
            raise ValidationError(f"link {link.link_id}: unknown mode '{link.mode}'")
        for end in (link.from_op, link.to_op):
            if end not in dag.op_by_id:
                raise ValidationError(f"link {link.link_id}: unknown operator '{end}'")
        if link.from_op == link.to_op:
            raise ValidationError(f"link {link.link_id}: from and to must differ")
        if link.to_port < 0:
            raise ValidationError(f"link {link.link_id}: to_port must be >= 0")
        port = (link.to_op, link.to_port)
        if port in seen_ports:
            raise ValidationError(
                f"link {link.link_id}: input port {link.to_port} of {link.to_op} is already in use"
            )
        seen_ports.add(port)

    for op in dag.operators:
        if op.kind == "scan" and dag.inputs_of[op.op_id]:
            raise ValidationError(f"scan operator {op.op_id} must not have input links")
        if op.is_result and dag.outputs_of[op.op_id]:
            raise ValidationError(f"result operator {op.op_id} must not have output links")

    topological_order(dag)  # raises on cycles

    scans = [op.op_id for op in dag.operators if op.kind == "scan"]
    if not scans and not (
        allow_planner_ops and any(op.kind == "mat-reader" for op in dag.operators)
    ):
        raise ValidationError("workflow must contain at least one scan operator")

    reachable: set[str] = set()
    frontier = deque(scans)
    if allow_planner_ops:
        # Materialization readers replay stored data and act as extra roots.
        frontier.extend(op.op_id for op in dag.operators if op.kind == "mat-reader")
    reachable.update(frontier)
    while frontier:
        current = frontier.popleft()
        for link in dag.outputs_of[current]:
            if link.to_op not in reachable:
                reachable.add(link.to_op)
                frontier.append(link.to_op)
    unreachable = sorted(seen_ops - reachable, key=natural_key)
    if unreachable:
        raise ValidationError(
            f"operators not reachable from any scan: {', '.join(unreachable)}"
        )


def export_dot(dag: WorkflowDag) -> str:
    """Render the workflow as Graphviz DOT; blocking links are drawn red."""
    lines = ["digraph workflow {"]
    for op in sorted(dag.operators, key=lambda o: natural_key(o.op_id)):
        label = op.label or op.op_id
        lines.append(f'  "{op.op_id}" [label="{label}"];')
    for link in sorted(dag.links, key=lambda l: natural_key(l.link_id)):
        attrs = ' [color="red"]' if link.is_blocking else ""
        lines.append(f'  "{link.from_op}" -> "{link.to_op}"{attrs};')
    lines.append("}")
    return "\n".join(lines) + "\n"
