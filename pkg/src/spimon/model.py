"""Safety case model: goal tree, SPI definitions, parsing and tree queries.

A safety case document is JSON::

    {"id": ..., "version": 3,
     "goals": [ {node} ],            # exactly one top-level goal
     "spis":  [ {spi}, ... ]}

Nodes carry ``id``, ``kind`` (goal/strategy/solution), ``statement`` and
optionally ``tags``, ``spi_ids``, ``ul4600_trace``, ``children`` and
``undeveloped``. Unknown keys are rejected.

Levels follow the usual GSN reading: a node is *higher* than another when
it lies on the path from that node to the top goal. Strategies are
transparent for argument legs: a leg is rooted at one of the goals
nearest to the top goal.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Any, Iterator, Mapping

from spimon.errors import (
    CycleError,
    DanglingReferenceError,
    DuplicateIdError,
    SchemaError,
    UnknownNodeError,
)

ITEM_LEVEL = "item_level"
HAZARD = "hazard"
ASPECT_PREFIX = "aspect:"

_CASE_KEYS = {"id", "version", "goals", "spis"}
_NODE_REQUIRED = {"id", "kind", "statement"}
_NODE_KEYS = _NODE_REQUIRED | {"tags", "spi_ids", "ul4600_trace", "children", "undeveloped"}
_SPI_REQUIRED = {
    "id", "metric_id", "comparator", "threshold", "unit", "kind", "claim_id", "config_item",
}
_SPI_KEYS = _SPI_REQUIRED | {"description"}


class NodeKind(str, Enum):
    GOAL = "goal"
    STRATEGY = "strategy"
    SOLUTION = "solution"


class Comparator(str, Enum):
    AT_LEAST = "at_least"
    AT_MOST = "at_most"


class SpiKind(str, Enum):
    LEADING = "leading"
    LAGGING = "lagging"


class Level(str, Enum):
    """Outcome of :func:`level_compare`."""

    A_HIGHER = "a_higher"
    B_HIGHER = "b_higher"
    INCOMPARABLE = "incomparable"
    EQUAL = "equal"


def is_valid_tag(tag: str) -> bool:
    if tag in (ITEM_LEVEL, HAZARD):
        return True
    return tag.startswith(ASPECT_PREFIX) and len(tag) > len(ASPECT_PREFIX)


@dataclass(frozen=True)
class Node:
    """A goal, strategy or solution. Only goals carry SPIs and tags."""

    id: str
    kind: NodeKind
    statement: str
    children: tuple[Node, ...] = ()
    spi_ids: frozenset[str] = frozenset()
    tags: frozenset[str] = frozenset()
    ul4600_trace: str | None = None
    undeveloped: bool = False

    @property
    def is_goal(self) -> bool:
        return self.kind is NodeKind.GOAL

    def walk(self) -> Iterator[Node]:
        """Pre-order traversal, children in document order."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))


GoalNode = Node


@dataclass(frozen=True)
class SpiDefinition:
    id: str
    metric_id: str
    comparator: Comparator
    threshold: float
    unit: str
    kind: SpiKind
    claim_id: str
    config_item: str
    description: str = ""

    def __post_init__(self) -> None:
        if not math.isfinite(self.threshold):
            raise SchemaError(f"threshold of SPI {self.id!r} is not finite", self.id)

    def breached_by(self, value: float) -> bool:
        """Strict breach; a value equal to the threshold satisfies the SPI."""
        if self.comparator is Comparator.AT_MOST:
            return value > self.threshold
        return value < self.threshold

    @property
    def is_leading(self) -> bool:
        return self.kind is SpiKind.LEADING


@dataclass(frozen=True)
class SafetyCase:
    """Immutable, validated safety case.

    Construction checks every structural invariant (unique ids, acyclic
    single-parent tree, resolved SPI references); parse errors and
    programmatic construction therefore fail the same way.
    """

    id: str
    version: int
    top_goal: Node
    spi_index: Mapping[str, SpiDefinition] = field(default_factory=dict)

    _nodes: Mapping[str, Node] = field(init=False, repr=False, compare=False)
    _parent: Mapping[str, str | None] = field(init=False, repr=False, compare=False)
    _order: tuple[str, ...] = field(init=False, repr=False, compare=False)
    _tin: Mapping[str, int] = field(init=False, repr=False, compare=False)
    _tout: Mapping[str, int] = field(init=False, repr=False, compare=False)
    _legs: tuple[str, ...] = field(init=False, repr=False, compare=False)
    _spis_by_claim: Mapping[str, tuple[str, ...]] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if isinstance(self.version, bool) or not isinstance(self.version, int) or self.version < 0:
            raise SchemaError("version must be a non-negative integer", "version")
        if not self.top_goal.is_goal:
            raise SchemaError("the top-level node must be a goal", self.top_goal.id)
        spi_index = MappingProxyType(dict(sorted(self.spi_index.items())))
        object.__setattr__(self, "spi_index", spi_index)

        nodes: dict[str, Node] = {}
        parent: dict[str, str | None] = {}
        paths: dict[str, str] = {}
        order: list[str] = []
        tin: dict[str, int] = {}
        tout: dict[str, int] = {}

        def visit(node: Node, parent_id: str | None, path: str, on_path: set[str]) -> None:
            if node.id in on_path:
                raise CycleError(f"node {node.id!r} is its own ancestor", path)
            if node.id in nodes:
                raise DuplicateIdError(
                    f"duplicate node id {node.id!r} (first at {paths[node.id]})", path
                )
            nodes[node.id] = node
            parent[node.id] = parent_id
            paths[node.id] = path
            tin[node.id] = len(order)
            order.append(node.id)
            on_path.add(node.id)
            for child in node.children:
                visit(child, node.id, f"{path}/{child.id}", on_path)
            on_path.discard(node.id)
            tout[node.id] = len(order)

        _with_recursion_limit(lambda: visit(self.top_goal, None, self.top_goal.id, set()),
                              _depth(self.top_goal))

        for spi_id in self.spi_index:
            if spi_id in nodes:
                raise DuplicateIdError(f"SPI id {spi_id!r} collides with a node id", spi_id)

        for node_id, node in nodes.items():
            _check_node_shape(node, paths[node_id])
            for spi_id in sorted(node.spi_ids):
                spi = self.spi_index.get(spi_id)
                if spi is None:
                    raise DanglingReferenceError(
                        f"goal {node_id!r} references unknown SPI {spi_id!r}", paths[node_id]
                    )
                if spi.claim_id != node_id:
                    raise DanglingReferenceError(
                        f"SPI {spi_id!r} is listed on goal {node_id!r} "
                        f"but conditions claim {spi.claim_id!r}",
                        paths[node_id],
                    )

        by_claim: dict[str, list[str]] = {}
        for spi_id, spi in self.spi_index.items():
            if spi.id != spi_id:
                raise SchemaError(f"SPI indexed as {spi_id!r} has id {spi.id!r}", spi_id)
            target = nodes.get(spi.claim_id)
            if target is None or not target.is_goal:
                raise DanglingReferenceError(
                    f"SPI {spi_id!r} conditions unknown goal {spi.claim_id!r}", f"spis/{spi_id}"
                )
            if spi_id not in target.spi_ids:
                raise DanglingReferenceError(
                    f"SPI {spi_id!r} conditions {spi.claim_id!r} but that goal does not list it",
                    f"spis/{spi_id}",
                )
            by_claim.setdefault(spi.claim_id, []).append(spi_id)

        legs: list[str] = []

        def collect_legs(node: Node) -> None:
            for child in node.children:
                if child.is_goal:
                    legs.append(child.id)
                elif child.kind is NodeKind.STRATEGY:
                    collect_legs(child)

        collect_legs(self.top_goal)

        object.__setattr__(self, "_nodes", MappingProxyType(nodes))
        object.__setattr__(self, "_parent", MappingProxyType(parent))
        object.__setattr__(self, "_order", tuple(order))
        object.__setattr__(self, "_tin", MappingProxyType(tin))
        object.__setattr__(self, "_tout", MappingProxyType(tout))
        object.__setattr__(self, "_legs", tuple(legs))
        object.__setattr__(
            self, "_spis_by_claim",
            MappingProxyType({k: tuple(sorted(v)) for k, v in by_claim.items()}),
        )

    # -- lookups ---------------------------------------------------------

    def node(self, node_id: str) -> Node:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise UnknownNodeError(f"unknown node id {node_id!r}") from None

    def goal(self, goal_id: str) -> Node:
        node = self.node(goal_id)
        if not node.is_goal:
            raise UnknownNodeError(f"{goal_id!r} is a {node.kind.value}, not a goal")
        return node

    def __contains__(self, node_id: object) -> bool:
        return node_id in self._nodes

    @property
    def node_ids(self) -> tuple[str, ...]:
        """All node ids in pre-order."""
        return self._order

    @property
    def goal_ids(self) -> tuple[str, ...]:
        return tuple(n for n in self._order if self._nodes[n].is_goal)

    def parent(self, node_id: str) -> str | None:
        self.node(node_id)
        return self._parent[node_id]

    def ancestors(self, node_id: str) -> tuple[str, ...]:
        """Proper ancestors, nearest first (all node kinds)."""
        self.node(node_id)
        out = []
        current = self._parent[node_id]
        while current is not None:
            out.append(current)
            current = self._parent[current]
        return tuple(out)

    def goal_ancestors(self, node_id: str) -> tuple[str, ...]:
        return tuple(a for a in self.ancestors(node_id) if self._nodes[a].is_goal)

    def is_ancestor(self, a: str, b: str) -> bool:
        """True iff ``a`` is a proper ancestor of ``b``."""
        self.node(a)
        self.node(b)
        return self._tin[a] < self._tin[b] and self._tout[b] <= self._tout[a]

    def descendants(self, node_id: str) -> tuple[str, ...]:
        """Proper descendants in pre-order."""
        self.node(node_id)
        return self._order[self._tin[node_id] + 1 : self._tout[node_id]]

    @property
    def legs(self) -> tuple[str, ...]:
        """Root goal of every top-level argument leg, in document order."""
        return self._legs

    def spis_on(self, goal_id: str) -> tuple[SpiDefinition, ...]:
        self.goal(goal_id)
        return tuple(self.spi_index[s] for s in self._spis_by_claim.get(goal_id, ()))

    def spi(self, spi_id: str) -> SpiDefinition:
        try:
            return self.spi_index[spi_id]
        except KeyError:
            raise DanglingReferenceError(f"unknown SPI {spi_id!r}") from None

    def claim_of(self, spi_id: str) -> str:
        return self.spi(spi_id).claim_id

    # -- functional updates ---------------------------------------------

    def with_spi(self, spi: SpiDefinition) -> SafetyCase:
        """Copy of the case with ``spi`` attached to ``spi.claim_id``."""
        self.goal(spi.claim_id)
        top = _map_node(self.top_goal, spi.claim_id,
                        lambda n: replace(n, spi_ids=n.spi_ids | {spi.id}))
        index = dict(self.spi_index)
        index[spi.id] = spi
        return SafetyCase(self.id, self.version, top, index)

    def without_spi(self, spi_id: str) -> SafetyCase:
        spi = self.spi(spi_id)
        top = _map_node(self.top_goal, spi.claim_id,
                        lambda n: replace(n, spi_ids=n.spi_ids - {spi_id}))
        index = {k: v for k, v in self.spi_index.items() if k != spi_id}
        return SafetyCase(self.id, self.version, top, index)


def _map_node(node: Node, target: str, fn) -> Node:
    if node.id == target:
        return fn(node)
    if not node.children:
        return node
    return replace(node, children=tuple(_map_node(c, target, fn) for c in node.children))


def _depth(node: Node) -> int:
    depth, frontier = 0, [node]
    while frontier:
        depth += 1
        frontier = [c for n in frontier for c in n.children]
    return depth


def _with_recursion_limit(fn, depth: int) -> None:
    import sys

    needed = depth * 2 + 200
    old = sys.getrecursionlimit()
    if needed > old:
        sys.setrecursionlimit(needed)
    try:
        fn()
    finally:
        if needed > old:
            sys.setrecursionlimit(old)


def _reaches_development(node: Node) -> bool:
    for child in node.children:
        if child.kind in (NodeKind.GOAL, NodeKind.SOLUTION):
            return True
        if child.kind is NodeKind.STRATEGY and _reaches_development(child):
            return True
    return False


def _check_node_shape(node: Node, path: str) -> None:
    if not node.is_goal:
        if node.spi_ids:
            raise SchemaError(f"SPIs attach to goals only, not to {node.kind.value}s", path)
        if node.tags:
            raise SchemaError(f"tags are only allowed on goals, not on {node.kind.value}s", path)
        if node.undeveloped:
            raise SchemaError("only goals can be marked undeveloped", path)
    if node.kind is NodeKind.SOLUTION and node.children:
        raise SchemaError("solutions cannot have children", path)
    for tag in sorted(node.tags):
        if not is_valid_tag(tag):
            raise SchemaError(f"unknown tag {tag!r}", path)
    if node.is_goal and not node.undeveloped and not _reaches_development(node):
        raise SchemaError(
            f"goal {node.id!r} has no sub-goals or solutions and is not marked undeveloped", path
        )


# -- tree queries ---------------------------------------------------------

def level_compare(case: SafetyCase, a: str, b: str) -> Level:
    if a == b:
        case.node(a)
        return Level.EQUAL
    if case.is_ancestor(a, b):
        return Level.A_HIGHER
    if case.is_ancestor(b, a):
        return Level.B_HIGHER
    return Level.INCOMPARABLE


def leg_of(case: SafetyCase, goal: str) -> str:
    """Root goal of the top-level argument leg containing ``goal``."""
    case.node(goal)
    if goal == case.top_goal.id:
        raise UnknownNodeError("the top goal does not belong to any leg", goal)
    legs = set(case.legs)
    if goal in legs:
        return goal
    for ancestor in case.ancestors(goal):
        if ancestor in legs:
            return ancestor
    raise UnknownNodeError(f"{goal!r} hangs off a strategy with no leg goal above it", goal)


def claims_below(case: SafetyCase, goal: str) -> frozenset[str]:
    """Goals that are proper descendants of ``goal``."""
    case.goal(goal)
    return frozenset(n for n in case.descendants(goal) if case.node(n).is_goal)


# -- parsing ----------------------------------------------------------------

def _require_type(value: Any, types: type | tuple[type, ...], what: str, path: str) -> None:
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise SchemaError(f"{what} has wrong type bool", path)
    if not isinstance(value, types):
        raise SchemaError(f"{what} has wrong type {type(value).__name__}", path)


def _check_keys(obj: Mapping[str, Any], required: set[str], allowed: set[str], path: str) -> None:
    missing = sorted(required - obj.keys())
    if missing:
        raise SchemaError(f"missing field(s) {', '.join(missing)}", path)
    unknown = sorted(obj.keys() - allowed)
    if unknown:
        raise SchemaError(f"unknown key(s) {', '.join(unknown)}", path)


def _str_list(value: Any, what: str, path: str) -> frozenset[str]:
    _require_type(value, list, what, path)
    for item in value:
        _require_type(item, str, f"{what} entry", path)
    return frozenset(value)


def _parse_node(obj: Any, path: str) -> Node:
    _require_type(obj, dict, "node", path)
    _check_keys(obj, _NODE_REQUIRED, _NODE_KEYS, path)
    node_id = obj["id"]
    _require_type(node_id, str, "id", path)
    path = f"{path}({node_id})"
    try:
        kind = NodeKind(obj["kind"])
    except (ValueError, TypeError):
        raise SchemaError(f"kind must be goal, strategy or solution, got {obj['kind']!r}", path)
    statement = obj["statement"]
    _require_type(statement, str, "statement", path)
    trace = obj.get("ul4600_trace")
    if trace is not None:
        _require_type(trace, str, "ul4600_trace", path)
    undeveloped = obj.get("undeveloped", False)
    _require_type(undeveloped, bool, "undeveloped", path)
    children_raw = obj.get("children", [])
    _require_type(children_raw, list, "children", path)
    children = tuple(
        _parse_node(child, f"{path}.children[{i}]") for i, child in enumerate(children_raw)
    )
    return Node(
        id=node_id,
        kind=kind,
        statement=statement,
        children=children,
        spi_ids=_str_list(obj.get("spi_ids", []), "spi_ids", path),
        tags=_str_list(obj.get("tags", []), "tags", path),
        ul4600_trace=trace,
        undeveloped=undeveloped,
    )


def _parse_spi(obj: Any, path: str) -> SpiDefinition:
    _require_type(obj, dict, "SPI", path)
    _check_keys(obj, _SPI_REQUIRED, _SPI_KEYS, path)
    for key in ("id", "metric_id", "unit", "claim_id", "config_item"):
        _require_type(obj[key], str, key, path)
    path = f"{path}({obj['id']})"
    _require_type(obj["threshold"], (int, float), "threshold", path)
    try:
        comparator = Comparator(obj["comparator"])
    except (ValueError, TypeError):
        raise SchemaError(f"comparator must be at_least or at_most, got {obj['comparator']!r}", path)
    try:
        kind = SpiKind(obj["kind"])
    except (ValueError, TypeError):
        raise SchemaError(f"kind must be leading or lagging, got {obj['kind']!r}", path)
    description = obj.get("description", "")
    _require_type(description, str, "description", path)
    threshold = float(obj["threshold"])
    if not math.isfinite(threshold):
        raise SchemaError("threshold is not finite", path)
    return SpiDefinition(
        id=obj["id"],
        metric_id=obj["metric_id"],
        comparator=comparator,
        threshold=threshold,
        unit=obj["unit"],
        kind=kind,
        claim_id=obj["claim_id"],
        config_item=obj["config_item"],
        description=description,
    )


def parse_safety_case(document: str | bytes | Mapping[str, Any]) -> SafetyCase:
    """Parse a JSON safety-case document (text or already-decoded mapping).

    Raises:
        SchemaError, DanglingReferenceError, DuplicateIdError, CycleError:
            with ``path`` naming the offending node or SPI.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"not valid JSON: {exc}") from None
    _require_type(document, dict, "document", "$")
    _check_keys(document, {"id", "version", "goals"}, _CASE_KEYS, "$")
    _require_type(document["id"], str, "id", "$.id")
    version = document["version"]
    _require_type(version, int, "version", "$.version")
    goals = document["goals"]
    _require_type(goals, list, "goals", "$.goals")
    if len(goals) != 1:
        raise SchemaError(f"expected exactly one top-level goal, found {len(goals)}", "$.goals")
    top = _parse_node(goals[0], "$.goals[0]")
    spis_raw = document.get("spis", [])
    _require_type(spis_raw, list, "spis", "$.spis")
    index: dict[str, SpiDefinition] = {}
    for i, raw in enumerate(spis_raw):
        spi = _parse_spi(raw, f"$.spis[{i}]")
        if spi.id in index:
            raise DuplicateIdError(f"duplicate SPI id {spi.id!r}", f"$.spis[{i}]")
        index[spi.id] = spi
    return SafetyCase(id=document["id"], version=version, top_goal=top, spi_index=index)


def load_safety_case(path: str | Path) -> SafetyCase:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc.strerror}") from None
    return parse_safety_case(text)


def _node_to_dict(node: Node) -> dict[str, Any]:
    out: dict[str, Any] = {"id": node.id, "kind": node.kind.value, "statement": node.statement}
    if node.tags:
        out["tags"] = sorted(node.tags)
    if node.spi_ids:
        out["spi_ids"] = sorted(node.spi_ids)
    if node.ul4600_trace is not None:
        out["ul4600_trace"] = node.ul4600_trace
    if node.undeveloped:
        out["undeveloped"] = True
    if node.children:
        out["children"] = [_node_to_dict(c) for c in node.children]
    return out


def spi_to_dict(spi: SpiDefinition) -> dict[str, Any]:
    return {
        "id": spi.id,
        "metric_id": spi.metric_id,
        "comparator": spi.comparator.value,
        "threshold": spi.threshold,
        "unit": spi.unit,
        "kind": spi.kind.value,
        "claim_id": spi.claim_id,
        "config_item": spi.config_item,
        "description": spi.description,
    }


def serialize_safety_case(case: SafetyCase) -> dict[str, Any]:
    return {
        "id": case.id,
        "version": case.version,
        "goals": [_node_to_dict(case.top_goal)],
        "spis": [spi_to_dict(s) for s in case.spi_index.values()],
    }
