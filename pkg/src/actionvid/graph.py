"""Action graphs: objects, timed action edges, and clocked schedules.

An action graph is the semantic program a video must realize: object
nodes drawn from a category vocabulary, and directed edges
``(subject, action, object, t_start, t_end)`` with optional attributes
such as a destination offset. The clocked view at time ``t`` annotates
every edge with its progress ``r_t = clip((t - t_s) / (t_e - t_s), 0, 1)``
so downstream models always see the full edge set with per-edge clocks.

Graphs are immutable after construction and validated eagerly; the file
format is a strict JSON document (see README) that is rejected, never
repaired.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

__all__ = [
    "Vocabulary", "ObjectNode", "ActionEdge", "ActionGraph",
    "ClockedEdge", "ClockedGraph", "GraphFormatError", "GraphValidationError",
    "progress", "clocked_at", "unroll", "compose",
    "parse_graph", "serialize_graph", "load_graph", "save_graph",
]


class GraphFormatError(ValueError):
    """The AG file text is malformed (syntax or schema violation)."""


class GraphValidationError(ValueError):
    """Structurally well-formed input violates a graph invariant."""


@dataclass(frozen=True)
class Vocabulary:
    """Ordered category and action name lists; indices double as embedding ids.

    ``action_attrs`` maps each action name to the tuple of attribute
    names its edges must carry (the destination offset ``("dx", "dy")``
    for translating actions, empty otherwise).
    """

    categories: tuple[str, ...]
    actions: tuple[str, ...]
    action_attrs: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.categories)) != len(self.categories):
            raise GraphValidationError("vocabulary: duplicate category names")
        if len(set(self.actions)) != len(self.actions):
            raise GraphValidationError("vocabulary: duplicate action names")
        for name in self.action_attrs:
            if name not in self.actions:
                raise GraphValidationError(f"vocabulary: attrs for unknown action {name!r}")

    def category_index(self, name: str) -> int:
        try:
            return self.categories.index(name)
        except ValueError:
            raise GraphValidationError(f"unknown category {name!r}") from None

    def action_index(self, name: str) -> int:
        try:
            return self.actions.index(name)
        except ValueError:
            raise GraphValidationError(f"unknown action {name!r}") from None

    def required_attrs(self, action: int | str) -> tuple[str, ...]:
        name = action if isinstance(action, str) else self.actions[action]
        return tuple(self.action_attrs.get(name, ()))

    def content_hash(self) -> str:
        blob = json.dumps({
            "categories": list(self.categories),
            "actions": list(self.actions),
            "action_attrs": {k: list(v) for k, v in sorted(self.action_attrs.items())},
        }, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class ObjectNode:
    id: int
    category: int
    attributes: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class ActionEdge:
    """``subject`` performs ``action`` over ``object`` during [t_start, t_end].

    Self-loop actions (rotate) use subject == object. ``attrs`` carries
    schema-required values such as the destination offset, expressed in
    normalized scene coordinates relative to the subject's position at
    ``t_start``.
    """

    subject: int
    action: int
    object: int
    t_start: int
    t_end: int
    attrs: Mapping[str, float] = field(default_factory=dict)

    def key(self) -> tuple:
        return (self.subject, self.action, self.object, self.t_start, self.t_end,
                tuple(sorted(self.attrs.items())))


@dataclass(frozen=True)
class ActionGraph:
    vocabulary: Vocabulary
    objects: tuple[ObjectNode, ...]
    edges: tuple[ActionEdge, ...]
    length: int

    def __post_init__(self):
        if self.length < 2:
            raise GraphValidationError(f"graph length must be >= 2, got {self.length}")
        for i, node in enumerate(self.objects):
            if node.id != i:
                raise GraphValidationError(
                    f"object ids must be contiguous 0..n-1; slot {i} has id {node.id}")
            if not 0 <= node.category < len(self.vocabulary.categories):
                raise GraphValidationError(
                    f"object {node.id}: category index {node.category} out of range")
        n = len(self.objects)
        for e in self.edges:
            if not 0 <= e.action < len(self.vocabulary.actions):
                raise GraphValidationError(f"edge {e}: action index out of range")
            for role, oid in (("subject", e.subject), ("object", e.object)):
                if not 0 <= oid < n:
                    raise GraphValidationError(f"edge {e}: {role} id {oid} out of range")
            if not (0 <= e.t_start < e.t_end <= self.length):
                raise GraphValidationError(
                    f"edge {e}: time window [{e.t_start}, {e.t_end}] violates "
                    f"0 <= start < end <= {self.length}")
            required = self.vocabulary.required_attrs(e.action)
            for attr in required:
                if attr not in e.attrs:
                    raise GraphValidationError(
                        f"edge ({self.vocabulary.actions[e.action]}): missing destination "
                        f"attribute {attr!r}")

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    def action_name(self, edge: ActionEdge) -> str:
        return self.vocabulary.actions[edge.action]


@dataclass(frozen=True)
class ClockedEdge:
    edge: ActionEdge
    progress: float


@dataclass(frozen=True)
class ClockedGraph:
    """The full edge set of a graph with per-edge progress at frame ``t``."""

    graph: ActionGraph
    t: int
    edges: tuple[ClockedEdge, ...]


def progress(edge: ActionEdge, t: float) -> float:
    """clip((t - t_start) / (t_end - t_start), 0, 1); total for t >= 0."""
    r = (t - edge.t_start) / (edge.t_end - edge.t_start)
    return min(1.0, max(0.0, r))


def clocked_at(graph: ActionGraph, t: int) -> ClockedGraph:
    return ClockedGraph(
        graph=graph, t=t,
        edges=tuple(ClockedEdge(e, progress(e, t)) for e in graph.edges))


def unroll(graph: ActionGraph) -> list[ClockedGraph]:
    """Clocked views at t = 1..T; topology is identical across t.

    Time 0 is the trivial all-at-start state and is not emitted; the
    view at t = T has every edge ending at T completed.
    """
    return [clocked_at(graph, t) for t in range(1, graph.length + 1)]


def compose(*graphs: ActionGraph) -> ActionGraph:
    """Union of edge sets over a shared vocabulary and object set.

    Used to build composite programs (swap, huddle, multi-action test
    graphs) out of single-action graphs. Exact duplicate edges collapse;
    object id collisions with differing categories or attributes are
    rejected.
    """
    if not graphs:
        raise GraphValidationError("compose: needs at least one graph")
    first = graphs[0]
    for g in graphs[1:]:
        if g.vocabulary != first.vocabulary:
            raise GraphValidationError("compose: vocabularies differ")
        if g.length != first.length:
            raise GraphValidationError("compose: graph lengths differ")
        if len(g.objects) != len(first.objects):
            raise GraphValidationError("compose: object counts differ")
        for a, b in zip(first.objects, g.objects):
            if a.category != b.category or dict(a.attributes) != dict(b.attributes):
                raise GraphValidationError(
                    f"compose: object id {a.id} redefined with different category/attributes")
    seen: set[tuple] = set()
    edges: list[ActionEdge] = []
    for g in graphs:
        for e in g.edges:
            k = e.key()
            if k not in seen:
                seen.add(k)
                edges.append(e)
    return ActionGraph(vocabulary=first.vocabulary, objects=first.objects,
                       edges=tuple(edges), length=first.length)


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------

_TOP_FIELDS = {"vocab", "objects", "edges", "length"}
_VOCAB_FIELDS = {"objects", "actions"}
_ACTION_FIELDS = {"name", "attrs"}
_OBJECT_FIELDS = {"id", "category", "attributes"}
_EDGE_FIELDS = {"subject", "action", "object", "start", "end", "attrs"}


def _reject_unknown(obj: Mapping, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise GraphFormatError(f"{where}: unknown field(s) {sorted(unknown)}")


def _require(obj: Mapping, fields: Iterable[str], where: str) -> None:
    for f in fields:
        if f not in obj:
            raise GraphFormatError(f"{where}: missing field {f!r}")


def parse_graph(text: str) -> ActionGraph:
    """Parse and fully validate an AG file; rejects rather than repairs."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphFormatError(
            f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise GraphFormatError("top level: expected an object")
    _require(doc, _TOP_FIELDS, "top level")
    _reject_unknown(doc, _TOP_FIELDS, "top level")

    vocab_doc = doc["vocab"]
    if not isinstance(vocab_doc, dict):
        raise GraphFormatError("vocab: expected an object")
    _require(vocab_doc, _VOCAB_FIELDS, "vocab")
    _reject_unknown(vocab_doc, _VOCAB_FIELDS, "vocab")
    categories = vocab_doc["objects"]
    if not isinstance(categories, list) or not all(isinstance(c, str) for c in categories):
        raise GraphFormatError("vocab.objects: expected a list of category names")
    actions: list[str] = []
    action_attrs: dict[str, tuple[str, ...]] = {}
    for i, entry in enumerate(vocab_doc["actions"]):
        where = f"vocab.actions[{i}]"
        if not isinstance(entry, dict):
            raise GraphFormatError(f"{where}: expected an object")
        _require(entry, _ACTION_FIELDS, where)
        _reject_unknown(entry, _ACTION_FIELDS, where)
        if not isinstance(entry["name"], str):
            raise GraphFormatError(f"{where}.name: expected a string")
        actions.append(entry["name"])
        attrs = entry["attrs"]
        if not isinstance(attrs, list) or not all(isinstance(a, str) for a in attrs):
            raise GraphFormatError(f"{where}.attrs: expected a list of attribute names")
        action_attrs[entry["name"]] = tuple(attrs)
    try:
        vocab = Vocabulary(tuple(categories), tuple(actions), action_attrs)
    except GraphValidationError as exc:
        raise GraphFormatError(str(exc)) from exc

    objects: list[ObjectNode] = []
    if not isinstance(doc["objects"], list):
        raise GraphFormatError("objects: expected a list")
    for i, entry in enumerate(doc["objects"]):
        where = f"objects[{i}]"
        if not isinstance(entry, dict):
            raise GraphFormatError(f"{where}: expected an object")
        _require(entry, ("id", "category"), where)
        _reject_unknown(entry, _OBJECT_FIELDS, where)
        if not isinstance(entry["id"], int):
            raise GraphFormatError(f"{where}.id: expected an integer")
        category = entry["category"]
        if not isinstance(category, str):
            raise GraphFormatError(f"{where}.category: expected a category name")
        if category not in vocab.categories:
            raise GraphFormatError(f"{where}: unknown category {category!r}")
        attributes = entry.get("attributes", {})
        if not isinstance(attributes, dict) or not all(
                isinstance(k, str) and isinstance(v, str) for k, v in attributes.items()):
            raise GraphFormatError(f"{where}.attributes: expected a string-to-string map")
        objects.append(ObjectNode(id=entry["id"], category=vocab.categories.index(category),
                                  attributes=dict(attributes)))

    edges: list[ActionEdge] = []
    if not isinstance(doc["edges"], list):
        raise GraphFormatError("edges: expected a list")
    for i, entry in enumerate(doc["edges"]):
        where = f"edges[{i}]"
        if not isinstance(entry, dict):
            raise GraphFormatError(f"{where}: expected an object")
        _require(entry, ("subject", "action", "object", "start", "end"), where)
        _reject_unknown(entry, _EDGE_FIELDS, where)
        action = entry["action"]
        if not isinstance(action, str):
            raise GraphFormatError(f"{where}.action: expected an action name")
        if action not in vocab.actions:
            raise GraphFormatError(f"{where}: unknown action {action!r}")
        for fld in ("subject", "object", "start", "end"):
            if not isinstance(entry[fld], int):
                raise GraphFormatError(f"{where}.{fld}: expected an integer")
        attrs = entry.get("attrs", {})
        if not isinstance(attrs, dict) or not all(
                isinstance(k, str) and isinstance(v, (int, float)) and not isinstance(v, bool)
                for k, v in attrs.items()):
            raise GraphFormatError(f"{where}.attrs: expected a string-to-number map")
        for attr in vocab.required_attrs(action):
            if attr not in attrs:
                raise GraphFormatError(
                    f"{where}: action {action!r} requires destination attribute {attr!r}")
        for name, value in attrs.items():
            if name in ("dx", "dy") and not -1.0 <= float(value) <= 1.0:
                raise GraphFormatError(
                    f"{where}: destination offset {name}={value} outside [-1, 1]")
        edges.append(ActionEdge(
            subject=entry["subject"], action=vocab.actions.index(action),
            object=entry["object"], t_start=entry["start"], t_end=entry["end"],
            attrs={k: float(v) for k, v in attrs.items()}))

    if not isinstance(doc["length"], int):
        raise GraphFormatError("length: expected an integer")
    try:
        return ActionGraph(vocabulary=vocab, objects=tuple(objects),
                           edges=tuple(edges), length=doc["length"])
    except GraphValidationError as exc:
        raise GraphFormatError(str(exc)) from exc


def serialize_graph(graph: ActionGraph) -> str:
    vocab = graph.vocabulary
    doc = {
        "vocab": {
            "objects": list(vocab.categories),
            "actions": [{"name": a, "attrs": list(vocab.required_attrs(a))}
                        for a in vocab.actions],
        },
        "objects": [{"id": o.id, "category": vocab.categories[o.category],
                     "attributes": dict(o.attributes)} for o in graph.objects],
        "edges": [{"subject": e.subject, "action": vocab.actions[e.action],
                   "object": e.object, "start": e.t_start, "end": e.t_end,
                   "attrs": dict(e.attrs)} for e in graph.edges],
        "length": graph.length,
    }
    return json.dumps(doc, indent=2) + "\n"


def load_graph(path) -> ActionGraph:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_graph(fh.read())


def save_graph(path, graph: ActionGraph) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_graph(graph))
