"""Procedural 2D shape world: the training and evaluation corpus.

Scenes hold 2..6 colored shapes on a gray background. Four timed
actions have closed-form semantics, so every episode carries exact
ground-truth box trajectories plus rasterized frames:

* ``slide``      -- linear translation of the box center to
                    start + offset as progress goes 0 to 1.
* ``pick_place`` -- progress in [0, .25]: box scales up 20% (lift);
                    [.25, .75]: linear translation to the destination;
                    [.75, 1]: scales back down.
* ``rotate``     -- box constant; the spin is render-only (a spoke
                    drawn at angle 2*pi*progress).
* ``contain``    -- the subject cone translates linearly onto the
                    target's center; from the frame progress reaches 1
                    the target drops below the cone in draw order
                    (occluded) and inherits the cone's later motion.

Boxes are (x, y, w, h): center plus full extents, normalized to [0, 1].
Cones are the only valid contain subjects; nested containment is not
generated or executed. Training corpora never schedule two contain
edges with overlapping windows, so multi-contain programs stay unseen
until composition tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ppm
from .graph import (ActionEdge, ActionGraph, GraphValidationError, ObjectNode,
                    Vocabulary, compose, load_graph, progress, save_graph)

SHAPES = ("circle", "square", "triangle", "cone")
COLORS = {
    "red": (220, 50, 50),
    "green": (60, 180, 75),
    "blue": (50, 90, 220),
    "yellow": (230, 220, 60),
    "magenta": (200, 60, 200),
    "cyan": (70, 200, 200),
    "orange": (240, 140, 40),
    "purple": (130, 60, 190),
}
SIZES = {"small": 0.05, "medium": 0.08, "large": 0.12}
ACTIONS = ("slide", "pick_place", "rotate", "contain")
ACTION_ATTRS = {"slide": ("dx", "dy"), "pick_place": ("dx", "dy"),
                "rotate": (), "contain": ()}
BACKGROUND = (115, 115, 115)
LIFT_SCALE = 1.2
BORDER_MARGIN = 0.01
MIN_OFFSET = 0.12
MAX_OFFSET = 0.4


class PlacementError(RuntimeError):
    """Rejection sampling failed to place a legal scene or action set."""


class ContradictionError(GraphValidationError):
    """The graph commands contradictory motion and cannot be executed."""


class DatasetError(ValueError):
    """A dataset directory is missing or corrupt."""


def build_vocabulary() -> Vocabulary:
    """All color/size/shape combinations as attribute-bearing categories."""
    categories = tuple(f"{color}_{size}_{shape}"
                       for shape in SHAPES for color in COLORS for size in SIZES)
    return Vocabulary(categories=categories, actions=ACTIONS, action_attrs=ACTION_ATTRS)


@dataclass(frozen=True)
class WorldObject:
    shape: str
    color: str
    size: str
    depth_rank: int

    @property
    def radius(self) -> float:
        return SIZES[self.size]

    @property
    def outer_radius(self) -> float:
        """Distance from center to the farthest rendered point."""
        return self.radius * math.sqrt(2.0) if self.shape == "square" else self.radius

    @property
    def category_name(self) -> str:
        return f"{self.color}_{self.size}_{self.shape}"

    @property
    def rgb(self) -> tuple[int, int, int]:
        return COLORS[self.color]


def objects_from_graph(graph: ActionGraph) -> list[WorldObject]:
    out = []
    for node in graph.objects:
        attrs = node.attributes
        try:
            out.append(WorldObject(shape=attrs["shape"], color=attrs["color"],
                                   size=attrs["size"], depth_rank=node.id))
        except KeyError as exc:
            raise GraphValidationError(
                f"object {node.id}: missing world attribute {exc}") from None
    return out


@dataclass
class Episode:
    """One synthetic record: program, exact box trajectory, rendered frames."""

    graph: ActionGraph
    layouts: np.ndarray           # (T, n, 4) float64
    frames: np.ndarray | None     # (T, H, W, 3) uint8, None when not loaded
    seed: int

    @property
    def length(self) -> int:
        return self.graph.length


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _covers(cone: WorldObject, target: WorldObject) -> bool:
    return cone.radius >= target.outer_radius


def _box_inside(center: np.ndarray, half: float) -> bool:
    return bool(np.all(center - half >= BORDER_MARGIN)
                and np.all(center + half <= 1.0 - BORDER_MARGIN))


def _place_objects(rng: np.random.Generator, objects: list[WorldObject]) -> np.ndarray:
    """Non-overlapping initial boxes; min center distance 1.5x radius sum."""
    centers: list[np.ndarray] = []
    for obj in objects:
        r = obj.radius
        for attempt in range(1000):
            c = rng.uniform(r + BORDER_MARGIN, 1.0 - r - BORDER_MARGIN, size=2)
            ok = all(np.linalg.norm(c - other) >= 1.5 * (r + objects[k].radius)
                     for k, other in enumerate(centers))
            if ok:
                centers.append(c)
                break
        else:
            raise PlacementError(
                f"could not place object {len(centers)} after 1000 attempts")
    boxes = np.zeros((len(objects), 4))
    for i, (obj, c) in enumerate(zip(objects, centers)):
        boxes[i] = (c[0], c[1], 2 * obj.radius, 2 * obj.radius)
    return boxes


class _Timeline:
    """Tracks each object's scheduled windows and resting centers."""

    def __init__(self, boxes0: np.ndarray):
        self.windows: dict[int, list[tuple[int, int]]] = {}
        self.moves: dict[int, list[tuple[int, np.ndarray]]] = {}
        self.start_centers = boxes0[:, :2].copy()

    def busy(self, obj: int, t_s: int, t_e: int) -> bool:
        return any(t_s < e and s < t_e for s, e in self.windows.get(obj, []))

    def center_at(self, obj: int, t: int) -> np.ndarray:
        c = self.start_centers[obj].copy()
        for t_end, center in self.moves.get(obj, []):
            if t_end <= t:
                c = center.copy()
        return c

    def last_window_end(self, obj: int) -> int:
        return max((e for _, e in self.windows.get(obj, [])), default=0)

    def add(self, obj: int, t_s: int, t_e: int, end_center: np.ndarray | None) -> None:
        self.windows.setdefault(obj, []).append((t_s, t_e))
        if end_center is not None:
            self.moves.setdefault(obj, []).append((t_e, end_center.copy()))
            self.moves[obj].sort(key=lambda m: m[0])


def sample_episode(seed: int, n_objects: int | None = None, n_actions: int | None = None,
                   T: int = 16, resolution: int = 64) -> Episode:
    """Deterministically sample a scene, a legal action program, and render it.

    ``n_objects`` defaults to a uniform draw from 2..6 and ``n_actions``
    from 1..4 (0 is allowed explicitly, giving a static scene). Raises
    PlacementError when 1000 rejection attempts cannot satisfy the
    constraints.
    """
    rng = np.random.default_rng(seed)
    if n_objects is None:
        n_objects = int(rng.integers(2, 7))
    if n_actions is None:
        n_actions = int(rng.integers(1, 5))
    if not 2 <= n_objects <= 6:
        raise ValueError(f"n_objects must be in 2..6, got {n_objects}")
    if not 0 <= n_actions <= 4:
        raise ValueError(f"n_actions must be in 0..4, got {n_actions}")
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")

    shapes = [SHAPES[int(rng.integers(0, len(SHAPES)))] for _ in range(n_objects)]
    colors = list(COLORS)
    sizes = list(SIZES)
    objects = [WorldObject(shape=shapes[i],
                           color=colors[int(rng.integers(0, len(colors)))],
                           size=sizes[int(rng.integers(0, len(sizes)))],
                           depth_rank=i)
               for i in range(n_objects)]
    boxes0 = _place_objects(rng, objects)

    timeline = _Timeline(boxes0)
    edges: list[ActionEdge] = []
    frozen: set[int] = set()        # contained targets: no further actions
    used_cones: set[int] = set()    # cones that already contain something
    contain_windows: list[tuple[int, int]] = []
    attempts = 0
    while len(edges) < n_actions:
        attempts += 1
        if attempts > 1000:
            raise PlacementError(
                f"could not schedule {n_actions} actions after 1000 attempts")
        dur = int(rng.integers(4, 10))
        if T - 1 - dur < 0:
            continue
        t_s = int(rng.integers(0, T - dur))
        t_e = t_s + dur
        action = ACTIONS[int(rng.integers(0, len(ACTIONS)))]

        if action in ("slide", "pick_place"):
            subj = int(rng.integers(0, n_objects))
            if subj in frozen or timeline.busy(subj, t_s, t_e):
                continue
            start = timeline.center_at(subj, t_s)
            half = objects[subj].radius
            if action == "pick_place":
                half *= LIFT_SCALE
            offset = rng.uniform(-MAX_OFFSET, MAX_OFFSET, size=2)
            if np.linalg.norm(offset) < MIN_OFFSET:
                continue
            if not (_box_inside(start, half) and _box_inside(start + offset, half)):
                continue
            edges.append(ActionEdge(subject=subj, action=ACTIONS.index(action),
                                    object=subj, t_start=t_s, t_end=t_e,
                                    attrs={"dx": float(offset[0]), "dy": float(offset[1])}))
            timeline.add(subj, t_s, t_e, start + offset)
        elif action == "rotate":
            subj = int(rng.integers(0, n_objects))
            if subj in frozen or timeline.busy(subj, t_s, t_e):
                continue
            edges.append(ActionEdge(subject=subj, action=ACTIONS.index("rotate"),
                                    object=subj, t_start=t_s, t_end=t_e))
            timeline.add(subj, t_s, t_e, None)
        else:  # contain
            if any(t_s < e and s < t_e for s, e in contain_windows):
                continue
            pairs = []
            for ci, cone in enumerate(objects):
                if cone.shape != "cone" or ci in used_cones or ci in frozen:
                    continue
                if timeline.busy(ci, t_s, t_e):
                    continue
                for ti, target in enumerate(objects):
                    if ti == ci or target.shape == "cone" or ti in frozen:
                        continue
                    if not _covers(cone, target):
                        continue
                    if timeline.last_window_end(ti) > t_s:
                        continue
                    dest = timeline.center_at(ti, t_s)
                    if not _box_inside(dest, cone.radius):
                        continue
                    pairs.append((ci, ti, dest))
            if not pairs:
                continue
            ci, ti, dest = pairs[int(rng.integers(0, len(pairs)))]
            edges.append(ActionEdge(subject=ci, action=ACTIONS.index("contain"),
                                    object=ti, t_start=t_s, t_end=t_e))
            timeline.add(ci, t_s, t_e, dest)
            frozen.add(ti)
            used_cones.add(ci)
            contain_windows.append((t_s, t_e))

    vocab = build_vocabulary()
    nodes = tuple(ObjectNode(id=i, category=vocab.category_index(obj.category_name),
                             attributes={"shape": obj.shape, "color": obj.color,
                                         "size": obj.size})
                  for i, obj in enumerate(objects))
    graph = ActionGraph(vocabulary=vocab, objects=nodes,
                        edges=tuple(edges), length=T)
    layouts = execute_semantics(graph, boxes0)
    frames = render_episode(graph, layouts, resolution=resolution)
    return Episode(graph=graph, layouts=layouts, frames=frames, seed=seed)


# ---------------------------------------------------------------------------
# analytic semantics
# ---------------------------------------------------------------------------

def _pick_place_phase(r: float) -> tuple[float, float]:
    """Returns (translation fraction, scale factor) for progress r."""
    if r <= 0.25:
        return 0.0, 1.0 + (LIFT_SCALE - 1.0) * (r / 0.25)
    if r <= 0.75:
        return (r - 0.25) / 0.5, LIFT_SCALE
    return 1.0, LIFT_SCALE - (LIFT_SCALE - 1.0) * ((r - 0.75) / 0.25)


def check_executable(graph: ActionGraph) -> None:
    """Reject graphs whose edges command contradictory motion."""
    acts = graph.vocabulary.actions
    windows: dict[int, list[tuple[int, int, str]]] = {}
    for e in graph.edges:
        windows.setdefault(e.subject, []).append((e.t_start, e.t_end, acts[e.action]))
    for obj, wins in windows.items():
        wins.sort()
        for (s1, e1, a1), (s2, e2, a2) in zip(wins, wins[1:]):
            if s2 < e1:
                raise ContradictionError(
                    f"object {obj}: overlapping windows [{s1},{e1}] ({a1}) "
                    f"and [{s2},{e2}] ({a2})")
    contains = [e for e in graph.edges if acts[e.action] == "contain"]
    targets: set[int] = set()
    cones: set[int] = set()
    for e in contains:
        if e.subject == e.object:
            raise ContradictionError(f"contain edge {e}: subject equals object")
        shape = graph.objects[e.subject].attributes.get("shape")
        if shape != "cone":
            raise ContradictionError(
                f"contain edge {e}: subject shape {shape!r} is not a cone")
        if graph.objects[e.object].attributes.get("shape") == "cone":
            raise ContradictionError(
                f"contain edge {e}: nested containment (target is a cone)")
        if e.object in targets:
            raise ContradictionError(f"object {e.object} contained twice")
        if e.subject in cones:
            raise ContradictionError(f"cone {e.subject} contains twice")
        targets.add(e.object)
        cones.add(e.subject)
        for other in graph.edges:
            if other is e:
                continue
            if other.subject == e.object and other.t_end > e.t_start:
                raise ContradictionError(
                    f"object {e.object} moves after contain starts at t={e.t_start}")


def execute_semantics(graph: ActionGraph, initial_layout: np.ndarray) -> np.ndarray:
    """Roll the closed-form action rules into a (T, n, 4) box trajectory.

    Within a frame, rules of already-anchored edges apply first, then
    new edges anchor to the post-update state (so back-to-back windows
    chain exactly), then completed containments copy the cone's center
    onto the contained object.
    """
    check_executable(graph)
    initial = np.asarray(initial_layout, dtype=np.float64)
    n = graph.n_objects
    if initial.shape != (n, 4):
        raise ValueError(f"initial layout must be ({n}, 4), got {initial.shape}")
    T = graph.length
    acts = graph.vocabulary.actions
    layouts = np.zeros((T, n, 4))
    anchors: dict[int, np.ndarray] = {}
    contain_targets: dict[int, np.ndarray] = {}
    cur = initial.copy()
    for t in range(T):
        for idx, e in enumerate(graph.edges):
            if e.t_start < t <= e.t_end:
                cur[e.subject] = _apply_rule(acts[e.action], anchors[idx],
                                             contain_targets.get(idx), e.attrs,
                                             progress(e, t))
        for idx, e in enumerate(graph.edges):
            if e.t_start == t:
                anchors[idx] = cur[e.subject].copy()
                if acts[e.action] == "contain":
                    contain_targets[idx] = cur[e.object, :2].copy()
        for e in graph.edges:
            if acts[e.action] == "contain" and t >= e.t_end:
                cur[e.object, :2] = cur[e.subject, :2]
        layouts[t] = cur
    return layouts


def _apply_rule(action: str, anchor: np.ndarray, target: np.ndarray | None,
                attrs, r: float) -> np.ndarray:
    box = anchor.copy()
    if action == "slide":
        box[0] += attrs["dx"] * r
        box[1] += attrs["dy"] * r
    elif action == "pick_place":
        u, s = _pick_place_phase(r)
        box[0] += attrs["dx"] * u
        box[1] += attrs["dy"] * u
        box[2] *= s
        box[3] *= s
    elif action == "contain":
        box[:2] = anchor[:2] + (target - anchor[:2]) * r
    elif action == "rotate":
        pass
    return box


# ---------------------------------------------------------------------------
# controlled scenes for the timing and composition experiments
# ---------------------------------------------------------------------------

def _graph_from(objects: list[WorldObject], edges: list[ActionEdge], T: int) -> ActionGraph:
    vocab = build_vocabulary()
    nodes = tuple(ObjectNode(id=i, category=vocab.category_index(o.category_name),
                             attributes={"shape": o.shape, "color": o.color,
                                         "size": o.size})
                  for i, o in enumerate(objects))
    return ActionGraph(vocabulary=vocab, objects=nodes, edges=tuple(edges), length=T)


def sample_timing_pair(seed: int, T: int = 16):
    """Two programs identical except one action's window shifted earlier.

    Returns (early graph, late graph, initial boxes, subject id). The
    action is drawn from the displacement-bearing set (slide,
    pick_place, contain); rotate carries no displacement signal and is
    excluded. Both windows have the same duration.
    """
    rng = np.random.default_rng(seed)
    for _ in range(200):
        n_objects = int(rng.integers(2, 5))
        shapes = [SHAPES[int(rng.integers(0, len(SHAPES)))] for _ in range(n_objects)]
        colors = list(COLORS)
        sizes = list(SIZES)
        objects = [WorldObject(shape=shapes[i],
                               color=colors[int(rng.integers(0, len(colors)))],
                               size=sizes[int(rng.integers(0, len(sizes)))],
                               depth_rank=i)
                   for i in range(n_objects)]
        try:
            boxes0 = _place_objects(rng, objects)
        except PlacementError:
            continue
        action = ("slide", "pick_place", "contain")[int(rng.integers(0, 3))]
        dur = int(rng.integers(4, 8))
        shift = int(rng.integers(2, 5))
        if shift + dur > T - 1:
            continue
        t_s = int(rng.integers(shift, T - dur))
        if action == "contain":
            pairs = [(ci, ti) for ci, c in enumerate(objects) if c.shape == "cone"
                     for ti, o in enumerate(objects)
                     if ti != ci and o.shape != "cone" and _covers(c, o)
                     and _box_inside(boxes0[ti, :2], c.radius)]
            if not pairs:
                continue
            ci, ti = pairs[int(rng.integers(0, len(pairs)))]
            mk = lambda s: ActionEdge(subject=ci, action=ACTIONS.index("contain"),
                                      object=ti, t_start=s, t_end=s + dur)
            subject = ci
        else:
            subj = int(rng.integers(0, n_objects))
            half = objects[subj].radius * (LIFT_SCALE if action == "pick_place" else 1.0)
            offset = rng.uniform(-MAX_OFFSET, MAX_OFFSET, size=2)
            if np.linalg.norm(offset) < 0.15:
                continue
            if not (_box_inside(boxes0[subj, :2], half)
                    and _box_inside(boxes0[subj, :2] + offset, half)):
                continue
            attrs = {"dx": float(offset[0]), "dy": float(offset[1])}
            mk = lambda s: ActionEdge(subject=subj, action=ACTIONS.index(action),
                                      object=subj, t_start=s, t_end=s + dur, attrs=attrs)
            subject = subj
        early = _graph_from(objects, [mk(t_s - shift)], T)
        late = _graph_from(objects, [mk(t_s)], T)
        return early, late, boxes0, subject
    raise PlacementError(f"sample_timing_pair: no legal pair for seed {seed}")


def sample_swap_scene(seed: int, T: int = 16):
    """A swap program: pick_place(i -> pos j) plus slide(j -> pos i),
    identical windows, built via graph composition. Returns
    (graph, boxes0, (i, j)). Pairs closer than 0.2 are excluded as
    degenerate."""
    rng = np.random.default_rng(seed)
    for _ in range(200):
        n_objects = int(rng.integers(2, 5))
        shapes = [SHAPES[int(rng.integers(0, len(SHAPES)))] for _ in range(n_objects)]
        colors = list(COLORS)
        sizes = list(SIZES)
        objects = [WorldObject(shape=shapes[k],
                               color=colors[int(rng.integers(0, len(colors)))],
                               size=sizes[int(rng.integers(0, len(sizes)))],
                               depth_rank=k)
                   for k in range(n_objects)]
        try:
            boxes0 = _place_objects(rng, objects)
        except PlacementError:
            continue
        i, j = rng.permutation(n_objects)[:2]
        i, j = int(i), int(j)
        ci, cj = boxes0[i, :2], boxes0[j, :2]
        if np.linalg.norm(ci - cj) < 0.2:
            continue
        if not (_box_inside(cj, objects[i].radius * LIFT_SCALE)
                and _box_inside(ci, objects[i].radius * LIFT_SCALE)
                and _box_inside(ci, objects[j].radius)):
            continue
        dur = int(rng.integers(6, 10))
        t_s = int(rng.integers(0, T - dur))
        t_e = t_s + dur
        g1 = _graph_from(objects, [ActionEdge(
            subject=i, action=ACTIONS.index("pick_place"), object=i,
            t_start=t_s, t_end=t_e,
            attrs={"dx": float(cj[0] - ci[0]), "dy": float(cj[1] - ci[1])})], T)
        g2 = _graph_from(objects, [ActionEdge(
            subject=j, action=ACTIONS.index("slide"), object=j,
            t_start=t_s, t_end=t_e,
            attrs={"dx": float(ci[0] - cj[0]), "dy": float(ci[1] - cj[1])})], T)
        return compose(g1, g2), boxes0, (i, j)
    raise PlacementError(f"sample_swap_scene: no legal scene for seed {seed}")


def sample_huddle_scene(seed: int, T: int = 16):
    """A huddle program: k cones simultaneously contain k distinct targets.

    Returns (graph, boxes0, [(cone, target), ...]); built by composing
    one single-contain graph per cone."""
    rng = np.random.default_rng(seed)
    for _ in range(200):
        k = int(rng.integers(2, 4))
        colors = list(COLORS)
        objects = []
        for c in range(k):
            size = ("medium", "large")[int(rng.integers(0, 2))]
            objects.append(WorldObject(shape="cone", size=size,
                                       color=colors[int(rng.integers(0, len(colors)))],
                                       depth_rank=c))
        for c in range(k):
            shape = ("circle", "square", "triangle")[int(rng.integers(0, 3))]
            objects.append(WorldObject(shape=shape, size="small",
                                       color=colors[int(rng.integers(0, len(colors)))],
                                       depth_rank=k + c))
        try:
            boxes0 = _place_objects(rng, objects)
        except PlacementError:
            continue
        dur = int(rng.integers(5, 9))
        t_s = int(rng.integers(0, T - dur))
        t_e = t_s + dur
        pairs = []
        graphs = []
        ok = True
        for c in range(k):
            target = k + c
            if not (_covers(objects[c], objects[target])
                    and _box_inside(boxes0[target, :2], objects[c].radius)):
                ok = False
                break
            pairs.append((c, target))
            graphs.append(_graph_from(objects, [ActionEdge(
                subject=c, action=ACTIONS.index("contain"), object=target,
                t_start=t_s, t_end=t_e)], T))
        if not ok:
            continue
        return compose(*graphs), boxes0, pairs
    raise PlacementError(f"sample_huddle_scene: no legal scene for seed {seed}")


# ---------------------------------------------------------------------------
# rasterization
# ---------------------------------------------------------------------------

def _shape_mask(shape: str, box: np.ndarray, xx: np.ndarray, yy: np.ndarray) -> np.ndarray:
    x, y, w, h = box
    if w <= 0.0 or h <= 0.0:
        return np.zeros_like(xx, dtype=bool)
    rx, ry = w / 2.0, h / 2.0
    dx, dy = xx - x, yy - y
    if shape == "square":
        return (np.abs(dx) <= rx) & (np.abs(dy) <= ry)
    if shape in ("circle", "cone"):
        return (dx / rx) ** 2 + (dy / ry) ** 2 <= 1.0
    if shape == "triangle":
        # equilateral, apex up, inscribed in the radius-rx circle
        ax, ay = x, y - ry
        bx, by = x - rx * math.sqrt(3) / 2, y + ry / 2
        cx, cy = x + rx * math.sqrt(3) / 2, y + ry / 2
        d0 = (bx - ax) * (yy - ay) - (by - ay) * (xx - ax)
        d1 = (cx - bx) * (yy - by) - (cy - by) * (xx - bx)
        d2 = (ax - cx) * (yy - cy) - (ay - cy) * (xx - cx)
        return (d0 >= 0) & (d1 >= 0) & (d2 >= 0)
    raise ValueError(f"unknown shape {shape!r}")


def rasterize(layout: np.ndarray, objects: list[WorldObject], *,
              resolution: int = 64, spins: list[float | None] | None = None,
              order: list[int] | None = None) -> np.ndarray:
    """Painter's-algorithm render of one layout to uint8 RGB, no anti-aliasing.

    A pixel belongs to a shape when its center falls inside it. ``spins``
    gives per-object spoke phases in revolutions (None = no spoke);
    ``order`` overrides the default draw order (ascending depth_rank).
    """
    R = resolution
    img = np.empty((R, R, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    coords = (np.arange(R) + 0.5) / R
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    if order is None:
        order = sorted(range(len(objects)), key=lambda i: (objects[i].depth_rank, i))
    for i in order:
        obj = objects[i]
        box = np.asarray(layout[i], dtype=np.float64)
        mask = _shape_mask(obj.shape, box, xx, yy)
        img[mask] = obj.rgb
        if obj.shape == "cone":
            apex = box.copy()
            apex[2] /= 3.0
            apex[3] /= 3.0
            apex_mask = _shape_mask("circle", apex, xx, yy)
            img[apex_mask] = tuple(int(c * 0.6) for c in obj.rgb)
        if spins is not None and spins[i] is not None:
            theta = 2.0 * math.pi * spins[i]
            ux, uy = math.cos(theta), math.sin(theta)
            vx, vy = xx - box[0], yy - box[1]
            along = vx * ux + vy * uy
            perp = np.abs(vx * uy - vy * ux)
            spoke = mask & (along >= 0) & (perp <= 0.9 / R)
            img[spoke] = tuple(255 - c for c in obj.rgb)
    return img


def render_episode(graph: ActionGraph, layouts: np.ndarray, *,
                   resolution: int = 64) -> np.ndarray:
    """Render every frame, handling spoke phases and containment occlusion."""
    objects = objects_from_graph(graph)
    acts = graph.vocabulary.actions
    T = graph.length
    frames = np.zeros((T, resolution, resolution, 3), dtype=np.uint8)
    for t in range(T):
        spins: list[float | None] = [None] * len(objects)
        for e in graph.edges:
            if acts[e.action] == "rotate":
                r = progress(e, t)
                spins[e.subject] = (spins[e.subject] or 0.0) + r
        ranks = [float(o.depth_rank) for o in objects]
        for e in graph.edges:
            if acts[e.action] == "contain" and t >= e.t_end:
                ranks[e.object] = ranks[e.subject] - 0.5
        order = sorted(range(len(objects)), key=lambda i: (ranks[i], i))
        frames[t] = rasterize(layouts[t], objects, resolution=resolution,
                              spins=spins, order=order)
    return frames


# ---------------------------------------------------------------------------
# dataset directories
# ---------------------------------------------------------------------------

def _episode_dirname(i: int) -> str:
    return f"ep{i:05d}"


def save_layouts(path, layouts: np.ndarray) -> None:
    T, n, _ = layouts.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{T} {n}\n")
        for t in range(T):
            for i in range(n):
                fh.write(" ".join("%.17g" % v for v in layouts[t, i]) + "\n")


def load_layouts(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    try:
        T, n = (int(v) for v in lines[0].split())
        rows = [[float(v) for v in ln.split()] for ln in lines[1:]]
    except (ValueError, IndexError) as exc:
        raise DatasetError(f"{path}: malformed layouts file") from exc
    if len(rows) != T * n or any(len(r) != 4 for r in rows):
        raise DatasetError(f"{path}: expected {T * n} rows of 4 floats")
    return np.asarray(rows, dtype=np.float64).reshape(T, n, 4)


def export_dataset(episodes: list[Episode], dirpath, *, base_seed: int | None = None,
                   force: bool = False) -> None:
    """Write episodes to a dataset directory (meta + per-episode subdirs)."""
    root = Path(dirpath)
    if root.exists() and any(root.iterdir()) and not force:
        raise FileExistsError(f"{root} exists and is not empty (use force)")
    root.mkdir(parents=True, exist_ok=True)
    if not episodes:
        raise ValueError("export_dataset: no episodes")
    first = episodes[0]
    resolution = first.frames.shape[1] if first.frames is not None else 0
    meta = {
        "episodes": len(episodes),
        "length": first.length,
        "resolution": resolution,
        "seed": base_seed,
        "episode_seeds": [ep.seed for ep in episodes],
        "vocab_hash": first.graph.vocabulary.content_hash(),
    }
    with open(root / "meta", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    for i, ep in enumerate(episodes):
        epdir = root / _episode_dirname(i)
        (epdir / "frames").mkdir(parents=True, exist_ok=True)
        save_graph(epdir / "graph", ep.graph)
        save_layouts(epdir / "layouts", ep.layouts)
        if ep.frames is None:
            raise ValueError(f"episode {i}: frames not loaded, cannot export")
        for t in range(ep.frames.shape[0]):
            ppm.write_ppm(epdir / "frames" / f"{t:03d}.ppm", ep.frames[t])


def import_dataset(dirpath, *, load_frames: bool = True) -> tuple[list[Episode], dict]:
    root = Path(dirpath)
    meta_path = root / "meta"
    if not meta_path.exists():
        raise DatasetError(f"missing dataset meta file: {meta_path}")
    with open(meta_path, "r", encoding="utf-8") as fh:
        try:
            meta = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{meta_path}: malformed meta file: {exc}") from exc
    episodes: list[Episode] = []
    seeds = meta.get("episode_seeds") or [0] * int(meta["episodes"])
    for i in range(int(meta["episodes"])):
        epdir = root / _episode_dirname(i)
        graph_path = epdir / "graph"
        layouts_path = epdir / "layouts"
        for p in (graph_path, layouts_path):
            if not p.exists():
                raise DatasetError(f"episode {i}: missing file {p}")
        graph = load_graph(graph_path)
        layouts = load_layouts(layouts_path)
        frames = None
        if load_frames:
            frames = np.zeros((graph.length, meta["resolution"], meta["resolution"], 3),
                              dtype=np.uint8)
            for t in range(graph.length):
                fp = epdir / "frames" / f"{t:03d}.ppm"
                if not fp.exists():
                    raise DatasetError(f"episode {i}: missing file {fp}")
                frames[t] = ppm.read_ppm(fp)
        episodes.append(Episode(graph=graph, layouts=layouts, frames=frames,
                                seed=int(seeds[i])))
    return episodes, meta


def episode_seed(base_seed: int, index: int) -> int:
    return base_seed * 1_000_003 + index


def generate_corpus(base_seed: int, n_episodes: int, *, T: int = 16,
                    resolution: int = 64, workers: int = 1) -> list[Episode]:
    """Sample ``n_episodes`` with per-episode derived seeds.

    Episode generation is embarrassingly parallel; each worker owns its
    RNG stream, so results are identical for any worker count.
    """
    seeds = [episode_seed(base_seed, i) for i in range(n_episodes)]
    args = [(s, T, resolution) for s in seeds]
    if workers > 1:
        import multiprocessing as mp
        with mp.Pool(workers) as pool:
            return pool.starmap(_corpus_episode, args)
    return [_corpus_episode(*a) for a in args]


def _corpus_episode(seed: int, T: int, resolution: int) -> Episode:
    return sample_episode(seed, T=T, resolution=resolution)
