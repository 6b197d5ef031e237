"""Layout predictors: given the clocked graph at frame t and the layout at
t-1, predict the layout at t.

Four interchangeable predictors share the interface:

* ``GraphNetLayout``  -- message passing over the clocked graph; the
  model of record. Node features start as [category embedding, previous
  box]; edge features as [action embedding, progress, previous subject
  and object boxes, destination attrs]; both are projected to D dims.
  Each of K rounds feeds concat(subject, edge, object) representations
  through three per-round MLPs: one whose output aggregates into the
  subject node, one into the object node, and one that becomes the new
  edge representation. Aggregation is a plain sum by default (mean is
  available via ``aggregation="mean"``). Boxes come from an MLP head on
  the final node representations, clamped to [0, 1]; the final node
  representations double as the object descriptors consumed by the
  frame synthesizer.
* ``RecurrentLayout`` -- order-sensitive baseline: per object, a K-layer
  tanh RNN runs over the edge list (file order, idle edges appended),
  each step seeing (object features, subject features, edge features,
  object-of-edge features); boxes from the last hidden state.
* ``RuleLayout``      -- hand-coded constant-motion update: while an
  edge is operating, step the subject 0.1 normalized units along the
  action's direction; actions without a rule are identity.
* ``RandomLayout``    -- fresh uniform legal boxes every frame.

Nodes touching no edge receive a learned idle self-edge so static
objects still get updates. All predictors clamp boxes to [0, 1].
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .autodiff import (Tensor, add, clamp01, concat, embedding, matmul, relu,
                       tanh)
from .graph import ActionGraph, ClockedGraph, clocked_at, progress
from .nn import add_linear, add_mlp, linear, mlp

logger = logging.getLogger(__name__)

EMBED_DIM = 128
GCN_ROUNDS = 3
BOX_HIDDEN = 64
ATTR_SLOTS = 2  # destination (dx, dy); zero-filled when absent


@dataclass
class LayoutState:
    """Per-object boxes plus the descriptors the frame stage consumes."""

    boxes: np.ndarray        # (n, 4) in [0, 1]
    descriptors: np.ndarray  # (n, D)


@dataclass(frozen=True)
class GraphTensors:
    """Constant per-graph arrays shared by every frame's forward pass.

    Idle self-edges for otherwise edge-less nodes are appended after the
    real edges; their action id is ``n_actions`` (the extra embedding
    row) and their progress is pinned to 0.
    """

    n: int
    n_real_edges: int
    cat_ids: np.ndarray      # (n,)
    subj: np.ndarray         # (E,)
    obj: np.ndarray          # (E,)
    act_ids: np.ndarray      # (E,)
    attrs: np.ndarray        # (E, 2)
    sub_gather: np.ndarray   # (E, n) one-hot rows selecting subjects
    obj_gather: np.ndarray   # (E, n)
    sub_scatter: np.ndarray  # (n, E) sum aggregation
    obj_scatter: np.ndarray  # (n, E)
    sub_scatter_mean: np.ndarray
    obj_scatter_mean: np.ndarray


def graph_tensors(graph: ActionGraph) -> GraphTensors:
    n = graph.n_objects
    n_actions = len(graph.vocabulary.actions)
    subj = [e.subject for e in graph.edges]
    obj = [e.object for e in graph.edges]
    act = [e.action for e in graph.edges]
    attrs = [[e.attrs.get("dx", 0.0), e.attrs.get("dy", 0.0)] for e in graph.edges]
    touched = set(subj) | set(obj)
    for i in range(n):
        if i not in touched:
            subj.append(i)
            obj.append(i)
            act.append(n_actions)  # idle
            attrs.append([0.0, 0.0])
    E = len(subj)
    sub_gather = np.zeros((E, n))
    obj_gather = np.zeros((E, n))
    for e in range(E):
        sub_gather[e, subj[e]] = 1.0
        obj_gather[e, obj[e]] = 1.0
    sub_scatter = sub_gather.T.copy()
    obj_scatter = obj_gather.T.copy()
    sub_deg = np.maximum(sub_scatter.sum(axis=1, keepdims=True), 1.0)
    obj_deg = np.maximum(obj_scatter.sum(axis=1, keepdims=True), 1.0)
    return GraphTensors(
        n=n, n_real_edges=len(graph.edges),
        cat_ids=np.array([o.category for o in graph.objects], dtype=np.int64),
        subj=np.array(subj, dtype=np.int64), obj=np.array(obj, dtype=np.int64),
        act_ids=np.array(act, dtype=np.int64),
        attrs=np.array(attrs, dtype=np.float64).reshape(E, ATTR_SLOTS),
        sub_gather=sub_gather, obj_gather=obj_gather,
        sub_scatter=sub_scatter, obj_scatter=obj_scatter,
        sub_scatter_mean=sub_scatter / sub_deg, obj_scatter_mean=obj_scatter / obj_deg)


def progress_rows(graph: ActionGraph, gt: GraphTensors, ts) -> np.ndarray:
    """(F, E) progress values at the given frame times; idle edges stay 0."""
    rows = np.zeros((len(ts), len(gt.subj)))
    for f, t in enumerate(ts):
        for idx, e in enumerate(graph.edges):
            rows[f, idx] = progress(e, t)
    return rows


def edge_raw_features(gt: GraphTensors, prev_boxes: np.ndarray,
                      r: np.ndarray) -> np.ndarray:
    """Non-embedding slice of the initial edge features, (F, E, 9).

    Layout per row: [progress, subject box (4), object box (4)]; the
    destination attr slots are appended separately so tests can inspect
    the construction. Shapes: prev_boxes (F, n, 4), r (F, E).
    """
    prev_i = np.matmul(gt.sub_gather, prev_boxes)
    prev_j = np.matmul(gt.obj_gather, prev_boxes)
    return np.concatenate([r[..., None], prev_i, prev_j], axis=-1)


def edge_const_features(gt: GraphTensors, prev_boxes: np.ndarray,
                        r: np.ndarray) -> np.ndarray:
    """(F, E, 11): [progress, subject box, object box, destination attrs]."""
    base = edge_raw_features(gt, prev_boxes, r)
    f = base.shape[0]
    attrs = np.broadcast_to(gt.attrs, (f,) + gt.attrs.shape)
    return np.concatenate([base, attrs], axis=-1)


class _LearnedLayout:
    """Shared machinery for the trained predictors."""

    def __init__(self, params: dict[str, Tensor], n_categories: int, n_actions: int,
                 dim: int = EMBED_DIM):
        self.params = params
        self.n_categories = n_categories
        self.n_actions = n_actions
        self.dim = dim
        self._gt_cache: dict[int, GraphTensors] = {}

    def tensors_for(self, graph: ActionGraph) -> GraphTensors:
        gt = self._gt_cache.get(id(graph))
        if gt is None:
            gt = graph_tensors(graph)
            self._gt_cache[id(graph)] = gt
        return gt

    def _initial_features(self, gt: GraphTensors, prev_boxes: np.ndarray,
                          r: np.ndarray) -> tuple[Tensor, Tensor, Tensor]:
        """Project raw node/edge inputs to D dims; returns (z0, u0, prev)."""
        p = self.params
        f = prev_boxes.shape[0]
        tile = Tensor(np.zeros((f, 1, 1)))
        prev = Tensor(prev_boxes)
        phi = add(embedding(p["obj_embed"], gt.cat_ids), tile)       # (F, n, D)
        z0 = mlp(p, "node_in", concat([phi, prev]))
        psi = add(embedding(p["act_embed"], gt.act_ids), tile)       # (F, E, D)
        econst = Tensor(edge_const_features(gt, prev_boxes, r))
        u0 = mlp(p, "edge_in", concat([psi, econst]))
        return z0, u0, prev

    def _box_head(self, z: Tensor) -> Tensor:
        return clamp01(mlp(self.params, "box", z))

    def predict(self, clocked: ClockedGraph, prev: LayoutState) -> LayoutState:
        gt = self.tensors_for(clocked.graph)
        r = progress_rows(clocked.graph, gt, [clocked.t])
        boxes, z = self.forward_frames(gt, prev.boxes[None], r)
        return LayoutState(boxes=boxes.data[0], descriptors=z.data[0])

    def initial_state(self, graph: ActionGraph, boxes0: np.ndarray) -> LayoutState:
        """Descriptors for the given first layout: a self-conditioned pass
        on the all-at-start clocked graph, keeping the given boxes."""
        gt = self.tensors_for(graph)
        r = progress_rows(graph, gt, [0])
        _, z = self.forward_frames(gt, np.asarray(boxes0)[None], r)
        return LayoutState(boxes=np.asarray(boxes0, dtype=np.float64).copy(),
                           descriptors=z.data[0])

    def forward_frames(self, gt: GraphTensors, prev_boxes: np.ndarray,
                       r: np.ndarray) -> tuple[Tensor, Tensor]:
        raise NotImplementedError


def _base_params(rng: np.random.Generator, n_categories: int, n_actions: int,
                 dim: int) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {
        "obj_embed": Tensor(rng.normal(0.0, 0.1, size=(n_categories, dim)),
                            requires_grad=True),
        "act_embed": Tensor(rng.normal(0.0, 0.1, size=(n_actions + 1, dim)),
                            requires_grad=True),
    }
    add_mlp(params, rng, "node_in", dim + 4, dim, dim)
    add_mlp(params, rng, "edge_in", dim + 1 + 8 + ATTR_SLOTS, dim, dim)
    # start near the box interior so the clamp passes gradient at init
    add_mlp(params, rng, "box", dim, BOX_HIDDEN, 4, out_bias=0.5)
    return params


class GraphNetLayout(_LearnedLayout):
    kind = "gcn"

    def __init__(self, params: dict[str, Tensor], n_categories: int, n_actions: int,
                 dim: int = EMBED_DIM, rounds: int = GCN_ROUNDS,
                 aggregation: str = "sum"):
        super().__init__(params, n_categories, n_actions, dim)
        if aggregation not in ("sum", "mean"):
            raise ValueError(f"aggregation must be 'sum' or 'mean', got {aggregation!r}")
        self.rounds = rounds
        self.aggregation = aggregation

    @staticmethod
    def init_params(rng: np.random.Generator, n_categories: int, n_actions: int,
                    dim: int = EMBED_DIM, rounds: int = GCN_ROUNDS) -> dict[str, Tensor]:
        params = _base_params(rng, n_categories, n_actions, dim)
        for k in range(rounds):
            add_mlp(params, rng, f"round{k}.subj", 3 * dim, dim, dim)
            add_mlp(params, rng, f"round{k}.obj", 3 * dim, dim, dim)
            add_mlp(params, rng, f"round{k}.edge", 3 * dim, dim, dim)
        return params

    def forward_frames(self, gt: GraphTensors, prev_boxes: np.ndarray,
                       r: np.ndarray) -> tuple[Tensor, Tensor]:
        p = self.params
        z, u, _ = self._initial_features(gt, prev_boxes, r)
        if self.aggregation == "sum":
            sub_sc, obj_sc = gt.sub_scatter, gt.obj_scatter
        else:
            sub_sc, obj_sc = gt.sub_scatter_mean, gt.obj_scatter_mean
        sub_g = Tensor(gt.sub_gather)
        obj_g = Tensor(gt.obj_gather)
        sub_s = Tensor(sub_sc)
        obj_s = Tensor(obj_sc)
        for k in range(self.rounds):
            z_s = matmul(sub_g, z)
            z_o = matmul(obj_g, z)
            msg = concat([z_s, u, z_o])
            to_subj = mlp(p, f"round{k}.subj", msg)
            to_obj = mlp(p, f"round{k}.obj", msg)
            new_u = mlp(p, f"round{k}.edge", msg)
            z = add(matmul(sub_s, to_subj), matmul(obj_s, to_obj))
            u = new_u
        return self._box_head(z), z


class RecurrentLayout(_LearnedLayout):
    kind = "rnn"

    def __init__(self, params: dict[str, Tensor], n_categories: int, n_actions: int,
                 dim: int = EMBED_DIM, rounds: int = GCN_ROUNDS):
        super().__init__(params, n_categories, n_actions, dim)
        self.rounds = rounds

    @staticmethod
    def init_params(rng: np.random.Generator, n_categories: int, n_actions: int,
                    dim: int = EMBED_DIM, rounds: int = GCN_ROUNDS) -> dict[str, Tensor]:
        params = _base_params(rng, n_categories, n_actions, dim)
        add_linear(params, rng, "rnn0.wm", dim, dim)
        add_linear(params, rng, "rnn0.wx", 3 * dim, dim)
        add_linear(params, rng, "rnn0.v", dim, dim)
        for k in range(1, rounds):
            add_linear(params, rng, f"rnn{k}.w", dim, dim)
            add_linear(params, rng, f"rnn{k}.v", dim, dim)
        return params

    def forward_frames(self, gt: GraphTensors, prev_boxes: np.ndarray,
                       r: np.ndarray) -> tuple[Tensor, Tensor]:
        p = self.params
        z0, u0, _ = self._initial_features(gt, prev_boxes, r)
        f = prev_boxes.shape[0]
        E = len(gt.subj)
        z_s = matmul(Tensor(gt.sub_gather), z0)
        z_o = matmul(Tensor(gt.obj_gather), z0)
        shared = concat([z_s, u0, z_o])                                # (F, E, 3D)
        shared_w = add(matmul(shared, p["rnn0.wx.w"]), p["rnn0.wx.b"])  # (F, E, D)
        own_w = add(matmul(z0, p["rnn0.wm.w"]), p["rnn0.wm.b"])         # (F, n, D)
        hidden = [Tensor(np.zeros((f, gt.n, self.dim))) for _ in range(self.rounds)]
        eye = np.eye(E)
        for s in range(E):
            step = add(own_w, matmul(Tensor(eye[s:s + 1]), shared_w))
            hidden[0] = tanh(add(step, linear(p, "rnn0.v", hidden[0])))
            for k in range(1, self.rounds):
                hidden[k] = tanh(add(linear(p, f"rnn{k}.w", hidden[k - 1]),
                                     linear(p, f"rnn{k}.v", hidden[k])))
        z = hidden[-1]
        return self._box_head(z), z


class RuleLayout:
    """Constant-motion rules: 0.1 units per operating frame along the
    action's direction; no rule means identity."""

    kind = "rule"

    def __init__(self, vocabulary, alpha: float = 0.1, dim: int = EMBED_DIM):
        self.vocabulary = vocabulary
        self.alpha = alpha
        self.dim = dim
        self._warned: set[str] = set()

    def predict(self, clocked: ClockedGraph, prev: LayoutState) -> LayoutState:
        boxes = prev.boxes.copy()
        acts = clocked.graph.vocabulary.actions
        for ce in clocked.edges:
            e = ce.edge
            if not e.t_start < clocked.t <= e.t_end:
                continue
            name = acts[e.action]
            if name in ("slide", "pick_place"):
                d = np.array([e.attrs.get("dx", 0.0), e.attrs.get("dy", 0.0)])
            elif name == "contain":
                d = prev.boxes[e.object, :2] - prev.boxes[e.subject, :2]
            elif name == "rotate":
                continue
            else:
                if name not in self._warned:
                    self._warned.add(name)
                    logger.warning("rule layout: no rule for action %r, identity", name)
                continue
            norm = float(np.linalg.norm(d))
            if norm > 0.0:
                boxes[e.subject, 0] += self.alpha * d[0] / norm
                boxes[e.subject, 1] += self.alpha * d[1] / norm
        np.clip(boxes, 0.0, 1.0, out=boxes)
        return LayoutState(boxes=boxes, descriptors=np.zeros((len(boxes), self.dim)))

    def initial_state(self, graph: ActionGraph, boxes0: np.ndarray) -> LayoutState:
        boxes0 = np.asarray(boxes0, dtype=np.float64)
        return LayoutState(boxes=boxes0.copy(),
                           descriptors=np.zeros((len(boxes0), self.dim)))


class RandomLayout:
    """Uniform legal boxes each frame; the floor any model must beat."""

    kind = "random"

    def __init__(self, seed: int = 0, dim: int = EMBED_DIM):
        self.rng = np.random.default_rng(seed)
        self.dim = dim

    def predict(self, clocked: ClockedGraph, prev: LayoutState) -> LayoutState:
        n = len(prev.boxes)
        wh = self.rng.uniform(0.04, 0.3, size=(n, 2))
        xy = self.rng.uniform(wh / 2.0, 1.0 - wh / 2.0)
        boxes = np.concatenate([xy, wh], axis=1)
        return LayoutState(boxes=boxes, descriptors=np.zeros((n, self.dim)))

    def initial_state(self, graph: ActionGraph, boxes0: np.ndarray) -> LayoutState:
        boxes0 = np.asarray(boxes0, dtype=np.float64)
        return LayoutState(boxes=boxes0.copy(),
                           descriptors=np.zeros((len(boxes0), self.dim)))


def rollout(model, graph: ActionGraph, boxes0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Autoregressive layout trajectory from the given first layout.

    Returns (T, n, 4) boxes and (T, n, D) descriptors; index 0 is the
    given layout (with model-derived descriptors).
    """
    state = model.initial_state(graph, np.asarray(boxes0, dtype=np.float64))
    boxes = [state.boxes]
    descs = [state.descriptors]
    for t in range(1, graph.length):
        state = model.predict(clocked_at(graph, t), state)
        boxes.append(state.boxes)
        descs.append(state.descriptors)
    return np.stack(boxes), np.stack(descs)
