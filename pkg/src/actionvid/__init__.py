"""actionvid: timed action graphs to box layouts to rendered video.

The pipeline is staged: a clocked action graph schedules per-edge
progress, a message-passing model predicts per-frame box layouts, and a
flow/warp/refine synthesizer turns layouts into pixels. A procedural 2D
shape world with closed-form action semantics supplies exact ground
truth, so every training and evaluation claim reduces to an
automatically checkable property.
"""

__version__ = "0.1.0"

from .autodiff import Tensor, backward
from .graph import (ActionEdge, ActionGraph, ClockedGraph, ObjectNode,
                    Vocabulary, clocked_at, compose, parse_graph, progress,
                    serialize_graph, unroll)
from .layout import (GraphNetLayout, LayoutState, RandomLayout,
                     RecurrentLayout, RuleLayout, rollout)
from .optim import Adam
from .train import MetricReport, TrainConfig, eval_layout, train_fgf, train_lgf
from .world import Episode, execute_semantics, rasterize, sample_episode

__all__ = [
    "Tensor", "backward", "Adam",
    "ActionEdge", "ActionGraph", "ClockedGraph", "ObjectNode", "Vocabulary",
    "clocked_at", "compose", "parse_graph", "progress", "serialize_graph", "unroll",
    "GraphNetLayout", "LayoutState", "RandomLayout", "RecurrentLayout",
    "RuleLayout", "rollout",
    "MetricReport", "TrainConfig", "eval_layout", "train_fgf", "train_lgf",
    "Episode", "execute_semantics", "rasterize", "sample_episode",
    "__version__",
]
