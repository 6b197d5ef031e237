"""Frame synthesis: layouts to pixels via flow, warping, and refinement.

Given the previous frame plus the layouts at t-1 and t, each layout is
scattered into an image-shaped feature map (each object's projected
descriptor written into its box pixels, summed over objects). A 3-layer
conv net predicts a dense pixel flow from (previous frame, both maps);
the previous frame is bilinearly warped along that flow; and a second
3-layer conv net adds a correction on top of the warp:

    v_t = clamp(warp(v_{t-1}, flow) + correction(m_t, warp), 0, 1)

The flow net is trained only through the warp reconstruction loss (no
flow supervision); both conv stacks are the smallest that can express
per-box translation, with zero-initialized output layers so synthesis
starts as an identity warp.

Batched calls carry frames on a leading axis; descriptors are fed as
(F, 1, n, D) so the mask matmul broadcasts over pixels.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (ShapeError, Tensor, add, bilinear_sample, clamp01,
                       concat, conv2d, matmul, relu)
from .graph import ActionGraph
from .layout import LayoutState, rollout
from .nn import add_conv, add_linear, linear

FEATURE_CHANNELS = 16
CONV_CHANNELS = 16


def init_frame_params(rng: np.random.Generator, desc_dim: int = 128,
                      feat_channels: int = FEATURE_CHANNELS,
                      hidden: int = CONV_CHANNELS) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    add_linear(params, rng, "proj", desc_dim, feat_channels)
    add_conv(params, rng, "flow.c1", 3 + 2 * feat_channels, hidden)
    add_conv(params, rng, "flow.c2", hidden, hidden)
    add_conv(params, rng, "flow.c3", hidden, 2, zero=True)
    add_conv(params, rng, "refine.c1", feat_channels + 3, hidden)
    add_conv(params, rng, "refine.c2", hidden, hidden)
    add_conv(params, rng, "refine.c3", hidden, 3, zero=True)
    return params


def box_pixel_masks(boxes: np.ndarray, resolution: int) -> np.ndarray:
    """(H, W, n) indicator masks: pixel centers inside each box."""
    boxes = np.asarray(boxes, dtype=np.float64)
    coords = (np.arange(resolution) + 0.5) / resolution
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    n = len(boxes)
    masks = np.zeros((resolution, resolution, n))
    for i, (x, y, w, h) in enumerate(boxes):
        if w <= 0.0 or h <= 0.0:
            continue
        inside = (np.abs(xx - x) <= w / 2.0) & (np.abs(yy - y) <= h / 2.0)
        masks[..., i] = inside
    return masks


def _conv_stack(params: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    h = relu(add(conv2d(x, params[f"{prefix}.c1.w"]), params[f"{prefix}.c1.b"]))
    h = relu(add(conv2d(h, params[f"{prefix}.c2.w"]), params[f"{prefix}.c2.b"]))
    return add(conv2d(h, params[f"{prefix}.c3.w"]), params[f"{prefix}.c3.b"])


def feature_map(params: dict[str, Tensor], masks, descriptors) -> Tensor:
    """Scatter projected descriptors into box pixels and sum over objects.

    ``masks`` is (H, W, n) or (F, H, W, n); ``descriptors`` is (n, D) or
    (F, 1, n, D) for the batched case. Zero outside all boxes by
    construction, and additive over objects.
    """
    proj = linear(params, "proj", descriptors)
    return matmul(masks if isinstance(masks, Tensor) else Tensor(masks), proj)


def build_feature_map(params: dict[str, Tensor], layout: LayoutState,
                      resolution: int) -> Tensor:
    return feature_map(params, box_pixel_masks(layout.boxes, resolution),
                       Tensor(layout.descriptors))


def predict_flow(params: dict[str, Tensor], v_prev, m_prev: Tensor,
                 m_cur: Tensor) -> Tensor:
    """Dense pixel flow from the previous frame and both feature maps."""
    v_prev = v_prev if isinstance(v_prev, Tensor) else Tensor(v_prev)
    if v_prev.shape[:-1] != m_prev.shape[:-1] or v_prev.shape[:-1] != m_cur.shape[:-1]:
        raise ShapeError(
            f"predict_flow: spatial dims differ, frame {v_prev.shape}, "
            f"maps {m_prev.shape} / {m_cur.shape}")
    return _conv_stack(params, "flow", concat([v_prev, m_prev, m_cur]))


def warp(v_prev, flow) -> Tensor:
    return bilinear_sample(v_prev, flow)


def refine(params: dict[str, Tensor], m_cur: Tensor, warped) -> Tensor:
    """Additive correction on the warped frame, clamped to [0, 1]."""
    warped = warped if isinstance(warped, Tensor) else Tensor(warped)
    if warped.shape[:-1] != m_cur.shape[:-1]:
        raise ShapeError(
            f"refine: spatial dims differ, warp {warped.shape}, map {m_cur.shape}")
    correction = _conv_stack(params, "refine", concat([m_cur, warped]))
    return clamp01(add(warped, correction))


def synth_step(params: dict[str, Tensor], v_prev, masks_prev, masks_cur,
               desc_prev, desc_cur) -> tuple[Tensor, Tensor, Tensor]:
    """One synthesis step; returns (frame, warped, flow)."""
    m_prev = feature_map(params, masks_prev, desc_prev)
    m_cur = feature_map(params, masks_cur, desc_cur)
    flow = predict_flow(params, v_prev, m_prev, m_cur)
    warped = warp(v_prev, flow)
    frame = refine(params, m_cur, warped)
    return frame, warped, flow


def synthesize_frames(params: dict[str, Tensor], boxes: np.ndarray,
                      descriptors: np.ndarray, first_frame: np.ndarray) -> np.ndarray:
    """Autoregressive synthesis of frames 1..T-1 from the given first frame.

    ``boxes`` (T, n, 4) and ``descriptors`` (T, n, D) come from a layout
    rollout (predicted at inference, ground-truth for the GT-layout
    variant). Returns float frames (T, H, W, 3) in [0, 1], index 0 being
    the input frame.
    """
    first = np.asarray(first_frame, dtype=np.float64)
    T = boxes.shape[0]
    resolution = first.shape[0]
    out = np.zeros((T,) + first.shape)
    out[0] = first
    v_prev = first
    for t in range(1, T):
        masks_prev = box_pixel_masks(boxes[t - 1], resolution)
        masks_cur = box_pixel_masks(boxes[t], resolution)
        frame, _, _ = synth_step(params, v_prev, masks_prev, masks_cur,
                                 Tensor(descriptors[t - 1]), Tensor(descriptors[t]))
        out[t] = frame.data
        v_prev = out[t]
    return out


def generate_video(graph: ActionGraph, first_frame: np.ndarray, boxes0: np.ndarray,
                   layout_model, frame_params: dict[str, Tensor]) -> np.ndarray:
    """Full pipeline: layout rollout, then frame-by-frame synthesis.

    Fully autoregressive: each frame conditions on the previously
    generated frame and each layout on the previously predicted layout.
    T=1 returns just the given frame.
    """
    if graph.length == 1:
        return np.asarray(first_frame, dtype=np.float64)[None].copy()
    boxes, descs = rollout(layout_model, graph, boxes0)
    return synthesize_frames(frame_params, boxes, descs, first_frame)
