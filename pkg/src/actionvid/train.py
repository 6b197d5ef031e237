"""Losses, training loops, metrics, and the automated experiment suite.

The layout stage trains teacher-forced: every frame's prediction is
conditioned on the ground-truth previous layout, with an L1 loss on box
coordinates. The frame stage trains on ground-truth boxes (descriptors
from the frozen layout model) with the warp-reconstruction flow loss
plus a plain L1 reconstruction loss. Both stages use Adam with the
shared defaults (lr 1e-4, betas (0.5, 0.99), loss weights 10) and are
deterministic under the config seed.

Evaluation is geometric and automated: box mIOU / recall at IOU
thresholds, motion-onset ordering for timing control, and center-match
judges for the composed swap/huddle programs.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .autodiff import ShapeError, Tensor, absolute, backward, multiply, tensor_mean
from .checkpoint import checkpoint_tensors
from .frames import (box_pixel_masks, init_frame_params, predict_flow,
                     feature_map, refine, synthesize_frames, warp)
from .graph import ActionGraph, progress
from .layout import (EMBED_DIM, GCN_ROUNDS, GraphNetLayout, LayoutState,
                     RandomLayout, RecurrentLayout, RuleLayout, graph_tensors,
                     progress_rows, rollout)
from .optim import Adam
from .world import (Episode, execute_semantics, import_dataset,
                    sample_huddle_scene, sample_swap_scene, sample_timing_pair)

logger = logging.getLogger(__name__)

ONSET_THRESHOLD = 0.03  # smallest displacement distinguishable from jitter
MODEL_KINDS = ("gcn", "rnn", "rule", "random")


@dataclass
class TrainConfig:
    """Flat, file-loadable run configuration; defaults reproduce the
    reference setup (lr 1e-4, betas (0.5, 0.99), all loss weights 10,
    batch size 2, 128-dim embeddings, 3 message rounds, 16-channel maps)."""

    model: str = "gcn"
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.99
    lambda_layout: float = 10.0
    lambda_flow: float = 10.0
    lambda_rec: float = 10.0
    batch_size: int = 2
    epochs: int = 60
    seed: int = 0
    holdout: int = 50
    eval_every: int = 10
    aggregation: str = "sum"
    embed_dim: int = EMBED_DIM
    rounds: int = GCN_ROUNDS
    feat_channels: int = 16
    conv_channels: int = 16
    fgf_episodes: int = 100
    fgf_epochs: int = 4

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        for name in ("lambda_layout", "lambda_flow", "lambda_rec", "lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        from .checkpoint import load_kv
        raw = load_kv(path)
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(raw) - set(known)
        if unknown:
            raise ValueError(f"{path}: unknown config key(s) {sorted(unknown)}")
        kwargs = {}
        for key, value in raw.items():
            typ = known[key]
            if typ == "int":
                kwargs[key] = int(value)
            elif typ == "float":
                kwargs[key] = float(value)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    def to_file(self, path) -> None:
        from .checkpoint import save_kv
        save_kv(path, asdict(self))


@dataclass
class MetricReport:
    """All rates are fractions in [0, 1]; absent sections stay None."""

    miou: float | None = None
    r_at_03: float | None = None
    r_at_05: float | None = None
    n_boxes: int | None = None
    per_action: dict[str, float] = field(default_factory=dict)
    pixel_l1: float | None = None
    copy_l1: float | None = None
    flow_loss_init: float | None = None
    flow_loss_final: float | None = None
    timing_accuracy: float | None = None
    swap_success: float | None = None
    huddle_success: float | None = None

    def as_dict(self) -> dict:
        out = {}
        for key, value in asdict(self).items():
            if value is None or (key == "per_action" and not value):
                continue
            out[key] = value
        return out

    def to_kv_text(self) -> str:
        lines = []
        for key, value in self.as_dict().items():
            if isinstance(value, dict):
                for sub, v in sorted(value.items()):
                    lines.append(f"{key}.{sub} = {v:.6f}")
            elif isinstance(value, float):
                lines.append(f"{key} = {value:.6f}")
            else:
                lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def save(self, base_path) -> None:
        """Write <base>.txt (flat key-value) and <base>.json."""
        base = Path(base_path)
        base.parent.mkdir(parents=True, exist_ok=True)
        with open(base.with_suffix(".txt"), "w", encoding="utf-8") as fh:
            fh.write(self.to_kv_text())
        with open(base.with_suffix(".json"), "w", encoding="utf-8") as fh:
            json.dump(self.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def layout_loss(pred, gt) -> Tensor:
    """Mean absolute error over all box coordinates, objects, frames."""
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    gt_arr = gt.data if isinstance(gt, Tensor) else np.asarray(gt, dtype=np.float64)
    if pred.shape != gt_arr.shape:
        raise ShapeError(f"layout_loss: shapes {pred.shape} and {gt_arr.shape} differ")
    return tensor_mean(absolute(pred - Tensor(gt_arr)))


def flow_loss(warped, target) -> Tensor:
    """Mean L1 between warped previous frames and the actual next frames."""
    warped = warped if isinstance(warped, Tensor) else Tensor(warped)
    t_arr = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if warped.shape != t_arr.shape:
        raise ShapeError(f"flow_loss: shapes {warped.shape} and {t_arr.shape} differ")
    return tensor_mean(absolute(warped - Tensor(t_arr)))


# ---------------------------------------------------------------------------
# box metrics
# ---------------------------------------------------------------------------

def box_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IOU of center-format boxes; broadcasts over leading axes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ax0, ax1 = a[..., 0] - a[..., 2] / 2, a[..., 0] + a[..., 2] / 2
    ay0, ay1 = a[..., 1] - a[..., 3] / 2, a[..., 1] + a[..., 3] / 2
    bx0, bx1 = b[..., 0] - b[..., 2] / 2, b[..., 0] + b[..., 2] / 2
    by0, by1 = b[..., 1] - b[..., 3] / 2, b[..., 1] + b[..., 3] / 2
    iw = np.maximum(np.minimum(ax1, bx1) - np.maximum(ax0, bx0), 0.0)
    ih = np.maximum(np.minimum(ay1, by1) - np.maximum(ay0, by0), 0.0)
    inter = iw * ih
    union = np.maximum(ax1 - ax0, 0) * np.maximum(ay1 - ay0, 0) \
        + np.maximum(bx1 - bx0, 0) * np.maximum(by1 - by0, 0) - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def eval_layout(pred_layouts, gt_layouts, graphs=None) -> MetricReport:
    """mIOU and R@{0.3, 0.5} over predicted frames (frame 0 is given and
    excluded). ``graphs`` enables the per-action breakdown: a box at
    frame t counts toward action a when an a-edge with that subject has
    t inside its window."""
    if len(pred_layouts) != len(gt_layouts):
        raise ShapeError(
            f"eval_layout: {len(pred_layouts)} predictions vs {len(gt_layouts)} targets")
    ious = []
    per_action: dict[str, list] = {}
    for k, (pred, gt) in enumerate(zip(pred_layouts, gt_layouts)):
        pred = np.asarray(pred, dtype=np.float64)
        gt = np.asarray(gt, dtype=np.float64)
        if pred.shape != gt.shape:
            raise ShapeError(
                f"eval_layout: episode {k} shapes {pred.shape} vs {gt.shape}")
        iou = box_iou(pred[1:], gt[1:])
        ious.append(iou.reshape(-1))
        if graphs is not None:
            g = graphs[k]
            for e in g.edges:
                name = g.vocabulary.actions[e.action]
                for t in range(1, g.length):
                    if e.t_start <= t <= e.t_end:
                        per_action.setdefault(name, []).append(iou[t - 1, e.subject])
    allv = np.concatenate(ious) if ious else np.zeros(0)
    report = MetricReport(
        miou=float(allv.mean()) if allv.size else 0.0,
        r_at_03=float((allv > 0.3).mean()) if allv.size else 0.0,
        r_at_05=float((allv > 0.5).mean()) if allv.size else 0.0,
        n_boxes=int(allv.size))
    report.per_action = {name: float(np.mean(vals))
                         for name, vals in sorted(per_action.items())}
    return report


# ---------------------------------------------------------------------------
# layout model construction and training
# ---------------------------------------------------------------------------

def build_layout_model(kind: str, vocabulary, config: TrainConfig,
                       param_arrays: dict[str, np.ndarray] | None = None):
    """Instantiate a layout predictor; learned kinds get fresh or loaded params."""
    n_cat = len(vocabulary.categories)
    n_act = len(vocabulary.actions)
    if kind == "rule":
        return RuleLayout(vocabulary, dim=config.embed_dim)
    if kind == "random":
        return RandomLayout(seed=config.seed, dim=config.embed_dim)
    cls = {"gcn": GraphNetLayout, "rnn": RecurrentLayout}.get(kind)
    if cls is None:
        raise ValueError(f"unknown layout model kind {kind!r}")
    if param_arrays is None:
        rng = np.random.default_rng(config.seed)
        params = cls.init_params(rng, n_cat, n_act, dim=config.embed_dim,
                                 rounds=config.rounds)
    else:
        params = {k: Tensor(v.copy(), requires_grad=True)
                  for k, v in param_arrays.items()}
    if kind == "gcn":
        return GraphNetLayout(params, n_cat, n_act, dim=config.embed_dim,
                              rounds=config.rounds, aggregation=config.aggregation)
    return RecurrentLayout(params, n_cat, n_act, dim=config.embed_dim,
                           rounds=config.rounds)


def split_dataset(episodes: list[Episode], holdout: int) -> tuple[list[Episode], list[Episode]]:
    if holdout <= 0 or holdout >= len(episodes):
        raise ValueError(f"holdout {holdout} out of range for {len(episodes)} episodes")
    return episodes[:-holdout], episodes[-holdout:]


_worker_model = None


def _init_rollout_worker(model) -> None:
    global _worker_model
    _worker_model = model


def _rollout_worker(task):
    graph, boxes0 = task
    return rollout(_worker_model, graph, boxes0)[0]


def evaluate_rollouts(model, episodes: list[Episode], workers: int = 1) -> MetricReport:
    """Held-out rollout metrics; parallel across episodes when asked
    (results are identical for any worker count)."""
    if workers > 1:
        import multiprocessing as mp
        with mp.Pool(workers, initializer=_init_rollout_worker, initargs=(model,)) as pool:
            preds = pool.map(_rollout_worker,
                             [(ep.graph, ep.layouts[0]) for ep in episodes])
    else:
        preds = [rollout(model, ep.graph, ep.layouts[0])[0] for ep in episodes]
    return eval_layout(preds, [ep.layouts for ep in episodes],
                       [ep.graph for ep in episodes])


def train_lgf(config: TrainConfig, data_dir, *, log_path=None):
    """Teacher-forced layout training; returns (model, report, log rows).

    Evaluates on the held-out tail every ``eval_every`` epochs and keeps
    the checkpoint with the best held-out mIOU. Deterministic in the
    config seed.
    """
    if config.model not in ("gcn", "rnn"):
        raise ValueError(f"train_lgf: model must be gcn or rnn, got {config.model!r}")
    episodes, _ = import_dataset(data_dir, load_frames=False)
    train_eps, holdout_eps = split_dataset(episodes, config.holdout)
    vocab = episodes[0].graph.vocabulary
    model = build_layout_model(config.model, vocab, config)
    prepared = []
    for ep in train_eps:
        gt = graph_tensors(ep.graph)
        ts = list(range(1, ep.graph.length))
        prepared.append((gt, ep.layouts[:-1], ep.layouts[1:],
                         progress_rows(ep.graph, gt, ts)))
    opt = Adam(model.params, lr=config.lr, betas=(config.beta1, config.beta2))
    opt.zero_grad()
    rng = np.random.default_rng(config.seed)
    log_rows = []
    best = (None, -1.0, -1)
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(prepared))
        pending = 0
        for pos, idx in enumerate(order):
            gt, prev, target, rows = prepared[idx]
            boxes, _ = model.forward_frames(gt, prev, rows)
            loss = multiply(multiply(layout_loss(boxes, target), config.lambda_layout),
                            1.0 / config.batch_size)
            backward(loss)
            pending += 1
            log_rows.append((step, epoch, float(loss.data) * config.batch_size))
            step += 1
            if pending == config.batch_size or pos == len(order) - 1:
                opt.step()
                opt.zero_grad()
                pending = 0
        if (epoch + 1) % config.eval_every == 0 or epoch == config.epochs - 1:
            report = evaluate_rollouts(model, holdout_eps)
            logger.info("epoch %d: held-out mIOU %.4f", epoch, report.miou)
            if report.miou > best[1]:
                best = (checkpoint_tensors(model.params), report.miou, epoch)
    if best[0] is not None:
        for name, arr in best[0].items():
            model.params[name].data = arr
    report = evaluate_rollouts(model, holdout_eps)
    if log_path is not None:
        write_loss_log(log_path, log_rows)
    return model, report, log_rows


def write_loss_log(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "epoch", "loss"])
        for row in rows:
            writer.writerow(row)


# ---------------------------------------------------------------------------
# frame-stage training
# ---------------------------------------------------------------------------

def teacher_forced_states(model, episode: Episode) -> np.ndarray:
    """Descriptors for every frame with ground-truth boxes as conditioning."""
    graph = episode.graph
    gt = graph_tensors(graph)
    ts = list(range(1, graph.length))
    _, z = model.forward_frames(gt, episode.layouts[:-1],
                                progress_rows(graph, gt, ts))
    z0 = model.initial_state(graph, episode.layouts[0]).descriptors
    return np.concatenate([z0[None], z.data], axis=0)


def _episode_frame_batch(params, episode: Episode, masks: np.ndarray,
                         descs: np.ndarray):
    """Batched synthesis graph over all transitions of one episode."""
    frames = episode.frames.astype(np.float64) / 255.0
    F = episode.length - 1
    v_prev = frames[:-1]
    target = frames[1:]
    m_prev = feature_map(params, masks[:-1], Tensor(descs[:-1, None]))
    m_cur = feature_map(params, masks[1:], Tensor(descs[1:, None]))
    flow = predict_flow(params, v_prev, m_prev, m_cur)
    warped = warp(v_prev, flow)
    refined = refine(params, m_cur, warped)
    return flow_loss(warped, target), flow_loss(refined, target)


def holdout_flow_loss(params, layout_model, episodes: list[Episode]) -> float:
    total = 0.0
    for ep in episodes:
        masks = np.stack([box_pixel_masks(b, ep.frames.shape[1]) for b in ep.layouts])
        descs = teacher_forced_states(layout_model, ep)
        fl, _ = _episode_frame_batch(params, ep, masks, descs)
        total += float(fl.data)
    return total / len(episodes)


def video_l1(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean per-pixel L1 over generated frames (index 0 is given)."""
    return float(np.mean(np.abs(pred[1:] - gt[1:])))


def copy_baseline_l1(gt: np.ndarray) -> float:
    """Error of repeating the given first frame for the whole video."""
    return float(np.mean(np.abs(gt[None, 0] - gt[1:])))


def holdout_frame_metrics(params, layout_model, episodes: list[Episode]) -> tuple[float, float]:
    """(synthesized L1, copy-first-frame L1) on held-out episodes."""
    synth_total = 0.0
    copy_total = 0.0
    for ep in episodes:
        gt = ep.frames.astype(np.float64) / 255.0
        boxes, descs = rollout(layout_model, ep.graph, ep.layouts[0])
        pred = synthesize_frames(params, boxes, descs, gt[0])
        synth_total += video_l1(pred, gt)
        copy_total += copy_baseline_l1(gt)
    return synth_total / len(episodes), copy_total / len(episodes)


def train_fgf(config: TrainConfig, data_dir, layout_model, *, log_path=None):
    """Frame-stage training on ground-truth boxes with descriptors from
    the frozen layout model; returns (params, report, log rows)."""
    episodes, meta = import_dataset(data_dir, load_frames=True)
    train_eps, holdout_eps = split_dataset(episodes, config.holdout)
    train_eps = train_eps[:config.fgf_episodes]
    resolution = meta["resolution"]
    rng = np.random.default_rng(config.seed)
    params = init_frame_params(rng, desc_dim=config.embed_dim,
                               feat_channels=config.feat_channels,
                               hidden=config.conv_channels)
    flow_init = holdout_flow_loss(params, layout_model, holdout_eps)
    cached = []
    for ep in train_eps:
        masks = np.stack([box_pixel_masks(b, resolution) for b in ep.layouts])
        descs = teacher_forced_states(layout_model, ep)
        cached.append((ep, masks, descs))
    opt = Adam(params, lr=config.lr, betas=(config.beta1, config.beta2))
    opt.zero_grad()
    order_rng = np.random.default_rng(config.seed)
    log_rows = []
    step = 0
    for epoch in range(config.fgf_epochs):
        order = order_rng.permutation(len(cached))
        pending = 0
        for pos, idx in enumerate(order):
            ep, masks, descs = cached[idx]
            fl, rl = _episode_frame_batch(params, ep, masks, descs)
            loss = multiply(
                multiply(fl, config.lambda_flow) + multiply(rl, config.lambda_rec),
                1.0 / config.batch_size)
            backward(loss)
            log_rows.append((step, epoch, float(loss.data) * config.batch_size))
            step += 1
            pending += 1
            if pending == config.batch_size or pos == len(order) - 1:
                opt.step()
                opt.zero_grad()
                pending = 0
    flow_final = holdout_flow_loss(params, layout_model, holdout_eps)
    pixel_l1, copy_l1 = holdout_frame_metrics(params, layout_model, holdout_eps)
    report = MetricReport(pixel_l1=pixel_l1, copy_l1=copy_l1,
                          flow_loss_init=flow_init, flow_loss_final=flow_final)
    if log_path is not None:
        write_loss_log(log_path, log_rows)
    return params, report, log_rows


# ---------------------------------------------------------------------------
# timing and composition experiments
# ---------------------------------------------------------------------------

def layout_fn_for(model):
    """Adapt a layout predictor to a (graph, boxes0) -> (T, n, 4) function."""
    def fn(graph: ActionGraph, boxes0: np.ndarray) -> np.ndarray:
        boxes, _ = rollout(model, graph, boxes0)
        return boxes
    return fn


def gt_layout_fn(graph: ActionGraph, boxes0: np.ndarray) -> np.ndarray:
    return execute_semantics(graph, boxes0)


def motion_onset(boxes: np.ndarray, subject: int,
                 threshold: float = ONSET_THRESHOLD) -> int:
    """First frame where the subject's displacement from its initial
    center exceeds the threshold; T if it never does."""
    deltas = np.linalg.norm(boxes[:, subject, :2] - boxes[0, subject, :2], axis=-1)
    hits = np.nonzero(deltas > threshold)[0]
    return int(hits[0]) if hits.size else len(boxes)


def eval_timing(layout_fn, n_pairs: int = 100, seed: int = 0, T: int = 16) -> float:
    """Fraction of shifted-window pairs whose earlier program also shows
    the earlier motion onset (strictly)."""
    correct = 0
    for k in range(n_pairs):
        early, late, boxes0, subject = sample_timing_pair(seed * 1_000_003 + k, T=T)
        onset_early = motion_onset(layout_fn(early, boxes0), subject)
        onset_late = motion_onset(layout_fn(late, boxes0), subject)
        if onset_early < onset_late:
            correct += 1
    return correct / n_pairs


def eval_composition(layout_fn, kind: str, n_episodes: int = 50, seed: int = 0,
                     T: int = 16, tol: float = 0.05) -> float:
    """Success rate of zero-shot composed programs under the geometric judge.

    swap: both final centers within ``tol`` of the other's initial
    center. huddle: every cone's final center within ``tol`` of its
    target's center.
    """
    if kind not in ("swap", "huddle"):
        raise ValueError(f"kind must be swap or huddle, got {kind!r}")
    wins = 0
    for k in range(n_episodes):
        s = seed * 2_000_003 + k
        if kind == "swap":
            graph, boxes0, (i, j) = sample_swap_scene(s, T=T)
            boxes = layout_fn(graph, boxes0)
            ok = (np.linalg.norm(boxes[-1, i, :2] - boxes0[j, :2]) <= tol
                  and np.linalg.norm(boxes[-1, j, :2] - boxes0[i, :2]) <= tol)
        else:
            graph, boxes0, pairs = sample_huddle_scene(s, T=T)
            boxes = layout_fn(graph, boxes0)
            ok = all(np.linalg.norm(boxes[-1, c, :2] - boxes0[t, :2]) <= tol
                     for c, t in pairs)
        wins += bool(ok)
    return wins / n_episodes
