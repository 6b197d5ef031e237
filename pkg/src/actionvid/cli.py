"""Command-line front end binding the pipeline into reproducible runs.

Commands: gen-data, train-lgf, train-fgf, generate, eval, compare.
Every run writes a manifest (resolved arguments, seed, content hashes of
the inputs) next to its outputs; output locations are never silently
overwritten (pass --force). Exit codes: 0 success, 1 runtime error,
2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, ppm
from .checkpoint import load_checkpoint, load_kv, save_checkpoint, save_kv
from .frames import generate_video, init_frame_params
from .graph import load_graph
from .layout import rollout
from .train import (MODEL_KINDS, MetricReport, TrainConfig, build_layout_model,
                    eval_composition, eval_timing, evaluate_rollouts,
                    holdout_frame_metrics, layout_fn_for, split_dataset,
                    train_fgf, train_lgf)
from .world import (export_dataset, generate_corpus, import_dataset,
                    load_layouts, save_layouts)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(path: Path, command: str, args: dict, inputs: list[Path]) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "args": {k: str(v) for k, v in sorted(args.items())},
        "inputs": {str(p): _sha256(p) for p in inputs if p is not None and p.exists()},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _refuse_existing(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise FileExistsError(f"{path} already exists (use --force to overwrite)")


def _load_config(path: str | None, **overrides) -> TrainConfig:
    config = TrainConfig.from_file(path) if path else TrainConfig()
    for key, value in overrides.items():
        if value is not None:
            setattr(config, key, value)
    return config


def _save_layout_ckpt(path: Path, model, config: TrainConfig, vocab_hash: str) -> None:
    save_checkpoint(path, model.params)
    save_kv(path.with_suffix(path.suffix + ".cfg"), {
        "kind": model.kind, "embed_dim": config.embed_dim, "rounds": config.rounds,
        "aggregation": config.aggregation, "vocab_hash": vocab_hash,
    })


def load_layout_ckpt(path: Path, vocabulary):
    cfg = load_kv(Path(str(path) + ".cfg"))
    expected = cfg.get("vocab_hash")
    actual = vocabulary.content_hash()
    if expected and expected != actual:
        raise ValueError(
            f"{path}: checkpoint was trained for a different vocabulary "
            f"({expected[:12]} vs {actual[:12]})")
    config = TrainConfig(model=cfg["kind"], embed_dim=int(cfg["embed_dim"]),
                         rounds=int(cfg["rounds"]), aggregation=cfg["aggregation"])
    arrays = load_checkpoint(path)
    return build_layout_model(cfg["kind"], vocabulary, config, param_arrays=arrays)


def _save_frame_ckpt(path: Path, params, config: TrainConfig) -> None:
    save_checkpoint(path, params)
    save_kv(path.with_suffix(path.suffix + ".cfg"), {
        "embed_dim": config.embed_dim, "feat_channels": config.feat_channels,
        "conv_channels": config.conv_channels,
    })


def load_frame_ckpt(path: Path):
    cfg = load_kv(Path(str(path) + ".cfg"))
    rng = np.random.default_rng(0)
    params = init_frame_params(rng, desc_dim=int(cfg["embed_dim"]),
                               feat_channels=int(cfg["feat_channels"]),
                               hidden=int(cfg["conv_channels"]))
    arrays = load_checkpoint(path)
    for name, tensor in params.items():
        if name not in arrays:
            raise ValueError(f"{path}: missing tensor {name!r}")
        tensor.data = arrays[name]
    return params


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    out = Path(args.out)
    episodes = generate_corpus(args.seed, args.episodes, T=args.frames,
                               resolution=args.resolution, workers=args.workers)
    export_dataset(episodes, out, base_seed=args.seed, force=args.force)
    write_manifest(out / "manifest.json", "gen-data", vars(args), [])
    print(f"wrote {len(episodes)} episodes to {out}")
    return 0


def cmd_train_lgf(args) -> int:
    config = _load_config(args.config, model=args.model, seed=args.seed,
                          epochs=args.epochs)
    out = Path(args.out)
    _refuse_existing(out, args.force)
    out.parent.mkdir(parents=True, exist_ok=True)
    model, report, _ = train_lgf(config, args.data,
                                 log_path=Path(str(out) + ".loss.csv"))
    episodes, meta = import_dataset(args.data, load_frames=False)
    _save_layout_ckpt(out, model, config, episodes[0].graph.vocabulary.content_hash())
    report.save(Path(str(out) + ".report"))
    write_manifest(Path(str(out) + ".manifest.json"), "train-lgf", vars(args),
                   [Path(args.data) / "meta"])
    print(f"held-out mIOU {report.miou:.4f}; checkpoint at {out}")
    return 0


def cmd_train_fgf(args) -> int:
    config = _load_config(args.config, seed=args.seed)
    out = Path(args.out)
    _refuse_existing(out, args.force)
    out.parent.mkdir(parents=True, exist_ok=True)
    episodes, _ = import_dataset(args.data, load_frames=False)
    layout_model = load_layout_ckpt(Path(args.lgf_ckpt),
                                    episodes[0].graph.vocabulary)
    params, report, _ = train_fgf(config, args.data, layout_model,
                                  log_path=Path(str(out) + ".loss.csv"))
    _save_frame_ckpt(out, params, config)
    report.save(Path(str(out) + ".report"))
    write_manifest(Path(str(out) + ".manifest.json"), "train-fgf", vars(args),
                   [Path(args.data) / "meta", Path(args.lgf_ckpt)])
    print(f"held-out pixel L1 {report.pixel_l1:.5f} "
          f"(copy baseline {report.copy_l1:.5f}); checkpoint at {out}")
    return 0


def cmd_generate(args) -> int:
    graph = load_graph(args.graph)
    if args.init_episode:
        epdir = Path(args.init_episode)
        first = ppm.read_ppm(epdir / "frames" / "000.ppm")
        boxes0 = load_layouts(epdir / "layouts")[0]
    else:
        if not (args.first_frame and args.first_layout):
            print("generate: need --init-episode or both --first-frame and "
                  "--first-layout", file=sys.stderr)
            return 2
        first = ppm.read_ppm(args.first_frame)
        boxes0 = load_layouts(args.first_layout)[0]
    if len(boxes0) != graph.n_objects:
        raise ValueError(
            f"first layout has {len(boxes0)} boxes, graph has {graph.n_objects} objects")
    layout_model = load_layout_ckpt(Path(args.lgf_ckpt), graph.vocabulary)
    frame_params = load_frame_ckpt(Path(args.fgf_ckpt))
    out = Path(args.out)
    _refuse_existing(out / "frames", args.force)
    frames = generate_video(graph, first.astype(np.float64) / 255.0, boxes0,
                            layout_model, frame_params)
    frames_u8 = np.clip(np.round(frames * 255.0), 0, 255).astype(np.uint8)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    for t in range(frames_u8.shape[0]):
        ppm.write_ppm(out / "frames" / f"{t:03d}.ppm", frames_u8[t])
    boxes, _ = rollout(layout_model, graph, boxes0)
    save_layouts(out / "layouts", boxes)
    if args.raw_stream:
        ppm.write_raw_stream(out / "video.rgb", frames_u8)
    write_manifest(out / "manifest.json", "generate", vars(args),
                   [Path(args.graph), Path(args.lgf_ckpt), Path(args.fgf_ckpt)])
    print(f"wrote {frames_u8.shape[0]} frames to {out / 'frames'}")
    return 0


def _eval_one(model_kind, ckpt, fgf_ckpt, data_dir, holdout, seed, timing,
              composition, workers) -> MetricReport:
    episodes, _ = import_dataset(data_dir, load_frames=fgf_ckpt is not None)
    if holdout is None:
        holdout = min(50, max(1, len(episodes) // 5))
    _, holdout_eps = split_dataset(episodes, holdout)
    vocab = episodes[0].graph.vocabulary
    config = TrainConfig(model=model_kind, seed=seed)
    if model_kind in ("gcn", "rnn"):
        if ckpt is None:
            raise ValueError(f"model {model_kind!r} needs --ckpt")
        model = load_layout_ckpt(Path(ckpt), vocab)
    else:
        model = build_layout_model(model_kind, vocab, config)
    report = evaluate_rollouts(model, holdout_eps, workers=workers)
    if fgf_ckpt is not None:
        frame_params = load_frame_ckpt(Path(fgf_ckpt))
        report.pixel_l1, report.copy_l1 = holdout_frame_metrics(
            frame_params, model, holdout_eps)
    if timing:
        report.timing_accuracy = eval_timing(layout_fn_for(model), seed=seed)
    if composition:
        report.swap_success = eval_composition(layout_fn_for(model), "swap", seed=seed)
        report.huddle_success = eval_composition(layout_fn_for(model), "huddle", seed=seed)
    return report


def cmd_eval(args) -> int:
    report = _eval_one(args.model, args.ckpt, args.fgf_ckpt, args.data,
                       args.holdout, args.seed, args.timing, args.composition,
                       args.workers)
    report.save(Path(args.report))
    write_manifest(Path(str(args.report) + ".manifest.json"), "eval", vars(args),
                   [Path(args.data) / "meta"] +
                   [Path(p) for p in (args.ckpt, args.fgf_ckpt) if p])
    print(report.to_kv_text(), end="")
    return 0


def cmd_compare(args) -> int:
    kinds = [k.strip() for k in args.models.split(",") if k.strip()]
    for kind in kinds:
        if kind not in MODEL_KINDS:
            print(f"compare: unknown model kind {kind!r}", file=sys.stderr)
            return 2
    ckpts = {}
    for spec_arg in args.ckpt or []:
        kind, sep, path = spec_arg.partition("=")
        if not sep:
            print(f"compare: --ckpt expects KIND=PATH, got {spec_arg!r}", file=sys.stderr)
            return 2
        ckpts[kind] = path
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for kind in kinds:
        report = _eval_one(kind, ckpts.get(kind), None, args.data, args.holdout,
                           args.seed, False, False, args.workers)
        report.save(out / f"report_{kind}")
        rows.append((kind, report))
    rows.sort(key=lambda kv: kv[1].miou, reverse=True)
    print(f"{'model':<8} {'mIOU':>8} {'R@0.3':>8} {'R@0.5':>8}")
    for kind, report in rows:
        print(f"{kind:<8} {report.miou:>8.4f} {report.r_at_03:>8.4f} {report.r_at_05:>8.4f}")
    with open(out / "comparison.json", "w", encoding="utf-8") as fh:
        json.dump({kind: report.as_dict() for kind, report in rows}, fh,
                  indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(out / "manifest.json", "compare", vars(args),
                   [Path(args.data) / "meta"] + [Path(p) for p in ckpts.values()])
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="actionvid",
        description="Timed action graphs to layouts to video on a procedural 2D world.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="sample a dataset of synthetic episodes")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train-lgf", help="train a layout predictor")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--model", choices=("gcn", "rnn"))
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_train_lgf)

    p = sub.add_parser("train-fgf", help="train the frame synthesizer")
    p.add_argument("--data", required=True)
    p.add_argument("--lgf-ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_train_fgf)

    p = sub.add_parser("generate", help="synthesize a video for an AG file")
    p.add_argument("--graph", required=True)
    p.add_argument("--lgf-ckpt", required=True)
    p.add_argument("--fgf-ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--init-episode", help="episode dir supplying first frame and layout")
    p.add_argument("--first-frame", help="PPM file with the first frame")
    p.add_argument("--first-layout", help="layouts file; row 0 is the first layout")
    p.add_argument("--raw-stream", action="store_true",
                   help="also write a single headered RGB stream")
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("eval", help="evaluate a model on a dataset's held-out tail")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, choices=MODEL_KINDS)
    p.add_argument("--ckpt")
    p.add_argument("--fgf-ckpt")
    p.add_argument("--report", required=True)
    p.add_argument("--holdout", type=int, default=None,
                   help="held-out tail size (default: min(50, n/5))")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timing", action="store_true")
    p.add_argument("--composition", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("compare", help="evaluate several models side by side")
    p.add_argument("--data", required=True)
    p.add_argument("--models", required=True, help="comma-separated model kinds")
    p.add_argument("--ckpt", action="append", metavar="KIND=PATH")
    p.add_argument("--out", required=True)
    p.add_argument("--holdout", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileExistsError, FileNotFoundError, RuntimeError) as exc:
        print(f"actionvid {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
