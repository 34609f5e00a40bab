"""Batch entry points: solve offsets, extract features, train, predict, serve.

All subcommands are deterministic given identical inputs, flags and seeds.
A JSON config file (--config) may supply any long flag's value; explicit
command-line flags win. Exit codes: 2 for usage errors (argparse), 1 for
runtime/I-O failures, 0 on success.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analytics, encode, features, gridmap, media, metrics, model, qpsolver
from .service import ServiceConfig, serve_forever

_FAMILIES = (
    "frame",
    "saliency",
    "segmentation",
    "flow",
    "quality_metrics",
    "highpass",
    "embeddings",
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roikit", description=__doc__)
    parser.add_argument("--config", type=Path, help="JSON file of default flag values")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-qp", help="importance maps -> bitrate-neutral DQP1 sidecar")
    p.add_argument("--map", dest="maps", type=Path, action="append",
                   help="PGM importance map (repeat for per-frame maps)")
    p.add_argument("--video-width", type=int)
    p.add_argument("--video-height", type=int)
    p.add_argument("--frames", type=int, default=0,
                   help="replicate a single map over this many frames")
    p.add_argument("--out", type=Path)
    p.add_argument("--span", type=float, default=20.0)
    p.add_argument("--clamp", type=float, default=10.0)
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("metrics", help="per-macroblock PSNR/SSIM/VIF tensors")
    p.add_argument("--ref", type=Path)
    p.add_argument("--dist", type=Path)
    p.add_argument("--out-dir", type=Path)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("features", help="build model input stacks from a video")
    _add_feature_flags(p)
    p.add_argument("--out-dir", type=Path)

    p = sub.add_parser("train", help="train the importance model on stack/target pairs")
    p.add_argument("--data-dir", type=Path,
                   help="directory of NAME.ft01 stacks with NAME.pgm targets")
    p.add_argument("--out", type=Path)
    p.add_argument("--epochs", type=int, default=70)
    p.add_argument("--iterations", type=int, default=499)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", type=Path, help="per-iteration loss log file")

    p = sub.add_parser("predict", help="predict importance maps and a DQP sidecar")
    _add_feature_flags(p)
    p.add_argument("--stacks-dir", type=Path,
                   help="use prebuilt stacks instead of extracting features")
    p.add_argument("--weights", type=Path)
    p.add_argument("--out-map-dir", type=Path)
    p.add_argument("--out-dqp", type=Path)
    p.add_argument("--span", type=float, default=20.0)
    p.add_argument("--clamp", type=float, default=10.0)
    p.add_argument("--tolerance", type=float, default=1e-6)

    p = sub.add_parser("mock-encode", help="simulate an encode under the rate model")
    p.add_argument("--video", type=Path)
    p.add_argument("--dqp", type=Path)
    p.add_argument("--target-bitrate", type=float, default=300.0)
    p.add_argument("--qp-base", type=int, default=26)

    p = sub.add_parser("analyze", help="summarize 2AFC vote tallies")
    p.add_argument("--tallies", type=Path)
    p.add_argument("--wilson", action="store_true")

    p = sub.add_parser("serve", help="run the annotation service")
    p.add_argument("--videos-dir", type=Path)
    p.add_argument("--store-dir", type=Path)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--map-scale", type=float, default=0.6)
    p.add_argument("--target-bitrate", type=float, default=300.0)
    p.add_argument("--qp-base", type=int, default=26)
    p.add_argument("--encoder-template")
    p.add_argument("--frontend-dir", type=Path)
    p.add_argument("--shuffle-seed", type=int)
    return parser


def _add_feature_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--video", type=Path, help="the (distorted) video to featurize")
    p.add_argument("--ref", type=Path, help="pristine reference for quality metrics")
    p.add_argument("--select", default=",".join(_FAMILIES),
                   help=f"comma list from {{{','.join(_FAMILIES)}}}")
    p.add_argument("--saliency-dir", type=Path)
    p.add_argument("--segmentation-dir", type=Path)
    p.add_argument("--embeddings-dir", type=Path)
    p.add_argument("--embed-channels", type=int, default=features.DEFAULT_EMBED_CHANNELS)
    p.add_argument("--flow-radius", type=int, default=features.DEFAULT_FLOW_RADIUS)


def _selection(spec: str) -> features.FeatureSelection:
    names = [s.strip() for s in spec.split(",") if s.strip()]
    unknown = set(names) - set(_FAMILIES)
    if unknown:
        raise SystemExit(f"unknown feature families: {', '.join(sorted(unknown))}")
    return features.FeatureSelection.only(*names)


def _load_video(path: Path) -> media.VideoSequence:
    with open(path, "rb") as f:
        return media.load_y4m(f)


def _external_frames(dir_path: Path | None, n_frames: int, what: str):
    if dir_path is None:
        return None
    paths = sorted(Path(dir_path).glob("*.ft01"))
    if len(paths) == 1:
        return [media.read_ft(p.read_bytes()) for p in paths] * n_frames
    if len(paths) != n_frames:
        raise SystemExit(f"{what}: found {len(paths)} tensors for {n_frames} frames")
    return [media.read_ft(p.read_bytes()) for p in paths]


def build_stacks(args) -> list[features.FeatureStack]:
    """The per-frame feature pipeline shared by `features` and `predict`."""
    sel = _selection(args.select)
    if args.video is None:
        raise SystemExit("--video is required unless --stacks-dir is given")
    video = _load_video(args.video)
    n = len(video)
    rows, cols = gridmap.grid_shape(video.width, video.height)
    ref = _load_video(args.ref) if args.ref else None
    if sel.quality_metrics and ref is None:
        raise SystemExit("quality_metrics features need --ref")
    if ref is not None and len(ref) != n:
        raise SystemExit("--ref frame count differs from --video")

    saliency = _external_frames(args.saliency_dir, n, "saliency")
    segmentation = _external_frames(args.segmentation_dir, n, "segmentation")
    embeddings = _external_frames(args.embeddings_dir, n, "embeddings")

    stacks = []
    for i in range(n):
        cur = video.frames[i]
        kw = {}
        if sel.frame:
            kw["frame"] = features.full_res_channels(cur)
        if sel.saliency:
            kw["saliency"] = saliency[i] if saliency else None
        if sel.segmentation:
            kw["segmentation"] = segmentation[i] if segmentation else None
        if sel.embeddings:
            kw["embeddings"] = embeddings[i] if embeddings else None
        if sel.flow:
            prev = video.frames[max(0, i - 1)]
            kw["flow"] = features.block_flow(prev, cur, args.flow_radius)
        if sel.quality_metrics:
            kw["psnr"] = metrics.mb_psnr(ref.frames[i], cur)
            kw["ssim"] = metrics.mb_ssim(ref.frames[i], cur)
            kw["vif"] = metrics.block_vif(ref.frames[i], cur)
        if sel.highpass:
            kw["spatial_hp"] = features.spatial_highpass(cur)
            prev = video.frames[max(0, i - 1)]
            nxt = video.frames[min(n - 1, i + 1)]
            kw["temporal_hp"] = features.temporal_highpass(prev, cur, nxt)
        stacks.append(
            features.assemble(
                rows, cols, sel,
                embed_channels=args.embed_channels,
                video_width=video.width, video_height=video.height,
                **kw,
            )
        )
    return stacks


def _solve_one(payload):
    values, span, clamp, tolerance = payload
    cfg = qpsolver.SolverConfig(span=span, clamp=clamp, tolerance=tolerance)
    grid, report = qpsolver.solve_dqp(values, cfg)
    return grid, report


def cmd_solve_qp(args) -> int:
    maps = [media.load_pgm(p.read_bytes()) for p in args.maps]
    pooled = [
        gridmap.pool_to_grid(m, args.video_width, args.video_height) for m in maps
    ]
    if len(pooled) == 1 and args.frames > 1:
        pooled = pooled * args.frames
    payloads = [(v, args.span, args.clamp, args.tolerance) for v in pooled]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            solved = list(pool.map(_solve_one, payloads))
    else:
        solved = [_solve_one(p) for p in payloads]
    grids = np.stack([g for g, _ in solved])
    with open(args.out, "wb") as f:
        media.write_dqp(grids, f)
    mean_rounded = float(np.mean([r.rounded_ratio for _, r in solved]))
    print(
        json.dumps(
            {
                "frames": len(solved),
                "offset": [r.offset for _, r in solved],
                "real_ratio": [r.real_ratio for _, r in solved],
                "rounded_ratio": mean_rounded,
            }
        )
    )
    return 0


def _metrics_one(payload):
    ref_frame, dist_frame = payload
    return (
        metrics.mb_psnr(ref_frame, dist_frame),
        metrics.mb_ssim(ref_frame, dist_frame),
        metrics.block_vif(ref_frame, dist_frame),
    )


def cmd_metrics(args) -> int:
    ref = _load_video(args.ref)
    dist = _load_video(args.dist)
    if len(ref) != len(dist):
        raise SystemExit("frame count mismatch between --ref and --dist")
    args.out_dir.mkdir(parents=True, exist_ok=True)
    pairs = list(zip(ref.frames, dist.frames))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_metrics_one, pairs))
    else:
        results = [_metrics_one(p) for p in pairs]
    for i, (psnr, ssim, vif) in enumerate(results):
        for name, grid in (("psnr", psnr), ("ssim", ssim), ("vif", vif)):
            with open(args.out_dir / f"{name}_{i:05d}.ft01", "wb") as f:
                media.write_ft(grid[:, :, None], f)
    print(json.dumps({"frames": len(results), "out_dir": str(args.out_dir)}))
    return 0


def cmd_features(args) -> int:
    stacks = build_stacks(args)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for i, stack in enumerate(stacks):
        with open(args.out_dir / f"stack_{i:05d}.ft01", "wb") as f:
            media.write_ft(stack.data, f)
    layout = [[name, count] for name, count in stacks[0].channels]
    (args.out_dir / "channels.json").write_text(json.dumps(layout))
    print(json.dumps({"frames": len(stacks), "channels": stacks[0].channel_count}))
    return 0


def cmd_train(args) -> int:
    stacks = sorted(args.data_dir.glob("*.ft01"))
    dataset = []
    for sp in stacks:
        target = sp.with_suffix(".pgm")
        if not target.exists():
            raise SystemExit(f"no target map for {sp.name}")
        x = media.read_ft(sp.read_bytes()).astype(np.float64)
        rows, cols = x.shape[:2]
        dense = media.load_pgm(target.read_bytes())
        if dense.shape == (rows, cols):
            pooled = dense.astype(np.float64)
        else:
            # dense annotation map: pool over the grid of 16px macroblocks
            pooled = gridmap.pool_to_grid(dense, cols * 16, rows * 16)
        dataset.append((x, gridmap.quantize_classes(pooled)))
    if not dataset:
        raise SystemExit(f"no .ft01 stacks in {args.data_dir}")
    cfg = model.TrainConfig(
        epochs=args.epochs,
        iterations_per_epoch=args.iterations,
        learning_rate=args.lr,
        dropout_rate=args.dropout,
        seed=args.seed,
    )
    log_file = open(args.log, "w") if args.log else None
    losses = []

    def log(epoch, iteration, loss):
        losses.append(loss)
        if log_file:
            log_file.write(f"{epoch} {iteration} {loss:.6f}\n")
        if iteration == cfg.iterations_per_epoch - 1:
            chunk = losses[-cfg.iterations_per_epoch :]
            print(f"epoch {epoch}: mean loss {float(np.mean(chunk)):.4f}")

    try:
        weights = model.train(dataset, cfg, log=log)
    finally:
        if log_file:
            log_file.close()
    with open(args.out, "wb") as f:
        model.save_weights(weights, f)
    print(json.dumps({"out": str(args.out), "parameters": weights.trainable_count()}))
    return 0


def cmd_predict(args) -> int:
    weights = model.load_weights(args.weights.read_bytes())
    if args.stacks_dir:
        stacks = [
            media.read_ft(p.read_bytes()).astype(np.float64)
            for p in sorted(args.stacks_dir.glob("stack_*.ft01"))
        ]
        if not stacks:
            raise SystemExit(f"no stacks in {args.stacks_dir}")
    else:
        stacks = [s.data for s in build_stacks(args)]
    args.out_map_dir.mkdir(parents=True, exist_ok=True)
    cfg = qpsolver.SolverConfig(
        span=args.span, clamp=args.clamp, tolerance=args.tolerance
    )
    grids = []
    ratios = []
    for i, x in enumerate(stacks):
        importance = model.predict_map(weights, x)
        with open(args.out_map_dir / f"pred_{i:05d}.pgm", "wb") as f:
            media.save_pgm(importance, f)
        grid, report = qpsolver.solve_dqp(importance.astype(np.float64), cfg)
        grids.append(grid)
        ratios.append(report.rounded_ratio)
    if args.out_dqp:
        with open(args.out_dqp, "wb") as f:
            media.write_dqp(np.stack(grids), f)
    print(json.dumps({"frames": len(stacks), "rounded_ratio": float(np.mean(ratios))}))
    return 0


def cmd_mock_encode(args) -> int:
    video = _load_video(args.video)
    dqp = media.read_dqp(args.dqp.read_bytes())
    job = encode.EncodeJob(
        video=video,
        dqp=dqp,
        target_bitrate_kbps=args.target_bitrate,
        qp_base=args.qp_base,
    )
    report = encode.mock_encode(job)
    print(
        json.dumps(
            {
                "total_bits": report.total_bits,
                "ratio": report.ratio,
                "clamp_count": report.clamp_count,
                "frame_bits": list(report.frame_bits),
            }
        )
    )
    return 0


def cmd_analyze(args) -> int:
    rows = analytics.read_tally_file(args.tallies)
    total_a = total_b = 0
    for video_id, tally in rows:
        s = analytics.tally_summary(tally, wilson=args.wilson)
        pref = "unbounded" if s.preference is None else f"{s.preference:.4f}"
        print(
            f"{video_id} fraction={s.fraction:.4f} halfwidth={s.halfwidth:.4f} "
            f"preference={pref} n={s.n}"
        )
        total_a += tally.prefer_a
        total_b += tally.prefer_b
    if len(rows) > 1:
        s = analytics.tally_summary(analytics.VoteTally(total_a, total_b), wilson=args.wilson)
        pref = "unbounded" if s.preference is None else f"{s.preference:.4f}"
        print(
            f"TOTAL fraction={s.fraction:.4f} halfwidth={s.halfwidth:.4f} "
            f"preference={pref} n={s.n}"
        )
    return 0


def cmd_serve(args) -> int:
    cfg = ServiceConfig(
        videos_dir=args.videos_dir,
        store_dir=args.store_dir,
        map_scale=args.map_scale,
        target_bitrate_kbps=args.target_bitrate,
        qp_base=args.qp_base,
        encoder_template=args.encoder_template,
        shuffle_seed=args.shuffle_seed,
    )
    serve_forever(cfg, args.host, args.port, static_dir=args.frontend_dir)
    return 0


_COMMANDS = {
    "solve-qp": cmd_solve_qp,
    "metrics": cmd_metrics,
    "features": cmd_features,
    "train": cmd_train,
    "predict": cmd_predict,
    "mock-encode": cmd_mock_encode,
    "analyze": cmd_analyze,
    "serve": cmd_serve,
}


# dests that must arrive as Path objects when supplied via --config
_PATH_DESTS = {
    "maps", "out", "ref", "dist", "out_dir", "data_dir", "log", "stacks_dir",
    "weights", "out_map_dir", "out_dqp", "video", "dqp", "tallies",
    "videos_dir", "store_dir", "frontend_dir", "saliency_dir",
    "segmentation_dir", "embeddings_dir",
}


def _apply_config(args: argparse.Namespace, config_path: Path, argv: list[str]) -> None:
    overrides = json.loads(Path(config_path).read_text())
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if f"--{key}" in argv or f"--{dest.replace('_', '-')}" in argv:
            continue  # explicit flags win
        if hasattr(args, dest):
            if dest in _PATH_DESTS and value is not None:
                value = (
                    [Path(v) for v in value] if isinstance(value, list) else Path(value)
                )
            setattr(args, dest, value)


# flags a subcommand cannot run without; enforced after the config merge so a
# config file may supply any of them
_REQUIRED = {
    "solve-qp": ("maps", "video_width", "video_height", "out"),
    "metrics": ("ref", "dist", "out_dir"),
    "features": ("out_dir",),
    "train": ("data_dir", "out"),
    "predict": ("weights", "out_map_dir"),
    "mock-encode": ("video", "dqp"),
    "analyze": ("tallies",),
    "serve": ("videos_dir", "store_dir"),
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.config:
        _apply_config(args, args.config, argv)
    missing = [
        f"--{d.replace('_', '-')}"
        for d in _REQUIRED.get(args.command, ())
        if getattr(args, d, None) in (None, [])
    ]
    if missing:
        parser.error(f"{args.command}: missing {', '.join(missing)}")
    try:
        return _COMMANDS[args.command](args)
    except (OSError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
