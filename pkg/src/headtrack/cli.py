"""Command-line interface.

Exit codes: 0 success, 2 input error, 3 config error, 4 internal invariant
violation. Every command that writes an output also writes a JSON run
manifest alongside it for reproducibility.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, maps, motio, simulate
from .fusion import FusionConfig, FusionParams, forward, load_params, save_params
from .metrics import MetricsError, MotReport, aggregate, evaluate
from .motio import AnnotationError, FieldOrder
from .simulate import NoiseModel, ScenarioConfig, read_config
from .tracker import Detection, Mode, Tracker, TrackerConfig, TrackerError, outputs_to_records

EXIT_INPUT = 2
EXIT_CONFIG = 3
EXIT_INTERNAL = 4


class InputError(Exception):
    pass


class ConfigError(Exception):
    pass


def _write_manifest(out_path, command: str, args: argparse.Namespace) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "arguments": {k: str(v) for k, v in vars(args).items()
                      if k != "func" and v is not None},
    }
    Path(str(out_path) + ".manifest.json").write_text(json.dumps(manifest, indent=2))


def _read_records(path, order: FieldOrder):
    p = Path(path)
    if not p.exists():
        raise InputError(f"no such file: {p}")
    try:
        return motio.read_annotation_file(p, order)
    except AnnotationError as e:
        raise InputError(f"{p}: {e}") from None


def _read_kv(path) -> dict[str, str]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"no such config file: {p}")
    kv = {}
    for line in p.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{p}: bad config line {line!r}")
        k, v = line.split("=", 1)
        kv[k.strip()] = v.strip()
    return kv


def _tracker_config(args) -> TrackerConfig:
    kwargs = {}
    if args.config:
        kv = _read_kv(args.config)
        casts = {"high_score_thresh": float, "low_score_thresh": float,
                 "iou_gate": float, "max_age": int, "n_init": int,
                 "mode": str, "embedding_gate": float}
        for k, v in kv.items():
            if k not in casts:
                raise ConfigError(f"unknown tracker config key {k!r}")
            kwargs[k] = casts[k](v)
    if args.mode:
        kwargs["mode"] = args.mode
    try:
        return TrackerConfig(**kwargs)
    except (TrackerError, ValueError) as e:
        raise ConfigError(str(e)) from None


def cmd_track(args) -> int:
    cfg = _tracker_config(args)
    records = _read_records(args.dets, FieldOrder(args.order))
    frames: dict[int, list[Detection]] = {}
    for r in records:
        frames.setdefault(r.frame, []).append(Detection(r.bbox, r.confidence))
    tracker = Tracker(cfg)
    outputs = []
    for f in sorted(frames):
        outputs.extend(tracker.step(f, frames[f]))
    motio.write_annotation_file(args.out, outputs_to_records(outputs),
                                FieldOrder(args.order))
    _write_manifest(args.out, "track", args)
    return 0


def _eval_pair(gt_path, pred_path, order, thr) -> tuple:
    gt = _read_records(gt_path, order)
    pred = _read_records(pred_path, order)
    return gt, pred


def cmd_evaluate(args) -> int:
    order = FieldOrder(args.order)
    gt_p, pred_p = Path(args.gt), Path(args.pred)
    if gt_p.is_dir() != pred_p.is_dir():
        raise InputError("--gt and --pred must both be files or both directories")
    if gt_p.is_dir():
        names = sorted(p.name for p in gt_p.glob("*.txt"))
        if not names:
            raise InputError(f"no .txt sequences in {gt_p}")
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            pairs = list(pool.map(
                lambda n: _eval_pair(gt_p / n, pred_p / n, order, args.iou), names))
        report = aggregate(pairs, args.iou)
        rows = [(n, evaluate(gt, pred, args.iou)) for n, (gt, pred) in zip(names, pairs)]
        rows.append(("OVERALL", report))
    else:
        gt, pred = _eval_pair(gt_p, pred_p, order, args.iou)
        try:
            report = evaluate(gt, pred, args.iou)
        except MetricsError as e:
            raise InputError(str(e)) from None
        rows = [(gt_p.stem, report)]
    text = "\n".join([MotReport.header()] + [r.format_row(n) for n, r in rows]) + "\n"
    payload = json.dumps({n: r.as_dict() for n, r in rows}, indent=2)
    if args.json:
        print(payload)
    else:
        print(text, end="")
    if args.out:
        Path(args.out).write_text(text)
        Path(str(args.out) + ".json").write_text(payload)
        _write_manifest(args.out, "evaluate", args)
    return 0


def cmd_stats(args) -> int:
    records = _read_records(args.ann, FieldOrder(args.order))
    if not records:
        raise InputError(f"{args.ann}: no annotation records")
    frames = args.frames or max(r.frame for r in records)
    try:
        stats = motio.compute_stats(records, frames)
    except AnnotationError as e:
        raise InputError(str(e)) from None
    payload = {
        "boxes": stats.boxes,
        "frames": stats.frames,
        "density": round(stats.density, 2),
        "tracks": stats.tracks,
        "ratio_mass_0.8_1.4": round(stats.ratio_mass_in(0.8, 1.4), 4),
        "ratio_histogram": {f"{k / 10:.1f}": v for k, v in stats.ratio_histogram.items()},
    }
    if args.json:
        print(json.dumps(payload, indent=2))
    else:
        print(f"boxes    {stats.boxes}")
        print(f"frames   {stats.frames}")
        print(f"density  {stats.density:.2f}")
        print(f"tracks   {stats.tracks}")
        print(f"ratio mass in [0.8, 1.4]: {stats.ratio_mass_in(0.8, 1.4):.4f}")
        print("ratio histogram (bin width 0.1):")
        for k, v in stats.ratio_histogram.items():
            print(f"  [{k / 10:.1f}, {k / 10 + 0.1:.1f}) {v}")
    return 0


def cmd_gen_scenario(args) -> int:
    try:
        scen = read_config(args.config, ScenarioConfig) if args.config else ScenarioConfig()
        noise = read_config(args.noise, NoiseModel) if args.noise else NoiseModel()
        if args.seed is not None:
            scen = dataclasses.replace(scen, seed=args.seed)
            noise = dataclasses.replace(noise, seed=args.seed)
    except (simulate.SimError, OSError, ValueError) as e:
        raise ConfigError(str(e)) from None
    gt, meta = simulate.simulate(scen)
    motio.write_annotation_file(args.out_gt, gt, FieldOrder(args.order))
    motio.write_sequence_meta(str(args.out_gt) + ".meta", meta)
    _write_manifest(args.out_gt, "gen-scenario", args)
    if args.out_dets:
        dets = simulate.corrupt(gt, noise)
        det_records = []
        for frame in sorted(dets):
            for i, d in enumerate(dets[frame], start=1):
                det_records.append(motio.AnnotationRecord(
                    frame, i, d.bbox, confidence=d.score))
        motio.write_annotation_file(args.out_dets, det_records, FieldOrder(args.order))
        _write_manifest(args.out_dets, "gen-scenario", args)
    return 0


def _load_frame(path) -> maps.ImageFrame:
    path = Path(path)
    if path.suffix == ".bin":
        return maps.load_map(path)
    try:
        from PIL import Image
    except ImportError:
        raise InputError("Pillow is required to read image files") from None
    arr = np.asarray(Image.open(path), dtype=np.float64) / 255.0
    return maps.ImageFrame(arr if arr.ndim == 3 else arr[:, :, None])


def cmd_gen_motion(args) -> int:
    frame_dir = Path(args.frames_dir)
    if not frame_dir.is_dir():
        raise InputError(f"no such directory: {frame_dir}")
    paths = sorted(p for p in frame_dir.iterdir()
                   if p.suffix in (".bin", ".png", ".jpg", ".jpeg"))
    if not paths:
        raise InputError(f"no frames in {frame_dir}")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prev = None
    for i, p in enumerate(paths, start=1):
        curr = _load_frame(p)
        if prev is None:
            diff = maps.ImageFrame(np.zeros((curr.height, curr.width)))
            flow_arr = np.zeros((curr.height, curr.width, 2))
        else:
            diff = maps.frame_difference(curr, prev)
            flow = maps.optical_flow(curr, prev)
            flow_arr = np.stack([flow.u, flow.v], axis=2)
        maps.save_map(out_dir / f"diff_{i:04d}.bin", diff.data)
        maps.save_map(out_dir / f"flow_{i:04d}.bin", flow_arr)
        prev = curr
    _write_manifest(out_dir / "motion", "gen-motion", args)
    return 0


def cmd_fuse_demo(args) -> int:
    stack_dir = Path(args.stack_dir)
    try:
        rgb = maps.load_map(stack_dir / "rgb.bin")
        diff = maps.load_map(stack_dir / "diff.bin")
        depth = maps.load_map(stack_dir / "depth.bin")
        density = maps.load_map(stack_dir / "density.bin")
    except maps.MapError as e:
        raise InputError(str(e)) from None
    # flow is a 2-channel (u, v) map, which ImageFrame does not model;
    # read the raw planes directly
    flow_path = stack_dir / "flow.bin"
    side = Path(str(flow_path) + ".json")
    if not flow_path.exists() or not side.exists():
        raise InputError(f"map file or sidecar missing: {flow_path}")
    meta = json.loads(side.read_text())
    h, w = meta["height"], meta["width"]
    if meta["channels"] != 2:
        raise InputError("flow.bin must be a 2-channel (u, v) map")
    flow_raw = np.frombuffer(flow_path.read_bytes(), dtype="<f4")
    if flow_raw.size != 2 * h * w:
        raise InputError("flow.bin payload does not match its sidecar")
    planes = flow_raw.reshape(2, h, w).astype(np.float64)
    stack = maps.SourceStack(rgb=rgb, diff=diff,
                             flow=maps.FlowField(planes[0], planes[1]),
                             depth=depth, density=density)
    if args.params:
        params = load_params(args.params)
    else:
        params = FusionParams(FusionConfig(seed=args.seed or 0))
    params.set_coefficients(alpha1=args.alpha1, beta1=args.beta1,
                            alpha2=args.alpha2, beta2=args.beta2)
    out = forward(stack, params)
    maps.save_map(args.out, out.data.transpose(1, 2, 0))
    _write_manifest(args.out, "fuse-demo", args)
    return 0


def cmd_resample(args) -> int:
    records = _read_records(args.ann, FieldOrder(args.order))
    if args.factor < 1:
        raise ConfigError(f"factor must be >= 1, got {args.factor}")
    out = motio.resample_framerate(records, args.factor)
    motio.write_annotation_file(args.out, out, FieldOrder(args.order))
    _write_manifest(args.out, "resample", args)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="headtrack")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_order(p):
        p.add_argument("--order", choices=[o.value for o in FieldOrder],
                       default=FieldOrder.paper_order.value)

    p = sub.add_parser("track", help="run the tracker on a detection file")
    p.add_argument("--dets", required=True)
    p.add_argument("--config")
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    add_order(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("evaluate", help="CLEAR-MOT / identity metrics report")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--out")
    p.add_argument("--json", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    add_order(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", help="dataset statistics for an annotation file")
    p.add_argument("--ann", required=True)
    p.add_argument("--frames", type=int)
    p.add_argument("--json", action="store_true")
    add_order(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("gen-scenario", help="generate a synthetic crowd sequence")
    p.add_argument("--config")
    p.add_argument("--noise")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-gt", required=True)
    p.add_argument("--out-dets")
    add_order(p)
    p.set_defaults(func=cmd_gen_scenario)

    p = sub.add_parser("gen-motion", help="frame-difference and flow maps for a frame dir")
    p.add_argument("--frames-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen_motion)

    p = sub.add_parser("fuse-demo", help="run the fusion pipeline on a stored stack")
    p.add_argument("--stack-dir", required=True)
    p.add_argument("--params")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    for coeff in ("alpha1", "beta1", "alpha2", "beta2"):
        p.add_argument(f"--{coeff}", type=float)
    p.set_defaults(func=cmd_fuse_demo)

    p = sub.add_parser("resample", help="framerate resampling of an annotation file")
    p.add_argument("--ann", required=True)
    p.add_argument("--factor", type=int, required=True)
    p.add_argument("--out", required=True)
    add_order(p)
    p.set_defaults(func=cmd_resample)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # anything else is an internal invariant violation
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
