"""Command-line interface.

Exit codes: 0 success, 1 usage, 2 data/validation, 3 internal.  Failures
also emit one machine-readable JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from ..drr import load_pgm, save_image_raw, save_pgm
from ..errors import CathlabError, ValidationError
from ..geometry import CArmPose
from ..hemodynamics import ECGTrace, hemodynamics_report
from ..metrics import (
    VesselDescriptor,
    dice,
    max_error_pct,
    mean_trajectory_error,
    metric_report,
    morphological_consistency,
    save_metric_report,
    wasserstein_trajectories,
)
from ..stereo import CameraModel, reconstruct_guidewire
from .config import load_config
from .scene import Scene, generate_scene, mesh_sequence_volumes
from .server import serve_forever

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cathlab", description="virtual catheterization lab")
    parser.add_argument("--config", help="workspace config JSON", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p_phantom = sub.add_parser("phantom", help="synthetic data generation")
    phantom_sub = p_phantom.add_subparsers(dest="phantom_command", required=True)
    p_gen = phantom_sub.add_parser("gen", help="voxelise a phantom spec into a scene")
    p_gen.add_argument("--spec", required=True, help="phantom spec JSON file")
    p_gen.add_argument("--out", required=True, help="output scene directory")
    p_gen.add_argument("--id", default="phantom", help="scene id")

    p_render = sub.add_parser("render", help="single DRR from a scene")
    p_render.add_argument("--scene", required=True)
    p_render.add_argument("--alpha", type=float, default=0.0, help="primary angle, degrees")
    p_render.add_argument("--beta", type=float, default=0.0, help="secondary angle, degrees")
    p_render.add_argument("--phase", type=float, default=0.0, help="cycle fraction in [0, 1]")
    p_render.add_argument("--enhance", action="store_true")
    p_render.add_argument("--w", type=int, default=None)
    p_render.add_argument("--h", type=int, default=None)
    p_render.add_argument("--out", required=True, help="output PGM path")
    p_render.add_argument("--raw", default=None, help="optional lossless float32 output path")

    p_seq = sub.add_parser("sequence", help="ECG-synchronised frame sequence")
    p_seq.add_argument("--scene", required=True)
    p_seq.add_argument("--alpha", type=float, default=0.0)
    p_seq.add_argument("--beta", type=float, default=0.0)
    p_seq.add_argument("--frames", type=int, required=True)
    p_seq.add_argument("--fps", type=float, default=10.0)
    p_seq.add_argument("--out", required=True, help="output directory")

    p_hemo = sub.add_parser("hemo", help="hemodynamics report from a mesh sequence")
    p_hemo.add_argument("--meshes", required=True, help="directory with meshes.json")
    p_hemo.add_argument("--ecg", required=True, help="ECG CSV")
    p_hemo.add_argument("--out", required=True, help="report JSON path")

    p_stereo = sub.add_parser("stereo", help="3-D guidewire reconstruction from a frame pair")
    p_stereo.add_argument("--left", required=True)
    p_stereo.add_argument("--right", required=True)
    p_stereo.add_argument("--rig", required=True, help="camera rig JSON ({cameras: [..2..]})")
    p_stereo.add_argument("--out", required=True, help="curve JSON path")
    p_stereo.add_argument("--csv", default=None, help="optional sampled polyline CSV")

    p_metrics = sub.add_parser("metrics", help="consistency report between two measurements")
    p_metrics.add_argument("--ref", required=True)
    p_metrics.add_argument("--test", required=True)
    p_metrics.add_argument("--out", required=True)

    p_serve = sub.add_parser("serve", help="HTTP service for the console")
    p_serve.add_argument("--scene", required=True)
    p_serve.add_argument("--port", type=int, default=None)
    p_serve.add_argument("--host", default=None)
    p_serve.add_argument("--frontend", default=None, help="static console bundle directory")

    return parser


def _cmd_phantom(args, config) -> int:
    with open(args.spec) as f:
        spec_obj = json.load(f)
    path = generate_scene(spec_obj, args.out, args.id)
    print(path)
    return EXIT_OK


def _pose_for(scene: Scene, args) -> CArmPose:
    base = scene.default_pose
    return CArmPose(
        alpha=math.radians(args.alpha),
        beta=math.radians(args.beta),
        sid_mm=base.sid_mm,
        spd_mm=base.spd_mm,
        fd_mm=base.fd_mm,
        n_u=getattr(args, "w", None) or base.n_u,
        n_v=getattr(args, "h", None) or base.n_v,
        table_mm=base.table_mm,
    )


def _cmd_render(args, config) -> int:
    scene = Scene(args.scene, config)
    pose = _pose_for(scene, args)
    img = scene.render(pose, phase=args.phase, enhance=args.enhance)
    save_pgm(img, args.out)
    if args.raw:
        save_image_raw(img, args.raw)
    print(args.out)
    return EXIT_OK


def _cmd_sequence(args, config) -> int:
    scene = Scene(args.scene, config)
    if scene.clock is None:
        raise ValidationError("scene has no ECG; cannot synchronise a sequence")
    pose = _pose_for(scene, args)
    os.makedirs(args.out, exist_ok=True)
    t0 = float(scene.ecg.r_peaks[0])
    frames = []
    for k in range(args.frames):
        t = t0 + k / args.fps
        phase = scene.clock.beat_phase(t)
        img = scene.render(pose, phase=phase)
        name = f"frame_{k:04d}.pgm"
        save_pgm(img, os.path.join(args.out, name))
        frames.append({"file": name, "t_s": t - t0, "phase": phase})
    with open(os.path.join(args.out, "sequence.json"), "w") as f:
        json.dump({"fps": args.fps, "pose": pose.to_json(), "frames": frames}, f, indent=2)
    print(os.path.join(args.out, "sequence.json"))
    return EXIT_OK


def _cmd_hemo(args, config) -> int:
    times, volumes = mesh_sequence_volumes(args.meshes)
    ecg = ECGTrace.load_csv(args.ecg)
    report = hemodynamics_report(times, volumes, ecg=ecg)
    report.save(args.out)
    print(args.out)
    return EXIT_OK


def _cmd_stereo(args, config) -> int:
    with open(args.rig) as f:
        rig = json.load(f)
    cams = rig.get("cameras")
    if not cams or len(cams) != 2:
        raise ValidationError("rig JSON must carry exactly two cameras")
    cam1, cam2 = (CameraModel.from_json(c) for c in cams)
    img1, img2 = load_pgm(args.left), load_pgm(args.right)
    curve, diagnostics = reconstruct_guidewire(img1, img2, cam1, cam2, config.stereo)
    curve.save(args.out)
    if args.csv:
        curve.save_polyline_csv(args.csv)
    diagnostics.pop("inliers", None)
    print(json.dumps({"curve": args.out, "diagnostics": diagnostics}, default=float))
    return EXIT_OK


def _load_measurement(path: str) -> dict:
    with open(path) as f:
        return json.load(f)


def _mask_from_json(obj: dict) -> np.ndarray:
    mask = np.zeros(tuple(obj["shape"]), dtype=bool)
    idx = np.asarray(obj["indices"], dtype=int)
    if idx.size:
        mask[idx[:, 0], idx[:, 1]] = True
    return mask


def _cmd_metrics(args, config) -> int:
    ref = _load_measurement(args.ref)
    test = _load_measurement(args.test)
    morphology = None
    dsc = mte = w1 = me = None
    if "descriptor" in ref and "descriptor" in test:
        morphology = morphological_consistency(
            VesselDescriptor.from_json(test["descriptor"]),
            VesselDescriptor.from_json(ref["descriptor"]),
        )
    if "mask" in ref and "mask" in test:
        dsc = dice(_mask_from_json(test["mask"]), _mask_from_json(ref["mask"]))
    if "trajectory" in ref and "trajectory" in test:
        p = np.asarray(test["trajectory"]["points"], dtype=float)
        q = np.asarray(ref["trajectory"]["points"], dtype=float)
        n = min(100, max(len(p), len(q)))
        mte = mean_trajectory_error(p, q, resample_to=n)
        w1 = wasserstein_trajectories(p, q, resample_to=n)
        from ..metrics import resample_polyline

        length = ref["trajectory"].get("length_mm")
        if length is None:
            dq = np.diff(q, axis=0)
            length = float(np.linalg.norm(dq, axis=1).sum())
        me = max_error_pct(resample_polyline(p, n), resample_polyline(q, n), length)
    report = metric_report(morphology, dsc, mte, w1, me)
    save_metric_report(report, args.out)
    print(args.out)
    return EXIT_OK


def _cmd_serve(args, config) -> int:
    scene = Scene(args.scene, config)
    serve_forever(scene, config, args.host, args.port, args.frontend)
    return EXIT_OK


_COMMANDS = {
    "phantom": _cmd_phantom,
    "render": _cmd_render,
    "sequence": _cmd_sequence,
    "hemo": _cmd_hemo,
    "stereo": _cmd_stereo,
    "metrics": _cmd_metrics,
    "serve": _cmd_serve,
}


def _emit_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": {"type": kind, "message": message}}) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        _emit_error("usage", str(e))
        return EXIT_USAGE
    try:
        config = load_config(args.config)
        return _COMMANDS[args.command](args, config)
    except (CathlabError, FileNotFoundError, json.JSONDecodeError, KeyError) as e:
        _emit_error(type(e).__name__, str(e))
        return EXIT_DATA
    except Exception as e:  # pragma: no cover - defensive
        _emit_error("internal", f"{type(e).__name__}: {e}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
