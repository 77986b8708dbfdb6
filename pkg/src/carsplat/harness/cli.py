"""Command line: one subcommand per pipeline stage.

Every subcommand takes a JSON config file (use ``-`` for defaults) followed
by positional paths. Failures exit with status 1 and name the stage; usage
errors exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..align import align, extract_parts
from ..articulate import PartState, apply_state
from ..asset import MOVABLE_PARTS, PartLabel, load_asset, load_clusters, save_asset
from ..kinematics import KinematicParams
from ..kinnet.infer import infer_kinematics, infer_labels, load_kin, load_seg
from ..kinnet.model import NetConfig
from ..kinnet.train import AugmentConfig, TrainConfig, kin_errors, seg_accuracy, train_kin, train_seg
from ..refine import RefineConfig, RefineDivergedError, refine
from ..render.camera import Camera
from ..render.imageio import load_png, save_mask_png, save_png
from ..render.masks import make_part_masks
from ..synth import generate_suite, load_sample
from .cameras import OrbitConfig, orbit_camera, sphere_views
from .metrics import EvalReport
from .pipeline import PipelineConfig, StageError, composite, protocol_cameras, protocol_states, \
    run_suite, vehicle_target

logger = logging.getLogger("carsplat")


def _config(path):
    if path == "-":
        return {}
    with open(path) as fh:
        return json.load(fh)


def _train_config(d):
    d = dict(d)
    aug = AugmentConfig(**d.pop("augment", {}))
    for key in ("scale_range", "yaw_range"):
        if key in aug.__dict__:
            setattr(aug, key, tuple(getattr(aug, key)))
    return TrainConfig(augment=aug, **d)


def _dataset(directory):
    dirs = sorted(p for p in Path(directory).iterdir() if (p / "points.ply").exists())
    if not dirs:
        raise FileNotFoundError(f"no samples under {directory}")
    return [load_sample(p) for p in dirs]


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2))


def cmd_gen_data(args, cfg):
    generate_suite(args.out, cfg.get("count", 10), cfg.get("seed", 0), cfg.get("n_points", 20000),
                   cfg.get("with_gaussians", True), cfg.get("degrade"))


def _train(args, cfg, kind):
    data = _dataset(args.dataset)
    tcfg = _train_config(cfg.get("train", {}))
    ncfg = NetConfig.from_dict(cfg.get("net", {}))
    fn = train_seg if kind == "seg" else train_kin
    result = fn(data, tcfg, ncfg)
    result.net.save(args.out)
    report = {"history": [asdict(h) for h in result.history]}
    if kind == "seg":
        report["accuracy"] = seg_accuracy(result.net, data)
    else:
        report["joint_error"], report["hinge_error"] = kin_errors(result.net, data)
    _write_json(Path(args.out) / "train_report.json", report)


def cmd_train_seg(args, cfg):
    _train(args, cfg, "seg")


def cmd_train_kin(args, cfg):
    _train(args, cfg, "kin")


def cmd_infer(args, cfg):
    asset = load_asset(args.asset)
    seg = load_seg(args.seg_weights)
    kin_net = load_kin(args.kin_weights)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    labels = infer_labels(asset, seg, cfg.get("knn_k", 3))
    labels.tofile(out / "labels.u8")
    infer_kinematics(asset, kin_net).save(out / "kin.json")


def cmd_align(args, cfg):
    asset = load_asset(args.asset)
    labels = np.fromfile(args.labels, dtype=np.uint8)
    clusters = asset.cluster_ids
    if cfg.get("clusters"):
        clusters = load_clusters(cfg["clusters"], len(asset))
        asset = asset.replace(cluster_ids=clusters)
    if clusters is None:
        raise ValueError("asset has no cluster_id column and no clusters sidecar was configured")
    selection = align(clusters, labels, cfg.get("min_overlap", 0.5))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    selection.save(out / "selection.json")
    for part, piece in extract_parts(asset, selection).items():
        save_asset(piece, out / f"{part.name}.ply")


def _load_parts(directory):
    return {p: load_asset(Path(directory) / f"{p.name}.ply") for p in PartLabel}


def _refine_views(cfg, reference):
    pcfg = PipelineConfig.from_dict(cfg.get("pipeline", {}))
    center = vehicle_target(reference) + np.array([0.0, 0.0, 0.5 * reference.means[:, 2].max()])
    return sphere_views(pcfg.refine_views, pcfg.refine_radius, pcfg.refine_image_size,
                        pcfg.refine_image_size, pcfg.fov, center)


def cmd_refine(args, cfg):
    parts = _load_parts(args.parts)
    reference = load_asset(args.mask_source)
    rcfg = RefineConfig(**cfg.get("refine", {}))
    views = _refine_views(cfg, reference)
    masks = make_part_masks(reference, MOVABLE_PARTS, views, rcfg.alpha_threshold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for part in PartLabel:
        if part == PartLabel.Body:
            save_asset(parts[part], out / f"{part.name}.ply")
            continue
        keep = [i for i, m in enumerate(masks[part]) if m.any()]
        try:
            refined, report = refine(parts[part], masks[part][keep], [views[i] for i in keep], rcfg)
        except RefineDivergedError as e:
            e.report.save(out / f"refine_{part.name}.json", include_time=False)
            raise
        save_asset(refined, out / f"{part.name}.ply")
        report.save(out / f"refine_{part.name}.json", include_time=False)


def cmd_articulate(args, cfg):
    parts = _load_parts(args.parts)
    kin = KinematicParams.load(args.kin)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if "state" in cfg:
        states = [(cfg.get("name", "state"), PartState.from_dict(cfg["state"]))]
    else:
        pcfg = PipelineConfig.from_dict(cfg.get("pipeline", {}))
        states = protocol_states(pcfg.door_angle_deg, pcfg.max_steer)
    for name, state in states:
        posed = apply_state(parts, kin, state)
        posed.save(out / f"{name}.ply", out / f"{name}.json")


def cmd_render(args, cfg):
    asset = load_asset(args.asset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pcfg = PipelineConfig.from_dict(cfg.get("pipeline", {}))
    if "cameras" in cfg:
        cams = [Camera.from_dict(c) for c in cfg["cameras"]]
    elif "orbit" in cfg:
        cams = [orbit_camera(OrbitConfig(**o), vehicle_target(asset), pcfg.image_size, pcfg.image_size, pcfg.fov)
                for o in cfg["orbit"]]
    else:
        cams = protocol_cameras(vehicle_target(asset), pcfg)
    for i, cam in enumerate(cams):
        save_png(composite(asset, cam), out / f"{i:02d}.png")
    if cfg.get("masks") and asset.part_labels is not None:
        present = [p for p in MOVABLE_PARTS if np.any(asset.part_labels == p)]
        for part, stack in make_part_masks(asset, present, cams).items():
            for i, m in enumerate(stack):
                save_mask_png(m, out / "masks" / part.name / f"{i:02d}.png")


def cmd_eval(args, cfg):
    gen = Path(args.generated)
    ref = Path(args.reference)
    files = sorted(p.relative_to(gen) for p in gen.rglob("*.png"))
    if not files:
        raise FileNotFoundError(f"no PNG files under {gen}")
    report = EvalReport(config=cfg)
    for rel in files:
        other = ref / rel
        if not other.exists():
            raise FileNotFoundError(f"reference image {other} is missing")
        parts = rel.parts
        vehicle = cfg.get("vehicle", "vehicle")
        state = str(Path(*parts[:-1])) if len(parts) > 1 else "default"
        report.add(vehicle, state, int(rel.stem) if rel.stem.isdigit() else 0, load_png(gen / rel), load_png(other))
    for extra in cfg.get("external_csv", []):
        report.merge_csv(extra)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json", out / "report.csv")


def cmd_pipeline(args, cfg):
    seg = load_seg(args.seg_weights)
    kin_net = load_kin(args.kin_weights)
    pcfg = PipelineConfig.from_dict(cfg.get("pipeline", cfg))
    run_suite(args.suite, seg, kin_net, pcfg, args.out)


COMMANDS = {
    "gen-data": (cmd_gen_data, ["out"]),
    "train-seg": (cmd_train_seg, ["dataset", "out"]),
    "train-kin": (cmd_train_kin, ["dataset", "out"]),
    "infer": (cmd_infer, ["asset", "seg_weights", "kin_weights", "out"]),
    "align": (cmd_align, ["asset", "labels", "out"]),
    "refine": (cmd_refine, ["parts", "mask_source", "out"]),
    "articulate": (cmd_articulate, ["parts", "kin", "out"]),
    "render": (cmd_render, ["asset", "out"]),
    "eval": (cmd_eval, ["generated", "reference", "out"]),
    "pipeline": (cmd_pipeline, ["suite", "seg_weights", "kin_weights", "out"]),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="carsplat", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, positional) in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("config", help="JSON config file, or - for defaults")
        for arg in positional:
            p.add_argument(arg)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    fn, _ = COMMANDS[args.command]
    try:
        cfg = _config(args.config)
        fn(args, cfg)
    except StageError as e:
        print(f"carsplat {args.command}: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"carsplat {args.command}: stage {args.command!r} failed: {type(e).__name__}: {e}",
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
