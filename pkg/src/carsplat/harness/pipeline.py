"""Evaluation protocol and the end-to-end vehicle pipeline.

For each vehicle: predict labels and kinematics on the degraded asset,
match its clusters to parts, optionally refine each movable part against
masks of the clean asset, then pose and render the eight protocol states
and compare with the clean asset posed by its true kinematics.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from ..align import align, extract_parts
from ..articulate import MAX_STEER, PartState, apply_state, split_by_label
from ..asset import MOVABLE_PARTS, GaussianAsset, PartLabel, load_asset, save_asset
from ..kinematics import KinematicParams
from ..kinnet.infer import infer_kinematics, infer_labels
from ..refine import RefineConfig, refine
from ..render.camera import Camera
from ..render.imageio import save_png, to_uint8
from ..render.masks import make_part_masks
from ..render.raster import render
from .cameras import DEFAULT_FOV, DEFAULT_SIZE, N_POSES, POSE_END, POSE_START, interpolate_poses, \
    orbit_camera, sphere_views
from .metrics import EvalReport

logger = logging.getLogger(__name__)

VARIANTS = ("unrefined", "refined")


class StageError(RuntimeError):
    def __init__(self, stage, message):
        super().__init__(f"stage {stage!r} failed: {message}")
        self.stage = stage


@dataclass
class PipelineConfig:
    image_size: int = DEFAULT_SIZE
    fov: float = DEFAULT_FOV
    n_poses: int = N_POSES
    door_angle_deg: float = 60.0
    max_steer: float = MAX_STEER
    knn_k: int = 3
    min_overlap: float = 0.5
    # refinement views: Fibonacci sphere around the vehicle center
    refine_views: int = 16
    refine_image_size: int = 128
    refine_radius: float = 6.0
    refine: dict = field(default_factory=dict)
    variants: Tuple[str, ...] = VARIANTS
    save_images: bool = False

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "variants" in d:
            d["variants"] = tuple(d["variants"])
        return cls(**d)


def protocol_states(door_angle_deg=60.0, max_steer=MAX_STEER) -> List[Tuple[str, PartState]]:
    """The eight single-change part states of the evaluation protocol."""
    door = math.radians(door_angle_deg)
    states = [("door_fl_open", PartState(door_fl=door, max_steer=max_steer)),
              ("door_fr_open", PartState(door_fr=door, max_steer=max_steer))]
    for f in (-1.0, -0.5, 0.5, 1.0):
        states.append((f"steer_{f:+.1f}", PartState(steer_fraction_fl=f, steer_fraction_fr=f, max_steer=max_steer)))
    for deg in (120, 240):
        states.append((f"roll_{deg}", PartState(roll_angle=math.radians(deg), max_steer=max_steer)))
    return states


def vehicle_target(asset: GaussianAsset):
    lo = asset.means.min(0)
    hi = asset.means.max(0)
    c = 0.5 * (lo + hi)
    return np.array([c[0], c[1], 0.0])


def protocol_cameras(target, cfg: PipelineConfig) -> List[Camera]:
    return [orbit_camera(p, target, cfg.image_size, cfg.image_size, cfg.fov)
            for p in interpolate_poses(POSE_START, POSE_END, cfg.n_poses)]


def protocol_pairs(cfg: PipelineConfig = PipelineConfig()):
    """(state name, pose index) for every render pair of one vehicle."""
    return [(name, i) for name, _ in protocol_states(cfg.door_angle_deg, cfg.max_steer)
            for i in range(cfg.n_poses)]


def composite(asset: GaussianAsset, camera: Camera):
    """8-bit render over a black background."""
    out = render(asset, camera)
    return to_uint8(out.rgb * out.alpha[..., None])


def refine_parts(parts: Dict[PartLabel, GaussianAsset], clean: GaussianAsset, cfg: PipelineConfig):
    center = vehicle_target(clean) + np.array([0.0, 0.0, 0.5 * clean.means[:, 2].max()])
    views = sphere_views(cfg.refine_views, cfg.refine_radius, cfg.refine_image_size,
                         cfg.refine_image_size, cfg.fov, center)
    masks = make_part_masks(clean, MOVABLE_PARTS, views, RefineConfig(**cfg.refine).alpha_threshold)
    out = dict(parts)
    reports = {}
    for part in MOVABLE_PARTS:
        keep = [i for i, m in enumerate(masks[part]) if m.any()]
        refined, report = refine(parts[part], masks[part][keep], [views[i] for i in keep],
                                 RefineConfig(**cfg.refine))
        out[part] = refined
        reports[part.name] = report
    return out, reports


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as e:  # surfaced with the stage name for the CLI
        raise StageError(name, f"{type(e).__name__}: {e}") from e


def run_vehicle(vehicle_dir, seg_net, kin_net, cfg: PipelineConfig, out_dir=None):
    """Returns {variant: EvalReport} for one vehicle directory of a suite."""
    vehicle_dir = Path(vehicle_dir)
    name = vehicle_dir.name
    degraded = _stage("load", load_asset, vehicle_dir / "degraded.ply")
    clean = _stage("load", load_asset, vehicle_dir / "gaussians.ply")
    true_kin = _stage("load", KinematicParams.load, vehicle_dir / "kin.json")

    labels = _stage("infer", infer_labels, degraded, seg_net, cfg.knn_k)
    kin = _stage("infer", infer_kinematics, degraded, kin_net)
    selection = _stage("align", align, degraded.cluster_ids, labels, cfg.min_overlap)
    parts = _stage("align", extract_parts, degraded, selection)

    variants = {"unrefined": parts}
    refine_reports = {}
    if "refined" in cfg.variants:
        variants["refined"], refine_reports = _stage("refine", refine_parts, parts, clean, cfg)

    target = vehicle_target(clean)
    cams = protocol_cameras(target, cfg)
    clean_parts = split_by_label(clean)
    reports = {v: EvalReport(config={"vehicle": name, "variant": v, **asdict(cfg)}) for v in variants}
    for state_name, state in protocol_states(cfg.door_angle_deg, cfg.max_steer):
        ref_posed = _stage("articulate", apply_state, clean_parts, true_kin, state).asset
        posed = {v: _stage("articulate", apply_state, p, kin, state).asset for v, p in variants.items()}
        if out_dir is not None:
            for v, a in posed.items():
                d = Path(out_dir) / name / "posed" / v
                d.mkdir(parents=True, exist_ok=True)
                save_asset(a, d / f"{state_name}.ply")
        for i, cam in enumerate(cams):
            ref_img = _stage("render", composite, ref_posed, cam)
            for v, a in posed.items():
                img = _stage("render", composite, a, cam)
                reports[v].add(name, state_name, i, img, ref_img)
                if out_dir is not None and cfg.save_images:
                    d = Path(out_dir) / name / "images" / v / state_name
                    d.mkdir(parents=True, exist_ok=True)
                    save_png(img, d / f"{i:02d}.png")
            if out_dir is not None and cfg.save_images:
                d = Path(out_dir) / name / "images" / "reference" / state_name
                d.mkdir(parents=True, exist_ok=True)
                save_png(ref_img, d / f"{i:02d}.png")

    if out_dir is not None:
        d = Path(out_dir) / name
        d.mkdir(parents=True, exist_ok=True)
        labels.tofile(d / "labels.u8")
        kin.save(d / "kin_pred.json")
        selection.save(d / "selection.json")
        for part, rep in refine_reports.items():
            rep.save(d / f"refine_{part}.json", include_time=False)
    return reports


def run_suite(suite_dir, seg_net, kin_net, cfg: PipelineConfig, out_dir):
    """Run every vehicle of a suite; writes per-variant reports and a summary."""
    suite_dir = Path(suite_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vehicles = sorted(p for p in suite_dir.iterdir() if p.is_dir() and (p / "degraded.ply").exists())
    if not vehicles:
        raise StageError("load", f"no vehicles with degraded.ply under {suite_dir}")
    merged = {v: EvalReport(config={"suite": str(suite_dir.name), "variant": v, **asdict(cfg)})
              for v in cfg.variants}
    for vdir in vehicles:
        logger.info("pipeline: %s", vdir.name)
        for v, rep in run_vehicle(vdir, seg_net, kin_net, cfg, out_dir).items():
            merged[v].rows.extend(rep.rows)
    summary = {}
    for v, rep in merged.items():
        rep.save(out_dir / f"report_{v}.json", out_dir / f"report_{v}.csv")
        summary[v] = {m: rep.mean(m) for m in rep.metrics()}
    summary["vehicles"] = [p.name for p in vehicles]
    summary["pairs_per_vehicle"] = len(protocol_pairs(cfg))
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2))
    return merged, summary
