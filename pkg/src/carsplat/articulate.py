"""Rigid part motions: door opening, front-wheel steering and wheel roll."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Mapping

import numpy as np

from .asset import DOORS, WHEELS, GaussianAsset, PartLabel, concatenate, save_asset
from .geometry import axis_angle_matrix, matrix_to_quat, normalize, quat_multiply
from .kinematics import KinematicParams

MAX_STEER = math.radians(35.0)


class ArticulationError(ValueError):
    pass


@dataclass(frozen=True)
class PartState:
    door_fl: float = 0.0
    door_fr: float = 0.0
    steer_fraction_fl: float = 0.0
    steer_fraction_fr: float = 0.0
    roll_angle: float = 0.0
    max_steer: float = MAX_STEER

    def __post_init__(self):
        vals = asdict(self)
        if not all(math.isfinite(v) for v in vals.values()):
            raise ArticulationError(f"non-finite part state: {vals}")
        for name in ("steer_fraction_fl", "steer_fraction_fr"):
            if not -1.0 <= vals[name] <= 1.0:
                raise ArticulationError(f"{name}={vals[name]} outside [-1, 1]")

    def door(self, part):
        return {PartLabel.FrontLeftDoor: self.door_fl, PartLabel.FrontRightDoor: self.door_fr}[part]

    def steer(self, part):
        frac = {PartLabel.WheelFL: self.steer_fraction_fl, PartLabel.WheelFR: self.steer_fraction_fr}
        return frac.get(PartLabel(part), 0.0) * self.max_steer

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class Frame:
    """Vehicle frame. ``door_signs`` map a positive door angle to an outward
    swing: doors sit behind their hinge, so the left door turns clockwise
    seen from above and the right door counter-clockwise."""

    up: tuple = (0.0, 0.0, 1.0)
    lateral: tuple = (0.0, 1.0, 0.0)
    door_signs: tuple = (-1.0, 1.0)


@dataclass
class ArticulatedAsset:
    asset: GaussianAsset
    state: PartState
    kin: KinematicParams
    frame: Frame = field(default_factory=Frame)

    def save(self, ply_path, meta_path):
        save_asset(self.asset, ply_path)
        with open(meta_path, "w") as fh:
            json.dump({"state": self.state.to_dict(), "kin": self.kin.to_dict(),
                       "frame": asdict(self.frame)}, fh, indent=2)


def _unit(axis):
    axis = np.asarray(axis, dtype=np.float64).reshape(3)
    n = np.linalg.norm(axis)
    if n == 0 or not np.isfinite(n):
        raise ArticulationError("rotation axis must be a non-zero finite vector")
    if abs(n - 1.0) > 1e-6:
        raise ArticulationError(f"rotation axis has norm {n}, expected 1")
    return axis


def rotate_part(part: GaussianAsset, axis, pivot, angle) -> GaussianAsset:
    """Rigidly rotate every Gaussian by ``angle`` about the line through ``pivot``."""
    axis = _unit(axis)
    pivot = np.asarray(pivot, dtype=np.float64).reshape(3)
    r = axis_angle_matrix(axis, angle)
    means = (part.means - pivot) @ r.T + pivot
    rots = normalize(quat_multiply(matrix_to_quat(r), part.rotations))
    return part.replace(means=means, rotations=rots)


def steered_lateral(frame: Frame, steer):
    return axis_angle_matrix(np.asarray(frame.up, dtype=np.float64), steer) @ np.asarray(frame.lateral, dtype=np.float64)


def pose_part(part_label, part: GaussianAsset, kin: KinematicParams, state: PartState,
              frame: Frame = Frame()) -> GaussianAsset:
    label = PartLabel(part_label)
    up = np.asarray(frame.up, dtype=np.float64)
    if label in DOORS:
        sign = frame.door_signs[DOORS.index(label)]
        hinge = kin.hinge(label)
        pivot = np.array([hinge[0], hinge[1], 0.0])
        return rotate_part(part, up, pivot, sign * state.door(label))
    if label in WHEELS:
        joint = kin.joint(label)
        steer = state.steer(label)
        if steer != 0.0:
            part = rotate_part(part, up, joint, steer)
        if state.roll_angle != 0.0:
            part = rotate_part(part, steered_lateral(frame, steer), joint, state.roll_angle)
        return part
    return part


def apply_state(parts: Mapping[PartLabel, GaussianAsset], kin: KinematicParams, state: PartState,
                frame: Frame = Frame()) -> ArticulatedAsset:
    """Pose each movable part and reassemble the vehicle in label order."""
    missing = [p.name for p in PartLabel if p not in parts]
    if missing:
        raise ArticulationError(f"missing parts: {', '.join(missing)}")
    if not kin.is_finite():
        raise ArticulationError("kinematic parameters are not finite")
    posed: Dict[PartLabel, GaussianAsset] = {p: pose_part(p, parts[p], kin, state, frame) for p in PartLabel}
    return ArticulatedAsset(concatenate([posed[p] for p in PartLabel]), state, kin, frame)


def split_by_label(asset: GaussianAsset) -> Dict[PartLabel, GaussianAsset]:
    """Per-label pieces of an asset that carries part labels."""
    if asset.part_labels is None:
        raise ArticulationError("asset has no part labels")
    out = {}
    for p in PartLabel:
        idx = np.flatnonzero(asset.part_labels == p)
        if len(idx) == 0:
            raise ArticulationError(f"part {p.name} has no Gaussians")
        out[p] = asset.take(idx)
    return out
