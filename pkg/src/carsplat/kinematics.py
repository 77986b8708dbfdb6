"""Kinematic parameters of a vehicle: door hinge lines and wheel joints."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .asset import PartLabel

HINGE_PARTS = (PartLabel.FrontLeftDoor, PartLabel.FrontRightDoor)
JOINT_PARTS = (PartLabel.WheelFL, PartLabel.WheelFR, PartLabel.WheelRL, PartLabel.WheelRR)


@dataclass(frozen=True, eq=False)
class KinematicParams:
    """Hinges are ground-plane (x, y) points of vertical axes; joints are
    wheel centers. Asset units."""

    hinge_fl: np.ndarray
    hinge_fr: np.ndarray
    joint_fl: np.ndarray
    joint_fr: np.ndarray
    joint_rl: np.ndarray
    joint_rr: np.ndarray

    def __post_init__(self):
        for name, size in (("hinge_fl", 2), ("hinge_fr", 2), ("joint_fl", 3), ("joint_fr", 3),
                           ("joint_rl", 3), ("joint_rr", 3)):
            v = np.array(getattr(self, name), dtype=np.float64).reshape(size)
            v.flags.writeable = False
            object.__setattr__(self, name, v)

    @property
    def hinges(self):
        return np.stack([self.hinge_fl, self.hinge_fr])

    @property
    def joints(self):
        return np.stack([self.joint_fl, self.joint_fr, self.joint_rl, self.joint_rr])

    def hinge(self, part):
        return {PartLabel.FrontLeftDoor: self.hinge_fl, PartLabel.FrontRightDoor: self.hinge_fr}[part]

    def joint(self, part):
        return self.joints[JOINT_PARTS.index(PartLabel(part))]

    def is_finite(self):
        return bool(np.all(np.isfinite(self.to_vector())))

    def to_vector(self):
        return np.concatenate([self.hinge_fl, self.hinge_fr, self.joints.ravel()])

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=np.float64).ravel()
        if v.shape != (16,):
            raise ValueError(f"expected 16 kinematic values, got {v.shape}")
        return cls(v[0:2], v[2:4], v[4:7], v[7:10], v[10:13], v[13:16])

    def within_bounds(self, means, margin=0.1):
        """Hinges inside the ground-plane bounding box of ``means`` grown by ``margin``."""
        lo = means[:, :2].min(0)
        hi = means[:, :2].max(0)
        pad = margin * (hi - lo)
        h = self.hinges
        return bool(np.all((h >= lo - pad) & (h <= hi + pad)))

    def to_dict(self):
        return {"hinge_fl": self.hinge_fl.tolist(), "hinge_fr": self.hinge_fr.tolist(),
                "joint_fl": self.joint_fl.tolist(), "joint_fr": self.joint_fr.tolist(),
                "joint_rl": self.joint_rl.tolist(), "joint_rr": self.joint_rr.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["hinge_fl"], d["hinge_fr"], d["joint_fl"], d["joint_fr"], d["joint_rl"], d["joint_rr"])

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
