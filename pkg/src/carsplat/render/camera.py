from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera. ``rotation``/``translation`` map world points to the
    camera frame (x right, y down, z forward). Pixel (row i, col j) has its
    center at (j + 0.5, i + 0.5)."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if int(self.width) < 1 or int(self.height) < 1:
            raise ValueError("camera width and height must be >= 1")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-6:
            raise ValueError("camera rotation is not orthonormal")

    @classmethod
    def look_at(cls, position, target, width, height, fov_deg=50.0, up=(0.0, 0.0, 1.0)):
        """Camera at ``position`` looking at ``target``; ``fov_deg`` is horizontal."""
        position = np.asarray(position, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - position
        forward /= np.linalg.norm(forward)
        return cls.from_forward(position, forward, width, height, fov_deg, up)

    @classmethod
    def from_forward(cls, position, forward, width, height, fov_deg=50.0, up=(0.0, 0.0, 1.0)):
        position = np.asarray(position, dtype=np.float64)
        forward = np.asarray(forward, dtype=np.float64)
        forward = forward / np.linalg.norm(forward)
        up = np.asarray(up, dtype=np.float64)
        if abs(forward @ up) > 1.0 - 1e-9:
            up = np.array([0.0, 1.0, 0.0])
        right = np.cross(forward, up)
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward])
        f = 0.5 * width / np.tan(0.5 * np.radians(fov_deg))
        return cls(int(width), int(height), f, f, 0.5 * width, 0.5 * height, rot, -rot @ position)

    @property
    def position(self):
        return -self.rotation.T @ self.translation

    @property
    def forward(self):
        return self.rotation[2].copy()

    def to_dict(self):
        return {
            "width": self.width, "height": self.height,
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "rotation": self.rotation.tolist(), "translation": self.translation.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["width"], d["height"], d["fx"], d["fy"], d["cx"], d["cy"],
                   d["rotation"], d["translation"])
