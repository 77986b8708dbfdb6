"""Orbit cameras, pose interpolation and sphere viewpoints."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import List

import numpy as np

from ..render.camera import Camera

DEFAULT_SIZE = 400
DEFAULT_FOV = 50.0


@dataclass(frozen=True)
class OrbitConfig:
    """Azimuth ``angle`` and ``pitch`` in degrees; ``height`` is the absolute
    camera z; ``distance`` is measured in the ground plane."""

    distance: float
    height: float
    angle: float
    pitch: float

    def __post_init__(self):
        if not self.distance > 0:
            raise ValueError("orbit distance must be positive")

    def to_dict(self):
        return asdict(self)


POSE_START = OrbitConfig(5.0, 1.1, 270.0, -10.0)
POSE_END = OrbitConfig(5.0, 1.5, 270.0, -20.0)
N_POSES = 40


def orbit_position(cfg: OrbitConfig, target=(0.0, 0.0, 0.0)):
    a = math.radians(cfg.angle)
    t = np.asarray(target, dtype=np.float64)
    return np.array([t[0] + cfg.distance * math.cos(a), t[1] + cfg.distance * math.sin(a), cfg.height])


def orbit_camera(cfg: OrbitConfig, target=(0.0, 0.0, 0.0), width=DEFAULT_SIZE, height=DEFAULT_SIZE,
                 fov_deg=DEFAULT_FOV) -> Camera:
    """Camera on the orbit, turned horizontally toward the target, then
    pitched by ``cfg.pitch`` (negative looks down)."""
    pos = orbit_position(cfg, target)
    a = math.radians(cfg.angle)
    horizontal = -np.array([math.cos(a), math.sin(a), 0.0])
    p = math.radians(cfg.pitch)
    forward = math.cos(p) * horizontal + np.array([0.0, 0.0, math.sin(p)])
    return Camera.from_forward(pos, forward, width, height, fov_deg)


def interpolate_poses(a: OrbitConfig, b: OrbitConfig, n: int) -> List[OrbitConfig]:
    if n < 2:
        raise ValueError("need at least two poses")
    out = []
    for i in range(n):
        if i == 0:
            out.append(a)
        elif i == n - 1:
            out.append(b)
        else:
            t = i / (n - 1)
            out.append(OrbitConfig(*(x + t * (y - x) for x, y in
                                     zip(asdict(a).values(), asdict(b).values()))))
    return out


def protocol_poses(n=N_POSES):
    return interpolate_poses(POSE_START, POSE_END, n)


def fibonacci_directions(n):
    """Unit vectors on a Fibonacci lattice; z runs from +1 down to -1."""
    if n < 1:
        raise ValueError("need at least one view")
    if n == 1:
        return np.array([[0.0, 0.0, 1.0]])
    i = np.arange(n)
    z = 1.0 - 2.0 * i / (n - 1)
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = i * math.pi * (3.0 - math.sqrt(5.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def sphere_views(n, radius=1.0, width=DEFAULT_SIZE, height=DEFAULT_SIZE, fov_deg=DEFAULT_FOV,
                 center=(0.0, 0.0, 0.0)) -> List[Camera]:
    c = np.asarray(center, dtype=np.float64)
    return [Camera.look_at(c + radius * d, c, width, height, fov_deg) for d in fibonacci_directions(n)]
