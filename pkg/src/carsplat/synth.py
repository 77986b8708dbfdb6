"""Procedural labeled cars with exact kinematic ground truth.

Frame: +x forward, +y left, +z up, ground at z = 0. A car is a lower body
box with a rearward-offset cabin, two front door panels set into the body
sides (hinge at the forward edge), and four cylindrical wheels. Surfaces are
sampled uniformly by area; each sample also becomes one isotropic Gaussian.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .asset import DOORS, MOVABLE_PARTS, GaussianAsset, PartLabel, save_asset
from .kinematics import KinematicParams

PALETTE = np.array([
    [0.80, 0.10, 0.10], [0.10, 0.25, 0.70], [0.85, 0.85, 0.85], [0.15, 0.15, 0.17],
    [0.90, 0.75, 0.15], [0.20, 0.55, 0.25], [0.55, 0.55, 0.60], [0.45, 0.20, 0.55],
])
WINDOW = np.array([0.12, 0.15, 0.20])
HEADLIGHT = np.array([0.95, 0.95, 0.80])
TAILLIGHT = np.array([0.75, 0.05, 0.05])
TIRE = np.array([0.07, 0.07, 0.07])
RIM = np.array([0.65, 0.65, 0.68])
DOOR_TINT = 0.15

MIRROR_SWAP = {
    PartLabel.Body: PartLabel.Body,
    PartLabel.FrontLeftDoor: PartLabel.FrontRightDoor,
    PartLabel.FrontRightDoor: PartLabel.FrontLeftDoor,
    PartLabel.WheelFL: PartLabel.WheelFR,
    PartLabel.WheelFR: PartLabel.WheelFL,
    PartLabel.WheelRL: PartLabel.WheelRR,
    PartLabel.WheelRR: PartLabel.WheelRL,
}


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class CarSpec:
    length: float = 4.4
    width: float = 1.85
    body_height: float = 0.65
    clearance: float = 0.17
    cabin_length: float = 2.2
    cabin_height: float = 0.5
    cabin_offset: float = -0.35   # cabin center x
    cabin_inset: float = 0.12     # per side
    wheel_radius: float = 0.34
    wheel_width: float = 0.24
    front_axle_x: float = 1.35
    wheelbase: float = 2.65
    track_width: float = 1.59
    door_gap: float = 0.15        # front wheel rear edge to door forward edge
    door_length: float = 1.05
    door_bottom: float = 0.08     # above the body bottom
    color_index: int = 0
    n_points: int = 20000
    seed: int = 0
    mirrored: bool = False

    @property
    def body_bottom(self):
        return self.clearance

    @property
    def body_top(self):
        return self.clearance + self.body_height

    @property
    def door_front(self):
        return self.front_axle_x - self.wheel_radius - self.door_gap

    @property
    def door_back(self):
        return self.door_front - self.door_length

    @property
    def rear_axle_x(self):
        return self.front_axle_x - self.wheelbase

    def validate(self):
        dims = [self.length, self.width, self.body_height, self.clearance, self.cabin_length,
                self.cabin_height, self.wheel_radius, self.wheel_width, self.wheelbase,
                self.track_width, self.door_gap, self.door_length, self.door_bottom]
        if min(dims) <= 0:
            raise SpecError("all dimensions must be positive")
        if self.n_points < 7 * 64:
            raise SpecError("n_points too small to cover every part")
        if self.door_back <= self.rear_axle_x + self.wheel_radius + 0.05:
            raise SpecError("door panel overlaps the rear wheel")
        if self.door_front >= self.front_axle_x - self.wheel_radius:
            raise SpecError("door panel overlaps the front wheel")
        if self.front_axle_x + self.wheel_radius >= 0.5 * self.length:
            raise SpecError("front wheel sticks out of the body")
        if self.rear_axle_x - self.wheel_radius <= -0.5 * self.length:
            raise SpecError("rear wheel sticks out of the body")
        if self.track_width + self.wheel_width > self.width:
            raise SpecError("wheels stick out of the body sides")
        if 2 * self.wheel_radius >= self.body_top:
            raise SpecError("wheels taller than the body")
        if self.door_bottom >= self.body_height - 0.1:
            raise SpecError("door panel has no height")
        if self.cabin_length >= self.length or 2 * self.cabin_inset >= self.width:
            raise SpecError("cabin larger than body")
        if abs(self.cabin_offset) + 0.5 * self.cabin_length > 0.5 * self.length:
            raise SpecError("cabin overhangs the body")

    def kinematics(self) -> KinematicParams:
        half_w = 0.5 * self.width
        half_t = 0.5 * self.track_width
        r = self.wheel_radius
        kin = KinematicParams(
            hinge_fl=[self.door_front, half_w],
            hinge_fr=[self.door_front, -half_w],
            joint_fl=[self.front_axle_x, half_t, r],
            joint_fr=[self.front_axle_x, -half_t, r],
            joint_rl=[self.rear_axle_x, half_t, r],
            joint_rr=[self.rear_axle_x, -half_t, r],
        )
        if self.mirrored:
            kin = mirror_kinematics(kin)
        return kin


def mirror_kinematics(kin: KinematicParams) -> KinematicParams:
    flip2 = np.array([1.0, -1.0])
    flip3 = np.array([1.0, -1.0, 1.0])
    return KinematicParams(kin.hinge_fr * flip2, kin.hinge_fl * flip2, kin.joint_fr * flip3,
                           kin.joint_fl * flip3, kin.joint_rr * flip3, kin.joint_rl * flip3)


@dataclass
class TrainSample:
    positions: np.ndarray
    colors: np.ndarray
    labels: np.ndarray
    kin: KinematicParams
    name: str = ""

    def validate(self, min_points=16):
        counts = np.bincount(self.labels, minlength=len(PartLabel))
        short = [PartLabel(i).name for i in range(len(PartLabel)) if counts[i] < min_points]
        if short:
            raise SpecError(f"sample {self.name!r} has fewer than {min_points} points for {short}")


class _Surface:
    """Planar rectangle origin + a*u + b*v with an optional rejection mask."""

    def __init__(self, origin, u, v, label, color, reject=None, paint=None):
        self.origin = np.asarray(origin, float)
        self.u = np.asarray(u, float)
        self.v = np.asarray(v, float)
        self.label = label
        self.color = np.asarray(color, float)
        self.reject = reject
        self.paint = paint

    def area(self):
        return float(np.linalg.norm(np.cross(self.u, self.v)))

    def sample(self, rng, n):
        out = []
        got = 0
        while got < n:
            ab = rng.random((2 * (n - got) + 16, 2))
            pts = self.origin + ab[:, :1] * self.u + ab[:, 1:] * self.v
            if self.reject is not None:
                pts = pts[~self.reject(pts)]
            out.append(pts[: n - got])
            got += len(out[-1])
        pts = np.concatenate(out)
        col = np.broadcast_to(self.color, pts.shape).copy()
        if self.paint is not None:
            self.paint(pts, col)
        return pts, col


class _Cylinder:
    """Wheel: tread plus two sidewalls, axis along y."""

    def __init__(self, center, radius, width, label):
        self.center = np.asarray(center, float)
        self.r = radius
        self.w = width
        self.label = label

    def area(self):
        return 2 * np.pi * self.r * self.w + 2 * np.pi * self.r ** 2

    def sample(self, rng, n):
        tread_area = 2 * np.pi * self.r * self.w
        n_tread = int(round(n * tread_area / self.area()))
        th = rng.random(n_tread) * 2 * np.pi
        yy = (rng.random(n_tread) - 0.5) * self.w
        tread = np.stack([self.r * np.cos(th), yy, self.r * np.sin(th)], axis=1)
        n_side = n - n_tread
        rho = self.r * np.sqrt(rng.random(n_side))
        ph = rng.random(n_side) * 2 * np.pi
        side = rng.random(n_side) < 0.5
        ys = np.where(side, 0.5, -0.5) * self.w
        sides = np.stack([rho * np.cos(ph), ys, rho * np.sin(ph)], axis=1)
        pts = np.concatenate([tread, sides]) + self.center
        col = np.concatenate([np.broadcast_to(TIRE, tread.shape),
                              np.where((rho < 0.6 * self.r)[:, None], RIM, TIRE)])
        return pts, col


def _quantize(colors):
    # colors live on the 8-bit grid so point-cloud files round-trip exactly
    return np.round(np.clip(colors, 0, 1) * 255.0) / 255.0


def _components(spec: CarSpec):
    L, W = spec.length, spec.width
    x0, x1 = -0.5 * L, 0.5 * L
    y0, y1 = -0.5 * W, 0.5 * W
    z0, z1 = spec.body_bottom, spec.body_top
    base = PALETTE[spec.color_index % len(PALETTE)]
    # doors carry a fixed-contrast tint standing in for seams and trim
    door_color = np.clip(base + (DOOR_TINT if base.mean() < 0.5 else -DOOR_TINT), 0.0, 1.0)
    r = spec.wheel_radius
    axles = (spec.front_axle_x, spec.rear_axle_x)
    arch = r + 0.06
    dz0 = z0 + spec.door_bottom
    dx0, dx1 = spec.door_back, spec.door_front

    def side_reject(pts):
        hole = np.zeros(len(pts), bool)
        for ax in axles:
            hole |= (pts[:, 0] - ax) ** 2 + (pts[:, 2] - r) ** 2 < arch ** 2
        hole |= (pts[:, 0] > dx0) & (pts[:, 0] < dx1) & (pts[:, 2] > dz0)
        return hole

    def bottom_reject(pts):
        hole = np.zeros(len(pts), bool)
        for ax in axles:
            hole |= (np.abs(pts[:, 0] - ax) < arch) & (np.abs(np.abs(pts[:, 1]) - 0.5 * spec.track_width)
                                                       < 0.5 * spec.wheel_width + 0.05)
        return hole

    cx0 = spec.cabin_offset - 0.5 * spec.cabin_length
    cx1 = spec.cabin_offset + 0.5 * spec.cabin_length
    cy0, cy1 = y0 + spec.cabin_inset, y1 - spec.cabin_inset
    cz1 = z1 + spec.cabin_height

    def top_reject(pts):
        return (pts[:, 0] > cx0) & (pts[:, 0] < cx1) & (pts[:, 1] > cy0) & (pts[:, 1] < cy1)

    def front_paint(pts, col):
        lamp = (np.abs(np.abs(pts[:, 1]) - 0.32 * W) < 0.12 * W) & (pts[:, 2] > z1 - 0.2)
        col[lamp] = HEADLIGHT

    def rear_paint(pts, col):
        lamp = (np.abs(np.abs(pts[:, 1]) - 0.36 * W) < 0.08 * W) & (pts[:, 2] > z1 - 0.18)
        col[lamp] = TAILLIGHT

    def cabin_side_paint(pts, col):
        win = (pts[:, 2] > z1 + 0.08) & (pts[:, 2] < cz1 - 0.06) & \
              (pts[:, 0] > cx0 + 0.15) & (pts[:, 0] < cx1 - 0.1)
        col[win] = WINDOW

    def cabin_face_paint(pts, col):
        win = (pts[:, 2] > z1 + 0.06) & (pts[:, 2] < cz1 - 0.05) & (np.abs(pts[:, 1]) < 0.5 * W - 0.25)
        col[win] = WINDOW

    body = PartLabel.Body
    comps = [
        _Surface([x0, y0, z1], [L, 0, 0], [0, W, 0], body, base, reject=top_reject),
        _Surface([x0, y0, z0], [L, 0, 0], [0, W, 0], body, base * 0.4, reject=bottom_reject),
        _Surface([x0, y1, z0], [L, 0, 0], [0, 0, z1 - z0], body, base, reject=side_reject),
        _Surface([x0, y0, z0], [L, 0, 0], [0, 0, z1 - z0], body, base, reject=side_reject),
        _Surface([x1, y0, z0], [0, W, 0], [0, 0, z1 - z0], body, base, paint=front_paint),
        _Surface([x0, y0, z0], [0, W, 0], [0, 0, z1 - z0], body, base, paint=rear_paint),
        # cabin
        _Surface([cx0, cy0, cz1], [cx1 - cx0, 0, 0], [0, cy1 - cy0, 0], body, base),
        _Surface([cx0, cy1, z1], [cx1 - cx0, 0, 0], [0, 0, cz1 - z1], body, base, paint=cabin_side_paint),
        _Surface([cx0, cy0, z1], [cx1 - cx0, 0, 0], [0, 0, cz1 - z1], body, base, paint=cabin_side_paint),
        _Surface([cx1, cy0, z1], [0, cy1 - cy0, 0], [0, 0, cz1 - z1], body, base, paint=cabin_face_paint),
        _Surface([cx0, cy0, z1], [0, cy1 - cy0, 0], [0, 0, cz1 - z1], body, base, paint=cabin_face_paint),
        # doors
        _Surface([dx0, y1, dz0], [dx1 - dx0, 0, 0], [0, 0, z1 - dz0], PartLabel.FrontLeftDoor, door_color),
        _Surface([dx0, y0, dz0], [dx1 - dx0, 0, 0], [0, 0, z1 - dz0], PartLabel.FrontRightDoor, door_color),
    ]
    ht = 0.5 * spec.track_width
    for label, (x, y) in zip(
            (PartLabel.WheelFL, PartLabel.WheelFR, PartLabel.WheelRL, PartLabel.WheelRR),
            ((axles[0], ht), (axles[0], -ht), (axles[1], ht), (axles[1], -ht))):
        comps.append(_Cylinder([x, y, r], r, spec.wheel_width, label))
    return comps


def _surface_area_estimate(comp, rng):
    if isinstance(comp, _Surface) and comp.reject is not None:
        ab = rng.random((4000, 2))
        probe = comp.origin + ab[:, :1] * comp.u + ab[:, 1:] * comp.v
        return comp.area() * (1.0 - comp.reject(probe).mean())
    return comp.area()


def generate(spec: CarSpec, gaussian_scale=0.7, opacity=0.95):
    """Point-cloud training sample plus its Gaussian twin."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    comps = _components(spec)
    areas = np.array([_surface_area_estimate(c, np.random.default_rng(i)) for i, c in enumerate(comps)])
    counts = np.maximum(np.round(spec.n_points * areas / areas.sum()).astype(int), 64)
    pts, cols, labs, spacing = [], [], [], []
    for comp, n, area in zip(comps, counts, areas):
        p, c = comp.sample(rng, int(n))
        pts.append(p)
        cols.append(c)
        labs.append(np.full(len(p), int(comp.label), dtype=np.uint8))
        spacing.append(np.full(len(p), np.sqrt(area / n)))
    positions = np.concatenate(pts)
    colors = _quantize(np.concatenate(cols))
    labels = np.concatenate(labs)
    spacing = np.concatenate(spacing)
    if spec.mirrored:
        positions = positions * np.array([1.0, -1.0, 1.0])
        swap = np.array([int(MIRROR_SWAP[PartLabel(i)]) for i in range(len(PartLabel))], dtype=np.uint8)
        labels = swap[labels]
    sample = TrainSample(positions, colors, labels, spec.kinematics(), name=f"car_{spec.seed}")
    sample.validate()
    n = len(positions)
    scales = np.repeat((gaussian_scale * spacing)[:, None], 3, axis=1)
    rot = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    asset = GaussianAsset(positions, scales, rot, np.full(n, opacity), colors, part_labels=labels)
    return sample, asset


# Documented sampling ranges for generate_suite.
SPEC_RANGES = {
    "length": (3.9, 4.9),
    "width": (1.72, 2.0),
    "body_height": (0.55, 0.75),
    "clearance": (0.13, 0.22),
    "cabin_length_frac": (0.45, 0.55),
    "cabin_height": (0.42, 0.6),
    "cabin_offset_frac": (-0.12, -0.04),
    "wheel_radius": (0.3, 0.37),
    "wheel_width": (0.2, 0.26),
    "front_overhang": (0.8, 1.0),
    "wheelbase_frac": (0.58, 0.63),
    "door_gap": (0.1, 0.2),
    "door_length": (0.9, 1.15),
}


def random_spec(rng, seed, n_points=20000) -> CarSpec:
    for _ in range(100):
        u = {k: float(rng.uniform(*v)) for k, v in SPEC_RANGES.items()}
        length = u["length"]
        width = u["width"]
        wheel_w = u["wheel_width"]
        front = 0.5 * length - u["front_overhang"]
        spec = CarSpec(
            length=length, width=width, body_height=u["body_height"], clearance=u["clearance"],
            cabin_length=u["cabin_length_frac"] * length, cabin_height=u["cabin_height"],
            cabin_offset=u["cabin_offset_frac"] * length, cabin_inset=0.12,
            wheel_radius=u["wheel_radius"], wheel_width=wheel_w, front_axle_x=front,
            wheelbase=u["wheelbase_frac"] * length, track_width=width - wheel_w - 0.04,
            door_gap=u["door_gap"], door_length=u["door_length"],
            color_index=int(rng.integers(len(PALETTE))), n_points=n_points, seed=seed)
        try:
            spec.validate()
        except SpecError:
            continue
        return spec
    raise SpecError("could not draw a valid spec")


def save_sample(sample: TrainSample, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_point_ply(directory / "points.ply", sample.positions, sample.colors)
    sample.labels.astype(np.uint8).tofile(directory / "labels.u8")
    sample.kin.save(directory / "kin.json")


def load_sample(directory) -> TrainSample:
    directory = Path(directory)
    positions, colors = read_point_ply(directory / "points.ply")
    labels = np.fromfile(directory / "labels.u8", dtype=np.uint8)
    if len(labels) != len(positions):
        raise ValueError(f"{directory}: {len(labels)} labels for {len(positions)} points")
    return TrainSample(positions, colors, labels, KinematicParams.load(directory / "kin.json"),
                       name=directory.name)


_POINT_DTYPE = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                         ("red", "u1"), ("green", "u1"), ("blue", "u1")])


def write_point_ply(path, positions, colors):
    rec = np.empty(len(positions), dtype=_POINT_DTYPE)
    for i, c in enumerate("xyz"):
        rec[c] = positions[:, i]
    rgb = np.clip(np.rint(np.asarray(colors) * 255.0), 0, 255).astype(np.uint8)
    for i, c in enumerate(("red", "green", "blue")):
        rec[c] = rgb[:, i]
    header = ("ply\nformat binary_little_endian 1.0\n"
              f"element vertex {len(rec)}\n"
              "property float x\nproperty float y\nproperty float z\n"
              "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(rec.tobytes())


def read_point_ply(path):
    with open(path, "rb") as fh:
        header = b""
        while not header.endswith(b"end_header\n"):
            line = fh.readline()
            if not line:
                raise ValueError(f"{path}: unterminated PLY header")
            header += line
        body = fh.read()
    count = int([l for l in header.decode().splitlines() if l.startswith("element vertex")][0].split()[2])
    rec = np.frombuffer(body, dtype=_POINT_DTYPE, count=count)
    positions = np.stack([rec[c].astype(np.float64) for c in "xyz"], axis=1)
    colors = np.stack([rec[c] for c in ("red", "green", "blue")], axis=1).astype(np.float64) / 255.0
    return positions, colors


def generate_suite(directory, count, seed=0, n_points=20000, with_gaussians=True, degrade_cfg=None):
    """Write ``count`` samples in the dataset layout plus a manifest of specs."""
    if count < 1:
        raise ValueError("count must be >= 1")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(count):
        spec = random_spec(rng, seed=int(rng.integers(2 ** 31)), n_points=n_points)
        sample, asset = generate(spec)
        name = f"car_{i:03d}"
        sample.name = name
        out = directory / name
        save_sample(sample, out)
        if with_gaussians:
            save_asset(asset, out / "gaussians.ply")
            degraded = degrade(asset, sample, DegradeConfig(**(degrade_cfg or {})), seed=spec.seed)
            save_asset(degraded, out / "degraded.ply")
        (out / "spec.json").write_text(json.dumps(asdict(spec), indent=2))
        specs.append({"name": name, **asdict(spec)})
    manifest = {"seed": seed, "count": count, "ranges": SPEC_RANGES, "samples": specs}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return directory


@dataclass(frozen=True)
class DegradeConfig:
    """Defects mimicking a generated asset: boundary bleeding, floaters and
    imperfect clusters."""

    floater_fraction: float = 0.05
    floater_distance: tuple = (0.06, 0.25)
    bleed_width: float = 0.06      # boundary band, asset units
    bleed_factor: float = 2.5      # scale growth of band Gaussians
    misassign_fraction: float = 0.3  # of body Gaussians in a band around each door
    body_clusters: int = 6


def degrade(asset: GaussianAsset, sample: TrainSample, cfg: DegradeConfig = DegradeConfig(), seed=0):
    """Copy of ``asset`` with boundary defects and simulated cluster ids.

    Part labels stay the true labels of each Gaussian's origin.
    """
    rng = np.random.default_rng(seed + 7919)
    means = np.array(asset.means)
    scales = np.array(asset.scales)
    labels = asset.part_labels.astype(np.int64)
    kin = sample.kin
    clusters = np.zeros(len(asset), dtype=np.int64)
    # body clusters: slabs along x
    body = labels == PartLabel.Body
    edges = np.quantile(means[body, 0], np.linspace(0, 1, cfg.body_clusters + 1)[1:-1])
    clusters[body] = np.searchsorted(edges, means[body, 0])
    next_id = cfg.body_clusters
    part_cluster = {}
    for part in MOVABLE_PARTS:
        part_cluster[part] = next_id
        clusters[labels == part] = next_id
        next_id += 1

    center = 0.5 * (means.min(0) + means.max(0))
    for part in MOVABLE_PARTS:
        idx = np.flatnonzero(labels == part)
        pm = means[idx]
        lo, hi = pm.min(0), pm.max(0)
        if part in DOORS:
            band = (np.minimum(pm[:, 0] - lo[0], hi[0] - pm[:, 0]) < cfg.bleed_width) | \
                   (np.minimum(pm[:, 2] - lo[2], hi[2] - pm[:, 2]) < cfg.bleed_width)
        else:
            j = kin.joint(part)
            rho = np.hypot(pm[:, 0] - j[0], pm[:, 2] - j[2])
            band = rho > rho.max() - cfg.bleed_width
        grow = scales[idx[band]] * cfg.bleed_factor
        scales[idx[band]] = grow
        n_float = max(1, int(round(cfg.floater_fraction * len(idx))))
        chosen = rng.choice(idx, n_float, replace=False)
        out = means[chosen] - center
        out[:, 2] = 0.0
        out /= np.linalg.norm(out, axis=1, keepdims=True) + 1e-9
        jitter = rng.normal(size=(n_float, 3))
        jitter /= np.linalg.norm(jitter, axis=1, keepdims=True)
        direction = out + 0.7 * jitter
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        dist = rng.uniform(*cfg.floater_distance, size=n_float)
        means[chosen] = means[chosen] + direction * dist[:, None]

    # body Gaussians hugging a door edge end up in the door cluster
    for part in DOORS:
        pm = means[labels == part]
        lo, hi = pm.min(0), pm.max(0)
        near = body & (means[:, 0] > lo[0] - 0.08) & (means[:, 0] < hi[0] + 0.08) & \
            (means[:, 2] > lo[2] - 0.08) & (means[:, 2] < hi[2] + 0.08) & \
            (np.abs(means[:, 1] - pm[:, 1].mean()) < 0.05)
        near &= ~((means[:, 0] > lo[0]) & (means[:, 0] < hi[0]) & (means[:, 2] > lo[2]) & (means[:, 2] < hi[2]))
        cand = np.flatnonzero(near)
        if len(cand):
            take = rng.random(len(cand)) < cfg.misassign_fraction
            clusters[cand[take]] = part_cluster[part]
    return asset.replace(means=means, scales=scales, cluster_ids=clusters)


# --- refinement fixture ---------------------------------------------------

FLOATER_PALETTE = np.array([[0.8, 0.2, 0.2], [0.2, 0.7, 0.3], [0.2, 0.3, 0.8],
                            [0.8, 0.8, 0.2], [0.6, 0.3, 0.7], [0.3, 0.7, 0.7]])


@dataclass
class FloaterFixture:
    clean: GaussianAsset
    part: GaussianAsset      # clean geometry with floaters displaced outward
    floaters: np.ndarray     # indices of the displaced Gaussians
    masks: np.ndarray        # (V, H, W) uint8 from the clean part
    cameras: list


def floater_fixture(n=300, sigma=0.05, half=(0.4, 0.25, 0.2), floater_fraction=0.05,
                    displacement=(0.3, 0.6), views=8, size=64, alpha_threshold=0.5, seed=0):
    """Cuboid part with a flat colour per face; a fraction of its Gaussians is
    pushed outward along their direction from the center."""
    from .render.camera import Camera
    from .render.raster import render

    rng = np.random.default_rng(seed)
    half = np.asarray(half, dtype=np.float64)
    face = rng.integers(0, 6, n)
    uv = rng.uniform(-1, 1, (n, 2))
    pts = np.zeros((n, 3))
    for f in range(6):
        ax = f // 2
        on = face == f
        other = [i for i in range(3) if i != ax]
        pts[on, ax] = (1 if f % 2 else -1) * half[ax]
        pts[on, other[0]] = uv[on, 0] * half[other[0]]
        pts[on, other[1]] = uv[on, 1] * half[other[1]]
    clean = GaussianAsset(pts, np.full((n, 3), sigma), np.tile([1.0, 0, 0, 0], (n, 1)),
                          np.full(n, 0.9), FLOATER_PALETTE[face])
    k = max(1, int(round(floater_fraction * n)))
    fl = rng.choice(n, k, replace=False)
    out = pts[fl] / np.linalg.norm(pts[fl], axis=1, keepdims=True)
    moved = pts.copy()
    moved[fl] += out * rng.uniform(*displacement, (k, 1))
    angles = np.linspace(0, 2 * np.pi, views, endpoint=False)
    cams = [Camera.look_at([2.2 * np.cos(a), 2.2 * np.sin(a), 0.8], [0, 0, 0], size, size) for a in angles]
    masks = np.stack([render(clean, c).alpha >= alpha_threshold for c in cams]).astype(np.uint8)
    return FloaterFixture(clean, clean.replace(means=moved), np.sort(fl), masks, cams)
