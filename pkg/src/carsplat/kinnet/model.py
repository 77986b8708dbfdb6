"""Part segmentation and kinematic regression networks."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np

from ..asset import PartLabel
from .layers import MLP, FeaturePropagation, GlobalAbstraction, Params, SetAbstraction

N_CLASSES = len(PartLabel)
N_POINTS = 8192
N_KIN = 16


@dataclass
class NetConfig:
    n_points: int = N_POINTS
    # Coordinates are centered on the bounding-box center and divided by this.
    unit: float = 2.5
    sa1_centers: int = 512
    sa1_scales: List[Tuple[float, int, List[int]]] = field(
        default_factory=lambda: [(0.1, 16, [32, 48]), (0.2, 32, [32, 64])])
    sa1_gamma: int = 96
    sa2_centers: int = 128
    # the wide second scale spans most of a car, enough to tell a left wheel
    # from its mirror image on the right under arbitrary yaw
    sa2_scales: List[Tuple[float, int, List[int]]] = field(
        default_factory=lambda: [(0.25, 16, [96, 96]), (1.0, 32, [96, 128])])
    sa2_gamma: int = 192
    fp2_widths: List[int] = field(default_factory=lambda: [128])
    fp1_widths: List[int] = field(default_factory=lambda: [64, 64])
    # per-point MLP on the raw point features (rgb, xyz) feeding the last propagation
    point_widths: List[int] = field(default_factory=lambda: [64, 64])
    global_widths: List[int] = field(default_factory=lambda: [256])
    head_widths: List[int] = field(default_factory=lambda: [128, 64])

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("sa1_scales", "sa2_scales"):
            if key in d:
                d[key] = [(float(r), int(k), list(w)) for r, k, w in d[key]]
        return cls(**d)


def micro_config(**kw):
    """Tiny architecture for gradient checks on a few dozen points."""
    cfg = NetConfig(n_points=64, sa1_centers=16, sa1_scales=[(0.3, 4, [4, 5]), (0.6, 6, [4, 6])],
                    sa1_gamma=6, sa2_centers=4, sa2_scales=[(0.6, 4, [5, 6]), (1.2, 8, [5, 4])],
                    sa2_gamma=7, fp2_widths=[6], fp1_widths=[5, 5], global_widths=[8],
                    head_widths=[6, 5], point_widths=[4])
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg


def canonical_order(positions, colors):
    """Point order that depends only on the point values, never on input order.

    Sorting by a hash of each point's bytes gives a pseudo-random but
    reproducible order; identical points hash identically.
    """
    rows = np.ascontiguousarray(np.concatenate([positions, colors], axis=1), dtype=np.float64)
    words = rows.view(np.uint64)
    h = np.full(len(rows), 0xCBF29CE484222325, dtype=np.uint64)
    prime = np.uint64(0x100000001B3)
    with np.errstate(over="ignore"):
        for c in range(words.shape[1]):
            h = (h ^ words[:, c]) * prime
            h ^= h >> np.uint64(29)
    return np.lexsort(tuple(rows.T[::-1]) + (h,))


def normalize_points(positions, cfg: NetConfig):
    lo = positions.min(0)
    hi = positions.max(0)
    center = 0.5 * (lo + hi)
    return (positions - center) / cfg.unit, center


class _Backbone:
    def __init__(self, cfg: NetConfig, params: Params, rng):
        self.cfg = cfg
        self.sa1 = SetAbstraction(params, "sa1", cfg.sa1_centers, cfg.sa1_scales, 3, cfg.sa1_gamma, rng)
        self.sa2 = SetAbstraction(params, "sa2", cfg.sa2_centers, cfg.sa2_scales, cfg.sa1_gamma,
                                  cfg.sa2_gamma, rng)


class _Net:
    kind = ""

    def __init__(self, cfg: NetConfig = None, seed=0, dtype=np.float32):
        self.cfg = cfg or NetConfig()
        self.seed = seed
        self.params = Params(dtype)
        rng = np.random.default_rng(seed)
        self._build(rng)
        self.params.astype(dtype)

    @property
    def dtype(self):
        return self.params.dtype

    def _prepare(self, positions, colors):
        positions = np.asarray(positions, dtype=np.float64)
        if len(positions) == 0:
            raise ValueError("empty point set")
        colors = np.asarray(colors, dtype=np.float64)
        order = canonical_order(positions, colors)
        xyz, center = normalize_points(positions[order], self.cfg)
        return order, xyz, colors[order].astype(self.dtype), center

    # weights I/O: flat float32 blob plus a JSON manifest
    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        offset = 0
        entries = []
        with open(directory / "weights.bin", "wb") as fh:
            for name in self.params:
                arr = np.ascontiguousarray(self.params.values[name], dtype="<f4")
                fh.write(arr.tobytes())
                entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
                offset += arr.nbytes
        manifest = {"kind": self.kind, "seed": self.seed, "config": asdict(self.cfg),
                    "dtype": "float32", "layers": entries}
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, directory, dtype=np.float32):
        directory = Path(directory)
        if not (directory / "manifest.json").exists():
            raise FileNotFoundError(f"no weights manifest in {directory}")
        manifest = json.loads((directory / "manifest.json").read_text())
        if manifest["kind"] != cls.kind:
            raise ValueError(f"{directory} holds {manifest['kind']} weights, expected {cls.kind}")
        net = cls(NetConfig.from_dict(manifest["config"]), manifest["seed"], dtype)
        blob = (directory / "weights.bin").read_bytes()
        for e in manifest["layers"]:
            n = int(np.prod(e["shape"])) if e["shape"] else 1
            arr = np.frombuffer(blob, dtype="<f4", count=n, offset=e["offset"]).reshape(e["shape"])
            net.params.values[e["name"]] = arr.astype(dtype)
        return net


class SegNet(_Net):
    """Per-point scores over the seven part labels."""

    kind = "seg"

    def _build(self, rng):
        cfg = self.cfg
        p = self.params
        self.backbone = _Backbone(cfg, p, rng)
        self.fp2 = FeaturePropagation(p, "fp2", cfg.sa2_gamma + cfg.sa1_gamma, cfg.fp2_widths, rng)
        self.fp1 = FeaturePropagation(p, "fp1", cfg.fp2_widths[-1] + 6, cfg.fp1_widths, rng,
                                      skip_channels=6, skip_widths=cfg.point_widths)
        self.head = MLP(p, "seg_head", [cfg.fp1_widths[-1], N_CLASSES], rng, last_relu=False)

    def forward(self, positions, colors):
        order, xyz, rgb, _ = self._prepare(positions, colors)
        b = self.backbone
        l1_xyz, l1 = b.sa1.forward(xyz, rgb)
        l2_xyz, l2 = b.sa2.forward(l1_xyz, l1)
        f1 = self.fp2.forward(l1_xyz, l2_xyz, l2, l1)
        skip0 = np.concatenate([rgb, xyz.astype(self.dtype)], axis=1)
        f0 = self.fp1.forward(xyz, l1_xyz, f1, skip0)
        scores = self.head.forward(f0)
        self._order = order
        out = np.empty_like(scores)
        out[order] = scores
        return out

    def backward(self, g_scores):
        """Accumulate parameter gradients given dL/d(scores) in input order."""
        g = np.asarray(g_scores, dtype=self.dtype)[self._order]
        g0 = self.head.backward(g)
        g_f1, _ = self.fp1.backward(g0)
        g_l2, g_l1 = self.fp2.backward(g_f1)
        g_l1 = g_l1 + self.backbone.sa2.backward(g_l2)
        self.backbone.sa1.backward(g_l1)

    def predict(self, positions, colors):
        return np.argmax(self.forward(positions, colors), axis=1)


class KinNet(_Net):
    """Global regression of 4 hinge coordinates and 12 joint coordinates."""

    kind = "kin"

    def _build(self, rng):
        cfg = self.cfg
        p = self.params
        self.backbone = _Backbone(cfg, p, rng)
        self.glob = GlobalAbstraction(p, "global", cfg.sa2_gamma, cfg.global_widths, rng)
        width = cfg.global_widths[-1]
        self.hinge_head = MLP(p, "hinge_head", [width] + cfg.head_widths + [4], rng, last_relu=False)
        self.joint_head = MLP(p, "joint_head", [width] + cfg.head_widths + [12], rng, last_relu=False)

    def forward_normalized(self, positions, colors):
        """Raw 16-vector in normalized units, plus the normalization center."""
        _, xyz, rgb, center = self._prepare(positions, colors)
        b = self.backbone
        l1_xyz, l1 = b.sa1.forward(xyz, rgb)
        l2_xyz, l2 = b.sa2.forward(l1_xyz, l1)
        g = self.glob.forward(l2_xyz, l2)
        out = np.concatenate([self.hinge_head.forward(g[None])[0], self.joint_head.forward(g[None])[0]])
        return out, center

    def backward(self, g_out):
        g_out = np.asarray(g_out, dtype=self.dtype)
        g = self.hinge_head.backward(g_out[None, :4])[0] + self.joint_head.backward(g_out[None, 4:])[0]
        g_l2 = self.glob.backward(g)
        g_l1 = self.backbone.sa2.backward(g_l2)
        self.backbone.sa1.backward(g_l1)

    def forward(self, positions, colors):
        """16-vector in asset units: hinge_fl, hinge_fr (xy), then four joints (xyz)."""
        out, center = self.forward_normalized(positions, colors)
        return denormalize_targets(out.astype(np.float64), center, self.cfg.unit)


def normalize_targets(vec16, center, unit):
    vec16 = np.asarray(vec16, dtype=np.float64)
    out = vec16.copy()
    out[:4] = ((vec16[:4].reshape(2, 2) - center[:2]) / unit).ravel()
    out[4:] = ((vec16[4:].reshape(4, 3) - center) / unit).ravel()
    return out


def denormalize_targets(vec16, center, unit):
    out = np.array(vec16, dtype=np.float64)
    out[:4] = (out[:4].reshape(2, 2) * unit + center[:2]).ravel()
    out[4:] = (out[4:].reshape(4, 3) * unit + center).ravel()
    return out
