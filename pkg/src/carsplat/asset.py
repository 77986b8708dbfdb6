"""Gaussian-splat assets, part labels, and splat PLY I/O.

Assets are stored struct-of-arrays with read-only numpy buffers. Every
transform returns a new asset.
"""

from __future__ import annotations

import enum
import logging
import os
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

SH_C0 = 0.28209479177387814

# Opacities are clipped this far from {0, 1} before taking the logit on save.
_OPACITY_EPS = 1e-7


class PartLabel(enum.IntEnum):
    Body = 0
    FrontLeftDoor = 1
    FrontRightDoor = 2
    WheelFL = 3
    WheelFR = 4
    WheelRL = 5
    WheelRR = 6


MOVABLE_PARTS = tuple(p for p in PartLabel if p != PartLabel.Body)
DOORS = (PartLabel.FrontLeftDoor, PartLabel.FrontRightDoor)
WHEELS = (PartLabel.WheelFL, PartLabel.WheelFR, PartLabel.WheelRL, PartLabel.WheelRR)


class AssetError(ValueError):
    pass


class PlyFormatError(AssetError):
    pass


class EmptySubsetError(AssetError):
    pass


@dataclass(frozen=True)
class Gaussian:
    mean: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: float
    color: np.ndarray


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class GaussianAsset:
    means: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    part_labels: Optional[np.ndarray] = None
    cluster_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "means", _frozen(self.means, np.float64).reshape(-1, 3))
        n = len(self.means)
        set_(self, "scales", _frozen(self.scales, np.float64).reshape(n, 3))
        set_(self, "rotations", _frozen(self.rotations, np.float64).reshape(n, 4))
        set_(self, "opacities", _frozen(self.opacities, np.float64).reshape(n))
        set_(self, "colors", _frozen(self.colors, np.float64).reshape(n, 3))
        if self.part_labels is not None:
            set_(self, "part_labels", _frozen(self.part_labels, np.uint8))
            if self.part_labels.shape != (n,):
                raise AssetError(f"part_labels has length {len(self.part_labels)}, expected {n}")
            if n and self.part_labels.max() >= len(PartLabel):
                raise AssetError("part_labels contains values outside the PartLabel range")
        if self.cluster_ids is not None:
            cid = np.asarray(self.cluster_ids)
            if n and cid.min() < 0:
                raise AssetError("cluster_ids must be non-negative")
            set_(self, "cluster_ids", _frozen(cid, np.int64))
            if self.cluster_ids.shape != (n,):
                raise AssetError(f"cluster_ids has length {len(self.cluster_ids)}, expected {n}")
        self.validate()

    def validate(self):
        for name in ("means", "scales", "rotations", "opacities", "colors"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                bad = int(np.argwhere(~np.isfinite(arr.reshape(len(self), -1)))[0, 0])
                raise AssetError(f"non-finite {name} at gaussian {bad}")
        if len(self) == 0:
            return
        if np.any(self.scales <= 0):
            raise AssetError(f"non-positive scale at gaussian {int(np.argwhere(self.scales <= 0)[0, 0])}")
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise AssetError(f"non-unit rotation at gaussian {int(np.argmax(np.abs(norms - 1.0)))}")
        if np.any((self.opacities < 0) | (self.opacities > 1)):
            raise AssetError("opacity outside [0, 1]")
        if np.any((self.colors < 0) | (self.colors > 1)):
            raise AssetError("color outside [0, 1]")

    def __len__(self):
        return len(self.means)

    def gaussian(self, i) -> Gaussian:
        return Gaussian(self.means[i], self.scales[i], self.rotations[i],
                        float(self.opacities[i]), self.colors[i])

    @classmethod
    def from_gaussians(cls, gaussians: Sequence[Gaussian], part_labels=None, cluster_ids=None):
        return cls(
            means=[g.mean for g in gaussians],
            scales=[g.scale for g in gaussians],
            rotations=[g.rotation for g in gaussians],
            opacities=[g.opacity for g in gaussians],
            colors=[g.color for g in gaussians],
            part_labels=part_labels,
            cluster_ids=cluster_ids,
        )

    def replace(self, **changes) -> "GaussianAsset":
        fields = dict(means=self.means, scales=self.scales, rotations=self.rotations,
                      opacities=self.opacities, colors=self.colors,
                      part_labels=self.part_labels, cluster_ids=self.cluster_ids)
        fields.update(changes)
        return GaussianAsset(**fields)

    def take(self, idx) -> "GaussianAsset":
        idx = np.asarray(idx)
        return GaussianAsset(
            self.means[idx], self.scales[idx], self.rotations[idx],
            self.opacities[idx], self.colors[idx],
            None if self.part_labels is None else self.part_labels[idx],
            None if self.cluster_ids is None else self.cluster_ids[idx],
        )

    def extent(self) -> float:
        """Diagonal of the bounding box of the means."""
        if len(self) == 0:
            return 0.0
        return float(np.linalg.norm(self.means.max(0) - self.means.min(0)))


def concatenate(assets: Sequence[GaussianAsset]) -> GaussianAsset:
    assets = list(assets)
    if not assets:
        raise AssetError("nothing to concatenate")

    def annot(name):
        cols = [getattr(a, name) for a in assets]
        if any(c is None for c in cols):
            return None
        return np.concatenate(cols)

    return GaussianAsset(
        np.concatenate([a.means for a in assets]),
        np.concatenate([a.scales for a in assets]),
        np.concatenate([a.rotations for a in assets]),
        np.concatenate([a.opacities for a in assets]),
        np.concatenate([a.colors for a in assets]),
        annot("part_labels"),
        annot("cluster_ids"),
    )


def to_point_cloud(asset: GaussianAsset):
    """Positions and view-independent colors, one point per Gaussian, in order."""
    if len(asset) == 0:
        raise AssetError("cannot convert an empty asset")
    return np.array(asset.means), np.array(asset.colors)


def subset(asset: GaussianAsset, predicate: Callable[[np.ndarray], np.ndarray], by: str = "label") -> GaussianAsset:
    """Keep the Gaussians whose label (or cluster id) satisfies ``predicate``.

    ``predicate`` receives the whole annotation column and returns a boolean mask.
    """
    if by == "label":
        column = asset.part_labels
    elif by == "cluster":
        column = asset.cluster_ids
    else:
        raise ValueError(f"unknown annotation {by!r}")
    if column is None:
        raise AssetError(f"asset has no {by} annotation")
    keep = np.asarray(predicate(column), dtype=bool)
    if not keep.any():
        raise EmptySubsetError(f"no Gaussian matches the {by} predicate")
    return asset.take(np.flatnonzero(keep))


def select_labels(asset: GaussianAsset, *labels: PartLabel) -> GaussianAsset:
    wanted = np.array([int(l) for l in labels])
    return subset(asset, lambda col: np.isin(col, wanted))


# --- PLY -----------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}

_REQUIRED = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
             "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]


def record_dtype(with_labels: bool, with_clusters: bool) -> np.dtype:
    fields = [(name, "<f4") for name in _REQUIRED]
    if with_labels:
        fields.append(("part_label", "u1"))
    if with_clusters:
        fields.append(("cluster_id", "<u4"))
    return np.dtype(fields)


def _header(n, dtype: np.dtype) -> bytes:
    inv = {"u1": "uchar", "f4": "float", "u4": "uint"}
    lines = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    for name in dtype.names:
        lines.append(f"property {inv[dtype[name].str[1:]]} {name}")
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def save_asset(asset: GaussianAsset, path) -> None:
    dtype = record_dtype(asset.part_labels is not None, asset.cluster_ids is not None)
    rec = np.empty(len(asset), dtype=dtype)
    for i, c in enumerate("xyz"):
        rec[c] = asset.means[:, i]
    dc = (asset.colors - 0.5) / SH_C0
    for i in range(3):
        rec[f"f_dc_{i}"] = dc[:, i]
    o = np.clip(asset.opacities, _OPACITY_EPS, 1.0 - _OPACITY_EPS)
    rec["opacity"] = np.log(o) - np.log1p(-o)
    log_s = np.log(asset.scales)
    for i in range(3):
        rec[f"scale_{i}"] = log_s[:, i]
    for i in range(4):
        rec[f"rot_{i}"] = asset.rotations[:, i]
    if asset.part_labels is not None:
        rec["part_label"] = asset.part_labels
    if asset.cluster_ids is not None:
        if asset.cluster_ids.size and asset.cluster_ids.max() > np.iinfo(np.uint32).max:
            raise AssetError("cluster id does not fit in uint32")
        rec["cluster_id"] = asset.cluster_ids
    with open(path, "wb") as fh:
        fh.write(_header(len(asset), dtype))
        fh.write(rec.tobytes())


def _parse_header(fh):
    first = fh.readline()
    if first.strip() != b"ply":
        raise PlyFormatError("missing 'ply' magic")
    count = None
    props = []
    in_vertex = False
    fmt = None
    while True:
        line = fh.readline()
        if not line:
            raise PlyFormatError("unterminated header")
        tok = line.decode("ascii", errors="replace").split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "end_header":
            break
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            if count is not None and in_vertex:
                raise PlyFormatError("only a single vertex element is supported")
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                try:
                    count = int(tok[2])
                except (IndexError, ValueError):
                    raise PlyFormatError(f"bad element line: {line!r}") from None
            else:
                raise PlyFormatError(f"unsupported element {tok[1]!r}")
        elif tok[0] == "property":
            if tok[1] == "list":
                raise PlyFormatError("list properties are not supported")
            if tok[1] not in _PLY_TYPES:
                raise PlyFormatError(f"unknown property type {tok[1]!r}")
            props.append((tok[2], "<" + _PLY_TYPES[tok[1]]))
        else:
            raise PlyFormatError(f"unexpected header line: {line!r}")
    if fmt != "binary_little_endian":
        raise PlyFormatError(f"unsupported format {fmt!r}; expected binary_little_endian")
    if count is None:
        raise PlyFormatError("no vertex element")
    return count, np.dtype(props)


def load_asset(path) -> GaussianAsset:
    with open(path, "rb") as fh:
        count, dtype = _parse_header(fh)
        body = fh.read()
    missing = [n for n in _REQUIRED if n not in dtype.names]
    if missing:
        raise PlyFormatError(f"missing vertex attributes: {', '.join(missing)}")
    if len(body) != count * dtype.itemsize:
        raise PlyFormatError(
            f"vertex data holds {len(body)} bytes, header declares {count} x {dtype.itemsize}")
    rec = np.frombuffer(body, dtype=dtype, count=count)
    extra = [n for n in dtype.names if n.startswith("f_rest_")]
    if extra:
        logger.warning("dropping %d higher-order SH coefficients from %s", len(extra), os.fspath(path))

    def cols(names):
        return np.stack([rec[n].astype(np.float64) for n in names], axis=1)

    raw = cols(_REQUIRED)
    bad = ~np.all(np.isfinite(raw), axis=1)
    if bad.any():
        raise PlyFormatError(f"non-finite value at vertex {int(np.flatnonzero(bad)[0])}")

    means = raw[:, 0:3]
    colors = np.clip(0.5 + raw[:, 3:6] * SH_C0, 0.0, 1.0)
    opacities = 1.0 / (1.0 + np.exp(-raw[:, 6]))
    scales = np.exp(raw[:, 7:10])
    rot = raw[:, 10:14]
    norms = np.linalg.norm(rot, axis=1)
    if np.any(norms == 0):
        raise PlyFormatError(f"zero quaternion at vertex {int(np.flatnonzero(norms == 0)[0])}")
    if np.any(scales <= 0) or not np.all(np.isfinite(scales)):
        idx = np.flatnonzero(np.any((scales <= 0) | ~np.isfinite(scales), axis=1))[0]
        raise PlyFormatError(f"scale out of range at vertex {int(idx)}")
    rot = rot / norms[:, None]

    labels = None
    if "part_label" in dtype.names:
        labels = rec["part_label"].astype(np.int64)
        out = (labels < 0) | (labels >= len(PartLabel))
        if out.any():
            raise PlyFormatError(f"part_label out of range at vertex {int(np.flatnonzero(out)[0])}")
    clusters = None
    if "cluster_id" in dtype.names:
        clusters = rec["cluster_id"].astype(np.int64)
        if np.any(clusters < 0):
            raise PlyFormatError(f"negative cluster_id at vertex {int(np.flatnonzero(clusters < 0)[0])}")
    return GaussianAsset(means, scales, rot, opacities, colors, labels, clusters)


def save_clusters(cluster_ids, path) -> None:
    np.asarray(cluster_ids, dtype="<u4").tofile(path)


def load_clusters(path, expected: Optional[int] = None) -> np.ndarray:
    ids = np.fromfile(path, dtype="<u4").astype(np.int64)
    if expected is not None and len(ids) != expected:
        raise AssetError(f"{os.fspath(path)} holds {len(ids)} cluster ids, asset has {expected} Gaussians")
    return ids
