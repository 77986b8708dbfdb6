"""Per-Gaussian labels and kinematics for a Gaussian asset."""

from __future__ import annotations

import numpy as np

from .. import sampling
from ..asset import GaussianAsset, to_point_cloud
from ..kinematics import KinematicParams
from .model import KinNet, SegNet


class MissingWeightsError(RuntimeError):
    pass


def network_input(asset: GaussianAsset, n_points):
    """Fixed-size point subset: FPS from index 0 when the asset is large
    enough, otherwise every Gaussian repeated cyclically."""
    xyz, rgb = to_point_cloud(asset)
    if len(xyz) == 0:
        raise ValueError("empty asset")
    if len(xyz) >= n_points:
        idx = sampling.fps(xyz, n_points, 0)
    else:
        idx = np.resize(np.arange(len(xyz)), n_points)
    return idx, xyz[idx], rgb[idx]


def infer_labels(asset: GaussianAsset, seg_net: SegNet, k=3):
    if seg_net is None:
        raise MissingWeightsError("segmentation weights are not loaded")
    idx, xyz, rgb = network_input(asset, seg_net.cfg.n_points)
    pred = seg_net.predict(xyz, rgb)
    sampled = sampling.PointSet(xyz, rgb, pred)
    return sampling.knn_propagate(sampled, asset.means, k=k).astype(np.uint8)


def infer_kinematics(asset: GaussianAsset, kin_net: KinNet) -> KinematicParams:
    if kin_net is None:
        raise MissingWeightsError("kinematics weights are not loaded")
    _, xyz, rgb = network_input(asset, kin_net.cfg.n_points)
    return KinematicParams.from_vector(kin_net.forward(xyz, rgb))


def load_seg(directory) -> SegNet:
    try:
        return SegNet.load(directory)
    except FileNotFoundError as e:
        raise MissingWeightsError(str(e)) from e


def load_kin(directory) -> KinNet:
    try:
        return KinNet.load(directory)
    except FileNotFoundError as e:
        raise MissingWeightsError(str(e)) from e
