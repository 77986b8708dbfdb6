from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from ..asset import MOVABLE_PARTS, AssetError, GaussianAsset, PartLabel
from .camera import Camera
from .raster import render


def make_part_masks(asset: GaussianAsset, labels: Iterable[PartLabel] = MOVABLE_PARTS,
                    cameras: Sequence[Camera] = (), alpha_threshold=0.5):
    """Binary masks per part and view: render each part alone, threshold alpha.

    Returns ``{part: uint8 array (views, H, W)}`` with values in {0, 1}.
    """
    if asset.part_labels is None:
        raise AssetError("asset has no part labels")
    if not 0.0 < alpha_threshold < 1.0:
        raise ValueError("alpha_threshold must lie in (0, 1)")
    masks = {}
    for part in labels:
        part = PartLabel(part)
        idx = np.flatnonzero(asset.part_labels == part)
        if len(idx) == 0:
            raise AssetError(f"part {part.name} has no Gaussians")
        sub = asset.take(idx)
        masks[part] = np.stack([
            (render(sub, cam).alpha >= alpha_threshold).astype(np.uint8) for cam in cameras
        ]) if len(cameras) else np.zeros((0, 0, 0), dtype=np.uint8)
    return masks
