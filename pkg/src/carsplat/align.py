"""Match externally supplied Gaussian clusters to predicted part labels.

Each cluster goes to the movable label that covers the largest fraction of
its Gaussians, provided that fraction reaches ``min_overlap``. Everything
not selected stays with the body.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .asset import MOVABLE_PARTS, AssetError, GaussianAsset, PartLabel


class MissingPartsError(AssetError):
    def __init__(self, missing):
        self.missing = tuple(PartLabel(p) for p in missing)
        names = ", ".join(p.name for p in self.missing)
        super().__init__(f"no cluster selected for: {names}")


@dataclass(frozen=True)
class ClusterStat:
    cluster: int
    label: int
    matched: int
    size: int
    overlap: float
    low_confidence: bool = False


@dataclass
class PartSelection:
    clusters: Dict[PartLabel, Tuple[int, ...]]
    stats: List[ClusterStat] = field(default_factory=list)
    min_overlap: float = 0.5

    @property
    def missing(self):
        return tuple(p for p in MOVABLE_PARTS if not self.clusters.get(p))

    def part_of_cluster(self):
        out = {}
        for part, ids in self.clusters.items():
            for c in ids:
                out[int(c)] = PartLabel(part)
        return out

    def to_dict(self):
        return {
            "min_overlap": self.min_overlap,
            "clusters": {p.name: [int(c) for c in self.clusters.get(p, ())] for p in MOVABLE_PARTS},
            "missing": [p.name for p in self.missing],
            "stats": [{"cluster": s.cluster, "label": PartLabel(s.label).name, "matched": s.matched,
                       "size": s.size, "overlap": s.overlap, "low_confidence": s.low_confidence}
                      for s in self.stats],
        }

    @classmethod
    def from_dict(cls, d):
        clusters = {PartLabel[name]: tuple(int(c) for c in ids) for name, ids in d["clusters"].items()}
        stats = [ClusterStat(s["cluster"], int(PartLabel[s["label"]]), s["matched"], s["size"],
                             s["overlap"], s["low_confidence"]) for s in d.get("stats", [])]
        return cls(clusters, stats, d.get("min_overlap", 0.5))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def align(cluster_ids, predicted_labels, min_overlap=0.5) -> PartSelection:
    cluster_ids = np.asarray(cluster_ids).ravel()
    labels = np.asarray(predicted_labels).ravel().astype(np.int64)
    if len(cluster_ids) != len(labels):
        raise ValueError(f"{len(cluster_ids)} cluster ids but {len(labels)} labels")
    if not 0 < min_overlap <= 1:
        raise ValueError("min_overlap must lie in (0, 1]")
    if len(labels) and (labels.min() < 0 or labels.max() >= len(PartLabel)):
        raise ValueError("predicted label outside the PartLabel range")
    uniq, inverse = np.unique(cluster_ids, return_inverse=True)
    counts = np.zeros((len(uniq), len(PartLabel)), dtype=np.int64)
    np.add.at(counts, (inverse, labels), 1)
    sizes = counts.sum(1)
    movable = np.array([int(p) for p in MOVABLE_PARTS])

    chosen: Dict[PartLabel, List[int]] = {p: [] for p in MOVABLE_PARTS}
    stats = []
    for row, cid in enumerate(uniq):
        c = counts[row, movable]
        best = c.max()
        if best == 0:
            continue
        # equal fractions within a cluster mean equal counts, so the count
        # tie-break cannot separate them and the lowest ordinal wins
        tied = movable[c == best]
        label = int(tied.min())
        overlap = best / sizes[row]
        if overlap < min_overlap:
            continue
        chosen[PartLabel(label)].append(int(cid))
        stats.append(ClusterStat(int(cid), label, int(best), int(sizes[row]), float(overlap),
                                 len(tied) > 1))
    clusters = {p: tuple(ids) for p, ids in chosen.items()}
    return PartSelection(clusters, stats, min_overlap)


def extract_parts(asset: GaussianAsset, selection: PartSelection) -> Dict[PartLabel, GaussianAsset]:
    """Split ``asset`` into the six movable parts and the residual body.

    Returned parts carry their part label in ``part_labels``; together they
    hold every input Gaussian exactly once.
    """
    if asset.cluster_ids is None:
        raise AssetError("asset has no cluster ids")
    if selection.missing:
        raise MissingPartsError(selection.missing)
    assignment = np.full(len(asset), int(PartLabel.Body), dtype=np.int64)
    for part, ids in selection.clusters.items():
        assignment[np.isin(asset.cluster_ids, np.asarray(ids, dtype=np.int64))] = int(part)
    out = {}
    for part in PartLabel:
        idx = np.flatnonzero(assignment == int(part))
        if len(idx) == 0:
            raise MissingPartsError([part]) if part != PartLabel.Body else AssetError("body is empty")
        piece = asset.take(idx)
        out[part] = piece.replace(part_labels=np.full(len(idx), int(part), dtype=np.uint8))
    return out
