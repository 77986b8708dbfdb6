"""Image similarity metrics and the evaluation report."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
from skimage.metrics import structural_similarity

INF = float("inf")


def _pair(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"image sizes differ: {a.shape} vs {b.shape}")
    if a.dtype == np.uint8 and b.dtype == np.uint8:
        return a.astype(np.float64), b.astype(np.float64), 255.0
    return a.astype(np.float64), b.astype(np.float64), 1.0


def psnr(a, b):
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images.

    uint8 inputs use a peak of 255, anything else a peak of 1.
    """
    x, y, peak = _pair(a, b)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return INF
    return 10.0 * math.log10(peak * peak / mse)


def ssim(a, b):
    x, y, peak = _pair(a, b)
    side = min(x.shape[0], x.shape[1])
    win = min(7, side if side % 2 else side - 1)
    if win < 3:
        return 1.0 if np.array_equal(x, y) else float("nan")
    channel_axis = -1 if x.ndim == 3 else None
    return float(structural_similarity(x, y, data_range=peak, channel_axis=channel_axis, win_size=win))


@dataclass
class MetricRow:
    vehicle: str
    state: str
    view: int
    metric: str
    value: float


@dataclass
class EvalReport:
    rows: List[MetricRow] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def add(self, vehicle, state, view, generated, reference):
        self.rows.append(MetricRow(vehicle, state, int(view), "psnr", psnr(generated, reference)))
        self.rows.append(MetricRow(vehicle, state, int(view), "ssim", ssim(generated, reference)))

    def metrics(self):
        return sorted({r.metric for r in self.rows})

    def values(self, metric, **where):
        return [r.value for r in self.rows if r.metric == metric
                and all(getattr(r, k) == v for k, v in where.items())]

    def mean(self, metric, **where):
        v = self.values(metric, **where)
        return float(np.mean(v)) if v else float("nan")

    def by_state(self) -> Dict[str, Dict[str, float]]:
        groups = defaultdict(lambda: defaultdict(list))
        for r in self.rows:
            groups[r.state][r.metric].append(r.value)
        return {s: {m: float(np.mean(v)) for m, v in ms.items()} for s, ms in groups.items()}

    def merge_csv(self, path):
        """Append externally computed rows (vehicle, state, view, metric, value)."""
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            need = {"vehicle", "state", "view", "metric", "value"}
            if reader.fieldnames is None or not need <= set(reader.fieldnames):
                raise ValueError(f"{path}: expected columns {sorted(need)}")
            for rec in reader:
                self.rows.append(MetricRow(rec["vehicle"], rec["state"], int(rec["view"]),
                                           rec["metric"], float(rec["value"])))

    def to_dict(self):
        def enc(x):
            return "inf" if x == INF else x

        return {
            "config": self.config,
            "means": {m: enc(self.mean(m)) for m in self.metrics()},
            "by_state": {s: {m: enc(v) for m, v in d.items()} for s, d in self.by_state().items()},
            "rows": [{"vehicle": r.vehicle, "state": r.state, "view": r.view, "metric": r.metric,
                      "value": enc(r.value)} for r in self.rows],
        }

    def save(self, json_path, csv_path=None):
        with open(json_path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
        if csv_path is not None:
            self.save_csv(csv_path)

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["vehicle", "state", "view", "metric", "value"])
            for r in self.rows:
                w.writerow([r.vehicle, r.state, r.view, r.metric, repr(float(r.value))])

    @classmethod
    def from_dict(cls, d):
        def dec(x):
            return INF if x == "inf" else float(x)

        rows = [MetricRow(r["vehicle"], r["state"], r["view"], r["metric"], dec(r["value"])) for r in d["rows"]]
        return cls(rows, d.get("config", {}))
