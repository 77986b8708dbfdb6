"""Central finite-difference check of the rasterizer adjoint.

The forward pass has two hard cutoffs (3 sigma and 1/255 alpha). A
perturbation that moves a splat across either one makes the loss jump, and
the difference quotient then measures the jump rather than the derivative.
Each coordinate is therefore checked only while the per-pixel contributor
counts of the +h and -h renders equal those of the base render; the step is
shrunk a few times before the coordinate is reported as skipped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from ..geometry import normalize
from .camera import Camera
from .raster import render, render_backward

FAMILIES = ("means", "rotations", "scales")


@dataclass
class GradFixture:
    means: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    camera: Camera
    w_rgb: np.ndarray
    w_alpha: np.ndarray

    def arrays(self, **override):
        d = dict(means=self.means, rotations=self.rotations, scales=self.scales)
        d.update(override)
        return d["means"], d["rotations"], d["scales"], self.opacities, self.colors

    def loss(self, **override):
        out = render(self.arrays(**override), self.camera)
        return float((out.rgb * self.w_rgb).sum() + (out.alpha * self.w_alpha).sum()), out.n_contrib


def make_fixture(seed, n=5, size=16) -> GradFixture:
    """``n`` random anisotropic splats seen by a ``size``-pixel camera; the
    loss is a fixed random linear functional of rgb and alpha."""
    rng = np.random.default_rng(seed)
    means = rng.uniform(-0.4, 0.4, (n, 3))
    quats = normalize(rng.normal(size=(n, 4)))
    scales = rng.uniform(0.08, 0.25, (n, 3))
    opac = rng.uniform(0.4, 0.95, n)
    colors = rng.uniform(0, 1, (n, 3))
    cam = Camera.look_at([0.3, -3.0, 0.8], [0, 0, 0], size, size, fov_deg=30)
    return GradFixture(means, quats, scales, opac, colors, cam,
                       rng.normal(size=(size, size, 3)), rng.normal(size=(size, size)))


@dataclass
class GradReport:
    max_rel_error: Dict[str, float] = field(default_factory=dict)
    checked: Dict[str, int] = field(default_factory=dict)
    skipped: Dict[str, int] = field(default_factory=dict)

    @property
    def worst(self):
        return max(self.max_rel_error.values())


def relative_error(analytic, numeric, floor_fraction=1e-2):
    """|a - n| / max(|a|, |n|, floor), the floor being a fraction of the
    family's largest numeric entry so near-zero entries are judged absolutely."""
    floor = floor_fraction * max(np.abs(numeric).max(), 1e-12)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def check(fx: GradFixture, rel_step=1e-4, shrink=4) -> GradReport:
    base_loss, base_count = fx.loss()
    grad = render_backward(fx.arrays(), fx.camera, fx.w_rgb, fx.w_alpha)
    report = GradReport()
    for name in FAMILIES:
        arr = getattr(fx, name)
        analytic = getattr(grad, name)
        numeric = np.zeros_like(arr)
        ok = np.zeros(arr.shape, dtype=bool)
        for idx in np.ndindex(arr.shape):
            h = rel_step * max(abs(arr[idx]), 1.0)
            for _ in range(shrink):
                plus = arr.copy()
                plus[idx] += h
                minus = arr.copy()
                minus[idx] -= h
                fp, cp = fx.loss(**{name: plus})
                fm, cm = fx.loss(**{name: minus})
                if np.array_equal(cp, base_count) and np.array_equal(cm, base_count):
                    numeric[idx] = (fp - fm) / (2 * h)
                    ok[idx] = True
                    break
                h *= 0.1
        if name == "rotations":
            # the analytic gradient lives in the tangent space of the unit sphere
            q = arr / np.linalg.norm(arr, axis=1, keepdims=True)
            rows = ok.all(axis=1)
            numeric = numeric - (numeric * q).sum(1, keepdims=True) * q
            ok = np.repeat(rows[:, None], 4, axis=1)
        err = relative_error(analytic[ok], numeric[ok]) if ok.any() else np.zeros(1)
        report.max_rel_error[name] = float(err.max())
        report.checked[name] = int(ok.sum())
        report.skipped[name] = int((~ok).sum())
    return report
