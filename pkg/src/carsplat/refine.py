"""Mask-guided geometry refinement of an extracted part.

The part is rendered once before optimization and that render is the
photometric target. Each step penalizes alpha outside the part mask and L1
colour drift inside it, and moves only means, rotations and scales.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .asset import GaussianAsset
from .geometry import normalize
from .render.camera import Camera
from .render.raster import render, render_backward


class RefineDivergedError(RuntimeError):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass
class RefineConfig:
    lambda_outside: float = 0.5
    iterations: int = 500
    # mean step is this fraction of the part's bounding-box diagonal
    lr_mean: float = 1.6e-4
    # exponential decay of the mean step to this value by the last iteration
    lr_mean_final: float = 1.6e-7
    # same schedule for rotation and scale steps, as a fraction of their start
    lr_other_final_fraction: float = 1.0
    lr_rotation: float = 1e-3
    lr_scale: float = 5e-3          # on log scale
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15
    # views rendered per step; 0 means every view (full batch)
    views_per_step: int = 1
    eval_every: int = 50
    divergence_factor: float = 10.0
    alpha_threshold: float = 0.5
    seed: int = 0

    def validate(self):
        if not 0.0 <= self.lambda_outside <= 1.0:
            raise ValueError("lambda_outside must lie in [0, 1]")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.views_per_step < 0:
            raise ValueError("views_per_step must be >= 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if not 0.0 < self.alpha_threshold < 1.0:
            raise ValueError("alpha_threshold must lie in (0, 1)")

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class StepRecord:
    """Losses of one step, averaged over the views it used."""

    iteration: int
    views: List[int]
    outside: float
    photo: float
    total: float


@dataclass
class EvalRecord:
    iteration: int
    outside: List[float]
    photo: List[float]
    total: List[float]

    @property
    def mean_total(self):
        return float(np.mean(self.total))

    @property
    def mean_outside(self):
        return float(np.mean(self.outside))


@dataclass
class RefineReport:
    config: dict
    steps: List[StepRecord] = field(default_factory=list)
    evals: List[EvalRecord] = field(default_factory=list)
    seconds: float = 0.0
    aborted: bool = False

    @property
    def initial(self) -> EvalRecord:
        return self.evals[0]

    @property
    def final(self) -> EvalRecord:
        return self.evals[-1]

    def to_dict(self, include_time=True):
        d = {"config": self.config, "aborted": self.aborted,
             "steps": [asdict(s) for s in self.steps], "evals": [asdict(e) for e in self.evals]}
        if include_time:
            d["seconds"] = self.seconds
        return d

    def save(self, path, include_time=True):
        """``include_time=False`` drops the wall-clock field so reruns compare byte-for-byte."""
        with open(path, "w") as fh:
            json.dump(self.to_dict(include_time), fh, indent=1)

    @classmethod
    def from_dict(cls, d):
        return cls(d["config"], [StepRecord(**s) for s in d["steps"]],
                   [EvalRecord(**e) for e in d["evals"]], d.get("seconds", 0.0), d["aborted"])


def _check_mask(shape, mask):
    mask = np.asarray(mask)
    if mask.shape != shape:
        raise ValueError(f"mask shape {mask.shape} does not match image shape {shape}")
    return mask.astype(np.float64)


def loss_outside(alpha, mask):
    """Mean over all pixels of alpha times the complement of the mask."""
    alpha = np.asarray(alpha, dtype=np.float64)
    m = _check_mask(alpha.shape, mask)
    return float(np.sum(alpha * (1.0 - m)) / alpha.size)


def loss_photo(rendered, gt, mask):
    """Channel-summed L1 difference averaged over the mask pixels."""
    rendered = np.asarray(rendered, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if rendered.shape != gt.shape:
        raise ValueError(f"rendered {rendered.shape} and target {gt.shape} differ in shape")
    m = _check_mask(rendered.shape[:2], mask)
    denom = m.sum()
    if denom == 0:
        raise ValueError("mask is empty; photometric loss undefined")
    return float(np.sum(np.abs(rendered - gt).sum(-1) * m) / denom)


def combine(photo, outside, lambda_outside):
    return (1.0 - lambda_outside) * photo + lambda_outside * outside


def view_loss(rgb, alpha, gt, mask, lambda_outside):
    """(outside, photo, total) and the image adjoints of the total."""
    outside = loss_outside(alpha, mask)
    photo = loss_photo(rgb, gt, mask)
    m = np.asarray(mask, dtype=np.float64)
    d_alpha = lambda_outside * (1.0 - m) / alpha.size
    # np.sign(0) == 0: pixels already matching contribute no gradient
    d_rgb = (1.0 - lambda_outside) * np.sign(rgb - gt) * (m / m.sum())[..., None]
    return (outside, photo, combine(photo, outside, lambda_outside)), d_rgb, d_alpha


class _Adam:
    def __init__(self, shape, lr, b1, b2, eps):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, x, g):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mh = self.m / (1 - self.b1 ** self.t)
        vh = self.v / (1 - self.b2 ** self.t)
        return x - self.lr * mh / (np.sqrt(vh) + self.eps)


def _view_schedule(n_views, iterations, per_step, rng):
    """Views for each iteration, drawn by cycling through shuffled passes over
    all views. ``per_step`` 0 uses every view at every iteration."""
    if per_step == 0 or per_step >= n_views:
        return [list(range(n_views))] * iterations
    order = []
    while len(order) < iterations * per_step:
        order.extend(rng.permutation(n_views).tolist())
    return [sorted(order[i * per_step:(i + 1) * per_step]) for i in range(iterations)]


def refine(part: GaussianAsset, masks, cameras: Sequence[Camera],
           config: Optional[RefineConfig] = None):
    """Returns (refined part, RefineReport). Masks are (V, H, W) binary, one per camera."""
    cfg = config or RefineConfig()
    cfg.validate()
    cameras = list(cameras)
    masks = np.asarray(masks)
    if len(part) == 0:
        raise ValueError("cannot refine an empty part")
    if not cameras:
        raise ValueError("at least one view is required")
    if masks.shape[0] != len(cameras):
        raise ValueError(f"{masks.shape[0]} masks for {len(cameras)} cameras")
    for cam, m in zip(cameras, masks):
        if m.shape != (cam.height, cam.width):
            raise ValueError(f"mask of shape {m.shape} does not fit a {cam.height}x{cam.width} camera")
        if not m.any():
            raise ValueError("a view has an empty mask")

    gts = [render(part, cam).rgb for cam in cameras]
    opac, colors = part.opacities, part.colors
    means = part.means.copy()
    quats = part.rotations.copy()
    log_s = np.log(part.scales)
    extent = max(part.extent(), 1e-12)
    opt_m = _Adam(means.shape, cfg.lr_mean * extent, cfg.beta1, cfg.beta2, cfg.eps)
    opt_q = _Adam(quats.shape, cfg.lr_rotation, cfg.beta1, cfg.beta2, cfg.eps)
    opt_s = _Adam(log_s.shape, cfg.lr_scale, cfg.beta1, cfg.beta2, cfg.eps)
    lam = cfg.lambda_outside
    report = RefineReport(asdict(cfg))
    t0 = time.perf_counter()

    def evaluate(it):
        arrays = (means, quats, np.exp(log_s), opac, colors)
        vals = []
        for cam, gt, m in zip(cameras, gts, masks):
            out = render(arrays, cam)
            vals.append(view_loss(out.rgb, out.alpha, gt, m, lam)[0])
        o, p, t = (list(map(float, c)) for c in zip(*vals))
        report.evals.append(EvalRecord(it, o, p, t))

    evaluate(0)
    limit = cfg.divergence_factor * max(report.initial.mean_total, 1e-12)
    rng = np.random.default_rng(cfg.seed)
    schedule = _view_schedule(len(cameras), cfg.iterations, cfg.views_per_step, rng)
    for it, views in enumerate(schedule):
        arrays = (means, quats, np.exp(log_s), opac, colors)
        g_m = np.zeros_like(means)
        g_q = np.zeros_like(quats)
        g_s = np.zeros_like(log_s)
        losses = []
        for v in views:
            cam = cameras[v]
            out = render(arrays, cam, grad=True)
            vals, d_rgb, d_alpha = view_loss(out.rgb, out.alpha, gts[v], masks[v], lam)
            losses.append(vals)
            g = render_backward(arrays, cam, d_rgb, d_alpha, output=out)
            g_m += g.means
            g_q += g.rotations
            g_s += g.scales
        o, p = (float(np.mean(c)) for c in list(zip(*losses))[:2])
        t = combine(p, o, lam)
        report.steps.append(StepRecord(it, list(map(int, views)), o, p, t))
        view_limit = cfg.divergence_factor * max(float(np.mean([report.initial.total[v] for v in views])), 1e-12)
        if not np.isfinite(t) or t > max(view_limit, limit):
            report.aborted = True
            report.seconds = time.perf_counter() - t0
            raise RefineDivergedError(f"loss {t:.4g} at iteration {it} exceeds the divergence bound", report)
        k = len(views)
        frac = it / max(1, cfg.iterations - 1)
        opt_m.lr = extent * cfg.lr_mean * (cfg.lr_mean_final / cfg.lr_mean) ** frac
        opt_q.lr = cfg.lr_rotation * cfg.lr_other_final_fraction ** frac
        opt_s.lr = cfg.lr_scale * cfg.lr_other_final_fraction ** frac
        means = opt_m.step(means, g_m / k)
        quats = normalize(opt_q.step(quats, g_q / k))
        log_s = opt_s.step(log_s, g_s / k * arrays[2])
        if (it + 1) % cfg.eval_every == 0 or it + 1 == cfg.iterations:
            evaluate(it + 1)
    report.seconds = time.perf_counter() - t0
    refined = part.replace(means=means, rotations=quats, scales=np.exp(log_s))
    return refined, report


def smoothed(values, window=20):
    """Moving average over complete windows only."""
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return v.copy()
    c = np.cumsum(np.concatenate([[0.0], v]))
    return (c[window:] - c[:-window]) / window
