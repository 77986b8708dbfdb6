"""Training loops, augmentation and the Adam optimizer for the point nets."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .. import sampling
from ..synth import TrainSample
from .model import KinNet, NetConfig, SegNet, normalize_targets

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class AugmentConfig:
    enabled: bool = True
    scale_range: tuple = (0.8, 1.25)
    shift: float = 0.1              # normalized units, per axis
    yaw_range: tuple = (0.0, 2 * math.pi)
    jitter_sigma: float = 0.01      # normalized units
    jitter_clip: float = 0.05


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # cosine decay from lr to lr * lr_final_fraction over the run
    lr_final_fraction: float = 0.01
    batch_size: int = 1
    seed: int = 0
    hinge_weight: float = 1.0
    joint_weight: float = 1.0
    # stop once an epoch's training accuracy reaches this (segmentation only)
    stop_accuracy: Optional[float] = None
    augment: AugmentConfig = field(default_factory=AugmentConfig)


@dataclass
class AugTransform:
    """Similarity about ``pivot``: scale, yaw about +z, then shift. Jitter is
    per point and never touches targets."""

    pivot: np.ndarray
    scale: float = 1.0
    yaw: float = 0.0
    shift: np.ndarray = field(default_factory=lambda: np.zeros(3))
    jitter: np.ndarray = None
    identity: bool = False

    def apply_xyz(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        if self.identity:
            return pts.copy()
        # elementwise rather than a matmul, so each row's bits do not depend
        # on how many rows are transformed together
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        p = self.scale * (pts - self.pivot)
        out = np.empty_like(p)
        out[..., 0] = c * p[..., 0] - s * p[..., 1]
        out[..., 1] = s * p[..., 0] + c * p[..., 1]
        out[..., 2] = p[..., 2]
        return out + self.pivot + self.shift

    def apply_points(self, pts):
        out = self.apply_xyz(pts)
        if self.jitter is not None:
            out = out + self.jitter
        return out

    def apply_hinges(self, hinges):
        h = np.asarray(hinges, dtype=np.float64).reshape(-1, 2)
        lifted = np.concatenate([h, np.full((len(h), 1), self.pivot[2])], axis=1)
        return self.apply_xyz(lifted)[:, :2]

    def apply_kin(self, vec16):
        vec16 = np.asarray(vec16, dtype=np.float64)
        return np.concatenate([self.apply_hinges(vec16[:4]).ravel(),
                               self.apply_xyz(vec16[4:].reshape(4, 3)).ravel()])


def sample_transform(rng, positions, cfg: AugmentConfig, unit) -> AugTransform:
    pivot = 0.5 * (positions.min(0) + positions.max(0))
    if not cfg.enabled:
        return AugTransform(pivot, identity=True)
    scale = rng.uniform(*cfg.scale_range)
    yaw = rng.uniform(*cfg.yaw_range)
    shift = rng.uniform(-cfg.shift, cfg.shift, 3) * unit
    jitter = None
    if cfg.jitter_sigma > 0:
        jitter = np.clip(rng.normal(0.0, cfg.jitter_sigma, positions.shape),
                         -cfg.jitter_clip, cfg.jitter_clip) * unit
    return AugTransform(pivot, scale, yaw, shift, jitter)


@dataclass
class Prepared:
    """A training sample downsampled to the network input size."""

    positions: np.ndarray
    colors: np.ndarray
    labels: np.ndarray
    kin: np.ndarray
    name: str


def prepare(sample: TrainSample, n_points) -> Prepared:
    sample.validate()
    n = len(sample.positions)
    if n >= n_points:
        idx = sampling.fps(sample.positions, n_points, 0)
    else:
        idx = np.resize(np.arange(n), n_points)
    return Prepared(sample.positions[idx], sample.colors[idx], sample.labels[idx].astype(np.int64),
                    sample.kin.to_vector(), sample.name)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.values.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.values.items()}

    def step(self, scale=1.0):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, w in self.params.values.items():
            g = self.params.grads[k] * scale
            m = self.m[k]
            v = self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            w -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(w.dtype)


def cosine_lr(cfg: TrainConfig, epoch):
    frac = epoch / max(1, cfg.epochs - 1)
    lo = cfg.lr * cfg.lr_final_fraction
    return lo + 0.5 * (cfg.lr - lo) * (1.0 + math.cos(math.pi * frac))


def cross_entropy(scores, labels):
    """Mean per-point cross-entropy and its gradient w.r.t. the scores."""
    s = scores.astype(np.float64)
    z = s - s.max(1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(1, keepdims=True))
    n = len(labels)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    accuracy: float = float("nan")
    joint_error: float = float("nan")
    hinge_error: float = float("nan")


@dataclass
class TrainResult:
    net: object
    history: List[EpochMetrics]


def _check_finite(loss, epoch, name):
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss at epoch {epoch}, sample {name!r}")


def train_seg(dataset: Sequence[TrainSample], cfg: TrainConfig = TrainConfig(),
              net_cfg: NetConfig = None, net: SegNet = None, log_every=0) -> TrainResult:
    if not dataset:
        raise ValueError("empty dataset")
    net_cfg = net_cfg or (net.cfg if net else NetConfig())
    net = net or SegNet(net_cfg, seed=cfg.seed)
    prepared = [prepare(s, net_cfg.n_points) for s in dataset]
    opt = Adam(net.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(cfg.epochs):
        opt.lr = cosine_lr(cfg, epoch)
        order = rng.permutation(len(prepared))
        losses, correct, total = [], 0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            net.params.zero_grad()
            for i in batch:
                p = prepared[i]
                tf = sample_transform(rng, p.positions, cfg.augment, net_cfg.unit)
                scores = net.forward(tf.apply_points(p.positions), p.colors)
                loss, grad = cross_entropy(scores, p.labels)
                _check_finite(loss, epoch, p.name)
                net.backward(grad)
                losses.append(loss)
                correct += int((scores.argmax(1) == p.labels).sum())
                total += len(p.labels)
            opt.step(1.0 / len(batch))
        history.append(EpochMetrics(epoch, float(np.mean(losses)), correct / total))
        if log_every and epoch % log_every == 0:
            logger.info("seg epoch %d loss %.4f acc %.4f", epoch, history[-1].loss, history[-1].accuracy)
        if cfg.stop_accuracy is not None and history[-1].accuracy >= cfg.stop_accuracy:
            break
    return TrainResult(net, history)


def seg_accuracy(net: SegNet, dataset: Sequence[TrainSample]):
    """Point accuracy on the un-augmented network inputs of each sample."""
    correct = total = 0
    for s in dataset:
        p = prepare(s, net.cfg.n_points)
        pred = net.predict(p.positions, p.colors)
        correct += int((pred == p.labels).sum())
        total += len(pred)
    return correct / total


def _kin_loss(pred, target, cfg: TrainConfig):
    w = np.concatenate([np.full(4, cfg.hinge_weight), np.full(12, cfg.joint_weight)])
    diff = pred.astype(np.float64) - target
    return float(np.mean(w * diff * diff)), 2.0 * w * diff / 16.0


def train_kin(dataset: Sequence[TrainSample], cfg: TrainConfig = TrainConfig(),
              net_cfg: NetConfig = None, net: KinNet = None, log_every=0) -> TrainResult:
    if not dataset:
        raise ValueError("empty dataset")
    net_cfg = net_cfg or (net.cfg if net else NetConfig())
    net = net or KinNet(net_cfg, seed=cfg.seed)
    prepared = [prepare(s, net_cfg.n_points) for s in dataset]
    opt = Adam(net.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(cfg.epochs):
        opt.lr = cosine_lr(cfg, epoch)
        order = rng.permutation(len(prepared))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            net.params.zero_grad()
            for i in batch:
                p = prepared[i]
                tf = sample_transform(rng, p.positions, cfg.augment, net_cfg.unit)
                pts = tf.apply_points(p.positions)
                target_raw = tf.apply_kin(p.kin)
                out, center = net.forward_normalized(pts, p.colors)
                target = normalize_targets(target_raw, center, net_cfg.unit)
                loss, grad = _kin_loss(out, target, cfg)
                _check_finite(loss, epoch, p.name)
                net.backward(grad)
                losses.append(loss)
            opt.step(1.0 / len(batch))
        history.append(EpochMetrics(epoch, float(np.mean(losses))))
        if log_every and epoch % log_every == 0:
            logger.info("kin epoch %d loss %.5f", epoch, history[-1].loss)
    return TrainResult(net, history)


def kin_errors(net: KinNet, dataset: Sequence[TrainSample]):
    """Worst joint and hinge Euclidean errors as fractions of vehicle length."""
    joint_err, hinge_err = [], []
    for s in dataset:
        p = prepare(s, net.cfg.n_points)
        pred = net.forward(p.positions, p.colors)
        length = np.ptp(s.positions[:, 0])
        j = np.linalg.norm(pred[4:].reshape(4, 3) - p.kin[4:].reshape(4, 3), axis=1) / length
        h = np.linalg.norm(pred[:4].reshape(2, 2) - p.kin[:4].reshape(2, 2), axis=1) / length
        joint_err.append(j.max())
        hinge_err.append(h.max())
    return float(np.max(joint_err)), float(np.max(hinge_err))
