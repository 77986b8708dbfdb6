"""Hand-written layers with explicit backward passes.

Each layer owns named parameters in a shared ``Params`` store and caches what
its backward pass needs from the most recent forward call.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .. import sampling


class Params:
    """Flat name -> array store with matching gradient buffers."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.values = {}
        self.grads = {}

    def add(self, name, value):
        if name in self.values:
            raise KeyError(f"duplicate parameter {name}")
        self.values[name] = np.asarray(value, dtype=self.dtype)
        self.grads[name] = np.zeros_like(self.values[name])

    def zero_grad(self):
        for g in self.grads.values():
            g[...] = 0.0

    def astype(self, dtype):
        for k in self.values:
            self.values[k] = self.values[k].astype(dtype)
            self.grads[k] = np.zeros_like(self.values[k])
        self.dtype = np.dtype(dtype)

    def __iter__(self):
        return iter(self.values)


class Linear:
    def __init__(self, params: Params, name, n_in, n_out, rng, relu=True):
        self.p = params
        self.w = name + ".w"
        self.b = name + ".b"
        self.relu = relu
        std = np.sqrt(2.0 / n_in) if relu else np.sqrt(1.0 / n_in)
        params.add(self.w, rng.normal(0.0, std, (n_in, n_out)))
        params.add(self.b, np.zeros(n_out))

    def forward(self, x):
        shape = x.shape
        x2 = x.reshape(-1, shape[-1])
        y = x2 @ self.p.values[self.w] + self.p.values[self.b]
        if self.relu:
            y = np.maximum(y, 0.0)
        self._x = x2
        self._y = y
        return y.reshape(shape[:-1] + (y.shape[-1],))

    def backward(self, g):
        shape = g.shape
        g2 = g.reshape(-1, shape[-1])
        if self.relu:
            g2 = g2 * (self._y > 0)
        self.p.grads[self.w] += self._x.T @ g2
        self.p.grads[self.b] += g2.sum(0)
        gx = g2 @ self.p.values[self.w].T
        return gx.reshape(shape[:-1] + (gx.shape[-1],))


class MLP:
    """Shared pointwise MLP over the last axis; ReLU after every layer except
    optionally the last."""

    def __init__(self, params, name, widths, rng, last_relu=True):
        self.layers = []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            relu = last_relu or i < len(widths) - 2
            self.layers.append(Linear(params, f"{name}.{i}", a, b, rng, relu=relu))

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, g):
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g


def _scatter_matrix(index, n_rows):
    """Sparse (n_rows, len(index)) matrix summing entries into their index."""
    index = np.asarray(index).ravel()
    return sp.csr_matrix((np.ones(len(index)), (index, np.arange(len(index)))),
                         shape=(n_rows, len(index)))


class SetAbstraction:
    """Multi-scale grouping layer: per scale, group neighbours of sampled
    centers, apply a shared MLP ``h`` to each member and max-pool over the
    group; the pooled scales are concatenated and passed through ``gamma``."""

    def __init__(self, params, name, n_centers, scales, in_channels, gamma_width, rng):
        self.n_centers = n_centers
        self.scales = [(float(r), int(k)) for r, k, _ in scales]
        self.h = [MLP(params, f"{name}.h{i}", [in_channels + 3] + list(w), rng)
                  for i, (_, _, w) in enumerate(scales)]
        pooled = sum(w[-1] for _, _, w in scales)
        self.gamma = Linear(params, f"{name}.gamma", pooled, gamma_width, rng)
        self.out_channels = gamma_width

    def forward(self, xyz, feats):
        n = len(xyz)
        m = min(self.n_centers, n)
        centers = sampling.fps(xyz, m, 0)
        new_xyz = xyz[centers]
        pooled = []
        self._cache = []
        for (radius, k), h in zip(self.scales, self.h):
            groups, _ = sampling.ball_query_padded(xyz, new_xyz, radius, k)
            rel = (xyz[groups] - new_xyz[:, None, :]) / radius
            x = rel if feats is None else np.concatenate([rel, feats[groups]], axis=-1)
            y = h.forward(x.astype(feats.dtype if feats is not None else x.dtype))
            arg = np.argmax(y, axis=1)
            pooled.append(np.take_along_axis(y, arg[:, None, :], axis=1)[:, 0, :])
            self._cache.append((groups, arg, y.shape))
        self._n = n
        self._pooled_widths = [p.shape[1] for p in pooled]
        return new_xyz, self.gamma.forward(np.concatenate(pooled, axis=1))

    def backward(self, g_out):
        g_pooled = self.gamma.backward(g_out)
        g_feats = None
        off = 0
        for (groups, arg, shape), h, width in zip(self._cache, self.h, self._pooled_widths):
            gp = g_pooled[:, off:off + width]
            off += width
            gy = np.zeros(shape, dtype=gp.dtype)
            np.put_along_axis(gy, arg[:, None, :], gp[:, None, :], axis=1)
            gx = h.backward(gy)[..., 3:]
            if gx.shape[-1] == 0:
                continue
            s = _scatter_matrix(groups, self._n)
            contrib = np.asarray(s @ gx.reshape(-1, gx.shape[-1]), dtype=gx.dtype)
            g_feats = contrib if g_feats is None else g_feats + contrib
        return g_feats


class GlobalAbstraction:
    """Group-all layer: shared MLP over every point (xyz + features), max-pool."""

    def __init__(self, params, name, in_channels, widths, rng):
        self.h = MLP(params, name, [in_channels + 3] + list(widths), rng)
        self.out_channels = widths[-1]

    def forward(self, xyz, feats):
        x = np.concatenate([xyz.astype(feats.dtype), feats], axis=1)
        y = self.h.forward(x)
        self._arg = np.argmax(y, axis=0)
        self._shape = y.shape
        return y[self._arg, np.arange(y.shape[1])]

    def backward(self, g):
        gy = np.zeros(self._shape, dtype=g.dtype)
        gy[self._arg, np.arange(self._shape[1])] = g
        return self.h.backward(gy)[:, 3:]


class FeaturePropagation:
    """Inverse-distance 3-NN interpolation from a coarse level, concatenated
    with skip features and passed through a shared MLP."""

    def __init__(self, params, name, in_channels, widths, rng, k=3, skip_channels=0, skip_widths=()):
        self.k = k
        # optional per-point MLP applied to the skip features before concatenation
        self.skip_mlp = MLP(params, name + ".skip", [skip_channels] + list(skip_widths), rng) \
            if skip_widths else None
        extra = skip_widths[-1] - skip_channels if skip_widths else 0
        self.mlp = MLP(params, name, [in_channels + extra] + list(widths), rng)
        self.out_channels = widths[-1]

    def forward(self, xyz_dst, xyz_src, feats_src, skip):
        k = min(self.k, len(xyz_src))
        idx, d2 = sampling.knn(xyz_dst, xyz_src, k)
        w = 1.0 / (np.sqrt(d2) + 1e-8)
        w /= w.sum(1, keepdims=True)
        n = len(xyz_dst)
        self._interp = sp.csr_matrix(
            (w.ravel(), (np.repeat(np.arange(n), k), idx.ravel())), shape=(n, len(xyz_src)))
        interp = np.asarray(self._interp @ feats_src, dtype=feats_src.dtype)
        if skip is not None and self.skip_mlp is not None:
            skip = self.skip_mlp.forward(skip.astype(interp.dtype))
        self._skip_width = 0 if skip is None else skip.shape[1]
        x = interp if skip is None else np.concatenate([interp, skip.astype(interp.dtype)], axis=1)
        self._src_width = feats_src.shape[1]
        return self.mlp.forward(x)

    def backward(self, g):
        gx = self.mlp.backward(g)
        g_src = np.asarray(self._interp.T @ gx[:, :self._src_width], dtype=gx.dtype)
        g_skip = gx[:, self._src_width:] if self._skip_width else None
        if g_skip is not None and self.skip_mlp is not None:
            g_skip = self.skip_mlp.backward(np.ascontiguousarray(g_skip))
        return g_src, g_skip
