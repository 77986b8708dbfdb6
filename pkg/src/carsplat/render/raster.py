"""Tile-based EWA splat rasterizer with an exact adjoint for geometry.

Forward: each Gaussian is projected with the perspective Jacobian linearized
at its mean, binned into 16x16 tiles, sorted front to back per tile, and
composited per pixel as ``alpha = 1 - prod(1 - o_k g_k)``. The RGB image is
the premultiplied composite divided by alpha.

Backward: the same per-pixel splat lists are walked back to front, so no
division by ``1 - a_k`` is needed and fully opaque splats are handled
exactly. Contributions dropped in the forward pass (outside 3 sigma or below
1/255) contribute exactly zero gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from ..asset import GaussianAsset
from .camera import Camera

TILE = 16
NEAR = 1e-4
CUTOFF_SIGMA = 3.0
MIN_ALPHA = 1.0 / 255.0
MIN_DIVISOR_ALPHA = 1e-6
DILATION = 0.3


@dataclass
class Projection:
    """Per-Gaussian screen-space quantities plus what the adjoint needs."""

    valid: np.ndarray      # (N,) bool, in front of the near plane
    cam_points: np.ndarray  # (N, 3)
    uv: np.ndarray         # (N, 2)
    depth: np.ndarray      # (N,)
    conic: np.ndarray      # (N, 3) inverse 2D covariance (a, b, c)
    radius: np.ndarray     # (N,) pixels
    jw: np.ndarray         # (N, 2, 3) Jacobian times camera rotation
    cov3: np.ndarray       # (N, 3, 3)
    rot: np.ndarray        # (N, 3, 3) rotation of the normalized quaternion
    qhat: np.ndarray       # (N, 4)
    qnorm: np.ndarray      # (N,)


@dataclass
class RenderOutput:
    rgb: np.ndarray
    alpha: np.ndarray
    n_contrib: np.ndarray = None
    # Retained for render_backward when rendered with grad=True.
    projection: Optional[Projection] = field(default=None, repr=False)
    tile_ranges: Optional[np.ndarray] = field(default=None, repr=False)
    tile_ids: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass
class GeomGrad:
    means: np.ndarray      # (N, 3)
    rotations: np.ndarray  # (N, 4), tangent to the unit sphere at each quaternion
    scales: np.ndarray     # (N, 3)


def _quat_matrix(q):
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    r = np.empty((len(q), 3, 3))
    r[:, 0, 0] = 1 - 2 * (y * y + z * z)
    r[:, 0, 1] = 2 * (x * y - w * z)
    r[:, 0, 2] = 2 * (x * z + w * y)
    r[:, 1, 0] = 2 * (x * y + w * z)
    r[:, 1, 1] = 1 - 2 * (x * x + z * z)
    r[:, 1, 2] = 2 * (y * z - w * x)
    r[:, 2, 0] = 2 * (x * z - w * y)
    r[:, 2, 1] = 2 * (y * z + w * x)
    r[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def project(means, quats, scales, camera: Camera, dilation=DILATION) -> Projection:
    means = np.asarray(means, dtype=np.float64)
    quats = np.asarray(quats, dtype=np.float64)
    scales = np.asarray(scales, dtype=np.float64)
    n = len(means)
    w = camera.rotation
    p = means @ w.T + camera.translation
    z = p[:, 2]
    valid = z > NEAR
    zs = np.where(valid, z, 1.0)
    x, y = p[:, 0], p[:, 1]

    qnorm = np.linalg.norm(quats, axis=1)
    qhat = quats / qnorm[:, None]
    rot = _quat_matrix(qhat)
    m = rot * scales[:, None, :]
    cov3 = m @ m.transpose(0, 2, 1)

    j = np.zeros((n, 2, 3))
    j[:, 0, 0] = camera.fx / zs
    j[:, 0, 2] = -camera.fx * x / zs ** 2
    j[:, 1, 1] = camera.fy / zs
    j[:, 1, 2] = -camera.fy * y / zs ** 2
    jw = j @ w
    cov2 = jw @ cov3 @ jw.transpose(0, 2, 1)
    a = cov2[:, 0, 0] + dilation
    b = cov2[:, 0, 1]
    c = cov2[:, 1, 1] + dilation
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)
    mid = 0.5 * (a + c)
    lam = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = CUTOFF_SIGMA * np.sqrt(lam)
    uv = np.stack([camera.fx * x / zs + camera.cx, camera.fy * y / zs + camera.cy], axis=1)
    return Projection(valid, p, uv, z, conic, radius, jw, cov3, rot, qhat, qnorm)


def bin_tiles(proj: Projection, width, height, tile=TILE):
    """Sorted (tile, depth, index) splat lists. Returns per-tile [start, end) and ids."""
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    u, v = proj.uv[:, 0], proj.uv[:, 1]
    r = proj.radius
    on = proj.valid & (u + r >= 0) & (u - r <= width) & (v + r >= 0) & (v - r <= height)
    idx = np.flatnonzero(on)
    tx0 = np.clip(np.floor((u[idx] - r[idx]) / tile), 0, tiles_x - 1).astype(np.int64)
    tx1 = np.clip(np.floor((u[idx] + r[idx]) / tile), 0, tiles_x - 1).astype(np.int64)
    ty0 = np.clip(np.floor((v[idx] - r[idx]) / tile), 0, tiles_y - 1).astype(np.int64)
    ty1 = np.clip(np.floor((v[idx] + r[idx]) / tile), 0, tiles_y - 1).astype(np.int64)
    wx = tx1 - tx0 + 1
    counts = wx * (ty1 - ty0 + 1)
    total = int(counts.sum())
    owner = np.repeat(np.arange(len(idx)), counts)
    starts = np.cumsum(counts) - counts
    local = np.arange(total) - np.repeat(starts, counts)
    tx = tx0[owner] + local % wx[owner]
    ty = ty0[owner] + local // wx[owner]
    tile_of = ty * tiles_x + tx
    gid = idx[owner]
    order = np.lexsort((gid, proj.depth[gid], tile_of))
    tile_of = tile_of[order]
    gid = gid[order]
    n_tiles = tiles_x * tiles_y
    bounds = np.searchsorted(tile_of, np.arange(n_tiles + 1))
    ranges = np.stack([bounds[:-1], bounds[1:]], axis=1).astype(np.int64)
    return ranges, gid.astype(np.int64)


@numba.njit(cache=True)
def _forward_kernel(ranges, ids, uv, conic, opac, col, width, height, tile):
    tiles_x = (width + tile - 1) // tile
    rgb = np.zeros((height, width, 3))
    alpha = np.zeros((height, width))
    n_contrib = np.zeros((height, width), dtype=np.int32)
    cut2 = CUTOFF_SIGMA * CUTOFF_SIGMA
    for t in range(ranges.shape[0]):
        s = ranges[t, 0]
        e = ranges[t, 1]
        if s == e:
            continue
        ty = t // tiles_x
        tx = t - ty * tiles_x
        for i in range(ty * tile, min(height, (ty + 1) * tile)):
            py = i + 0.5
            for j in range(tx * tile, min(width, (tx + 1) * tile)):
                px = j + 0.5
                trans = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                count = 0
                for k in range(s, e):
                    g = ids[k]
                    dx = px - uv[g, 0]
                    dy = py - uv[g, 1]
                    d2 = conic[g, 0] * dx * dx + 2.0 * conic[g, 1] * dx * dy + conic[g, 2] * dy * dy
                    if d2 > cut2:
                        continue
                    fall = math.exp(-0.5 * d2)
                    if fall > 1.0:
                        fall = 1.0
                    a = opac[g] * fall
                    if a < MIN_ALPHA:
                        continue
                    wgt = a * trans
                    c0 += col[g, 0] * wgt
                    c1 += col[g, 1] * wgt
                    c2 += col[g, 2] * wgt
                    trans *= 1.0 - a
                    count += 1
                acc = 1.0 - trans
                alpha[i, j] = acc
                n_contrib[i, j] = count
                if acc > MIN_DIVISOR_ALPHA:
                    rgb[i, j, 0] = c0 / acc
                    rgb[i, j, 1] = c1 / acc
                    rgb[i, j, 2] = c2 / acc
    return rgb, alpha, n_contrib


@numba.njit(cache=True)
def _backward_kernel(ranges, ids, uv, conic, opac, col, width, height, tile, d_rgb, d_alpha, n):
    tiles_x = (width + tile - 1) // tile
    g_uv = np.zeros((n, 2))
    g_conic = np.zeros((n, 3))
    cut2 = CUTOFF_SIGMA * CUTOFF_SIGMA
    max_len = 0
    for t in range(ranges.shape[0]):
        max_len = max(max_len, ranges[t, 1] - ranges[t, 0])
    buf_g = np.empty(max_len, dtype=np.int64)
    buf_a = np.empty(max_len)
    buf_t = np.empty(max_len)
    buf_f = np.empty(max_len)
    buf_dx = np.empty(max_len)
    buf_dy = np.empty(max_len)
    for t in range(ranges.shape[0]):
        s = ranges[t, 0]
        e = ranges[t, 1]
        if s == e:
            continue
        ty = t // tiles_x
        tx = t - ty * tiles_x
        for i in range(ty * tile, min(height, (ty + 1) * tile)):
            py = i + 0.5
            for j in range(tx * tile, min(width, (tx + 1) * tile)):
                px = j + 0.5
                trans = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                m = 0
                for k in range(s, e):
                    g = ids[k]
                    dx = px - uv[g, 0]
                    dy = py - uv[g, 1]
                    d2 = conic[g, 0] * dx * dx + 2.0 * conic[g, 1] * dx * dy + conic[g, 2] * dy * dy
                    if d2 > cut2:
                        continue
                    fall = math.exp(-0.5 * d2)
                    if fall > 1.0:
                        fall = 1.0
                    a = opac[g] * fall
                    if a < MIN_ALPHA:
                        continue
                    buf_g[m] = g
                    buf_a[m] = a
                    buf_t[m] = trans
                    buf_f[m] = fall
                    buf_dx[m] = dx
                    buf_dy[m] = dy
                    wgt = a * trans
                    c0 += col[g, 0] * wgt
                    c1 += col[g, 1] * wgt
                    c2 += col[g, 2] * wgt
                    trans *= 1.0 - a
                    m += 1
                if m == 0:
                    continue
                acc = 1.0 - trans
                gr0 = d_rgb[i, j, 0]
                gr1 = d_rgb[i, j, 1]
                gr2 = d_rgb[i, j, 2]
                if acc > MIN_DIVISOR_ALPHA:
                    gc0 = gr0 / acc
                    gc1 = gr1 / acc
                    gc2 = gr2 / acc
                    g_acc = d_alpha[i, j] - (gr0 * c0 + gr1 * c1 + gr2 * c2) / (acc * acc)
                else:
                    gc0 = 0.0
                    gc1 = 0.0
                    gc2 = 0.0
                    g_acc = d_alpha[i, j]
                # back to front: behind = colour composited behind k, keep = prod_{j>k}(1 - a_j)
                b0 = 0.0
                b1 = 0.0
                b2 = 0.0
                keep = 1.0
                for r in range(m - 1, -1, -1):
                    g = buf_g[r]
                    a = buf_a[r]
                    tk = buf_t[r]
                    da = tk * (gc0 * (col[g, 0] - b0) + gc1 * (col[g, 1] - b1)
                               + gc2 * (col[g, 2] - b2) + g_acc * keep)
                    b0 = col[g, 0] * a + (1.0 - a) * b0
                    b1 = col[g, 1] * a + (1.0 - a) * b1
                    b2 = col[g, 2] * a + (1.0 - a) * b2
                    keep *= 1.0 - a
                    fall = buf_f[r]
                    if fall >= 1.0:
                        continue
                    dfall = da * opac[g]
                    dx = buf_dx[r]
                    dy = buf_dy[r]
                    ca = conic[g, 0]
                    cb = conic[g, 1]
                    cc = conic[g, 2]
                    # fall = exp(-0.5 d2), dx = px - u
                    g_uv[g, 0] += dfall * fall * (ca * dx + cb * dy)
                    g_uv[g, 1] += dfall * fall * (cb * dx + cc * dy)
                    g_conic[g, 0] += -0.5 * dfall * fall * dx * dx
                    g_conic[g, 1] += -dfall * fall * dx * dy
                    g_conic[g, 2] += -0.5 * dfall * fall * dy * dy
    return g_uv, g_conic


def _raster_inputs(asset_or_arrays):
    if isinstance(asset_or_arrays, GaussianAsset):
        a = asset_or_arrays
        return a.means, a.rotations, a.scales, a.opacities, a.colors
    return asset_or_arrays


def render(asset, camera: Camera, grad=False, dilation=DILATION) -> RenderOutput:
    """Render a GaussianAsset, or a (means, quats, scales, opacities, colors) tuple."""
    means, quats, scales, opac, colors = _raster_inputs(asset)
    if len(means) == 0:
        raise ValueError("cannot render an empty asset")
    proj = project(means, quats, scales, camera, dilation)
    ranges, ids = bin_tiles(proj, camera.width, camera.height)
    rgb, alpha, n_contrib = _forward_kernel(
        ranges, ids, np.ascontiguousarray(proj.uv), np.ascontiguousarray(proj.conic),
        np.ascontiguousarray(opac, dtype=np.float64), np.ascontiguousarray(colors, dtype=np.float64),
        camera.width, camera.height, TILE)
    out = RenderOutput(rgb, alpha, n_contrib)
    if grad:
        out.projection = proj
        out.tile_ranges = ranges
        out.tile_ids = ids
    return out



def _rotation_grad(g_rot, q):
    """Chain dL/dR (N,3,3) through R(q) for unit q; returns dL/dq (N,4)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    g = g_rot
    gw = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2]
              - y * g[:, 2, 0] + x * g[:, 2, 1])
    gx = 2 * (y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1]
              - w * g[:, 1, 2] + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2])
    gy = 2 * (-2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0]
              + z * g[:, 1, 2] - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2])
    gz = 2 * (-2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0]
              - 2 * z * g[:, 1, 1] + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1])
    return np.stack([gw, gx, gy, gz], axis=1)


def render_backward(asset, camera: Camera, d_rgb, d_alpha, output: Optional[RenderOutput] = None,
                    dilation=DILATION) -> GeomGrad:
    """Gradients of a scalar loss w.r.t. means, rotations and scales given the
    loss adjoints of the rendered RGB and alpha images."""
    means, quats, scales, opac, colors = _raster_inputs(asset)
    d_rgb = np.asarray(d_rgb, dtype=np.float64)
    d_alpha = np.asarray(d_alpha, dtype=np.float64)
    if d_rgb.shape != (camera.height, camera.width, 3) or d_alpha.shape != (camera.height, camera.width):
        raise ValueError(
            f"adjoint shapes {d_rgb.shape}, {d_alpha.shape} do not match a "
            f"{camera.height}x{camera.width} camera")
    if output is not None and output.projection is not None:
        proj, ranges, ids = output.projection, output.tile_ranges, output.tile_ids
    else:
        proj = project(means, quats, scales, camera, dilation)
        ranges, ids = bin_tiles(proj, camera.width, camera.height)
    scales = np.asarray(scales, dtype=np.float64)
    n = len(proj.uv)
    g_uv, g_conic = _backward_kernel(
        ranges, ids, np.ascontiguousarray(proj.uv), np.ascontiguousarray(proj.conic),
        np.ascontiguousarray(opac, dtype=np.float64), np.ascontiguousarray(colors, dtype=np.float64),
        camera.width, camera.height, TILE, np.ascontiguousarray(d_rgb), np.ascontiguousarray(d_alpha), n)

    # conic -> 2D covariance: dL/dS = -Q G Q with G the symmetric gradient of Q
    ca, cb, cc = proj.conic[:, 0], proj.conic[:, 1], proj.conic[:, 2]
    q = np.empty((n, 2, 2))
    q[:, 0, 0], q[:, 0, 1], q[:, 1, 0], q[:, 1, 1] = ca, cb, cb, cc
    gq = np.empty((n, 2, 2))
    gq[:, 0, 0] = g_conic[:, 0]
    gq[:, 0, 1] = gq[:, 1, 0] = 0.5 * g_conic[:, 1]
    gq[:, 1, 1] = g_conic[:, 2]
    g_cov2 = -q @ gq @ q

    jw = proj.jw
    g_jw = 2.0 * g_cov2 @ jw @ proj.cov3
    g_cov3 = jw.transpose(0, 2, 1) @ g_cov2 @ jw
    g_j = g_jw @ camera.rotation.T

    x, y = proj.cam_points[:, 0], proj.cam_points[:, 1]
    z = np.where(proj.valid, proj.depth, 1.0)
    fx, fy = camera.fx, camera.fy
    g_p = np.zeros((n, 3))
    g_p[:, 0] = g_uv[:, 0] * fx / z + g_j[:, 0, 2] * (-fx / z ** 2)
    g_p[:, 1] = g_uv[:, 1] * fy / z + g_j[:, 1, 2] * (-fy / z ** 2)
    g_p[:, 2] = (g_uv[:, 0] * (-fx * x / z ** 2) + g_uv[:, 1] * (-fy * y / z ** 2)
                 + g_j[:, 0, 0] * (-fx / z ** 2) + g_j[:, 0, 2] * (2 * fx * x / z ** 3)
                 + g_j[:, 1, 1] * (-fy / z ** 2) + g_j[:, 1, 2] * (2 * fy * y / z ** 3))
    g_means = g_p @ camera.rotation

    m = proj.rot * scales[:, None, :]
    g_m = 2.0 * g_cov3 @ m
    g_scales = np.einsum("nri,nri->ni", g_m, proj.rot)
    g_rot = g_m * scales[:, None, :]
    g_qhat = _rotation_grad(g_rot, proj.qhat)
    qh = proj.qhat
    g_q = (g_qhat - np.sum(g_qhat * qh, axis=1, keepdims=True) * qh) / proj.qnorm[:, None]

    dead = ~proj.valid
    g_means[dead] = 0.0
    g_q[dead] = 0.0
    g_scales[dead] = 0.0
    return GeomGrad(g_means, g_q, g_scales)
