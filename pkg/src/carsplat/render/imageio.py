"""PNG and raw float32 image files."""

from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(img):
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def save_png(img, path):
    """Float image in [0, 1], (H, W) or (H, W, 3)."""
    Image.fromarray(to_uint8(img)).save(path)


def save_mask_png(mask, path):
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255).save(path)


def load_png(path):
    return np.asarray(Image.open(path), dtype=np.float64) / 255.0


def load_mask_png(path):
    return (np.asarray(Image.open(path)) > 127).astype(np.uint8)


def save_float(img, path):
    """Little-endian float32 dump with a one-line shape header ``H W C``."""
    img = np.asarray(img, dtype="<f4")
    shape = img.shape + (1,) * (3 - img.ndim)
    with open(path, "wb") as fh:
        fh.write(("%d %d %d\n" % shape).encode("ascii"))
        fh.write(img.tobytes())


def load_float(path):
    raw = Path(path).read_bytes()
    head, _, body = raw.partition(b"\n")
    h, w, c = (int(v) for v in head.split())
    img = np.frombuffer(body, dtype="<f4").reshape(h, w, c)
    return img[..., 0] if c == 1 else img
