"""8-bit PNG images, 16-bit PNG / PFM heat maps, binary masks."""

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ParameterError


def to_uint8(x):
    """Model range [-1, 1] to 0..255, rounding halves away from zero."""
    v = (np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0) + 1.0) * 127.5
    return np.floor(v + 0.5).astype(np.uint8)


def from_uint8(v8):
    return np.asarray(v8, dtype=np.float64) * (2.0 / 255.0) - 1.0


def quantize8(x):
    """Round-trip through 8-bit storage."""
    return from_uint8(to_uint8(x))


def write_png(path, image):
    v8 = to_uint8(image)
    if v8.ndim == 3 and v8.shape[-1] == 1:
        v8 = v8[..., 0]
    Image.fromarray(v8).save(path)


def read_png(path):
    """Read an 8-bit grayscale or RGB PNG as an H x W x C model-range array."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        a = np.asarray(im)
    if a.ndim == 2:
        a = a[..., None]
    return from_uint8(a)


def write_mask(path, mask):
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255).save(path)


def read_mask(path):
    with Image.open(path) as im:
        a = np.asarray(im.convert("L"))
    return (a >= 128).astype(np.uint8)


def write_heat_png16(path, heat):
    v = np.round(np.clip(np.asarray(heat, dtype=np.float64), 0, 1) * 65535).astype(np.uint16)
    Image.fromarray(v).save(path)


def read_heat_png16(path):
    with Image.open(path) as im:
        a = np.asarray(im).astype(np.float64)
    return a / 65535.0


def write_pfm(path, heat):
    """Single-channel little-endian PFM (scale -1.0), rows stored bottom-up."""
    a = np.asarray(heat, dtype="<f4")
    if a.ndim != 2:
        raise ParameterError(f"PFM export expects a 2-D map, got {a.shape}")
    h, w = a.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n%d %d\n-1.0\n" % (w, h))
        f.write(np.ascontiguousarray(a[::-1]).tobytes())


def read_pfm(path):
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind not in (b"Pf", b"PF"):
            raise ParameterError(f"{path}: not a PFM file")
        w, h = (int(v) for v in f.readline().split())
        scale = float(f.readline())
        data = np.frombuffer(f.read(), dtype="<f4" if scale < 0 else ">f4")
    chans = 3 if kind == b"PF" else 1
    a = data.reshape(h, w, chans)[::-1]
    return a[..., 0].astype(np.float64) if chans == 1 else a.astype(np.float64)


def ensure_dir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
