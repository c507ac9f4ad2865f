"""Non-overlapping patch tiling with reflect padding."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError


@dataclass(frozen=True)
class TileLayout:
    height: int
    width: int
    patch: int
    rows: int
    cols: int
    pad_bottom: int
    pad_right: int

    @property
    def count(self):
        return self.rows * self.cols


def _pad_reflect(image, pad_bottom, pad_right):
    # numpy's "reflect" needs at least two samples along a padded axis
    def mode(n, p):
        return "reflect" if p == 0 or n > 1 else "edge"

    out = np.pad(image, ((0, pad_bottom), (0, 0), (0, 0)), mode=mode(image.shape[0], pad_bottom))
    return np.pad(out, ((0, 0), (0, pad_right), (0, 0)), mode=mode(image.shape[1], pad_right))


def split_patches(image, patch=256):
    """Cut ``image`` (H x W x C) into row-major ``patch`` x ``patch`` tiles."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] < 1 or image.shape[1] < 1:
        raise ShapeError(f"expected a non-empty H x W x C image, got {image.shape}")
    if patch < 1:
        raise ParameterError(f"patch size must be >= 1, got {patch}")
    h, w = image.shape[:2]
    rows, cols = math.ceil(h / patch), math.ceil(w / patch)
    layout = TileLayout(h, w, patch, rows, cols, rows * patch - h, cols * patch - w)
    padded = _pad_reflect(image, layout.pad_bottom, layout.pad_right)
    tiles = [
        padded[r * patch:(r + 1) * patch, c * patch:(c + 1) * patch].copy()
        for r in range(rows)
        for c in range(cols)
    ]
    return tiles, layout


def merge_patches(patches, layout):
    if len(patches) != layout.count:
        raise ShapeError(f"expected {layout.count} patches, got {len(patches)}")
    p = layout.patch
    channels = np.shape(patches[0])[-1] if patches else 0
    out = None
    for i, tile in enumerate(patches):
        tile = np.asarray(tile)
        if tile.shape != (p, p, channels):
            raise ShapeError(f"patch {i} has shape {tile.shape}, expected {(p, p, channels)}")
        if out is None:
            out = np.empty((layout.rows * p, layout.cols * p, channels), dtype=tile.dtype)
        r, c = divmod(i, layout.cols)
        out[r * p:(r + 1) * p, c * p:(c + 1) * p] = tile
    return out[:layout.height, :layout.width]
