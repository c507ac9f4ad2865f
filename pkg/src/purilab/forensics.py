"""Simplified trace detectors producing heat maps in [0, 1].

All three follow the same pattern: estimate a trace parameter per sliding
window, take the image-wide majority (or median) as the reference, and score
each window by how confidently it disagrees. Window scores sit at window
centres and are bilinearly interpolated to pixel resolution.

* ``detect_grid``: 8x8 block-DCT grid origin, found by counting near-zero
  coefficients over the 64 candidate origins.
* ``detect_variance``: Bayer phase, found from which 2x2 lattice positions
  carry the most high-pass energy (sampled pixels vary more than
  interpolated ones).
* ``detect_residual``: local noise level from a robust spread of a
  high-pass residual, measured at full resolution and on 2x2 and 4x4 binned
  copies so that spatially correlated noise also registers.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft, ndimage

from .errors import SizeError

GRID_WINDOW = 64
LOCAL_WINDOW = 32
STRIDE = 8
ZERO_THRESHOLD = 0.5  # 8-bit units
# contrast (max - min) / max of the origin votes at which grid heat saturates
GRID_CONTRAST = 0.25
# relative spread of the four phase scores at which phase heat saturates
PHASE_CONTRAST = 0.5
RESIDUAL_BINNINGS = (1, 2, 4)

_DCT8 = fft.dct(np.eye(8), norm="ortho", axis=0)
_LAPLACE = np.array([[0, -1, 0], [-1, 4, -1], [0, -1, 0]]) / 4.0
_IMMERKAER = np.array([[1, -2, 1], [-2, 4, -2], [1, -2, 1]], dtype=np.float64)


def _as_255(image):
    x = np.asarray(image, dtype=np.float64)
    if x.ndim == 2:
        x = x[..., None]
    return (x + 1.0) * 127.5


def _upsample(scores, shape, window, stride):
    """Bilinear interpolation of window-centre scores onto the pixel grid."""
    h, w = shape
    centre = (window - 1) / 2.0
    ry = (np.arange(h) - centre) / stride
    rx = (np.arange(w) - centre) / stride
    coords = np.meshgrid(ry, rx, indexing="ij")
    out = ndimage.map_coordinates(scores, coords, order=1, mode="nearest")
    return np.clip(out, 0.0, 1.0)


def _majority(labels, strength):
    # ties resolved toward the lowest label
    votes = np.bincount(labels.ravel(), weights=strength.ravel(), minlength=labels.max() + 1)
    return int(np.argmax(votes))


def _disagreement(scores, contrast, saturation):
    """Per-window heat from a (..., K) score array against the majority label.

    Heat is the min-max normalised margin of the window's best label over the
    majority label, damped by how decisive the window's scores are at all.
    """
    best = np.argmax(scores, axis=-1)
    smax, smin = scores.max(axis=-1), scores.min(axis=-1)
    spread = smax - smin
    decisive = np.clip(contrast / saturation, 0.0, 1.0)
    glob = _majority(best, decisive)
    sg = scores[..., glob]
    with np.errstate(invalid="ignore", divide="ignore"):
        margin = np.where(spread > 0, (smax - sg) / spread, 0.0)
    return margin * decisive


def dense_zero_counts(x255):
    """Near-zero DCT coefficient count of the 8x8 block starting at each pixel."""
    h, w, c = x255.shape
    counts = np.zeros((h - 7, w - 7), dtype=np.int32)
    for ch in range(c):
        blocks = sliding_window_view(x255[..., ch], (8, 8))
        coef = np.einsum("ua,ijab,vb->ijuv", _DCT8, blocks, _DCT8, optimize=True)
        counts += (np.abs(coef) < ZERO_THRESHOLD).sum(axis=(2, 3), dtype=np.int32)
    return counts


def grid_votes(image):
    """Zero-count votes per window and candidate origin: shape (wy, wx, 64)."""
    x = _as_255(image)
    h, w = x.shape[:2]
    if h < GRID_WINDOW + 7 or w < GRID_WINDOW + 7:
        raise SizeError(f"image {h}x{w} smaller than one {GRID_WINDOW}px grid window")
    z = dense_zero_counts(x).astype(np.float64)
    k = GRID_WINDOW // 8
    per_origin = []
    for a in range(8):
        for b in range(8):
            lattice = z[a::8, b::8]
            per_origin.append(sliding_window_view(lattice, (k, k)).sum(axis=(2, 3)))
    ny = min(p.shape[0] for p in per_origin)
    nx = min(p.shape[1] for p in per_origin)
    return np.stack([p[:ny, :nx] for p in per_origin], axis=-1)


def detect_grid(image):
    votes = grid_votes(image)
    smax = votes.max(axis=-1)
    contrast = np.where(smax > 0, (smax - votes.min(axis=-1)) / np.maximum(smax, 1e-12), 0.0)
    heat = _disagreement(votes, contrast, GRID_CONTRAST)
    return _upsample(heat, np.shape(image)[:2], GRID_WINDOW, STRIDE)


def _window_means(a, window, stride):
    """Mean of ``a`` (H x W x ...) over sliding windows, sampled every ``stride``."""
    c = np.cumsum(np.cumsum(np.pad(a, ((1, 0), (1, 0)) + ((0, 0),) * (a.ndim - 2)), 0), 1)
    y0 = np.arange(0, a.shape[0] - window + 1, stride)
    x0 = np.arange(0, a.shape[1] - window + 1, stride)
    Y0, X0 = np.meshgrid(y0, x0, indexing="ij")
    Y1, X1 = Y0 + window, X0 + window
    s = c[Y1, X1] - c[Y0, X1] - c[Y1, X0] + c[Y0, X0]
    return s / (window * window)


def phase_scores(image):
    """Bayer-phase evidence per window: shape (wy, wx, 4)."""
    x = _as_255(image)
    if x.shape[-1] != 3:
        x = np.repeat(x[..., :1], 3, axis=-1)
    h, w = x.shape[:2]
    win = min(LOCAL_WINDOW, h - h % 2, w - w % 2)
    energy = np.stack(
        [ndimage.correlate(x[..., c], _LAPLACE, mode="mirror") ** 2 for c in range(3)], axis=-1)
    # per-lattice-position energy: split by (row parity, col parity)
    par = np.zeros((h, w, 3, 4))
    for p in range(2):
        for q in range(2):
            sel = np.zeros((h, w))
            sel[p::2, q::2] = 4.0
            par[..., :, 2 * p + q] = energy * sel[..., None]
    v = _window_means(par, win, STRIDE)  # (wy, wx, 3, 4), mean energy per lattice position
    with np.errstate(invalid="ignore", divide="ignore"):
        v = np.where(v.sum(-1, keepdims=True) > 0, v / v.mean(-1, keepdims=True), 0.0)
    scores = np.empty(v.shape[:2] + (4,))
    for k in range(4):
        py, px = divmod(k, 2)
        r_pos, b_pos = 2 * py + px, 2 * (1 - py) + (1 - px)
        g_pos = (2 * py + (1 - px), 2 * (1 - py) + px)
        scores[..., k] = v[..., 0, r_pos] + v[..., 2, b_pos] + 0.5 * (v[..., 1, g_pos[0]] + v[..., 1, g_pos[1]])
    return scores, win


def detect_variance(image):
    scores, win = phase_scores(image)
    smax, smin = scores.max(-1), scores.min(-1)
    contrast = np.where(smax > 0, (smax - smin) / np.maximum(smax, 1e-12), 0.0)
    heat = _disagreement(scores, contrast, PHASE_CONTRAST)
    return _upsample(heat, np.shape(image)[:2], win, STRIDE)


def _bin(x, k):
    h, w = x.shape[0] // k * k, x.shape[1] // k * k
    return x[:h, :w].reshape(h // k, k, w // k, k, -1).mean(axis=(1, 3))


def noise_levels(image, binning=1):
    """Robust noise std per window (8-bit units), averaged over channels.

    With ``binning > 1`` the image is first averaged over ``binning`` x
    ``binning`` blocks, so the estimate tracks coarser, spatially correlated
    noise. Windows cover the same ``LOCAL_WINDOW`` pixels at every binning.
    """
    x = _bin(_as_255(image), binning)
    h, w = x.shape[:2]
    win = min(LOCAL_WINDOW // binning, h, w)
    step = max(STRIDE // binning, 1)
    res = np.stack([ndimage.correlate(x[..., c], _IMMERKAER, mode="mirror") for c in range(x.shape[-1])], -1)
    views = sliding_window_view(res, (win, win), axis=(0, 1))[::step, ::step]
    flat = views.reshape(views.shape[:3] + (-1,))
    med = np.median(flat, axis=-1, keepdims=True)
    mad = np.median(np.abs(flat - med), axis=-1)
    return 1.4826 * mad.mean(axis=-1) / np.sqrt((_IMMERKAER ** 2).sum()), win * binning


def detect_residual(image):
    """Mean over binnings of each window's relative deviation from the median level."""
    shape = np.shape(image)[:2]
    maps = []
    for k in RESIDUAL_BINNINGS:
        if k > 1 and min(shape) // k < 3:
            continue
        sigma, win = noise_levels(image, k)
        ref = np.median(sigma)
        heat = np.clip(np.abs(sigma - ref) / ref, 0.0, 1.0) if ref > 0 else np.zeros_like(sigma)
        maps.append(_upsample(heat, shape, win, max(STRIDE // k, 1) * k))
    return np.mean(maps, axis=0)


DETECTORS = {
    "grid": detect_grid,
    "variance": detect_variance,
    "residual": detect_residual,
}
