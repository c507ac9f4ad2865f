"""Similarity measures between images and their analytic gradients.

SSIM uses a Gaussian window and is averaged over every fully-contained
window position ("valid" filtering) and over channels. Because the window
never reads outside the image, the adjoint of the local filter is a plain
zero-padded correlation, which keeps the gradient exact.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ParameterError, ShapeError


@dataclass(frozen=True)
class SSIMParams:
    size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 2.0

    def __post_init__(self):
        if self.k1 <= 0 or self.k2 <= 0:
            raise ParameterError("K1 and K2 must be positive")
        if self.size < 1 or self.size % 2 == 0:
            raise ParameterError("window size must be odd")

    def window(self):
        r = self.size // 2
        g = np.exp(-0.5 * (np.arange(-r, r + 1) / self.sigma) ** 2)
        return g / g.sum()


@dataclass(frozen=True)
class GuidanceMetric:
    """``kind`` is ``"neg-ssim"`` or ``"mse"``."""

    kind: str = "neg-ssim"
    ssim_params: SSIMParams = field(default_factory=SSIMParams)

    def __post_init__(self):
        if self.kind not in METRICS:
            raise ParameterError(f"unknown guidance metric {self.kind!r}")


METRICS = ("neg-ssim", "mse")
_ALIASES = {"ssim": "neg-ssim", "neg-ssim": "neg-ssim", "negssim": "neg-ssim", "mse": "mse"}


def make_metric(name):
    try:
        return GuidanceMetric(_ALIASES[name.lower()])
    except KeyError:
        raise ParameterError(f"unknown guidance metric {name!r}") from None


def _as3d(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[..., None]
    if x.ndim != 3:
        raise ShapeError(f"expected an H x W x C image, got shape {x.shape}")
    return x


def _check_pair(x, y):
    x, y = _as3d(x), _as3d(y)
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {y.shape}")
    return x, y


def _filter_valid(a, w):
    r = len(w) // 2
    out = ndimage.correlate1d(a, w, axis=0, mode="constant")
    out = ndimage.correlate1d(out, w, axis=1, mode="constant")
    return out[r:a.shape[0] - r, r:a.shape[1] - r]


def _filter_adjoint(a, w):
    # adjoint of _filter_valid for a symmetric window
    r = len(w) // 2
    full = np.pad(a, ((r, r), (r, r), (0, 0)))
    out = ndimage.correlate1d(full, w, axis=0, mode="constant")
    return ndimage.correlate1d(out, w, axis=1, mode="constant")


def _ssim_terms(x, y, params):
    w = params.window()
    if min(x.shape[:2]) < len(w):
        raise ShapeError(f"image {x.shape[:2]} smaller than the {len(w)}x{len(w)} SSIM window")
    c1 = (params.k1 * params.data_range) ** 2
    c2 = (params.k2 * params.data_range) ** 2
    mx, my = _filter_valid(x, w), _filter_valid(y, w)
    vx = _filter_valid(x * x, w) - mx * mx
    vy = _filter_valid(y * y, w) - my * my
    cxy = _filter_valid(x * y, w) - mx * my
    a1, a2 = 2 * mx * my + c1, 2 * cxy + c2
    b1, b2 = mx * mx + my * my + c1, vx + vy + c2
    smap = a1 * a2 / (b1 * b2)
    return w, smap, (mx, my, a1, a2, b1, b2)


def ssim(x, y, params=None):
    """Mean SSIM index of two images of equal shape."""
    params = params or SSIMParams()
    x, y = _check_pair(x, y)
    return float(_ssim_terms(x, y, params)[1].mean())


def ssim_gradient(x, y, params=None):
    """Return ``(ssim(x, y), d ssim / d x)``."""
    params = params or SSIMParams()
    x, y = _check_pair(x, y)
    w, smap, (mx, my, a1, a2, b1, b2) = _ssim_terms(x, y, params)
    # partial derivatives of the per-window index w.r.t. its local statistics
    d_mx = 2 * my * a2 / (b1 * b2) - smap * 2 * mx / b1
    d_vx = -smap / b2
    d_cxy = 2 * a1 / (b1 * b2)
    scale = 1.0 / smap.size
    grad = (
        _filter_adjoint(d_mx - 2 * d_vx * mx - d_cxy * my, w)
        + 2 * x * _filter_adjoint(d_vx, w)
        + y * _filter_adjoint(d_cxy, w)
    )
    return float(smap.mean()), grad * scale


def metric_value(metric, x, x_in):
    x, x_in = _check_pair(x, x_in)
    if metric.kind == "mse":
        return float(np.mean((x - x_in) ** 2))
    return -ssim(x, x_in, metric.ssim_params)


def metric_gradient(metric, x, x_in):
    """Gradient of ``metric_value(metric, x, x_in)`` with respect to ``x``."""
    shape = np.shape(x)
    x, x_in = _check_pair(x, x_in)
    if metric.kind == "mse":
        g = 2.0 * (x - x_in) / x.size
    else:
        g = -ssim_gradient(x, x_in, metric.ssim_params)[1]
    return g.reshape(shape)
