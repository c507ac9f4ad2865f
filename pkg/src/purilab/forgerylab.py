"""Synthetic camera-pipeline images and spliced forgeries.

Each clean image is a smooth procedural texture pushed through a toy camera:
Bayer sampling with sensor noise, bilinear demosaicing, 8x8 block-DCT
quantization on a fixed grid, and 8-bit storage. A forgery pastes a region
from a donor made with a different Bayer phase, grid origin and noise level,
so the traces the detectors look for are locally inconsistent.
"""

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import fft, ndimage

from .errors import GeometryError, ParameterError

# IJG luminance quantization table
JPEG_LUMA = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

# channel index of the RGGB tile
_RGGB = np.array([[0, 1], [1, 2]])
_K_GREEN = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]]) / 4.0
_K_RB = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]]) / 4.0


@dataclass(frozen=True)
class PipelineParams:
    bayer_phase: int = 0
    quantize: bool = True
    quality: float = 0.75
    noise_std: float = 2.0  # 8-bit units, added to the raw mosaic
    grid_offset: tuple = (0, 0)
    texture_seed: int = 0
    grain_std: float = 0.0  # 8-bit units, spatially correlated luminance grain
    grain_sigma: float = 1.5  # correlation length of the grain in pixels

    def __post_init__(self):
        if self.bayer_phase not in (0, 1, 2, 3):
            raise ParameterError(f"bayer phase must be 0..3, got {self.bayer_phase}")
        if not (0 < self.quality <= 1):
            raise ParameterError(f"quality must be in (0, 1], got {self.quality}")
        if self.noise_std < 0:
            raise ParameterError(f"noise std must be >= 0, got {self.noise_std}")
        if self.grain_std < 0 or self.grain_sigma <= 0:
            raise ParameterError(f"grain needs std >= 0 and sigma > 0, got {self.grain_std}, {self.grain_sigma}")
        if len(self.grid_offset) != 2 or not all(0 <= int(o) < 8 for o in self.grid_offset):
            raise ParameterError(f"grid offset must be two ints in [0, 8), got {self.grid_offset}")


@dataclass(frozen=True)
class ForgerySpec:
    """Region in donor coordinates, pasted at ``region + offset`` in the target.

    ``shape`` is ``"rect"`` with ``box = (top, left, height, width)`` or
    ``"disk"`` with ``box = (center_y, center_x, radius)``.
    """

    shape: str = "rect"
    box: tuple = (96, 96, 64, 64)
    offset: tuple = (0, 0)
    donor: PipelineParams = field(default_factory=lambda: PipelineParams(
        bayer_phase=3, grid_offset=(4, 4), noise_std=6.0, grain_std=12.0, grain_sigma=3.0))


def bayer_offset(phase):
    return divmod(int(phase), 2)


def cfa_pattern(h, w, phase):
    """H x W array of channel indices for the given Bayer phase."""
    py, px = bayer_offset(phase)
    rows = (np.arange(h)[:, None] + py) % 2
    cols = (np.arange(w)[None, :] + px) % 2
    return _RGGB[rows, cols]


def quant_steps(quality):
    """IJG-scaled quantizer steps; quality 1 gives the unit quantizer."""
    q = 100.0 * quality
    scale = 200.0 - 2.0 * q if q >= 50 else 5000.0 / q
    return np.maximum(1.0, np.floor((JPEG_LUMA * scale + 50.0) / 100.0))


def texture(rng, size):
    """Smooth multi-scale colour texture in [0, 1]."""
    h = w = size
    out = np.zeros((h, w, 3))
    scales = (24.0, 12.0, 6.0, 3.0, 1.5)
    amps = (1.0, 0.7, 0.45, 0.25, 0.12)
    for s, a in zip(scales, amps):
        field_ = ndimage.gaussian_filter(rng.standard_normal((h, w, 3)), sigma=(s, s, 0), mode="wrap")
        field_ /= field_.std() + 1e-12
        lum = field_[..., :1]
        out += a * (0.75 * lum + 0.25 * field_)
    mix = np.eye(3) + 0.15 * rng.standard_normal((3, 3))
    out = out @ mix.T
    lo, hi = np.percentile(out, 0.5), np.percentile(out, 99.5)
    out = (out - lo) / (hi - lo)
    base = rng.uniform(0.3, 0.7, size=3)
    return np.clip(0.15 + 0.7 * (0.5 * out + 0.5 * base), 0.02, 0.98)


def demosaic_bilinear(raw, phase):
    """Bilinear interpolation of a single-channel Bayer mosaic."""
    pattern = cfa_pattern(*raw.shape, phase)
    out = np.empty(raw.shape + (3,))
    for c in range(3):
        k = _K_GREEN if c == 1 else _K_RB
        out[..., c] = ndimage.convolve(np.where(pattern == c, raw, 0.0), k, mode="mirror")
    return out


def block_dct_quantize(img255, steps, offset=(0, 0)):
    """Quantize 8x8 DCT blocks whose grid starts at ``offset``; values in 0..255."""
    oy, ox = (int(o) % 8 for o in offset)
    top, left = (8 - oy) % 8, (8 - ox) % 8
    h, w = img255.shape[:2]
    bottom, right = (-(h + top)) % 8, (-(w + left)) % 8
    x = np.pad(img255, ((top, bottom), (left, right), (0, 0)), mode="symmetric") - 128.0
    H, W, C = x.shape
    blocks = x.reshape(H // 8, 8, W // 8, 8, C)
    coef = fft.dctn(blocks, axes=(1, 3), norm="ortho")
    s = steps[None, :, None, :, None]
    coef = np.round(coef / s) * s
    y = fft.idctn(coef, axes=(1, 3), norm="ortho").reshape(H, W, C) + 128.0
    return y[top:top + h, left:left + w]


def to_model(img255):
    return img255 * (2.0 / 255.0) - 1.0


def synth_clean(seed, size=256, params=PipelineParams()):
    """Generate one pristine image in model range [-1, 1] (8-bit exact)."""
    if size < 64:
        raise ParameterError(f"size must be >= 64, got {size}")
    rng = np.random.default_rng([int(seed), int(params.texture_seed)])
    scene = texture(rng, size) * 255.0
    if params.grain_std > 0:
        g = ndimage.gaussian_filter(rng.standard_normal((size, size)), params.grain_sigma, mode="wrap")
        scene = scene + (params.grain_std / (g.std() + 1e-12)) * g[..., None]
    pattern = cfa_pattern(size, size, params.bayer_phase)
    raw = np.take_along_axis(scene, pattern[..., None], axis=2)[..., 0]
    raw = raw + params.noise_std * rng.standard_normal(raw.shape)
    img = demosaic_bilinear(raw, params.bayer_phase)
    if params.quantize:
        img = block_dct_quantize(img, quant_steps(params.quality), params.grid_offset)
    img = np.floor(np.clip(img, 0.0, 255.0) + 0.5)
    return to_model(img)


def region_mask(spec, h, w):
    yy, xx = np.mgrid[:h, :w]
    if spec.shape == "rect":
        t, l, rh, rw = spec.box
        return (yy >= t) & (yy < t + rh) & (xx >= l) & (xx < l + rw)
    if spec.shape == "disk":
        cy, cx, r = spec.box
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    raise ParameterError(f"unknown region shape {spec.shape!r}")


def _bounds(spec):
    if spec.shape == "rect":
        t, l, rh, rw = spec.box
        return t, l, t + rh, l + rw
    cy, cx, r = spec.box
    return cy - r, cx - r, cy + r + 1, cx + r + 1


def make_forgery(target, donor, spec):
    """Paste ``spec``'s donor region into ``target``.

    Returns the forged image and the uint8 mask of pasted pixels.
    """
    target, donor = np.asarray(target), np.asarray(donor)
    h, w = target.shape[:2]
    dy, dx = spec.offset
    src = region_mask(spec, *donor.shape[:2])
    t, l, b, r = _bounds(spec)
    if b > t and r > l:
        if t < 0 or l < 0 or b > donor.shape[0] or r > donor.shape[1]:
            raise GeometryError(f"region {spec.box} outside donor {donor.shape[:2]}")
        if t + dy < 0 or l + dx < 0 or b + dy > h or r + dx > w:
            raise GeometryError(f"pasted region {spec.box} + {spec.offset} outside target {(h, w)}")
    ys, xs = np.nonzero(src)
    forged = target.copy()
    forged[ys + dy, xs + dx] = donor[ys, xs]
    mask = np.zeros((h, w), dtype=np.uint8)
    mask[ys + dy, xs + dx] = 1
    return forged, mask


@dataclass(frozen=True)
class Recipe:
    count: int = 20
    size: int = 256
    region: int = 64
    target: PipelineParams = PipelineParams()
    donor: PipelineParams = PipelineParams(bayer_phase=3, grid_offset=(4, 4), noise_std=6.0, grain_std=12.0, grain_sigma=3.0)


def generate_dataset(seed, recipe=Recipe()):
    """Yield ``(index, clean, forged, mask, record)`` for each image."""
    for i in range(recipe.count):
        ss = np.random.SeedSequence(int(seed), spawn_key=(i,))
        target_seed, donor_seed, geom_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
        geom = np.random.default_rng(geom_seed)
        top, left = (int(v) for v in geom.integers(0, recipe.size - recipe.region + 1, size=2))
        spec = ForgerySpec("rect", (top, left, recipe.region, recipe.region), (0, 0), recipe.donor)
        clean = synth_clean(target_seed, recipe.size, recipe.target)
        donor = synth_clean(donor_seed, recipe.size, recipe.donor)
        forged, mask = make_forgery(clean, donor, spec)
        record = {
            "index": i,
            "target_seed": target_seed,
            "donor_seed": donor_seed,
            "target_params": asdict(recipe.target),
            "forgery": asdict(spec),
        }
        yield i, clean, forged, mask, record
