"""Forward noising, ancestral reverse steps and the purification procedures."""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .denoiser import check_finite
from .errors import ParameterError, ShapeError
from .guidance import GuidanceMetric, make_metric, metric_gradient
from .schedule import guidance_scale
from .tiler import merge_patches, split_patches


@dataclass(frozen=True)
class PurifyConfig:
    t_star: int = 40
    guided: bool = False
    scale: float = 1e6
    metric: str = "neg-ssim"
    seed: int = 0
    clamp_each_step: bool = False

    def __post_init__(self):
        if self.t_star < 0 or int(self.t_star) != self.t_star:
            raise ParameterError(f"t_star must be a non-negative integer, got {self.t_star}")
        if self.scale < 0:
            raise ParameterError(f"guidance scale must be non-negative, got {self.scale}")
        make_metric(self.metric)

    @property
    def variant(self):
        return "diff-cfg" if self.guided else "diff-cf"


def noise_stream(root_seed, image_id=0, patch_index=0):
    """Generator for one patch, keyed by (root seed, image, patch).

    Uses numpy's SeedSequence spawn keys, so the stream for a given key does not
    depend on how many other patches exist or in which order they run.
    """
    ss = np.random.SeedSequence(int(root_seed), spawn_key=(int(image_id), int(patch_index)))
    return np.random.default_rng(ss)


def _same_shape(a, b, what):
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"{what}: shape {np.shape(a)} vs {np.shape(b)}")


def forward_sample(x0, t, eps, schedule):
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    _same_shape(x0, eps, "noise must match the image")
    ab = schedule.alpha_bars[schedule.check_step(t, lo=0)]
    return np.sqrt(ab) * np.asarray(x0, dtype=np.float64) + np.sqrt(1.0 - ab) * np.asarray(eps, dtype=np.float64)


def _reverse_mean(x_t, t, denoiser, schedule):
    eps_hat = check_finite(np.asarray(denoiser.predict_eps(x_t, t), dtype=np.float64))
    _same_shape(eps_hat, x_t, "denoiser output")
    beta, alpha, ab = schedule.betas[t], schedule.alphas[t], schedule.alpha_bars[t]
    return (x_t - (beta / np.sqrt(1.0 - ab)) * eps_hat) / np.sqrt(alpha)


def reverse_step(x_t, t, denoiser, schedule, noise):
    t = schedule.check_step(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    _same_shape(noise, x_t, "noise must match the image")
    mu = _reverse_mean(x_t, t, denoiser, schedule)
    return mu + schedule.sigmas[t] * noise


def guided_reverse_step(x_t, t, x_in, denoiser, schedule, metric, s, noise):
    """Reverse step whose mean is pushed down the gradient of D(x_t, x_in).

    The shift is ``s_t * sigma_t**2 * grad`` with ``s_t`` from
    :func:`guidance_scale`; with ``s == 0`` this is exactly :func:`reverse_step`.
    """
    t = schedule.check_step(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    _same_shape(noise, x_t, "noise must match the image")
    _same_shape(x_in, x_t, "guide image must match the sample")
    if isinstance(metric, str):
        metric = make_metric(metric)
    elif not isinstance(metric, GuidanceMetric):
        raise ParameterError(f"unknown guidance metric {metric!r}")
    mu = _reverse_mean(x_t, t, denoiser, schedule)
    st = guidance_scale(schedule, t, s)
    if st != 0.0:
        var = schedule.sigmas[t] ** 2
        mu = mu - st * var * metric_gradient(metric, x_t, x_in)
    return mu + schedule.sigmas[t] * noise


def purify(x_in, denoiser, schedule, config, rng=None):
    """Noise ``x_in`` to step ``t_star`` and run the reverse chain back to 0.

    ``rng`` defaults to ``noise_stream(config.seed)``. The forward noise is drawn
    first, then one noise array per reverse step from ``t_star`` down to 1.
    """
    x_in = np.asarray(x_in, dtype=np.float64)
    if config.t_star > schedule.T:
        raise ParameterError(f"t_star {config.t_star} exceeds T={schedule.T}")
    if rng is None:
        rng = noise_stream(config.seed)
    metric = make_metric(config.metric)
    x = forward_sample(x_in, config.t_star, rng.standard_normal(x_in.shape), schedule)
    for t in range(config.t_star, 0, -1):
        noise = rng.standard_normal(x.shape)
        if config.guided:
            x = guided_reverse_step(x, t, x_in, denoiser, schedule, metric, config.scale, noise)
        else:
            x = reverse_step(x, t, denoiser, schedule, noise)
        if config.clamp_each_step:
            np.clip(x, -1.0, 1.0, out=x)
    return np.clip(x, -1.0, 1.0)


def median_purify(x_in, kernel=3):
    """Per-channel spatial median filter with reflected borders."""
    if int(kernel) != kernel or kernel < 3 or kernel % 2 == 0:
        raise ParameterError(f"kernel must be an odd integer >= 3, got {kernel}")
    x = np.asarray(x_in, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"expected H x W x C image, got {x.shape}")
    return ndimage.median_filter(x, size=(kernel, kernel, 1), mode="reflect")


def purify_image(image, denoiser, schedule, config, image_id=0, patch=256):
    """Tile ``image``, purify each tile on its own noise stream, and reassemble."""
    tiles, layout = split_patches(image, patch)
    out = [
        purify(tile, denoiser, schedule, config, rng=noise_stream(config.seed, image_id, k))
        for k, tile in enumerate(tiles)
    ]
    return merge_patches(out, layout)
