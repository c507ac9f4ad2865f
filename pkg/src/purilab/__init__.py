"""Diffusion-based purification of image forgery traces, with a synthetic test bench.

Modules: ``schedule`` (noise schedules), ``diffusion`` (forward/reverse steps and
purification), ``denoiser`` (analytic and convolutional noise predictors),
``guidance`` (SSIM/MSE guidance), ``tiler``, ``forgerylab`` (synthetic camera
pipeline and forgeries), ``forensics`` (trace detectors), ``metrics``,
``experiment`` and ``cli``.
"""

__version__ = "0.1.0"
