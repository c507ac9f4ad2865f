"""Linear DDPM noise schedule and per-step constants."""

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


def _frozen(a):
    a = np.asarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-step constants for a discrete diffusion of ``T`` steps.

    Arrays are indexed by time step: ``betas[t]`` is beta_t for ``t`` in
    ``1..T``, with a padding entry at index 0 so that ``alpha_bars[0] == 1``
    and ``sigmas[0] == 0``.
    """

    T: int
    variance: str
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    sigmas: np.ndarray

    def check_step(self, t, lo=1):
        if not (lo <= int(t) <= self.T) or int(t) != t:
            raise IndexError(f"time step {t} outside [{lo}, {self.T}]")
        return int(t)


def build_linear_schedule(T=DEFAULT_T, beta_start=DEFAULT_BETA_START, beta_end=DEFAULT_BETA_END,
                          variance="posterior"):
    """Linearly spaced betas from ``beta_start`` to ``beta_end`` inclusive.

    ``variance`` picks the reverse-step variance: ``"posterior"`` uses
    beta_t (1 - abar_{t-1}) / (1 - abar_t); ``"beta"`` uses beta_t itself, which
    is the exact reverse variance when the data are standard normal and
    matters on short chains. Both give sigma_1 = 0.
    """
    if variance not in ("posterior", "beta"):
        raise ParameterError(f"unknown reverse variance {variance!r}")
    if int(T) != T or T < 1:
        raise ParameterError(f"T must be a positive integer, got {T}")
    if not (0 < beta_start <= beta_end < 1):
        raise ParameterError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    T = int(T)
    betas = np.concatenate([[0.0], np.linspace(beta_start, beta_end, T, dtype=np.float64)])
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    var = np.zeros(T + 1)
    if variance == "posterior":
        var[2:] = betas[2:] * (1.0 - alpha_bars[1:-1]) / (1.0 - alpha_bars[2:])
    else:
        var[2:] = betas[2:]
    return NoiseSchedule(
        T=T,
        variance=variance,
        betas=_frozen(betas),
        alphas=_frozen(alphas),
        alpha_bars=_frozen(alpha_bars),
        sigmas=_frozen(np.sqrt(var)),
    )


def alpha_bar(schedule, t):
    """Cumulative signal fraction at step ``t``; 1 at ``t = 0``."""
    return float(schedule.alpha_bars[schedule.check_step(t, lo=0)])


def guidance_scale(schedule, t, s):
    """Step-dependent guidance strength ``s * sqrt(1 - abar_t) / sqrt(abar_t)``."""
    t = schedule.check_step(t)
    if s < 0:
        raise ParameterError(f"base scale must be non-negative, got {s}")
    ab = schedule.alpha_bars[t]
    return float(s * np.sqrt(1.0 - ab) / np.sqrt(ab))
