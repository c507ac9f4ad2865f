"""Noise predictors for the reverse process.

Two variants share the ``predict_eps(x_t, t)`` interface:

* ``AnalyticGaussian`` returns the exact noise prediction when the clean
  data are independent Gaussians, which makes the sampler testable against a
  known target distribution.
* ``ConvNet`` is a small fully-convolutional network trained on clean image
  patches with a plain numpy forward/backward pass.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NumericError, ParameterError, ShapeError, TrainingError

log = logging.getLogger(__name__)

MAGIC = b"CFDN1"


def analytic_gaussian_eps(m, v, x_t, t, schedule):
    """Exact noise prediction for x0 ~ N(m, diag(v)).

    The posterior mean of x0 given x_t is
    ``m + sqrt(ab) v (x_t - sqrt(ab) m) / (ab v + 1 - ab)``; the noise estimate
    follows by inverting the forward map.
    """
    m = np.asarray(m, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    if np.any(v <= 0):
        raise ParameterError("variance must be positive")
    try:
        np.broadcast_shapes(m.shape, v.shape, x_t.shape)
    except ValueError:
        raise ShapeError(f"cannot align mean {m.shape}, variance {v.shape}, input {x_t.shape}") from None
    t = schedule.check_step(t)
    ab = schedule.alpha_bars[t]
    sab = np.sqrt(ab)
    x0_mean = m + sab * v * (x_t - sab * m) / (ab * v + (1.0 - ab))
    return (x_t - sab * x0_mean) / np.sqrt(1.0 - ab)


class AnalyticGaussian:
    def __init__(self, mean, var, schedule):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.var = np.asarray(var, dtype=np.float64)
        if np.any(self.var <= 0):
            raise ParameterError("variance must be positive")
        self.mean, self.var = np.broadcast_arrays(self.mean, self.var)
        self.shape = self.mean.shape
        self.schedule = schedule

    def predict_eps(self, x_t, t):
        x_t = np.asarray(x_t)
        if x_t.shape[x_t.ndim - len(self.shape):] != self.shape:
            raise ShapeError(f"input {x_t.shape} does not end with {self.shape}")
        return analytic_gaussian_eps(self.mean, self.var, x_t, t, self.schedule)


# -- convolutional network ---------------------------------------------------

def _silu(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return z * s, s


def _pad1(x):
    return np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)), mode="reflect")


def _unpad1_adjoint(d):
    # adjoint of 1-pixel reflect padding on axes 1 and 2
    d = d.copy()
    d[:, 2] += d[:, 0]
    d[:, -3] += d[:, -1]
    d = d[:, 1:-1]
    d[:, :, 2] += d[:, :, 0]
    d[:, :, -3] += d[:, :, -1]
    return d[:, :, 1:-1]


def _row_taps(x):
    # pad, then stack the three horizontal taps along channels: (N, H+2, W, 3C)
    w = x.shape[2]
    xp = _pad1(x)
    return np.concatenate([xp[:, :, j:j + w] for j in range(3)], axis=-1)


def _conv(taps, w, b, h):
    """3x3 convolution as three matmuls over vertically shifted row blocks."""
    k = 3 * w.shape[2]
    out = b
    for i in range(3):
        rows = taps[:, i:i + h]
        out = out + (rows.reshape(-1, k) @ w[i].reshape(k, -1)).reshape(rows.shape[:3] + (-1,))
    return out


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 3000
    batch_size: int = 16
    learning_rate: float = 2e-3
    seed: int = 0
    patch: int = 32
    t_max: int = 0  # 0 means the full schedule
    log_every: int = 200
    dtype: str = "float32"

    def __post_init__(self):
        if self.iterations < 0 or self.batch_size < 1 or self.learning_rate <= 0 or self.patch < 2:
            raise ParameterError(f"invalid training config {self}")


class ConvNet:
    """3x3 reflect-padded convolutions with SiLU between layers.

    The input is the noisy image plus one constant channel holding ``t / T``.
    ``weights[i]`` has shape ``(3, 3, c_in, c_out)``.
    """

    def __init__(self, weights, biases, T):
        if len(weights) != len(biases) or not weights:
            raise ParameterError("need one bias per weight array")
        for w, b in zip(weights, biases):
            if w.ndim != 4 or w.shape[:2] != (3, 3) or b.shape != (w.shape[3],):
                raise ParameterError(f"bad layer shapes {w.shape}, {b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ParameterError("non-finite weights")
        for a, b in zip(weights, weights[1:]):
            if a.shape[3] != b.shape[2]:
                raise ParameterError("layer channel counts do not chain")
        self.weights = list(weights)
        self.biases = list(biases)
        self.T = int(T)
        self.channels = weights[-1].shape[3]
        if weights[0].shape[2] != self.channels + 1:
            raise ParameterError("first layer must take image channels + time channel")

    @classmethod
    def init(cls, rng, channels=3, width=32, depth=4, T=1000, dtype=np.float64):
        dims = [channels + 1] + [width] * (depth - 1) + [channels]
        weights, biases = [], []
        for cin, cout in zip(dims, dims[1:]):
            a = np.sqrt(1.0 / (9 * cin))
            weights.append(rng.uniform(-a, a, size=(3, 3, cin, cout)).astype(dtype))
            biases.append(np.zeros(cout, dtype=dtype))
        return cls(weights, biases, T)

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @property
    def dtype(self):
        return self.weights[0].dtype

    def astype(self, dtype):
        return ConvNet([w.astype(dtype) for w in self.weights],
                       [b.astype(dtype) for b in self.biases], self.T)

    def _inputs(self, x, tfrac):
        tfrac = np.broadcast_to(np.asarray(tfrac, dtype=self.dtype).reshape(-1, 1, 1, 1), x.shape[:3] + (1,))
        return np.concatenate([x.astype(self.dtype, copy=False), tfrac], axis=-1)

    def forward(self, x, tfrac, keep=False):
        """Run the network on a batch ``x`` (N x H x W x C)."""
        h = self._inputs(x, tfrac)
        rows = h.shape[1]
        cache = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            taps = _row_taps(h)
            z = _conv(taps, w, b, rows)
            if i < last:
                h, s = _silu(z)
            else:
                h, s = z, None
            if keep:
                cache.append((taps, z, s))
        return (h, cache) if keep else h

    def backward(self, dout, cache):
        """Gradients of a scalar loss given ``dout = dL/d(output)``."""
        gw, gb = [None] * len(self.weights), [None] * len(self.weights)
        d = dout
        for i in range(len(self.weights) - 1, -1, -1):
            taps, z, s = cache[i]
            if s is not None:
                d = d * (s * (1.0 + z * (1.0 - s)))
            w = self.weights[i]
            cin, cout = w.shape[2], w.shape[3]
            n, hh, ww, _ = d.shape
            d2 = d.reshape(-1, cout)
            gw[i] = np.stack([
                (taps[:, ky:ky + hh].reshape(-1, 3 * cin).T @ d2).reshape(3, cin, cout)
                for ky in range(3)
            ])
            gb[i] = d.sum(axis=(0, 1, 2))
            if i == 0:
                break
            dtaps = np.zeros(taps.shape, dtype=d.dtype)
            for ky in range(3):
                dtaps[:, ky:ky + hh] += (d2 @ w[ky].reshape(3 * cin, cout).T).reshape(n, hh, ww, 3 * cin)
            dpad = np.zeros((n, hh + 2, ww + 2, cin), dtype=d.dtype)
            for kx in range(3):
                dpad[:, :, kx:kx + ww] += dtaps[..., kx * cin:(kx + 1) * cin]
            d = _unpad1_adjoint(dpad)
        return gw, gb

    def predict_eps(self, x_t, t):
        x = np.asarray(x_t, dtype=np.float64)
        single = x.ndim == 3
        if single:
            x = x[None]
        if x.ndim != 4 or x.shape[-1] != self.channels or min(x.shape[1:3]) < 2:
            raise ShapeError(f"expected (N,) H x W x {self.channels} input, got {np.shape(x_t)}")
        if not (1 <= t <= self.T):
            raise IndexError(f"time step {t} outside [1, {self.T}]")
        out = self.forward(x, t / self.T).astype(np.float64)
        return out[0] if single else out


def predict_eps(denoiser, x_t, t):
    return denoiser.predict_eps(x_t, t)


# -- training ------------------------------------------------------------------

def _loss_and_grads(net, x0, t, eps, schedule):
    ab = schedule.alpha_bars[t].reshape(-1, 1, 1, 1).astype(x0.dtype)
    x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    out, cache = net.forward(x_t, t / net.T, keep=True)
    diff = out - eps
    loss = float(np.mean(diff * diff))
    gw, gb = net.backward(2.0 * diff / diff.size, cache)
    return loss, gw, gb


def _crop_batch(data, rng, batch, patch):
    n, h, w, _ = data.shape
    idx = rng.integers(0, n, size=batch)
    ys = rng.integers(0, h - patch + 1, size=batch)
    xs = rng.integers(0, w - patch + 1, size=batch)
    return np.stack([data[i, y:y + patch, x:x + patch] for i, y, x in zip(idx, ys, xs)])


def train_conv_denoiser(dataset, schedule, config=TrainConfig(), width=32, depth=4):
    """Fit a ConvNet to predict the injected noise on clean patches.

    Each iteration crops random ``config.patch`` squares, draws a uniform time
    step and Gaussian noise, and takes one Adam step on the mean squared
    error between the prediction and the noise.
    """
    if len(dataset) == 0:
        raise ParameterError("empty training set")
    shapes = {np.shape(p) for p in dataset}
    if len(shapes) != 1:
        raise ParameterError(f"training images differ in shape: {sorted(shapes)}")
    data = np.stack([np.asarray(p, dtype=np.float64) for p in dataset])
    if data.ndim != 4 or min(data.shape[1:3]) < config.patch:
        raise ParameterError(f"training images {data.shape[1:]} smaller than patch {config.patch}")
    rng = np.random.default_rng(config.seed)
    dtype = np.dtype(config.dtype)
    data = data.astype(dtype)
    net = ConvNet.init(rng, channels=data.shape[-1], width=width, depth=depth, T=schedule.T, dtype=dtype)
    t_max = config.t_max or schedule.T
    params = net.weights + net.biases
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    b1, b2, lr = 0.9, 0.999, config.learning_rate
    running = None
    for it in range(1, config.iterations + 1):
        x0 = _crop_batch(data, rng, config.batch_size, config.patch)
        t = rng.integers(1, t_max + 1, size=config.batch_size)
        eps = rng.standard_normal(x0.shape).astype(dtype)
        loss, gw, gb = _loss_and_grads(net, x0, t, eps, schedule)
        if not np.isfinite(loss):
            raise TrainingError(f"loss became non-finite at iteration {it}")
        for p, g, a, b in zip(params, gw + gb, m1, m2):
            a *= b1
            a += (1 - b1) * g
            b *= b2
            b += (1 - b2) * g * g
            p -= lr * (a / (1 - b1 ** it)) / (np.sqrt(b / (1 - b2 ** it)) + 1e-8)
        running = loss if running is None else 0.98 * running + 0.02 * loss
        if config.log_every and it % config.log_every == 0:
            log.info("iter %d  loss %.5f  (smoothed %.5f)", it, loss, running)
    return net


# -- model file ----------------------------------------------------------------

def save_model(net, path, schedule=None):
    header = {
        "format": "CFDN1",
        "T": net.T,
        "activation": "silu",
        "padding": "reflect",
        "time_embedding": "t/T as extra input channel",
        "layers": [
            {"kernel": 3, "in": int(w.shape[2]), "out": int(w.shape[3]),
             "weight_shape": list(w.shape), "bias_shape": list(b.shape)}
            for w, b in zip(net.weights, net.biases)
        ],
        "order": "per layer: weight (ky, kx, in, out) then bias; float32 little-endian",
    }
    if schedule is not None:
        header["beta_start"] = float(schedule.betas[1])
        header["beta_end"] = float(schedule.betas[-1])
    blob = b"".join(
        a.astype("<f4").tobytes() for w, b in zip(net.weights, net.biases) for a in (w, b)
    )
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        f.write(blob)


def load_model(path):
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise ParameterError(f"{path}: not a CFDN1 model file")
    end = raw.index(b"\n", len(MAGIC))
    header = json.loads(raw[len(MAGIC):end])
    flat = np.frombuffer(raw[end + 1:], dtype="<f4")
    weights, biases, pos = [], [], 0
    for layer in header["layers"]:
        for shape, sink in ((layer["weight_shape"], weights), (layer["bias_shape"], biases)):
            n = int(np.prod(shape))
            if pos + n > flat.size:
                raise ParameterError(f"{path}: truncated weight data")
            sink.append(flat[pos:pos + n].reshape(shape).astype(np.float32))
            pos += n
    if pos != flat.size:
        raise ParameterError(f"{path}: {flat.size - pos} trailing weight values")
    return ConvNet(weights, biases, header["T"]), header


def check_finite(a, what="denoiser output"):
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values in {what}")
    return a
