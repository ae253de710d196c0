"""Convolutional autoencoder over 2xW I/Q windows, trained from scratch.

The encoder halves the length three times with strided convolutions, then a
1x1 projection squeezes the channel count to 2, leaving a latent of W/4
values (8x undercomplete). The decoder mirrors this with nearest-neighbor
upsampling and a linear output layer. Everything is plain numpy: forward,
backprop, Adam/SGD, and a versioned binary weight file that doubles as the
shared secret key of the authentication protocol.

Weights are kept float32-representable even when a model computes in
float64, so writing the 32-bit weight file and reading it back reproduces
forward outputs bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import CorruptKeyError, IncompatibleKeyError, TrainingDivergedError

_WEIGHT_MAGIC = b"DACW"
_WEIGHT_VERSION = 1
_NORM_EPS = 1e-12


def _snap_f32(arr: np.ndarray, dtype) -> np.ndarray:
    """Round values onto the float32 grid, keeping the working dtype."""
    return arr.astype(np.float32).astype(dtype)


class Conv1d:
    """1-D convolution with same-padding, optional stride and ReLU."""

    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int,
                 relu: bool, rng: np.random.Generator, dtype=np.float32):
        self.c_in = c_in
        self.c_out = c_out
        self.kernel = kernel
        self.stride = stride
        self.relu = relu
        self.pad = (kernel - 1) // 2
        limit = np.sqrt(6.0 / (c_in * kernel))
        self.w = _snap_f32(rng.uniform(-limit, limit, size=(c_out, c_in, kernel)), dtype)
        self.b = np.zeros(c_out, dtype=dtype)
        self._cache = None

    def out_len(self, length: int) -> int:
        return (length + 2 * self.pad - self.kernel) // self.stride + 1

    def forward(self, x: np.ndarray, keep_cache: bool) -> np.ndarray:
        batch, _, length = x.shape
        l_out = self.out_len(length)
        xp = np.pad(x, ((0, 0), (0, 0), (self.pad, self.pad)))
        s0, s1, s2 = xp.strides
        win = as_strided(xp, (batch, self.c_in, l_out, self.kernel),
                         (s0, s1, s2 * self.stride, s2))
        cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(
            batch * l_out, self.c_in * self.kernel)
        y = cols @ self.w.reshape(self.c_out, -1).T + self.b
        y = y.reshape(batch, l_out, self.c_out).transpose(0, 2, 1)
        if self.relu:
            mask = y > 0
            y = np.where(mask, y, y.dtype.type(0))
        else:
            mask = None
        if keep_cache:
            self._cache = (cols, mask, length)
        return y

    def backward(self, dy: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        cols, mask, length = self._cache
        self._cache = None
        if mask is not None:
            dy = dy * mask
        batch, _, l_out = dy.shape
        dy2 = np.ascontiguousarray(dy.transpose(0, 2, 1)).reshape(batch * l_out, self.c_out)
        dw = (dy2.T @ cols).reshape(self.w.shape)
        db = dy2.sum(axis=0)
        dcols = (dy2 @ self.w.reshape(self.c_out, -1)).reshape(
            batch, l_out, self.c_in, self.kernel).transpose(0, 2, 1, 3)
        dxp = np.zeros((batch, self.c_in, length + 2 * self.pad), dtype=dy.dtype)
        base = np.arange(l_out) * self.stride
        for t in range(self.kernel):
            dxp[:, :, base + t] += dcols[:, :, :, t]
        dx = dxp[:, :, self.pad:self.pad + length]
        return dx, dw, db


class Upsample2:
    """Nearest-neighbor x2 along the length axis."""

    def forward(self, x: np.ndarray, keep_cache: bool) -> np.ndarray:
        return np.repeat(x, 2, axis=2)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy[:, :, 0::2] + dy[:, :, 1::2]


class CaeModel:
    """Encoder/decoder pair whose weights act as the protocol's secret key."""

    def __init__(self, window_len: int, channels: Sequence[int] = (16, 32, 64),
                 kernel: int = 9, latent_channels: int = 2, seed: int = 0,
                 dtype=np.float32):
        if window_len % 8 != 0 or window_len < 16:
            raise ValueError("window_len must be a multiple of 8 and >= 16")
        if len(channels) != 3:
            raise ValueError("exactly three encoder channel widths expected")
        if kernel % 2 != 1:
            raise ValueError("kernel must be odd (same-padding)")
        self.window_len = int(window_len)
        self.channels = tuple(int(c) for c in channels)
        self.kernel = int(kernel)
        self.latent_channels = int(latent_channels)
        self.seed = int(seed)
        self.dtype = np.dtype(dtype).type
        self.latent_len = self.latent_channels * (window_len // 8)
        if self.latent_len >= 2 * window_len:
            raise ValueError("latent must be smaller than the input (undercomplete)")

        rng = np.random.default_rng(seed)
        c1, c2, c3 = self.channels
        lc = self.latent_channels
        k = self.kernel
        self.encoder = [
            Conv1d(2, c1, k, 2, True, rng, dtype),
            Conv1d(c1, c2, k, 2, True, rng, dtype),
            Conv1d(c2, c3, k, 2, True, rng, dtype),
            Conv1d(c3, lc, 1, 1, False, rng, dtype),
        ]
        self.decoder = [
            Conv1d(lc, c3, 1, 1, True, rng, dtype),
            Upsample2(),
            Conv1d(c3, c2, k, 1, True, rng, dtype),
            Upsample2(),
            Conv1d(c2, c1, k, 1, True, rng, dtype),
            Upsample2(),
            Conv1d(c1, 2, k, 1, False, rng, dtype),
        ]

    # -- structure ---------------------------------------------------------

    def conv_layers(self) -> List[Conv1d]:
        return [l for l in self.encoder + self.decoder if isinstance(l, Conv1d)]

    def architecture(self) -> dict:
        return {
            "window_len": self.window_len,
            "channels": list(self.channels),
            "kernel": self.kernel,
            "latent_channels": self.latent_channels,
        }

    def copy(self) -> "CaeModel":
        dup = CaeModel(self.window_len, self.channels, self.kernel,
                       self.latent_channels, self.seed, self.dtype)
        for dst, src in zip(dup.conv_layers(), self.conv_layers()):
            dst.w = src.w.copy()
            dst.b = src.b.copy()
        return dup

    def as_dtype(self, dtype) -> "CaeModel":
        if np.dtype(dtype).type is self.dtype:
            return self
        dup = CaeModel(self.window_len, self.channels, self.kernel,
                       self.latent_channels, self.seed, dtype)
        for dst, src in zip(dup.conv_layers(), self.conv_layers()):
            dst.w = src.w.astype(dtype)
            dst.b = src.b.astype(dtype)
        return dup

    def fingerprint(self) -> bytes:
        h = hashlib.sha256(json.dumps(self.architecture(), sort_keys=True).encode())
        for layer in self.conv_layers():
            h.update(layer.w.astype("<f4").tobytes())
            h.update(layer.b.astype("<f4").tobytes())
        return h.digest()[:16]

    # -- forward / backward -------------------------------------------------

    def _check_input(self, x: np.ndarray) -> None:
        if x.shape[-2:] != (2, self.window_len):
            raise ValueError(f"expected trailing shape (2, {self.window_len}), got {x.shape}")

    def forward_batch(self, x: np.ndarray, keep_cache: bool = False
                      ) -> Tuple[np.ndarray, np.ndarray]:
        self._check_input(x)
        h = np.ascontiguousarray(x, dtype=self.dtype)
        for layer in self.encoder:
            h = layer.forward(h, keep_cache)
        latent = h
        for layer in self.decoder:
            h = layer.forward(h, keep_cache)
        return h, latent.reshape(latent.shape[0], -1)

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Reconstruction and flattened latent code for a single 2xW window."""
        if x.ndim != 2:
            raise ValueError("forward takes a single (2, W) window")
        recon, latent = self.forward_batch(x[None])
        return recon[0], latent[0]

    def decode_batch(self, latent: np.ndarray) -> np.ndarray:
        """Map flattened latent codes back to reconstructions."""
        h = np.ascontiguousarray(latent, dtype=self.dtype).reshape(
            latent.shape[0], self.latent_channels, self.window_len // 8)
        for layer in self.decoder:
            h = layer.forward(h, keep_cache=False)
        return h

    def backward(self, x: np.ndarray) -> Tuple[float, List[Tuple[np.ndarray, np.ndarray]]]:
        """Loss and its gradient w.r.t. every conv weight and bias.

        The loss is the mean squared error over all elements of the batch,
        matching reconstruction_error. Gradient accumulation order is fixed,
        so results are reproducible.
        """
        single = x.ndim == 2
        xb = np.ascontiguousarray(x[None] if single else x, dtype=self.dtype)
        recon, _ = self.forward_batch(xb, keep_cache=True)
        diff = recon - xb
        loss = float(np.mean(diff.astype(np.float64) ** 2))
        grad = (2.0 / diff.size) * diff.astype(self.dtype)

        grads_rev = []
        d = grad
        for layer in reversed(self.decoder):
            if isinstance(layer, Conv1d):
                d, dw, db = layer.backward(d)
                grads_rev.append((dw, db))
            else:
                d = layer.backward(d)
        for layer in reversed(self.encoder):
            d, dw, db = layer.backward(d)
            grads_rev.append((dw, db))
        return loss, grads_rev[::-1]


def reconstruction_error(x: np.ndarray, recon: np.ndarray) -> float:
    """Mean over all elements of squared differences."""
    if x.shape != recon.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {recon.shape}")
    d = np.asarray(x, dtype=np.float64) - np.asarray(recon, dtype=np.float64)
    return float(np.mean(d * d))


def window_errors(model: CaeModel, windows: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Per-window reconstruction MSE (normalized input), in window order."""
    out = np.empty(windows.shape[0], dtype=model.dtype)
    for start in range(0, windows.shape[0], batch_size):
        chunk = normalize_windows(windows[start:start + batch_size].astype(model.dtype))
        recon, _ = model.forward_batch(chunk)
        d = recon - chunk
        out[start:start + chunk.shape[0]] = np.mean(d * d, axis=(1, 2))
    return out


def normalize_windows(x: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance per channel of each window (receiver-side too)."""
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    std = np.sqrt(np.mean(centered * centered, axis=-1, keepdims=True) + x.dtype.type(_NORM_EPS))
    return centered / std


# -- training ----------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"  # or "sgd"
    seed: int = 0
    early_stop_patience: int = 5
    max_train_windows: Optional[int] = None
    max_val_windows: Optional[int] = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        # 0.0 is allowed as the degenerate no-op step
        if not (0.0 <= self.learning_rate < 1.0):
            raise ValueError("learning_rate must be in [0, 1)")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainReport:
    train_losses: List[float] = field(default_factory=list)
    val_losses: List[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


class _Adam:
    def __init__(self, shapes, dtype, lr):
        self.lr = lr
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.t = 0
        self.m = [np.zeros(s, dtype) for s in shapes]
        self.v = [np.zeros(s, dtype) for s in shapes]

    def step(self, params, grads):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            p -= (self.lr * (self.m[i] / b1c) / (np.sqrt(self.v[i] / b2c) + self.eps)).astype(p.dtype)


class _Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= (self.lr * g).astype(p.dtype)


def _flat_params(model: CaeModel):
    out = []
    for layer in model.conv_layers():
        out.append(layer.w)
        out.append(layer.b)
    return out


def _mean_loss(model: CaeModel, windows: np.ndarray, batch_size: int) -> float:
    total, count = 0.0, 0
    for start in range(0, windows.shape[0], batch_size):
        chunk = windows[start:start + batch_size]
        recon, _ = model.forward_batch(chunk)
        d = (recon - chunk).astype(np.float64)
        total += float(np.sum(d * d))
        count += d.size
    return total / count


def train(model: CaeModel, data, cfg: TrainConfig) -> TrainReport:
    """Minimize reconstruction MSE on normalized training windows.

    Accepts a signals.Dataset or any object with .train.x / .validation.x.
    Keeps the best-validation weights, so the final model is never worse on
    validation than the untrained one. Raises TrainingDivergedError when the
    loss stops being finite.
    """
    train_x = np.asarray(data.train.x, dtype=model.dtype)
    val_x = np.asarray(data.validation.x, dtype=model.dtype) if len(data.validation.x) else train_x
    if train_x.shape[0] == 0:
        raise ValueError("training set is empty")

    rng = np.random.default_rng(cfg.seed)
    if cfg.max_train_windows is not None and train_x.shape[0] > cfg.max_train_windows:
        train_x = train_x[rng.choice(train_x.shape[0], cfg.max_train_windows, replace=False)]
    if cfg.max_val_windows is not None and val_x.shape[0] > cfg.max_val_windows:
        val_x = val_x[rng.choice(val_x.shape[0], cfg.max_val_windows, replace=False)]

    train_x = normalize_windows(train_x)
    val_x = normalize_windows(val_x)

    params = _flat_params(model)
    if cfg.optimizer == "adam":
        opt = _Adam([p.shape for p in params], model.dtype, cfg.learning_rate)
    else:
        opt = _Sgd(cfg.learning_rate)

    report = TrainReport()
    best_val = _mean_loss(model, val_x, cfg.batch_size)
    best_weights = [p.copy() for p in params]
    report.best_epoch = 0
    since_best = 0

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(train_x.shape[0])
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, order.size, cfg.batch_size):
            batch = train_x[order[start:start + cfg.batch_size]]
            loss, grads = model.backward(batch)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch)
            flat_grads = [g for pair in grads for g in pair]
            opt.step(params, flat_grads)
            for p in params:
                p[...] = _snap_f32(p, model.dtype)
            epoch_loss += loss
            n_batches += 1

        val_loss = _mean_loss(model, val_x, cfg.batch_size)
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(epoch)
        report.train_losses.append(epoch_loss / n_batches)
        report.val_losses.append(val_loss)

        if val_loss < best_val:
            best_val = val_loss
            best_weights = [p.copy() for p in params]
            report.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                report.stopped_early = True
                break

    for p, w in zip(params, best_weights):
        p[...] = w
    return report


# -- weight file (the key) ----------------------------------------------------

def save_weights(model: CaeModel, path) -> None:
    """Write the versioned binary key file (checksummed, little-endian f32)."""
    arch = json.dumps(model.architecture(), sort_keys=True).encode()
    blob = bytearray()
    blob += _WEIGHT_MAGIC
    blob += struct.pack("<H", _WEIGHT_VERSION)
    blob += struct.pack("<I", len(arch))
    blob += arch
    for layer in model.conv_layers():
        blob += layer.w.astype("<f4").tobytes()
        blob += layer.b.astype("<f4").tobytes()
    blob += hashlib.sha256(bytes(blob)).digest()[:8]
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_weights(path, expect_window_len: Optional[int] = None, dtype=np.float32) -> CaeModel:
    """Read a key file back into a model.

    Raises CorruptKeyError for truncation, bad magic, or checksum failure;
    IncompatibleKeyError for a valid file whose architecture does not match
    what the caller expects (or that this build cannot instantiate).
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 + 2 + 4 + 8 or blob[:4] != _WEIGHT_MAGIC:
        raise CorruptKeyError(f"{path}: not a key file")
    payload, checksum = blob[:-8], blob[-8:]
    if hashlib.sha256(payload).digest()[:8] != checksum:
        raise CorruptKeyError(f"{path}: checksum mismatch")
    version = struct.unpack_from("<H", blob, 4)[0]
    if version != _WEIGHT_VERSION:
        raise IncompatibleKeyError(f"{path}: unsupported key version {version}")
    arch_len = struct.unpack_from("<I", blob, 6)[0]
    arch_end = 10 + arch_len
    try:
        arch = json.loads(blob[10:arch_end].decode())
        model = CaeModel(window_len=arch["window_len"], channels=arch["channels"],
                         kernel=arch["kernel"], latent_channels=arch["latent_channels"],
                         dtype=dtype)
    except (ValueError, KeyError, TypeError) as exc:
        raise IncompatibleKeyError(f"{path}: unusable architecture descriptor: {exc}") from exc
    if expect_window_len is not None and model.window_len != expect_window_len:
        raise IncompatibleKeyError(
            f"{path}: key is for window_len {model.window_len}, expected {expect_window_len}")

    offset = arch_end
    for layer in model.conv_layers():
        for name, shape in (("w", layer.w.shape), ("b", layer.b.shape)):
            nbytes = int(np.prod(shape)) * 4
            if offset + nbytes > len(payload):
                raise CorruptKeyError(f"{path}: truncated weight data")
            arr = np.frombuffer(payload, dtype="<f4", count=int(np.prod(shape)),
                                offset=offset).reshape(shape).astype(dtype)
            setattr(layer, name, arr)
            offset += nbytes
    if offset != len(payload):
        raise CorruptKeyError(f"{path}: trailing bytes after weight data")
    return model
