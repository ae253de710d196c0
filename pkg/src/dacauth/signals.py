"""Simulated RF devices: shared baseband, per-device impairments, channel effects.

Every device in a fleet transmits the same half-sine-shaped offset-quadrature
baseband. What makes a device unique is a small draw of transmitter
impairments (IQ imbalance, DC offset, CFO, phase noise, PA nonlinearity);
the channel then adds fading and calibrated noise on top. All randomness is
seeded, so any trace or dataset is a pure function of its arguments.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InsufficientSamplesError

SAMPLES_PER_SYMBOL = 8
MIN_BASEBAND_SAMPLES = 64
# 2.4 GHz carrier over a 4 MS/s capture: converts ppm of carrier offset
# into cycles of baseband rotation per sample.
CARRIER_TO_SAMPLE_RATIO = 600.0
_DIFFUSE_SINUSOIDS = 16


def derive_seed(master: int, *tags) -> int:
    """Stable 63-bit sub-seed from a master seed and a tag path."""
    text = str(int(master)) + "/" + "/".join(str(t) for t in tags)
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def unit_normalize(samples: np.ndarray) -> np.ndarray:
    """Scale a complex vector to unit mean power."""
    power = float(np.mean(np.abs(samples) ** 2))
    if power <= 0.0:
        raise ValueError("cannot normalize an all-zero signal")
    return samples / np.sqrt(power)


@dataclass(frozen=True)
class DeviceProfile:
    """Transmitter impairment draw; the physical identity of one device."""

    device_id: int
    iq_gain_imbalance: float = 1.0
    iq_phase_skew: float = 0.0
    dc_offset_i: float = 0.0
    dc_offset_q: float = 0.0
    cfo_ppm: float = 0.0
    phase_noise_std: float = 0.0
    pa_coeff_3rd: float = 0.0

    def __post_init__(self):
        if not (0.5 < self.iq_gain_imbalance < 2.0):
            raise ValueError(f"gain imbalance {self.iq_gain_imbalance} out of (0.5, 2.0)")
        if abs(self.iq_phase_skew) >= 0.2:
            raise ValueError("phase skew must satisfy |skew| < 0.2 rad")
        if abs(self.dc_offset_i) >= 0.1 or abs(self.dc_offset_q) >= 0.1:
            raise ValueError("DC offsets must satisfy |offset| < 0.1")
        if abs(self.cfo_ppm) >= 100.0:
            raise ValueError("CFO must satisfy |cfo_ppm| < 100")
        if self.phase_noise_std < 0.0:
            raise ValueError("phase noise std must be >= 0")
        if abs(self.pa_coeff_3rd) >= 0.3:
            raise ValueError("PA coefficient must satisfy |c3| < 0.3")


@dataclass(frozen=True)
class ChannelConfig:
    """Environment between transmitter and capture point."""

    snr_db: float = np.inf
    rician_k_db: Optional[float] = None  # None disables fading
    doppler_norm: float = 0.0

    def __post_init__(self):
        if not (self.snr_db >= -20.0):
            raise ValueError("snr_db must be >= -20 dB (or +inf)")
        if not (0.0 <= self.doppler_norm <= 0.01):
            raise ValueError("doppler_norm must be in [0, 0.01]")


@dataclass(frozen=True)
class IqTrace:
    """A finite complex baseband capture plus its provenance."""

    samples: np.ndarray
    payload_id: int
    device_id: Optional[int] = None
    snr_db: float = np.inf

    def __post_init__(self):
        if self.samples.size < 1:
            raise ValueError("trace must contain at least one sample")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("trace samples must be finite")

    @property
    def sample_count(self) -> int:
        return int(self.samples.size)


def generate_baseband(payload_id: int, n_samples: int) -> IqTrace:
    """Deterministic unit-power baseband for one payload.

    Half-sine pulse shaping with the quadrature stream offset by half a
    symbol gives a constant-envelope MSK-like waveform; the bit sequence is
    drawn from a generator seeded by payload_id alone.
    """
    if n_samples < MIN_BASEBAND_SAMPLES:
        raise ValueError(f"n_samples must be >= {MIN_BASEBAND_SAMPLES}, got {n_samples}")
    sps = SAMPLES_PER_SYMBOL
    half = sps // 2
    n_sym = n_samples // sps + 2
    rng = np.random.default_rng(int(payload_id))
    bits_i = rng.integers(0, 2, size=n_sym) * 2.0 - 1.0
    bits_q = rng.integers(0, 2, size=n_sym) * 2.0 - 1.0

    n = np.arange(n_samples)
    phase = (n % sps) / sps
    i_part = bits_i[n // sps] * np.sin(np.pi * phase)
    nq = n + half  # shift so the quadrature stream needs no negative indices
    phase_q = (nq % sps) / sps
    q_part = bits_q[nq // sps] * np.sin(np.pi * phase_q)

    samples = unit_normalize(i_part + 1j * q_part)
    return IqTrace(samples=samples, payload_id=int(payload_id))


def sample_device_profile(seed: int, spread: float, device_id: Optional[int] = None) -> DeviceProfile:
    """Draw one device's impairments; widths scale linearly with spread."""
    if not (0.0 < spread <= 1.0):
        raise ValueError(f"spread must be in (0, 1], got {spread}")
    rng = np.random.default_rng(int(seed))
    u = rng.uniform(-1.0, 1.0, size=6)
    v = rng.uniform(0.0, 1.0)
    return DeviceProfile(
        device_id=int(seed if device_id is None else device_id),
        iq_gain_imbalance=1.0 + 0.35 * spread * u[0],
        iq_phase_skew=0.15 * spread * u[1],
        dc_offset_i=0.06 * spread * u[2],
        dc_offset_q=0.06 * spread * u[3],
        cfo_ppm=80.0 * spread * u[4],
        phase_noise_std=0.004 * spread * v,
        pa_coeff_3rd=0.2 * spread * u[5],
    )


def apply_device(trace: IqTrace, profile: DeviceProfile, normalize: bool = True) -> IqTrace:
    """Pass a trace through one device's transmitter chain.

    Stage order: DC offset, IQ gain/phase imbalance, third-order PA
    nonlinearity, CFO rotation, cumulative phase-noise walk. The phase-noise
    generator is seeded from (device_id, payload_id), so the whole chain is
    deterministic. An all-nominal profile is the identity transform.
    """
    x = trace.samples.astype(np.complex128)

    x = x + (profile.dc_offset_i + 1j * profile.dc_offset_q)

    g = profile.iq_gain_imbalance * np.exp(1j * profile.iq_phase_skew)
    alpha = (1.0 + g) / 2.0
    beta = (1.0 - g) / 2.0
    x = alpha * x + beta * np.conj(x)

    x = x + profile.pa_coeff_3rd * x * np.abs(x) ** 2

    n = np.arange(x.size)
    f_norm = profile.cfo_ppm * 1e-6 * CARRIER_TO_SAMPLE_RATIO
    if f_norm != 0.0:
        x = x * np.exp(2j * np.pi * f_norm * n)

    if profile.phase_noise_std > 0.0:
        rng = np.random.default_rng(derive_seed(profile.device_id, "pn", trace.payload_id))
        walk = np.cumsum(rng.standard_normal(x.size)) * profile.phase_noise_std
        x = x * np.exp(1j * walk)

    if normalize:
        x = unit_normalize(x)
    return IqTrace(samples=x, payload_id=trace.payload_id,
                   device_id=profile.device_id, snr_db=trace.snr_db)


def _diffuse_fading(n_samples: int, doppler_norm: float, rng: np.random.Generator) -> np.ndarray:
    """Unit-power sum-of-sinusoids scatter component (static when doppler is 0)."""
    m = _DIFFUSE_SINUSOIDS
    aoa = rng.uniform(-np.pi, np.pi, size=m)
    phases = rng.uniform(-np.pi, np.pi, size=m)
    n = np.arange(n_samples)[:, None]
    arg = 2.0 * np.pi * doppler_norm * np.cos(aoa)[None, :] * n + phases[None, :]
    return np.exp(1j * arg).sum(axis=1) / np.sqrt(m)


def apply_channel(trace: IqTrace, ch: ChannelConfig, seed: int) -> IqTrace:
    """Apply optional Rician fading, then AWGN calibrated to the exact SNR.

    Noise is scaled against the measured (post-fading) signal power and the
    measured power of the noise draw itself, so the empirical SNR of the
    output equals ch.snr_db up to float rounding. No renormalization: the
    output is signal plus noise as a receiver would capture it.
    """
    x = trace.samples.astype(np.complex128)
    rng = np.random.default_rng(int(seed))

    if ch.rician_k_db is not None:
        k_lin = 10.0 ** (ch.rician_k_db / 10.0)
        theta = rng.uniform(-np.pi, np.pi)
        f_los = ch.doppler_norm * np.cos(rng.uniform(-np.pi, np.pi))
        n = np.arange(x.size)
        los = np.exp(1j * (2.0 * np.pi * f_los * n + theta))
        diffuse = _diffuse_fading(x.size, ch.doppler_norm, rng)
        h = np.sqrt(k_lin / (k_lin + 1.0)) * los + np.sqrt(1.0 / (k_lin + 1.0)) * diffuse
        x = x * h

    if np.isfinite(ch.snr_db):
        p_sig = float(np.mean(np.abs(x) ** 2))
        target = p_sig / 10.0 ** (ch.snr_db / 10.0)
        raw = rng.standard_normal(x.size) + 1j * rng.standard_normal(x.size)
        raw *= np.sqrt(target / np.mean(np.abs(raw) ** 2))
        x = x + raw

    return IqTrace(samples=x, payload_id=trace.payload_id,
                   device_id=trace.device_id, snr_db=float(ch.snr_db))


def trace_to_windows(samples: np.ndarray, window_len: int, dtype=np.float32) -> np.ndarray:
    """Cut a complex vector into non-overlapping (2, W) I/Q window matrices."""
    k = samples.size // window_len
    if k < 1:
        raise InsufficientSamplesError(window_len, samples.size)
    trimmed = samples[: k * window_len].reshape(k, window_len)
    out = np.empty((k, 2, window_len), dtype=dtype)
    out[:, 0, :] = trimmed.real
    out[:, 1, :] = trimmed.imag
    return out


@dataclass
class WindowSet:
    """Windows plus per-window labels, kept as parallel arrays."""

    x: np.ndarray  # (N, 2, W) float32
    device_id: np.ndarray  # (N,) int32
    snr_db: np.ndarray  # (N,) float64
    frame: np.ndarray  # (N,) int32
    pos: np.ndarray  # (N,) int16, window index within its frame

    def __len__(self) -> int:
        return int(self.x.shape[0])

    def subset(self, mask: np.ndarray) -> "WindowSet":
        return WindowSet(self.x[mask], self.device_id[mask], self.snr_db[mask],
                         self.frame[mask], self.pos[mask])

    @classmethod
    def concat(cls, parts: Sequence["WindowSet"]) -> "WindowSet":
        if not parts:
            raise ValueError("cannot concatenate zero window sets")
        return cls(*(np.concatenate([getattr(p, f) for p in parts])
                     for f in ("x", "device_id", "snr_db", "frame", "pos")))

    @classmethod
    def empty(cls, window_len: int) -> "WindowSet":
        return cls(np.empty((0, 2, window_len), np.float32), np.empty(0, np.int32),
                   np.empty(0, np.float64), np.empty(0, np.int32), np.empty(0, np.int16))


@dataclass
class Dataset:
    """Train/validation/test windows with the intruder confined to test."""

    train: WindowSet
    validation: WindowSet
    test: WindowSet
    window_len: int
    n_devices: int
    intruder_id: int
    snr_list: tuple = field(default_factory=tuple)
    payload_id: int = 0


def build_dataset(
    n_devices: int,
    intruder_id: int,
    snr_list: Sequence[float],
    frames_per_cell: int,
    window_len: int,
    seed: int,
    *,
    spread: float = 0.3,
    windows_per_frame: int = 8,
    payload_id: int = 0,
    vary_payload: bool = False,
    rician_k_db: Optional[float] = None,
    doppler_norm: float = 0.0,
) -> Dataset:
    """Simulate a fleet and split its windows 90/5/5, intruder in test only.

    Every frame of every device carries the same payload (the worst case for
    authentication) unless vary_payload is set. Each frame is an independent
    transmission: the device chain restarts per frame, the channel draw is
    fresh per frame, and per-cell seeds derive from the master seed so cells
    can be generated in any order with identical results.
    """
    if n_devices < 2:
        raise ValueError("need at least 2 devices")
    if not (0 <= intruder_id < n_devices):
        raise ValueError(f"intruder_id {intruder_id} out of range for {n_devices} devices")
    if len(snr_list) == 0:
        raise ValueError("snr_list must not be empty")
    if window_len < MIN_BASEBAND_SAMPLES:
        raise ValueError(f"window_len must be >= {MIN_BASEBAND_SAMPLES}")
    if frames_per_cell < 1 or windows_per_frame < 1:
        raise ValueError("frames_per_cell and windows_per_frame must be >= 1")

    frame_len = window_len * windows_per_frame
    train_parts, val_parts, test_parts = [], [], []

    for d in range(n_devices):
        profile = sample_device_profile(derive_seed(seed, "profile", d), spread, device_id=d)
        if not vary_payload:
            clean = apply_device(generate_baseband(payload_id, frame_len), profile)
        for si, snr in enumerate(snr_list):
            ch = ChannelConfig(snr_db=float(snr), rician_k_db=rician_k_db,
                               doppler_norm=doppler_norm)
            cell_x = np.empty((frames_per_cell * windows_per_frame, 2, window_len), np.float32)
            for f in range(frames_per_cell):
                if vary_payload:
                    clean = apply_device(
                        generate_baseband(payload_id + f, frame_len), profile)
                noisy = apply_channel(clean, ch, derive_seed(seed, "ch", d, si, f))
                cell_x[f * windows_per_frame:(f + 1) * windows_per_frame] = \
                    trace_to_windows(noisy.samples, window_len)

            n_cell = cell_x.shape[0]
            frames = np.repeat(np.arange(frames_per_cell, dtype=np.int32), windows_per_frame)
            positions = np.tile(np.arange(windows_per_frame, dtype=np.int16), frames_per_cell)
            cell = WindowSet(
                x=cell_x,
                device_id=np.full(n_cell, d, np.int32),
                snr_db=np.full(n_cell, float(snr), np.float64),
                frame=frames,
                pos=positions,
            )
            if d == intruder_id:
                test_parts.append(cell)
                continue
            perm = np.random.default_rng(derive_seed(seed, "split", d, si)).permutation(n_cell)
            n_train = round(0.90 * n_cell)
            n_val = round(0.05 * n_cell)
            train_parts.append(cell.subset(perm[:n_train]))
            val_parts.append(cell.subset(perm[n_train:n_train + n_val]))
            test_parts.append(cell.subset(perm[n_train + n_val:]))

    return Dataset(
        train=WindowSet.concat(train_parts),
        validation=WindowSet.concat(val_parts),
        test=WindowSet.concat(test_parts),
        window_len=window_len,
        n_devices=n_devices,
        intruder_id=intruder_id,
        snr_list=tuple(float(s) for s in snr_list),
        payload_id=payload_id,
    )


# ---------------------------------------------------------------------------
# Trace files: interleaved float32 I/Q plus a JSON sidecar, and a manifest
# listing every file with its split assignment.

def save_trace(path, samples: np.ndarray, meta: dict) -> None:
    path = Path(path)
    interleaved = np.empty(samples.size * 2, np.float32)
    interleaved[0::2] = samples.real
    interleaved[1::2] = samples.imag
    interleaved.astype("<f4").tofile(path)
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2))


def load_trace(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % 2 != 0:
        raise ValueError(f"{path}: odd float count, not interleaved I/Q")
    samples = raw[0::2].astype(np.float64) + 1j * raw[1::2].astype(np.float64)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    return samples, meta


def write_manifest(path, entries: list[dict]) -> None:
    Path(path).write_text(json.dumps({"traces": entries}, indent=2))


def read_manifest(path) -> list[dict]:
    return json.loads(Path(path).read_text())["traces"]
