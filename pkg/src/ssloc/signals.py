"""Two-channel microphone synthesis: source signals, convolution, shaped noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .room import ImpulseResponse


@dataclass(frozen=True)
class SourceSignal:
    """Clean source excitation."""

    samples: np.ndarray
    sample_rate: float
    kind: str = "white-noise"

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("source signal must be a non-empty 1-D array")
        if not np.all(np.isfinite(samples)):
            raise ValueError("source signal contains non-finite samples")
        if not np.any(samples != 0.0):
            raise ValueError("source signal has zero energy")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def scaled(self, factor: float) -> "SourceSignal":
        return SourceSignal(self.samples * factor, self.sample_rate, self.kind)


@dataclass(frozen=True)
class MicrophonePair:
    """Time-aligned signals at the two microphones."""

    x: np.ndarray
    y: np.ndarray
    sample_rate: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.shape != y.shape or x.ndim != 1:
            raise ValueError("microphone channels must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("microphone signals contain non-finite samples")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)


def make_white_source(duration_s: float, sample_rate: float, seed: int) -> SourceSignal:
    """Unit-variance white Gaussian source, deterministic per seed."""
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    n = int(round(duration_s * sample_rate))
    rng = np.random.default_rng(seed)
    return SourceSignal(rng.standard_normal(n), sample_rate, kind="white-noise")


def load_audio_source(path) -> SourceSignal:
    """Single-channel WAV loaded and normalized to unit RMS."""
    from scipy.io import wavfile

    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"{path}: expected a single-channel file, got {data.ndim} channels")
    samples = np.asarray(data, dtype=float)
    if np.issubdtype(data.dtype, np.integer):
        samples = samples / float(np.iinfo(data.dtype).max)
    rms = np.sqrt(np.mean(samples**2))
    if rms == 0.0:
        raise ValueError(f"{path}: signal has zero energy")
    return SourceSignal(samples / rms, float(rate), kind="external-audio")


def _convolve_channel(source: np.ndarray, ir: ImpulseResponse) -> np.ndarray:
    # Linear convolution trimmed to the source length. Short responses go
    # through direct convolution (exact for trivial channels); long room
    # responses through the frequency domain.
    if ir.taps.size <= 256:
        return np.convolve(source, ir.taps)[: source.size]
    return fftconvolve(source, ir.taps)[: source.size]


def synthesize_pair(
    source: SourceSignal,
    a1: ImpulseResponse,
    a2: ImpulseResponse,
    snr_db: float,
    noise_seed: int,
) -> MicrophonePair:
    """Convolve the source with both channel responses and add calibrated noise.

    The two noise sequences are independent white Gaussian draws from
    ``noise_seed``, each rescaled so that the per-channel ratio of convolved
    signal power to noise power equals ``snr_db`` exactly. ``snr_db=inf``
    disables the noise.
    """
    if not (source.sample_rate == a1.sample_rate == a2.sample_rate):
        raise ValueError("sample-rate mismatch between source and impulse responses")
    if np.isnan(snr_db):
        raise ValueError("snr_db must be a number or +inf")

    clean1 = _convolve_channel(source.samples, a1)
    clean2 = _convolve_channel(source.samples, a2)
    if np.isinf(snr_db):
        return MicrophonePair(clean1, clean2, source.sample_rate)

    rng = np.random.default_rng(noise_seed)
    u1 = rng.standard_normal(clean1.size)
    u2 = rng.standard_normal(clean2.size)
    snr_lin = 10.0 ** (snr_db / 10.0)
    for clean, noise in ((clean1, u1), (clean2, u2)):
        signal_power = np.mean(clean**2)
        if signal_power == 0.0:
            raise ValueError("convolved signal has zero energy")
        noise *= np.sqrt(signal_power / (snr_lin * np.mean(noise**2)))
    return MicrophonePair(clean1 + u1, clean2 + u2, source.sample_rate)


def write_pair_wav(pair: MicrophonePair, path) -> None:
    """Two-channel 32-bit float WAV export."""
    from scipy.io import wavfile

    stacked = np.stack([pair.x, pair.y], axis=1).astype(np.float32)
    wavfile.write(path, int(round(pair.sample_rate)), stacked)


def read_pair_wav(path) -> MicrophonePair:
    from scipy.io import wavfile

    rate, data = wavfile.read(path)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError(f"{path}: expected a two-channel file")
    data = np.asarray(data, dtype=float)
    return MicrophonePair(data[:, 0], data[:, 1], float(rate))
