"""Relative-transfer-function features from microphone pairs.

The feature vector is the band-limited ratio of the Welch cross-spectrum
between the two microphones to the auto-spectrum of the reference channel.
High frequencies are discarded via an explicit bin selection. A small
self-describing archive format persists feature datasets for the harness.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import csd


class BandMismatchError(ValueError):
    """Two feature vectors live on different frequency-bin selections."""


class DegenerateBinError(ValueError):
    """The reference auto-spectrum vanishes inside the selected band."""

    def __init__(self, bins):
        self.bins = list(bins)
        super().__init__(f"auto-spectrum below floor in band bins {self.bins}")


@dataclass(frozen=True)
class SpectralEstimate:
    """Welch auto- or cross-spectrum over the full transform grid."""

    values: np.ndarray
    kind: str  # "auto" | "cross"
    window_length: int
    overlap_fraction: float
    num_segments: int
    sample_rate: float

    def __post_init__(self):
        values = np.asarray(self.values)
        if self.kind == "auto":
            values = values.real.astype(float)
            if np.any(values < 0):
                raise ValueError("auto-spectrum must be non-negative")
        elif self.kind == "cross":
            values = values.astype(complex)
        else:
            raise ValueError(f"unknown spectrum kind {self.kind!r}")
        if self.num_segments < 1:
            raise ValueError("need at least one averaged segment")
        object.__setattr__(self, "values", values)

    @property
    def transform_size(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class RtfVector:
    """Band-limited complex RTF estimate, the point on the acoustic manifold."""

    values: np.ndarray
    band: np.ndarray
    transform_size: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        band = np.asarray(self.band, dtype=np.int64)
        if values.shape != band.shape or values.ndim != 1:
            raise ValueError("values and band must be 1-D arrays of equal length")
        if not np.all(np.isfinite(values.real)) or not np.all(np.isfinite(values.imag)):
            raise ValueError("RTF values must be finite")
        if np.any(np.diff(band) <= 0):
            raise ValueError("band indices must be strictly increasing")
        if band.size and (band[0] < 0 or band[-1] > self.transform_size // 2):
            raise ValueError("band indices must lie in [0, D/2]")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "band", band)

    def same_band(self, other: "RtfVector") -> bool:
        return self.transform_size == other.transform_size and np.array_equal(
            self.band, other.band
        )

    def as_real_vector(self) -> np.ndarray:
        """Interleaved re/im view; Euclidean norms match the complex values."""
        out = np.empty(2 * self.values.size)
        out[0::2] = self.values.real
        out[1::2] = self.values.imag
        return out


def _require_same_band(h1: RtfVector, h2: RtfVector) -> None:
    if not h1.same_band(h2):
        raise BandMismatchError("feature vectors use different frequency bands")


def rtf_distance(h1: RtfVector, h2: RtfVector) -> float:
    """Euclidean norm of the complex difference."""
    _require_same_band(h1, h2)
    return float(np.linalg.norm(h1.values - h2.values))


def welch_spectra(
    pair,
    window_s: float = 0.128,
    overlap: float = 0.75,
    transform_size: int = 2048,
    window: str = "hann",
) -> tuple[SpectralEstimate, SpectralEstimate]:
    """Segment-averaged auto-spectrum of x and cross-spectrum of (y vs x).

    Both estimates live on the full two-sided ``transform_size`` grid so the
    RTF ratio keeps its conjugate symmetry; band selection happens later.
    """
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must lie in [0, 1)")
    fs = pair.sample_rate
    nperseg = int(round(window_s * fs))
    if nperseg < 1 or nperseg > transform_size:
        raise ValueError("window length must fit the transform size")
    if pair.x.size < nperseg:
        raise ValueError(
            f"signal of {pair.x.size} samples is shorter than one {nperseg}-sample window"
        )
    noverlap = int(round(nperseg * overlap))
    hop = nperseg - noverlap
    num_segments = (pair.x.size - nperseg) // hop + 1
    common = dict(
        fs=fs,
        window=window,
        nperseg=nperseg,
        noverlap=noverlap,
        nfft=transform_size,
        detrend=False,
        return_onesided=False,
        scaling="density",
    )
    _, pxx = csd(pair.x, pair.x, **common)
    _, pyx = csd(pair.x, pair.y, **common)  # conj(X) * Y, the CPSD of y against x
    meta = dict(
        window_length=nperseg,
        overlap_fraction=overlap,
        num_segments=num_segments,
        sample_rate=fs,
    )
    return (
        SpectralEstimate(values=pxx, kind="auto", **meta),
        SpectralEstimate(values=pyx, kind="cross", **meta),
    )


def band_indices(
    transform_size: int,
    sample_rate: float,
    max_frequency_hz: float | None = 4000.0,
    exclude_dc: bool = True,
) -> np.ndarray:
    """Retained bins: DC optionally dropped, cut at the bin nearest the cap."""
    top = transform_size // 2
    if max_frequency_hz is not None:
        top = min(top, int(round(max_frequency_hz * transform_size / sample_rate)))
    start = 1 if exclude_dc else 0
    if top < start:
        raise ValueError("frequency cap leaves an empty band")
    return np.arange(start, top + 1, dtype=np.int64)


def full_grid_ratio(sxx: SpectralEstimate, syx: SpectralEstimate) -> np.ndarray:
    """Raw cross/auto ratio on the full transform grid (no band selection)."""
    if sxx.transform_size != syx.transform_size:
        raise ValueError("spectra live on different transform grids")
    with np.errstate(divide="ignore", invalid="ignore"):
        return syx.values / sxx.values


def estimate_rtf(
    sxx: SpectralEstimate,
    syx: SpectralEstimate,
    band: np.ndarray,
    floor_ratio: float = 1e-12,
) -> RtfVector:
    """Band-limited RTF estimate: element-wise cross/auto spectral ratio.

    Bins whose auto-spectrum falls below ``floor_ratio`` times the band mean
    are degenerate; the ratio there is numerically meaningless and the call
    fails listing the offending bins.
    """
    if sxx.kind != "auto" or syx.kind != "cross":
        raise ValueError("expected (auto, cross) spectral estimates")
    if sxx.transform_size != syx.transform_size:
        raise ValueError("spectra live on different transform grids")
    band = np.asarray(band, dtype=np.int64)
    denom = sxx.values[band]
    floor = floor_ratio * float(np.mean(denom)) if denom.size else 0.0
    bad = band[denom <= floor]
    if bad.size:
        raise DegenerateBinError(bad.tolist())
    return RtfVector(
        values=syx.values[band] / denom,
        band=band,
        transform_size=sxx.transform_size,
    )


def export_rtf_csv(vec: RtfVector, path) -> None:
    """One (bin, real, imag) row per retained frequency bin."""
    with open(path, "w") as fh:
        fh.write("bin,real,imag\n")
        for k, v in zip(vec.band, vec.values):
            fh.write(f"{k},{v.real!r},{v.imag!r}\n")


_ARCHIVE_VERSION = 1


@dataclass
class RtfDataset:
    """Feature archive: training samples (labelled prefix) plus a test set.

    ``train_azimuths`` stores the true angle for every training sample; only
    the first ``num_labelled`` entries are visible to the localizers, the
    rest exist for diagnostics. ``test_tdoa_gcc`` optionally carries the
    correlation-based TDOA estimates captured while the raw microphone
    signals were still in memory (the archive itself stores features only).
    """

    band: np.ndarray
    transform_size: int
    sample_rate: float
    train_values: np.ndarray
    train_azimuths: np.ndarray
    num_labelled: int
    test_values: np.ndarray
    test_azimuths: np.ndarray
    test_tdoa_gcc: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.band = np.asarray(self.band, dtype=np.int64)
        self.train_values = np.asarray(self.train_values, dtype=complex)
        self.train_azimuths = np.asarray(self.train_azimuths, dtype=float)
        self.test_values = np.asarray(self.test_values, dtype=complex)
        self.test_azimuths = np.asarray(self.test_azimuths, dtype=float)
        if self.train_values.shape[0] != self.train_azimuths.size:
            raise ValueError("training values and azimuths disagree in length")
        if self.test_values.shape[0] != self.test_azimuths.size:
            raise ValueError("test values and azimuths disagree in length")
        if not 1 <= self.num_labelled <= self.train_azimuths.size:
            raise ValueError("num_labelled must lie in [1, num_train]")

    @property
    def num_train(self) -> int:
        return self.train_values.shape[0]

    @property
    def num_test(self) -> int:
        return self.test_values.shape[0]

    @property
    def labelled_azimuths(self) -> np.ndarray:
        return self.train_azimuths[: self.num_labelled]

    def _vectors(self, values: np.ndarray) -> list[RtfVector]:
        return [
            RtfVector(values=row, band=self.band, transform_size=self.transform_size)
            for row in values
        ]

    def train_vectors(self) -> list[RtfVector]:
        return self._vectors(self.train_values)

    def test_vectors(self) -> list[RtfVector]:
        return self._vectors(self.test_values)

    def content_hash(self) -> str:
        """Stable digest of the archive payload (independent of file bytes)."""
        digest = hashlib.sha256()
        digest.update(f"ssloc-dataset-v{_ARCHIVE_VERSION}".encode())
        for arr in (
            self.band,
            self.train_values,
            self.train_azimuths,
            self.test_values,
            self.test_azimuths,
        ):
            digest.update(str(arr.dtype).encode())
            digest.update(str(arr.shape).encode())
            digest.update(np.ascontiguousarray(arr).tobytes())
        if self.test_tdoa_gcc is not None:
            digest.update(np.ascontiguousarray(self.test_tdoa_gcc).tobytes())
        digest.update(str(self.num_labelled).encode())
        digest.update(str(self.transform_size).encode())
        digest.update(repr(self.sample_rate).encode())
        digest.update(json.dumps(self.metadata, sort_keys=True, default=str).encode())
        return digest.hexdigest()

    def save(self, path) -> None:
        payload = dict(
            version=np.int64(_ARCHIVE_VERSION),
            band=self.band,
            transform_size=np.int64(self.transform_size),
            sample_rate=np.float64(self.sample_rate),
            train_values=self.train_values,
            train_azimuths=self.train_azimuths,
            num_labelled=np.int64(self.num_labelled),
            test_values=self.test_values,
            test_azimuths=self.test_azimuths,
            metadata=json.dumps(self.metadata, sort_keys=True, default=str),
        )
        if self.test_tdoa_gcc is not None:
            payload["test_tdoa_gcc"] = np.asarray(self.test_tdoa_gcc, dtype=float)
        np.savez(path, **payload)

    @classmethod
    def load(cls, path) -> "RtfDataset":
        with np.load(path, allow_pickle=False) as data:
            version = int(data["version"])
            if version != _ARCHIVE_VERSION:
                raise ValueError(f"unsupported dataset archive version {version}")
            return cls(
                band=data["band"],
                transform_size=int(data["transform_size"]),
                sample_rate=float(data["sample_rate"]),
                train_values=data["train_values"],
                train_azimuths=data["train_azimuths"],
                num_labelled=int(data["num_labelled"]),
                test_values=data["test_values"],
                test_azimuths=data["test_azimuths"],
                test_tdoa_gcc=data["test_tdoa_gcc"] if "test_tdoa_gcc" in data else None,
                metadata=json.loads(str(data["metadata"])),
            )
