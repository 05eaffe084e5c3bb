import numpy as np
import pytest

from ssloc.features import (
    BandMismatchError,
    DegenerateBinError,
    RtfDataset,
    RtfVector,
    band_indices,
    estimate_rtf,
    export_rtf_csv,
    full_grid_ratio,
    rtf_distance,
    welch_spectra,
)
from ssloc.room import (
    PointPosition,
    RoomSpec,
    azimuth_to_position,
    calibrated_reflections_for_t60,
    simulate_rir,
)
from ssloc.signals import MicrophonePair, make_white_source, synthesize_pair

from conftest import MIC1, MIC2, PAPER_DIMS

FS = 16000.0
D = 2048


def pair_from(x, y):
    return MicrophonePair(np.asarray(x, float), np.asarray(y, float), FS)


def test_welch_flatness_on_white_noise():
    src = make_white_source(40.0, FS, seed=11)
    sxx, _ = welch_spectra(pair_from(src.samples, src.samples), transform_size=D)
    assert sxx.num_segments >= 90
    level = sxx.values.mean()
    assert np.max(np.abs(sxx.values - level)) < 0.2 * level


def test_welch_sinusoid_concentration():
    k0 = 160
    n = int(8 * FS)
    t = np.arange(n)
    x = np.sin(2 * np.pi * k0 * t / D)
    sxx, _ = welch_spectra(pair_from(x, x), transform_size=D)
    half = sxx.values[: D // 2 + 1]
    assert int(np.argmax(half)) == k0


def test_welch_cross_equals_auto_for_identical_channels():
    src = make_white_source(1.0, FS, seed=3)
    sxx, syx = welch_spectra(pair_from(src.samples, src.samples), transform_size=D)
    np.testing.assert_array_equal(syx.values.real, sxx.values)
    np.testing.assert_allclose(syx.values.imag, 0.0, atol=1e-18)


def test_welch_rejects_short_signal():
    with pytest.raises(ValueError):
        welch_spectra(pair_from(np.ones(100), np.ones(100)), transform_size=D)


def test_pure_delay_linear_phase():
    n0 = 7
    rng = np.random.default_rng(5)
    period = rng.standard_normal(D)
    x = np.tile(period, 40)
    y = np.roll(x, n0)
    # Rectangular segments of a D-periodic signal make the delay circular,
    # so the linear-phase relation is exact.
    sxx, syx = welch_spectra(
        pair_from(x, y), window_s=D / FS, overlap=0.5, transform_size=D, window="boxcar"
    )
    band = band_indices(D, FS)
    h = estimate_rtf(sxx, syx, band)
    expected = -2.0 * np.pi * band * n0 / D
    err = np.angle(h.values * np.exp(-1j * expected))
    assert np.max(np.abs(err)) < 1e-6


def test_identical_channels_unit_rtf():
    src = make_white_source(1.0, FS, seed=4)
    sxx, syx = welch_spectra(pair_from(src.samples, src.samples), transform_size=D)
    h = estimate_rtf(sxx, syx, band_indices(D, FS))
    np.testing.assert_allclose(h.values, 1.0, rtol=1e-12)


def test_rtf_scale_invariance():
    src = make_white_source(1.0, FS, seed=6)
    y = np.roll(src.samples, 3)
    band = band_indices(D, FS)
    sxx1, syx1 = welch_spectra(pair_from(src.samples, y), transform_size=D)
    sxx2, syx2 = welch_spectra(pair_from(2.7 * src.samples, 2.7 * y), transform_size=D)
    h1 = estimate_rtf(sxx1, syx1, band)
    h2 = estimate_rtf(sxx2, syx2, band)
    np.testing.assert_allclose(h1.values, h2.values, rtol=1e-12)


def test_full_grid_conjugate_symmetry():
    rng = np.random.default_rng(7)
    x = rng.standard_normal(int(2 * FS))
    y = np.roll(x, 4) + 0.1 * rng.standard_normal(x.size)
    sxx, syx = welch_spectra(pair_from(x, y), transform_size=D)
    ratio = full_grid_ratio(sxx, syx)
    mirrored = np.conj(ratio[np.arange(-1, -(D // 2), -1)])
    np.testing.assert_allclose(ratio[1 : D // 2], mirrored, rtol=1e-9)


def test_rtf_matches_true_atf_ratio():
    # Short room responses (shorter than the transform) make the true ratio
    # available directly from the transforms of the simulated taps.
    beta = calibrated_reflections_for_t60(0.15, PAPER_DIMS)
    room = RoomSpec(PAPER_DIMS, beta, rir_seconds=0.1)
    src_pos = PointPosition(4.2, 4.3, 1.0)
    a1 = simulate_rir(room, src_pos, MIC1)
    a2 = simulate_rir(room, src_pos, MIC2)
    source = make_white_source(6.0, FS, seed=8)
    pair = synthesize_pair(source, a1, a2, 40.0, noise_seed=9)
    sxx, syx = welch_spectra(pair, transform_size=D)
    band = band_indices(D, FS)
    h = estimate_rtf(sxx, syx, band)
    true = np.fft.fft(a2.taps, D)[band] / np.fft.fft(a1.taps, D)[band]
    rel = np.abs(h.values - true) / np.abs(true)
    assert np.median(rel) < 0.05


def test_degenerate_bins_reported():
    values = np.ones(D)
    values[5] = 0.0
    sxx = dict_values = None
    from ssloc.features import SpectralEstimate

    sxx = SpectralEstimate(
        values=values, kind="auto", window_length=D, overlap_fraction=0.0,
        num_segments=1, sample_rate=FS,
    )
    syx = SpectralEstimate(
        values=np.ones(D, complex), kind="cross", window_length=D,
        overlap_fraction=0.0, num_segments=1, sample_rate=FS,
    )
    with pytest.raises(DegenerateBinError) as err:
        estimate_rtf(sxx, syx, np.arange(1, 10))
    assert err.value.bins == [5]


def test_rtf_distance_basics():
    band = np.array([3])
    one = RtfVector(values=np.array([1.0 + 0j]), band=band, transform_size=D)
    minus = RtfVector(values=np.array([-1.0 + 0j]), band=band, transform_size=D)
    assert rtf_distance(one, one) == 0.0
    assert rtf_distance(one, minus) == pytest.approx(2.0)
    assert rtf_distance(one, minus) == rtf_distance(minus, one)
    other = RtfVector(values=np.array([1.0 + 0j]), band=np.array([4]), transform_size=D)
    with pytest.raises(BandMismatchError):
        rtf_distance(one, other)


def test_real_vector_view_preserves_distances():
    rng = np.random.default_rng(10)
    band = band_indices(64, FS, max_frequency_hz=None)
    v1 = rng.standard_normal(band.size) + 1j * rng.standard_normal(band.size)
    v2 = rng.standard_normal(band.size) + 1j * rng.standard_normal(band.size)
    h1 = RtfVector(values=v1, band=band, transform_size=64)
    h2 = RtfVector(values=v2, band=band, transform_size=64)
    assert np.linalg.norm(h1.as_real_vector() - h2.as_real_vector()) == pytest.approx(
        rtf_distance(h1, h2)
    )


def test_band_indices_defaults():
    band = band_indices(2048, 16000.0)
    assert band[0] == 1
    assert band[-1] == 512  # 4 kHz at D=2048, fs=16 kHz
    full = band_indices(2048, 16000.0, max_frequency_hz=None, exclude_dc=False)
    assert full[0] == 0 and full[-1] == 1024


def test_rtf_vector_validation():
    with pytest.raises(ValueError):
        RtfVector(values=np.array([1.0 + 0j, 2.0]), band=np.array([2, 2]), transform_size=D)
    with pytest.raises(ValueError):
        RtfVector(values=np.array([np.nan + 0j]), band=np.array([1]), transform_size=D)
    with pytest.raises(ValueError):
        RtfVector(values=np.array([1.0 + 0j]), band=np.array([D]), transform_size=D)


def test_local_monotonic_distance_structure():
    # Distances from a reference grow strictly over the first two degrees
    # when sampled densely on the arc.
    beta = calibrated_reflections_for_t60(0.3, PAPER_DIMS)
    room = RoomSpec(PAPER_DIMS, beta, rir_seconds=0.2)
    from ssloc.room import Constellation

    cons = Constellation(MIC1, MIC2, source_radius=2.0, azimuth_range=(10.0, 60.0))
    band = band_indices(D, FS)
    vectors = []
    for i, offset in enumerate(np.arange(0.0, 2.0 + 0.125, 0.125)):
        pos = azimuth_to_position(cons, 35.0 + offset, room=room)
        a1 = simulate_rir(room, pos, cons.mic1)
        a2 = simulate_rir(room, pos, cons.mic2_rotated)
        source = make_white_source(1.0, FS, seed=100 + i)
        pair = synthesize_pair(source, a1, a2, 20.0, noise_seed=200 + i)
        sxx, syx = welch_spectra(pair, transform_size=D)
        vectors.append(estimate_rtf(sxx, syx, band))
    dists = [rtf_distance(vectors[0], v) for v in vectors[1:]]
    assert all(b > a for a, b in zip(dists, dists[1:])), dists


def test_dataset_archive_roundtrip(tmp_path):
    rng = np.random.default_rng(12)
    band = band_indices(64, FS, max_frequency_hz=None)
    ds = RtfDataset(
        band=band,
        transform_size=64,
        sample_rate=FS,
        train_values=rng.standard_normal((5, band.size)) + 1j * rng.standard_normal((5, band.size)),
        train_azimuths=np.array([10.0, 20.0, 30.0, 40.0, 50.0]),
        num_labelled=2,
        test_values=rng.standard_normal((3, band.size)) + 1j * rng.standard_normal((3, band.size)),
        test_azimuths=np.array([15.0, 25.0, 35.0]),
        test_tdoa_gcc=np.array([1e-4, -2e-4, 0.0]),
        metadata={"t60_ms": 300, "seed": 7},
    )
    path = tmp_path / "ds.npz"
    ds.save(path)
    back = RtfDataset.load(path)
    assert back.content_hash() == ds.content_hash()
    assert back.num_labelled == 2
    assert back.metadata["t60_ms"] == 300
    np.testing.assert_array_equal(back.train_values, ds.train_values)
    np.testing.assert_array_equal(back.labelled_azimuths, np.array([10.0, 20.0]))
    vecs = back.train_vectors()
    assert len(vecs) == 5 and vecs[0].same_band(vecs[4])

    # hash is content-sensitive
    ds.test_azimuths = ds.test_azimuths + 1.0
    assert ds.content_hash() != back.content_hash()


def test_rtf_csv_export(tmp_path):
    vec = RtfVector(
        values=np.array([1 + 2j, 3 - 4j]), band=np.array([1, 2]), transform_size=8
    )
    path = tmp_path / "rtf.csv"
    export_rtf_csv(vec, path)
    rows = path.read_text().strip().splitlines()
    assert rows[0] == "bin,real,imag"
    assert rows[1].startswith("1,") and "2.0" in rows[1]
