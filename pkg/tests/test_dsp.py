import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparta.corpus import Waveform
from sparta.dsp import (
    DspConfig,
    extract,
    filter_center_bins,
    frame_signal,
    hz_to_mel,
    cepstra,
    log_mel,
    mel_filterbank,
    mel_to_hz,
    mfcc,
    power_spectrum,
    read_feature_cache,
    write_feature_cache,
)
from sparta.errors import ConfigError, DimensionError, FormatError, TooShortError
from sparta.features import MEL, MFCC, FeatureMatrix, FixedVector

CFG = DspConfig()


# --------------------------------------------------------------------------- oracles


def loop_frame_count(n, frame=400, hop=160):
    count, start = 0, 0
    while start + frame <= n:
        count += 1
        start += hop
    return count


def naive_dft_power(frame, n_fft=1024):
    x = np.zeros(n_fft)
    x[: len(frame)] = frame
    n = np.arange(n_fft)
    out = np.empty(n_fft // 2 + 1)
    for k in range(n_fft // 2 + 1):
        re = np.sum(x * np.cos(2 * np.pi * k * n / n_fft))
        im = -np.sum(x * np.sin(2 * np.pi * k * n / n_fft))
        out[k] = re * re + im * im
    return out


def dct_matrix(n):
    """Orthonormal DCT-II basis built from its definition."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * k * (2 * i + 1) / (2 * n)) * np.sqrt(2.0 / n)
    m[0] /= np.sqrt(2.0)
    return m


# --------------------------------------------------------------------------- framing


def test_config_defaults():
    assert CFG.frame_length == 400
    assert CFG.hop_length == 160
    assert CFG.num_bins == 513


@pytest.mark.parametrize("n, frames", [(16000, 98), (400, 1), (559, 1), (560, 2)])
def test_frame_counts(n, frames):
    assert frame_signal(np.zeros(n)).shape == (frames, 400)


def test_too_short():
    with pytest.raises(TooShortError):
        frame_signal(np.zeros(399))


def test_frames_are_windowed_slices(rng):
    x = rng.uniform(-1, 1, 1000)
    frames = frame_signal(Waveform(x))
    np.testing.assert_array_equal(frames[2], x[320:720] * np.hamming(400))


@given(st.integers(400, 50_000))
def test_frame_count_matches_loop_oracle(n):
    assert frame_signal(np.zeros(n)).shape[0] == loop_frame_count(n)


def test_config_validation():
    with pytest.raises(ConfigError):
        DspConfig(frame_ms=100)  # 1600 samples > fft_size
    with pytest.raises(ConfigError):
        DspConfig(num_cepstra=30)
    with pytest.raises(ConfigError):
        DspConfig(fmax_hz=9000)


# --------------------------------------------------------------------------- spectrum


def test_zero_frame_zero_spectrum():
    assert not power_spectrum(np.zeros((1, 400))).any()


def test_impulse_is_flat():
    frames = frame_signal(np.r_[1.0, np.zeros(399)])
    p = power_spectrum(frames)
    w0 = np.hamming(400)[0]
    np.testing.assert_allclose(p[0], w0 ** 2)
    rect = power_spectrum(np.r_[1.0, np.zeros(399)][None, :])
    np.testing.assert_allclose(rect[0], 1.0)


def test_on_bin_cosine_peaks_at_bin():
    n = np.arange(1024)
    frame = np.cos(2 * np.pi * 16 * n / 1024)
    assert int(np.argmax(power_spectrum(frame[None, :])[0])) == 16


def test_power_matches_naive_dft(rng):
    frames = rng.standard_normal((4, 1024))
    fast = power_spectrum(frames)
    for f, row in zip(frames, fast):
        slow = naive_dft_power(f)
        assert np.max(np.abs(row - slow) / np.maximum(slow, 1e-12)) < 1e-6


# --------------------------------------------------------------------------- filterbank


def test_mel_of_700():
    assert hz_to_mel(700.0) == pytest.approx(2595 * math.log10(2))
    # 2595 * log10(2) = 781.1728...; a quoted value of 781.177 agrees to 5e-3.
    assert hz_to_mel(700.0) == pytest.approx(781.177, abs=5e-3)
    assert mel_to_hz(hz_to_mel(1234.5)) == pytest.approx(1234.5)


def test_filterbank_shape_and_coverage():
    bank = mel_filterbank()
    assert bank.shape == (24, 513)
    assert (bank >= 0).all()
    assert (bank.max(axis=1) == 1.0).all()
    assert (bank > 0).any(axis=1).all()
    bins = filter_center_bins()
    assert np.all(np.diff(bins) > 0)
    # Peak of filter f sits at its center bin.
    assert np.array_equal(np.argmax(bank, axis=1), bins[1:-1])
    # Interior bins are covered by at most two filters.
    assert ((bank > 0).sum(axis=0) <= 2).all()


def test_adjacent_filters_meet_at_edges():
    bank = mel_filterbank()
    bins = filter_center_bins()
    for f in range(23):
        # Filter f+1 starts where filter f peaks, and filter f ends where f+1 peaks.
        assert bank[f + 1, bins[f + 1]] == 0.0
        assert bank[f, bins[f + 2]] == 0.0


def test_too_many_filters_is_config_error():
    with pytest.raises(ConfigError):
        mel_filterbank(DspConfig(num_mel_filters=200, num_cepstra=14))


# --------------------------------------------------------------------------- log-mel / mfcc


def test_zero_spectrum_log_floor():
    mel = log_mel(np.zeros((3, 513)), mel_filterbank())
    assert mel.kind == MEL and mel.cols == 24
    np.testing.assert_allclose(mel.values, math.log(1e-10))
    assert mel.values[0, 0] == pytest.approx(-23.0259, abs=1e-4)


def test_log_mel_dimension_mismatch():
    with pytest.raises(DimensionError):
        log_mel(np.zeros((3, 100)), mel_filterbank())


def test_amplitude_doubling_shifts_by_ln4(rng):
    x = np.clip(0.1 * rng.standard_normal(4000), -0.45, 0.45)
    a = extract(Waveform(x), MEL)
    b = extract(Waveform(2 * x), MEL)
    np.testing.assert_allclose(b.values - a.values, math.log(4), atol=1e-6)
    ca = mfcc(a).values
    cb = mfcc(b).values
    np.testing.assert_allclose(cb[:, 0] - ca[:, 0], math.sqrt(24) * math.log(4), atol=1e-5)
    np.testing.assert_allclose(cb[:, 1:], ca[:, 1:], atol=1e-5)


def test_constant_log_mel_only_c0():
    c = -3.7
    out = mfcc(FeatureMatrix(MEL, np.full((2, 24), c))).values
    assert out.shape == (2, 14)
    np.testing.assert_allclose(out[:, 0], c * math.sqrt(24))
    assert np.max(np.abs(out[:, 1:])) < 1e-9


def test_mfcc_matches_dct_matrix_and_parseval(rng):
    row = rng.standard_normal((5, 24))
    full = row @ dct_matrix(24).T
    ours = cepstra(row)
    np.testing.assert_allclose(ours, full, atol=1e-12)
    energy_in = np.sum(row ** 2, axis=1)
    assert np.max(np.abs(np.sum(ours ** 2, axis=1) - energy_in) / energy_in) < 1e-9
    kept = mfcc(FeatureMatrix(MEL, row)).values
    assert np.all(np.sum(kept ** 2, axis=1) <= energy_in + 1e-12)


def test_mfcc_rejects_mfcc_input():
    with pytest.raises(DimensionError):
        mfcc(FeatureMatrix(MFCC, np.zeros((1, 14))))


def test_tone_lands_in_its_band():
    t = np.arange(16000) / 16000
    feats = extract(Waveform(0.5 * np.sin(2 * np.pi * 1000 * t)), MEL)
    band = int(np.argmax(feats.values.mean(axis=0)))
    bins = filter_center_bins()
    lo, hi = bins[band] * 16000 / 1024, bins[band + 2] * 16000 / 1024
    assert lo <= 1000 <= hi


def test_extract_shapes():
    x = np.zeros(16000)
    assert extract(Waveform(x), MEL).values.shape == (98, 24)
    assert extract(Waveform(x), MFCC).values.shape == (98, 14)
    with pytest.raises(ConfigError):
        extract(Waveform(x), "PLP")


@settings(max_examples=25)
@given(st.integers(400, 4000), st.integers(0, 2**32 - 1))
def test_extract_deterministic_and_finite(n, seed):
    x = np.random.default_rng(seed).uniform(-1, 1, n)
    a = extract(Waveform(x), MFCC)
    b = extract(Waveform(x), MFCC)
    assert a == b
    assert np.isfinite(a.values).all()


# --------------------------------------------------------------------------- cache


def test_cache_round_trip(tmp_path, rng):
    mel = FeatureMatrix(MEL, rng.standard_normal((98, 24)).astype(np.float32))
    path = tmp_path / "c.sprt"
    write_feature_cache(path, {"u1": mel})
    assert read_feature_cache(path)["u1"] == mel


def test_cache_vectors_need_kind(tmp_path, rng):
    vec = FixedVector("d", rng.standard_normal(256).astype(np.float32))
    path = tmp_path / "v.sprt"
    write_feature_cache(path, {"u1": vec})
    with pytest.raises(FormatError):
        read_feature_cache(path)
    assert read_feature_cache(path, vector_kind="d")["u1"] == vec


def test_empty_cache(tmp_path):
    write_feature_cache(tmp_path / "e.sprt", {})
    assert read_feature_cache(tmp_path / "e.sprt") == {}


def test_corrupt_magic(tmp_path):
    path = tmp_path / "c.sprt"
    write_feature_cache(path, {"u": FeatureMatrix(MFCC, np.zeros((1, 14)))})
    data = bytearray(path.read_bytes())
    data[0] = ord("X")
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError):
        read_feature_cache(path)
