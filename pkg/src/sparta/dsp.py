"""Frame-level speech features: framing, power spectrum, mel filterbank, log-mel and MFCC.

Defaults: 25 ms Hamming frames with a 10 ms hop at 16 kHz, a 1024-point FFT,
24 triangular mel filters spanning 0 Hz to Nyquist and 14 cepstral
coefficients (c0 included) from an orthonormal DCT-II.
"""

from __future__ import annotations

import os
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np
import scipy.fft

from . import container
from .corpus import SAMPLE_RATE, Waveform
from .errors import ConfigError, DimensionError, FormatError, TooShortError
from .features import MEL, MFCC, FeatureMatrix, FixedVector

__all__ = [
    "DspConfig", "FeatureMatrix", "frame_signal", "power_spectrum", "hz_to_mel", "mel_to_hz",
    "mel_filterbank", "filter_center_bins", "log_mel", "cepstra", "mfcc", "extract", "write_feature_cache",
    "read_feature_cache",
]


@dataclass(frozen=True)
class DspConfig:
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    fft_size: int = 1024
    num_mel_filters: int = 24
    num_cepstra: int = 14
    fmin_hz: float = 0.0
    fmax_hz: float = 8000.0
    window: str = "hamming"
    log_floor: float = 1e-10
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.window not in ("hamming", "rectangular"):
            raise ConfigError(f"unsupported window {self.window!r}")
        if self.frame_length > self.fft_size:
            raise ConfigError(f"frame of {self.frame_length} samples exceeds fft_size {self.fft_size}")
        if self.hop_length < 1:
            raise ConfigError("hop must be at least one sample")
        if self.num_cepstra > self.num_mel_filters:
            raise ConfigError("num_cepstra cannot exceed num_mel_filters")
        if not 0 <= self.fmin_hz < self.fmax_hz <= self.sample_rate / 2:
            raise ConfigError("need 0 <= fmin < fmax <= sample_rate / 2")
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")

    @property
    def frame_length(self) -> int:
        return int(round(self.frame_ms * self.sample_rate / 1000))

    @property
    def hop_length(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000))

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    def window_values(self) -> np.ndarray:
        if self.window == "hamming":
            return np.hamming(self.frame_length)
        return np.ones(self.frame_length)


def frame_signal(wave: Waveform | np.ndarray, cfg: DspConfig = DspConfig()) -> np.ndarray:
    """Slice into overlapping windowed frames, shape ``(n_frames, frame_length)``.

    ``n_frames = (len - frame_length) // hop + 1``; trailing samples that do not
    fill a frame are dropped.
    """
    x = wave.samples if isinstance(wave, Waveform) else np.asarray(wave, dtype=np.float64)
    n = cfg.frame_length
    if x.shape[0] < n:
        raise TooShortError(f"signal of {x.shape[0]} samples is shorter than one frame ({n})")
    frames = np.lib.stride_tricks.sliding_window_view(x, n)[:: cfg.hop_length]
    return frames * cfg.window_values()


def power_spectrum(frames: np.ndarray, cfg: DspConfig = DspConfig()) -> np.ndarray:
    """Unnormalized |DFT|^2 of each (zero-padded) frame, ``fft_size // 2 + 1`` bins."""
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if frames.shape[1] > cfg.fft_size:
        raise DimensionError(f"frame length {frames.shape[1]} exceeds fft_size {cfg.fft_size}")
    spec = np.fft.rfft(frames, n=cfg.fft_size, axis=1)
    return spec.real ** 2 + spec.imag ** 2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def filter_center_bins(cfg: DspConfig = DspConfig()) -> np.ndarray:
    """FFT bin indices of filter edges/centers: ``num_mel_filters + 2`` points."""
    mels = np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz), cfg.num_mel_filters + 2)
    return np.floor((cfg.fft_size + 1) * mel_to_hz(mels) / cfg.sample_rate).astype(int)


def mel_filterbank(cfg: DspConfig = DspConfig()) -> np.ndarray:
    """Triangular filters on the mel scale, shape ``(num_mel_filters, fft_size // 2 + 1)``.

    Filter ``f`` rises from bin ``b[f]`` to a peak of 1 at ``b[f+1]`` and falls
    back to 0 at ``b[f+2]``, so neighbours meet at each other's edges.
    """
    bins = filter_center_bins(cfg)
    if np.any(np.diff(bins) <= 0):
        raise ConfigError(
            f"{cfg.num_mel_filters} filters do not fit in {cfg.num_bins} FFT bins "
            f"between {cfg.fmin_hz} and {cfg.fmax_hz} Hz"
        )
    bank = np.zeros((cfg.num_mel_filters, cfg.num_bins))
    k = np.arange(cfg.num_bins)
    for f in range(cfg.num_mel_filters):
        lo, mid, hi = bins[f], bins[f + 1], bins[f + 2]
        rise = (k - lo) / (mid - lo)
        fall = (hi - k) / (hi - mid)
        bank[f] = np.clip(np.minimum(rise, fall), 0.0, None)
    return bank


def log_mel(spectrum: np.ndarray, bank: np.ndarray, cfg: DspConfig = DspConfig()) -> FeatureMatrix:
    """Natural-log filterbank energies ``ln(P @ bank.T + floor)``."""
    spectrum = np.atleast_2d(spectrum)
    if spectrum.shape[1] != bank.shape[1]:
        raise DimensionError(f"spectrum has {spectrum.shape[1]} bins, filterbank expects {bank.shape[1]}")
    return FeatureMatrix(MEL, np.log(spectrum @ bank.T + cfg.log_floor))


def cepstra(log_energies: np.ndarray, keep: int | None = None) -> np.ndarray:
    """Orthonormal DCT-II along each row, truncated to the first ``keep`` coefficients."""
    coeffs = scipy.fft.dct(np.atleast_2d(log_energies), type=2, norm="ortho", axis=1)
    return coeffs if keep is None else coeffs[:, :keep]


def mfcc(mel: FeatureMatrix, cfg: DspConfig = DspConfig()) -> FeatureMatrix:
    if not isinstance(mel, FeatureMatrix) or mel.kind != MEL:
        raise DimensionError("mfcc expects a MEL FeatureMatrix")
    return FeatureMatrix(MFCC, cepstra(mel.values, cfg.num_cepstra))


def extract(wave: Waveform, kind: str = MFCC, cfg: DspConfig = DspConfig()) -> FeatureMatrix:
    """Waveform -> MEL (24 columns) or MFCC (14 columns)."""
    if kind not in (MEL, MFCC):
        raise ConfigError(f"unknown feature kind {kind!r}")
    spec = power_spectrum(frame_signal(wave, cfg), cfg)
    mel = log_mel(spec, mel_filterbank(cfg), cfg)
    return mel if kind == MEL else mfcc(mel, cfg)


_KIND_TO_CODE = {MEL: container.KIND_MEL, MFCC: container.KIND_MFCC}
_CODE_TO_KIND = {v: k for k, v in _KIND_TO_CODE.items()}


def write_feature_cache(path: str | os.PathLike, entries: Mapping[str, FeatureMatrix | FixedVector]) -> None:
    """Store feature matrices and/or fixed vectors as float32 in the SPRT container."""
    raw = {}
    for key, item in entries.items():
        if isinstance(item, FeatureMatrix):
            raw[key] = (_KIND_TO_CODE[item.kind], item.values)
        elif isinstance(item, FixedVector):
            raw[key] = (container.KIND_VECTOR, item.values.reshape(1, -1))
        else:
            raise TypeError(f"entry {key!r}: expected FeatureMatrix or FixedVector, got {type(item).__name__}")
    container.write(path, raw)


def read_feature_cache(path: str | os.PathLike, vector_kind: str | None = None) -> dict:
    """Inverse of :func:`write_feature_cache`.

    The container does not record which embedding a vector entry holds, so
    vector entries come back as :class:`FixedVector` of ``vector_kind``.
    """
    out = {}
    for key, (code, values) in container.read(path).items():
        if code in _CODE_TO_KIND:
            out[key] = FeatureMatrix(_CODE_TO_KIND[code], values)
        elif code == container.KIND_VECTOR:
            if vector_kind is None:
                raise FormatError(f"entry {key!r} is a fixed vector; pass vector_kind to read it")
            if values.shape[0] != 1:
                raise FormatError(f"vector entry {key!r} has {values.shape[0]} rows, expected 1")
            out[key] = FixedVector(vector_kind, values[0])
        else:
            raise FormatError(f"entry {key!r} has kind code {code}, not a feature")
    return out
