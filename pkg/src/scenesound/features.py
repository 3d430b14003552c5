"""Log-mel energy features.

Audio is framed on a fixed hop grid (tail zero-padded so that the frame
count depends only on clip length), windowed with a periodic Hann window,
transformed to a power spectrum and projected onto triangular mel filters.
"""
from __future__ import annotations

import math
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    clip_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("AudioClip expects a mono 1-D signal")
        if self.samples.size == 0:
            raise ValueError(f"clip {self.clip_id!r} is empty")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError(f"clip {self.clip_id!r} contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        self.sample_rate = int(self.sample_rate)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class FeatureConfig:
    n_mels: int = 64
    frame_ms: float = 40.0
    hop_ms: float = 20.0
    sample_rate: int = 44100
    fmin: float = 0.0
    fmax: float | None = None
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.fmax is None:
            self.fmax = self.sample_rate / 2
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if self.hop_ms <= 0 or self.hop_ms > self.frame_ms:
            raise ValueError("need 0 < hop_ms <= frame_ms")
        if not self.fmin < self.fmax:
            raise ValueError("fmin must be below fmax")
        if self.fmax > self.sample_rate / 2:
            raise ValueError("fmax above Nyquist")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")

    @property
    def frame_length(self) -> int:
        return int(round(self.frame_ms * self.sample_rate / 1000))

    @property
    def hop_length(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000))

    @property
    def n_fft(self) -> int:
        return 1 << (self.frame_length - 1).bit_length()

    def n_frames(self, n_samples: int) -> int:
        return math.ceil(n_samples / self.hop_length)


@dataclass
class FeatureMatrix:
    """Log-mel energies, ``data`` has shape (n_mels, n_frames)."""

    data: np.ndarray
    clip_id: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.data.shape


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def frame_signal(clip: AudioClip, cfg: FeatureConfig) -> np.ndarray:
    """Cut ``clip`` into overlapping frames.

    Returns an array of shape (frame_length, n_frames). The tail is
    zero-padded so that ``n_frames == ceil(len / hop)``.
    """
    x = clip.samples
    if x.size == 0:
        raise ValueError("cannot frame an empty signal")
    flen, hop = cfg.frame_length, cfg.hop_length
    n_frames = cfg.n_frames(x.size)
    padded_len = (n_frames - 1) * hop + flen
    padded = np.zeros(padded_len, dtype=np.float64)
    padded[: x.size] = x
    frames = np.lib.stride_tricks.sliding_window_view(padded, flen)[::hop]
    return np.ascontiguousarray(frames[:n_frames].T)


def mel_filterbank(cfg: FeatureConfig, n_fft_bins: int) -> np.ndarray:
    """Triangular mel filters, shape (n_mels, n_fft_bins).

    ``n_fft_bins`` is the number of one-sided spectrum bins, i.e. n_fft//2+1.
    """
    if cfg.n_mels > n_fft_bins:
        raise ValueError(f"n_mels={cfg.n_mels} exceeds the {n_fft_bins} available FFT bins")
    n_fft = 2 * (n_fft_bins - 1)
    bin_hz = np.arange(n_fft_bins) * cfg.sample_rate / n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_hz - lo) / (mid - lo)
    falling = (hi - bin_hz) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.sum(axis=1) <= 0)
    if empty.size:
        raise ValueError(f"mel filters {empty.tolist()} cover no FFT bin; use fewer mels or a larger FFT")
    return fb


def _hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def log_mel(clip: AudioClip, cfg: FeatureConfig) -> FeatureMatrix:
    if clip.sample_rate != cfg.sample_rate:
        raise ValueError(
            f"clip {clip.clip_id!r} is {clip.sample_rate} Hz but features expect {cfg.sample_rate} Hz"
        )
    frames = frame_signal(clip, cfg)
    frames = frames * _hann(cfg.frame_length)[:, None]
    spec = np.fft.rfft(frames, n=cfg.n_fft, axis=0)
    power = spec.real**2 + spec.imag**2
    fb = mel_filterbank(cfg, power.shape[0])
    energies = fb @ power
    data = np.log(np.maximum(cfg.log_floor, energies))
    return FeatureMatrix(data=data, clip_id=clip.clip_id)


# -- WAV I/O ---------------------------------------------------------------

_PCM_SCALE = {2: 32768.0, 4: 2147483648.0}
_PCM_DTYPE = {2: "<i2", 4: "<i4"}


def read_wav(path, clip_id: str | None = None) -> AudioClip:
    """Read a 16- or 32-bit PCM WAV file; stereo is averaged to mono."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as w:
            width = w.getsampwidth()
            n_channels = w.getnchannels()
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise ValueError(f"{path}: unsupported WAV encoding ({exc})") from exc
    if width not in _PCM_DTYPE:
        raise ValueError(f"{path}: {8 * width}-bit PCM is not supported (16 or 32 only)")
    data = np.frombuffer(raw, dtype=_PCM_DTYPE[width]).astype(np.float64) / _PCM_SCALE[width]
    if n_channels > 1:
        data = data.reshape(-1, n_channels).mean(axis=1)
    return AudioClip(data, rate, clip_id if clip_id is not None else path.stem)


def write_wav(path, clip: AudioClip, bits: int = 16) -> None:
    width = bits // 8
    if width not in _PCM_DTYPE:
        raise ValueError("bits must be 16 or 32")
    scale = _PCM_SCALE[width]
    ints = np.clip(np.round(clip.samples * scale), -scale, scale - 1).astype(_PCM_DTYPE[width])
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(width)
        w.setframerate(clip.sample_rate)
        w.writeframes(ints.tobytes())
