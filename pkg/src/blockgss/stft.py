"""Multichannel STFT analysis and weighted overlap-add synthesis.

Shapes follow the (time, frequency, channel) convention used throughout
the package: ``frames[t, f, m]``.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class StftConfig:
    sample_rate_hz: int = 16000
    window_len_samples: int = 1024
    hop_samples: int = 256
    window_kind: str = "hann"

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if self.window_len_samples <= 0 or self.window_len_samples % 2:
            raise ValueError("window_len_samples must be a positive even integer")
        if not 0 < self.hop_samples <= self.window_len_samples:
            raise ValueError("hop_samples must lie in (0, window_len_samples]")
        if self.window_kind != "hann":
            raise ValueError(f"unsupported window {self.window_kind!r}")

    @classmethod
    def from_ms(cls, sample_rate_hz=16000, window_ms=64.0, hop_ms=16.0):
        return cls(
            sample_rate_hz=sample_rate_hz,
            window_len_samples=int(round(sample_rate_hz * window_ms / 1000)),
            hop_samples=int(round(sample_rate_hz * hop_ms / 1000)),
        )

    @property
    def num_freqs(self) -> int:
        return self.window_len_samples // 2 + 1

    @property
    def frame_sec(self) -> float:
        return self.hop_samples / self.sample_rate_hz

    def window(self) -> np.ndarray:
        # periodic Hann: squared sum is constant (1.5) at 75 % overlap
        n = np.arange(self.window_len_samples)
        return 0.5 - 0.5 * np.cos(2 * np.pi * n / self.window_len_samples)

    def num_frames(self, num_samples: int) -> int:
        if num_samples < self.window_len_samples:
            return 0
        return 1 + (num_samples - self.window_len_samples) // self.hop_samples

    def frame_span(self, t: int) -> tuple[int, int]:
        """Sample interval ``[start, stop)`` covered by frame ``t``."""
        start = t * self.hop_samples
        return start, start + self.window_len_samples


@dataclass
class SpectralBlock:
    frames: np.ndarray  # complex (T, F, M)
    start_frame_index: int = 0

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def stop_frame_index(self) -> int:
        return self.start_frame_index + self.frames.shape[0]


def _as_channels(audio) -> np.ndarray:
    """Coerce audio into a (M, N) float array. Accepts a sequence of channels."""
    if isinstance(audio, np.ndarray):
        arr = audio
        if arr.ndim == 1:
            arr = arr[None, :]
    else:
        channels = [np.asarray(ch, dtype=float) for ch in audio]
        if not channels:
            raise ValueError("empty input: no channels")
        lengths = {len(ch) for ch in channels}
        if len(lengths) != 1:
            raise ValueError(f"channel length mismatch: {sorted(lengths)}")
        arr = np.stack(channels)
    if arr.ndim != 2:
        raise ValueError("audio must be (channels, samples)")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError("empty input")
    return np.asarray(arr, dtype=float)


def analyze(audio, config: StftConfig, start_frame_index: int = 0) -> SpectralBlock:
    """Windowed real DFT of every channel.

    Arguments:
        audio: (M, N) array or a sequence of M equal-length 1-D channels
    Return:
        SpectralBlock with frames of shape (T, F, M); trailing samples that
        do not fill a whole window are dropped.
    """
    x = _as_channels(audio)
    if x.shape[1] < config.window_len_samples:
        raise ValueError(
            f"input of {x.shape[1]} samples is shorter than one window "
            f"({config.window_len_samples})"
        )
    # M x T x N
    segs = sliding_window_view(x, config.window_len_samples, axis=-1)[:, :: config.hop_samples]
    spec = np.fft.rfft(segs * config.window(), axis=-1)
    return SpectralBlock(np.ascontiguousarray(spec.transpose(1, 2, 0)), start_frame_index)


def synthesize(frames: np.ndarray, config: StftConfig, floor: float = 1e-2) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`analyze` for one channel.

    ``frames`` is (T, F). Samples are normalised by the per-sample sum of
    squared analysis windows; ``floor`` (relative to the largest such sum)
    keeps the sparsely covered edge samples from blowing up.
    """
    frames = np.asarray(frames)
    if frames.ndim != 2 or frames.shape[1] != config.num_freqs:
        raise ValueError(
            f"expected (T, {config.num_freqs}) frames, got {frames.shape}"
        )
    n_win, hop = config.window_len_samples, config.hop_samples
    T = frames.shape[0]
    if T == 0:
        return np.zeros(0)
    win = config.window()
    segs = np.fft.irfft(frames, n=n_win, axis=-1) * win
    length = (T - 1) * hop + n_win
    out = np.zeros(length)
    wsum = np.zeros(length)
    for t in range(T):
        out[t * hop:t * hop + n_win] += segs[t]
        wsum[t * hop:t * hop + n_win] += win ** 2
    denom = np.maximum(wsum, floor * wsum.max())
    return out / denom
