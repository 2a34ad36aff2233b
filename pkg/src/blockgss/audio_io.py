"""16 kHz / 16-bit PCM WAV I/O and a streaming front end that refuses lookahead."""

import wave
from pathlib import Path

import numpy as np

from .stft import SpectralBlock, StftConfig

SAMPLE_RATE_HZ = 16000
SAMPLE_WIDTH_BYTES = 2
PCM_SCALE = 32768.0


class WavFormatError(ValueError):
    pass


class LookaheadError(RuntimeError):
    """Raised when a read reaches past the horizon of the current block."""


def wav_info(path):
    """Return (num_channels, num_samples) after validating the format."""
    with wave.open(str(path), "rb") as w:
        _check_format(w, path)
        return w.getnchannels(), w.getnframes()


def _check_format(w, path):
    if w.getframerate() != SAMPLE_RATE_HZ:
        raise WavFormatError(f"{path}: sample rate {w.getframerate()} Hz, expected 16000")
    if w.getsampwidth() != SAMPLE_WIDTH_BYTES:
        raise WavFormatError(f"{path}: {8 * w.getsampwidth()}-bit samples, expected 16-bit PCM")
    if w.getcomptype() != "NONE":
        raise WavFormatError(f"{path}: compressed WAV is not supported")


def _decode(raw, channels):
    pcm = np.frombuffer(raw, dtype="<i2").reshape(-1, channels)
    return pcm.T.astype(float) / PCM_SCALE


def read_wav(path) -> np.ndarray:
    """Read a whole WAV file as a (channels, samples) float array in [-1, 1)."""
    with wave.open(str(path), "rb") as w:
        _check_format(w, path)
        return _decode(w.readframes(w.getnframes()), w.getnchannels())


def write_wav(path, data) -> None:
    """Write (channels, samples) or (samples,) floats as 16-bit PCM, clipping to range."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    pcm = np.clip(np.round(data * PCM_SCALE), -32768, 32767).astype("<i2")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(pcm.shape[0])
        w.setsampwidth(SAMPLE_WIDTH_BYTES)
        w.setframerate(SAMPLE_RATE_HZ)
        w.writeframes(pcm.T.tobytes())


class StreamingReader:
    """Sequential multichannel sample reader with a movable read horizon.

    The consumer declares how far it may read with :meth:`allow`; any read
    that would cross the horizon is counted in ``violations`` and refused.
    Sources are either an in-memory (channels, samples) array or WAV paths
    (one multichannel file or several mono files of equal length).
    """

    def __init__(self, source):
        self._files = []
        self._array = None
        if isinstance(source, np.ndarray):
            self._array = np.atleast_2d(source)
            self.num_channels, self.num_samples = self._array.shape
        else:
            paths = [source] if isinstance(source, (str, Path)) else list(source)
            if not paths:
                raise ValueError("no input files")
            lengths, channels = [], 0
            for p in paths:
                if not Path(p).exists():
                    raise FileNotFoundError(2, "no such file", str(p))
                w = wave.open(str(p), "rb")
                _check_format(w, p)
                self._files.append(w)
                lengths.append(w.getnframes())
                channels += w.getnchannels()
            if len(set(lengths)) != 1:
                self.close()
                raise WavFormatError(f"channel files differ in length: {lengths}")
            self.num_channels, self.num_samples = channels, lengths[0]
        self.position = 0
        self.horizon = 0
        self.violations = 0

    def allow(self, horizon: int) -> None:
        """Permit reads up to (excluding) sample index ``horizon``."""
        self.horizon = max(self.horizon, int(horizon))

    def read(self, n: int) -> np.ndarray:
        """Read the next ``n`` samples (fewer at end of stream)."""
        if n < 0:
            raise ValueError("negative read size")
        if self.position + n > self.horizon:
            self.violations += 1
            raise LookaheadError(
                f"read of samples [{self.position}, {self.position + n}) crosses "
                f"horizon {self.horizon}")
        n = min(n, self.num_samples - self.position)
        if self._array is not None:
            out = self._array[:, self.position:self.position + n].astype(float)
        else:
            out = np.concatenate([_decode(w.readframes(n), w.getnchannels())
                                  for w in self._files])
        self.position += n
        return out

    @property
    def duration_sec(self):
        return self.num_samples / SAMPLE_RATE_HZ

    def close(self):
        for w in self._files:
            w.close()
        self._files = []

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class StreamingStft:
    """Turns a :class:`StreamingReader` into consecutive spectral blocks.

    Each block of ``L`` frames reads only the samples its last frame needs,
    so frames match :func:`~blockgss.stft.analyze` on the whole signal.
    """

    def __init__(self, reader: StreamingReader, config: StftConfig):
        self.reader = reader
        self.config = config
        self.num_frames = config.num_frames(reader.num_samples) \
            if reader.num_samples >= config.window_len_samples else 0
        self._buffer = np.zeros((reader.num_channels, 0))
        self._buffer_start = 0  # sample index of buffer[:, 0]
        self._window = config.window()

    def blocks(self, block_len: int):
        cfg = self.config
        hop, win = cfg.hop_samples, cfg.window_len_samples
        for t0 in range(0, self.num_frames, block_len):
            t1 = min(t0 + block_len, self.num_frames)
            need = (t1 - 1) * hop + win
            self.reader.allow(need)
            have = self._buffer_start + self._buffer.shape[1]
            if need > have:
                self._buffer = np.concatenate([self._buffer, self.reader.read(need - have)], axis=1)
            start = t0 * hop - self._buffer_start
            seg = self._buffer[:, start:start + (t1 - t0 - 1) * hop + win]
            frames = np.lib.stride_tricks.sliding_window_view(seg, win, axis=1)[:, ::hop]
            spec = np.fft.rfft(frames * self._window, axis=-1)  # M x T x F
            keep = t1 * hop - self._buffer_start
            self._buffer = self._buffer[:, keep:]
            self._buffer_start += keep
            yield SpectralBlock(np.ascontiguousarray(spec.transpose(1, 2, 0)), t0)
