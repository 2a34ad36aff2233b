"""Synthetic multichannel meeting scenes and SI-SDR scoring."""

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve, lfilter

from .diarization import Segment, segments_to_activities
from .stft import StftConfig, analyze, synthesize

SI_SDR_CAP = 60.0
FRAC_TAPS = 16  # half-length of the fractional-delay interpolator


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    num_speakers: int = 2
    num_channels: int = 4
    duration_sec: float = 60.0
    overlap_ratio: float = 0.3
    snr_db: float = 15.0  # math.inf disables noise
    moving: bool = False
    sample_rate_hz: int = 16000

    def __post_init__(self):
        if not 2 <= self.num_speakers <= 4:
            raise ValueError("num_speakers must be in [2, 4]")
        if not 2 <= self.num_channels <= 8:
            raise ValueError("num_channels must be in [2, 8]")
        if self.duration_sec < 5:
            raise ValueError("duration_sec must be >= 5")
        if not 0 <= self.overlap_ratio < 1:
            raise ValueError("overlap_ratio must be in [0, 1)")


@dataclass
class Scene:
    spec: SceneSpec
    mixture: np.ndarray  # M x N
    references: np.ndarray  # K x N, dry single-channel speaker signals
    images: np.ndarray  # K x M x N, speaker signals as received at each mic
    noise: np.ndarray  # M x N
    segments: list
    labels: list

    @property
    def sample_rate_hz(self):
        return self.spec.sample_rate_hz


def overlap_ratio(segments) -> float:
    """Overlapped speech time over total (union) speech time."""
    events = []
    for s in segments:
        events += [(s.start_sec, 1), (s.end_sec, -1)]
    events.sort()
    level, last, speech, overlap = 0, 0.0, 0.0, 0.0
    for t, step in events:
        if level >= 1:
            speech += t - last
        if level >= 2:
            overlap += t - last
        level += step
        last = t
    return overlap / speech if speech > 0 else 0.0


def _layout(draws, scale, duration):
    """Place utterances given fixed random draws and an overlap scale."""
    out = []
    last_end = {}
    t = draws["lead"]
    for i, (spk, dur) in enumerate(zip(draws["speakers"], draws["durations"])):
        start = t
        end = min(start + dur, duration - 0.3)
        # a clipped predecessor can pull the start back into this speaker's last turn
        if end - start < 0.5 or start < last_end.get(spk, -np.inf):
            break
        out.append(Segment(spk, start, end))
        last_end[spk] = end
        if draws["gap"][i]:
            t = end + draws["gaps"][i]
        else:
            nxt = draws["durations"][i + 1] if i + 1 < len(draws["durations"]) else dur
            # <= half of each neighbour, so no speaker ever overlaps itself
            share = min(scale * draws["shares"][i], 1.0)
            t = end - 0.49 * share * min(end - start, nxt)
    return out


def _utterance_plan(spec: SceneSpec, rng):
    n_max = int(spec.duration_sec / 1.0) + 4
    speakers = [int(rng.integers(spec.num_speakers))]
    for _ in range(n_max - 1):
        choices = [k for k in range(spec.num_speakers) if k != speakers[-1]]
        speakers.append(int(rng.choice(choices)))
    draws = {
        "lead": float(rng.uniform(0.5, 1.5)),
        "speakers": [f"spk{k + 1}" for k in speakers],
        "durations": rng.uniform(1.5, 4.5, n_max).tolist(),
        "gap": (rng.random(n_max) < 0.25 * (1 - spec.overlap_ratio) ** 2).tolist(),
        "gaps": rng.uniform(0.4, 2.0, n_max).tolist(),
        "shares": rng.uniform(0.3, 1.0, n_max).tolist(),
    }
    target = spec.overlap_ratio
    lo, hi = 0.0, 4.0
    if overlap_ratio(_layout(draws, hi, spec.duration_sec)) < target:
        raise ValueError(f"overlap ratio {target} is infeasible for this scene")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if overlap_ratio(_layout(draws, mid, spec.duration_sec)) < target:
            lo = mid
        else:
            hi = mid
    segs = _layout(draws, hi, spec.duration_sec)
    if abs(overlap_ratio(segs) - target) > 0.05:
        raise ValueError(f"overlap ratio {target} is infeasible for this scene")
    return sorted(segs, key=lambda s: (s.start_sec, s.label))


def _speech_like(n, sr, rng):
    """Tilted white noise with independent syllable-rate envelopes per band."""
    white = rng.standard_normal(n)
    tilted = lfilter([1.0], [1.0, -0.7], white)
    spec = np.fft.rfft(tilted)
    freqs = np.fft.rfftfreq(n, 1 / sr)
    edges = [0, 500, 1200, 2500, 8001]
    t = np.arange(n) / sr
    out = np.zeros(n)
    for lo, hi in zip(edges[:-1], edges[1:]):
        band = np.fft.irfft(np.where((freqs >= lo) & (freqs < hi), spec, 0), n)
        rate = rng.uniform(2.5, 6.0)
        phase = rng.uniform(0, 2 * np.pi)
        wobble = 0.3 * np.sin(2 * np.pi * rng.uniform(0.2, 0.7) * t + rng.uniform(0, 6.3))
        env = np.clip(np.sin(2 * np.pi * rate * t + phase + wobble), 0, None) ** 2
        out += band * env
    return out / (np.std(out) + 1e-12)


def _frac_delay_fir(delay, taps=FRAC_TAPS):
    """Windowed-sinc FIR that delays by ``delay`` samples (>= taps)."""
    n = np.arange(int(np.floor(delay)) + 2 * taps + 2)
    arg = n - delay
    h = np.sinc(arg) * np.where(np.abs(arg) <= taps, 0.5 + 0.5 * np.cos(np.pi * arg / taps), 0)
    return h


def _moving_delay(signal, delay0, drift_per_sample, taps=FRAC_TAPS, chunk=1 << 16):
    """Time-varying fractional delay by windowed-sinc interpolation."""
    n = signal.size
    padded = np.concatenate([np.zeros(taps + int(np.ceil(abs(delay0))) + 64), signal,
                             np.zeros(taps + 64)])
    offset = taps + int(np.ceil(abs(delay0))) + 64
    out = np.empty(n)
    js = np.arange(-taps, taps + 1)
    for s in range(0, n, chunk):
        idx = np.arange(s, min(n, s + chunk))
        pos = idx - (delay0 + drift_per_sample * idx)
        base = np.floor(pos).astype(int)
        frac = pos - base
        arg = js[None, :] - frac[:, None]
        h = np.sinc(arg) * (0.5 + 0.5 * np.cos(np.pi * np.clip(arg / taps, -1, 1)))
        out[s:s + idx.size] = np.sum(padded[base[:, None] + js[None, :] + offset] * h, axis=1)
    return out


def _spatialize(dry, spec: SceneSpec, rng):
    """Per-mic direct path (static or drifting) plus a few early reflections."""
    M, sr = spec.num_channels, spec.sample_rate_hz
    base = FRAC_TAPS + 8.0
    delays = base + rng.uniform(-3.0, 3.0, M)
    gains = rng.uniform(0.6, 1.0, M)
    images = np.empty((M, dry.size))
    for m in range(M):
        if spec.moving:
            drift = rng.uniform(-0.5, 0.5) / sr
            direct = _moving_delay(dry, delays[m], drift)
        else:
            direct = fftconvolve(dry, _frac_delay_fir(delays[m]))[:dry.size]
        refl = np.zeros(170)
        for _ in range(3):
            refl[int(rng.integers(20, 160))] += rng.choice([-1, 1]) * rng.uniform(0.1, 0.35)
        echoes = fftconvolve(direct, refl)[:dry.size]
        images[m] = gains[m] * (direct + echoes)
    return images


def generate_scene(spec: SceneSpec) -> Scene:
    """Deterministically build a mixture from the scene seed."""
    rng = np.random.default_rng(spec.seed)
    sr = spec.sample_rate_hz
    n = int(round(spec.duration_sec * sr))
    segments = _utterance_plan(spec, rng)
    labels = [f"spk{k + 1}" for k in range(spec.num_speakers)]
    K, M = spec.num_speakers, spec.num_channels
    dry = np.zeros((K, n))
    fade = int(0.01 * sr)
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
    for seg in segments:
        k = labels.index(seg.label)
        a, b = int(round(seg.start_sec * sr)), int(round(seg.end_sec * sr))
        piece = _speech_like(b - a, sr, rng)
        piece[:fade] *= ramp
        piece[-fade:] *= ramp[::-1]
        dry[k, a:b] = piece
    images = np.stack([_spatialize(dry[k], spec, rng) for k in range(K)])
    speech = images.sum(axis=0)
    if np.isfinite(spec.snr_db):
        active = np.abs(dry).sum(axis=0) > 0
        p_speech = np.mean(speech[:, active] ** 2)
        noise = rng.standard_normal((M, n))
        noise *= np.sqrt(p_speech / 10 ** (spec.snr_db / 10))
    else:
        noise = np.zeros((M, n))
    mixture = speech + noise
    scale = 0.5 / np.max(np.abs(mixture))
    return Scene(spec, mixture * scale, dry * scale, images * scale, noise * scale,
                 segments, labels)


def si_sdr(estimate, reference) -> float:
    """Scale-invariant SDR in dB, capped at +60 dB."""
    estimate = np.asarray(estimate, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if estimate.shape != reference.shape:
        raise ValueError(f"length mismatch: {estimate.shape} vs {reference.shape}")
    ref_energy = np.dot(reference, reference)
    if ref_energy == 0:
        raise ValueError("reference is all zero")
    target = np.dot(estimate, reference) / ref_energy * reference
    residual = estimate - target
    t_energy, r_energy = np.dot(target, target), np.dot(residual, residual)
    if r_energy == 0 or t_energy / r_energy >= 10 ** (SI_SDR_CAP / 10):
        return SI_SDR_CAP
    if t_energy == 0:
        return -np.inf
    return float(10 * np.log10(t_energy / r_energy))


def reference_spectra(signals, stft: StftConfig, start_frame, end_frame, channels):
    """Spectra of ``signals`` (M, N) for frames ``[start, end]``, one channel per frame."""
    a = start_frame * stft.hop_samples
    b = end_frame * stft.hop_samples + stft.window_len_samples
    frames = analyze(signals[:, a:b], stft).frames
    return frames[np.arange(frames.shape[0]), :, channels]


def score_utterance(utt, images, mixture, stft: StftConfig, image_index=None):
    """SI-SDR of an enhanced utterance and of the unprocessed mixture.

    The target is the speaker's image at the reference microphone used for
    each frame; both sides go through the same synthesis so framing effects
    cancel. ``images`` is (K, M, N) indexed by ``image_index`` (defaults to
    ``utt.speaker - 1``) or a single (M, N) array.
    """
    img = images if images.ndim == 2 else images[
        utt.speaker - 1 if image_index is None else image_index]
    ref = synthesize(reference_spectra(img, stft, utt.start_frame, utt.end_frame,
                                       utt.references), stft)
    mix = synthesize(reference_spectra(mixture, stft, utt.start_frame, utt.end_frame,
                                       utt.references), stft)
    est = synthesize(utt.spectra, stft)
    return si_sdr(est, ref), si_sdr(mix, ref)


def overlapped(utt, activity_matrix) -> bool:
    rows = activity_matrix.matrix[utt.start_frame:utt.end_frame + 1]
    others = np.delete(rows[:, 1:], utt.speaker - 1, axis=1)
    return bool(others.any())


def score_scene(utts, scene: Scene, stft: StftConfig, activity_matrix):
    """Per-utterance records with SI-SDR, mixture SI-SDR and overlap flag."""
    records = []
    for utt in utts:
        k = scene.labels.index(utt.label)
        est, mix = score_utterance(utt, scene.images, scene.mixture, stft, k)
        records.append({
            "utterance_id": utt.utterance_id, "label": utt.label,
            "start_frame": utt.start_frame, "end_frame": utt.end_frame,
            "si_sdr": est, "mixture_si_sdr": mix,
            "overlapped": overlapped(utt, activity_matrix),
        })
    return records


def scene_activities(scene: Scene, stft: StftConfig):
    num_frames = stft.num_frames(scene.mixture.shape[1])
    return segments_to_activities(scene.segments, stft, num_frames)


def measured_overlap(activity_matrix) -> float:
    spk = activity_matrix.matrix[:, 1:].sum(axis=1)
    speech = np.count_nonzero(spk >= 1)
    return np.count_nonzero(spk >= 2) / speech if speech else 0.0
