"""Utterance-wise offline GSS, the reference path for the online engine."""

from dataclasses import dataclass

import numpy as np

from . import beamform
from .cacgmm import SHAPE_EPS, offline_em
from .dereverb import WpeConfig, wpe_init, wpe_process_block
from .diarization import utterances
from .online import EnhancedUtterance
from .stft import SpectralBlock, StftConfig


@dataclass(frozen=True)
class OfflineConfig:
    context_sec: float = 10.0
    em_iterations: int = 20
    reference: int | None = None
    shape_eps: float = SHAPE_EPS

    def __post_init__(self):
        if self.em_iterations < 1:
            raise ValueError("em_iterations must be >= 1")
        if self.context_sec < 0:
            raise ValueError("context_sec must be >= 0")


def dereverberate_session(frames, wpe: WpeConfig = WpeConfig()) -> np.ndarray:
    """Run the frame-recursive WPE over a whole (T, F, M) session."""
    state = wpe_init(wpe, frames.shape[1], frames.shape[2])
    return wpe_process_block(state, SpectralBlock(frames, 0)).frames


def enhance_utterance(features, activities, utterance, config: OfflineConfig,
                      stft: StftConfig, workspace=None):
    """Enhance one utterance from its frames plus symmetric contexts.

    Arguments:
        features: (T, F, M) session features, only sliced within the window
        activities: (T, K) session activities
        utterance: (speaker, t_start, t_end), inclusive frame indices
    Return:
        (spectra (t_end - t_start + 1, F), reference channel)
    """
    speaker, ts, te = utterance
    T = features.shape[0]
    if te < ts:
        raise ValueError("empty utterance")
    if ts < 0 or te >= T:
        raise ValueError(f"utterance [{ts}, {te}] outside session of {T} frames")
    ctx = int(round(config.context_sec / stft.frame_sec))
    a, b = max(0, ts - ctx), min(T, te + 1 + ctx)
    x = np.asarray(features[a:b])
    d = np.asarray(activities[a:b])
    gammas, _ = offline_em(x, d, config.em_iterations, eps=config.shape_eps,
                           workspace=workspace)
    bf = beamform.beamformer(x, gammas, speaker, config.reference)
    return beamform.apply(bf.weights, x[ts - a:te - a + 1]), bf.reference


def run_offline(features, activity_matrix, config: OfflineConfig, stft: StftConfig,
                on_utterance=None):
    """Enhance every utterance of a session; ``features`` are dereverberated."""
    out = []
    emit = on_utterance or out.append
    workspace = {}
    for uid, (k, ts, te) in enumerate(utterances(activity_matrix)):
        z, ref = enhance_utterance(features, activity_matrix.matrix, (k, ts, te), config, stft,
                                   workspace)
        emit(EnhancedUtterance(uid, k, activity_matrix.labels[k], ts, te, z,
                               np.full(z.shape[0], ref)))
    return out
