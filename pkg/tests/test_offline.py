import numpy as np
import pytest

from blockgss.dereverb import WpeConfig
from blockgss.diarization import ActivityMatrix, runs
from blockgss.offline import OfflineConfig, dereverberate_session, enhance_utterance, run_offline
from blockgss.online import OnlineConfig, OnlineGSS
from blockgss.stft import SpectralBlock, StftConfig
from conftest import random_activities, random_complex

STFT = StftConfig(sample_rate_hz=100, window_len_samples=8, hop_samples=2)
F = STFT.num_freqs


def test_one_iteration_no_context_matches_online_seam(rng):
    T = 40
    x = random_complex(rng, T, F, 3)
    d = random_activities(rng, T, 3)
    d[:, 1] = 1  # the utterance spans the whole signal
    eng = OnlineGSS(OnlineConfig(block_len_frames=T, context_len_frames=0,
                                 wpe=WpeConfig(taps=0)), STFT, 3)
    seg = [s for s in eng.process_block(SpectralBlock(x, 0), d) if s.speaker == 1][0]
    z, ref = enhance_utterance(x, d, (1, 0, T - 1),
                               OfflineConfig(context_sec=0, em_iterations=1), STFT)
    assert ref == seg.reference
    np.testing.assert_allclose(z, seg.spectra, atol=1e-10)


def test_only_the_context_window_matters(rng):
    T = 100
    x = random_complex(rng, T, F, 2)
    d = random_activities(rng, T, 3)
    d[40:50, 1] = 1
    cfg = OfflineConfig(context_sec=0.2, em_iterations=3)  # 10 frames each side
    z, _ = enhance_utterance(x, d, (1, 40, 49), cfg, STFT)
    assert z.shape == (10, F)
    y = x.copy()
    y[:30] = random_complex(rng, 30, F, 2)
    y[60:] = 0
    z2, _ = enhance_utterance(y, d, (1, 40, 49), cfg, STFT)
    np.testing.assert_array_equal(z, z2)


def test_enhance_utterance_errors(rng):
    x = random_complex(rng, 10, F, 2)
    d = np.ones((10, 2), dtype=np.uint8)
    cfg = OfflineConfig(em_iterations=1)
    with pytest.raises(ValueError):
        enhance_utterance(x, d, (1, 5, 4), cfg, STFT)
    with pytest.raises(ValueError):
        enhance_utterance(x, d, (1, 5, 10), cfg, STFT)
    with pytest.raises(ValueError):
        OfflineConfig(em_iterations=0)
    with pytest.raises(ValueError):
        OfflineConfig(context_sec=-1)


def test_run_offline_one_output_per_utterance(rng):
    T = 80
    x = dereverberate_session(random_complex(rng, T, F, 2))
    d = random_activities(rng, T, 3)
    acts = ActivityMatrix(d, ["<noise>", "a", "b"])
    utts = run_offline(x, acts, OfflineConfig(context_sec=0.1, em_iterations=2), STFT)
    expected = sorted((k, s, e) for k in (1, 2) for s, e in runs(d[:, k]))
    assert sorted((u.speaker, u.start_frame, u.end_frame) for u in utts) == expected
    for u in utts:
        assert u.spectra.shape == (u.num_frames, F)
        assert u.label == acts.labels[u.speaker]
        assert len(set(u.references.tolist())) == 1
