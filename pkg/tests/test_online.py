import numpy as np
import pytest

from blockgss.cacgmm import offline_em
from blockgss.diarization import ActivityMatrix, runs
from blockgss.dereverb import WpeConfig
from blockgss.online import (
    OnlineConfig,
    OnlineGSS,
    UtteranceTracker,
    active_set,
    iter_blocks,
    run_online,
)
from blockgss.stft import SpectralBlock, StftConfig
from conftest import random_activities, random_complex

# 20 ms frames so that the 0.2 s admission rule spans 10 frames
STFT = StftConfig(sample_rate_hz=100, window_len_samples=8, hop_samples=2)
F = STFT.num_freqs
NO_WPE = WpeConfig(taps=0)


def engine(L=10, C=10, M=2, **kw):
    return OnlineGSS(OnlineConfig(block_len_frames=L, context_len_frames=C, wpe=NO_WPE, **kw),
                     STFT, M)


def test_silent_block_is_skipped(rng):
    eng = engine()
    x = random_complex(rng, 10, F, 2)
    d = np.zeros((10, 3), dtype=np.uint8)
    d[:, 0] = 1
    assert eng.process_block(SpectralBlock(x, 0), d) == []
    assert len(eng.queue) == 10
    assert not eng.state.shape_matrices.any()
    assert eng.last_posteriors is None


def test_single_block_equals_one_em_iteration(rng):
    T = 30
    x = random_complex(rng, T, F, 3)
    d = random_activities(rng, T, 3)
    eng = engine(L=T, C=0, M=3)
    segs = eng.process_block(SpectralBlock(x, 0), d)
    g, _ = offline_em(x, d, iterations=1)
    np.testing.assert_allclose(eng.last_posteriors, g, atol=1e-12)
    n_runs = sum(len(runs(d[:, k])) for k in range(1, 3))
    assert len(segs) == n_runs


def test_single_speaker_one_segment(rng):
    x = random_complex(rng, 10, F, 2)
    d = np.ones((10, 2), dtype=np.uint8)
    d[:3, 1] = 0
    segs = engine(C=0).process_block(SpectralBlock(x, 0), d)
    assert len(segs) == 1
    s = segs[0]
    assert (s.start_frame, s.end_frame, s.utterance_start) == (3, 9, 3)
    assert s.spectra.shape == (7, F) and not s.finalized


def test_run_online_concatenates_blocks(rng):
    T = 57
    x = random_complex(rng, T, F, 2)
    d = random_activities(rng, T, 3, min_run=4)
    acts = ActivityMatrix(d, ["<noise>", "a", "b"])
    _, utts = run_online(iter_blocks(x, 8), acts, OnlineConfig(
        block_len_frames=8, context_len_frames=5, wpe=NO_WPE), STFT, 2)
    expected = sorted((k, s, e) for k in (1, 2) for s, e in runs(d[:, k]))
    got = sorted((u.speaker, u.start_frame, u.end_frame) for u in utts)
    assert got == expected
    for u in utts:
        assert u.spectra.shape == (u.num_frames, F)
        assert u.references.shape == (u.num_frames,)
        assert u.label == acts.labels[u.speaker]


def test_emission_happens_when_utterance_closes(rng):
    x = random_complex(rng, 30, F, 2)
    d = np.ones((30, 2), dtype=np.uint8)
    d[12:, 1] = 0
    acts = ActivityMatrix(d, ["<noise>", "a"])
    seen = []
    blocks = list(iter_blocks(x, 10))
    consumed = []

    def tracking_blocks():
        for b in blocks:
            consumed.append(b.start_frame_index)
            yield b

    run_online(tracking_blocks(), acts, OnlineConfig(block_len_frames=10, context_len_frames=0,
                                                     wpe=NO_WPE), STFT, 2,
               lambda u: seen.append((u.end_frame, list(consumed))))
    # frames 0-11 end inside the second block; emitted before the third is read
    assert seen == [(11, [0, 10])]


def test_short_new_source_is_reinitialised(rng):
    eng = engine(L=20, C=20)
    x = random_complex(rng, 60, F, 2)
    d = np.ones((60, 2), dtype=np.uint8)
    d[:, 1] = 0
    d[15:20, 1] = 1  # 0.1 s in block 0: admitted but pending
    d[25:40, 1] = 1  # long appearance in block 1
    eng.process_block(SpectralBlock(x[:20], 0), d[:20])
    assert eng.registry.admitted[1] and eng.registry.pending_reinit[1]
    eng.process_block(SpectralBlock(x[20:40], 20), d[20:40])
    assert eng.registry.admission_duration_sec[1] == pytest.approx(15 * STFT.frame_sec)
    assert not eng.registry.pending_reinit[1]
    assert eng.registry.first_seen_block[1] == 0


def test_strategies_differ(rng):
    x = random_complex(rng, 40, F, 2)
    d = np.ones((40, 2), dtype=np.uint8)
    shapes = {}
    for strategy in ("decay", "accumulation"):
        eng = engine(strategy=strategy)
        for b in iter_blocks(x, 10):
            eng.process_block(b, d[b.start_frame_index:b.stop_frame_index])
        shapes[strategy] = eng.state.shape_matrices
        np.testing.assert_allclose(np.trace(shapes[strategy], axis1=-2, axis2=-1).real, 2.0)
    assert not np.allclose(shapes["decay"], shapes["accumulation"])


def test_input_validation(rng):
    eng = engine()
    x = random_complex(rng, 10, F, 2)
    d = np.ones((10, 2), dtype=np.uint8)
    with pytest.raises(ValueError, match="exceeds"):
        eng.process_block(SpectralBlock(random_complex(rng, 11, F, 2), 0), np.ones((11, 2)))
    with pytest.raises(ValueError, match="expected block"):
        eng.process_block(SpectralBlock(x, 5), d)
    bad = d.copy()
    bad[0, 0] = 0
    with pytest.raises(ValueError, match="noise"):
        eng.process_block(SpectralBlock(x, 0), bad)
    with pytest.raises(ValueError, match="rows"):
        eng.process_block(SpectralBlock(x, 0), d[:5])
    with pytest.raises(ValueError, match="shape"):
        eng.process_block(SpectralBlock(random_complex(rng, 10, F, 3), 0), d)
    eng.process_block(SpectralBlock(x, 0), np.ones((10, 3), dtype=np.uint8))
    with pytest.raises(ValueError, match="shrank"):
        eng.process_block(SpectralBlock(x, 10), d)


@pytest.mark.parametrize("kwargs", [{"block_len_frames": 0}, {"context_len_frames": -1},
                                    {"strategy": "median"}, {"eta": 1.0}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        OnlineConfig(**kwargs)


def test_tracker_spans_blocks():
    tr = UtteranceTracker()
    a = np.array([[1, 0], [1, 1], [1, 1]])
    b = np.array([[1, 1], [1, 0], [1, 1]])
    first = tr.update(a, 0)
    assert first == [(0, 1, 1, 1, 2, False)]
    second = tr.update(b, 3)
    assert second == [(0, 1, 1, 3, 3, True), (1, 1, 5, 5, 5, False)]
    assert tr.finish(6) == [1]
    assert tr.closed == [(0, 1, 1, 3), (1, 1, 5, 5)]


def test_active_set_contains_noise():
    assert active_set(np.array([[1, 0, 1], [1, 0, 0]])) == {0, 2}
    assert active_set(np.zeros((2, 2))) == {0}
