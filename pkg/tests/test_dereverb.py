import numpy as np
import pytest

from blockgss.dereverb import POWER_FLOOR, WpeConfig, wpe_init, wpe_process_block
from blockgss.stft import SpectralBlock
from conftest import random_complex


def reference_wpe(frames, cfg: WpeConfig):
    """Frame-by-frame recursive WPE with the textbook matrix updates."""
    T, F, M = frames.shape
    D = M * cfg.taps
    h = cfg.taps + cfg.delay - 1
    P = np.tile(np.eye(D, dtype=complex), (F, 1, 1))
    G = np.zeros((F, D, M), dtype=complex)
    out = frames.copy()
    for t in range(h, T):
        for f in range(F):
            xt = np.concatenate([frames[t - cfg.delay - k, f] for k in range(cfg.taps)])
            x = frames[t, f]
            e = x - G[f].conj().T @ xt
            out[t, f] = e
            if not np.any(xt):
                continue
            power = max(np.mean(np.abs(x) ** 2), POWER_FLOOR)
            k = P[f] @ xt / (cfg.decay * power + np.real(xt.conj() @ P[f] @ xt))
            Pn = (P[f] - np.outer(k, xt.conj() @ P[f])) / cfg.decay
            P[f] = 0.5 * (Pn + Pn.conj().T)
            G[f] = G[f] + np.outer(k, e.conj())
    return out, P, G


def test_init_state_shapes():
    state = wpe_init(WpeConfig(), 513, 4)
    assert state.inv_cov.shape == (513, 8, 8)
    assert state.filters.shape == (513, 8, 4)
    np.testing.assert_array_equal(state.inv_cov, np.tile(np.eye(8), (513, 1, 1)))
    assert not state.filters.any()
    assert wpe_init(WpeConfig(taps=0), 3, 2).passthrough


@pytest.mark.parametrize("cfg", [WpeConfig(), WpeConfig(taps=3, delay=1, decay=0.95),
                                 WpeConfig(taps=1, delay=3, decay=1.0)])
def test_matches_reference_recursion(rng, cfg):
    x = random_complex(rng, 40, 5, 3)
    x[10:13, 2] = 0  # exercise the zero-history skip
    state = wpe_init(cfg, 5, 3)
    y = wpe_process_block(state, SpectralBlock(x, 0)).frames
    ref, P, G = reference_wpe(x, cfg)
    np.testing.assert_allclose(y, ref, atol=1e-10)
    np.testing.assert_allclose(state.inv_cov, P, atol=1e-10)
    np.testing.assert_allclose(state.filters, G, atol=1e-10)


def test_block_split_invariance(rng):
    x = random_complex(rng, 37, 4, 2)
    whole = wpe_process_block(wpe_init(WpeConfig(), 4, 2), SpectralBlock(x, 0)).frames
    state = wpe_init(WpeConfig(), 4, 2)
    parts = [wpe_process_block(state, SpectralBlock(x[a:a + n], a)).frames
             for a, n in ((0, 1), (1, 2), (3, 10), (13, 24))]
    np.testing.assert_allclose(np.concatenate(parts), whole, atol=1e-12)
    assert len(state.history) <= state.config.taps + state.config.delay - 1


def test_first_frames_pass_through(rng):
    x = random_complex(rng, 5, 3, 2)
    y = wpe_process_block(wpe_init(WpeConfig(), 3, 2), SpectralBlock(x, 0)).frames
    np.testing.assert_array_equal(y[:3], x[:3])


def test_taps_zero_is_identity(rng):
    x = random_complex(rng, 12, 3, 2)
    state = wpe_init(WpeConfig(taps=0), 3, 2)
    y = wpe_process_block(state, SpectralBlock(x, 5))
    assert y.frames is x
    assert y.start_frame_index == 5


def test_inverse_correlation_stays_hermitian(rng):
    state = wpe_init(WpeConfig(), 6, 4)
    wpe_process_block(state, SpectralBlock(random_complex(rng, 200, 6, 4), 0))
    P = state.inv_cov
    np.testing.assert_array_equal(P, np.conj(np.swapaxes(P, -1, -2)))


def test_reduces_late_tail_energy(rng):
    """Echoes of one source at +delay frames are partly predicted away."""
    T, F, M = 400, 4, 2
    direct = random_complex(rng, T, F, 1) * random_complex(rng, 1, F, M)
    x = direct.copy()
    for k, a in enumerate((0.7, 0.5)):
        x[2 + k:] += a * direct[:T - 2 - k] * rng.uniform(0.5, 1, (1, 1, M))
    y = wpe_process_block(wpe_init(WpeConfig(), F, M), SpectralBlock(x, 0)).frames
    late = slice(T // 2, T)
    tail_in = np.sum(np.abs(x[late] - direct[late]) ** 2)
    tail_out = np.sum(np.abs(y[late] - direct[late]) ** 2)
    assert tail_out < 0.75 * tail_in


def test_shape_mismatch_rejected(rng):
    state = wpe_init(WpeConfig(), 4, 2)
    with pytest.raises(ValueError):
        wpe_process_block(state, SpectralBlock(random_complex(rng, 3, 4, 3), 0))


@pytest.mark.parametrize("kwargs", [{"taps": -1}, {"delay": 0}, {"decay": 0.0},
                                    {"decay": 1.5}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        WpeConfig(**kwargs)
