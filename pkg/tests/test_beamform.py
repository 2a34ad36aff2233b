import numpy as np
import pytest

from blockgss import beamform
from blockgss.beamform import SpatialCovariances
from conftest import random_complex


def rank_one_scene(rng, F=4, M=4, power=2.0):
    h = random_complex(rng, F, M)
    n = random_complex(rng, F, M, 3 * M)
    speech = power * np.einsum("fi,fj->fij", h, h.conj())
    noise = n @ np.conj(np.swapaxes(n, -1, -2)) / (3 * M)
    return h, SpatialCovariances(speech, noise)


def test_souden_equals_classic_mvdr_for_rank_one(rng):
    h, cov = rank_one_scene(rng)
    ref = 2
    w, flags = beamform.mvdr_weights(cov, ref)
    assert not flags.any()
    noise = beamform._regularized_noise(cov.noise)
    for f in range(h.shape[0]):
        ninv_h = np.linalg.solve(noise[f], h[f])
        classic = ninv_h / (h[f].conj() @ ninv_h) * np.conj(h[f, ref])
        np.testing.assert_allclose(w[f], classic, rtol=1e-8)
        # distortionless toward the reference channel
        assert w[f].conj() @ h[f] == pytest.approx(h[f, ref], rel=1e-8)


def test_ban_gain_formula(rng):
    _, cov = rank_one_scene(rng)
    w, _ = beamform.mvdr_weights(cov, 0)
    out = beamform.blind_analytic_normalization(w, cov)
    M = w.shape[-1]
    for f in range(w.shape[0]):
        Rn = cov.noise[f]
        num = np.real(w[f].conj() @ Rn @ Rn @ w[f])
        den = np.real(w[f].conj() @ Rn @ w[f])
        np.testing.assert_allclose(out[f], np.sqrt(num / M) / den * w[f], rtol=1e-10)


def test_reference_selection_prefers_strong_channel(rng):
    F, M = 6, 4
    h = 0.2 * random_complex(rng, F, M)
    h[:, 3] *= 20  # channel 3 receives the target far louder
    speech = np.einsum("fi,fj->fij", h, h.conj())
    noise = np.tile(np.eye(M, dtype=complex), (F, 1, 1))
    ref, flag = beamform.select_reference(SpatialCovariances(speech, noise))
    assert (ref, flag) == (3, False)


def test_reference_flag_when_no_score(rng):
    F, M = 2, 3
    zero = np.zeros((F, M, M), dtype=complex)
    ref, flag = beamform.select_reference(SpatialCovariances(zero, zero))
    assert (ref, flag) == (0, True)
    w, bad = beamform.mvdr_weights(SpatialCovariances(zero, zero), 1)
    assert bad.all() and not w.any()


def test_spatial_covariances_definition(rng):
    T, F, M, K = 30, 3, 2, 3
    x = random_complex(rng, T, F, M)
    g = rng.random((T, F, K))
    g /= g.sum(axis=-1, keepdims=True)
    cov = beamform.spatial_covariances(x, g, 1)
    ref = np.einsum("tf,tfi,tfj->fij", g[..., 1], x, x.conj()) / T
    np.testing.assert_allclose(cov.speech, ref, atol=1e-12)
    full = beamform.full_covariance(x)
    np.testing.assert_allclose(cov.noise, full - ref, atol=1e-12)
    shared = beamform.spatial_covariances(x, g, 1, full=full)
    np.testing.assert_allclose(shared.speech, cov.speech)
    with pytest.raises(ValueError):
        beamform.spatial_covariances(x, g, 0)
    with pytest.raises(ValueError):
        beamform.full_covariance(x[:0])


def test_oracle_mask_beamformer_recovers_source(rng):
    """With ideal masks the beamformer passes the target and rejects the interferer."""
    T, F, M = 400, 5, 4
    h1, h2 = random_complex(rng, F, M), random_complex(rng, F, M)
    s1, s2 = random_complex(rng, T, F), random_complex(rng, T, F)
    s1[T // 2:] *= 0.05
    s2[:T // 2] *= 0.05
    x = s1[..., None] * h1 + s2[..., None] * h2 + 0.01 * random_complex(rng, T, F, M)
    g = np.zeros((T, F, 3))
    g[:T // 2, :, 1] = 1
    g[T // 2:, :, 2] = 1
    bf = beamform.beamformer(x, g, 1)
    z = beamform.apply(bf.weights, x)
    target = s1 * h1[:, bf.reference]
    # BAN rescales each frequency, so project per frequency
    gain = np.sum(target.conj() * z, axis=0) / np.sum(np.abs(target) ** 2, axis=0)
    err = z - gain * target
    assert np.sum(np.abs(err) ** 2) < 0.05 * np.sum(np.abs(z) ** 2)
    fixed = beamform.beamformer(x, g, 1, reference=2)
    assert fixed.reference == 2


def test_apply_shape_checks(rng):
    w = random_complex(rng, 3, 2)
    x = random_complex(rng, 5, 3, 2)
    np.testing.assert_allclose(beamform.apply(w, x)[1, 2], w[2].conj() @ x[1, 2])
    with pytest.raises(ValueError):
        beamform.apply(w, x[:, :2])
