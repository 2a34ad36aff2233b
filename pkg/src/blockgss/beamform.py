"""Mask-based MVDR beamforming with blind analytic normalisation (BAN).

    x:        (T, F, M) raw (not unit-normalised) STFT observations
    gammas:   (T, F, K) posteriors
    weights:  (F, M)
"""

from dataclasses import dataclass

import numpy as np

from .cacgmm import hermitize

NOISE_EPS = 1e-6
TRACE_FLOOR = 1e-12


@dataclass
class SpatialCovariances:
    speech: np.ndarray  # F x M x M
    noise: np.ndarray  # F x M x M


@dataclass
class BeamformerWeights:
    weights: np.ndarray  # F x M
    reference: int
    flags: np.ndarray | None = None  # per-frequency degenerate marks


def full_covariance(x) -> np.ndarray:
    """Unmasked (F, M, M) covariance of (T, F, M) features."""
    x = np.asarray(x)
    T = x.shape[0]
    if T < 1:
        raise ValueError("need at least one frame")
    x_f = x.transpose(1, 0, 2)  # F x T x M
    return np.matmul(x_f.swapaxes(-1, -2), x_f.conj()) / T


def spatial_covariances(x, gammas, target: int, full=None) -> SpatialCovariances:
    """Target-mask and complementary-mask weighted covariances.

    ``full`` may carry a precomputed :func:`full_covariance` of ``x``.
    """
    if target < 1:
        raise ValueError("target must be a speaker (index >= 1), not noise")
    x = np.asarray(x)
    T = x.shape[0]
    if T < 1:
        raise ValueError("need at least one frame")
    if full is None:
        full = full_covariance(x)
    x_f = x.transpose(1, 0, 2)  # F x T x M
    mask = gammas[:, :, target].T  # F x T
    speech = np.matmul((mask[..., None] * x_f).swapaxes(-1, -2), x_f.conj()) / T
    return SpatialCovariances(hermitize(speech), hermitize(full - speech))


def _regularized_noise(noise, eps=NOISE_EPS):
    M = noise.shape[-1]
    tr = np.trace(noise, axis1=-2, axis2=-1).real
    load = np.where(tr > 0, eps * tr / M, eps)
    return noise + load[:, None, None] * np.eye(M)


def _mvdr_all_references(cov: SpatialCovariances, eps=NOISE_EPS):
    """Columns of the returned (F, M, M) array are the weights for each reference."""
    numer = np.linalg.solve(_regularized_noise(cov.noise, eps), cov.speech)
    tr = np.trace(numer, axis1=-2, axis2=-1)
    bad = np.abs(tr) < TRACE_FLOOR
    safe = np.where(bad, 1.0, tr)
    W = numer / safe[:, None, None]
    W[bad] = 0
    return W, bad


def mvdr_weights(cov: SpatialCovariances, reference: int, eps=NOISE_EPS):
    """Souden MVDR weights for one reference channel.

    Returns ``(weights (F, M), flags (F,))``; flagged frequencies had a
    vanishing trace term and are zeroed.
    """
    W, bad = _mvdr_all_references(cov, eps)
    return W[:, :, reference], bad


def blind_analytic_normalization(weights, cov: SpatialCovariances) -> np.ndarray:
    M = weights.shape[-1]
    Rn = cov.noise
    Rw = np.einsum("fij,fj->fi", Rn, weights)
    nominator = np.einsum("fi,fi->f", Rw.conj(), Rw).real  # w^H Rn Rn w
    denominator = np.einsum("fi,fi->f", weights.conj(), Rw).real
    ok = (denominator > 0) & (nominator > 0)
    gain = np.ones(weights.shape[0])
    gain[ok] = np.sqrt(nominator[ok] / M) / denominator[ok]
    return gain[:, None] * weights


def _reference_scores(cov: SpatialCovariances, W):
    s = np.einsum("fim,fij,fjm->m", W.conj(), cov.speech, W).real
    n = np.einsum("fim,fij,fjm->m", W.conj(), cov.noise, W).real
    with np.errstate(divide="ignore", invalid="ignore"):
        return s / n


def select_reference(cov: SpatialCovariances, eps=NOISE_EPS, rtol=1e-9):
    """Channel maximising the output SNR of its candidate MVDR beamformer.

    Returns ``(channel, flag)``; ``flag`` is set when no score was finite,
    in which case channel 0 is returned. Near-ties go to the lowest index.
    """
    M = cov.speech.shape[-1]
    if M == 1:
        return 0, False
    W, _ = _mvdr_all_references(cov, eps)
    return _pick(_reference_scores(cov, W), rtol)


def _pick(scores, rtol):
    finite = np.isfinite(scores)
    if not finite.any():
        return 0, True
    best = scores[finite].max()
    tie = finite & (scores >= best - rtol * abs(best))
    return int(np.flatnonzero(tie)[0]), False


def apply(weights, x) -> np.ndarray:
    """z[t, f] = w_f^H x[t, f]."""
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[1:] != weights.shape:
        raise ValueError(f"weights {weights.shape} do not match features {x.shape}")
    return np.einsum("fm,tfm->tf", weights.conj(), x)


def beamformer(x, gammas, target: int, reference: int | None = None,
               eps=NOISE_EPS, full=None) -> BeamformerWeights:
    """Covariances, reference choice, MVDR and BAN for one target speaker."""
    cov = spatial_covariances(x, gammas, target, full)
    W, bad = _mvdr_all_references(cov, eps)
    if reference is None:
        M = W.shape[-1]
        reference = 0 if M == 1 else _pick(_reference_scores(cov, W), 1e-9)[0]
    w = blind_analytic_normalization(W[:, :, reference], cov)
    return BeamformerWeights(w, int(reference), bad)
