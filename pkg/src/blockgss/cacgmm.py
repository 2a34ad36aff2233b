"""Guided complex angular central Gaussian mixture model (cACGMM).

Shape conventions (time, frequency, ...):
    features / x_hat: (T, F, M)
    activities d:     (T, K)   binary, column 0 is the always-on noise source
    gammas:           (T, F, K)
    mixture weights:  (F, K)
    shape matrices:   (F, K, M, M)

Source index 0 is noise; speakers start at index 1.
"""

from dataclasses import dataclass
from math import lgamma, log, pi

import numpy as np

SHAPE_EPS = 1e-6


@dataclass
class CacgmmState:
    mixture_weights: np.ndarray  # F x K
    shape_matrices: np.ndarray  # F x K x M x M
    posterior_accum: np.ndarray  # F x K

    @classmethod
    def empty(cls, num_freqs, num_sources, num_channels):
        return cls(
            np.zeros((num_freqs, num_sources)),
            np.zeros((num_freqs, num_sources, num_channels, num_channels), dtype=complex),
            np.zeros((num_freqs, num_sources)),
        )

    @property
    def num_sources(self) -> int:
        return self.mixture_weights.shape[1]

    @property
    def num_channels(self) -> int:
        return self.shape_matrices.shape[-1]

    def grow(self, num_sources: int) -> None:
        """Append zero-initialised slots up to ``num_sources`` sources."""
        extra = num_sources - self.num_sources
        if extra <= 0:
            return
        F, M = self.mixture_weights.shape[0], self.num_channels
        self.mixture_weights = np.concatenate(
            [self.mixture_weights, np.zeros((F, extra))], axis=1)
        self.shape_matrices = np.concatenate(
            [self.shape_matrices, np.zeros((F, extra, M, M), dtype=complex)], axis=1)
        self.posterior_accum = np.concatenate(
            [self.posterior_accum, np.zeros((F, extra))], axis=1)

    def copy(self):
        return CacgmmState(self.mixture_weights.copy(), self.shape_matrices.copy(),
                           self.posterior_accum.copy())


def normalize_features(x: np.ndarray) -> np.ndarray:
    """Unit-normalise every (t, f) observation vector.

    Exactly-zero vectors are mapped to the first canonical basis vector.
    """
    x = np.asarray(x)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    zero = norm[..., 0] == 0
    out = x / np.where(norm == 0, 1.0, norm)
    if zero.any():
        out = out.astype(complex, copy=False)
        out[zero] = 0
        out[zero, 0] = 1
    return out


def hermitize(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + np.conj(np.swapaxes(A, -1, -2)))


def regularize(B: np.ndarray, eps: float = SHAPE_EPS) -> np.ndarray:
    """Diagonal loading ``eps * trace(B) / M`` (``eps`` when the trace is zero)."""
    M = B.shape[-1]
    tr = np.trace(B, axis1=-2, axis2=-1).real
    load = np.where(tr > 0, eps * tr / M, eps)
    return B + load[..., None, None] * np.eye(M)


def normalize_trace(B: np.ndarray) -> np.ndarray:
    """Rescale every matrix with positive trace to trace M."""
    M = B.shape[-1]
    tr = np.trace(B, axis1=-2, axis2=-1).real
    scale = np.where(tr > 0, M / np.where(tr > 0, tr, 1.0), 1.0)
    return B * scale[..., None, None]


def _cholesky_factors(B, eps=SHAPE_EPS):
    """Return (log det B_reg, B_reg^-1) via a Cholesky factorisation."""
    try:
        L = np.linalg.cholesky(regularize(hermitize(B), eps))
    except np.linalg.LinAlgError as err:
        raise ValueError("shape matrix is singular beyond regularisation") from err
    logdet = 2 * np.sum(np.log(np.abs(np.diagonal(L, axis1=-2, axis2=-1))), axis=-1)
    Linv = np.linalg.inv(L)
    return logdet, np.matmul(np.conj(np.swapaxes(Linv, -1, -2)), Linv)


class Prepared:
    """Unit-normalised features plus their real outer-product expansion.

    ``phi[f, :, t]`` stacks |x_i|^2, Re(x_i x_j^*) and Im(x_i x_j^*) for
    i < j, so Hermitian quadratic forms and weighted scatter matrices become
    real matrix products.
    """

    def __init__(self, features, normalized=True, workspace=None):
        """``workspace`` is an optional dict of scratch buffers reused across
        calls; a Prepared built from it is only valid until the next one."""
        x = np.asarray(features)
        T, F, M = x.shape
        self.shape = (T, F, M)
        iu, ju = np.triu_indices(M, 1)
        self._iu, self._ju = iu, ju
        n = iu.size
        x_f = _scratch(workspace, "x", (F, M, T), complex)
        np.copyto(x_f, x.transpose(1, 2, 0))
        if not normalized:
            norm = np.sqrt(np.sum(x_f.real ** 2 + x_f.imag ** 2, axis=1, keepdims=True))
            zero = norm == 0
            x_f /= np.where(zero, 1.0, norm)
            if zero.any():
                ff, _, tt = np.nonzero(zero)
                x_f[ff, :, tt] = 0
                x_f[ff, 0, tt] = 1
        phi = _scratch(workspace, "phi", (F, M + 2 * n, T), float)
        np.multiply(x_f.real, x_f.real, out=phi[:, :M])
        phi[:, :M] += x_f.imag ** 2
        for c, (i, j) in enumerate(zip(iu, ju)):
            cross = x_f[:, i] * np.conj(x_f[:, j])
            phi[:, M + c] = cross.real
            phi[:, M + n + c] = cross.imag
        self.phi = phi

    def quadratic(self, Binv):
        """x^H Binv x for Binv (F, K, M, M) -> (F, K, T)."""
        M = self.shape[2]
        diag = np.diagonal(Binv, axis1=-2, axis2=-1).real
        off = Binv[..., self._iu, self._ju]
        coef = np.concatenate([diag, 2 * off.real, 2 * off.imag], axis=-1)  # F x K x D
        q = np.matmul(coef, self.phi)
        return np.maximum(q, np.finfo(float).tiny * M, out=q)

    def scatter(self, weights):
        """sum_t w[f, k, t] x x^H -> (F, K, M, M) for weights (F, K, T)."""
        M = self.shape[2]
        s = np.matmul(weights, np.swapaxes(self.phi, -1, -2))  # F x K x D
        n_off = self._iu.size
        out = np.zeros(s.shape[:2] + (M, M), dtype=complex)
        idx = np.arange(M)
        out[..., idx, idx] = s[..., :M]
        upper = s[..., M:M + n_off] + 1j * s[..., M + n_off:]
        out[..., self._iu, self._ju] = upper
        out[..., self._ju, self._iu] = np.conj(upper)
        return out


def _scratch(workspace, key, shape, dtype):
    size = int(np.prod(shape))
    if workspace is None:
        return np.empty(shape, dtype=dtype)
    buf = workspace.get(key)
    if buf is None or buf.size < size or buf.dtype != dtype:
        buf = np.empty(max(size, int(1.25 * (0 if buf is None else buf.size))), dtype=dtype)
        workspace[key] = buf
    return buf[:size].reshape(shape)


def _prepared(features, normalized=True):
    return features if isinstance(features, Prepared) else Prepared(features, normalized)


def _log_norm_const(M):
    return lgamma(M) - log(2) - M * log(pi)


def _log_acg_fkt(prep: Prepared, B, eps):
    """Log densities (F, K, T) and the quadratic forms they were built from."""
    M = prep.shape[2]
    logdet, Binv = _cholesky_factors(B, eps)
    q = prep.quadratic(Binv)
    out = np.log(q)
    out *= -M
    out += (_log_norm_const(M) - logdet)[..., None]
    return out, q


def log_acg(x_hat, B: np.ndarray, eps: float = SHAPE_EPS) -> np.ndarray:
    """Log complex ACG density of every x_hat under every B.

    Arguments:
        x_hat: (T, F, M) unit vectors (or a :class:`Prepared`)
        B: (F, K, M, M)
    Return:
        (T, F, K) log densities
    """
    return _log_acg_fkt(_prepared(x_hat), B, eps)[0].transpose(2, 0, 1)


def _as_index(active_set, K):
    idx = np.array(sorted(active_set), dtype=int)
    if idx.size == 0:
        raise ValueError("active set is empty")
    if idx.min() < 0 or idx.max() >= K:
        raise ValueError(f"active set {sorted(active_set)} out of range for K={K}")
    return idx


def init_posteriors_from_activities(activities: np.ndarray, num_freqs: int = 1) -> np.ndarray:
    """Uniform posteriors over the sources active in each frame."""
    d = np.asarray(activities, dtype=float)
    counts = d.sum(axis=1)
    if np.any(counts < 1):
        bad = int(np.flatnonzero(counts < 1)[0])
        raise ValueError(f"frame {bad} has no active source (noise row must be all ones)")
    g = d / counts[:, None]
    return np.repeat(g[:, None, :], num_freqs, axis=1)


def _guided_logits(prep, d, alpha, B, idx, eps):
    """Return (log alpha + log d + log A, quadratic forms), both (F, K', T)."""
    logits, q = _log_acg_fkt(prep, B[:, idx], eps)
    with np.errstate(divide="ignore"):
        logits += np.log(alpha[:, idx])[..., None]
        logits += np.log(d[:, idx].T.astype(float))[None]
    return logits, q


def _softmax_sources(logits, d, idx):
    """Normalise (F, K', T) logits over sources in place.

    Any (f, t) where every active source has zero density falls back to
    uniform over the sources active in that frame.
    """
    peak = np.max(logits, axis=1, keepdims=True)
    finite = np.isfinite(peak)
    logits -= np.where(finite, peak, 0.0)
    e = np.exp(logits, out=logits)
    total = e.sum(axis=1, keepdims=True)
    degenerate = ~finite[:, 0] | (total[:, 0] == 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        e /= total
    if degenerate.any():
        fallback = d[:, idx].astype(float)
        fallback_sum = fallback.sum(axis=1, keepdims=True)
        fallback = np.divide(fallback, fallback_sum, out=np.zeros_like(fallback),
                             where=fallback_sum > 0)
        ff, tt = np.nonzero(degenerate)
        e[ff, :, tt] = fallback[tt]
    return e


def _log_mixture(logits):
    """log sum_k exp over the source axis of (F, K', T) logits."""
    peak = np.max(logits, axis=1, keepdims=True)
    safe = np.where(np.isfinite(peak), peak, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.sum(np.exp(logits - safe), axis=1)) + safe[:, 0]


def _to_gammas(post, idx, K):
    """(F, K', T) posteriors over the active set -> (T, F, K)."""
    F, _, T = post.shape
    gam = np.zeros((T, F, K))
    gam[:, :, idx] = post.transpose(2, 0, 1)
    return gam


def e_step_guided(features, activities, state: CacgmmState, active_set,
                  normalized=True, eps=SHAPE_EPS) -> np.ndarray:
    """Guided E-step: posteriors of inactive sources are forced to zero.

    Normalisation runs over ``active_set``; any (t, f) where every active
    source has zero density falls back to uniform over its active sources.
    """
    prep = _prepared(features, normalized)
    d = np.asarray(activities)
    K = d.shape[1]
    idx = _as_index(active_set, K)
    logits, _ = _guided_logits(prep, d, state.mixture_weights, state.shape_matrices, idx, eps)
    return _to_gammas(_softmax_sources(logits, d, idx), idx, K)


def m_step_alpha(gammas: np.ndarray, active_set) -> np.ndarray:
    """Time-averaged posteriors; zero outside ``active_set``."""
    T, F, K = gammas.shape
    if T < 1:
        raise ValueError("need at least one frame")
    idx = _as_index(active_set, K)
    alpha = np.zeros((F, K))
    alpha[:, idx] = gammas[:, :, idx].mean(axis=0)
    return alpha


def _shape_from_weights(prep: Prepared, g, q=None):
    """Shape estimate from (F, K', T) posteriors, optionally divided by the
    quadratic forms ``q`` under the current shapes.

    Returns (B (F, K', M, M), mass (F, K')).
    """
    M = prep.shape[2]
    mass = g.sum(axis=-1)
    if q is not None:
        g = g / q
    safe = np.where(mass > 0, mass, 1.0)
    return hermitize(M * prep.scatter(g) / safe[..., None, None]), mass


def _shape_estimate(prep: Prepared, gammas, B_current, weighted, eps=SHAPE_EPS):
    """Core of the weighted / unweighted shape updates.

    gammas (T, F, K'), B_current (F, K', M, M) or None.
    """
    g = np.ascontiguousarray(gammas.transpose(1, 2, 0))  # F x K' x T
    q = None
    if weighted:
        _, Binv = _cholesky_factors(B_current, eps)
        q = prep.quadratic(Binv)
    return _shape_from_weights(prep, g, q)


def _keep_unsupported(B, idx, est, mass):
    """Write ``est`` into ``B[:, idx]`` wherever the posterior mass is positive."""
    ok = mass > 0
    sub = B[:, idx]
    sub[ok] = est[ok]
    B[:, idx] = sub
    return ok


def m_step_shape_weighted(features, gammas, state: CacgmmState, active_set,
                          weighted=True, normalized=True, eps=SHAPE_EPS):
    """Shape-matrix M-step over ``active_set``.

    ``weighted=False`` is the first-iteration variant without the
    quadratic-form denominator. Returns ``(B, flags)`` where ``flags[f, k]``
    marks zero posterior mass; those matrices are left unchanged.
    """
    prep = _prepared(features, normalized)
    K = gammas.shape[-1]
    idx = _as_index(active_set, K)
    B = state.shape_matrices.copy()
    current = B[:, idx] if weighted else None
    est, mass = _shape_estimate(prep, gammas[:, :, idx], current, weighted, eps)
    flags = np.zeros(B.shape[:2], dtype=bool)
    flags[:, idx] = ~_keep_unsupported(B, idx, est, mass)
    return B, flags


def compute_block_shape(features, gammas, state: CacgmmState, source: int,
                        is_new: bool, normalized=True, eps=SHAPE_EPS) -> np.ndarray:
    """Block-plus-context shape estimate for one source, (F, M, M).

    Existing sources are weighted by their current shape inverse, new ones
    use the plain weighted scatter. Frequencies with zero posterior mass
    return the current matrix unchanged.
    """
    if not np.any(gammas[:, :, source] > 0):
        raise ValueError(f"source {source} has no posterior mass in this window")
    return block_shapes(features, gammas, state, [source], [is_new], normalized, eps)[:, 0]


def block_shapes(features, gammas, state: CacgmmState, sources, is_new,
                 normalized=True, eps=SHAPE_EPS):
    """Vectorised :func:`compute_block_shape` for several sources.

    ``is_new`` is a boolean per entry of ``sources``. Returns (F, S, M, M).
    """
    prep = _prepared(features, normalized)
    sources = np.asarray(sources, dtype=int)
    is_new = np.asarray(is_new, dtype=bool)
    _, F, M = prep.shape
    out = np.empty((F, sources.size, M, M), dtype=complex)
    for flag in (True, False):
        sel = np.flatnonzero(is_new == flag)
        if sel.size == 0:
            continue
        ks = sources[sel]
        current = state.shape_matrices[:, ks]
        est, mass = _shape_estimate(prep, gammas[:, :, ks],
                                    None if flag else current, not flag, eps)
        out[:, sel] = np.where((mass > 0)[..., None, None], est, current)
    return out


def update_shape_accumulation(state: CacgmmState, block_gammas, B_plus, sources) -> np.ndarray:
    """Posterior-mass weighted blend toward the block estimate, then accumulate.

    ``block_gammas`` covers the block frames only (no context). ``B_plus`` is
    (F, len(sources), M, M). Returns a (F, len(sources)) flag array marking
    entries where nothing could be updated (zero total mass).
    """
    sources = np.asarray(sources, dtype=int)
    block_mass = block_gammas[:, :, sources].sum(axis=0)  # F x S
    acc = state.posterior_accum[:, sources]
    total = acc + block_mass
    flags = total <= 0
    safe = np.where(flags, 1.0, total)
    w_old = np.where(flags, 1.0, acc / safe)[..., None, None]
    w_new = np.where(flags, 0.0, block_mass / safe)[..., None, None]
    B_old = state.shape_matrices[:, sources]
    state.shape_matrices[:, sources] = w_old * B_old + w_new * B_plus
    state.posterior_accum[:, sources] = acc + np.where(flags, 0.0, block_mass)
    return flags


def update_shape_decay(state: CacgmmState, B_plus, eta: float, sources) -> None:
    """Exponential forgetting: B <- eta * B + B_plus."""
    if not 0 <= eta < 1:
        raise ValueError("eta must lie in [0, 1)")
    sources = np.asarray(sources, dtype=int)
    state.shape_matrices[:, sources] = eta * state.shape_matrices[:, sources] + B_plus


def log_likelihood(features, activities, state: CacgmmState, active_set,
                   normalized=True, eps=SHAPE_EPS) -> float:
    """Mean per-(t, f) log-likelihood of the activity-guided mixture.

    With every activity equal to one this is the plain mixture likelihood.
    """
    prep = _prepared(features, normalized)
    d = np.asarray(activities)
    idx = _as_index(active_set, d.shape[1])
    logits, _ = _guided_logits(prep, d, state.mixture_weights, state.shape_matrices, idx, eps)
    return float(np.mean(_log_mixture(logits)))


def offline_em(features, activities, iterations: int = 20, normalize_shapes=True,
               normalized=False, eps=SHAPE_EPS, callback=None, workspace=None):
    """Utterance-wise guided EM.

    The first iteration starts from activity-uniform posteriors and the
    unweighted shape update; later iterations use the weighted update.
    ``callback(iteration, state, prepared)`` runs after each E-step.
    ``workspace`` is passed on to :class:`Prepared`.

    Return:
        (gammas (T, F, K), CacgmmState)
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    prep = features if isinstance(features, Prepared) else Prepared(
        features, normalized, workspace)
    d = np.asarray(activities)
    T, F, M = prep.shape
    K = d.shape[1]
    active = set(np.flatnonzero(d.sum(axis=0) > 0).tolist())
    idx = _as_index(active, K)
    state = CacgmmState.empty(F, K, M)
    post = np.ascontiguousarray(
        init_posteriors_from_activities(d, F)[:, :, idx].transpose(1, 2, 0))  # F x K' x T
    q = None  # quadratic forms under the current shapes, reused as M-step weights
    for it in range(iterations):
        state.mixture_weights = np.zeros((F, K))
        state.mixture_weights[:, idx] = post.mean(axis=-1)
        est, mass = _shape_from_weights(prep, post, q)
        B = state.shape_matrices.copy()
        _keep_unsupported(B, idx, est, mass)
        state.shape_matrices = normalize_trace(B) if normalize_shapes else B
        logits, q = _guided_logits(prep, d, state.mixture_weights, state.shape_matrices,
                                   idx, eps)
        post = _softmax_sources(logits, d, idx)
        if callback is not None:
            callback(it, state, prep)
    return _to_gammas(post, idx, K), state
