"""Frame-recursive (block-online) WPE dereverberation.

Recursive least squares over a stacked history of delayed frames, one
filter per frequency. Reference: nara_wpe's ``OnlineWPE`` formulation.
"""

from dataclasses import dataclass, field

import numba
import numpy as np

from .stft import SpectralBlock

POWER_FLOOR = 1e-10


@dataclass(frozen=True)
class WpeConfig:
    taps: int = 2
    delay: int = 2
    decay: float = 0.9
    init_scale: float = 1.0

    def __post_init__(self):
        if self.taps < 0:
            raise ValueError("taps must be >= 0")
        if self.delay < 1:
            raise ValueError("delay must be >= 1")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")

    @property
    def history_len(self) -> int:
        return self.taps + self.delay - 1 if self.taps else 0


@dataclass
class WpeState:
    config: WpeConfig
    num_freqs: int
    num_channels: int
    inv_cov: np.ndarray  # F x MK x MK
    filters: np.ndarray  # F x MK x M
    history: list = field(default_factory=list)  # oldest first, each F x M

    @property
    def passthrough(self) -> bool:
        return self.config.taps == 0


def wpe_init(config: WpeConfig, num_freqs: int, num_channels: int) -> WpeState:
    if num_freqs < 1 or num_channels < 1:
        raise ValueError("num_freqs and num_channels must be >= 1")
    D = num_channels * config.taps
    inv_cov = np.tile(config.init_scale * np.eye(D, dtype=complex), (num_freqs, 1, 1))
    filters = np.zeros((num_freqs, D, num_channels), dtype=complex)
    return WpeState(config, num_freqs, num_channels, inv_cov, filters)


def wpe_process_block(state: WpeState, block: SpectralBlock) -> SpectralBlock:
    """Dereverberate ``block`` frame by frame, updating ``state`` in place.

    Frames arriving before ``taps + delay - 1`` frames of history exist
    are returned unchanged. A frequency whose stacked history is exactly
    zero carries no information and leaves its filter statistics untouched.
    """
    frames = block.frames
    if frames.ndim != 3 or frames.shape[1:] != (state.num_freqs, state.num_channels):
        raise ValueError(
            f"block of shape {frames.shape} does not match state "
            f"(F={state.num_freqs}, M={state.num_channels})"
        )
    if state.passthrough:
        return SpectralBlock(frames, block.start_frame_index)

    cfg = state.config
    h = cfg.history_len
    frames = np.ascontiguousarray(frames, dtype=complex)
    if state.history:
        buf = np.concatenate([np.stack(state.history), frames])
    else:
        buf = frames
    out = _rls_frames(buf, len(state.history), h, cfg.taps, cfg.delay, cfg.decay,
                      POWER_FLOOR, state.inv_cov, state.filters)
    state.history = list(buf[-h:]) if h else []
    return SpectralBlock(out, block.start_frame_index)


@numba.njit(cache=True)
def _rls_frames(buf, n_hist, h, taps, delay, decay, floor, P, G):
    """Kalman-gain RLS over frames ``buf[n_hist:]``; ``buf[:n_hist]`` is history.

    Per frequency: e = x - G^H xt; k = P xt / (decay sigma^2 + xt^H P xt);
    P <- (P - k xt^H P) / decay, then averaged with its conjugate transpose;
    G <- G + k e^H.
    """
    N, F, M = buf.shape
    D = M * taps
    out = np.empty((N - n_hist, F, M), dtype=np.complex128)
    xt = np.empty(D, dtype=np.complex128)
    nom = np.empty(D, dtype=np.complex128)
    gain = np.empty(D, dtype=np.complex128)
    err = np.empty(M, dtype=np.complex128)
    for n in range(n_hist, N):
        if n < h:
            out[n - n_hist] = buf[n]
            continue
        for f in range(F):
            live = False
            for k in range(taps):
                for m in range(M):
                    v = buf[n - delay - k, f, m]
                    xt[k * M + m] = v
                    if v != 0:
                        live = True
            power = 0.0
            for m in range(M):
                v = buf[n, f, m]
                acc = v
                for i in range(D):
                    acc -= np.conj(G[f, i, m]) * xt[i]
                err[m] = acc
                out[n - n_hist, f, m] = acc
                power += v.real * v.real + v.imag * v.imag
            if not live:
                continue
            power = max(power / M, floor)
            den = decay * power
            for i in range(D):
                acc = 0j
                for j in range(D):
                    acc += P[f, i, j] * xt[j]
                nom[i] = acc
            for i in range(D):
                den += (np.conj(xt[i]) * nom[i]).real
            for i in range(D):
                gain[i] = nom[i] / den
            # P is Hermitian, so xt^H P == (P xt)^H; the rank-one update and
            # the symmetrisation are fused pairwise over the upper triangle
            for i in range(D):
                P[f, i, i] = (P[f, i, i] - gain[i] * np.conj(nom[i])).real / decay
                for j in range(i + 1, D):
                    upper = P[f, i, j] - gain[i] * np.conj(nom[j])
                    lower = P[f, j, i] - gain[j] * np.conj(nom[i])
                    v = 0.5 * (upper + np.conj(lower)) / decay
                    P[f, i, j] = v
                    P[f, j, i] = np.conj(v)
            for i in range(D):
                for m in range(M):
                    G[f, i, m] += gain[i] * np.conj(err[m])
    return out


def warm_up():
    """Compile the recursive kernel ahead of any timed run."""
    state = wpe_init(WpeConfig(), 1, 1)
    wpe_process_block(state, SpectralBlock(np.ones((4, 1, 1), dtype=complex), 0))
