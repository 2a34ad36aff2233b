"""Block-online guided source separation.

Each incoming block of ``L`` frames is dereverberated, concatenated with a
queue holding the ``C`` most recent frames (the pre-context), and used for
a single guided EM iteration over the sources active in block + context.
Every utterance overlapping the block is then beamformed and the part that
falls inside the block is emitted immediately.
"""

from dataclasses import dataclass, field

import numpy as np

from . import beamform
from .cacgmm import (
    SHAPE_EPS,
    CacgmmState,
    block_shapes,
    e_step_guided,
    init_posteriors_from_activities,
    m_step_alpha,
    Prepared,
    normalize_trace,
    update_shape_accumulation,
    update_shape_decay,
)
from .dereverb import WpeConfig, wpe_init, wpe_process_block
from .diarization import runs
from .stft import SpectralBlock, StftConfig

STRATEGIES = ("accumulation", "decay")


@dataclass(frozen=True)
class OnlineConfig:
    block_len_frames: int = 150
    context_len_frames: int = 150
    strategy: str = "decay"
    eta: float = 0.9
    min_new_source_sec: float = 0.2
    wpe: WpeConfig = field(default_factory=WpeConfig)
    reference: int | None = None  # fixed reference channel; None selects by SNR
    shape_eps: float = SHAPE_EPS

    def __post_init__(self):
        if self.block_len_frames < 1:
            raise ValueError("block_len_frames must be >= 1")
        if self.context_len_frames < 0:
            raise ValueError("context_len_frames must be >= 0")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if not 0 <= self.eta < 1:
            raise ValueError("eta must lie in [0, 1)")


class ContextQueue:
    """The most recent ``capacity`` dereverberated frames with their
    activities and posteriors."""

    def __init__(self, capacity, num_freqs, num_channels):
        self.capacity = capacity
        self.features = np.zeros((0, num_freqs, num_channels), dtype=complex)
        self.activities = np.zeros((0, 1), dtype=np.uint8)
        self.posteriors = np.zeros((0, num_freqs, 1))
        self.global_offset = 0

    def __len__(self):
        return self.features.shape[0]

    def widen(self, num_sources):
        extra = num_sources - self.activities.shape[1]
        if extra > 0:
            n = len(self)
            self.activities = np.concatenate(
                [self.activities, np.zeros((n, extra), dtype=np.uint8)], axis=1)
            self.posteriors = np.concatenate(
                [self.posteriors, np.zeros((n, self.posteriors.shape[1], extra))], axis=2)

    def replace(self, features, activities, posteriors, stop_frame):
        """Keep the last ``capacity`` frames of the given window ending at ``stop_frame``."""
        keep = min(self.capacity, features.shape[0])
        start = features.shape[0] - keep
        self.features = features[start:].copy()
        self.activities = activities[start:].copy()
        self.posteriors = posteriors[start:].copy()
        self.global_offset = stop_frame - keep


@dataclass
class SourceRegistry:
    labels: list = field(default_factory=lambda: ["<noise>"])
    admitted: list = field(default_factory=lambda: [True])
    pending_reinit: list = field(default_factory=lambda: [False])
    first_seen_block: list = field(default_factory=lambda: [0])
    admission_duration_sec: list = field(default_factory=lambda: [np.inf])

    @property
    def count(self) -> int:
        return len(self.labels)

    def grow(self, num_sources, labels=None):
        for k in range(self.count, num_sources):
            self.labels.append(labels[k] if labels is not None else f"spk{k}")
            self.admitted.append(False)
            self.pending_reinit.append(False)
            self.first_seen_block.append(-1)
            self.admission_duration_sec.append(0.0)


@dataclass
class UtteranceSegment:
    utterance_id: int
    speaker: int
    label: str
    utterance_start: int  # t_s (global frame)
    start_frame: int  # first emitted frame (inclusive)
    end_frame: int  # last emitted frame (inclusive)
    spectra: np.ndarray  # (end - start + 1, F)
    reference: int
    finalized: bool


class UtteranceTracker:
    """Tracks utterances as maximal runs of per-speaker activity across blocks."""

    def __init__(self):
        self.open = {}  # speaker -> (utterance_id, t_s)
        self.closed = []  # (utterance_id, speaker, t_s, t_e)
        self._next_id = 0

    def update(self, activities, block_start):
        """Return ``(utterance_id, speaker, t_s, seg_start, seg_end, finalized)``
        for every utterance overlapping this block. Utterances that ended on the
        previous block boundary are moved to ``closed`` without a segment."""
        L, K = activities.shape
        out = []
        for k in range(1, K):
            row = activities[:, k]
            pieces = runs(row)
            if k in self.open and (not pieces or pieces[0][0] != 0):
                uid, ts = self.open.pop(k)
                self.closed.append((uid, k, ts, block_start - 1))
            for s, e in pieces:
                gs, ge = block_start + s, block_start + e
                if s == 0 and k in self.open:
                    uid, ts = self.open[k]
                else:
                    uid, ts = self._next_id, gs
                    self._next_id += 1
                finalized = e < L - 1
                if finalized:
                    self.open.pop(k, None)
                    self.closed.append((uid, k, ts, ge))
                else:
                    self.open[k] = (uid, ts)
                out.append((uid, k, ts, gs, ge, finalized))
        return out

    def finish(self, stop_frame):
        """Close every open utterance at ``stop_frame - 1``."""
        ended = []
        for k, (uid, ts) in sorted(self.open.items()):
            self.closed.append((uid, k, ts, stop_frame - 1))
            ended.append(uid)
        self.open.clear()
        return ended


def active_set(activities) -> set:
    """Sources with at least one active frame; always contains the noise source."""
    d = np.asarray(activities)
    return {0} | set(np.flatnonzero(d.sum(axis=0) > 0).tolist())


class OnlineGSS:
    """Streaming engine; feed consecutive blocks through :meth:`process_block`."""

    def __init__(self, config: OnlineConfig, stft: StftConfig, num_channels: int,
                 labels=None):
        self.config = config
        self.stft = stft
        self.num_freqs = stft.num_freqs
        self.num_channels = num_channels
        self.labels = labels
        self.wpe = wpe_init(config.wpe, self.num_freqs, num_channels)
        self.state = CacgmmState.empty(self.num_freqs, 1, num_channels)
        self.queue = ContextQueue(config.context_len_frames, self.num_freqs, num_channels)
        self.registry = SourceRegistry()
        self.tracker = UtteranceTracker()
        self.block_index = 0
        self.next_frame = 0
        self.flags = []  # (block, message) for degenerate numerical events
        self.last_posteriors = None  # T_n^+ posteriors of the last non-silent block
        self._workspace = {}

    def _grow(self, K):
        if K < self.registry.count:
            raise ValueError(
                f"activity width shrank from {self.registry.count} to {K}")
        self.registry.grow(K, self.labels)
        self.state.grow(K)
        self.queue.widen(K)

    def process_block(self, block: SpectralBlock, activities) -> list[UtteranceSegment]:
        cfg = self.config
        d = np.asarray(activities).astype(np.uint8)
        L = block.frames.shape[0]
        if L > cfg.block_len_frames:
            raise ValueError(f"block of {L} frames exceeds L={cfg.block_len_frames}")
        if d.shape[0] != L:
            raise ValueError("activity rows must match block frames")
        if not np.all(d[:, 0] == 1):
            raise ValueError("noise activity (column 0) must be all ones")
        if block.frames.shape[1:] != (self.num_freqs, self.num_channels):
            raise ValueError(f"block shape {block.frames.shape} does not match engine")
        if block.start_frame_index != self.next_frame:
            raise ValueError(
                f"expected block starting at frame {self.next_frame}, "
                f"got {block.start_frame_index}")
        self._grow(d.shape[1])
        K = self.registry.count
        t0 = block.start_frame_index
        n = self.block_index
        self.block_index += 1
        self.next_frame = t0 + L

        y = wpe_process_block(self.wpe, block).frames
        utts = self.tracker.update(d, t0)

        block_post = init_posteriors_from_activities(d, self.num_freqs)
        if not d[:, 1:].any():
            self._push(y, d, block_post, t0 + L)
            return []

        q = self.queue
        c = len(q)
        X = np.concatenate([q.features, y]) if c else y
        D = np.concatenate([q.activities, d]) if c else d
        G = np.concatenate([q.posteriors, block_post]) if c else block_post

        active = active_set(D)
        reg = self.registry
        new = []
        for k in sorted(active):
            if k == 0:
                continue
            in_block = bool(d[:, k].any())
            if not reg.admitted[k] or (reg.pending_reinit[k] and in_block):
                new.append(k)
        for k in new:
            G[:c, :, k] = 0
            self.state.posterior_accum[:, k] = 0
            self.state.shape_matrices[:, k] = 0
        if new and c:
            self._renormalize(G[:c])
        # a new source without activity inside the block has no mass to learn from
        for k in new:
            if not d[:, k].any():
                active.discard(k)
                self.flags.append((n, f"source {k} excluded: no block activity"))
        new = [k for k in new if k in active]

        x_hat = Prepared(X, normalized=False, workspace=self._workspace)
        update = sorted(active)
        alpha = m_step_alpha(G, active)
        self.state.mixture_weights[:, update] = alpha[:, update]
        is_new = [k in new for k in update]
        B_plus = block_shapes(x_hat, G, self.state, update, is_new, eps=cfg.shape_eps)
        if cfg.strategy == "accumulation":
            flags = update_shape_accumulation(self.state, G[c:], B_plus, update)
            if flags.any():
                self.flags.append((n, "accumulation no-op for some (f, k)"))
        else:
            update_shape_decay(self.state, B_plus, cfg.eta, update)
        self.state.shape_matrices[:, update] = normalize_trace(
            self.state.shape_matrices[:, update])

        for k in new:
            dur = float(d[:, k].sum()) * self.stft.frame_sec
            reg.admitted[k] = True
            reg.first_seen_block[k] = n if reg.first_seen_block[k] < 0 else reg.first_seen_block[k]
            reg.admission_duration_sec[k] = dur
            reg.pending_reinit[k] = dur < cfg.min_new_source_sec

        G = e_step_guided(x_hat, D, self.state, active, eps=cfg.shape_eps)
        self.last_posteriors = G

        segments = []
        weights = {}
        full = beamform.full_covariance(X) if utts else None
        for uid, k, ts, gs, ge, finalized in utts:
            if k not in weights:
                weights[k] = beamform.beamformer(X, G, k, cfg.reference, full=full)
            bf = weights[k]
            z = beamform.apply(bf.weights, y[gs - t0:ge - t0 + 1])
            label = reg.labels[k]
            segments.append(UtteranceSegment(uid, k, label, ts, gs, ge, z,
                                             bf.reference, finalized))
        self._push_window(X, D, G, t0 + L)
        return segments

    @staticmethod
    def _renormalize(G):
        total = G.sum(axis=-1, keepdims=True)
        np.divide(G, total, out=G, where=total > 0)

    def _push(self, y, d, post, stop):
        q = self.queue
        if len(q):
            X = np.concatenate([q.features, y])
            D = np.concatenate([q.activities, d])
            G = np.concatenate([q.posteriors, post])
        else:
            X, D, G = y, d, post
        q.replace(X, D, G, stop)

    def _push_window(self, X, D, G, stop):
        self.queue.replace(X, D, G, stop)

    def finish(self):
        """Close utterances still open at the end of the stream; returns their ids."""
        return self.tracker.finish(self.next_frame)


@dataclass
class EnhancedUtterance:
    utterance_id: int
    speaker: int
    label: str
    start_frame: int
    end_frame: int  # inclusive
    spectra: np.ndarray  # (T, F)
    references: np.ndarray  # reference channel per frame

    @property
    def num_frames(self):
        return self.end_frame - self.start_frame + 1


class SegmentAssembler:
    """Concatenates per-block segments into whole utterances."""

    def __init__(self):
        self.parts = {}

    def add(self, segments):
        for seg in segments:
            self.parts.setdefault(seg.utterance_id, []).append(seg)

    def pop_closed(self, open_ids):
        done = [uid for uid in self.parts if uid not in open_ids]
        return [self._join(self.parts.pop(uid)) for uid in sorted(done)]

    def pop_all(self):
        return self.pop_closed(set())

    @staticmethod
    def _join(parts):
        parts = sorted(parts, key=lambda s: s.start_frame)
        first = parts[0]
        spectra = np.concatenate([p.spectra for p in parts])
        refs = np.concatenate([np.full(p.spectra.shape[0], p.reference) for p in parts])
        return EnhancedUtterance(first.utterance_id, first.speaker, first.label,
                                 first.utterance_start, parts[-1].end_frame, spectra, refs)


def iter_blocks(frames, block_len):
    """Split a (T, F, M) array into consecutive SpectralBlocks."""
    for start in range(0, frames.shape[0], block_len):
        yield SpectralBlock(frames[start:start + block_len], start)


def run_online(blocks, activity_matrix, config: OnlineConfig, stft: StftConfig,
               num_channels: int, on_utterance=None):
    """Drive an :class:`OnlineGSS` over an iterable of blocks.

    ``activity_matrix`` is an :class:`~blockgss.diarization.ActivityMatrix`.
    Finished utterances are passed to ``on_utterance`` as soon as they close
    (or collected and returned when no callback is given).
    """
    engine = OnlineGSS(config, stft, num_channels, labels=activity_matrix.labels)
    assembler = SegmentAssembler()
    collected = []
    emit = on_utterance or collected.append
    for block in blocks:
        acts = activity_matrix.block(block.start_frame_index, block.stop_frame_index)
        assembler.add(engine.process_block(block, acts))
        open_ids = {uid for uid, _ in engine.tracker.open.values()}
        for utt in assembler.pop_closed(open_ids):
            emit(utt)
    engine.finish()
    for utt in assembler.pop_all():
        emit(utt)
    return engine, collected
