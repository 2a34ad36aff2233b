"""Run reports: ``key=value`` totals followed by one ``utt`` line per utterance."""

import math
from dataclasses import dataclass, field
from typing import NamedTuple


class _Span(NamedTuple):
    start_sec: float
    end_sec: float


@dataclass
class UtteranceRecord:
    speaker: str
    start_sec: float
    end_sec: float
    path: str = ""
    si_sdr_db: float | None = None
    mixture_si_sdr_db: float | None = None
    reference_channel: int | None = None

    @property
    def duration_sec(self):
        return self.end_sec - self.start_sec


@dataclass
class RunReport:
    mode: str
    audio_sec: float
    speech_sec: float  # time during which at least one speaker is active
    processing_sec: float
    records: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.speech_sec > self.audio_sec + 1e-9:
            raise ValueError("speech duration exceeds audio duration")

    @property
    def real_time_factor(self) -> float:
        """Processing time over speech duration (infinite for no speech)."""
        if self.speech_sec <= 0:
            return math.inf
        return self.processing_sec / self.speech_sec

    @property
    def utterance_sec(self) -> float:
        return sum(r.duration_sec for r in self.records)

    def totals(self) -> dict:
        out = {
            "mode": self.mode,
            "audio_sec": f"{self.audio_sec:.3f}",
            "speech_sec": f"{self.speech_sec:.3f}",
            "utterance_sec": f"{self.utterance_sec:.3f}",
            "processing_sec": f"{self.processing_sec:.3f}",
            "real_time_factor": f"{self.real_time_factor:.4f}",
            "num_utterances": str(len(self.records)),
        }
        scored = [r for r in self.records if r.si_sdr_db is not None]
        if scored:
            out["mean_si_sdr_db"] = f"{sum(r.si_sdr_db for r in scored) / len(scored):.3f}"
        out.update({k: str(v) for k, v in self.extra.items()})
        return out

    def to_text(self) -> str:
        lines = [f"{k}={v}" for k, v in self.totals().items()]
        for r in self.records:
            fields = [f"speaker={r.speaker}", f"start_sec={r.start_sec:.3f}",
                      f"end_sec={r.end_sec:.3f}", f"path={r.path}"]
            if r.si_sdr_db is not None:
                fields.append(f"si_sdr_db={r.si_sdr_db:.3f}")
            if r.mixture_si_sdr_db is not None:
                fields.append(f"mixture_si_sdr_db={r.mixture_si_sdr_db:.3f}")
            if r.reference_channel is not None:
                fields.append(f"reference_channel={r.reference_channel}")
            lines.append("utt\t" + "\t".join(fields))
        return "\n".join(lines) + "\n"


def parse_report(text: str):
    """Inverse of :meth:`RunReport.to_text`: returns (totals dict, list of utt dicts)."""
    totals, utts = {}, []
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("utt\t"):
            utts.append(dict(f.split("=", 1) for f in line.split("\t")[1:]))
        else:
            key, value = line.split("=", 1)
            totals[key] = value
    return totals, utts


def speech_union_sec(segments, limit_sec=math.inf) -> float:
    """Length of the union of all segment intervals, clipped to ``[0, limit_sec]``."""
    total, end = 0.0, -math.inf
    clipped = [(s.start_sec, min(s.end_sec, limit_sec)) for s in segments]
    for s in sorted((_Span(a, b) for a, b in clipped if b > a), key=lambda s: s.start_sec):
        if s.start_sec >= end:
            total += s.end_sec - s.start_sec
            end = s.end_sec
        elif s.end_sec > end:
            total += s.end_sec - end
            end = s.end_sec
    return total
