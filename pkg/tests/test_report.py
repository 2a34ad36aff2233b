import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blockgss.diarization import Segment
from blockgss.report import RunReport, UtteranceRecord, parse_report, speech_union_sec


def test_text_round_trip():
    recs = [UtteranceRecord("spk1", 0.5, 2.0, "out/spk1_500_2000.wav", 7.25, 1.5, 2),
            UtteranceRecord("spk2", 1.0, 3.0, "out/spk2_1000_3000.wav")]
    rep = RunReport("online", 10.0, 2.5, 0.5, recs, {"lookahead_violations": 0})
    totals, utts = parse_report(rep.to_text())
    assert totals["mode"] == "online"
    assert float(totals["real_time_factor"]) == pytest.approx(0.2)
    assert float(totals["utterance_sec"]) == pytest.approx(3.5)
    assert totals["num_utterances"] == "2"
    assert totals["lookahead_violations"] == "0"
    assert float(totals["mean_si_sdr_db"]) == pytest.approx(7.25)
    assert utts[0] == {"speaker": "spk1", "start_sec": "0.500", "end_sec": "2.000",
                       "path": "out/spk1_500_2000.wav", "si_sdr_db": "7.250",
                       "mixture_si_sdr_db": "1.500", "reference_channel": "2"}
    assert "si_sdr_db" not in utts[1]


def test_no_speech_gives_infinite_rtf():
    rep = RunReport("online", 1.0, 0.0, 0.01)
    assert math.isinf(rep.real_time_factor) and rep.real_time_factor > 0
    totals, utts = parse_report(rep.to_text())
    assert totals["num_utterances"] == "0" and utts == []


def test_speech_cannot_exceed_audio():
    with pytest.raises(ValueError):
        RunReport("online", 1.0, 2.0, 0.1)


def test_speech_union_examples():
    segs = [Segment("a", 0, 4), Segment("b", 3, 5), Segment("a", 6, 7)]
    assert speech_union_sec(segs) == pytest.approx(6.0)
    assert speech_union_sec(segs, limit_sec=3.5) == pytest.approx(3.5)
    assert speech_union_sec([]) == 0.0


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(0, 200), st.integers(1, 50)), max_size=10),
       st.integers(1, 300))
def test_speech_union_matches_grid_count(items, limit):
    """Union length equals the number of covered unit cells."""
    segs = [Segment("x", float(s), float(s + n)) for s, n in items]
    grid = np.zeros(300, dtype=bool)
    for s, n in items:
        grid[s:min(s + n, limit)] = True
    assert speech_union_sec(segs, float(limit)) == pytest.approx(grid.sum())
    assert speech_union_sec(segs) <= sum(n for _, n in items)
