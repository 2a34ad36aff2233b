"""Block-online guided source separation (GSS) with an offline reference path."""

from .stft import StftConfig, SpectralBlock, analyze, synthesize
from .dereverb import WpeConfig, wpe_init, wpe_process_block
from .cacgmm import CacgmmState, offline_em
from .online import OnlineConfig, OnlineGSS, run_online
from .offline import OfflineConfig, enhance_utterance, run_offline
from .diarization import parse_segments, segments_to_activities
from .audio_io import StreamingReader, StreamingStft, read_wav, write_wav
from .pipeline import bench, process_offline, process_online
from .report import RunReport

__version__ = "0.1.0"
