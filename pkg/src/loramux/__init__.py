"""Two-user LoRa baseband library and collision simulator.

Modules: phy (chirp modulation and single-user detection), channel
(two-user waveform synthesis and AWGN), sync (preamble acquisition and
the receiver FSM), detector (joint two-user demodulation), harness
(Monte-Carlo SER sweeps and CSV output).
"""
from .channel import FrameSpec, UserParams, superimpose, synthesize_user
from .detector import DetectorContext, DetectorState, WindowDecision, decide_window
from .harness import ExperimentConfig, SerRecord, run_sweep, run_trial
from .phy import LoraConfig, build_preamble, dechirp, demod_single, downchirp, modulate
from .sync import ReceiverFsmState, SyncEstimate, acquire_user, fsm_step

__all__ = [
    "LoraConfig",
    "modulate",
    "downchirp",
    "dechirp",
    "demod_single",
    "build_preamble",
    "UserParams",
    "FrameSpec",
    "synthesize_user",
    "superimpose",
    "SyncEstimate",
    "ReceiverFsmState",
    "acquire_user",
    "fsm_step",
    "DetectorContext",
    "DetectorState",
    "WindowDecision",
    "decide_window",
    "ExperimentConfig",
    "SerRecord",
    "run_trial",
    "run_sweep",
]
