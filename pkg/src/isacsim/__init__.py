"""isacsim: programmable integrated sensing and communication at the RAN edge.

Desk-scale simulator and runtime covering the full pipeline: OFDM
sensing waveforms, CRLB/overhead analysis, ranging estimators, the E3
real-time streaming protocol, a plug-and-play dApp runtime, xApp fusion,
and intent-driven life-cycle orchestration.
"""

from .waveform import (C, CirSnapshot, MultipathProfile, OfdmConfig, PathSpec,
                       RadarTarget, ResourceGrid, cir_time_domain,
                       indoor_ranging_profile, synth_cir_snapshots,
                       synth_echo_grid)
from .linkbudget import (CrlbPoint, LinkBudget, SweepSpec, calibrate_gain,
                         crlb_range_velocity, run_sweep, sensing_overhead_mbps,
                         snr_per_re)
from .estimators import (DelayDopplerEstimate, MusicSpec, RangeEstimate,
                         error_cdf, music_range, peak_detect_range,
                         periodogram_delay_doppler)

__all__ = [
    "C", "CirSnapshot", "MultipathProfile", "OfdmConfig", "PathSpec",
    "RadarTarget", "ResourceGrid", "cir_time_domain",
    "indoor_ranging_profile", "synth_cir_snapshots", "synth_echo_grid",
    "CrlbPoint", "LinkBudget", "SweepSpec", "calibrate_gain",
    "crlb_range_velocity", "run_sweep", "sensing_overhead_mbps", "snr_per_re",
    "DelayDopplerEstimate", "MusicSpec", "RangeEstimate", "error_cdf",
    "music_range", "peak_detect_range", "periodogram_delay_doppler",
]

__version__ = "0.1.0"
