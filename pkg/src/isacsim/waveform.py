"""OFDM sensing waveform synthesis.

Generates the physical-layer ground truth used everywhere else: monostatic
echo resource grids (a 2-D complex sinusoid in delay/Doppler plus white
noise) and multipath frequency-domain channel snapshots as a gNB would
estimate them from uplink SRS.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

C = 299792458.0  # speed of light [m/s]


@dataclass(frozen=True)
class OfdmConfig:
    """OFDM numerology for one sensing allocation.

    The derived quantities follow the usual NR conventions: N subcarriers
    fit in the bandwidth, each symbol lasts (1 + cp_overhead)/Δf, and M
    whole symbols fit in the slot.
    """

    carrier_freq_hz: float
    subcarrier_spacing_hz: float
    bandwidth_hz: float
    slot_duration_s: float
    cp_overhead: float = 0.07

    def __post_init__(self):
        if self.carrier_freq_hz <= 0:
            raise ValueError("carrier_freq_hz must be positive")
        if self.subcarrier_spacing_hz <= 0:
            raise ValueError("subcarrier_spacing_hz must be positive")
        if self.cp_overhead < 0:
            raise ValueError("cp_overhead must be non-negative")
        if self.n_subcarriers < 2:
            raise ValueError(
                f"bandwidth {self.bandwidth_hz} Hz fits only "
                f"{self.n_subcarriers} subcarriers (need >= 2)")
        if self.m_symbols < 2:
            raise ValueError(
                f"slot {self.slot_duration_s} s fits only "
                f"{self.m_symbols} symbols (need >= 2)")

    @property
    def n_subcarriers(self) -> int:
        return math.floor(self.bandwidth_hz / self.subcarrier_spacing_hz)

    @property
    def symbol_duration_s(self) -> float:
        return (1.0 + self.cp_overhead) / self.subcarrier_spacing_hz

    @property
    def m_symbols(self) -> int:
        return math.floor(self.slot_duration_s / self.symbol_duration_s)

    @property
    def wavelength_m(self) -> float:
        return C / self.carrier_freq_hz


@dataclass(frozen=True)
class RadarTarget:
    """Point target for the monostatic link: range, radial velocity, RCS."""

    range_m: float
    radial_velocity_mps: float = 0.0
    rcs_dbsm: float = 0.0

    def __post_init__(self):
        if self.range_m < 0:
            raise ValueError("range_m must be non-negative")

    @property
    def rcs_sqm(self) -> float:
        return 10.0 ** (self.rcs_dbsm / 10.0)

    @property
    def delay_s(self) -> float:
        """Round-trip delay 2R/c (monostatic)."""
        return 2.0 * self.range_m / C

    def doppler_hz(self, carrier_freq_hz: float) -> float:
        """Doppler shift 2 v f_c / c; positive for an approaching target."""
        return 2.0 * self.radial_velocity_mps * carrier_freq_hz / C


@dataclass
class ResourceGrid:
    """One slot of received samples, subcarrier-major (N, M)."""

    samples: np.ndarray
    config: OfdmConfig
    noise_variance: float = 1.0

    def __post_init__(self):
        expected = (self.config.n_subcarriers, self.config.m_symbols)
        if self.samples.shape != expected:
            raise ValueError(
                f"grid shape {self.samples.shape} != {expected} from config")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("grid contains non-finite samples")


@dataclass(frozen=True)
class PathSpec:
    """One propagation path: delay, mean linear power, fading model.

    fading "fixed" keeps a constant real gain sqrt(mean_power); "rayleigh"
    redraws a circular complex-normal gain with variance mean_power for
    every snapshot.
    """

    delay_s: float
    mean_power: float
    fading: str = "rayleigh"

    def __post_init__(self):
        if self.delay_s < 0:
            raise ValueError("path delay must be non-negative")
        if self.mean_power <= 0:
            raise ValueError("path mean_power must be positive")
        if self.fading not in ("fixed", "rayleigh"):
            raise ValueError(f"unknown fading model {self.fading!r}")


@dataclass(frozen=True)
class MultipathProfile:
    """Ordered multipath, first path = line of sight (smallest delay)."""

    paths: tuple[PathSpec, ...]

    def __post_init__(self):
        if len(self.paths) < 1:
            raise ValueError("profile needs at least one path")
        delays = [p.delay_s for p in self.paths]
        if any(b <= a for a, b in zip(delays, delays[1:])):
            raise ValueError("path delays must be strictly increasing")

    @property
    def los_delay_s(self) -> float:
        return self.paths[0].delay_s


@dataclass
class CirSnapshot:
    """Frequency-domain channel estimate H_m[k] on K subcarriers."""

    freq_response: np.ndarray
    snapshot_index: int
    noise_variance: float
    delta_f_hz: float

    def __post_init__(self):
        if self.freq_response.size < 8:
            raise ValueError("need at least 8 subcarriers per snapshot")
        if not np.all(np.isfinite(self.freq_response)):
            raise ValueError("snapshot contains non-finite values")

    @property
    def n_subcarriers(self) -> int:
        return int(self.freq_response.size)


def synth_echo_grid(config: OfdmConfig, target: RadarTarget,
                    snr_per_re: float, rng_seed: int,
                    noise_variance: float = 1.0) -> ResourceGrid:
    """Monostatic echo on the resource grid.

    sample(k, m) = sqrt(snr) * exp(-j 2π k Δf τ) * exp(+j 2π m T_sym f_D)
    plus complex circular white noise of the given variance (1.0 by
    default, so snr_per_re is the per-resource-element SNR). τ = 2R/c,
    f_D = 2 v f_c / c. Deterministic for a given seed.
    """
    if snr_per_re <= 0:
        raise ValueError("snr_per_re must be positive")
    n, m = config.n_subcarriers, config.m_symbols
    if n < 2 or m < 2:
        raise ValueError("config must provide N >= 2 and M >= 2")
    tau = target.delay_s
    if tau >= 1.0 / config.subcarrier_spacing_hz:
        raise ValueError(
            f"delay {tau} s aliases beyond 1/Δf = "
            f"{1.0 / config.subcarrier_spacing_hz} s")
    f_d = target.doppler_hz(config.carrier_freq_hz)

    k = np.arange(n)[:, None]
    sym = np.arange(m)[None, :]
    phase = (-2j * np.pi * k * config.subcarrier_spacing_hz * tau
             + 2j * np.pi * sym * config.symbol_duration_s * f_d)
    samples = np.sqrt(snr_per_re) * np.exp(phase)
    if noise_variance > 0:
        rng = np.random.default_rng(rng_seed)
        noise = rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))
        samples = samples + np.sqrt(noise_variance / 2.0) * noise
    return ResourceGrid(samples=samples, config=config,
                        noise_variance=noise_variance)


def synth_cir_snapshots(profile: MultipathProfile, k_subcarriers: int,
                        delta_f_hz: float, m_snapshots: int,
                        snapshot_snr: float, rng_seed: int) -> list[CirSnapshot]:
    """M successive CIR snapshots for a multipath channel.

    H_m[k] = Σ_p α_{p,m} exp(-j 2π k Δf τ_p) + noise, with per-snapshot
    gains redrawn according to each path's fading model. snapshot_snr is
    the per-subcarrier SNR of the first (LOS) path, so the noise variance
    is paths[0].mean_power / snapshot_snr; pass inf for noiseless output.
    """
    if m_snapshots < 1:
        raise ValueError("m_snapshots must be >= 1")
    if snapshot_snr <= 0:
        raise ValueError("snapshot_snr must be positive")
    delays = np.array([p.delay_s for p in profile.paths])
    if np.any(delays >= 1.0 / delta_f_hz):
        raise ValueError(f"path delays alias beyond 1/Δf = {1.0/delta_f_hz} s")
    powers = np.array([p.mean_power for p in profile.paths])
    fixed = np.array([p.fading == "fixed" for p in profile.paths])
    noise_var = 0.0 if math.isinf(snapshot_snr) else powers[0] / snapshot_snr

    # (K, L) steering matrix shared by every snapshot
    k = np.arange(k_subcarriers)
    steering = np.exp(-2j * np.pi * np.outer(k, delta_f_hz * delays))

    rng = np.random.default_rng(rng_seed)
    n_paths = len(profile.paths)
    # per-snapshot path gains
    gains = (rng.standard_normal((m_snapshots, n_paths))
             + 1j * rng.standard_normal((m_snapshots, n_paths)))
    gains *= np.sqrt(powers / 2.0)
    gains[:, fixed] = np.sqrt(powers[fixed])

    h = gains @ steering.T
    if noise_var > 0:
        noise = (rng.standard_normal((m_snapshots, k_subcarriers))
                 + 1j * rng.standard_normal((m_snapshots, k_subcarriers)))
        h = h + np.sqrt(noise_var / 2.0) * noise

    return [CirSnapshot(freq_response=h[i], snapshot_index=i,
                        noise_variance=noise_var, delta_f_hz=delta_f_hz)
            for i in range(m_snapshots)]


def cir_time_domain(snapshot: CirSnapshot) -> np.ndarray:
    """Length-K inverse DFT of the frequency response.

    h[q] = (1/K) Σ_k H[k] exp(+j 2π k q / K); a path at delay τ peaks at
    tap q ≈ τ K Δf.
    """
    if snapshot.n_subcarriers < 8:
        raise ValueError("need at least 8 subcarriers")
    return np.fft.ifft(snapshot.freq_response)


def indoor_ranging_profile() -> MultipathProfile:
    """Default rich-multipath ranging channel.

    Four Rayleigh-fading paths; the LOS at 60 ns is 6 dB below the
    strongest NLOS reflection at 180 ns, so a per-snapshot peak picker
    locks onto the wrong path while a joint multi-snapshot estimator can
    still recover the LOS. Powers are relative to the strongest path.
    """
    return MultipathProfile(paths=(
        PathSpec(delay_s=60e-9, mean_power=10 ** (-6.0 / 10)),
        PathSpec(delay_s=180e-9, mean_power=1.0),
        PathSpec(delay_s=320e-9, mean_power=10 ** (-3.0 / 10)),
        PathSpec(delay_s=500e-9, mean_power=10 ** (-8.0 / 10)),
    ))


# defaults for the ranging scenario: 1024 subcarriers on a 30 kHz comb
# (~31 MHz occupied) and -10 dB per-subcarrier LOS SNR
RANGING_K = 1024
RANGING_DELTA_F_HZ = 30e3
RANGING_LOS_SNR = 0.1
