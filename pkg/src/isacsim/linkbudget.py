"""Radar link budget, delay/Doppler CRLB, and sensing-overhead analysis.

Analytic engine behind the accuracy-vs-overhead trade-off: the radar
equation maps a target and budget to per-resource-element SNR, the 2-D
single-tone CRLB maps SNR and grid size to range/velocity RMSE, and the
overhead model counts the I/Q bits a sensing dApp must pull per slot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .waveform import C, OfdmConfig, RadarTarget

BOLTZMANN = 1.380649e-23  # [J/K]


@dataclass(frozen=True)
class LinkBudget:
    """Monostatic radar budget; gains and noise figure fold into one κ."""

    tx_power_dbm: float = 43.0
    combined_gain: float = 1.0
    noise_temp_k: float = 290.0
    boltzmann: float = BOLTZMANN

    def __post_init__(self):
        if self.combined_gain <= 0:
            raise ValueError("combined_gain must be positive")
        if self.noise_temp_k <= 0:
            raise ValueError("noise_temp_k must be positive")

    @property
    def tx_power_w(self) -> float:
        return 10.0 ** (self.tx_power_dbm / 10.0) * 1e-3


@dataclass(frozen=True)
class CrlbPoint:
    """One sweep sample: overhead plus the CRLB-implied RMSEs.

    n_subcarriers / m_symbols are the effective (fractional) values used
    in the continuous sweep evaluation.
    """

    overhead_mbps: float
    rmse_range_m: float
    rmse_velocity_mps: float
    snr_per_re_db: float
    n_subcarriers: float
    m_symbols: float


@dataclass(frozen=True)
class SweepSpec:
    """Joint bandwidth/slot sweep; both swept linearly over one index."""

    bandwidth_range_hz: tuple[float, float]
    slot_range_s: tuple[float, float]
    steps: int = 64
    bytes_per_sample: int = 4

    def __post_init__(self):
        if self.bandwidth_range_hz[0] >= self.bandwidth_range_hz[1]:
            raise ValueError("bandwidth range must have low < high")
        if self.slot_range_s[0] >= self.slot_range_s[1]:
            raise ValueError("slot range must have low < high")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.bytes_per_sample < 1:
            raise ValueError("bytes_per_sample must be >= 1")


def _snr_per_re(budget: LinkBudget, delta_f_hz: float, wavelength_m: float,
                target: RadarTarget, n_subcarriers: float) -> float:
    """Radar equation with TX power split evenly over n subcarriers."""
    if target.range_m <= 0:
        raise ValueError("radar equation is singular at range 0")
    echo = (budget.tx_power_w / n_subcarriers * budget.combined_gain
            * wavelength_m ** 2 * target.rcs_sqm
            / ((4.0 * np.pi) ** 3 * target.range_m ** 4))
    noise = budget.boltzmann * budget.noise_temp_k * delta_f_hz
    return echo / noise


def snr_per_re(budget: LinkBudget, config: OfdmConfig,
               target: RadarTarget) -> float:
    """Per-resource-element echo SNR for the monostatic link.

    SNR_RE = (P_tx/N) κ λ² σ / ((4π)³ R⁴ k T Δf); decreasing in both N
    (power splitting) and R (R⁴ law).
    """
    return _snr_per_re(budget, config.subcarrier_spacing_hz,
                       config.wavelength_m, target, config.n_subcarriers)


def _crlb(delta_f_hz: float, t_sym_s: float, wavelength_m: float,
          n: float, m: float, snr: float) -> tuple[float, float]:
    """2-D single-tone frequency-estimation bound on an N x M grid.

    var(τ)  = 6 / ((2π Δf)²   SNR M N (N²-1))
    var(f_D) = 6 / ((2π T_sym)² SNR N M (M²-1))
    mapped to range (c/2 per second of delay) and radial velocity (λ/2
    per Hz of Doppler).
    """
    if n < 2 or m < 2:
        raise ValueError("CRLB undefined for N < 2 or M < 2")
    if snr <= 0:
        raise ValueError("snr must be positive")
    var_tau = 6.0 / ((2.0 * np.pi * delta_f_hz) ** 2 * snr * m * n * (n * n - 1.0))
    var_fd = 6.0 / ((2.0 * np.pi * t_sym_s) ** 2 * snr * n * m * (m * m - 1.0))
    return (C / 2.0) * np.sqrt(var_tau), (wavelength_m / 2.0) * np.sqrt(var_fd)


def crlb_range_velocity(config: OfdmConfig, snr_per_re: float
                        ) -> tuple[float, float]:
    """(range RMSE, velocity RMSE) lower bounds for the given grid."""
    return _crlb(config.subcarrier_spacing_hz, config.symbol_duration_s,
                 config.wavelength_m, config.n_subcarriers, config.m_symbols,
                 snr_per_re)


def sensing_overhead_mbps(config: OfdmConfig, bytes_per_sample: int = 4) -> float:
    """I/Q transfer rate M N b 8 / T_slot, in Mbps."""
    if bytes_per_sample < 1:
        raise ValueError("bytes_per_sample must be >= 1")
    bits = config.m_symbols * config.n_subcarriers * bytes_per_sample * 8
    return bits / config.slot_duration_s / 1e6


def calibrate_gain(budget: LinkBudget, config: OfdmConfig,
                   target: RadarTarget, anchor_rmse_range_m: float) -> float:
    """Solve for κ so the range CRLB at this config equals the anchor.

    RMSE ∝ κ^(-1/2), so the inversion is closed form: compute the SNR the
    bound needs, divide by the κ=1 SNR.
    """
    if anchor_rmse_range_m <= 0:
        raise ValueError("anchor_rmse_range_m must be positive")
    n, m = config.n_subcarriers, config.m_symbols
    var_target = (anchor_rmse_range_m / (C / 2.0)) ** 2
    snr_needed = 6.0 / ((2.0 * np.pi * config.subcarrier_spacing_hz) ** 2
                        * var_target * m * n * (n * n - 1.0))
    unit_budget = LinkBudget(tx_power_dbm=budget.tx_power_dbm,
                             combined_gain=1.0,
                             noise_temp_k=budget.noise_temp_k,
                             boltzmann=budget.boltzmann)
    return snr_needed / snr_per_re(unit_budget, config, target)


def run_sweep(spec: SweepSpec, budget: LinkBudget, base_config: OfdmConfig,
              target: RadarTarget) -> list[CrlbPoint]:
    """Joint bandwidth/slot sweep producing one CrlbPoint per index.

    Bandwidth and slot duration interpolate linearly over the same index.
    N and M are evaluated fractionally (N = B/Δf, M = T/T_sym) so both
    RMSE curves are strictly monotone; the returned list is sorted by
    overhead.
    """
    bws = np.linspace(*spec.bandwidth_range_hz, spec.steps)
    slots = np.linspace(*spec.slot_range_s, spec.steps)
    df = base_config.subcarrier_spacing_hz
    t_sym = base_config.symbol_duration_s
    lam = base_config.wavelength_m

    points = []
    for i, (bw, slot) in enumerate(zip(bws, slots)):
        n = bw / df
        m = slot / t_sym
        try:
            snr = _snr_per_re(budget, df, lam, target, n)
            rmse_r, rmse_v = _crlb(df, t_sym, lam, n, m, snr)
        except ValueError as exc:
            raise ValueError(f"sweep index {i} (B={bw}, T={slot}): {exc}") from exc
        overhead = m * n * spec.bytes_per_sample * 8 / slot / 1e6
        points.append(CrlbPoint(
            overhead_mbps=overhead, rmse_range_m=rmse_r,
            rmse_velocity_mps=rmse_v,
            snr_per_re_db=10.0 * np.log10(snr),
            n_subcarriers=n, m_symbols=m))
    points.sort(key=lambda p: p.overhead_mbps)
    return points
