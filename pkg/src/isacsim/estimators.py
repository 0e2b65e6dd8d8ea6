"""Sensing estimators hosted by dApps.

Three estimation paths:

* 2-D periodogram delay/Doppler extraction for monostatic echo grids,
* per-snapshot CIR peak detection (the scalar-report baseline a gNB PHY
  feeds to the LMF today), and
* joint multi-snapshot subspace (MUSIC) ranging over full CIRs, with
  forward-backward spatial smoothing along subcarriers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .waveform import C, CirSnapshot, ResourceGrid, cir_time_domain


class ModelOrderTooLarge(ValueError):
    """Signal-subspace dimension must stay below the subarray length."""


class NoPeak(RuntimeError):
    """No qualifying peak found in the pseudospectrum."""


@dataclass(frozen=True)
class DelayDopplerEstimate:
    delay_s: float
    doppler_hz: float
    range_m: float
    velocity_mps: float
    peak_power: float


@dataclass(frozen=True)
class RangeEstimate:
    """One-way time-of-arrival range estimate (range = c * delay)."""

    delay_s: float
    range_m: float
    method: str  # "peak" | "subspace"
    snapshots_used: int


@dataclass(frozen=True)
class MusicSpec:
    """Subspace ranging parameters.

    subarray_len is the spatial-smoothing window along subcarriers,
    model_order the assumed signal-subspace dimension, and the grid the
    delay search range. peak_floor_factor qualifies pseudospectrum local
    maxima relative to the median (noise-floor) level; true-path peaks
    sit orders of magnitude above it while spurious maxima stay at it.
    """

    subarray_len: int = 512
    model_order: int = 6
    grid_start_s: float = 0.0
    grid_stop_s: float = 800e-9
    grid_step_s: float = 1e-9
    peak_floor_factor: float = 100.0

    def __post_init__(self):
        if self.model_order < 1:
            raise ValueError("model_order must be >= 1")
        if self.model_order >= self.subarray_len:
            raise ModelOrderTooLarge(
                f"model_order {self.model_order} >= subarray_len "
                f"{self.subarray_len}")
        if self.grid_step_s <= 0:
            raise ValueError("grid_step_s must be positive")
        if self.grid_stop_s <= self.grid_start_s:
            raise ValueError("empty delay search grid")

    def delay_grid(self) -> np.ndarray:
        n = int(np.floor((self.grid_stop_s - self.grid_start_s)
                         / self.grid_step_s)) + 1
        return self.grid_start_s + self.grid_step_s * np.arange(n)


def _parabolic_offset(y_m1: float, y_0: float, y_p1: float) -> float:
    """Vertex offset in [-0.5, 0.5] of the parabola through 3 samples.

    Neighbor asymmetries at the floating-point noise floor are treated
    as exactly symmetric, so an on-bin tone interpolates to offset 0.
    """
    denom = y_m1 - 2.0 * y_0 + y_p1
    if denom == 0 or abs(y_m1 - y_p1) <= 1e-12 * abs(y_0):
        return 0.0
    off = 0.5 * (y_m1 - y_p1) / denom
    return float(np.clip(off, -0.5, 0.5))


def periodogram_delay_doppler(grid: ResourceGrid,
                              zero_pad: int = 4) -> DelayDopplerEstimate:
    """Delay/Doppler from the argmax of the zero-padded 2-D periodogram.

    The echo is a 2-D complex sinusoid, so an inverse FFT along
    subcarriers concentrates delay at bin τ N_z Δf_z and a forward FFT
    along symbols concentrates Doppler at bin f_D T_sym M_z; parabolic
    interpolation refines both axes. Monostatic conversions: range =
    c τ / 2, velocity = f_D c / (2 f_c).
    """
    if zero_pad < 1:
        raise ValueError("zero_pad must be >= 1")
    cfg = grid.config
    n, m = cfg.n_subcarriers, cfg.m_symbols
    nz, mz = n * zero_pad, m * zero_pad
    spec = np.fft.fft(np.fft.ifft(grid.samples, n=nz, axis=0), n=mz, axis=1)
    power = np.abs(spec) ** 2
    q_tau, q_dop = np.unravel_index(int(np.argmax(power)), power.shape)

    d_tau = _parabolic_offset(power[(q_tau - 1) % nz, q_dop],
                              power[q_tau, q_dop],
                              power[(q_tau + 1) % nz, q_dop])
    d_dop = _parabolic_offset(power[q_tau, (q_dop - 1) % mz],
                              power[q_tau, q_dop],
                              power[q_tau, (q_dop + 1) % mz])

    tau = ((q_tau + d_tau) % nz) / (nz * cfg.subcarrier_spacing_hz)
    dop_bin = q_dop + d_dop
    if dop_bin > mz / 2:
        dop_bin -= mz
    doppler = dop_bin / (mz * cfg.symbol_duration_s)
    return DelayDopplerEstimate(
        delay_s=tau, doppler_hz=doppler,
        range_m=C * tau / 2.0,
        velocity_mps=doppler * C / (2.0 * cfg.carrier_freq_hz),
        peak_power=float(power[q_tau, q_dop]))


def _peak_delay(snapshot: CirSnapshot) -> float:
    """Interpolated argmax of the time-domain CIR magnitude."""
    h = np.abs(cir_time_domain(snapshot))
    k = h.size
    q = int(np.argmax(h))
    off = _parabolic_offset(h[(q - 1) % k], h[q], h[(q + 1) % k])
    tap = (q + off) % k
    return tap / (k * snapshot.delta_f_hz)


def peak_detect_range(snapshots: list[CirSnapshot],
                      aggregation: str = "median"):
    """Per-snapshot scalar peak detection, the current-5G baseline.

    Each snapshot yields one timing measurement (interpolated strongest
    CIR tap); "median" mimics the LMF combining M individual reports into
    one estimate, "per-snapshot" returns the individual reports.
    """
    if not snapshots:
        raise ValueError("need at least one snapshot")
    delays = [_peak_delay(s) for s in snapshots]
    if aggregation == "per-snapshot":
        return [RangeEstimate(delay_s=d, range_m=C * d, method="peak",
                              snapshots_used=1) for d in delays]
    if aggregation == "median":
        d = float(np.median(delays))
        return RangeEstimate(delay_s=d, range_m=C * d, method="peak",
                             snapshots_used=len(snapshots))
    raise ValueError(f"unknown aggregation {aggregation!r}")


def smoothed_covariance(snapshots: list[CirSnapshot],
                        subarray_len: int) -> np.ndarray:
    """Forward-backward spatially smoothed sample covariance.

    Averages x x^H over every length-L subcarrier window of every
    snapshot, then forward-backward averages. Computed diagonal-by-
    diagonal with cumulative sums, which is algebraically identical to
    the explicit window outer products but O(K L) instead of O(K L²).
    """
    k = snapshots[0].n_subcarriers
    if subarray_len > k:
        raise ValueError(f"subarray_len {subarray_len} > K {k}")
    h = np.stack([s.freq_response for s in snapshots])
    hc = np.conj(h)
    n_sub = k - subarray_len + 1
    r = np.zeros((subarray_len, subarray_len), dtype=complex)
    for d in range(subarray_len):
        q = np.einsum("ij,ij->j", h[:, d:], hc[:, :k - d])
        csum = np.concatenate(([0.0 + 0.0j], np.cumsum(q)))
        b = np.arange(subarray_len - d)
        r[b + d, b] = csum[b + n_sub] - csum[b]
    r = r + np.tril(r, -1).conj().T
    r /= len(snapshots) * n_sub
    r = 0.5 * (r + np.conj(r[::-1, ::-1]))  # forward-backward
    return 0.5 * (r + r.conj().T)


_steering_cache: dict[tuple, np.ndarray] = {}


def _steering_matrix(subarray_len: int, delta_f_hz: float,
                     grid: np.ndarray) -> np.ndarray:
    key = (subarray_len, delta_f_hz, grid[0], grid[-1], grid.size)
    mat = _steering_cache.get(key)
    if mat is None:
        mat = np.exp(-2j * np.pi
                     * np.outer(np.arange(subarray_len), delta_f_hz * grid))
        if len(_steering_cache) > 8:
            _steering_cache.clear()
        _steering_cache[key] = mat
    return mat


def music_pseudospectrum(snapshots: list[CirSnapshot],
                         spec: MusicSpec) -> tuple[np.ndarray, np.ndarray]:
    """(delay grid, MUSIC pseudospectrum P(τ) = 1/||E_n^H a(τ)||²)."""
    if len(snapshots) < 2:
        raise ValueError("need at least 2 snapshots")
    if spec.model_order >= spec.subarray_len:
        raise ModelOrderTooLarge(
            f"model_order {spec.model_order} >= subarray_len "
            f"{spec.subarray_len}")
    r = smoothed_covariance(snapshots, spec.subarray_len)
    L = spec.subarray_len
    # only the signal subspace is needed: ||E_n^H a||² = ||a||² - ||E_s^H a||²
    _, e_sig = scipy.linalg.eigh(r, subset_by_index=[L - spec.model_order, L - 1])
    grid = spec.delay_grid()
    a = _steering_matrix(L, snapshots[0].delta_f_hz, grid)
    proj = np.abs(e_sig.conj().T @ a) ** 2
    denom = np.maximum(L - proj.sum(axis=0), 1e-12)
    return grid, 1.0 / denom


def music_range(snapshots: list[CirSnapshot], spec: MusicSpec) -> RangeEstimate:
    """LOS-first subspace ranging jointly across snapshots.

    Among pseudospectrum local maxima at least peak_floor_factor times
    the median level, returns the smallest delay (the line-of-sight rule:
    earlier qualifying arrivals win regardless of strength).
    """
    grid, pseudo = music_pseudospectrum(snapshots, spec)
    interior = (pseudo[1:-1] > pseudo[:-2]) & (pseudo[1:-1] >= pseudo[2:])
    peaks = np.where(interior)[0] + 1
    if peaks.size == 0:
        raise NoPeak("pseudospectrum has no interior local maximum")
    floor = float(np.median(pseudo))
    peaks = peaks[pseudo[peaks] >= spec.peak_floor_factor * floor]
    if peaks.size == 0:
        raise NoPeak("no pseudospectrum peak clears the floor threshold")
    delay = float(grid[peaks.min()])
    return RangeEstimate(delay_s=delay, range_m=C * delay, method="subspace",
                         snapshots_used=len(snapshots))


def error_cdf(estimates: list[RangeEstimate],
              truth_m: float) -> tuple[np.ndarray, np.ndarray]:
    """Empirical CDF of |range - truth|: (sorted errors, cumulative probs)."""
    if not estimates:
        raise ValueError("need at least one estimate")
    errors = np.sort([abs(e.range_m - truth_m) for e in estimates])
    probs = np.arange(1, errors.size + 1) / errors.size
    return errors, probs


def evaluate_cdf(errors: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """P(error <= x) for each x in grid, from sorted or unsorted errors."""
    return np.searchsorted(np.sort(errors), grid, side="right") / len(errors)
