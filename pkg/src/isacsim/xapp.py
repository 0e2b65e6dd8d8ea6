"""Network-level sensing xApp: report fusion and target tracking.

Ingests ranging detection reports from multiple sites (never raw I/Q),
trilaterates each time window with Gauss-Newton least squares, and
maintains alpha-beta tracks over the fused positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dapp import DetectionReport


class UnknownSite(KeyError):
    pass


class DegenerateGeometry(ValueError):
    pass


class NoConvergence(RuntimeError):
    pass


class NonMonotoneTime(ValueError):
    pass


@dataclass(frozen=True)
class SiteGeometry:
    site_id: str
    position_m: tuple[float, float]


@dataclass
class FusedTrack:
    track_id: int
    position_m: np.ndarray
    velocity_mps: np.ndarray
    last_update_ns: int
    residual_m: float
    n_updates: int = 1


def trilaterate(positions: np.ndarray, ranges: np.ndarray,
                max_iter: int = 50, tol_m: float = 1e-6
                ) -> tuple[np.ndarray, float]:
    """2-D position from >= 3 ranges via Gauss-Newton.

    Starts at the site centroid; returns (position, RMS range residual).
    Raises DegenerateGeometry for collinear sites and NoConvergence if
    the step never falls below tol within max_iter iterations.
    """
    positions = np.asarray(positions, dtype=float)
    ranges = np.asarray(ranges, dtype=float)
    if positions.shape[0] < 3:
        raise ValueError("need at least 3 sites")
    centered = positions - positions.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[-1] < 1e-9 * max(sv[0], 1.0):
        raise DegenerateGeometry("sites are collinear")

    p = positions.mean(axis=0)
    for _ in range(max_iter):
        diff = p - positions
        dists = np.linalg.norm(diff, axis=1)
        dists = np.maximum(dists, 1e-12)
        resid = dists - ranges
        jac = diff / dists[:, None]
        step, *_ = np.linalg.lstsq(jac, -resid, rcond=None)
        p = p + step
        if np.linalg.norm(step) < tol_m:
            diff = p - positions
            resid = np.linalg.norm(diff, axis=1) - ranges
            return p, float(np.sqrt(np.mean(resid ** 2)))
    raise NoConvergence(f"no convergence within {max_iter} iterations")


def alpha_beta_update(track: FusedTrack, position_m: np.ndarray,
                      timestamp_ns: int, alpha: float = 0.5,
                      beta: float = 0.1) -> FusedTrack:
    """One alpha-beta filter step; velocity comes from the innovations."""
    if timestamp_ns <= track.last_update_ns:
        raise NonMonotoneTime(
            f"update at {timestamp_ns} ns <= last {track.last_update_ns} ns")
    dt = (timestamp_ns - track.last_update_ns) / 1e9
    predicted = track.position_m + track.velocity_mps * dt
    innovation = np.asarray(position_m, dtype=float) - predicted
    track.position_m = predicted + alpha * innovation
    track.velocity_mps = track.velocity_mps + beta * innovation / dt
    track.last_update_ns = timestamp_ns
    track.residual_m = float(np.linalg.norm(innovation))
    track.n_updates += 1
    return track


class SensingXapp:
    """Window-based fusion of per-site range reports into tracks."""

    def __init__(self, geometry: list[SiteGeometry], window_s: float = 0.1,
                 max_range_m: float = 10e3, gate_innovation_m: float = 50.0,
                 alpha: float = 0.5, beta: float = 0.1):
        if len({g.site_id for g in geometry}) != len(geometry):
            raise ValueError("duplicate site_id in geometry")
        positions = [g.position_m for g in geometry]
        if len(set(positions)) != len(positions):
            raise ValueError("site positions must be distinct")
        self.geometry = {g.site_id: np.array(g.position_m, float)
                         for g in geometry}
        self.window_ns = int(window_s * 1e9)
        self.max_range_m = max_range_m
        self.gate_innovation_m = gate_innovation_m
        self.alpha = alpha
        self.beta = beta
        self.tracks: list[FusedTrack] = []
        self.rejected = 0
        self._window: dict[str, DetectionReport] = {}
        self._window_start_ns: int | None = None
        self._next_track_id = 0
        self.fused_positions: list[tuple[int, int, np.ndarray, float]] = []

    def ingest(self, report: DetectionReport) -> bool:
        """Gate and buffer one report; fuses when its window closes.

        Only processed range reports are accepted on this path, never
        raw I/Q; out-of-gate ranges are counted and dropped.
        """
        if report.site_id not in self.geometry:
            raise UnknownSite(report.site_id)
        if report.payload.get("type") != "range":
            self.rejected += 1
            return False
        rng = report.payload["range_m"]
        if not (0.0 <= rng <= self.max_range_m):
            self.rejected += 1
            return False
        if self._window_start_ns is None:
            self._window_start_ns = report.timestamp_ns
        elif report.timestamp_ns - self._window_start_ns >= self.window_ns:
            self.flush()
            self._window_start_ns = report.timestamp_ns
        # latest report per site wins within a window
        self._window[report.site_id] = report
        return True

    def flush(self) -> FusedTrack | None:
        """Fuse the buffered window if >= 3 distinct sites contributed."""
        if len(self._window) < 3:
            self._window.clear()
            self._window_start_ns = None
            return None
        # deterministic site order makes fusion permutation-invariant
        site_ids = sorted(self._window)
        positions = np.stack([self.geometry[s] for s in site_ids])
        ranges = np.array([self._window[s].payload["range_m"]
                           for s in site_ids])
        ts = max(r.timestamp_ns for r in self._window.values())
        self._window.clear()
        self._window_start_ns = None
        pos, residual = trilaterate(positions, ranges)
        track = self._associate(pos, ts, residual)
        self.fused_positions.append((ts, track.track_id, pos, residual))
        return track

    def _associate(self, pos: np.ndarray, ts: int,
                   residual: float) -> FusedTrack:
        best = None
        best_dist = self.gate_innovation_m
        for track in self.tracks:
            dt = max((ts - track.last_update_ns) / 1e9, 0.0)
            predicted = track.position_m + track.velocity_mps * dt
            dist = float(np.linalg.norm(pos - predicted))
            if dist <= best_dist:
                best, best_dist = track, dist
        if best is not None:
            return alpha_beta_update(best, pos, ts, self.alpha, self.beta)
        track = FusedTrack(track_id=self._next_track_id,
                           position_m=np.array(pos, float),
                           velocity_mps=np.zeros(2),
                           last_update_ns=ts, residual_m=residual)
        self._next_track_id += 1
        self.tracks.append(track)
        return track

    def track_rows(self) -> list[tuple]:
        """(t_s, track_id, x, y, vx, vy, residual) rows for CSV export."""
        rows = []
        for ts, tid, pos, residual in self.fused_positions:
            track = next(t for t in self.tracks if t.track_id == tid)
            rows.append((ts / 1e9, tid, pos[0], pos[1],
                         track.velocity_mps[0], track.velocity_mps[1],
                         residual))
        return rows

    def track_report_body(self, track: FusedTrack) -> dict:
        """JSON body for publishing a fused track as an E3 Report frame."""
        return {"type": "fused_track", "track_id": track.track_id,
                "position_m": [float(track.position_m[0]),
                               float(track.position_m[1])],
                "velocity_mps": [float(track.velocity_mps[0]),
                                 float(track.velocity_mps[1])],
                "timestamp_ns": track.last_update_ns,
                "residual_m": track.residual_m}
