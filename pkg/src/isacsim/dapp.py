"""Plug-and-play dApp runtime at the simulated DU.

Hosts sensing functions as in-process plugins: deploys them against a
site's compute budget, subscribes them to E3 streams, feeds frames to
the bound estimator, and emits detection reports and KPIs. Estimator
failures degrade a dApp, never the runtime or its neighbours.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import e3, estimators
from .orchestrator import CatalogEntry, SiteProfile
from .waveform import CirSnapshot, OfdmConfig, ResourceGrid


class InsufficientCompute(RuntimeError):
    pass


class StreamUnavailable(RuntimeError):
    pass


class NoData(RuntimeError):
    pass


class DappState(Enum):
    INIT = "init"
    SUBSCRIBED = "subscribed"
    RUNNING = "running"
    DEGRADED = "degraded"
    STOPPED = "stopped"


_ALLOWED_TRANSITIONS = {
    (DappState.INIT, DappState.SUBSCRIBED),
    (DappState.SUBSCRIBED, DappState.RUNNING),
    (DappState.RUNNING, DappState.DEGRADED),
    (DappState.DEGRADED, DappState.RUNNING),
    (DappState.RUNNING, DappState.STOPPED),
    (DappState.DEGRADED, DappState.STOPPED),
}

_FUNCTION_INPUT = {"monostatic": "iq", "ranging": "cir", "spectrum": "iq"}


@dataclass(frozen=True)
class DappDescriptor:
    """Deployable sensing function: what it runs on and what it costs."""

    dapp_id: str
    function: str  # "monostatic" | "ranging" | "spectrum"
    input_kind: str  # "iq" | "cir"
    params: dict = field(default_factory=dict)
    compute_cost: float = 0.1
    model_version: str = "1.0"

    def __post_init__(self):
        expected = _FUNCTION_INPUT.get(self.function)
        if expected is None:
            raise ValueError(f"unknown dApp function {self.function!r}")
        if self.input_kind != expected:
            raise ValueError(
                f"{self.function} dApps consume {expected!r}, "
                f"not {self.input_kind!r}")
        if self.compute_cost <= 0:
            raise ValueError("compute_cost must be positive")


@dataclass(frozen=True)
class DetectionReport:
    dapp_id: str
    site_id: str
    timestamp_ns: int
    payload: dict
    confidence: float = 1.0
    model_version: str = "1.0"

    def to_body(self) -> dict:
        """JSON-serializable body for the E3 Report framing."""
        return {"dapp_id": self.dapp_id, "site_id": self.site_id,
                "timestamp_ns": self.timestamp_ns, "payload": self.payload,
                "confidence": self.confidence,
                "model_version": self.model_version}


@dataclass(frozen=True)
class DappKpi:
    dapp_id: str
    detection_probability: float
    false_alarm_rate: float
    localization_rmse_m: float
    processing_latency_s: float
    n_reports: int = 0


class Dapp:
    """One deployed dApp instance, confined to its own input stream."""

    def __init__(self, descriptor: DappDescriptor, site: SiteProfile,
                 stream: e3.StreamHandle, degrade_after: int = 5):
        self.descriptor = descriptor
        self.site = site
        self.stream = stream
        self.degrade_after = degrade_after
        self.state = DappState.INIT
        self.reports: list[DetectionReport] = []
        self.errors = 0
        self.consecutive_errors = 0
        self.frames_processed = 0
        self._buffer: list[tuple[CirSnapshot, int]] = []
        self._latencies: list[float] = []  # simulation-time seconds

    @property
    def dapp_id(self) -> str:
        return self.descriptor.dapp_id

    def _set_state(self, new: DappState):
        if (self.state, new) not in _ALLOWED_TRANSITIONS:
            raise RuntimeError(f"illegal transition {self.state} -> {new}")
        self.state = new

    # --- estimator bindings -------------------------------------------------

    def _ofdm_config(self) -> OfdmConfig:
        cfg = self.descriptor.params.get("ofdm")
        if isinstance(cfg, OfdmConfig):
            return cfg
        if isinstance(cfg, dict):
            return OfdmConfig(**cfg)
        raise ValueError("monostatic/spectrum dApps need an 'ofdm' param")

    def _process_monostatic(self, payload: e3.IqGrid) -> dict:
        cfg = self._ofdm_config()
        samples = e3.dequantize_iq(payload.iq, payload.n, payload.m,
                                   self.descriptor.params.get("iq_scale",
                                                              e3.IQ_SCALE))
        grid = ResourceGrid(samples=samples, config=cfg,
                            noise_variance=1.0)
        est = estimators.periodogram_delay_doppler(
            grid, zero_pad=self.descriptor.params.get("zero_pad", 4))
        return {"type": "delay_doppler", "range_m": est.range_m,
                "velocity_mps": est.velocity_mps, "delay_s": est.delay_s,
                "doppler_hz": est.doppler_hz}

    def _process_ranging(self, payload: e3.CirFrame,
                         timestamp_ns: int) -> dict | None:
        params = self.descriptor.params
        snap = CirSnapshot(
            freq_response=payload.samples.astype(np.complex128),
            snapshot_index=payload.snapshot_index,
            noise_variance=params.get("noise_variance", 1.0),
            delta_f_hz=params["delta_f_hz"])
        self._buffer.append((snap, timestamp_ns))
        m_needed = params.get("snapshots", 20)
        if len(self._buffer) < m_needed:
            return None
        batch, self._buffer = self._buffer[:m_needed], self._buffer[m_needed:]
        snaps = [s for s, _ in batch]
        if params.get("method", "subspace") == "subspace":
            spec = estimators.MusicSpec(**params.get("music", {}))
            est = estimators.music_range(snaps, spec)
        else:
            est = estimators.peak_detect_range(snaps, "median")
        # accumulation latency: first buffered frame to emission
        self._latencies.append((timestamp_ns - batch[0][1]) / 1e9)
        return {"type": "range", "range_m": est.range_m,
                "delay_s": est.delay_s, "method": est.method,
                "snapshots_used": est.snapshots_used}

    def _process_spectrum(self, payload: e3.IqGrid) -> dict:
        params = self.descriptor.params
        samples = e3.dequantize_iq(payload.iq, payload.n, payload.m,
                                   params.get("iq_scale", e3.IQ_SCALE))
        n_bands = params.get("n_bands", 8)
        energies = [float(np.mean(np.abs(chunk) ** 2))
                    for chunk in np.array_split(samples, n_bands, axis=0)]
        floor = params.get("noise_floor", float(np.median(energies)))
        threshold = floor * 10 ** (params.get("threshold_db", 6.0) / 10)
        occupied = [int(e > threshold) for e in energies]
        return {"type": "occupancy", "occupied": occupied,
                "band_energies": energies}


class DappRuntime:
    """Deploys and drives dApps; control operations are serialized."""

    def __init__(self, degrade_after: int = 5):
        self.degrade_after = degrade_after
        self._endpoints: dict[str, e3.DuEndpoint] = {}
        self._budgets: dict[str, float] = {}
        self._truth: dict[str, dict] = {}
        self.dapps: list[Dapp] = []

    def register_site(self, site: SiteProfile, endpoint: e3.DuEndpoint,
                      truth: dict | None = None):
        self._endpoints[site.site_id] = endpoint
        self._budgets.setdefault(site.site_id, site.compute_budget)
        if truth is not None:
            self._truth[site.site_id] = truth

    def remaining_budget(self, site_id: str) -> float:
        return self._budgets[site_id]

    # --- life cycle ---------------------------------------------------------

    def deploy(self, descriptor: DappDescriptor, site: SiteProfile) -> Dapp:
        """Admit, subscribe, and start one dApp on a site."""
        if site.site_id not in self._endpoints:
            self.register_site(site, e3.DuEndpoint())
        budget = self._budgets[site.site_id]
        if descriptor.compute_cost > budget:
            raise InsufficientCompute(
                f"{descriptor.dapp_id} needs {descriptor.compute_cost}, "
                f"site {site.site_id} has {budget}")
        if descriptor.input_kind not in site.available_streams:
            raise StreamUnavailable(
                f"site {site.site_id} does not expose "
                f"{descriptor.input_kind!r} streams")
        try:
            stream = self._endpoints[site.site_id].subscribe(
                descriptor.input_kind, descriptor.params)
        except e3.Rejected as exc:
            raise StreamUnavailable(str(exc)) from exc
        dapp = Dapp(descriptor, site, stream, self.degrade_after)
        dapp._set_state(DappState.SUBSCRIBED)
        dapp._set_state(DappState.RUNNING)
        self._budgets[site.site_id] = budget - descriptor.compute_cost
        self.dapps.append(dapp)
        return dapp

    def deploy_from_entry(self, entry: CatalogEntry, site: SiteProfile) -> Dapp:
        """Orchestrator entry point: build a descriptor from the catalog."""
        descriptor = DappDescriptor(
            dapp_id=f"{entry.model_id}@{site.site_id}",
            function=entry.topology,
            input_kind=entry.requirements.input_kind,
            params=dict(entry.default_params),
            compute_cost=max(entry.requirements.min_compute, 1e-9),
            model_version=entry.version)
        return self.deploy(descriptor, site)

    def replace(self, dapp: Dapp, new_descriptor: DappDescriptor) -> Dapp:
        """Atomic in-place swap; on failure the old descriptor keeps running.

        The input subscription (and any buffered snapshots) carry over,
        so no frame is lost or double-processed and input seq continuity
        holds; subsequent reports carry the new model_version.
        """
        if dapp.state not in (DappState.RUNNING, DappState.DEGRADED):
            raise RuntimeError(f"cannot replace a dApp in state {dapp.state}")
        if new_descriptor.input_kind != dapp.descriptor.input_kind:
            raise StreamUnavailable(
                "replacement must consume the same input kind")
        delta = new_descriptor.compute_cost - dapp.descriptor.compute_cost
        budget = self._budgets[dapp.site.site_id]
        if delta > budget:
            raise InsufficientCompute(
                f"replacement needs {delta} more units, site has {budget}")
        self._budgets[dapp.site.site_id] = budget - delta
        dapp.descriptor = new_descriptor
        return dapp

    def stop(self, dapp: Dapp):
        if dapp.state is DappState.STOPPED:
            return
        dapp._set_state(DappState.STOPPED)
        dapp.stream.close()
        self._budgets[dapp.site.site_id] += dapp.descriptor.compute_cost

    # --- data path ----------------------------------------------------------

    def process_frame(self, dapp: Dapp, frame: e3.E3Message
                      ) -> DetectionReport | None:
        """Feed one frame; estimator errors degrade, never propagate."""
        if dapp.state not in (DappState.RUNNING, DappState.DEGRADED):
            raise RuntimeError(f"dApp {dapp.dapp_id} is not running")
        expected = e3.IqGrid if dapp.descriptor.input_kind == "iq" else e3.CirFrame
        if not isinstance(frame.payload, expected):
            raise ValueError(
                f"{dapp.dapp_id} expects {dapp.descriptor.input_kind} frames")
        dapp.frames_processed += 1
        try:
            if dapp.descriptor.params.get("inject_failure"):
                raise RuntimeError("injected estimator failure")
            fn = dapp.descriptor.function
            if fn == "monostatic":
                payload = dapp._process_monostatic(frame.payload)
            elif fn == "ranging":
                payload = dapp._process_ranging(frame.payload,
                                                frame.header.timestamp_ns)
            else:
                payload = dapp._process_spectrum(frame.payload)
        except Exception as exc:
            dapp.errors += 1
            dapp.consecutive_errors += 1
            if (dapp.state is DappState.RUNNING
                    and dapp.consecutive_errors >= dapp.degrade_after):
                dapp._set_state(DappState.DEGRADED)
            report = DetectionReport(
                dapp_id=dapp.dapp_id, site_id=dapp.site.site_id,
                timestamp_ns=frame.header.timestamp_ns,
                payload={"type": "error", "error": f"{type(exc).__name__}: {exc}"},
                confidence=0.0,
                model_version=dapp.descriptor.model_version)
            dapp.reports.append(report)
            return report
        dapp.consecutive_errors = 0
        if dapp.state is DappState.DEGRADED:
            dapp._set_state(DappState.RUNNING)
        if payload is None:
            return None
        report = DetectionReport(
            dapp_id=dapp.dapp_id, site_id=dapp.site.site_id,
            timestamp_ns=frame.header.timestamp_ns, payload=payload,
            confidence=1.0, model_version=dapp.descriptor.model_version)
        dapp.reports.append(report)
        return report

    def step(self) -> list[DetectionReport]:
        """Drain every active dApp's queue once, in deployment order."""
        out = []
        for dapp in self.dapps:
            if dapp.state not in (DappState.RUNNING, DappState.DEGRADED):
                continue
            for frame in dapp.stream.drain():
                report = self.process_frame(dapp, frame)
                if report is not None:
                    out.append(report)
        return out

    # --- telemetry ----------------------------------------------------------

    def report_kpis(self, dapp: Dapp,
                    window: tuple[int, int] | None = None,
                    detect_gate_m: float = 10.0) -> DappKpi:
        """KPIs over a timestamp window, against scenario truth if known."""
        reports = [r for r in dapp.reports if r.payload.get("type") != "error"]
        if window is not None:
            lo, hi = window
            reports = [r for r in reports if lo <= r.timestamp_ns < hi]
        if not reports:
            raise NoData(f"{dapp.dapp_id} has no reports in window")
        latency = float(np.mean(dapp._latencies[-len(reports):])) \
            if dapp._latencies else 0.0
        truth = self._truth.get(dapp.site.site_id, {})
        truth_range = truth.get("range_m")
        if truth_range is None or reports[0].payload.get("type") == "occupancy":
            return DappKpi(dapp_id=dapp.dapp_id, detection_probability=1.0,
                           false_alarm_rate=0.0,
                           localization_rmse_m=float("nan"),
                           processing_latency_s=latency,
                           n_reports=len(reports))
        errors = np.array([abs(r.payload["range_m"] - truth_range)
                           for r in reports])
        detected = errors <= detect_gate_m
        return DappKpi(
            dapp_id=dapp.dapp_id,
            detection_probability=float(np.mean(detected)),
            false_alarm_rate=float(np.mean(~detected)),
            localization_rmse_m=float(np.sqrt(np.mean(errors ** 2))),
            processing_latency_s=latency,
            n_reports=len(reports))
