"""Scenario configuration: YAML files with includes, validated per command.

One human-readable file drives each CLI command. A top-level `include:`
list pulls in other YAML files (relative to the including file) with
deep dict merging, later keys winning. Validation errors always name the
offending config field.

PyYAML parses bare scientific notation like 3.6e9 as a string, so all
numeric getters coerce strings too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .estimators import MusicSpec
from .linkbudget import LinkBudget, SweepSpec, calibrate_gain
from .orchestrator import (CatalogEntry, ModelCatalog, ModelRequirements,
                           PerformanceBounds, RuCapabilities, SensingIntent,
                           SiteProfile)
from .waveform import MultipathProfile, OfdmConfig, PathSpec, RadarTarget


class ConfigError(ValueError):
    def __init__(self, fld: str, message: str):
        super().__init__(f"config field {fld!r}: {message}")
        self.field = fld


def _deep_merge(base: dict, overlay: dict) -> dict:
    out = dict(base)
    for key, val in overlay.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = val
    return out


def load_config(path: str | Path) -> dict:
    """Load a YAML config, resolving `include:` lists recursively."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ConfigError(str(path), "file not found")
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"invalid YAML: {exc}")
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(str(path), "top level must be a mapping")
    merged: dict = {}
    for inc in raw.pop("include", []) or []:
        merged = _deep_merge(merged, load_config(path.parent / inc))
    return _deep_merge(merged, raw)


def _get(cfg: dict, fld: str, default=None, required=False):
    cur = cfg
    for part in fld.split("."):
        if not isinstance(cur, dict) or part not in cur:
            if required:
                raise ConfigError(fld, "missing required field")
            return default
        cur = cur[part]
    return cur


def _float(cfg: dict, fld: str, default=None, required=False,
           positive=False) -> float | None:
    val = _get(cfg, fld, default, required)
    if val is None:
        return None
    try:
        out = float(val)
    except (TypeError, ValueError):
        raise ConfigError(fld, f"expected a number, got {val!r}")
    if not math.isfinite(out):
        raise ConfigError(fld, "must be finite")
    if positive and out <= 0:
        raise ConfigError(fld, "must be positive")
    return out


def _int(cfg: dict, fld: str, default=None, required=False) -> int | None:
    val = _get(cfg, fld, default, required)
    if val is None:
        return None
    try:
        out = int(val)
    except (TypeError, ValueError):
        raise ConfigError(fld, f"expected an integer, got {val!r}")
    return out


def _pair(cfg: dict, fld: str) -> tuple[float, float]:
    val = _get(cfg, fld, required=True)
    if not isinstance(val, (list, tuple)) or len(val) != 2:
        raise ConfigError(fld, f"expected [low, high], got {val!r}")
    try:
        return float(val[0]), float(val[1])
    except (TypeError, ValueError):
        raise ConfigError(fld, f"expected numbers, got {val!r}")


# --- crlb-sweep -------------------------------------------------------------


@dataclass(frozen=True)
class SweepSetup:
    spec: SweepSpec
    budget: LinkBudget
    anchor_config: OfdmConfig
    target: RadarTarget


def build_sweep_setup(cfg: dict) -> SweepSetup:
    try:
        ofdm = OfdmConfig(
            carrier_freq_hz=_float(cfg, "ofdm.carrier_freq_hz", required=True,
                                   positive=True),
            subcarrier_spacing_hz=_float(cfg, "ofdm.subcarrier_spacing_hz",
                                         required=True, positive=True),
            bandwidth_hz=_float(cfg, "ofdm.bandwidth_hz", required=True,
                                positive=True),
            slot_duration_s=_float(cfg, "ofdm.slot_duration_s", required=True,
                                   positive=True),
            cp_overhead=_float(cfg, "ofdm.cp_overhead", 0.07))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("ofdm", str(exc))
    try:
        target = RadarTarget(
            range_m=_float(cfg, "target.range_m", required=True),
            radial_velocity_mps=_float(cfg, "target.radial_velocity_mps", 0.0),
            rcs_dbsm=_float(cfg, "target.rcs_dbsm", 0.0))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("target", str(exc))
    budget = LinkBudget(
        tx_power_dbm=_float(cfg, "link_budget.tx_power_dbm", 43.0),
        combined_gain=_float(cfg, "link_budget.combined_gain", 1.0,
                             positive=True),
        noise_temp_k=_float(cfg, "link_budget.noise_temp_k", 290.0,
                            positive=True))
    anchor = _float(cfg, "link_budget.anchor_rmse_range_m", None,
                    positive=True)
    if anchor is not None:
        kappa = calibrate_gain(budget, ofdm, target, anchor)
        budget = LinkBudget(tx_power_dbm=budget.tx_power_dbm,
                            combined_gain=kappa,
                            noise_temp_k=budget.noise_temp_k)
    try:
        spec = SweepSpec(
            bandwidth_range_hz=_pair(cfg, "sweep.bandwidth_hz"),
            slot_range_s=_pair(cfg, "sweep.slot_duration_s"),
            steps=_int(cfg, "sweep.steps", 64),
            bytes_per_sample=_int(cfg, "sweep.bytes_per_sample", 4))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("sweep", str(exc))
    return SweepSetup(spec=spec, budget=budget, anchor_config=ofdm,
                      target=target)


# --- ranging-cdf ------------------------------------------------------------


@dataclass(frozen=True)
class RangingSetup:
    profile: MultipathProfile
    k_subcarriers: int
    delta_f_hz: float
    snapshot_snr: float
    m_values: tuple[int, ...]
    music: MusicSpec
    trials: int
    seed: int


def _multipath(cfg: dict, fld: str) -> MultipathProfile:
    raw = _get(cfg, fld, required=True)
    if not isinstance(raw, list) or not raw:
        raise ConfigError(fld, "expected a non-empty list of paths")
    paths = []
    for i, entry in enumerate(raw):
        sub = f"{fld}[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(sub, "expected a mapping")
        delay = _float(entry, "delay_ns", required=True)
        power_db = _float(entry, "power_db", 0.0)
        fading = _get(entry, "fading", "rayleigh")
        try:
            paths.append(PathSpec(delay_s=delay * 1e-9,
                                  mean_power=10 ** (power_db / 10.0),
                                  fading=fading))
        except ValueError as exc:
            raise ConfigError(sub, str(exc))
    try:
        return MultipathProfile(paths=tuple(paths))
    except ValueError as exc:
        raise ConfigError(fld, str(exc))


def _music_spec(cfg: dict, fld: str, default_subarray: int) -> MusicSpec:
    raw = _get(cfg, fld, {}) or {}
    try:
        return MusicSpec(
            subarray_len=_int(raw, "subarray_len", default_subarray),
            model_order=_int(raw, "model_order", 6),
            grid_start_s=_float(raw, "grid_start_s", 0.0),
            grid_stop_s=_float(raw, "grid_stop_s", 800e-9),
            grid_step_s=_float(raw, "grid_step_s", 1e-9),
            peak_floor_factor=_float(raw, "peak_floor_factor", 100.0))
    except ValueError as exc:
        raise ConfigError(fld, str(exc))


def build_ranging_setup(cfg: dict, trials_override: int | None = None,
                        seed_override: int | None = None) -> RangingSetup:
    k = _int(cfg, "ranging.k_subcarriers", 1024)
    if k < 8:
        raise ConfigError("ranging.k_subcarriers", "must be >= 8")
    m_values = _get(cfg, "ranging.m_values", [20, 60])
    if (not isinstance(m_values, list) or not m_values
            or any(int(m) < 2 for m in m_values)):
        raise ConfigError("ranging.m_values", "expected a list of ints >= 2")
    trials = trials_override if trials_override is not None \
        else _int(cfg, "trials", 500)
    if trials < 1:
        raise ConfigError("trials", "must be >= 1")
    seed = seed_override if seed_override is not None else _int(cfg, "seed", 0)
    return RangingSetup(
        profile=_multipath(cfg, "ranging.multipath"),
        k_subcarriers=k,
        delta_f_hz=_float(cfg, "ranging.subcarrier_spacing_hz", 30e3,
                          positive=True),
        snapshot_snr=10 ** (_float(cfg, "ranging.los_snr_db", -10.0) / 10.0),
        m_values=tuple(int(m) for m in m_values),
        music=_music_spec(cfg, "ranging.music", k // 2),
        trials=trials,
        seed=seed)


# --- run-sim ----------------------------------------------------------------


@dataclass(frozen=True)
class SimSite:
    profile: SiteProfile
    position_m: tuple[float, float]


@dataclass(frozen=True)
class SimScenario:
    sites: tuple[SimSite, ...]
    catalog: ModelCatalog
    intents: tuple[SensingIntent, ...]
    target_position_m: tuple[float, float]
    duration_slots: int
    slot_duration_s: float
    ranging_params: dict
    fusion_window_s: float
    fusion_max_range_m: float
    kpi_window_slots: int
    kpi_injection: dict | None
    seed: int


def _site(entry: dict, fld: str) -> SimSite:
    site_id = _get(entry, "site_id", required=True)
    pos = _get(entry, "position_m", required=True)
    if not isinstance(pos, (list, tuple)) or len(pos) != 2:
        raise ConfigError(f"{fld}.position_m", "expected [x, y]")
    streams = _get(entry, "streams", ["cir"])
    ru = _get(entry, "ru", {}) or {}
    profile = SiteProfile(
        site_id=str(site_id),
        tags=frozenset(_get(entry, "tags", []) or []),
        ru_capabilities=RuCapabilities(
            full_duplex=bool(_get(ru, "full_duplex", False)),
            bands=tuple(_get(ru, "bands", []) or [])),
        compute_budget=_float(entry, "compute_budget", 1.0),
        available_streams=frozenset(streams))
    return SimSite(profile=profile, position_m=(float(pos[0]), float(pos[1])))


def _catalog_entry(entry: dict, fld: str, default_params: dict) -> CatalogEntry:
    req = _get(entry, "requirements", {}) or {}
    try:
        return CatalogEntry(
            model_id=str(_get(entry, "model_id", required=True)),
            function=_get(entry, "function", "dapp"),
            topology=_get(entry, "topology", required=True),
            target_application=str(_get(entry, "target_application",
                                        required=True)),
            requirements=ModelRequirements(
                input_kind=_get(req, "input_kind", "cir"),
                min_compute=_float(req, "min_compute", 0.1),
                ru_capabilities=frozenset(_get(req, "ru_capabilities", [])
                                          or [])),
            version=str(_get(entry, "version", "1.0")),
            validation_status="validated" if _get(entry, "validated", True)
            else "candidate",
            default_params=dict(_get(entry, "params", default_params) or {}))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(fld, str(exc))


def _intent(entry: dict, fld: str) -> SensingIntent:
    perf = _get(entry, "performance", {}) or {}
    try:
        return SensingIntent(
            intent_id=str(_get(entry, "intent_id", required=True)),
            service=str(_get(entry, "service", required=True)),
            site_selector=frozenset(_get(entry, "site_tags", []) or []),
            performance=PerformanceBounds(
                max_latency_s=_float(perf, "max_latency_s", 1.0),
                min_detection_probability=_float(
                    perf, "min_detection_probability", 0.0),
                max_localization_rmse_m=_float(
                    perf, "max_localization_rmse_m", float("inf"))))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(fld, str(exc))


def build_sim_scenario(cfg: dict, seed_override: int | None = None
                       ) -> SimScenario:
    raw_sites = _get(cfg, "sites", required=True)
    if not isinstance(raw_sites, list) or not raw_sites:
        raise ConfigError("sites", "expected a non-empty list")
    sites = tuple(_site(s, f"sites[{i}]") for i, s in enumerate(raw_sites))
    if len({s.profile.site_id for s in sites}) != len(sites):
        raise ConfigError("sites", "site_id values must be unique")

    k = _int(cfg, "ranging.k_subcarriers", 256)
    music = _music_spec(cfg, "ranging.music", k // 2)
    ranging_params = {
        "k_subcarriers": k,
        "delta_f_hz": _float(cfg, "ranging.subcarrier_spacing_hz", 30e3,
                             positive=True),
        "snapshots": _int(cfg, "ranging.snapshots", 20),
        "los_snr": 10 ** (_float(cfg, "ranging.los_snr_db", 0.0) / 10.0),
        "nlos_extra_delay_s": _float(cfg, "ranging.nlos.extra_delay_ns",
                                     120.0) * 1e-9,
        "nlos_power": 10 ** (_float(cfg, "ranging.nlos.power_db", -3.0) / 10.0),
        "los_fading": _get(cfg, "ranging.los_fading", "fixed"),
        "method": _get(cfg, "ranging.method", "subspace"),
        "music": music,
    }

    default_dapp_params = {
        "delta_f_hz": ranging_params["delta_f_hz"],
        "snapshots": ranging_params["snapshots"],
        "method": ranging_params["method"],
        "music": {
            "subarray_len": music.subarray_len,
            "model_order": music.model_order,
            "grid_start_s": music.grid_start_s,
            "grid_stop_s": music.grid_stop_s,
            "grid_step_s": music.grid_step_s,
            "peak_floor_factor": music.peak_floor_factor,
        },
    }

    catalog = ModelCatalog()
    raw_catalog = _get(cfg, "catalog", required=True)
    if not isinstance(raw_catalog, list) or not raw_catalog:
        raise ConfigError("catalog", "expected a non-empty list")
    for i, entry in enumerate(raw_catalog):
        catalog.register(_catalog_entry(entry, f"catalog[{i}]",
                                        default_dapp_params))

    raw_intents = _get(cfg, "intents", required=True)
    if not isinstance(raw_intents, list) or not raw_intents:
        raise ConfigError("intents", "expected a non-empty list")
    intents = tuple(_intent(x, f"intents[{i}]")
                    for i, x in enumerate(raw_intents))

    pos = _get(cfg, "target_position_m", required=True)
    if not isinstance(pos, (list, tuple)) or len(pos) != 2:
        raise ConfigError("target_position_m", "expected [x, y]")

    duration = _int(cfg, "duration_slots", required=True)
    if duration < 0:
        raise ConfigError("duration_slots", "must be >= 0")

    injection = _get(cfg, "kpi_injection", None)
    if injection is not None:
        injection = {
            "dapp_id": _get(injection, "dapp_id", None),
            "start_window": _int(injection, "start_window", 0),
            "n_windows": _int(injection, "n_windows", 3),
            "localization_rmse_m": _float(injection, "localization_rmse_m",
                                          required=True),
        }

    seed = seed_override if seed_override is not None else _int(cfg, "seed", 0)
    return SimScenario(
        sites=sites, catalog=catalog, intents=intents,
        target_position_m=(float(pos[0]), float(pos[1])),
        duration_slots=duration,
        slot_duration_s=_float(cfg, "slot_duration_s", 0.5e-3, positive=True),
        ranging_params=ranging_params,
        fusion_window_s=_float(cfg, "fusion.window_s", 0.1, positive=True),
        fusion_max_range_m=_float(cfg, "fusion.max_range_m", 10e3,
                                  positive=True),
        kpi_window_slots=_int(cfg, "kpi.window_slots", 20),
        kpi_injection=injection,
        seed=seed)
