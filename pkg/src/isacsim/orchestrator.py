"""ISAC life-cycle management: catalog, intents, matching, monitoring.

The orchestrator owns the model catalog (validated sensing algorithms
with deployment requirements), translates operator intents into per-site
algorithm assignments, pushes them through a runtime, and watches KPI
feeds to trigger replacement when a deployment degrades.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace as dc_replace


class DuplicateVersion(ValueError):
    pass


@dataclass(frozen=True)
class RuCapabilities:
    full_duplex: bool = False
    bands: tuple[str, ...] = ()

    def as_set(self) -> frozenset[str]:
        caps = {f"band:{b}" for b in self.bands}
        if self.full_duplex:
            caps.add("full_duplex")
        return frozenset(caps)


@dataclass(frozen=True)
class SiteProfile:
    """Per-site radio/compute capabilities the matcher filters against."""

    site_id: str
    tags: frozenset[str] = frozenset()
    ru_capabilities: RuCapabilities = field(default_factory=RuCapabilities)
    compute_budget: float = 1.0
    available_streams: frozenset[str] = frozenset({"iq", "cir"})

    def __post_init__(self):
        if self.compute_budget < 0:
            raise ValueError("compute_budget must be >= 0")


@dataclass(frozen=True)
class ModelRequirements:
    input_kind: str  # "iq" | "cir"
    min_compute: float = 0.1
    ru_capabilities: frozenset[str] = frozenset()


@dataclass(frozen=True)
class CatalogEntry:
    """One deployable algorithm. Versions are dotted integers ("2.1")."""

    model_id: str
    function: str  # "dapp" | "xapp"
    topology: str  # "monostatic" | "bistatic" | "ranging" | "spectrum"
    target_application: str
    requirements: ModelRequirements
    version: str
    validation_status: str = "candidate"  # "validated" | "candidate"
    default_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.function not in ("dapp", "xapp"):
            raise ValueError(f"unknown function {self.function!r}")
        if self.topology not in ("monostatic", "bistatic", "ranging",
                                 "spectrum"):
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.validation_status not in ("validated", "candidate"):
            raise ValueError(
                f"unknown validation_status {self.validation_status!r}")
        version_key(self.version)  # raises on malformed versions


@dataclass(frozen=True)
class PerformanceBounds:
    max_latency_s: float = 1.0
    min_detection_probability: float = 0.0
    max_localization_rmse_m: float = float("inf")

    def __post_init__(self):
        if self.max_latency_s <= 0 or self.max_localization_rmse_m <= 0:
            raise ValueError("performance bounds must be positive")


@dataclass(frozen=True)
class SensingIntent:
    """Operator intent: which service, on which sites, how well."""

    intent_id: str
    service: str
    site_selector: frozenset[str] = frozenset()  # required site tags
    performance: PerformanceBounds = field(default_factory=PerformanceBounds)

    def selects(self, site: SiteProfile) -> bool:
        return self.site_selector <= site.tags


def version_key(version: str) -> tuple[int, ...]:
    """Natural ordering for dotted-integer versions; higher = more recent."""
    parts = version.split(".")
    if not parts or not all(p.isdigit() for p in parts):
        raise ValueError(
            f"version {version!r} is not dotted integers like '2.1'")
    return tuple(int(p) for p in parts)


class ModelCatalog:
    """Append-only registry of sensing algorithms.

    Entries are never removed and (model_id, version) pairs are never
    reused; promote() flips a candidate's validation flag in place.
    """

    def __init__(self):
        self._entries: list[CatalogEntry] = []

    def register(self, entry: CatalogEntry) -> "ModelCatalog":
        if any(e.model_id == entry.model_id and e.version == entry.version
               for e in self._entries):
            raise DuplicateVersion(
                f"{entry.model_id} version {entry.version} already registered")
        self._entries.append(entry)
        return self

    def promote(self, model_id: str, version: str):
        """Mark a candidate entry validated (training/validation stand-in)."""
        for i, e in enumerate(self._entries):
            if e.model_id == model_id and e.version == version:
                self._entries[i] = dc_replace(e, validation_status="validated")
                return self._entries[i]
        raise KeyError(f"{model_id} version {version} not in catalog")

    def entries(self) -> tuple[CatalogEntry, ...]:
        return tuple(self._entries)

    def query(self, function: str | None = None, topology: str | None = None,
              target_application: str | None = None) -> list[CatalogEntry]:
        out = []
        for e in self._entries:
            if function is not None and e.function != function:
                continue
            if topology is not None and e.topology != topology:
                continue
            if (target_application is not None
                    and e.target_application != target_application):
                continue
            out.append(e)
        return out

    def __len__(self):
        return len(self._entries)


def entry_feasible(entry: CatalogEntry, site: SiteProfile,
                   service: str) -> bool:
    """Deployability of one catalog entry on one site for a service."""
    return (entry.target_application == service
            and entry.validation_status == "validated"
            and entry.requirements.ru_capabilities
            <= site.ru_capabilities.as_set()
            and entry.requirements.min_compute <= site.compute_budget
            and entry.requirements.input_kind in site.available_streams)


def rank_key(entry: CatalogEntry) -> tuple:
    """Most recent version first, then cheapest, then model_id."""
    return (tuple(-v for v in version_key(entry.version)),
            entry.requirements.min_compute, entry.model_id)


@dataclass(frozen=True)
class Assignment:
    site_id: str
    model_id: str
    version: str


@dataclass(frozen=True)
class MatchResult:
    assignments: tuple[Assignment, ...]
    unassignable: tuple[str, ...]  # sites passing the selector, no model

    def model_for(self, site_id: str) -> str | None:
        for a in self.assignments:
            if a.site_id == site_id:
                return a.model_id
        return None


def match(intent: SensingIntent, sites: list[SiteProfile],
          catalog: ModelCatalog) -> MatchResult:
    """Deterministic intent-driven algorithm/site matching.

    Sites failing the selector are skipped; for each selected site the
    feasible catalog entries are ranked by (version recency, lower
    compute) with a lexicographic model_id tie-break. Infeasibility is
    data, not an error.
    """
    assignments = []
    unassignable = []
    for site in sites:
        if not intent.selects(site):
            continue
        feasible = [e for e in catalog.entries()
                    if entry_feasible(e, site, intent.service)]
        if not feasible:
            unassignable.append(site.site_id)
            continue
        best = min(feasible, key=rank_key)
        assignments.append(Assignment(site.site_id, best.model_id,
                                      best.version))
    return MatchResult(assignments=tuple(assignments),
                       unassignable=tuple(unassignable))


@dataclass(frozen=True)
class DeployOutcome:
    site_id: str
    model_id: str
    ok: bool
    detail: str  # dapp_id when ok, error text otherwise


def execute(result: MatchResult, runtime, sites: dict[str, SiteProfile],
            catalog: ModelCatalog) -> list[DeployOutcome]:
    """Push matched assignments through the runtime; failures stay local.

    One outcome per assignment; a failed deploy neither blocks nor rolls
    back the others.
    """
    outcomes = []
    for a in result.assignments:
        entry = next(e for e in catalog.entries()
                     if e.model_id == a.model_id and e.version == a.version)
        try:
            handle = runtime.deploy_from_entry(entry, sites[a.site_id])
            outcomes.append(DeployOutcome(a.site_id, a.model_id, True,
                                          handle.dapp_id))
        except Exception as exc:
            outcomes.append(DeployOutcome(a.site_id, a.model_id, False,
                                          f"{type(exc).__name__}: {exc}"))
    return outcomes


@dataclass(frozen=True)
class Action:
    kind: str  # "replace" | "reconfigure" | "alarm"
    dapp_id: str
    cause: str
    replacement_model: str | None = None


class Monitor:
    """Sliding-window KPI watchdog with W-window hysteresis.

    A deployment must violate the intent bounds for `hysteresis`
    consecutive windows before an action fires, and each violation
    episode produces at most one Replace. With no alternative model the
    fallback chain is Reconfigure, then (after another full hysteresis
    run of violations) Alarm.
    """

    def __init__(self, intent: SensingIntent, catalog: ModelCatalog,
                 hysteresis: int = 3):
        if hysteresis < 1:
            raise ValueError("hysteresis must be >= 1")
        self.intent = intent
        self.catalog = catalog
        self.hysteresis = hysteresis
        self._violations: dict[str, int] = {}
        self._stage: dict[str, int] = {}  # 0 none, 1 replaced/reconfigured, 2 alarmed

    def _violates(self, kpi) -> str | None:
        p = self.intent.performance
        if kpi.localization_rmse_m > p.max_localization_rmse_m:
            return (f"localization_rmse {kpi.localization_rmse_m:.3g} m > "
                    f"bound {p.max_localization_rmse_m:.3g} m")
        if kpi.detection_probability < p.min_detection_probability:
            return (f"detection_probability {kpi.detection_probability:.3g} < "
                    f"bound {p.min_detection_probability:.3g}")
        if kpi.processing_latency_s > p.max_latency_s:
            return (f"latency {kpi.processing_latency_s:.3g} s > "
                    f"bound {p.max_latency_s:.3g} s")
        return None

    def _next_model(self, site: SiteProfile, exclude: str) -> str | None:
        feasible = [e for e in self.catalog.entries()
                    if entry_feasible(e, site, self.intent.service)
                    and e.model_id != exclude]
        if not feasible:
            return None
        return min(feasible, key=rank_key).model_id

    def observe(self, kpi, site: SiteProfile,
                current_model: str) -> list[Action]:
        """Feed one KPI window; returns the actions it triggers."""
        dapp_id = kpi.dapp_id
        cause = self._violates(kpi)
        if cause is None:
            self._violations[dapp_id] = 0
            self._stage[dapp_id] = 0
            return []
        count = self._violations.get(dapp_id, 0) + 1
        self._violations[dapp_id] = count
        if count < self.hysteresis:
            return []
        stage = self._stage.get(dapp_id, 0)
        self._violations[dapp_id] = 0  # episode boundary
        if stage == 0:
            alt = self._next_model(site, current_model)
            self._stage[dapp_id] = 1
            if alt is not None:
                return [Action("replace", dapp_id, cause, alt)]
            return [Action("reconfigure", dapp_id, cause)]
        if stage == 1:
            self._stage[dapp_id] = 2
            return [Action("alarm", dapp_id, cause)]
        return []
